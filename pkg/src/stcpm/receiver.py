"""MLSE decoding of space-time coded CPM.

The decoder works on the separable block metric: thanks to L2
orthogonality the full metric |y - sum_m a_m s_m|^2 and the per-antenna
sum over |y - a_m s_m|^2 differ by a hypothesis-independent constant, so
one trellis over the common data phase serves all antennas.  States are
(phase residue, last memory_len-1 symbols); there are
mod_index_den * M**(memory_len-1) of them.  Per-antenna waveforms are a
shared template bank rotated by the state phasor and a precomputed
per-antenna slot offset, so branch metrics reduce to one correlation
table per slot.

Tie-breaking is deterministic everywhere: the Viterbi add-compare-select
keeps the first minimum over the index-ordered incoming branches (lowest
predecessor state index), and the exhaustive oracle keeps the first
minimum in lexicographic symbol order.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

from .cpm import CpmParams, eval_pulse
from .encoder import CorrectionScheme, symbols_to_bits, waveform_batch

__all__ = [
    "TrellisSpec",
    "DecodeResult",
    "build_trellis",
    "slot_waveform",
    "branch_metric_separable",
    "metric_separable_block",
    "metric_full_block",
    "viterbi_decode",
    "viterbi_decode_batch",
    "exhaustive_ml",
    "received_energy",
]


@dataclass
class TrellisSpec:
    """Immutable decoding structure shared across streams and workers."""

    params: CpmParams
    scheme: CorrectionScheme
    theta_init: tuple
    states: list
    next_state: np.ndarray  # (S, M) int32
    pred_state: np.ndarray  # (S, M) int32, incoming ordered by predecessor index
    pred_flat: np.ndarray  # (S, M) int32 index into the (p, M**gamma) metric table
    pred_symbol: np.ndarray  # (S, M) level transmitted on each incoming branch
    branch_flat: np.ndarray  # (S, M) int32 forward branch -> metric table index
    sym_from_state: np.ndarray  # (S,) transmitted level recoverable from the state
    banks: np.ndarray  # (n_tx, M**gamma, n_sps) complex templates with amplitude
    offset_phasor_conj: np.ndarray  # (n_tx, n_tx) conj slot-offset phasors, col = slot mod n_tx
    offset_cycles: np.ndarray  # (n_tx, n_tx) float offsets in cycles
    rot_conj: np.ndarray  # (p,) conj phase-residue phasors

    @property
    def n_tx(self) -> int:
        return self.scheme.n_tx

    @property
    def n_states(self) -> int:
        return len(self.states)

    @property
    def branches_per_state(self) -> int:
        return self.params.alphabet_size

    @property
    def partial_metric_groups_per_state(self) -> int:
        return self.n_tx * self.params.alphabet_size


def _window_phase(params: CpmParams, window_levels, taus):
    """Data phase (cycles) of one slot for a pulse window, oldest level first."""
    gamma = params.memory_len
    t_sym = params.symbol_duration
    h = float(params.mod_index)
    phase = np.zeros_like(taus)
    for i in range(1, gamma + 1):
        level = window_levels[gamma - i]
        if level == 0:
            continue
        phase = phase + h * float(level) * eval_pulse(
            params.pulse, gamma, taus + (i - 1) * t_sym, t_sym
        )
    return phase


def build_trellis(
    params: CpmParams, scheme: CorrectionScheme, theta_init: Sequence | None = None
) -> TrellisSpec:
    n_tx = scheme.n_tx
    if theta_init is None:
        theta_init = (0,) * n_tx
    if len(theta_init) != n_tx:
        raise ValueError("need one initial phase per antenna")
    m_size = params.alphabet_size
    gamma = params.memory_len
    p = params.phase_levels
    m0 = params.mod_index_num
    alphabet = params.alphabet
    hist_count = m_size ** (gamma - 1)
    n_states = p * hist_count

    for m in range(n_tx):
        inc = scheme.increment(m)
        if not isinstance(inc, Fraction) or (n_tx * inc) % 1 != 0:
            raise ValueError("decoding needs rational offsets with block-periodic residues")

    states = []
    for s in range(n_states):
        k, h = divmod(s, hist_count)
        digits = []
        rem = h
        for _ in range(gamma - 1):
            digits.append(rem % m_size)
            rem //= m_size
        hist = tuple(int(alphabet[d]) for d in reversed(digits))
        states.append((k, hist))

    next_state = np.zeros((n_states, m_size), dtype=np.int32)
    pred_state = np.zeros((n_states, m_size), dtype=np.int32)
    pred_flat = np.zeros((n_states, m_size), dtype=np.int32)
    pred_symbol = np.zeros((n_states, m_size), dtype=np.int64)
    branch_flat = np.zeros((n_states, m_size), dtype=np.int32)
    templates_per_phase = m_size**gamma
    for s in range(n_states):
        k, h = divmod(s, hist_count)
        if gamma >= 2:
            exit_digit = h // (m_size ** (gamma - 2))
            rem = h % (m_size ** (gamma - 2))
            k_next = (k + m0 * int(alphabet[exit_digit])) % p
            for j in range(m_size):
                next_state[s, j] = k_next * hist_count + rem * m_size + j
                branch_flat[s, j] = k * templates_per_phase + h * m_size + j
            for i in range(m_size):
                k_pred = (k - m0 * int(alphabet[i])) % p
                pred_state[s, i] = k_pred * hist_count + i * (m_size ** (gamma - 2)) + h // m_size
                pred_flat[s, i] = k_pred * templates_per_phase + i * hist_count + h
                pred_symbol[s, i] = int(alphabet[h % m_size])
        else:
            for j in range(m_size):
                next_state[s, j] = (k + m0 * int(alphabet[j])) % p
                branch_flat[s, j] = k * templates_per_phase + j
            for i in range(m_size):
                k_pred = (k - m0 * int(alphabet[i])) % p
                pred_state[s, i] = k_pred
                pred_flat[s, i] = k_pred * templates_per_phase + i
                pred_symbol[s, i] = int(alphabet[i])
        # Ties resolve to the lowest predecessor state index, so order the
        # incoming lists accordingly (argmin keeps the first minimum).
        order = np.argsort(pred_state[s], kind="stable")
        pred_state[s] = pred_state[s, order]
        pred_flat[s] = pred_flat[s, order]
        pred_symbol[s] = pred_symbol[s, order]

    if gamma >= 2:
        sym_from_state = alphabet[np.arange(n_states) % m_size].astype(np.int64)
    else:
        sym_from_state = np.zeros(n_states, dtype=np.int64)  # recovered from backptr instead

    taus = params.midpoint_times()
    amp = np.sqrt(params.symbol_energy / (n_tx * params.symbol_duration))
    banks = np.empty((n_tx, templates_per_phase, params.samples_per_symbol), dtype=complex)
    for m in range(n_tx):
        profile = scheme.slot_profile(params, m)
        for w in range(templates_per_phase):
            digits = []
            rem = w
            for _ in range(gamma):
                digits.append(rem % m_size)
                rem //= m_size
            window = tuple(int(alphabet[d]) for d in reversed(digits))  # oldest first
            phase = _window_phase(params, window, taus) + profile
            banks[m, w] = amp * np.exp(2j * np.pi * phase)

    offset_cycles = np.zeros((n_tx, n_tx))
    for m in range(n_tx):
        inc = scheme.increment(m)
        th = theta_init[m]
        for r in range(n_tx):
            off = (Fraction(th) if not isinstance(th, float) else th) + r * inc
            offset_cycles[m, r] = float(off % 1) if isinstance(off, Fraction) else off % 1.0
    offset_phasor_conj = np.exp(-2j * np.pi * offset_cycles)
    rot_conj = np.exp(-2j * np.pi * np.arange(p) / p)

    return TrellisSpec(
        params=params,
        scheme=scheme,
        theta_init=tuple(theta_init),
        states=states,
        next_state=next_state,
        pred_state=pred_state,
        pred_flat=pred_flat,
        pred_symbol=pred_symbol,
        branch_flat=branch_flat,
        sym_from_state=sym_from_state,
        banks=banks,
        offset_phasor_conj=offset_phasor_conj,
        offset_cycles=offset_cycles,
        rot_conj=rot_conj,
    )


def slot_waveform(trellis: TrellisSpec, antenna: int, phase_idx: int, window_levels, slot: int):
    """Reference per-antenna slot waveform for an arbitrary pulse window.

    ``window_levels`` is the oldest-first window of memory_len symbols and
    may contain 0 entries for the pre-stream transient; ``slot`` is the
    0-based global slot index, which fixes the antenna offset.
    """
    params = trellis.params
    taus = params.midpoint_times()
    profile = trellis.scheme.slot_profile(params, antenna)
    phase = (
        _window_phase(params, window_levels, taus)
        + profile
        + phase_idx / params.phase_levels
        + trellis.offset_cycles[antenna, slot % trellis.n_tx]
    )
    amp = np.sqrt(params.symbol_energy / (trellis.n_tx * params.symbol_duration))
    return amp * np.exp(2j * np.pi * phase)


def _state_parts(trellis: TrellisSpec, state) -> tuple:
    if isinstance(state, (int, np.integer)):
        return trellis.states[int(state)]
    k, hist = state
    return int(k), tuple(hist)


def branch_metric_separable(
    trellis: TrellisSpec,
    y_slot: np.ndarray,
    gains: np.ndarray,
    state,
    symbol: int,
    slot: int,
) -> float:
    """Full-valued separable branch metric for one slot and hypothesis.

    Sums |y_n - a_{n,m} s_m|^2 over receive and transmit antennas,
    discretized on the midpoint grid; constants are kept, so noiseless
    single-antenna truth scores exactly zero.
    """
    y_slot = np.atleast_2d(np.asarray(y_slot))
    gains = np.atleast_2d(np.asarray(gains))
    k, hist = _state_parts(trellis, state)
    window = tuple(hist) + (symbol,)
    dt = trellis.params.sample_interval()
    total = 0.0
    for m in range(trellis.n_tx):
        tmpl = slot_waveform(trellis, m, k, window, slot)
        for rx in range(y_slot.shape[0]):
            diff = y_slot[rx] - gains[rx, m] * tmpl
            total += dt * float(np.sum(np.abs(diff) ** 2))
    return total


def _advance_state(trellis: TrellisSpec, state, symbol: int):
    params = trellis.params
    k, hist = _state_parts(trellis, state)
    exiting = hist[0] if params.memory_len > 1 else symbol
    k_next = (k + params.mod_index_num * int(exiting)) % params.phase_levels
    hist_next = hist[1:] + (symbol,) if params.memory_len > 1 else ()
    return (k_next, hist_next)


def metric_separable_block(
    trellis: TrellisSpec,
    y_block: np.ndarray,
    gains: np.ndarray,
    symbols: Sequence[int],
    entry_state,
    block_index: int = 0,
) -> tuple[float, tuple]:
    """Separable metric over a whole block; returns (value, exit state)."""
    n_sps = trellis.params.samples_per_symbol
    y_block = np.atleast_2d(np.asarray(y_block))
    state = _state_parts(trellis, entry_state)
    total = 0.0
    for r, sym in enumerate(symbols):
        slot = block_index * trellis.n_tx + r
        y_slot = y_block[:, r * n_sps : (r + 1) * n_sps]
        total += branch_metric_separable(trellis, y_slot, gains, state, sym, slot)
        state = _advance_state(trellis, state, sym)
    return total, state


def metric_full_block(
    trellis: TrellisSpec,
    y_block: np.ndarray,
    gains: np.ndarray,
    symbols: Sequence[int],
    entry_state,
    block_index: int = 0,
) -> tuple[float, tuple]:
    """Joint metric |y - sum_m a_m s_m|^2 over a whole block (decoding oracle)."""
    n_sps = trellis.params.samples_per_symbol
    y_block = np.atleast_2d(np.asarray(y_block))
    gains = np.atleast_2d(np.asarray(gains))
    dt = trellis.params.sample_interval()
    state = _state_parts(trellis, entry_state)
    total = 0.0
    for r, sym in enumerate(symbols):
        slot = block_index * trellis.n_tx + r
        k, hist = state
        window = tuple(hist) + (sym,)
        mixed = np.zeros((gains.shape[0], n_sps), dtype=complex)
        for m in range(trellis.n_tx):
            mixed += gains[:, m : m + 1] * slot_waveform(trellis, m, k, window, slot)[None, :]
        diff = y_block[:, r * n_sps : (r + 1) * n_sps] - mixed
        total += dt * float(np.sum(np.abs(diff) ** 2))
        state = _advance_state(trellis, state, sym)
    return total, state


def received_energy(params: CpmParams, received: np.ndarray) -> float:
    """Discrete integral of |y|^2 over all receive antennas and samples."""
    return params.sample_interval() * float(np.sum(np.abs(received) ** 2))


@dataclass
class DecodeResult:
    symbols: np.ndarray
    bits: np.ndarray
    stats: dict = field(default_factory=dict)


def _transient_bank(trellis: TrellisSpec, prefix_len: int) -> np.ndarray:
    """Templates for all symbol prefixes of length prefix_len+1 at slot prefix_len.

    Path order is lexicographic in the symbol indices (oldest most
    significant), matching the seed-state history code.
    """
    params = trellis.params
    m_size = params.alphabet_size
    gamma = params.memory_len
    alphabet = params.alphabet
    n_paths = m_size ** (prefix_len + 1)
    taus = params.midpoint_times()
    amp = np.sqrt(params.symbol_energy / (trellis.n_tx * params.symbol_duration))
    out = np.empty((trellis.n_tx, n_paths, params.samples_per_symbol), dtype=complex)
    windows = np.zeros((n_paths, gamma), dtype=np.int64)
    for path in range(n_paths):
        digits = []
        rem = path
        for _ in range(prefix_len + 1):
            digits.append(rem % m_size)
            rem //= m_size
        levels = [int(alphabet[d]) for d in reversed(digits)]  # symbols d_0..d_{prefix_len}
        windows[path, gamma - len(levels) :] = levels
    pulse_table = np.stack(
        [
            eval_pulse(params.pulse, gamma, taus + i * params.symbol_duration, params.symbol_duration)
            for i in range(gamma)
        ]
    )
    # window column g-1-i holds the symbol launched i slots ago
    data_phase = float(params.mod_index) * np.einsum(
        "wi,ik->wk", windows[:, ::-1], pulse_table
    )
    for m in range(trellis.n_tx):
        profile = trellis.scheme.slot_profile(params, m)
        out[m] = amp * np.exp(2j * np.pi * (data_phase + profile[None, :]))
    return out


def _slot_correlations(trellis, y_slot, coeff, banks):
    """-2 Re sum_{rx,m} conj(a) * dt * <y, template> for every template."""
    dt = trellis.params.sample_interval()
    z = dt * np.einsum("brk,mwk->brmw", y_slot, banks.conj())
    return np.einsum("brm,brmw->bw", coeff, z)


def viterbi_decode_batch(
    trellis: TrellisSpec,
    received: np.ndarray,
    gains: np.ndarray,
    truncation_blocks: int | None = None,
) -> tuple[np.ndarray, dict]:
    """Vectorized truncated-Viterbi MLSE over a batch of independent streams.

    ``received`` is (batch, n_rx, n_slots * n_sps), ``gains`` is
    (batch, n_blocks, n_rx, n_tx).  Returns decoded symbol levels
    (batch, n_slots) and a stats dict.
    """
    params = trellis.params
    scheme = trellis.scheme
    n_tx = trellis.n_tx
    n_sps = params.samples_per_symbol
    m_size = params.alphabet_size
    gamma = params.memory_len
    p = params.phase_levels
    n_states = trellis.n_states

    received = np.asarray(received)
    if received.ndim != 3:
        raise ValueError("received must be (batch, n_rx, samples)")
    batch, n_rx, total = received.shape
    if total % (n_tx * n_sps):
        raise ValueError("received stream is not block-aligned")
    n_slots = total // n_sps
    n_blocks = n_slots // n_tx
    gains = np.asarray(gains)
    if gains.shape != (batch, n_blocks, n_rx, n_tx):
        raise ValueError(f"gains shape {gains.shape} != {(batch, n_blocks, n_rx, n_tx)}")
    if truncation_blocks is not None and truncation_blocks < 1:
        raise ValueError("truncation depth must be at least one block")

    y = received.reshape(batch, n_rx, n_slots, n_sps)
    gains_conj = gains.conj()
    templates_per_phase = m_size**gamma

    def slot_coeff(t):
        # conj(a) combined with the conj slot-offset phasor of slot t
        return gains_conj[:, t // n_tx] * trellis.offset_phasor_conj[None, None, :, t % n_tx]

    # Transient slots: tree growth from the known start, no merging.
    n_transient = min(gamma - 1, n_slots)
    path_metrics = np.zeros((batch, 1))
    for t in range(n_transient):
        bank_t = _transient_bank(trellis, t)
        g = _slot_correlations(trellis, y[:, :, t], slot_coeff(t), bank_t)
        bm = -2.0 * np.real(g)  # (batch, M**(t+1))
        path_metrics = np.repeat(path_metrics, m_size, axis=1) + bm

    if n_slots <= gamma - 1:
        best = np.argmin(path_metrics, axis=1)
        symbols = np.empty((batch, n_slots), dtype=np.int64)
        for t in range(n_slots - 1, -1, -1):
            symbols[:, t] = params.alphabet[best % m_size]
            best //= m_size
        return symbols, {"n_slots": n_slots, "branch_extensions": 0}

    hist_count = m_size ** (gamma - 1)
    metrics = np.full((batch, n_states), np.inf)
    metrics[:, :hist_count] = path_metrics  # seed states have phase residue 0

    backptr = np.zeros((n_slots, batch, n_states), dtype=np.uint8)
    best_at = np.zeros((n_slots, batch), dtype=np.int32)
    rows = np.arange(batch)
    pred_state = trellis.pred_state
    pred_flat = trellis.pred_flat
    extensions = 0

    for t in range(gamma - 1, n_slots):
        g = _slot_correlations(trellis, y[:, :, t], slot_coeff(t), trellis.banks)
        w = -2.0 * np.real(trellis.rot_conj[None, :, None] * g[:, None, :])
        w_flat = w.reshape(batch, p * templates_per_phase)
        cand = metrics[:, pred_state] + w_flat[:, pred_flat]  # (batch, S, M)
        choice = np.argmin(cand, axis=2)
        metrics = np.take_along_axis(cand, choice[:, :, None], axis=2)[:, :, 0]
        metrics -= metrics.min(axis=1, keepdims=True)
        backptr[t] = choice.astype(np.uint8)
        best_at[t] = np.argmin(metrics, axis=1).astype(np.int32)
        extensions += n_states * m_size

    symbols = np.empty((batch, n_slots), dtype=np.int64)

    def walk_back(t_from, state, t_stop):
        """Walk survivors from slot t_from down to t_stop, filling symbols."""
        cur = state.copy()
        for t in range(t_from, t_stop - 1, -1):
            bp = backptr[t][rows, cur]
            if gamma >= 2:
                symbols[:, t] = trellis.sym_from_state[cur]
            else:
                symbols[:, t] = trellis.pred_symbol[cur, bp]
            cur = pred_state[cur, bp]
        return cur

    def fill_prefix(seed_state):
        # Seed states encode the first gamma-1 symbols in their history.
        code = seed_state.copy()
        for t in range(gamma - 2, -1, -1):
            symbols[:, t] = params.alphabet[code % m_size]
            code //= m_size

    if truncation_blocks is None or truncation_blocks >= n_blocks:
        final = best_at[n_slots - 1].copy()
        seed = walk_back(n_slots - 1, final, gamma - 1)
        fill_prefix(seed)
    else:
        d = truncation_blocks
        for l in range(d, n_blocks):
            t_end = (l + 1) * n_tx - 1
            t_release = (l - d) * n_tx
            cur = best_at[t_end].copy()
            stop = max(t_release, gamma - 1)
            cur = walk_back(t_end, cur, stop)
            if t_release < gamma - 1:
                fill_prefix(cur)
        # Tail: everything not yet released comes from the final best state.
        final = best_at[n_slots - 1].copy()
        t_release = (n_blocks - d) * n_tx
        stop = max(t_release, gamma - 1)
        cur = walk_back(n_slots - 1, final, stop)
        if t_release < gamma - 1:
            fill_prefix(cur)

    stats = {
        "n_slots": n_slots,
        "n_states": n_states,
        "branch_extensions": extensions,
        "branch_extensions_per_slot": n_states * m_size,
        "partial_metric_groups_per_state": trellis.partial_metric_groups_per_state,
    }
    return symbols, stats


def viterbi_decode(
    trellis: TrellisSpec,
    received: np.ndarray,
    gains: np.ndarray,
    truncation_blocks: int | None = None,
) -> DecodeResult:
    """Decode one stream; see viterbi_decode_batch for conventions."""
    received = np.atleast_2d(np.asarray(received))
    gains = np.asarray(gains)
    if gains.ndim == 2:
        gains = gains[None, :, :]
    symbols, stats = viterbi_decode_batch(
        trellis, received[None, :, :], gains[None, :, :, :], truncation_blocks
    )
    symbols = symbols[0]
    bits = symbols_to_bits(symbols, trellis.params.alphabet_size)
    return DecodeResult(symbols=symbols, bits=bits, stats=stats)


def exhaustive_ml(
    params: CpmParams,
    scheme: CorrectionScheme,
    received: np.ndarray,
    gains: np.ndarray,
    theta_init: Sequence | None = None,
    max_hypotheses: int = 2**21,
    chunk: int = 4096,
) -> np.ndarray:
    """Global minimizer of the joint block metric by full enumeration.

    Hypothesis waveforms come from the batch encoder, independently of the
    trellis template bank, so this doubles as the decoding oracle.  The
    first minimum in lexicographic symbol order wins.
    """
    received = np.atleast_2d(np.asarray(received))
    gains = np.asarray(gains)
    if gains.ndim == 2:
        gains = gains[None, :, :]
    n_tx = scheme.n_tx
    n_sps = params.samples_per_symbol
    n_rx, total = received.shape
    if total % (n_tx * n_sps):
        raise ValueError("received stream is not block-aligned")
    n_slots = total // n_sps
    n_blocks = n_slots // n_tx
    if gains.shape != (n_blocks, n_rx, n_tx):
        raise ValueError(f"gains shape {gains.shape} != {(n_blocks, n_rx, n_tx)}")
    m_size = params.alphabet_size
    n_hyp = m_size**n_slots
    if n_hyp > max_hypotheses:
        raise ValueError(f"search space {n_hyp} exceeds budget {max_hypotheses}")

    dt = params.sample_interval()
    y_blocks = received.reshape(n_rx, n_blocks, n_tx * n_sps)
    best_metric = np.inf
    best_symbols = None
    digits = np.arange(n_hyp)
    for start in range(0, n_hyp, chunk):
        idx = digits[start : start + chunk]
        codes = np.empty((len(idx), n_slots), dtype=np.int64)
        rem = idx.copy()
        for t in range(n_slots - 1, -1, -1):
            codes[:, t] = rem % m_size
            rem //= m_size
        symbols = params.alphabet[codes]
        waves = waveform_batch(params, scheme, symbols, theta_init)
        waves = waves.reshape(len(idx), n_tx, n_blocks, n_tx * n_sps)
        mixed = np.einsum("knm,hmkl->hknl", gains, waves)
        diff = mixed - y_blocks.transpose(1, 0, 2)[None, :, :, :]
        metric = dt * np.sum(np.abs(diff) ** 2, axis=(1, 2, 3))
        pos = int(np.argmin(metric))
        if metric[pos] < best_metric:
            best_metric = float(metric[pos])
            best_symbols = symbols[pos]
    return best_symbols
