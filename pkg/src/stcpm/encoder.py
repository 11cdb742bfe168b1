"""Space-time block encoding of CPM via phase correction factors.

Every transmit antenna carries the same data symbols (parallel mapping,
one fresh source symbol per slot, so the code is full rate).  Block-level
L2 orthogonality between antennas is created purely by deterministic
per-antenna phase offset profiles whose slot boundary increments differ
by 1/3 cycle (three antennas) or 1/2 cycle (two antennas).  Profiles are
identical in every slot ("repetitive"), including the first, so every
block of a stream is orthogonal.

Supported profile families:

* ``linear``        ramp 0 -> increment across the slot
* ``raised-cosine`` smooth ramp (1 - cos(pi tau/T))/2 scaled to the increment
* ``pulse-shaped``  sum of scaled copies of the CPM smoothing pulse; this
  one commutes with the data sum, so each antenna is exactly a
  conventional CPM over a shifted ("pseudo") alphabet
* ``custom``        any user profile with the mandated boundary increment

Bit mapping is binary-reflected Gray: rank = gray_decode(bits),
level = 2*rank - (M-1), e.g. for M=4: 00,01,11,10 -> -3,-1,+1,+3.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from typing import Callable, Sequence

import numpy as np

from .cpm import (
    CpmParams,
    PhaseState,
    eval_pulse,
    initial_state,
    modulate_slot,
    phase_memory_step,
    phase_trajectory,
    pulse_boundary_value,
)

__all__ = [
    "CorrectionKind",
    "CorrectionScheme",
    "PseudoAlphabet",
    "CodeBlock",
    "MappingTrace",
    "StreamEncoding",
    "build_correction",
    "pseudo_alphabets",
    "gray_map",
    "gray_unmap",
    "bits_to_symbols",
    "symbols_to_bits",
    "encode_block",
    "encode_stream",
    "encode_symbols",
    "waveform_batch",
    "source_index",
]


class CorrectionKind(str, Enum):
    NONE = "none"
    LINEAR = "linear"
    RAISED_COSINE = "raised-cosine"
    PULSE_SHAPED = "pulse-shaped"
    CUSTOM = "custom"


_WEIGHTS = {1: (0,), 2: (0, 1), 3: (1, 0, -1)}


@dataclass(frozen=True)
class CorrectionScheme:
    """Per-antenna phase offset profiles for one antenna count.

    ``variant`` selects between the two admissible three-antenna boundary
    increment patterns (1/3 or 2/3 cycle per slot).  ``perturb`` adds the
    given number of cycles to the unit increment and exists solely as a
    negative control for the orthogonality certificates.
    """

    kind: CorrectionKind
    n_tx: int
    variant: int = 1
    perturb: float = 0.0
    custom_profile: Callable[[np.ndarray], np.ndarray] | None = field(
        default=None, compare=False
    )

    @property
    def weights(self) -> tuple:
        return _WEIGHTS[self.n_tx]

    @property
    def unit_increment(self) -> Fraction:
        """Boundary increment of a +1-weight antenna, before perturbation."""
        if self.kind is CorrectionKind.NONE or self.n_tx == 1:
            return Fraction(0)
        if self.n_tx == 2:
            return Fraction(1, 2)
        return Fraction(self.variant, 3)

    def increment(self, antenna: int):
        """Slot boundary phase increment (cycles) fed into the phase memory."""
        unit = self.unit_increment
        w = self.weights[antenna]
        if self.perturb:
            return w * (float(unit) + self.perturb)
        return w * unit

    def _base_profile(self, params: CpmParams, tau: np.ndarray) -> np.ndarray:
        """Unit-increment profile as a function of slot-relative time."""
        t_sym = params.symbol_duration
        unit = float(self.unit_increment) + self.perturb
        if self.kind is CorrectionKind.NONE:
            return np.zeros_like(tau)
        if self.kind is CorrectionKind.LINEAR:
            return unit * tau / t_sym
        if self.kind is CorrectionKind.RAISED_COSINE:
            return unit * 0.5 * (1.0 - np.cos(np.pi * tau / t_sym))
        if self.kind is CorrectionKind.PULSE_SHAPED:
            total = np.zeros_like(tau)
            for i in range(1, params.memory_len + 1):
                total = total + eval_pulse(
                    params.pulse, params.memory_len, tau + (i - 1) * t_sym, t_sym
                )
            return 2.0 * unit * total
        return self.custom_profile(tau / t_sym) + self.perturb * tau / t_sym

    def slot_profile(self, params: CpmParams, antenna: int) -> np.ndarray:
        """Offset profile (cycles) on the midpoint grid for one antenna."""
        w = self.weights[antenna]
        if w == 0:
            return np.zeros(params.samples_per_symbol)
        return w * self._base_profile(params, params.midpoint_times())

    def profile_end(self, params: CpmParams, antenna: int):
        """Profile value at the trailing slot edge, exact where possible."""
        w = self.weights[antenna]
        if w == 0 or self.kind is CorrectionKind.NONE:
            return Fraction(0)
        unit = self.unit_increment
        if self.kind is CorrectionKind.PULSE_SHAPED:
            end = Fraction(0)
            for i in range(1, params.memory_len + 1):
                q_i = pulse_boundary_value(params.pulse, params.memory_len, i)
                if isinstance(q_i, Fraction) and not isinstance(end, float):
                    end = end + 2 * unit * q_i
                else:
                    end = float(end) + 2.0 * float(unit) * float(q_i)
        else:
            end = unit
        if self.perturb:
            scale = 1.0 + self.perturb / float(unit)
            return w * float(end) * scale
        return w * end if isinstance(end, Fraction) else w * end

    def profile_start(self, params: CpmParams, antenna: int):
        end = self.profile_end(params, antenna)
        inc = self.increment(antenna)
        if isinstance(end, Fraction) and isinstance(inc, Fraction):
            return end - inc
        return float(end) - float(inc)

    def cumulative(self, params: CpmParams, antenna: int, t: np.ndarray) -> np.ndarray:
        """Non-resetting offset profile over absolute time.

        Equals (elapsed whole slots) * increment plus the slot profile; this
        is the form in which boundary increments are no longer bookkept in
        the phase memory.
        """
        t = np.asarray(t, dtype=float)
        t_sym = params.symbol_duration
        slots = np.floor(t / t_sym + 1e-12)
        tau = t - slots * t_sym
        w = self.weights[antenna]
        if w == 0:
            return np.zeros_like(t)
        return slots * float(self.increment(antenna)) + w * self._base_profile(params, tau)


def build_correction(
    kind,
    params: CpmParams,
    n_tx: int,
    variant: int = 1,
    perturb: float = 0.0,
    custom_profile: Callable[[np.ndarray], np.ndarray] | None = None,
) -> CorrectionScheme:
    """Construct and validate a correction scheme for ``n_tx`` antennas."""
    kind = CorrectionKind(kind)
    if n_tx not in (1, 2, 3):
        raise ValueError(f"unsupported antenna count {n_tx}")
    if n_tx == 1 and kind is not CorrectionKind.NONE:
        raise ValueError("single-antenna transmission takes no correction scheme")
    if variant not in (1, 2):
        raise ValueError("variant must be 1 or 2")
    if variant == 2 and n_tx != 3:
        raise ValueError("the alternate increment pattern only exists for three antennas")
    if kind is CorrectionKind.CUSTOM:
        if custom_profile is None:
            raise ValueError("custom correction requires a profile callable")
        scheme = CorrectionScheme(kind, n_tx, variant, perturb, custom_profile)
        probe = custom_profile(np.array([0.0, 1.0]))
        unit = float(scheme.unit_increment)
        if abs(probe[0]) > 1e-12 or abs(probe[1] - unit) > 1e-12:
            raise ValueError(
                f"custom profile endpoints must be (0, {unit}), got ({probe[0]}, {probe[1]})"
            )
        return scheme
    if custom_profile is not None:
        raise ValueError("profile callable is only accepted for the custom kind")
    return CorrectionScheme(kind, n_tx, variant, perturb)


@dataclass(frozen=True)
class PseudoAlphabet:
    """Shifted symbol alphabet equivalent to one antenna's corrected CPM."""

    antenna: int
    offset: Fraction
    levels: tuple

    def as_floats(self) -> np.ndarray:
        return np.array([float(v) for v in self.levels])


def pseudo_alphabets(params: CpmParams, scheme: CorrectionScheme) -> list[PseudoAlphabet]:
    """Per-antenna alphabets that replicate pulse-shaped correction.

    The pulse-shaped profile adds a constant offset to every data symbol,
    so antenna m transmits plain CPM over levels ``alphabet + offset_m``
    with ``offset_m = 2 * increment_m / h``.
    """
    if scheme.kind is not CorrectionKind.PULSE_SHAPED:
        raise ValueError("pseudo alphabets only exist for the pulse-shaped scheme")
    if scheme.perturb:
        raise ValueError("perturbed schemes have no pseudo-alphabet equivalent")
    out = []
    for m in range(scheme.n_tx):
        offset = 2 * scheme.increment(m) / params.mod_index
        levels = tuple(int(d) + offset for d in params.alphabet)
        out.append(PseudoAlphabet(antenna=m, offset=offset, levels=levels))
    return out


def _gray_to_binary(value: int) -> int:
    mask = value >> 1
    while mask:
        value ^= mask
        mask >>= 1
    return value


def gray_map(bits: Sequence[int], alphabet_size: int) -> int:
    """Map one Gray-coded bit tuple to an odd alphabet level."""
    k = alphabet_size.bit_length() - 1
    if len(bits) != k:
        raise ValueError(f"expected {k} bits for alphabet size {alphabet_size}, got {len(bits)}")
    value = 0
    for b in bits:
        if b not in (0, 1):
            raise ValueError(f"bit values must be 0 or 1, got {b}")
        value = (value << 1) | int(b)
    rank = _gray_to_binary(value)
    return 2 * rank - (alphabet_size - 1)


def gray_unmap(level: int, alphabet_size: int) -> tuple:
    rank = (int(level) + alphabet_size - 1) // 2
    if rank < 0 or rank >= alphabet_size or 2 * rank - (alphabet_size - 1) != int(level):
        raise ValueError(f"level {level} not in alphabet of size {alphabet_size}")
    gray = rank ^ (rank >> 1)
    k = alphabet_size.bit_length() - 1
    return tuple((gray >> (k - 1 - j)) & 1 for j in range(k))


def bits_to_symbols(bits: np.ndarray, alphabet_size: int) -> np.ndarray:
    """Vectorized Gray mapping of a flat bit array to symbol levels."""
    bits = np.asarray(bits, dtype=np.int64)
    k = alphabet_size.bit_length() - 1
    if bits.size % k:
        raise ValueError(f"bit count {bits.size} not a multiple of {k}")
    if bits.size and (bits.min() < 0 or bits.max() > 1):
        raise ValueError("bit values must be 0 or 1")
    words = bits.reshape(-1, k)
    value = np.zeros(len(words), dtype=np.int64)
    for j in range(k):
        value = (value << 1) | words[:, j]
    rank = value.copy()
    shift = 1
    while shift < k:
        rank ^= rank >> shift
        shift <<= 1
    return 2 * rank - (alphabet_size - 1)


def symbols_to_bits(symbols: np.ndarray, alphabet_size: int) -> np.ndarray:
    symbols = np.asarray(symbols, dtype=np.int64)
    rank = (symbols + alphabet_size - 1) // 2
    if rank.size and (rank.min() < 0 or rank.max() >= alphabet_size):
        raise ValueError("symbol outside alphabet")
    gray = rank ^ (rank >> 1)
    k = alphabet_size.bit_length() - 1
    out = np.empty((symbols.size, k), dtype=np.int64)
    for j in range(k):
        out[:, j] = (gray >> (k - 1 - j)) & 1
    return out.reshape(-1)


def source_index(block: int, slot: int, pulse_term: int, n_tx: int) -> int:
    """1-based source symbol index feeding pulse term i of block l, slot r."""
    return n_tx * block + slot - pulse_term + 1


@dataclass(frozen=True)
class CodeBlock:
    """One space-time block: antenna-by-time samples plus phase bookkeeping."""

    samples: np.ndarray  # (n_tx, n_tx * samples_per_symbol) complex
    entry_states: tuple
    end_states: tuple
    block_index: int = 0

    @property
    def n_tx(self) -> int:
        return self.samples.shape[0]


def _validate_states(params: CpmParams, states: Sequence[PhaseState], n_tx: int):
    if len(states) != n_tx:
        raise ValueError(f"need one phase state per antenna, got {len(states)} for {n_tx}")
    histories = {tuple(s.history) for s in states}
    if len(histories) != 1:
        raise ValueError("antennas must share an identical data history (parallel mapping)")


def encode_block(
    params: CpmParams,
    scheme: CorrectionScheme,
    states: Sequence[PhaseState],
    symbols: Sequence,
    block_index: int = 0,
) -> tuple[CodeBlock, tuple]:
    """Encode n_tx fresh symbols into one block, advancing each antenna's state."""
    n_tx = scheme.n_tx
    if len(symbols) != n_tx:
        raise ValueError(f"a block consumes exactly {n_tx} symbols, got {len(symbols)}")
    _validate_states(params, states, n_tx)
    n_sps = params.samples_per_symbol
    profiles = [scheme.slot_profile(params, m) for m in range(n_tx)]
    increments = [scheme.increment(m) for m in range(n_tx)]
    samples = np.empty((n_tx, n_tx * n_sps), dtype=complex)
    states = tuple(states)
    entry = states
    for r, sym in enumerate(symbols):
        new_states = []
        for m in range(n_tx):
            phase = phase_trajectory(params, states[m], sym, correction=profiles[m])
            samples[m, r * n_sps : (r + 1) * n_sps] = modulate_slot(params, phase, n_tx)
            new_states.append(phase_memory_step(params, states[m], sym, increments[m]))
        states = tuple(new_states)
    return CodeBlock(samples, entry, states, block_index), states


@dataclass(frozen=True)
class MappingTrace:
    """Where each source symbol landed, for decoder alignment."""

    n_source_bits: int
    n_pad_bits: int
    assignments: tuple  # ((symbol j, block l, slot r), ...) all 1-based except l


@dataclass(frozen=True)
class StreamEncoding:
    blocks: tuple
    trace: MappingTrace
    final_states: tuple
    symbols: np.ndarray

    def concatenated(self) -> np.ndarray:
        """Full per-antenna sample streams, antennas by time."""
        return np.concatenate([b.samples for b in self.blocks], axis=1)


def encode_stream(
    params: CpmParams,
    scheme: CorrectionScheme,
    bits: np.ndarray,
    theta_init: Sequence | None = None,
) -> StreamEncoding:
    """Gray-map a bit stream and encode it block by block.

    The tail is zero-padded up to a whole block; padding is recorded in the
    trace.  Initial per-antenna phases default to zero.
    """
    n_tx = scheme.n_tx
    bits = np.asarray(bits, dtype=np.int64).reshape(-1)
    k = params.bits_per_symbol
    chunk = n_tx * k
    n_pad = (-bits.size) % chunk
    if n_pad:
        bits = np.concatenate([bits, np.zeros(n_pad, dtype=np.int64)])
    symbols = bits_to_symbols(bits, params.alphabet_size)
    if theta_init is None:
        theta_init = (0,) * n_tx
    if len(theta_init) != n_tx:
        raise ValueError("need one initial phase per antenna")
    states = tuple(initial_state(params, th) for th in theta_init)
    blocks = []
    assignments = []
    for l in range(symbols.size // n_tx):
        block_syms = [int(s) for s in symbols[l * n_tx : (l + 1) * n_tx]]
        block, states = encode_block(params, scheme, states, block_syms, block_index=l)
        blocks.append(block)
        for r in range(1, n_tx + 1):
            assignments.append((n_tx * l + r, l, r))
    trace = MappingTrace(bits.size - n_pad, n_pad, tuple(assignments))
    return StreamEncoding(tuple(blocks), trace, states, symbols)


def encode_symbols(
    params: CpmParams,
    scheme: CorrectionScheme,
    symbols: Sequence,
    theta_init: Sequence | None = None,
    history_init: Sequence | None = None,
) -> tuple[np.ndarray, tuple]:
    """Slot-by-slot encoding of an arbitrary (possibly offset) symbol sequence.

    ``history_init`` primes the shared pre-stream pulse window; by default
    nothing was transmitted before the stream.  Returns the per-antenna
    sample streams and the final states.
    """
    n_tx = scheme.n_tx
    if theta_init is None:
        theta_init = (0,) * n_tx
    if history_init is None:
        history_init = (0,) * (params.memory_len - 1)
    if len(history_init) != params.memory_len - 1:
        raise ValueError("history_init must hold memory_len-1 symbols")
    states = tuple(
        PhaseState(Fraction(th) if not isinstance(th, float) else th, tuple(history_init))
        for th in theta_init
    )
    n_sps = params.samples_per_symbol
    profiles = [scheme.slot_profile(params, m) for m in range(n_tx)]
    increments = [scheme.increment(m) for m in range(n_tx)]
    out = np.empty((n_tx, len(symbols) * n_sps), dtype=complex)
    for n, sym in enumerate(symbols):
        new_states = []
        for m in range(n_tx):
            phase = phase_trajectory(params, states[m], sym, correction=profiles[m])
            out[m, n * n_sps : (n + 1) * n_sps] = modulate_slot(params, phase, n_tx)
            new_states.append(phase_memory_step(params, states[m], sym, increments[m]))
        states = tuple(new_states)
    return out, states


def _offset_cycles(scheme: CorrectionScheme, theta_init, n_slots: int) -> np.ndarray:
    """Per-antenna accumulator offsets theta0 + n*increment, reduced mod 1."""
    out = np.empty((scheme.n_tx, n_slots))
    for m in range(scheme.n_tx):
        inc = scheme.increment(m)
        th = theta_init[m]
        if isinstance(inc, Fraction) and not isinstance(th, float):
            th = Fraction(th)
            out[m] = [float((th + n * inc) % 1) for n in range(n_slots)]
        else:
            out[m] = np.mod(float(th) + np.arange(n_slots) * float(inc), 1.0)
    return out


def waveform_batch(
    params: CpmParams,
    scheme: CorrectionScheme,
    symbols: np.ndarray,
    theta_init: Sequence | None = None,
) -> np.ndarray:
    """Vectorized transmit waveforms for a batch of integer symbol streams.

    ``symbols`` has shape (batch, n_slots); the result has shape
    (batch, n_tx, n_slots * samples_per_symbol).  The data-driven part of
    the accumulator is tracked in exact integer arithmetic (multiples of
    1/p), so long streams stay aligned with the recursive encoder.
    """
    symbols = np.asarray(symbols, dtype=np.int64)
    if symbols.ndim != 2:
        raise ValueError("symbols must be (batch, n_slots)")
    n_tx = scheme.n_tx
    if theta_init is None:
        theta_init = (0,) * n_tx
    batch, n_slots = symbols.shape
    n_sps = params.samples_per_symbol
    gamma = params.memory_len
    t_sym = params.symbol_duration
    taus = params.midpoint_times()

    pulse_table = np.stack(
        [
            eval_pulse(params.pulse, gamma, taus + i * t_sym, t_sym)
            for i in range(gamma)
        ]
    )  # (gamma, n_sps), row i is the pulse launched i slots ago

    # Saturated symbols: sum of everything that left the pulse window.
    sat = np.zeros((batch, n_slots), dtype=np.int64)
    if n_slots > gamma:
        sat[:, gamma:] = np.cumsum(symbols[:, : n_slots - gamma], axis=1)
    p = params.mod_index_den
    acc = ((params.mod_index_num * sat) % p) / p  # exact residues of h/2 * sum

    window = np.zeros((batch, n_slots, gamma), dtype=np.int64)
    for i in range(gamma):
        window[:, i:, i] = symbols[:, : n_slots - i]
    data_phase = acc[:, :, None] + float(params.mod_index) * np.einsum(
        "bni,ik->bnk", window, pulse_table
    )

    offsets = _offset_cycles(scheme, theta_init, n_slots)
    amp = np.sqrt(params.symbol_energy / (n_tx * t_sym))
    out = np.empty((batch, n_tx, n_slots * n_sps), dtype=complex)
    for m in range(n_tx):
        profile = scheme.slot_profile(params, m)
        phase = data_phase + offsets[m][None, :, None] + profile[None, None, :]
        out[:, m, :] = (amp * np.exp(2j * np.pi * np.mod(phase, 1.0))).reshape(
            batch, n_slots * n_sps
        )
    return out
