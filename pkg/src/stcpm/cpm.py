"""Single-antenna CPM waveform primitives.

Phase is tracked in cycles (multiples of 2*pi).  The slot-to-slot phase
accumulator is kept as an exact ``fractions.Fraction`` whenever the inputs
are rational (rational modulation index, integer or rational symbols), so
arbitrarily long streams do not drift.  Sampled phase values are produced
on a midpoint grid, ``t_k = (k + 1/2) * T / N``, shared by every consumer
in the library; the discrete cross-correlation cancellations in the
space-time code rely on all modules using this one grid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from fractions import Fraction

import numpy as np

__all__ = [
    "PulseKind",
    "CpmParams",
    "PhaseState",
    "eval_pulse",
    "pulse_boundary_value",
    "initial_state",
    "phase_memory_step",
    "phase_trajectory",
    "slot_end_phase",
    "modulate_slot",
]


class PulseKind(str, Enum):
    """Phase smoothing pulse families (integrated frequency pulses)."""

    LREC = "lrec"
    LRC = "lrc"


def _as_fraction(value) -> Fraction:
    if isinstance(value, Fraction):
        return value
    if isinstance(value, (int, np.integer)):
        return Fraction(int(value))
    return Fraction(value)


def _mod1(value):
    """Reduce a phase in cycles into [0, 1), preserving exact rationals."""
    if isinstance(value, Fraction):
        return value % 1
    return float(value) % 1.0


@dataclass(frozen=True)
class CpmParams:
    """Static description of one CPM configuration.

    The modulation index is ``h = 2 * mod_index_num / mod_index_den`` with
    numerator and denominator coprime; ``mod_index_den`` is also the number
    of distinct phase-accumulator residues, which sizes the decoder trellis.
    The alphabet is the ``alphabet_size`` odd levels ``-M+1, -M+3, ..., M-1``.
    """

    alphabet_size: int
    mod_index_num: int = 1
    mod_index_den: int = 4
    memory_len: int = 2
    pulse: PulseKind = PulseKind.LREC
    samples_per_symbol: int = 32
    symbol_duration: float = 1.0
    symbol_energy: float = 1.0

    def __post_init__(self):
        m = self.alphabet_size
        if m < 2 or (m & (m - 1)) != 0:
            raise ValueError(f"alphabet_size must be a power of two >= 2, got {m}")
        if self.mod_index_num < 1 or self.mod_index_den < 1:
            raise ValueError("modulation index numerator and denominator must be positive")
        if math.gcd(self.mod_index_num, self.mod_index_den) != 1:
            raise ValueError(
                f"modulation index {self.mod_index_num}/{self.mod_index_den} must be in lowest terms"
            )
        if self.memory_len < 1:
            raise ValueError("memory_len must be a positive number of symbols")
        if self.samples_per_symbol < 8:
            raise ValueError("samples_per_symbol below the resolution floor of 8")
        if self.symbol_duration <= 0 or self.symbol_energy <= 0:
            raise ValueError("symbol_duration and symbol_energy must be positive")
        object.__setattr__(self, "pulse", PulseKind(self.pulse))

    @property
    def mod_index(self) -> Fraction:
        return Fraction(2 * self.mod_index_num, self.mod_index_den)

    @property
    def phase_levels(self) -> int:
        """Number of residues of the data-driven phase accumulator."""
        return self.mod_index_den

    @property
    def alphabet(self) -> np.ndarray:
        m = self.alphabet_size
        return np.arange(-m + 1, m + 1, 2)

    @property
    def bits_per_symbol(self) -> int:
        return self.alphabet_size.bit_length() - 1

    def midpoint_times(self) -> np.ndarray:
        """Slot-relative sample instants (k + 1/2) * T / N."""
        n = self.samples_per_symbol
        return (np.arange(n) + 0.5) * (self.symbol_duration / n)

    def sample_interval(self) -> float:
        return self.symbol_duration / self.samples_per_symbol


def eval_pulse(kind: PulseKind, memory_len: int, t, symbol_duration: float = 1.0):
    """Evaluate the phase smoothing function q(t).

    q is 0 for t <= 0, 1/2 for t >= memory_len * T, and continuous in
    between: a linear ramp for LREC, a raised-cosine ramp for LRC.
    """
    kind = PulseKind(kind)
    t_arr = np.asarray(t, dtype=float)
    width = memory_len * symbol_duration
    x = np.clip(t_arr / width, 0.0, 1.0)
    if kind is PulseKind.LREC:
        q = 0.5 * x
    else:
        q = 0.5 * x - np.sin(2.0 * np.pi * x) / (4.0 * np.pi)
    if np.isscalar(t) or np.ndim(t) == 0:
        return float(q)
    return q


def pulse_boundary_value(kind: PulseKind, memory_len: int, i: int):
    """q(i * T) at integer symbol boundaries, exact where possible.

    LREC values are rational (returned as Fraction); LRC values carry a
    sine term and are returned as float, except at the exact endpoints.
    """
    kind = PulseKind(kind)
    if i <= 0:
        return Fraction(0)
    if i >= memory_len:
        return Fraction(1, 2)
    if kind is PulseKind.LREC:
        return Fraction(i, 2 * memory_len)
    return float(i) / (2 * memory_len) - math.sin(2.0 * math.pi * i / memory_len) / (4.0 * math.pi)


@dataclass(frozen=True)
class PhaseState:
    """Value-type phase memory: accumulator plus the last memory_len-1 symbols.

    ``history`` is ordered oldest first.  Entries equal to 0 stand for the
    time before the stream started (no pulse launched); they never occur in
    the odd transmit alphabet.
    """

    theta: Fraction
    history: tuple

    def __post_init__(self):
        th = self.theta
        th = th % 1.0 if isinstance(th, float) else _as_fraction(th) % 1
        object.__setattr__(self, "theta", th)


def initial_state(params: CpmParams, theta=0) -> PhaseState:
    return PhaseState(_as_fraction(theta), (0,) * (params.memory_len - 1))


def _check_state(params: CpmParams, state: PhaseState):
    if len(state.history) != params.memory_len - 1:
        raise ValueError(
            f"history length {len(state.history)} != memory_len-1 = {params.memory_len - 1}"
        )


def _check_symbol(params: CpmParams, symbol):
    # Integers are validated against the odd alphabet; rational/real symbols
    # pass through so offset (pseudo) alphabets can reuse the same machinery.
    if isinstance(symbol, (int, np.integer)) and int(symbol) not in set(
        int(v) for v in params.alphabet
    ):
        raise ValueError(f"symbol {symbol} not in alphabet of size {params.alphabet_size}")


def phase_memory_step(params: CpmParams, state: PhaseState, symbol, xi_correction=0) -> PhaseState:
    """Advance the accumulator across one slot boundary.

    theta' = theta + h/2 * (oldest symbol leaving the pulse window)
           + xi_correction, reduced mod 1; the history shifts by one.
    """
    _check_state(params, state)
    _check_symbol(params, symbol)
    exiting = state.history[0] if params.memory_len > 1 else symbol
    half_h = params.mod_index / 2
    if isinstance(exiting, float) or isinstance(xi_correction, float):
        theta = float(state.theta) + float(half_h) * float(exiting) + float(xi_correction)
    else:
        theta = state.theta + half_h * _as_fraction(exiting) + _as_fraction(xi_correction)
    if params.memory_len > 1:
        history = state.history[1:] + (symbol,)
    else:
        history = ()
    return PhaseState(_mod1(theta), history)


def _slot_symbols(params: CpmParams, state: PhaseState, symbol):
    """Symbols indexed i = 1..memory_len, newest (i=1) first."""
    # i-th term uses the symbol launched i-1 slots ago.
    return (symbol,) + tuple(reversed(state.history))


def phase_trajectory(params: CpmParams, state: PhaseState, symbol, correction=None) -> np.ndarray:
    """Sampled phase (cycles) over one slot on the midpoint grid.

    ``correction`` is an optional per-sample offset profile already in
    cycles; it must match the sample count.
    """
    _check_state(params, state)
    _check_symbol(params, symbol)
    taus = params.midpoint_times()
    t_sym = params.symbol_duration
    phase = np.full(params.samples_per_symbol, float(state.theta))
    h = float(params.mod_index)
    for i, sym in enumerate(_slot_symbols(params, state, symbol), start=1):
        if sym == 0:
            continue
        phase = phase + h * float(sym) * eval_pulse(
            params.pulse, params.memory_len, taus + (i - 1) * t_sym, t_sym
        )
    if correction is not None:
        correction = np.asarray(correction, dtype=float)
        if correction.shape != phase.shape:
            raise ValueError("correction profile length does not match the sample grid")
        phase = phase + correction
    return phase


def slot_end_phase(params: CpmParams, state: PhaseState, symbol, correction_end=0):
    """Exact phase at the trailing slot boundary (before reduction mod 1).

    Rational for LREC with rational inputs; float otherwise.  Used by the
    continuity checks, which never touch sampled values.
    """
    _check_state(params, state)
    _check_symbol(params, symbol)
    acc = state.theta
    for i, sym in enumerate(_slot_symbols(params, state, symbol), start=1):
        if sym == 0:
            continue
        q_i = pulse_boundary_value(params.pulse, params.memory_len, i)
        if isinstance(q_i, Fraction) and not isinstance(sym, float) and not isinstance(acc, float):
            acc = acc + params.mod_index * _as_fraction(sym) * q_i
        else:
            acc = float(acc) + float(params.mod_index) * float(sym) * float(q_i)
    if isinstance(correction_end, float) or isinstance(acc, float):
        return float(acc) + float(correction_end)
    return acc + _as_fraction(correction_end)


def modulate_slot(params: CpmParams, phase_cycles, n_tx: int = 1) -> np.ndarray:
    """Constant-envelope complex baseband samples for one slot."""
    amplitude = math.sqrt(params.symbol_energy / (n_tx * params.symbol_duration))
    phase = np.asarray(phase_cycles, dtype=float)
    return amplitude * np.exp(2j * np.pi * phase)
