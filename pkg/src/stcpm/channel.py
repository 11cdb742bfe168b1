"""Block-constant Rayleigh fading and complex AWGN with calibrated SNR.

Fading gains are i.i.d. circular complex Gaussian with unit mean power
(E|a|^2 = 1) and are held constant over one code block.  Noise samples
are scaled so that discrete midpoint-rule integrals of noise-times-
template reproduce continuous matched-filter statistics: the per-sample
complex variance is N0 * samples_per_symbol / T.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .cpm import CpmParams

__all__ = [
    "ChannelRealization",
    "SnrSpec",
    "draw_channel",
    "apply_channel",
    "noise_variance_per_sample",
    "draw_gains_batch",
    "noise_batch",
]


@dataclass(frozen=True)
class ChannelRealization:
    """Fading matrix (n_rx, n_tx) plus the noise spectral density for one block."""

    gains: np.ndarray
    noise_psd: float = 0.0

    def __post_init__(self):
        gains = np.asarray(self.gains, dtype=complex)
        if gains.ndim != 2:
            raise ValueError("gains must be a (n_rx, n_tx) matrix")
        if self.noise_psd < 0:
            raise ValueError("noise_psd must be nonnegative")
        object.__setattr__(self, "gains", gains)

    @property
    def n_rx(self) -> int:
        return self.gains.shape[0]

    @property
    def n_tx(self) -> int:
        return self.gains.shape[1]


@dataclass(frozen=True)
class SnrSpec:
    """SNR operating point, stated as Eb/N0 in dB.

    Es = Eb * log2(M); Es/N0 is also reported since BER plots in the
    literature use either axis.
    """

    eb_n0_db: float

    def __post_init__(self):
        if not math.isfinite(self.eb_n0_db):
            raise ValueError("eb_n0_db must be finite")

    def noise_psd(self, params: CpmParams) -> float:
        eb = params.symbol_energy / params.bits_per_symbol
        return eb / (10.0 ** (self.eb_n0_db / 10.0))

    def es_n0_db(self, params: CpmParams) -> float:
        return self.eb_n0_db + 10.0 * math.log10(params.bits_per_symbol)


def draw_channel(rng: np.random.Generator, n_rx: int, n_tx: int, noise_psd: float = 0.0):
    """One fresh block realization: i.i.d. CN(0, 1) entries."""
    scale = math.sqrt(0.5)
    gains = scale * (
        rng.standard_normal((n_rx, n_tx)) + 1j * rng.standard_normal((n_rx, n_tx))
    )
    return ChannelRealization(gains, noise_psd)


def noise_variance_per_sample(params: CpmParams, noise_psd: float) -> float:
    return noise_psd * params.samples_per_symbol / params.symbol_duration


def apply_channel(
    params: CpmParams,
    samples: np.ndarray,
    chan: ChannelRealization,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Mix one block through the fading matrix and add white noise.

    ``samples`` is (n_tx, n_samples); the result is (n_rx, n_samples).
    """
    samples = np.asarray(samples)
    if samples.ndim != 2 or samples.shape[0] != chan.n_tx:
        raise ValueError(
            f"samples shape {samples.shape} does not match {chan.n_tx} transmit antennas"
        )
    received = chan.gains @ samples
    if chan.noise_psd > 0:
        if rng is None:
            raise ValueError("noisy channel needs an RNG")
        var = noise_variance_per_sample(params, chan.noise_psd)
        sigma = math.sqrt(var / 2.0)
        received = received + sigma * (
            rng.standard_normal(received.shape) + 1j * rng.standard_normal(received.shape)
        )
    return received


def draw_gains_batch(rng: np.random.Generator, shape: tuple) -> np.ndarray:
    """i.i.d. CN(0, 1) gain tensor of the given shape (e.g. (B, blocks, n_rx, n_tx))."""
    return math.sqrt(0.5) * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


def noise_batch(
    rng: np.random.Generator, shape: tuple, params: CpmParams, noise_psd: float
) -> np.ndarray:
    if noise_psd <= 0:
        return np.zeros(shape, dtype=complex)
    sigma = math.sqrt(noise_variance_per_sample(params, noise_psd) / 2.0)
    return sigma * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))
