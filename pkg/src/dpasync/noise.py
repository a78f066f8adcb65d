"""Oscillator drift/jitter and measurement-error models.

States may hold scalars (one node) or equal-length arrays (one entry per
node). All randomness comes from the ``numpy.random.Generator`` passed in.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import SingularMatrixError, invert2

TWO_PI = 2.0 * np.pi


@dataclass(frozen=True)
class OscillatorParams:
    fc: float = 1e9
    beta1: float = 5e-19
    beta2: float = 5e-19
    A: float = -53.46  # integrated phase-noise power, dB; -inf disables jitter
    T: float = 1e-4
    init_ppm: float = 1e-4  # fractional, 1e-4 == 100 ppm

    def __post_init__(self):
        if not self.fc > 0:
            raise ValueError(f"fc must be > 0, got {self.fc}")
        if not self.T > 0:
            raise ValueError(f"T must be > 0, got {self.T}")
        if self.beta1 < 0 or self.beta2 < 0:
            raise ValueError("beta1 and beta2 must be >= 0")
        if self.init_ppm < 0:
            raise ValueError("init_ppm must be >= 0")
        if np.isnan(self.A) or self.A == np.inf:
            raise ValueError("A must be finite or -inf")


@dataclass(frozen=True)
class MeasurementParams:
    fs: float = 1e7
    snr_db: float = 0.0

    def __post_init__(self):
        if not self.fs > 0:
            raise ValueError(f"fs must be > 0, got {self.fs}")

    @property
    def snr_linear(self) -> float:
        return 10.0 ** (self.snr_db / 10.0)

    def sample_count(self, T: float) -> int:
        return int(round(T * self.fs))


@dataclass(frozen=True)
class ElectricalState:
    """True frequency (Hz) and unwrapped phase (rad) of one node or of every node."""

    f: np.ndarray | float
    theta: np.ndarray | float


@dataclass(frozen=True)
class NoiseDraw:
    df: np.ndarray | float
    dtheta_f: np.ndarray | float
    dtheta: np.ndarray | float


def adev_sigma_f(p: OscillatorParams) -> float:
    """Per-interval frequency drift std (Hz), from the oscillator's Allan deviation."""
    return p.fc * np.sqrt(p.beta1 / p.T + p.beta2 * p.T)


def jitter_sigma_theta(A: float) -> float:
    return float(np.sqrt(2.0 * 10.0 ** (A / 10.0)))


def process_noise_cov(p: OscillatorParams) -> np.ndarray:
    sf2 = adev_sigma_f(p) ** 2
    st2 = jitter_sigma_theta(p.A) ** 2
    c = -np.pi * p.T * sf2
    return np.array([[sf2, c], [c, (np.pi * p.T) ** 2 * sf2 + st2]])


def process_info(p: OscillatorParams) -> np.ndarray:
    """Process-noise information matrix, inverse of :func:`process_noise_cov`.

    Raises SingularMatrixError for a drift-free or jitter-free oscillator,
    whose process covariance is rank deficient.
    """
    if adev_sigma_f(p) == 0 or jitter_sigma_theta(p.A) == 0:
        raise SingularMatrixError("process noise covariance is singular (sigma_f or sigma_theta is 0)")
    return invert2(process_noise_cov(p))


def crlb_sigmas(mp: MeasurementParams, p: OscillatorParams) -> tuple[float, float]:
    """Frequency (Hz) and phase (rad) estimation error stds set at their CRLBs.

    The phase bound is ``2 / (L * SNR)`` without a square root, as published.
    """
    L = mp.sample_count(p.T)
    if L < 2:
        raise ValueError(f"need at least 2 samples per interval, got L={L}")
    snr = mp.snr_linear
    sigma_mf = p.fc * np.sqrt(6.0 / ((TWO_PI**2) * L**3 * snr))
    sigma_mtheta = 2.0 / (L * snr)
    return float(sigma_mf), float(sigma_mtheta)


def measurement_noise_cov(mp: MeasurementParams, p: OscillatorParams) -> np.ndarray:
    sf, st = crlb_sigmas(mp, p)
    return np.diag([sf**2, st**2])


def measurement_info(mp: MeasurementParams, p: OscillatorParams) -> np.ndarray:
    sf, st = crlb_sigmas(mp, p)
    return np.diag([sf**-2, st**-2])


def draw_initial_state(p: OscillatorParams, rng: np.random.Generator, n: int | None = None,
                       phase_range: tuple[float, float] = (0.0, TWO_PI)) -> ElectricalState:
    f = rng.normal(p.fc, p.init_ppm * p.fc, size=n)
    lo, hi = phase_range
    theta = rng.uniform(lo, hi, size=n)
    if hi > lo:
        # uniform() can round up to the open upper bound
        theta = np.where(theta >= hi, lo, theta)
    return ElectricalState(f, theta)


def evolve_state(s: ElectricalState, p: OscillatorParams, rng: np.random.Generator,
                 draw: tuple | None = None) -> tuple[ElectricalState, NoiseDraw]:
    """Advance the oscillators by one update interval.

    ``draw=(df, dtheta)`` forces the noise instead of sampling it.
    """
    if draw is None:
        size = np.shape(s.f) or None
        df = rng.normal(0.0, adev_sigma_f(p), size=size)
        dtheta = rng.normal(0.0, jitter_sigma_theta(p.A), size=size)
    else:
        df, dtheta = draw
    dtheta_f = -np.pi * p.T * df
    nd = NoiseDraw(df, dtheta_f, dtheta)
    return ElectricalState(s.f + df, s.theta + dtheta_f + dtheta), nd


def measure_state(s: ElectricalState, mp: MeasurementParams, p: OscillatorParams,
                  rng: np.random.Generator, errors: tuple | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Noisy (frequency, phase) observation and its information matrix.

    Returns ``y`` of shape ``(..., 2)`` and the shared 2x2 matrix ``U``.
    ``errors=(eps_f, eps_theta)`` forces the estimation errors.
    """
    if errors is None:
        sf, st = crlb_sigmas(mp, p)
        size = np.shape(s.f) or None
        eps_f = rng.normal(0.0, sf, size=size)
        eps_theta = rng.normal(0.0, st, size=size)
    else:
        eps_f, eps_theta = errors
    y = np.stack([np.add(s.f, eps_f), np.add(s.theta, eps_theta)], axis=-1)
    return y, measurement_info(mp, p)
