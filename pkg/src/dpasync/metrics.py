"""Residual phase error and convergence detection."""
from __future__ import annotations

import numpy as np

from .noise import NoiseDraw


def wrap_phase(x):
    """Wrap angles to (-pi, pi]."""
    x = np.asarray(x, dtype=float)
    w = np.mod(x + np.pi, 2.0 * np.pi) - np.pi
    return np.where(w == -np.pi, np.pi, w)


def residual_phase_error(draw: NoiseDraw, eps_f, eps_theta, T: float):
    """Total residual phase error accumulated over one update interval.

    ``2 pi df T + 2 pi eps_f T + dtheta_f + dtheta + eps_theta``; works on
    scalars or per-node arrays.
    """
    return 2 * np.pi * T * (np.asarray(draw.df) + eps_f) + draw.dtheta_f + draw.dtheta + eps_theta


def deviation_from_mean_error(f, theta, T: float):
    """Per-node ``2 pi (f_n - mean f) T + wrap(theta_n - mean theta)``; nodes on the last axis."""
    f = np.asarray(f, dtype=float)
    theta = np.asarray(theta, dtype=float)
    return (2 * np.pi * T * (f - f.mean(axis=-1, keepdims=True))
            + wrap_phase(theta - theta.mean(axis=-1, keepdims=True)))


def convergence_iteration(series, rtol: float = 0.05, tail_fraction: float = 0.1) -> int | None:
    """First index after which every value stays within ``rtol`` of the tail mean.

    The tail is the final ``tail_fraction`` of the series (at least one
    point). Returns None when even the last value lies outside the band.
    """
    s = np.asarray(series, dtype=float)
    if s.size == 0:
        raise ValueError("empty series")
    n_tail = max(1, int(np.ceil(tail_fraction * s.size)))
    target = s[-n_tail:].mean()
    outside = np.flatnonzero(np.abs(s - target) > rtol * abs(target))
    if outside.size == 0:
        return 0
    k = int(outside[-1]) + 1
    return k if k < s.size else None
