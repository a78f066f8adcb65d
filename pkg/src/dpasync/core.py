"""2x2 linear algebra and moment/information form conversions.

Vectors are numpy arrays of shape ``(..., 2)`` and matrices of shape
``(..., 2, 2)``; every function broadcasts over leading axes so the same
code serves a single node and a whole array of nodes.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SINGULAR_DET = 1e-300


class SingularMatrixError(ValueError):
    pass


def det2(m: np.ndarray) -> np.ndarray:
    m = np.asarray(m, dtype=float)
    return m[..., 0, 0] * m[..., 1, 1] - m[..., 0, 1] * m[..., 1, 0]


def invert2(m: np.ndarray) -> np.ndarray:
    """Closed-form inverse (adjugate over determinant) of one or many 2x2 matrices."""
    m = np.asarray(m, dtype=float)
    d = det2(m)
    if np.any(~(np.abs(d) > SINGULAR_DET)):
        raise SingularMatrixError(f"2x2 matrix is singular (|det| <= {SINGULAR_DET:g})")
    out = np.empty_like(m)
    out[..., 0, 0] = m[..., 1, 1] / d
    out[..., 1, 1] = m[..., 0, 0] / d
    out[..., 0, 1] = -m[..., 0, 1] / d
    out[..., 1, 0] = -m[..., 1, 0] / d
    return out


def matvec(m: np.ndarray, v: np.ndarray) -> np.ndarray:
    return np.einsum("...ij,...j->...i", m, v)


def symmetrize(m: np.ndarray) -> np.ndarray:
    return 0.5 * (m + np.swapaxes(m, -1, -2))


def is_symmetric(m: np.ndarray) -> bool:
    m = np.asarray(m, dtype=float)
    off = m[..., 0, 1]
    return bool(np.all(np.abs(off - m[..., 1, 0]) <= 1e-12 * np.maximum(1.0, np.abs(off))))


def is_spd(m: np.ndarray, rtol: float = 0.0) -> bool:
    """True when every matrix is symmetric with eigenvalues above ``rtol * trace``."""
    m = np.asarray(m, dtype=float)
    if not np.all(np.isfinite(m)) or not is_symmetric(m):
        return False
    eig = np.linalg.eigvalsh(symmetrize(m))
    tr = m[..., 0, 0] + m[..., 1, 1]
    return bool(np.all(eig[..., 0] > rtol * np.abs(tr)))


@dataclass(frozen=True)
class InfoPair:
    """Gaussian in information form: ``omega`` = inverse covariance, ``mu`` = omega @ mean."""

    omega: np.ndarray
    mu: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "omega", np.asarray(self.omega, dtype=float))
        object.__setattr__(self, "mu", np.asarray(self.mu, dtype=float))

    def __add__(self, other: "InfoPair") -> "InfoPair":
        return InfoPair(self.omega + other.omega, self.mu + other.mu)


@dataclass(frozen=True)
class MomentPair:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mean", np.asarray(self.mean, dtype=float))
        object.__setattr__(self, "cov", np.asarray(self.cov, dtype=float))


def to_information(mp: MomentPair) -> InfoPair:
    omega = invert2(mp.cov)
    return InfoPair(omega, matvec(omega, mp.mean))


def from_information(ip: InfoPair) -> MomentPair:
    cov = invert2(ip.omega)
    return MomentPair(matvec(cov, ip.mu), cov)
