"""Dense SPD linear algebra and linear optimization over ellipsoids.

An ellipsoidal Rashomon set is ``{w : (w - c)^T A (w - c) <= r}``. The extreme
values of a linear functional ``a^T w`` over it are

    a^T c +/- sqrt(r) * ||L^{-1} a||,    A = L L^T,

so every query reduces to one triangular solve against the Cholesky factor.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import lapack, solve_triangular

from .errors import EmptyRashomon, NotPositiveDefinite

SYMMETRY_RTOL = 1e-10
# a squared pivot this small relative to its diagonal entry is rounding noise
PIVOT_RTOL = 16 * np.finfo(np.float64).eps


def check_symmetric(m: np.ndarray) -> np.ndarray:
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {m.shape}")
    scale = max(np.abs(m).max(initial=0.0), 1.0)
    if np.abs(m - m.T).max(initial=0.0) > SYMMETRY_RTOL * scale:
        raise ValueError("matrix is not symmetric")
    return m


def cholesky(m: np.ndarray) -> np.ndarray:
    """Lower-triangular ``L`` with ``L @ L.T == m``.

    Raises:
        NotPositiveDefinite: with the (0-based) index of the first pivot that
            is not strictly positive. Pivots within rounding error of zero
            (squared pivot below ``n * PIVOT_RTOL`` times the diagonal entry)
            count as zero, so exactly collinear inputs fail reliably.
    """
    m = check_symmetric(m)
    if m.shape[0] == 0:
        return m.copy()
    factor, info = lapack.dpotrf(m, lower=1, clean=1, overwrite_a=0)
    if info > 0:
        raise NotPositiveDefinite(info - 1)
    if info < 0:  # pragma: no cover - argument error inside LAPACK
        raise ValueError(f"dpotrf argument {-info} invalid")
    tiny = np.flatnonzero(np.diag(factor) ** 2 <= m.shape[0] * PIVOT_RTOL * np.diag(m))
    if tiny.size:
        raise NotPositiveDefinite(int(tiny[0]), f"matrix is numerically singular (pivot {tiny[0]} vanishes)")
    return factor


def solve_spd(m: np.ndarray, rhs: np.ndarray, factor: np.ndarray | None = None) -> np.ndarray:
    """Solve ``m x = rhs`` for SPD ``m`` through two triangular solves."""
    L = cholesky(m) if factor is None else factor
    tmp = solve_triangular(L, rhs, lower=True, check_finite=False)
    return solve_triangular(L.T, tmp, lower=False, check_finite=False)


@dataclass(frozen=True)
class EllipsoidFamily:
    """Models ``w`` with ``(w - center)^T shape (w - center) <= radius_sq``.

    ``min_loss`` is the loss at ``center``; the set holds every model whose
    loss is at most ``min_loss + radius_sq``.
    """

    center: np.ndarray
    shape: np.ndarray
    radius_sq: float
    min_loss: float = 0.0
    factor: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        center = np.asarray(self.center, dtype=np.float64).ravel()
        shape = check_symmetric(self.shape)
        if shape.shape[0] != center.size:
            raise ValueError(f"shape is {shape.shape} but center has length {center.size}")
        if not self.radius_sq >= 0:
            raise ValueError(f"radius_sq must be >= 0, got {self.radius_sq}")
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "shape", shape)
        object.__setattr__(self, "radius_sq", float(self.radius_sq))
        object.__setattr__(self, "factor", cholesky(shape))

    @property
    def dim(self) -> int:
        return self.center.size

    @property
    def epsilon(self) -> float:
        return self.min_loss + self.radius_sq

    def at_epsilon(self, epsilon: float) -> "EllipsoidFamily":
        if epsilon < self.min_loss:
            raise EmptyRashomon(f"epsilon={epsilon!r} is below the minimum loss {self.min_loss!r}")
        fam = object.__new__(EllipsoidFamily)
        for name, value in (("center", self.center), ("shape", self.shape),
                            ("radius_sq", float(epsilon - self.min_loss)),
                            ("min_loss", self.min_loss), ("factor", self.factor)):
            object.__setattr__(fam, name, value)
        return fam

    def whiten(self, a: np.ndarray) -> np.ndarray:
        """``L^{-1} a`` for a vector or for each row of a matrix."""
        a = np.asarray(a, dtype=np.float64)
        if a.shape[-1] != self.dim:
            raise ValueError(f"functional has length {a.shape[-1]}, family dimension is {self.dim}")
        if a.ndim == 1:
            return solve_triangular(self.factor, a, lower=True, check_finite=False)
        return solve_triangular(self.factor, a.T, lower=True, check_finite=False).T

    def bounds(self, a: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Min and max of ``a^T w`` over the set; ``a`` may hold one functional per row."""
        a = np.asarray(a, dtype=np.float64)
        mid = a @ self.center
        half = np.sqrt(self.radius_sq) * np.linalg.norm(self.whiten(a), axis=-1)
        return mid - half, mid + half

    def sample(self, n: int, rng: np.random.Generator, boundary: bool = False) -> np.ndarray:
        """``n`` models drawn uniformly inside the ellipsoid (or on its surface)."""
        z = rng.standard_normal((n, self.dim))
        z /= np.linalg.norm(z, axis=1, keepdims=True)
        if not boundary:
            z *= rng.random((n, 1)) ** (1.0 / self.dim)
        # w = c + sqrt(r) L^{-T} z  maps the unit ball onto the ellipsoid
        offsets = solve_triangular(self.factor.T, z.T, lower=False, check_finite=False).T
        return self.center + np.sqrt(self.radius_sq) * offsets

    def contains(self, w: np.ndarray, rtol: float = 1e-9) -> np.ndarray:
        diff = np.atleast_2d(w) - self.center
        q = np.einsum("ij,jk,ik->i", diff, self.shape, diff)
        return q <= self.radius_sq * (1 + rtol) + rtol


def linear_range(fam: EllipsoidFamily, a: np.ndarray) -> tuple[float, float]:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 1:
        raise ValueError("linear_range takes a single functional; use EllipsoidFamily.bounds for batches")
    lo, hi = fam.bounds(a)
    return float(lo), float(hi)
