"""Kernel ridge regression over a fixed dictionary, and its Rashomon ellipsoid.

Models are ``h_a(x) = sum_j a_j k(x, r_j)`` for dictionary points ``r_j``. The
regularized loss ``mean((K a - y)^2) + lam * a^T K a`` is quadratic in ``a``,
so the set of coefficient vectors within ``epsilon`` of it is an ellipsoid with
shape ``(K/R + lam I) K``. Integrated gradients from a baseline ``z`` are linear
in ``a`` as well; ``ig_path_matrix`` precomputes the path integrals.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from .errors import EmptyRashomon
from .linalg import EllipsoidFamily, solve_spd


@dataclass(frozen=True)
class Gaussian:
    gamma: float

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError(f"gamma must be positive, got {self.gamma}")

    def to_dict(self):
        return {"kind": "gaussian", "gamma": self.gamma}


@dataclass(frozen=True)
class Polynomial:
    gamma: float
    degree: int = 3

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError(f"gamma must be positive, got {self.gamma}")
        if self.degree < 1:
            raise ValueError(f"degree must be >= 1, got {self.degree}")

    def to_dict(self):
        return {"kind": "polynomial", "gamma": self.gamma, "degree": self.degree}


KernelSpec = Union[Gaussian, Polynomial]


def spec_from_dict(doc: dict) -> KernelSpec:
    if doc["kind"] == "gaussian":
        return Gaussian(float(doc["gamma"]))
    if doc["kind"] == "polynomial":
        return Polynomial(float(doc["gamma"]), int(doc["degree"]))
    raise ValueError(f"unknown kernel kind {doc['kind']!r}")


def kernel_matrix(spec: KernelSpec, X: np.ndarray, Y: np.ndarray) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    Y = np.atleast_2d(np.asarray(Y, dtype=np.float64))
    if isinstance(spec, Gaussian):
        sq = (X ** 2).sum(1)[:, None] + (Y ** 2).sum(1)[None, :] - 2.0 * X @ Y.T
        return np.exp(-spec.gamma * np.maximum(sq, 0.0))
    return (spec.gamma * X @ Y.T + 1.0) ** spec.degree


def kernel_eval(spec: KernelSpec, x: np.ndarray, x2: np.ndarray) -> float:
    x = np.asarray(x, dtype=np.float64)
    x2 = np.asarray(x2, dtype=np.float64)
    if isinstance(spec, Gaussian):
        return float(np.exp(-spec.gamma * np.sum((x - x2) ** 2)))
    return float((spec.gamma * np.dot(x, x2) + 1.0) ** spec.degree)


def kernel_gradients(spec: KernelSpec, X: np.ndarray, R: np.ndarray) -> np.ndarray:
    """``G[n, j, i] = d k(x, r_j) / d x_i`` at ``x = X[n]``; shape (n, R, d)."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    R = np.atleast_2d(np.asarray(R, dtype=np.float64))
    if isinstance(spec, Gaussian):
        k = kernel_matrix(spec, X, R)
        diff = X[:, None, :] - R[None, :, :]
        return -2.0 * spec.gamma * k[:, :, None] * diff
    p = spec.degree
    base = spec.gamma * X @ R.T + 1.0
    outer = p * spec.gamma * base ** (p - 1)
    return outer[:, :, None] * R[None, :, :]


def kernel_grad(spec: KernelSpec, x: np.ndarray, x2: np.ndarray, i: int) -> float:
    return float(kernel_gradients(spec, x, x2)[0, 0, i])


@dataclass(frozen=True)
class KrrFit:
    spec: KernelSpec
    dictionary: np.ndarray
    targets: np.ndarray
    alpha: np.ndarray
    lam: float
    reg_loss: float
    column_names: tuple[str, ...] = ()

    @property
    def n_features(self) -> int:
        return self.dictionary.shape[1]

    def gram(self) -> np.ndarray:
        return kernel_matrix(self.spec, self.dictionary, self.dictionary)

    def predict(self, X: np.ndarray, alpha: np.ndarray | None = None) -> np.ndarray:
        a = self.alpha if alpha is None else alpha
        return kernel_matrix(self.spec, X, self.dictionary) @ np.asarray(a).T

    def to_dict(self) -> dict:
        return {
            "family": "kernel",
            "spec": self.spec.to_dict(),
            "lambda": self.lam,
            "dictionary": self.dictionary.tolist(),
            "targets": self.targets.tolist(),
            "alpha": self.alpha.tolist(),
            "reg_loss": self.reg_loss,
            "column_names": list(self.column_names),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, doc: dict) -> "KrrFit":
        return cls(
            spec=spec_from_dict(doc["spec"]),
            dictionary=np.asarray(doc["dictionary"], dtype=np.float64),
            targets=np.asarray(doc["targets"], dtype=np.float64),
            alpha=np.asarray(doc["alpha"], dtype=np.float64),
            lam=float(doc["lambda"]),
            reg_loss=float(doc["reg_loss"]),
            column_names=tuple(doc.get("column_names", ())),
        )


def regularized_loss(K: np.ndarray, y: np.ndarray, lam: float, alpha: np.ndarray) -> np.ndarray:
    """``mean((K a - y)^2) + lam a^T K a`` for one ``a`` or for each row of a matrix."""
    alpha = np.asarray(alpha, dtype=np.float64)
    Ka = alpha @ K  # K is symmetric
    resid = Ka - y
    return np.mean(resid ** 2, axis=-1) + lam * np.sum(Ka * alpha, axis=-1)


def fit_krr(dictionary: np.ndarray, y: np.ndarray, spec: KernelSpec, lam: float,
            column_names: Sequence[str] = ()) -> KrrFit:
    """Solve ``(K + lam R I) a = y`` over the dictionary points."""
    if not lam > 0:
        raise ValueError(f"lambda must be positive, got {lam}")
    D = np.atleast_2d(np.asarray(dictionary, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64).ravel()
    R = D.shape[0]
    K = kernel_matrix(spec, D, D)
    K = 0.5 * (K + K.T)
    alpha = solve_spd(K + lam * R * np.eye(R), y)
    return KrrFit(spec, D, y, alpha, float(lam), float(regularized_loss(K, y, lam, alpha)),
                  tuple(column_names) or tuple(f"x{j}" for j in range(D.shape[1])))


def rashomon_krr(fit: KrrFit, epsilon: float, jitter: float = 0.0) -> EllipsoidFamily:
    if epsilon < fit.reg_loss:
        raise EmptyRashomon(f"epsilon={epsilon!r} is below the regularized least-squares loss {fit.reg_loss!r}")
    K = fit.gram()
    R = K.shape[0]
    shape = (K / R + fit.lam * np.eye(R)) @ K
    shape = 0.5 * (shape + shape.T)
    if jitter:
        shape = shape + jitter * np.eye(R)
    return EllipsoidFamily(fit.alpha, shape, epsilon - fit.reg_loss, fit.reg_loss)


@dataclass(frozen=True)
class IgPathMatrix:
    """``phi[i] @ alpha`` is the integrated gradient of feature ``i`` from ``z`` to ``x``."""

    phi: np.ndarray
    x: np.ndarray
    z: np.ndarray
    steps: int

    def attributions(self, alpha: np.ndarray) -> np.ndarray:
        return self.phi @ np.asarray(alpha).T


def trapezoid_nodes(steps: int) -> tuple[np.ndarray, np.ndarray]:
    t = np.arange(steps + 1) / steps
    w = np.full(steps + 1, 1.0 / steps)
    w[0] = w[-1] = 0.5 / steps
    return t, w


def ig_path_matrix(fit: KrrFit, x: np.ndarray, z: np.ndarray, steps: int = 1000,
                   chunk: int = 64) -> IgPathMatrix:
    """Composite-trapezoid integrals of the kernel gradients along ``z -> x``."""
    if steps < 1:
        raise ValueError("steps must be >= 1")
    x = np.asarray(x, dtype=np.float64).ravel()
    z = np.asarray(z, dtype=np.float64).ravel()
    delta = x - z
    t, w = trapezoid_nodes(steps)
    acc = np.zeros((fit.dictionary.shape[0], x.size))
    for start in range(0, t.size, chunk):
        tc = t[start:start + chunk]
        points = z[None, :] + tc[:, None] * delta[None, :]
        acc += np.einsum("n,nji->ji", w[start:start + chunk], kernel_gradients(fit.spec, points, fit.dictionary))
    return IgPathMatrix(delta[:, None] * acc.T, x, z, steps)


def gap_vector(fit: KrrFit, x: np.ndarray, z: np.ndarray) -> np.ndarray:
    """Coefficients ``g`` with ``g @ alpha = h_alpha(x) - h_alpha(z)``."""
    k = kernel_matrix(fit.spec, np.vstack([x, z]), fit.dictionary)
    return k[0] - k[1]


def gap_error(fit: KrrFit, ig: IgPathMatrix, alpha: np.ndarray | None = None) -> float:
    a = fit.alpha if alpha is None else np.asarray(alpha, dtype=np.float64)
    total = ig.attributions(a).sum()
    return float(abs(total - gap_vector(fit, ig.x, ig.z) @ a))


def kfold_grid_search(X: np.ndarray, y: np.ndarray, specs: Sequence[KernelSpec], lambdas: Sequence[float],
                      folds: int = 5, seed: int = 0) -> list[tuple[KernelSpec, float, float]]:
    """Mean held-out MSE for every (kernel, lambda) pair over seeded k-fold splits."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    order = np.random.default_rng(seed).permutation(len(y))
    splits = np.array_split(order, folds)
    rows = []
    for spec in specs:
        for lam in lambdas:
            losses = []
            for k in range(folds):
                test = splits[k]
                train = np.concatenate([splits[i] for i in range(folds) if i != k])
                model = fit_krr(X[train], y[train], spec, lam)
                losses.append(np.mean((model.predict(X[test]) - y[test]) ** 2))
            rows.append((spec, float(lam), float(np.mean(losses))))
    return rows
