"""Parametric additive regression on per-feature B-spline or linear bases.

The model is ``h_w(x) = w_0 + sum_j sum_k w_jk h_jk(x_j)`` fitted by least
squares. Its squared-loss Rashomon set is an ellipsoid around the least-squares
weights with shape ``H^T H / N``, and both SHAP and expected gradients (with the
training set as background) reduce to the same linear functional of ``w``:

    phi_j(h_w, x) = sum_k w_jk (h_jk(x_j) - mean_i h_jk(x_j^(i))).
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np
from scipy.interpolate import BSpline

from .errors import DegenerateColumn, EmptyRashomon
from .linalg import EllipsoidFamily, solve_spd


@dataclass(frozen=True)
class Linear:
    kind: str = field(default="linear", init=False)


@dataclass(frozen=True)
class Spline:
    degree: int = 2
    n_knots: int = 4
    kind: str = field(default="spline", init=False)

    def __post_init__(self):
        if self.degree not in (1, 2, 3):
            raise ValueError(f"spline degree must be 1, 2 or 3, got {self.degree}")
        if self.n_knots < 2:
            raise ValueError(f"n_knots must be >= 2, got {self.n_knots}")


BasisEntry = Union[Linear, Spline]


@dataclass(frozen=True)
class BasisSpec:
    """One basis entry per input column, in column order."""

    features: tuple[BasisEntry, ...]

    @classmethod
    def all_linear(cls, d: int) -> "BasisSpec":
        return cls(tuple(Linear() for _ in range(d)))

    @classmethod
    def splines(cls, d: int, spline_columns: Sequence[int], degree: int = 2, n_knots: int = 4) -> "BasisSpec":
        chosen = set(spline_columns)
        return cls(tuple(Spline(degree, n_knots) if j in chosen else Linear() for j in range(d)))

    def __len__(self):
        return len(self.features)

    def to_dict(self) -> list[dict]:
        out = []
        for entry in self.features:
            if isinstance(entry, Spline):
                out.append({"kind": "spline", "degree": entry.degree, "n_knots": entry.n_knots})
            else:
                out.append({"kind": "linear"})
        return out

    @classmethod
    def from_dict(cls, items: Sequence[dict]) -> "BasisSpec":
        entries: list[BasisEntry] = []
        for item in items:
            if item["kind"] == "spline":
                entries.append(Spline(int(item["degree"]), int(item["n_knots"])))
            elif item["kind"] == "linear":
                entries.append(Linear())
            else:
                raise ValueError(f"unknown basis kind {item['kind']!r}")
        return cls(tuple(entries))


class FeatureBasis:
    """Evaluable basis functions for one input column.

    ``evaluate`` returns every basis function; ``design`` drops the last
    B-spline, which the intercept makes redundant (B-splines sum to one).
    """

    def __init__(self, entry: BasisEntry, knots: np.ndarray | None = None):
        self.entry = entry
        self.knots = None if knots is None else np.asarray(knots, dtype=np.float64)
        if isinstance(entry, Spline):
            k = entry.degree
            t = np.concatenate([np.repeat(self.knots[0], k), self.knots, np.repeat(self.knots[-1], k)])
            self._n_full = len(t) - k - 1
            # one BSpline whose coefficient matrix is the identity yields all bases at once;
            # extrapolate=True continues the boundary polynomial pieces outside the knots
            self._spline = BSpline(t, np.eye(self._n_full), k, extrapolate=True)
        else:
            self._n_full = 1

    @property
    def n_full(self) -> int:
        return self._n_full

    @property
    def n_design(self) -> int:
        return self._n_full - 1 if isinstance(self.entry, Spline) else 1

    def evaluate(self, column: np.ndarray) -> np.ndarray:
        column = np.asarray(column, dtype=np.float64).ravel()
        if isinstance(self.entry, Spline):
            return self._spline(column)
        return column[:, None].copy()

    def design(self, column: np.ndarray) -> np.ndarray:
        full = self.evaluate(column)
        return full[:, :-1] if isinstance(self.entry, Spline) else full


def place_knots(column: np.ndarray, n_knots: int) -> np.ndarray:
    """Knots at equally spaced quantiles; the ends land on the column min and max."""
    column = np.asarray(column, dtype=np.float64)
    lo, hi = column.min(), column.max()
    if lo == hi:
        raise DegenerateColumn("spline feature is constant")
    knots = np.quantile(column, np.linspace(0.0, 1.0, n_knots))
    knots[0], knots[-1] = lo, hi
    if np.any(np.diff(knots) <= 0):
        raise DegenerateColumn(f"quantile knots collide; the column has too few distinct values for {n_knots} knots")
    return knots


def build_bases(data: np.ndarray, spec: BasisSpec) -> list[FeatureBasis]:
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 2 or data.shape[0] < 2:
        raise ValueError("need a 2-d data matrix with at least two rows")
    if data.shape[1] != len(spec):
        raise ValueError(f"spec has {len(spec)} entries but data has {data.shape[1]} columns")
    bases = []
    for j, entry in enumerate(spec.features):
        if isinstance(entry, Spline):
            try:
                knots = place_knots(data[:, j], entry.n_knots)
            except DegenerateColumn as exc:
                raise DegenerateColumn(f"column {j}: {exc}") from None
            bases.append(FeatureBasis(entry, knots))
        else:
            bases.append(FeatureBasis(entry))
    return bases


def _design_matrix(bases: Sequence[FeatureBasis], data: np.ndarray) -> np.ndarray:
    data = np.atleast_2d(np.asarray(data, dtype=np.float64))
    blocks = [np.ones((data.shape[0], 1))]
    blocks += [b.design(data[:, j]) for j, b in enumerate(bases)]
    return np.hstack(blocks)


@dataclass(frozen=True)
class AdditiveFit:
    spec: BasisSpec
    knots: tuple[np.ndarray | None, ...]
    weights: np.ndarray
    train_loss: float
    background_means: np.ndarray
    column_names: tuple[str, ...]
    bases: tuple[FeatureBasis, ...] = field(repr=False, compare=False, default=())

    def __post_init__(self):
        if not self.bases:
            object.__setattr__(self, "bases", tuple(FeatureBasis(e, k) for e, k in zip(self.spec.features, self.knots)))
        width = 1 + sum(b.n_design for b in self.bases)
        if len(self.weights) != width:
            raise ValueError(f"weights have length {len(self.weights)}, design matrix width is {width}")

    @property
    def n_features(self) -> int:
        return len(self.spec)

    def slots(self, j: int) -> slice:
        """Positions of feature ``j``'s weights inside the weight vector."""
        start = 1 + sum(b.n_design for b in self.bases[:j])
        return slice(start, start + self.bases[j].n_design)

    def design_matrix(self, data: np.ndarray) -> np.ndarray:
        return _design_matrix(self.bases, data)

    def predict(self, data: np.ndarray, weights: np.ndarray | None = None) -> np.ndarray:
        w = self.weights if weights is None else weights
        return self.design_matrix(data) @ np.asarray(w).T

    def with_background(self, background: np.ndarray) -> "AdditiveFit":
        """Same model, gaps and attributions measured against another background sample."""
        means = self.design_matrix(background).mean(axis=0)
        means[0] = 0.0
        return AdditiveFit(self.spec, self.knots, self.weights, self.train_loss, means,
                           self.column_names, self.bases)

    def to_dict(self) -> dict:
        return {
            "family": "additive",
            "spec": self.spec.to_dict(),
            "knots": [None if k is None else k.tolist() for k in self.knots],
            "weights": self.weights.tolist(),
            "train_loss": self.train_loss,
            "background_means": self.background_means.tolist(),
            "column_names": list(self.column_names),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, doc: dict) -> "AdditiveFit":
        return cls(
            spec=BasisSpec.from_dict(doc["spec"]),
            knots=tuple(None if k is None else np.asarray(k, dtype=np.float64) for k in doc["knots"]),
            weights=np.asarray(doc["weights"], dtype=np.float64),
            train_loss=float(doc["train_loss"]),
            background_means=np.asarray(doc["background_means"], dtype=np.float64),
            column_names=tuple(doc["column_names"]),
        )


def fit(data: np.ndarray, y: np.ndarray, spec: BasisSpec, column_names: Sequence[str] | None = None) -> AdditiveFit:
    """Least-squares fit through the normal equations ``(H^T H) w = H^T y``.

    Raises NotPositiveDefinite when the basis columns are collinear.
    """
    data = np.asarray(data, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).ravel()
    bases = build_bases(data, spec)
    H = _design_matrix(bases, data)
    weights = solve_spd(H.T @ H, H.T @ y)
    resid = H @ weights - y
    means = H.mean(axis=0)
    means[0] = 0.0  # the intercept cancels in every attribution
    if column_names is None:
        column_names = [f"x{j}" for j in range(data.shape[1])]
    return AdditiveFit(
        spec=spec,
        knots=tuple(b.knots for b in bases),
        weights=weights,
        train_loss=float(np.mean(resid ** 2)),
        background_means=means,
        column_names=tuple(column_names),
        bases=tuple(bases),
    )


def empirical_loss(fit: AdditiveFit, data: np.ndarray, y: np.ndarray, weights: np.ndarray | None = None) -> np.ndarray:
    preds = fit.predict(data, weights)
    y = np.asarray(y, dtype=np.float64)
    if preds.ndim == 2:
        return np.mean((preds - y[:, None]) ** 2, axis=0)
    return np.mean((preds - y) ** 2)


def rashomon(fit: AdditiveFit, data: np.ndarray, epsilon: float, jitter: float = 0.0) -> EllipsoidFamily:
    """Ellipsoid of weights whose training MSE is at most ``epsilon``.

    ``jitter`` adds a ridge to the shape matrix; it changes the set, so it is off by default.
    """
    if epsilon < fit.train_loss:
        raise EmptyRashomon(f"epsilon={epsilon!r} is below the least-squares loss {fit.train_loss!r}")
    H = fit.design_matrix(data)
    shape = H.T @ H / H.shape[0]
    if jitter:
        shape = shape + jitter * np.eye(shape.shape[0])
    return EllipsoidFamily(fit.weights, shape, epsilon - fit.train_loss, fit.train_loss)


def attribution_coeffs(fit: AdditiveFit, x: np.ndarray, j: int) -> np.ndarray:
    if not 0 <= j < fit.n_features:
        raise IndexError(f"feature {j} out of range for {fit.n_features} features")
    x = np.asarray(x, dtype=np.float64).ravel()
    a = np.zeros_like(fit.weights)
    sl = fit.slots(j)
    a[sl] = fit.bases[j].design(x[j:j + 1])[0] - fit.background_means[sl]
    return a


def attribution_matrix(fit: AdditiveFit, x: np.ndarray) -> np.ndarray:
    """Rows are ``attribution_coeffs(fit, x, j)`` for every feature ``j``."""
    return np.vstack([attribution_coeffs(fit, x, j) for j in range(fit.n_features)])


def gap_coeffs(fit: AdditiveFit, x: np.ndarray) -> np.ndarray:
    return attribution_matrix(fit, x).sum(axis=0)
