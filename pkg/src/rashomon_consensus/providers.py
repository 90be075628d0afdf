"""Attribution providers for the three model families.

Each builder returns an :class:`AttributionProvider` whose functionals are
linear in the family's parameters: basis weights for additive models, dual
coefficients for kernel ridge, tree weights for forests.
"""
from __future__ import annotations

from typing import Sequence

import numpy as np

from . import additive, kernel
from .consensus import AttributionProvider, InstanceFunctionals
from .forest import FeatureGroups, ForestFamily, TreeModel, tree_shap


def format_value(v: float) -> str:
    return f"{float(v):.4g}"


def column_labels(names: Sequence[str], x: np.ndarray) -> tuple[str, ...]:
    return tuple(f"{n}={format_value(v)}" for n, v in zip(names, x))


def group_labels(groups: FeatureGroups, column_names: Sequence[str], x: np.ndarray) -> tuple[str, ...]:
    """Singleton groups read ``name=value``; one-hot groups name the active level."""
    out = []
    for name, members in zip(groups.names, groups.members):
        if len(members) == 1:
            out.append(f"{name}={format_value(x[members[0]])}")
            continue
        active = [c for c in members if x[c] == 1.0]
        if len(active) == 1 and "=" in column_names[active[0]]:
            out.append(column_names[active[0]])
        else:
            out.append(name)
    return tuple(out)


def additive_provider(fit: additive.AdditiveFit, data: np.ndarray, epsilon: float,
                      jitter: float = 0.0) -> AttributionProvider:
    """SHAP (equivalently expected gradients) of additive models, background = ``fit``'s background."""
    family = additive.rashomon(fit, data, epsilon, jitter)

    def functionals(x):
        A = additive.attribution_matrix(fit, x)
        return InstanceFunctionals(x, A.sum(axis=0), A, column_labels(fit.column_names, x))

    return AttributionProvider(family, functionals, fit.column_names, epsilon)


def kernel_provider(fit: kernel.KrrFit, baseline: np.ndarray, epsilon: float, steps: int = 1000,
                    jitter: float = 0.0) -> AttributionProvider:
    """Integrated gradients from ``baseline``; the gap is the exact ``h(x) - h(baseline)``."""
    family = kernel.rashomon_krr(fit, epsilon, jitter)
    z = np.asarray(baseline, dtype=np.float64).ravel()

    def functionals(x):
        ig = kernel.ig_path_matrix(fit, x, z, steps)
        return InstanceFunctionals(x, kernel.gap_vector(fit, x, z), ig.phi, column_labels(fit.column_names, x))

    return AttributionProvider(family, functionals, fit.column_names, epsilon)


def forest_functionals(trees: Sequence[TreeModel], x: np.ndarray, background: np.ndarray,
                       groups: FeatureGroups) -> tuple[np.ndarray, np.ndarray]:
    """Per-tree gaps (length M) and per-tree grouped SHAP values (groups x M)."""
    x = np.asarray(x, dtype=np.float64).ravel()
    B = np.atleast_2d(background)
    gaps = np.array([t.predict(x[None, :])[0] - t.predict(B).mean() for t in trees])
    attrs = np.column_stack([tree_shap(t, x, B, groups) for t in trees])
    return gaps, attrs


def forest_provider(family: ForestFamily, background: np.ndarray, groups: FeatureGroups,
                    column_names: Sequence[str], epsilon: float | None = None) -> AttributionProvider:
    background = np.atleast_2d(np.asarray(background, dtype=np.float64))

    def functionals(x):
        gaps, attrs = forest_functionals(family.trees, x, background, groups)
        return InstanceFunctionals(x, gaps, attrs, group_labels(groups, column_names, x))

    eps = family.epsilon if epsilon is None else epsilon
    return AttributionProvider(family, functionals, groups.names, eps)
