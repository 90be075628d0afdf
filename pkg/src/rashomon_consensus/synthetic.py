"""Seeded synthetic tasks used by the experiment scripts and the test suite."""
from __future__ import annotations

import numpy as np


def additive_task(n: int = 500, seed: int = 0, noise: float = 0.3) -> tuple[np.ndarray, np.ndarray]:
    """Four uniform inputs; the last one is a dummy the target ignores."""
    rng = np.random.default_rng(seed)
    X = rng.uniform(-1.0, 1.0, size=(n, 4))
    y = 2.0 * X[:, 0] + np.sin(np.pi * X[:, 1]) + X[:, 2] ** 2 + noise * rng.standard_normal(n)
    return X, y


def quadratic_task(n: int = 1000, seed: int = 0, noise: float = 0.9) -> tuple[np.ndarray, np.ndarray]:
    """``y = x^2 + noise * N(0, 1)`` with ``x ~ N(0, 1)``, one input column."""
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, 1))
    return x, x[:, 0] ** 2 + noise * rng.standard_normal(n)


def kernel_task(n: int = 20, d: int = 4, seed: int = 0, noise: float = 0.1) -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, d))
    y = np.sin(X[:, 0]) + 0.5 * X[:, 1] * X[:, 2] + noise * rng.standard_normal(n)
    return X, y
