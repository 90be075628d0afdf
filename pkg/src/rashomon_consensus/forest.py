"""Random forests as a finite model family.

A pool of ``M`` seeded trees defines every forest that averages at least ``m``
of them. Any linear functional (a prediction, a gap, a SHAP value, a signed
difference of SHAP values) takes per-tree values ``v``; its minimum over all
such forests is the mean of the ``m`` smallest entries of ``v`` and its maximum
the mean of the ``m`` largest.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from numba import njit

from .errors import Infeasible

REGRESSION = "regression"
CLASSIFICATION = "classification"
THRESHOLD = 0.5
LEAF = -1


@dataclass(frozen=True)
class TreeModel:
    """Flat binary tree; ``feature[n] == -1`` marks a leaf.

    Internal nodes send ``x[feature] <= threshold`` to ``left``.
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    seed: int = 0

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        node = np.zeros(X.shape[0], dtype=np.int64)
        rows = np.arange(X.shape[0])
        active = self.feature[node] != LEAF
        while active.any():
            idx = rows[active]
            n = node[idx]
            go_left = X[idx, self.feature[n]] <= self.threshold[n]
            node[idx] = np.where(go_left, self.left[n], self.right[n])
            active[idx] = self.feature[node[idx]] != LEAF
        return self.value[node]

    def used_features(self) -> set[int]:
        return {int(f) for f in self.feature if f != LEAF}

    def depth(self) -> int:
        def walk(n):
            if self.feature[n] == LEAF:
                return 0
            return 1 + max(walk(self.left[n]), walk(self.right[n]))
        return walk(0)

    def to_dict(self) -> dict:
        nodes = []
        for n in range(self.n_nodes):
            if self.feature[n] == LEAF:
                nodes.append({"value": float(self.value[n])})
            else:
                nodes.append({"feature": int(self.feature[n]), "threshold": float(self.threshold[n]),
                              "left": int(self.left[n]), "right": int(self.right[n])})
        return {"seed": int(self.seed), "nodes": nodes}

    @classmethod
    def from_dict(cls, doc: dict) -> "TreeModel":
        nodes = doc["nodes"]
        n = len(nodes)
        if n == 0:
            raise ValueError("tree has no nodes")
        feature = np.full(n, LEAF, dtype=np.int64)
        threshold = np.zeros(n)
        left = np.full(n, LEAF, dtype=np.int64)
        right = np.full(n, LEAF, dtype=np.int64)
        value = np.zeros(n)
        for i, node in enumerate(nodes):
            if "value" in node and "feature" not in node:
                value[i] = float(node["value"])
            else:
                feature[i] = int(node["feature"])
                threshold[i] = float(node["threshold"])
                left[i], right[i] = int(node["left"]), int(node["right"])
        tree = cls(feature, threshold, left, right, value, int(doc.get("seed", 0)))
        _check_well_formed(tree)
        return tree


def _check_well_formed(tree: TreeModel) -> None:
    seen = np.zeros(tree.n_nodes, dtype=bool)
    stack = [0]
    while stack:
        n = stack.pop()
        if not 0 <= n < tree.n_nodes or seen[n]:
            raise ValueError(f"malformed tree: node {n} is out of range or reached twice")
        seen[n] = True
        if tree.feature[n] != LEAF:
            stack += [int(tree.left[n]), int(tree.right[n])]
    if not seen.all():
        raise ValueError("malformed tree: unreachable nodes")


@njit(cache=True)
def _grow(X, y, rows, n_candidates, max_depth, min_leaf, classification, seed):
    """Depth-first CART growth on ``rows`` (partitioned in place).

    Returns flat node arrays truncated to the number of nodes created.
    """
    np.random.seed(seed)
    d = X.shape[1]
    size = len(rows)
    cap = 2 * size + 1
    feature = np.full(cap, -1, dtype=np.int64)
    threshold = np.zeros(cap)
    left = np.full(cap, -1, dtype=np.int64)
    right = np.full(cap, -1, dtype=np.int64)
    value = np.zeros(cap)
    feats = np.arange(d)

    st_node = np.empty(cap, dtype=np.int64)
    st_lo = np.empty(cap, dtype=np.int64)
    st_hi = np.empty(cap, dtype=np.int64)
    st_depth = np.empty(cap, dtype=np.int64)
    st_node[0], st_lo[0], st_hi[0], st_depth[0] = 0, 0, size, 0
    top = 1
    n_nodes = 1
    xs = np.empty(size)
    while top > 0:
        top -= 1
        node, lo, hi, depth = st_node[top], st_lo[top], st_hi[top], st_depth[top]
        m = hi - lo
        total = 0.0
        for r in range(lo, hi):
            total += y[rows[r]]
        value[node] = total / m
        if m < 2 * min_leaf or (max_depth >= 0 and depth >= max_depth):
            continue
        constant = True
        y0 = y[rows[lo]]
        for r in range(lo + 1, hi):
            if y[rows[r]] != y0:
                constant = False
                break
        if constant:
            continue
        # partial Fisher-Yates draw of the candidate features
        for i in range(n_candidates):
            j = i + np.random.randint(0, d - i)
            tmp = feats[i]
            feats[i] = feats[j]
            feats[j] = tmp
        if classification:
            p = total / m
            parent = m * 2.0 * p * (1.0 - p)
        else:
            parent = total * total / m
        best_gain = 0.0
        best_f = -1
        best_thr = 0.0
        for c in range(n_candidates):
            f = feats[c]
            for r in range(m):
                xs[r] = X[rows[lo + r], f]
            order = np.argsort(xs[:m], kind="mergesort")
            cum = 0.0
            for k in range(1, m):
                cum += y[rows[lo + order[k - 1]]]
                a = xs[order[k - 1]]
                b = xs[order[k]]
                if not b > a or k < min_leaf or m - k < min_leaf:
                    continue
                sr = total - cum
                if classification:
                    pl = cum / k
                    pr = sr / (m - k)
                    gain = parent - (k * 2.0 * pl * (1.0 - pl) + (m - k) * 2.0 * pr * (1.0 - pr))
                else:
                    gain = cum * cum / k + sr * sr / (m - k) - parent
                if gain > best_gain:
                    best_gain = gain
                    best_f = f
                    best_thr = 0.5 * (a + b)
                    if best_thr >= b:  # adjacent floats
                        best_thr = a
        if best_f < 0:
            continue
        # stable in-place partition: left block keeps its order, right block keeps its order
        nl = 0
        for r in range(lo, hi):
            if X[rows[r], best_f] <= best_thr:
                nl += 1
        tmp_rows = rows[lo:hi].copy()
        i_l = lo
        i_r = lo + nl
        for r in range(m):
            row = tmp_rows[r]
            if X[row, best_f] <= best_thr:
                rows[i_l] = row
                i_l += 1
            else:
                rows[i_r] = row
                i_r += 1
        lchild = n_nodes
        rchild = n_nodes + 1
        n_nodes += 2
        feature[node] = best_f
        threshold[node] = best_thr
        left[node] = lchild
        right[node] = rchild
        st_node[top], st_lo[top], st_hi[top], st_depth[top] = rchild, lo + nl, hi, depth + 1
        top += 1
        st_node[top], st_lo[top], st_hi[top], st_depth[top] = lchild, lo, lo + nl, depth + 1
        top += 1
    return feature[:n_nodes], threshold[:n_nodes], left[:n_nodes], right[:n_nodes], value[:n_nodes]


def train_cart(X: np.ndarray, y: np.ndarray, seed: int, max_features: int | None = None,
               max_depth: int | None = None, min_samples_leaf: int = 1, task: str = REGRESSION,
               bootstrap: bool = True) -> TreeModel:
    """Greedy CART on a seeded bootstrap resample.

    Splits minimize squared error (regression) or Gini impurity (binary
    classification) over ``max_features`` randomly drawn columns per node.
    Leaves hold the mean target, which for 0/1 labels is the class-1 fraction.
    A node becomes a leaf when no candidate split strictly lowers the impurity.
    """
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.ascontiguousarray(np.ravel(y), dtype=np.float64)
    n, d = X.shape
    if n < 2:
        raise ValueError("need at least two rows")
    if task not in (REGRESSION, CLASSIFICATION):
        raise ValueError(f"unknown task {task!r}")
    rng = np.random.default_rng(seed)
    rows = rng.integers(0, n, n) if bootstrap else np.arange(n)
    k = d if max_features is None else max(1, min(d, int(max_features)))
    inner_seed = int(rng.integers(0, 2**31 - 1))
    arrays = _grow(X, y, rows.astype(np.int64), k, -1 if max_depth is None else int(max_depth),
                   max(1, int(min_samples_leaf)), task == CLASSIFICATION, inner_seed)
    return TreeModel(*(a.copy() for a in arrays), seed=int(seed))


@dataclass(frozen=True)
class FeatureGroups:
    """Partition of encoded columns into named players."""

    names: tuple[str, ...]
    members: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        if len(self.names) != len(self.members):
            raise ValueError("names and members differ in length")
        cols = [c for m in self.members for c in m]
        if any(len(m) == 0 for m in self.members):
            raise ValueError("empty feature group")
        if sorted(cols) != list(range(len(cols))):
            raise ValueError("feature groups must partition columns 0..n-1 exactly")

    @classmethod
    def singletons(cls, names: Sequence[str]) -> "FeatureGroups":
        return cls(tuple(names), tuple((j,) for j in range(len(names))))

    @property
    def n_groups(self) -> int:
        return len(self.names)

    @property
    def n_columns(self) -> int:
        return sum(len(m) for m in self.members)

    def column_to_group(self) -> np.ndarray:
        out = np.empty(self.n_columns, dtype=np.int64)
        for g, cols in enumerate(self.members):
            out[list(cols)] = g
        return out

    def to_dict(self) -> list[dict]:
        return [{"name": n, "columns": list(m)} for n, m in zip(self.names, self.members)]

    @classmethod
    def from_dict(cls, items: Sequence[dict]) -> "FeatureGroups":
        return cls(tuple(i["name"] for i in items), tuple(tuple(int(c) for c in i["columns"]) for i in items))


def tree_shap(tree: TreeModel, x: np.ndarray, background: np.ndarray, groups: FeatureGroups | None = None) -> np.ndarray:
    """Exact interventional Shapley values of one tree, with feature groups as players.

    For a background row ``z`` the value function is ``v(S) = t(r_S(z, x))``,
    where ``r_S`` takes the columns of groups in ``S`` from ``x`` and the rest
    from ``z``. Walking the tree, a split on group ``g`` where ``x`` and ``z``
    disagree forks into "g in S" (follow ``x``) and "g not in S" (follow
    ``z``). Each reached leaf therefore contributes ``value * 1[A <= S, S & B = {}]``
    for disjoint group sets ``A``, ``B``, whose Shapley values are closed form:
    ``value (|A|-1)! |B|! / (|A|+|B|)!`` for members of ``A`` and minus
    ``value |A|! (|B|-1)! / (|A|+|B|)!`` for members of ``B``.
    All background rows are walked together.
    """
    x = np.asarray(x, dtype=np.float64).ravel()
    Z = np.atleast_2d(np.asarray(background, dtype=np.float64))
    if Z.shape[0] == 0:
        raise ValueError("background must be nonempty")
    if groups is None:
        groups = FeatureGroups.singletons([f"x{j}" for j in range(x.size)])
    col_group = groups.column_to_group()
    phi = np.zeros(groups.n_groups)
    fact = [math.factorial(i) for i in range(groups.n_groups + 1)]

    # (node, background row indices, groups forced into S, groups forced out of S)
    stack = [(0, np.arange(Z.shape[0]), frozenset(), frozenset())]
    while stack:
        node, rows, inside, outside = stack.pop()
        f = tree.feature[node]
        if f == LEAF:
            v = tree.value[node] * len(rows)
            a, b = len(inside), len(outside)
            if a + b == 0 or v == 0.0:
                continue
            if a:
                share = v * fact[a - 1] * fact[b] / fact[a + b]
                for g in inside:
                    phi[g] += share
            if b:
                share = v * fact[a] * fact[b - 1] / fact[a + b]
                for g in outside:
                    phi[g] -= share
            continue
        g = int(col_group[f])
        thr = tree.threshold[node]
        x_child = tree.left[node] if x[f] <= thr else tree.right[node]
        if g in inside:
            stack.append((x_child, rows, inside, outside))
            continue
        z_left = Z[rows, f] <= thr
        if g in outside:
            if z_left.any():
                stack.append((tree.left[node], rows[z_left], inside, outside))
            if (~z_left).any():
                stack.append((tree.right[node], rows[~z_left], inside, outside))
            continue
        agree = z_left == (x[f] <= thr)
        if agree.any():
            stack.append((x_child, rows[agree], inside, outside))
        if not agree.all():
            other = rows[~agree]
            z_child = tree.right[node] if x_child == tree.left[node] else tree.left[node]
            stack.append((x_child, other, inside | {g}, outside))
            stack.append((z_child, other, inside, outside | {g}))
    return phi / Z.shape[0]


def forest_min_max(values: np.ndarray, m: int) -> tuple[np.ndarray, np.ndarray]:
    """Extremes of a linear functional over all averages of at least ``m`` trees.

    ``values`` holds per-tree values along axis 0 (shape ``(M,)`` or ``(M, k)``).
    """
    values = np.asarray(values, dtype=np.float64)
    M = values.shape[0]
    if not 1 <= m <= M:
        raise ValueError(f"m must lie in [1, {M}], got {m}")
    s = np.sort(values, axis=0)
    lo = s[:m].mean(axis=0)
    hi = s[M - m:].mean(axis=0)
    if values.ndim == 1:
        return float(lo), float(hi)
    return lo, hi


def _prefix_extremes(preds: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """``lo[m-1, i]`` / ``hi[m-1, i]``: mean of the m smallest / largest of ``preds[:, i]``."""
    s = np.sort(preds, axis=0)
    denom = np.arange(1, s.shape[0] + 1)[:, None]
    lo = np.cumsum(s, axis=0) / denom
    hi = np.cumsum(s[::-1], axis=0) / denom
    return lo, hi


def squared_loss(pred: np.ndarray, y: np.ndarray) -> np.ndarray:
    return (pred - y) ** 2


def zero_one_loss(pred: np.ndarray, y: np.ndarray) -> np.ndarray:
    """0-1 loss of a probability output at threshold 0.5; an output of exactly 0.5 is an error for both classes."""
    pred = np.asarray(pred, dtype=np.float64)
    return np.where(np.asarray(y) >= 0.5, pred <= THRESHOLD, pred >= THRESHOLD).astype(np.float64)


def epsilon_plus(tree_preds: np.ndarray, y: np.ndarray, loss: str = "squared") -> np.ndarray:
    """Worst-case mean loss over forests of at least ``m`` trees, for m = 1..M.

    ``tree_preds`` has shape (M, N). Entry ``m - 1`` of the result is
    ``mean_i max_{h in H_m:} loss(h(x_i), y_i)``.
    """
    tree_preds = np.atleast_2d(np.asarray(tree_preds, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64).ravel()
    lo, hi = _prefix_extremes(tree_preds)
    if loss == "squared":
        worst = np.maximum((lo - y) ** 2, (hi - y) ** 2)
    elif loss == "zero-one":
        worst = np.where(y >= 0.5, lo <= THRESHOLD, hi >= THRESHOLD).astype(np.float64)
    else:
        raise ValueError(f"unknown loss {loss!r}")
    return worst.mean(axis=1)


def choose_m(curve: np.ndarray, epsilon: float) -> int:
    """Smallest ``m`` with ``curve[m - 1] <= epsilon``."""
    curve = np.asarray(curve, dtype=np.float64)
    ok = np.flatnonzero(curve <= epsilon)
    if ok.size == 0:
        raise Infeasible(f"epsilon={epsilon!r} is below the full-forest loss {curve[-1]!r}")
    return int(ok[0]) + 1


@dataclass(frozen=True)
class ForestFamily:
    """All forests averaging at least ``m`` trees of the pool.

    Members are represented by tree-weight vectors (uniform weights on a subset),
    so a per-tree functional ``v`` evaluates to ``weights @ v``.
    """

    trees: tuple[TreeModel, ...]
    m: int
    task: str = REGRESSION
    min_loss: float = 0.0
    curve: np.ndarray | None = None

    def __post_init__(self):
        if len(self.trees) < 1:
            raise ValueError("need at least one tree")
        if not 1 <= self.m <= len(self.trees):
            raise ValueError(f"m must lie in [1, {len(self.trees)}], got {self.m}")

    @property
    def n_trees(self) -> int:
        return len(self.trees)

    dim = n_trees

    @property
    def center(self) -> np.ndarray:
        return np.full(self.n_trees, 1.0 / self.n_trees)

    def bounds(self, per_tree: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """``per_tree`` holds one functional per row, trees along the last axis."""
        per_tree = np.asarray(per_tree, dtype=np.float64)
        lo, hi = forest_min_max(per_tree.T, self.m)
        return np.asarray(lo), np.asarray(hi)

    def at_epsilon(self, epsilon: float) -> "ForestFamily":
        if self.curve is None:
            raise ValueError("family has no epsilon-plus curve; build it with with_curve()")
        return ForestFamily(self.trees, choose_m(self.curve, epsilon), self.task, self.min_loss, self.curve)

    def with_curve(self, curve: np.ndarray) -> "ForestFamily":
        curve = np.asarray(curve, dtype=np.float64)
        return ForestFamily(self.trees, self.m, self.task, float(curve[-1]), curve)

    @property
    def epsilon(self) -> float:
        return float(self.curve[self.m - 1]) if self.curve is not None else float("nan")

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """Uniform weight vectors of ``n`` random subsets with at least ``m`` trees."""
        M = self.n_trees
        out = np.zeros((n, M))
        for r in range(n):
            size = int(rng.integers(self.m, M + 1))
            out[r, rng.choice(M, size=size, replace=False)] = 1.0 / size
        return out

    def tree_predictions(self, X: np.ndarray) -> np.ndarray:
        return np.vstack([t.predict(X) for t in self.trees])

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.tree_predictions(X).mean(axis=0)


def train_forest(X: np.ndarray, y: np.ndarray, n_trees: int = 1000, seed: int = 0, task: str = REGRESSION,
                 max_features: int | None = None, max_depth: int | None = None,
                 min_samples_leaf: int = 1) -> list[TreeModel]:
    """``n_trees`` CART trees with seeds ``seed, seed+1, ...``."""
    if max_features is None and task == CLASSIFICATION:
        max_features = max(1, int(np.sqrt(np.asarray(X).shape[1])))
    return [train_cart(X, y, seed + s, max_features, max_depth, min_samples_leaf, task) for s in range(n_trees)]


def forest_to_dict(trees: Sequence[TreeModel], task: str, column_names: Sequence[str],
                   groups: FeatureGroups, **extra) -> dict:
    doc = {
        "family": "forest",
        "task": task,
        "column_names": list(column_names),
        "groups": groups.to_dict(),
        "trees": [t.to_dict() for t in trees],
    }
    doc.update(extra)
    return doc


def forest_from_dict(doc: dict) -> tuple[list[TreeModel], str, tuple[str, ...], FeatureGroups]:
    task = doc.get("task", REGRESSION)
    if task not in (REGRESSION, CLASSIFICATION):
        raise ValueError(f"unknown task {task!r}")
    trees = [TreeModel.from_dict(t) for t in doc["trees"]]
    if not trees:
        raise ValueError("forest has no trees")
    names = tuple(doc["column_names"])
    groups = FeatureGroups.from_dict(doc["groups"]) if doc.get("groups") else FeatureGroups.singletons(names)
    if groups.n_columns != len(names):
        raise ValueError("groups do not cover the declared columns")
    for t in trees:
        used = t.used_features()
        if used and max(used) >= len(names):
            raise ValueError(f"tree {t.seed} splits on column {max(used)} but only {len(names)} columns are declared")
    return trees, task, names, groups


def forest_to_json(trees, task, column_names, groups, **extra) -> str:
    return json.dumps(forest_to_dict(trees, task, column_names, groups, **extra), indent=2)
