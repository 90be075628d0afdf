"""Statements every model of a family agrees on, and the partial orders they form.

A family only has to answer one question: the minimum and maximum of a linear
functional of its parameters. Gaps and per-feature attributions at an input are
such functionals, and so are signed differences ``s_i phi_i - s_j phi_j``, which
is what the relative-importance test optimizes.
"""
from __future__ import annotations

import csv
import enum
import io
import json
from dataclasses import dataclass
from typing import Callable, Iterable, Protocol, Sequence

import numpy as np
from scipy.stats import rankdata

from .errors import SignNotEstablished, TransitivityViolation

TRANSITIVITY_TOL = 1e-9


class Sign(enum.IntEnum):
    NEGATIVE = -1
    NONE = 0
    POSITIVE = 1

    @property
    def symbol(self) -> str:
        return {1: "+", -1: "-", 0: "?"}[int(self)]


class Family(Protocol):
    min_loss: float

    def bounds(self, functionals: np.ndarray) -> tuple[np.ndarray, np.ndarray]: ...

    def at_epsilon(self, epsilon: float) -> "Family": ...

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray: ...


@dataclass(frozen=True)
class InstanceFunctionals:
    """Gap and attribution functionals at one input, in the family's parameter space."""

    x: np.ndarray
    gap: np.ndarray
    attributions: np.ndarray
    labels: tuple[str, ...]


class AttributionProvider:
    """Pairs a model family with the attribution functionals of its members.

    ``functionals`` maps an input to its :class:`InstanceFunctionals`.
    """

    def __init__(self, family: Family, functionals: Callable[[np.ndarray], InstanceFunctionals],
                 feature_names: Sequence[str], epsilon: float):
        self.family = family
        self._functionals = functionals
        self.feature_names = tuple(feature_names)
        self.epsilon = float(epsilon)
        self._cache: dict[bytes, InstanceFunctionals] = {}

    @property
    def n_features(self) -> int:
        return len(self.feature_names)

    def functionals(self, x: np.ndarray) -> InstanceFunctionals:
        x = np.asarray(x, dtype=np.float64)
        key = x.tobytes()
        if key not in self._cache:
            self._cache[key] = self._functionals(x)
        return self._cache[key]

    def at_epsilon(self, epsilon: float) -> "AttributionProvider":
        other = AttributionProvider(self.family.at_epsilon(epsilon), self._functionals, self.feature_names, epsilon)
        other._cache = self._cache
        return other

    def gap_range(self, x) -> tuple[float, float]:
        lo, hi = self.family.bounds(self.functionals(x).gap[None, :])
        return float(lo[0]), float(hi[0])

    def attr_range(self, x, i: int) -> tuple[float, float]:
        lo, hi = self.family.bounds(self.functionals(x).attributions[i:i + 1])
        return float(lo[0]), float(hi[0])

    def attr_ranges(self, x) -> tuple[np.ndarray, np.ndarray]:
        return self.family.bounds(self.functionals(x).attributions)

    def diff_sup(self, x, i: int, j: int, s_i: int, s_j: int) -> float:
        A = self.functionals(x).attributions
        _, hi = self.family.bounds((s_i * A[i] - s_j * A[j])[None, :])
        return float(hi[0])

    def center_attributions(self, x) -> np.ndarray:
        """Attributions of the family's reference model (least squares, or the full forest)."""
        return self.functionals(x).attributions @ self.family.center


def sign_of(lo: float, hi: float, margin: float = 0.0) -> Sign:
    if lo > margin:
        return Sign.POSITIVE
    if hi < -margin:
        return Sign.NEGATIVE
    return Sign.NONE


def sign_gap(provider: AttributionProvider, x, margin: float = 0.0) -> Sign:
    return sign_of(*provider.gap_range(x), margin)


def sg_set(provider: AttributionProvider, X: np.ndarray, margin: float = 0.0) -> list[int]:
    return [n for n, x in enumerate(np.atleast_2d(X)) if sign_gap(provider, x, margin) != Sign.NONE]


def sign_attr(provider: AttributionProvider, x, i: int, margin: float = 0.0) -> Sign:
    return sign_of(*provider.attr_range(x, i), margin)


def sa_set(provider: AttributionProvider, x, margin: float = 0.0) -> dict[int, Sign]:
    """Features whose attribution sign is shared by every model, with that sign."""
    lo, hi = provider.attr_ranges(x)
    out = {}
    for i in range(len(lo)):
        s = sign_of(lo[i], hi[i], margin)
        if s != Sign.NONE:
            out[i] = s
    return out


def less_important(provider: AttributionProvider, x, i: int, j: int, s_i: int, s_j: int,
                   margin: float = 0.0) -> bool:
    """Whether every model has ``|phi_i| <= |phi_j|`` at ``x``."""
    sa = sa_set(provider, x, margin)
    for k, s in ((i, s_i), (j, s_j)):
        if sa.get(k) != s:
            raise SignNotEstablished(f"feature {k} has no consensus sign {s:+d} at this input")
    if i == j:
        return True
    return provider.diff_sup(x, i, j, s_i, s_j) <= -margin


@dataclass(frozen=True)
class PartialOrder:
    """Consensus importance order over the sign-consensus features of one input.

    ``nodes`` are groups of feature indices (more than one only when two
    features are equally important for every model). An edge ``(u, v)`` means
    node ``u`` is more important than node ``v``; ``edges`` is transitively
    closed, ``hasse()`` gives its transitive reduction.
    """

    nodes: tuple[tuple[int, ...], ...]
    signs: tuple[Sign, ...]
    labels: tuple[str, ...]
    edges: frozenset[tuple[int, int]]
    instance: int | None = None
    epsilon: float | None = None

    def hasse(self) -> set[tuple[int, int]]:
        return transitive_reduction(self.edges)

    def leq_pairs(self) -> set[tuple[int, int]]:
        """Feature pairs ``(j, k)`` with ``j`` no more important than ``k``, reflexive pairs included."""
        pairs = set()
        for members in self.nodes:
            pairs.update((a, b) for a in members for b in members)
        for u, v in self.edges:
            pairs.update((b, a) for a in self.nodes[u] for b in self.nodes[v])
        return pairs

    def node_label(self, u: int) -> str:
        return " = ".join(self.labels[i] for i in self.nodes[u]) + f" ({self.signs[u].symbol})"

    def to_dot(self, name: str | None = None) -> str:
        """DOT digraph of the Hasse diagram, nodes and edges in lexicographic label order."""
        order = sorted(range(len(self.nodes)), key=self.node_label)
        ident = {u: f"n{k}" for k, u in enumerate(order)}
        if name is None:
            name = "partial_order" if self.instance is None else f"instance_{self.instance}"
        lines = [f"digraph {_dot_quote(name)} {{", "  rankdir=TB;", "  node [shape=box];"]
        for u in order:
            lines.append(f"  {ident[u]} [label={_dot_quote(self.node_label(u))}];")
        for u, v in sorted(self.hasse(), key=lambda e: (self.node_label(e[0]), self.node_label(e[1]))):
            lines.append(f"  {ident[u]} -> {ident[v]};")
        lines.append("}")
        return "\n".join(lines) + "\n"


def _dot_quote(s: str) -> str:
    return '"' + s.replace("\\", "\\\\").replace('"', '\\"') + '"'


def transitive_reduction(edges: Iterable[tuple[int, int]]) -> set[tuple[int, int]]:
    """Drop every edge ``u -> v`` that is implied by a longer path."""
    edges = set(edges)
    succ: dict[int, set[int]] = {}
    for u, v in edges:
        succ.setdefault(u, set()).add(v)

    def reachable_avoiding(u, v):
        # is v reachable from u without using the direct edge u -> v
        stack = [w for w in succ.get(u, ()) if w != v]
        seen = set(stack)
        while stack:
            w = stack.pop()
            for nxt in succ.get(w, ()):
                if nxt == v:
                    return True
                if nxt not in seen:
                    seen.add(nxt)
                    stack.append(nxt)
        return False

    return {(u, v) for u, v in edges if not reachable_avoiding(u, v)}


@dataclass(frozen=True)
class InstanceExplanation:
    instance: int | None
    epsilon: float
    gap_range: tuple[float, float]
    gap_sign: Sign
    attr_lo: np.ndarray
    attr_hi: np.ndarray
    attr_center: np.ndarray
    signs: tuple[Sign, ...]
    order: PartialOrder
    labels: tuple[str, ...]
    feature_names: tuple[str, ...]

    @property
    def sa(self) -> list[int]:
        return [i for i, s in enumerate(self.signs) if s != Sign.NONE]

    def statements(self) -> list["Statement"]:
        out = []
        if self.gap_sign != Sign.NONE:
            out.append(Statement("gap_sign", (), (int(self.gap_sign),), self.epsilon, self.instance))
        for i in self.sa:
            out.append(Statement("attr_sign", (self.feature_names[i],), (int(self.signs[i]),), self.epsilon, self.instance))
        for j, k in sorted(self.order.leq_pairs()):
            if j != k:
                out.append(Statement("less_important", (self.feature_names[j], self.feature_names[k]),
                                     (int(self.signs[j]), int(self.signs[k])), self.epsilon, self.instance))
        return out

    def bar_rows(self) -> list[tuple[str, str, float, float, float]]:
        """(feature, sign, lo, hi, center) per feature: the min/max attribution bar chart."""
        return [(self.labels[i], self.signs[i].symbol, float(self.attr_lo[i]), float(self.attr_hi[i]),
                 float(self.attr_center[i])) for i in range(len(self.labels))]


@dataclass(frozen=True)
class Statement:
    kind: str
    subjects: tuple[str, ...]
    signs: tuple[int, ...]
    epsilon: float
    instance: int | None

    def to_dict(self) -> dict:
        return {"kind": self.kind, "instance": self.instance, "epsilon": self.epsilon,
                "subjects": list(self.subjects), "signs": list(self.signs)}


def _relation(provider: AttributionProvider, F: InstanceFunctionals, sa: list[int], signs, margin: float):
    """Boolean matrix ``leq[a, b]``: feature ``sa[a]`` is no more important than ``sa[b]``."""
    s = len(sa)
    leq = np.eye(s, dtype=bool)
    sup = np.zeros((s, s))
    if s < 2:
        return leq, sup
    A = np.asarray([int(signs[i]) * F.attributions[i] for i in sa])
    ia, ib = np.where(~np.eye(s, dtype=bool))
    _, hi = provider.family.bounds(A[ia] - A[ib])
    sup[ia, ib] = hi
    leq[ia, ib] = hi <= -margin
    return leq, sup


def _close(leq: np.ndarray, sup: np.ndarray, scale: float) -> np.ndarray:
    """Check transitivity; pairs failing only by float noise are closed, real failures raise."""
    leq = leq.copy()
    tol = TRANSITIVITY_TOL * max(1.0, scale)
    changed = True
    while changed:
        changed = False
        implied = (leq.astype(np.int64) @ leq.astype(np.int64)) > 0
        missing = implied & ~leq
        if missing.any():
            a, b = np.argwhere(missing)[0]
            if sup[a, b] > tol:
                raise TransitivityViolation(f"pair ({a}, {b}) is implied by transitivity but its sup is {sup[a, b]!r}")
            leq |= missing & (sup <= tol)
            changed = True
    return leq


def explain_instance(provider: AttributionProvider, x, instance: int | None = None,
                     margin: float = 0.0) -> InstanceExplanation:
    F = provider.functionals(x)
    glo, ghi = provider.family.bounds(F.gap[None, :])
    lo, hi = provider.family.bounds(F.attributions)
    signs = tuple(sign_of(lo[i], hi[i], margin) for i in range(len(lo)))
    sa = [i for i, s in enumerate(signs) if s != Sign.NONE]
    leq, sup = _relation(provider, F, sa, signs, margin)
    scale = float(np.max(np.abs(np.concatenate([lo, hi]))) if len(lo) else 1.0)
    leq = _close(leq, sup, scale)

    # merge features that are mutually <=
    klass = list(range(len(sa)))
    for a in range(len(sa)):
        for b in range(a):
            if leq[a, b] and leq[b, a]:
                klass[a] = klass[b]
                break
    reps = sorted(set(klass))
    nodes = tuple(tuple(sa[a] for a in range(len(sa)) if klass[a] == r) for r in reps)
    node_of = {r: u for u, r in enumerate(reps)}
    edges = set()
    for a in range(len(sa)):
        for b in range(len(sa)):
            u, v = node_of[klass[b]], node_of[klass[a]]
            if leq[a, b] and u != v:
                edges.add((u, v))  # sa[a] <= sa[b]: b's node more important
    order = PartialOrder(nodes, tuple(signs[n[0]] for n in nodes), F.labels, frozenset(edges),
                         instance, provider.epsilon)
    return InstanceExplanation(
        instance=instance,
        epsilon=provider.epsilon,
        gap_range=(float(glo[0]), float(ghi[0])),
        gap_sign=sign_of(glo[0], ghi[0], margin),
        attr_lo=lo,
        attr_hi=hi,
        attr_center=provider.center_attributions(x),
        signs=signs,
        order=order,
        labels=F.labels,
        feature_names=provider.feature_names,
    )


def build_partial_order(provider: AttributionProvider, x, instance: int | None = None,
                        margin: float = 0.0) -> PartialOrder:
    return explain_instance(provider, x, instance, margin).order


def hasse(po: PartialOrder) -> set[tuple[int, int]]:
    return po.hasse()


def instance_utility_count(expl: InstanceExplanation) -> int:
    """Sign statements plus relative-importance statements asserted at one input.

    Counts each comparable unordered pair once (merged features would
    otherwise count twice), so the total never exceeds ``d (d + 1) / 2``.
    """
    if expl.gap_sign == Sign.NONE:
        return 0
    pairs = {tuple(sorted(p)) for p in expl.order.leq_pairs()}
    return len(pairs)


def utility(provider: AttributionProvider, X: np.ndarray, margin: float = 0.0) -> float:
    X = np.atleast_2d(X)
    d = provider.n_features
    total = sum(instance_utility_count(explain_instance(provider, x, n, margin)) for n, x in enumerate(X))
    return total / (len(X) * d * (d + 1) / 2)


def epsilon_linesearch(provider: AttributionProvider, X: np.ndarray, grid: Sequence[float],
                       margin: float = 0.0) -> list[tuple[float, float, float]]:
    """``(epsilon, epsilon - min_loss, u(epsilon))`` for each tolerance in ascending ``grid``."""
    grid = list(grid)
    if any(b < a for a, b in zip(grid, grid[1:])):
        raise ValueError("grid must be sorted ascending")
    rows = []
    for eps in grid:
        p = provider.at_epsilon(eps)
        rows.append((float(eps), float(eps - provider.family.min_loss), utility(p, X, margin)))
    return rows


def curve_csv(rows: Iterable[tuple[float, float, float]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["epsilon", "excess_epsilon", "utility"])
    for r in rows:
        w.writerow([repr(float(v)) for v in r])
    return buf.getvalue()


@dataclass(frozen=True)
class Comparators:
    """Aggregates of an explicit ensemble: mean attribution, variance, mean importance rank."""

    mean_attribution: np.ndarray
    variance: np.ndarray
    mean_rank: np.ndarray

    def rows(self, labels: Sequence[str]) -> list[tuple[str, float, float, float]]:
        order = np.argsort(-self.mean_rank, kind="stable")
        return [(labels[i], float(self.mean_attribution[i]), float(self.variance[i]), float(self.mean_rank[i]))
                for i in order]


def comparators(attributions: np.ndarray) -> Comparators:
    """``attributions[k, i]``: attribution of feature ``i`` by ensemble member ``k``.

    Ranks are 0-based in ascending importance ``|phi|`` with ties averaged.
    """
    attributions = np.atleast_2d(np.asarray(attributions, dtype=np.float64))
    if attributions.shape[0] == 0:
        raise ValueError("empty ensemble")
    ranks = rankdata(np.abs(attributions), axis=1, method="average") - 1.0
    return Comparators(attributions.mean(axis=0), attributions.var(axis=0), ranks.mean(axis=0))


def ensemble_attributions(provider: AttributionProvider, x, members: np.ndarray) -> np.ndarray:
    return np.atleast_2d(members) @ provider.functionals(x).attributions.T


def embedding_check(po: PartialOrder, comp: Comparators, tol: float = 1e-9) -> list[str]:
    """Consensus relations that the ensemble's total orders contradict (expected: none)."""
    violations = []
    scale = max(1.0, float(np.max(np.abs(comp.mean_attribution), initial=0.0)))
    for u, v in sorted(po.edges):
        s_u, s_v = int(po.signs[u]), int(po.signs[v])
        for i in po.nodes[u]:
            for j in po.nodes[v]:
                # j is no more important than i
                if comp.mean_rank[j] > comp.mean_rank[i] + tol:
                    violations.append(f"mean rank: {j} ({comp.mean_rank[j]:.6g}) above {i} ({comp.mean_rank[i]:.6g})")
                if s_v * comp.mean_attribution[j] > s_u * comp.mean_attribution[i] + tol * scale:
                    violations.append(f"mean attribution: |phi_{j}| exceeds |phi_{i}|")
                if abs(comp.mean_attribution[j]) > abs(comp.mean_attribution[i]) + tol * scale:
                    violations.append(f"mean attribution magnitude: {j} above {i}")
    return violations


def statements_json(explanations: Iterable[InstanceExplanation]) -> str:
    records = [s.to_dict() for e in explanations for s in e.statements()]
    return json.dumps(records, indent=2)
