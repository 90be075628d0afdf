import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import FiniteFamily, is_acyclic, parse_dot, reachability
from rashomon_consensus import additive, consensus
from rashomon_consensus.additive import BasisSpec
from rashomon_consensus.consensus import (AttributionProvider, InstanceFunctionals, PartialOrder, Sign, comparators,
                                          embedding_check, explain_instance, less_important, sa_set, sg_set,
                                          sign_attr, sign_gap, transitive_reduction, utility)
from rashomon_consensus.errors import EmptyRashomon, SignNotEstablished, TransitivityViolation
from rashomon_consensus.linalg import EllipsoidFamily, linear_range
from rashomon_consensus.providers import additive_provider
from rashomon_consensus.synthetic import additive_task


def identity_provider(family, names, gap=None):
    """Parameters are the attributions themselves; the gap is their sum unless given."""
    d = len(names)

    def functionals(x):
        g = np.ones(d) if gap is None else gap
        return InstanceFunctionals(x, g, np.eye(d), tuple(names))

    return AttributionProvider(family, functionals, names, 0.0)


def interval_provider(lo, hi):
    fam = EllipsoidFamily(np.array([(lo + hi) / 2]), np.eye(1), ((hi - lo) / 2) ** 2)
    return identity_provider(fam, ["f"])


def test_sign_examples():
    assert sign_gap(interval_provider(0.2, 0.9), np.zeros(1)) == Sign.POSITIVE
    assert sign_gap(interval_provider(-0.1, 0.4), np.zeros(1)) == Sign.NONE
    assert sign_gap(interval_provider(-0.9, -0.3), np.zeros(1)) == Sign.NEGATIVE
    assert sign_attr(interval_provider(0.1, 0.5), np.zeros(1), 0) == Sign.POSITIVE
    # strict inequalities: touching zero is no consensus
    assert sign_gap(interval_provider(0.0, 0.4), np.zeros(1)) == Sign.NONE


def test_singleton_family_reduces_to_the_center():
    c = np.array([0.3, -1.2, 0.7])
    p = identity_provider(EllipsoidFamily(c, np.eye(3), 0.0), ["a", "b", "c"])
    x = np.zeros(3)
    assert sign_gap(p, x) == Sign.NEGATIVE
    assert sa_set(p, x) == {0: Sign.POSITIVE, 1: Sign.NEGATIVE, 2: Sign.POSITIVE}
    assert less_important(p, x, 0, 2, 1, 1) and not less_important(p, x, 1, 2, -1, 1)
    assert less_important(p, x, 1, 1, -1, -1)
    order = explain_instance(p, x).order
    # a chain a < c < b, so the Hasse diagram has two edges
    assert len(order.edges) == 3 and len(order.hasse()) == 2


def test_less_important_requires_consensus_sign():
    p = identity_provider(FiniteFamily([[1.0, 2.0], [-1.0, 2.0]]), ["a", "b"])
    with pytest.raises(SignNotEstablished):
        less_important(p, np.zeros(2), 0, 1, 1, 1)
    with pytest.raises(SignNotEstablished):
        less_important(p, np.zeros(2), 1, 1, -1, -1)


def fig_fixture():
    """Four features: x1, x2 incomparable, both above x3; x4 has no sign consensus."""
    models = [[3.0, 1.0, 0.5, -0.2], [1.0, 3.0, 0.5, 0.2], [2.0, 2.0, 0.2, 0.1]]
    return identity_provider(FiniteFamily(models), ["x1", "x2", "x3", "x4"])


GOLDEN_DOT = """digraph "instance_0" {
  rankdir=TB;
  node [shape=box];
  n0 [label="x1 (+)"];
  n1 [label="x2 (+)"];
  n2 [label="x3 (+)"];
  n0 -> n2;
  n1 -> n2;
}
"""


def test_partial_order_fixture_and_golden_dot():
    e = explain_instance(fig_fixture(), np.zeros(4), instance=0)
    assert e.sa == [0, 1, 2]
    order = e.order
    edges = {(order.nodes[u], order.nodes[v]) for u, v in order.hasse()}
    assert edges == {((0,), (2,)), ((1,), (2,))}
    assert order.to_dot() == GOLDEN_DOT
    nodes, dot_edges = parse_dot(order.to_dot())
    assert len(nodes) == 3 and is_acyclic(nodes, dot_edges)


def test_statements_follow_explanation():
    e = explain_instance(fig_fixture(), np.zeros(4), instance=5)
    kinds = [(s.kind, s.subjects) for s in e.statements()]
    assert ("gap_sign", ()) in kinds
    assert ("attr_sign", ("x4",)) not in kinds
    assert ("less_important", ("x3", "x1")) in kinds and ("less_important", ("x3", "x2")) in kinds
    assert not any(k == "less_important" and "x4" in s for k, s in kinds)


def test_mutual_features_merge():
    models = [[2.0, 2.0, 1.0], [3.0, 3.0, 0.5]]
    e = explain_instance(identity_provider(FiniteFamily(models), ["a", "b", "c"]), np.zeros(3))
    assert e.order.nodes == ((0, 1), (2,))
    assert e.order.node_label(0) == "a = b (+)"
    # merged pair counts once: 3 signs + {a,b} + {a,c} + {b,c}
    assert consensus.instance_utility_count(e) == 6


def test_transitive_reduction_chain():
    assert transitive_reduction({(0, 1), (1, 2), (0, 2)}) == {(0, 1), (1, 2)}


@settings(max_examples=50, deadline=None)
@given(n=st.integers(2, 8), data=st.data())
def test_transitive_reduction_against_reachability(n, data):
    # random DAG: edges only from lower to higher index
    pairs = [(u, v) for u in range(n) for v in range(u + 1, n)]
    edges = set(data.draw(st.lists(st.sampled_from(pairs), unique=True)))
    red = transitive_reduction(edges)
    full = reachability(n, edges)
    assert red <= edges
    assert np.array_equal(reachability(n, red), full)
    for e in red:
        assert not np.array_equal(reachability(n, red - {e}), full)


class InconsistentFamily:
    """Reports a sup that breaks transitivity on purpose."""

    min_loss = 0.0
    center = np.array([1.0, 2.0, 3.0])

    def bounds(self, a):
        a = np.atleast_2d(a)
        vals = a @ self.center
        hi = vals.copy()
        # claim x0 vs x2 is not ordered although x0 <= x1 <= x2
        hi[(a[:, 0] > 0) & (a[:, 2] < 0) & (a[:, 1] == 0)] = 0.5
        return vals, hi


def test_transitivity_violation_raises():
    p = identity_provider(InconsistentFamily(), ["a", "b", "c"])
    with pytest.raises(TransitivityViolation):
        explain_instance(p, np.zeros(3))


def additive_setup(n=200, seed=0):
    X, y = additive_task(n, seed=seed)
    fit = additive.fit(X, y, BasisSpec.splines(4, [1, 2], 2, 4), ["a", "b", "c", "dummy"])
    return fit, X, y


def test_utility_at_min_loss_and_large_epsilon():
    fit, X, y = additive_setup()
    p = additive_provider(fit, X, fit.train_loss)
    Xs = X[:15]
    sg = sg_set(p, Xs)
    # at the minimum the family is one model; generic inputs have distinct, nonzero attributions
    assert utility(p, Xs) == pytest.approx(len(sg) / len(Xs))
    huge = p.at_epsilon(fit.train_loss + 1e4)
    assert utility(huge, Xs) == 0.0


def test_utility_rejects_empty_set():
    fit, X, _ = additive_setup()
    p = additive_provider(fit, X, fit.train_loss)
    with pytest.raises(EmptyRashomon):
        p.at_epsilon(fit.train_loss * 0.5)


def test_sg_matches_closed_form_ranges():
    fit, X, _ = additive_setup()
    eps = fit.train_loss + 0.01
    p = additive_provider(fit, X, eps)
    fam = additive.rashomon(fit, X, eps)
    expected = []
    for n, x in enumerate(X[:40]):
        lo, hi = linear_range(fam, additive.gap_coeffs(fit, x))
        if lo > 0 or hi < 0:
            expected.append(n)
    assert sg_set(p, X[:40]) == expected


def test_less_important_agrees_with_sampling():
    rng = np.random.default_rng(0)
    fam = EllipsoidFamily(np.array([1.0, 1.3, -2.0]), np.diag([40.0, 60.0, 30.0]), 0.05)
    p = identity_provider(fam, ["a", "b", "c"])
    x = np.zeros(3)
    signs = sa_set(p, x)
    assert set(signs) == {0, 1, 2}
    W = np.vstack([fam.sample(5000, rng), fam.sample(5000, rng, boundary=True)])
    mags = np.abs(W)
    found_false = False
    for i in range(3):
        for j in range(3):
            holds = less_important(p, x, i, j, signs[i], signs[j])
            violated = np.any(mags[:, i] > mags[:, j] + 1e-12)
            if holds:
                assert not violated
            else:
                found_false = True
                assert violated
    assert found_false


def test_curve_rows_and_csv():
    fit, X, _ = additive_setup()
    p = additive_provider(fit, X, fit.train_loss)
    grid = [fit.train_loss, fit.train_loss + 0.01, fit.train_loss + 0.1]
    rows = consensus.epsilon_linesearch(p, X[:10], grid)
    assert len(rows) == 3 and rows[0][1] == 0.0
    assert rows[0][2] >= rows[1][2] >= rows[2][2]
    text = consensus.curve_csv(rows)
    assert text.splitlines()[0] == "epsilon,excess_epsilon,utility"
    assert consensus.curve_csv(consensus.epsilon_linesearch(p, X[:10], grid)) == text
    with pytest.raises(ValueError):
        consensus.epsilon_linesearch(p, X[:10], grid[::-1])


def test_comparator_examples():
    same = comparators(np.tile([1.0, -2.0, 0.5], (4, 1)))
    assert np.all(same.variance == 0.0)
    two = comparators(np.array([[1.0, 2.0], [2.0, 1.0]]))
    assert np.array_equal(two.mean_rank, [0.5, 0.5])
    rows = comparators(np.array([[1.0, -3.0, 2.0]])).rows(["a", "b", "c"])
    assert [r[0] for r in rows] == ["b", "c", "a"] and rows[0][3] == 2.0


def test_embedding_check_center_and_samples():
    fit, X, _ = additive_setup()
    p = additive_provider(fit, X, fit.train_loss + 0.02)
    rng = np.random.default_rng(1)
    members = p.family.sample(500, rng)
    for x in X[:5]:
        order = explain_instance(p, x).order
        assert embedding_check(order, comparators(consensus.ensemble_attributions(p, x, p.family.center))) == []
        assert embedding_check(order, comparators(consensus.ensemble_attributions(p, x, members))) == []


def test_margin_is_conservative():
    p = interval_provider(0.05, 0.9)
    assert sign_gap(p, np.zeros(1)) == Sign.POSITIVE
    assert sign_gap(p, np.zeros(1), margin=0.1) == Sign.NONE


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 50), e1=st.floats(0.0, 0.2), e2=st.floats(0.0, 0.2))
def test_nesting_under_growing_tolerance(seed, e1, e2):
    fit, X, _ = additive_setup(120, seed)
    small, big = sorted([e1, e2])
    p1 = additive_provider(fit, X, fit.train_loss + small)
    p2 = p1.at_epsilon(fit.train_loss + big)
    Xs = X[:8]
    assert set(sg_set(p2, Xs)) <= set(sg_set(p1, Xs))
    for x in Xs:
        a, b = explain_instance(p1, x), explain_instance(p2, x)
        assert set(b.sa) <= set(a.sa)
        for i in b.sa:
            assert b.signs[i] == a.signs[i]
        assert b.order.leq_pairs() <= a.order.leq_pairs()
    assert utility(p2, Xs) <= utility(p1, Xs)


def check_order(order: PartialOrder):
    """Antisymmetry after merging, transitive closure, acyclicity, parseable DOT."""
    n = len(order.nodes)
    R = reachability(n, order.edges)
    assert not np.any(np.diag(R))
    assert set(map(tuple, np.argwhere(R))) == set(order.edges)
    assert not any((v, u) in order.edges for u, v in order.edges)
    nodes, edges = parse_dot(order.to_dot())
    assert is_acyclic(nodes, edges) and len(edges) == len(order.hasse())


def test_orders_are_well_formed_on_additive_task():
    fit, X, _ = additive_setup()
    for excess in (0.0, 0.005, 0.05):
        p = additive_provider(fit, X, fit.train_loss + excess)
        for x in X[:20]:
            check_order(explain_instance(p, x).order)
