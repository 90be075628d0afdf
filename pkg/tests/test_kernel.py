import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad_vec

from oracles import finite_difference
from rashomon_consensus import kernel
from rashomon_consensus.errors import EmptyRashomon, NotPositiveDefinite
from rashomon_consensus.kernel import Gaussian, Polynomial
from rashomon_consensus.synthetic import kernel_task


def test_spec_validation():
    with pytest.raises(ValueError):
        Gaussian(0.0)
    with pytest.raises(ValueError):
        Polynomial(1.0, 0)
    assert kernel.spec_from_dict(Polynomial(0.5, 2).to_dict()) == Polynomial(0.5, 2)


def test_kernel_values():
    x = np.array([0.3, -1.2])
    assert kernel.kernel_eval(Gaussian(0.7), x, x) == 1.0
    r = np.array([2.0, 5.0])
    assert kernel.kernel_eval(Polynomial(1.0, 1), np.zeros(2), r) == 1.0
    assert kernel.kernel_grad(Polynomial(1.0, 1), np.zeros(2), r, 1) == 5.0
    K = kernel.kernel_matrix(Gaussian(0.5), np.eye(2), np.zeros((1, 2)))
    assert np.allclose(K, np.exp(-0.5))


@pytest.mark.parametrize("spec", [Gaussian(0.4), Polynomial(0.3, 3), Polynomial(1.1, 2)])
def test_gradients_match_finite_differences(spec):
    rng = np.random.default_rng(0)
    for _ in range(100):
        x, r = rng.standard_normal(3), rng.standard_normal(3)
        fd = finite_difference(lambda v: kernel.kernel_eval(spec, v, r), x)
        an = np.array([kernel.kernel_grad(spec, x, r, i) for i in range(3)])
        assert np.allclose(an, fd, rtol=1e-6, atol=1e-8)


def test_fit_solves_ridge_system():
    rng = np.random.default_rng(1)
    X = rng.standard_normal((50, 3))
    y = rng.standard_normal(50)
    fit = kernel.fit_krr(X, y, Gaussian(0.3), 1e-3)
    K = fit.gram()
    assert np.linalg.norm((K + 1e-3 * 50 * np.eye(50)) @ fit.alpha - y) <= 1e-9
    ref = np.mean((K @ fit.alpha - y) ** 2) + 1e-3 * fit.alpha @ K @ fit.alpha
    assert fit.reg_loss == pytest.approx(ref, rel=1e-12)


def test_zero_targets_and_shrinkage():
    X, y = kernel_task(15)
    zero = kernel.fit_krr(X, np.zeros(15), Gaussian(0.5), 0.1)
    assert np.all(zero.alpha == 0.0) and zero.reg_loss == 0.0
    big = kernel.fit_krr(X, y, Gaussian(0.5), 1e6)
    mid = kernel.fit_krr(X, y, Gaussian(0.5), 1e3)
    assert np.linalg.norm(big.alpha) < np.linalg.norm(mid.alpha)


def test_rashomon_boundary_loss_identity():
    X, y = kernel_task(20)
    fit = kernel.fit_krr(X, y, Gaussian(0.3), 1e-2)
    fam = kernel.rashomon_krr(fit, 1.02 * fit.reg_loss)
    assert fam.radius_sq == pytest.approx(0.02 * fit.reg_loss, rel=1e-12)
    A = fam.sample(100, np.random.default_rng(0), boundary=True)
    losses = kernel.regularized_loss(fit.gram(), y, fit.lam, A)
    assert np.allclose(losses, fam.epsilon, atol=1e-7)
    single = kernel.rashomon_krr(fit, fit.reg_loss)
    assert single.radius_sq == 0.0
    with pytest.raises(EmptyRashomon):
        kernel.rashomon_krr(fit, 0.9 * fit.reg_loss)


def test_ig_zero_displacement_and_affine_exactness():
    X, y = kernel_task(10)
    fit = kernel.fit_krr(X, y, Gaussian(0.5), 1e-2)
    ig = kernel.ig_path_matrix(fit, X[0], X[0], steps=10)
    assert np.all(ig.phi == 0.0)
    lin = kernel.fit_krr(X, y, Polynomial(1.0, 1), 1e-1)
    for steps in (1, 3, 17):
        ig = kernel.ig_path_matrix(lin, X[1], X[2], steps)
        assert kernel.gap_error(lin, ig) <= 1e-12
    assert kernel.gap_error(fit, kernel.ig_path_matrix(fit, X[1], X[2], 5), np.zeros(10)) == 0.0


def test_ig_matches_dense_quadrature():
    X, y = kernel_task(12)
    fit = kernel.fit_krr(X, y, Gaussian(0.4), 1e-2)
    x, z = X[0], X[3]
    ig = kernel.ig_path_matrix(fit, x, z, steps=4000)
    D, a, g = fit.dictionary, fit.alpha, 0.4

    def grad_h(t):
        p = z + t * (x - z)
        k = np.exp(-g * ((p - D) ** 2).sum(axis=1))
        return -2.0 * g * ((a * k)[:, None] * (p - D)).sum(axis=0)

    ref = (x - z) * quad_vec(grad_h, 0.0, 1.0, epsabs=1e-12)[0]
    assert np.allclose(ig.attributions(fit.alpha), ref, atol=1e-7)


def test_gap_error_shrinks_with_refinement():
    X, y = kernel_task(20)
    fit = kernel.fit_krr(X, y, Gaussian(0.3), 1e-3)
    x, z = X[0], X.mean(axis=0)
    errs = [kernel.gap_error(fit, kernel.ig_path_matrix(fit, x, z, s)) for s in (100, 200, 1000)]
    assert errs[2] <= errs[0]
    assert 3.5 <= errs[0] / errs[1] <= 4.5


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10**6), c1=st.floats(-3, 3), c2=st.floats(-3, 3))
def test_ig_is_linear_in_coefficients(seed, c1, c2):
    rng = np.random.default_rng(seed)
    X, y = kernel_task(8, seed=seed % 5)
    fit = kernel.fit_krr(X, y, Gaussian(0.5), 1e-2)
    ig = kernel.ig_path_matrix(fit, X[0], X[1], steps=50)
    a1, a2 = rng.standard_normal(8), rng.standard_normal(8)
    lhs = ig.attributions(c1 * a1 + c2 * a2)
    rhs = c1 * ig.attributions(a1) + c2 * ig.attributions(a2)
    assert np.allclose(lhs, rhs, atol=1e-10)


def test_json_round_trip():
    X, y = kernel_task(10)
    fit = kernel.fit_krr(X, y, Polynomial(0.5, 2), 1e-1, ["a", "b", "c", "d"])
    back = kernel.KrrFit.from_dict(json.loads(fit.to_json()))
    assert back.spec == fit.spec and back.column_names == fit.column_names
    assert np.array_equal(back.predict(X), fit.predict(X))


def test_grid_search_is_deterministic_and_complete():
    X, y = kernel_task(30)
    specs = [Gaussian(0.1), Gaussian(1.0)]
    a = kernel.kfold_grid_search(X, y, specs, [1e-3, 1e-1], folds=3, seed=4)
    b = kernel.kfold_grid_search(X, y, specs, [1e-3, 1e-1], folds=3, seed=4)
    assert a == b and len(a) == 4
    assert all(mse > 0 for _, _, mse in a)


def test_low_rank_kernel_shape_needs_jitter():
    X, y = kernel_task(20)
    fit = kernel.fit_krr(X, y, Polynomial(1.0, 1), 1e-2)
    with pytest.raises(NotPositiveDefinite):
        kernel.rashomon_krr(fit, 1.1 * fit.reg_loss)
    fam = kernel.rashomon_krr(fit, 1.1 * fit.reg_loss, jitter=1e-8)
    assert fam.dim == 20
