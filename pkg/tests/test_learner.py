import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import random_psd
from oracles import mu_grid_oracle
from tesskernel.data import generate_circle, fit_scaling, kfold
from tesskernel.kernel import BlockPMatrix, Box, enumerate_basis, from_P, kernel_eval_pform, region_moment_terms
from tesskernel.learner import (
    LearnerConfig,
    MKLWeights,
    assemble_M,
    cross_validate,
    generate_random_psd_basis,
    learn_mkl,
    learn_saddle,
    phi_value,
    precompute_moments,
    top_eig,
)
from tesskernel.qp import QPConfig, solve_svm_dual


def feasible_alpha(rng, y, C):
    a = rng.uniform(0, C, y.size)
    pos, neg = y > 0, y < 0
    s_pos, s_neg = a[pos].sum(), a[neg].sum()
    if s_pos > s_neg:
        a[pos] *= s_neg / s_pos
    else:
        a[neg] *= s_pos / s_neg
    return a


def small_problem(rng, m=8, n=2, d=1):
    X = rng.uniform(size=(m, n))
    y = np.array([1.0, -1.0] * (m // 2))
    basis = enumerate_basis(n, d)
    return X, y, basis, precompute_moments(X, basis, Box.unit(n))


def test_cache_matches_direct_moments(rng):
    X, y, basis, cache = small_problem(rng)
    for i, j in [(0, 1), (2, 5), (3, 3)]:
        got = cache.entry(i, j)
        ref = region_moment_terms(basis, Box.unit(2), X[i], X[j])
        for a, b in zip(got, ref):
            np.testing.assert_allclose(a, b, rtol=1e-14)
        swapped = cache.entry(j, i)
        np.testing.assert_allclose(got.upper, swapped.upper, rtol=1e-14)
        np.testing.assert_allclose(got.above_x, swapped.above_y, rtol=1e-14)
    diag = cache.entry(4, 4)
    np.testing.assert_allclose(diag.upper, diag.above_x, rtol=1e-14)


def test_gram_map_identity(rng):
    X, y, basis, cache = small_problem(rng, m=6, n=2, d=1)
    for _ in range(10):
        P = random_psd(rng, 2 * len(basis))
        a = feasible_alpha(rng, y, 1.0)
        M = assemble_M(a, y, cache)
        lhs = np.trace(P @ M)
        rhs = sum(
            a[i] * a[j] * y[i] * y[j] * kernel_eval_pform(BlockPMatrix(P), basis, Box.unit(2), X[i], X[j])
            for i in range(6)
            for j in range(6)
        )
        assert lhs == pytest.approx(rhs, rel=1e-9)


def test_assemble_M_trivial_cases(rng):
    X, y, basis, cache = small_problem(rng)
    np.testing.assert_array_equal(assemble_M(np.zeros(8), y, cache), 0.0)
    one = precompute_moments(X[:1], basis, Box.unit(2))
    M = assemble_M(np.array([0.0]), np.array([1.0]), one)
    np.testing.assert_array_equal(M, 0.0)
    a = feasible_alpha(rng, y, 1.0)
    assert np.linalg.eigvalsh(assemble_M(a, y, cache))[0] >= -1e-12 * np.abs(assemble_M(a, y, cache)).max()
    with pytest.raises(ValueError):
        assemble_M(np.ones(8) * np.array([1, 0] * 4), y, cache)


def test_top_eig(rng):
    lam, v = top_eig(np.eye(2))
    assert lam == pytest.approx(1.0)
    lam, v = top_eig(np.diag([1.0, 2.0]))
    assert lam == pytest.approx(2.0)
    np.testing.assert_allclose(v, [0.0, 1.0], atol=1e-14)
    M = random_psd(rng, 10)
    lam, v = top_eig(M)
    assert lam == pytest.approx(np.linalg.eigvalsh(M)[-1], rel=1e-12)
    np.testing.assert_allclose(M @ v, lam * v, atol=1e-10 * lam)


@given(seed=st.integers(0, 10_000), t=st.floats(0.0, 1.0))
def test_phi_is_concave(seed, t):
    rng = np.random.default_rng(seed)
    X, y, basis, cache = small_problem(rng, m=6)
    a, b = feasible_alpha(rng, y, 1.0), feasible_alpha(rng, y, 1.0)
    c = 2.0 * len(basis)
    mid = phi_value(t * a + (1 - t) * b, y, cache, c)
    assert mid >= t * phi_value(a, y, cache, c) + (1 - t) * phi_value(b, y, cache, c) - 1e-10


def test_saddle_separates_alternating_points():
    X = np.array([[0.1], [0.35], [0.6], [0.85]])
    y = np.array([1.0, -1.0, 1.0, -1.0])
    res = learn_saddle(X, y, LearnerConfig(degree=0, C=100.0, max_outer_iter=400))
    f = res.kernel.matrix(X) @ (res.solution.alpha * y) + res.solution.bias
    assert np.all(f * y > 0)
    assert res.kernel.Q1.shape == (1, 1)
    # phi at the returned point agrees with an independent evaluation
    cache = precompute_moments(X, res.kernel.basis, res.kernel.box)
    assert phi_value(res.state.best_alpha, y, cache, res.trace_bound) == pytest.approx(res.state.best_value, abs=1e-9)


def test_saddle_weak_duality_and_trace(rng):
    data = generate_circle(30, seed=3)
    X = fit_scaling(data.features).apply(data.features)
    y = data.labels.astype(float)
    cfg = LearnerConfig(degree=1, C=1.0)
    res = learn_saddle(X, y, cfg)
    assert res.gap >= -1e-6 * max(1.0, abs(res.state.best_value))
    assert np.trace(res.kernel.psd_certificate.matrix) == pytest.approx(res.trace_bound, rel=1e-10)
    # any kernel in the class has SVM value at least phi_best
    basis = res.kernel.basis
    cache = precompute_moments(X, basis, Box.unit(2))
    for P in generate_random_psd_basis(len(basis), 3, res.trace_bound, seed=1).matrices:
        G = cache.gram(from_P(P, basis, Box.unit(2)))
        sol = solve_svm_dual(G * np.outer(y, y), y, QPConfig(C=1.0, kkt_tol=1e-9))
        assert sol.objective >= res.state.best_value - 1e-6


def test_saddle_small_trace_bound():
    data = generate_circle(20, seed=4)
    X = fit_scaling(data.features).apply(data.features)
    y = data.labels.astype(float)
    res = learn_saddle(X, y, LearnerConfig(degree=1, C=1.0, trace_bound=1e-8))
    # the quadratic term vanishes: phi -> sum(alpha), maximized with all of the minority class at C
    n_min = min((y > 0).sum(), (y < 0).sum())
    assert res.state.best_value == pytest.approx(2.0 * n_min, rel=1e-4)
    assert np.abs(res.kernel.matrix(X)).max() < 1e-6


def test_random_psd_basis():
    a = generate_random_psd_basis(3, 5, 6.0, seed=7)
    b = generate_random_psd_basis(3, 5, 6.0, seed=7)
    for P, Q in zip(a.matrices, b.matrices):
        assert np.array_equal(P.matrix, Q.matrix)
        assert P.min_eigenvalue() >= -1e-12 * 6.0
        assert P.trace == pytest.approx(6.0, rel=1e-10)


def gaussian_gram(X, s=0.5):
    return np.exp(-((X[:, None] - X[None]) ** 2).sum(-1) / (2 * s * s))


def test_mkl_single_kernel_is_plain_svm(rng):
    X = rng.uniform(size=(20, 2))
    y = np.where(X[:, 0] > 0.5, 1.0, -1.0)
    G = gaussian_gram(X)
    res = learn_mkl(y, [G], 1.0, qp_tol=1e-10)
    plain = solve_svm_dual(G * np.outer(y, y), y, QPConfig(C=1.0, kkt_tol=1e-10))
    np.testing.assert_array_equal(res.weights.mu, [1.0])
    assert abs(res.solution.objective - plain.objective) <= 1e-9 * max(1.0, abs(plain.objective))


def test_mkl_identical_kernels_keep_uniform_weights(rng):
    X = rng.uniform(size=(16, 2))
    y = np.where(X[:, 1] > 0.5, 1.0, -1.0)
    G = gaussian_gram(X)
    res = learn_mkl(y, [G, G.copy(), G.copy()], 1.0)
    np.testing.assert_allclose(res.weights.mu, 1 / 3)


def test_mkl_prefers_informative_kernel():
    # same kernel family on two features; only the first one carries the labels
    rng = np.random.default_rng(11)
    X = rng.uniform(size=(30, 2))
    y = np.where(X[:, 0] > 0.5, 1.0, -1.0)
    informative = gaussian_gram(X[:, :1], 0.3)
    noise = gaussian_gram(X[:, 1:], 0.3)
    C = 1.0
    res = learn_mkl(y, [informative, noise], C, tol=1e-6, max_iter=200)
    assert res.weights.mu[0] >= 0.9
    _, mu_ref = mu_grid_oracle(y, informative, noise, C)
    assert abs(res.weights.mu[0] - mu_ref) <= 0.01 + 1e-9


def test_mkl_rejects_indefinite():
    y = np.array([1.0, -1.0])
    with pytest.raises(ValueError):
        learn_mkl(y, [np.array([[1.0, 0.0], [0.0, -1.0]])], 1.0)
    with pytest.raises(ValueError):
        MKLWeights(np.array([0.7, 0.7]))


def test_cross_validate_tie_breaks_to_smaller_C():
    X = np.arange(20, dtype=float)[:, None]
    y = np.where(X[:, 0] < 10, -1, 1)
    res = cross_validate(X, y, [10.0, 0.1, 1.0], lambda *args: 1.0, folds=5, seed=0)
    assert res.best_C == 0.1
    assert res.flagged_folds == []


def test_cross_validate_picks_best():
    X = np.arange(20, dtype=float)[:, None]
    y = np.where(X[:, 0] < 10, -1, 1)
    res = cross_validate(X, y, [0.1, 1.0, 10.0], lambda Xt, yt, Xv, yv, C: 1.0 if C == 1.0 else 0.5, folds=4)
    assert res.best_C == 1.0
    assert res.mean_scores[0.1] == 0.5


def test_folds_deterministic_and_balanced():
    y = np.array([1, -1] * 5)
    f1, f2 = kfold(y, 5, seed=3), kfold(y, 5, seed=3)
    np.testing.assert_array_equal(f1, f2)
    assert np.all(np.bincount(f1) == 2)
