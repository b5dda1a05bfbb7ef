import numpy as np
import pytest
from scipy import sparse

from shiftlr.data import SparseDataset
from shiftlr.solver import (
    FitOptions,
    GlmFit,
    PenaltySpec,
    fit_path,
    fit_penalized,
    linear_predictor,
    negative_penalized_loglik,
    predict_labels,
    predict_proba,
    smooth_gradient,
)


def random_problem(rng, n=60, m=8, weighted=True):
    X = rng.normal(0.0, 1.5, (n, m))
    X[rng.uniform(size=(n, m)) < 0.3] = 0.0
    theta = rng.normal(0.0, 1.0, m)
    p = 1.0 / (1.0 + np.exp(-(X @ theta + 0.2)))
    y = (rng.uniform(size=n) < p).astype(int)
    w = rng.uniform(0.5, 2.0, n) if weighted else None
    return SparseDataset.from_dense(X, y, w)


# ---------------------------------------------------------------- objective


def test_objective_all_half_is_n_log2():
    d = SparseDataset.from_dense(np.zeros((7, 3)), [1, 0, 1, 1, 0, 0, 1])
    val = negative_penalized_loglik(d, 0.0, np.zeros(3))
    assert val == pytest.approx(7 * np.log(2.0), rel=1e-15)


def test_objective_single_example():
    d = SparseDataset.from_dense(np.array([[1.0]]), [1])
    b = np.array([2.5])
    # -log g(2.5)
    assert negative_penalized_loglik(d, 0.0, b) == pytest.approx(
        np.log(1.0 + np.exp(-2.5)), rel=1e-14
    )
    d0 = SparseDataset.from_dense(np.array([[1.0]]), [0])
    assert negative_penalized_loglik(d0, 0.0, b) == pytest.approx(
        np.log(1.0 + np.exp(2.5)), rel=1e-14
    )


def test_objective_weights_scale_loss():
    rng = np.random.default_rng(0)
    d = random_problem(rng, weighted=False)
    d3 = d.with_weights(np.full(d.n_rows, 3.0))
    b = rng.normal(size=d.n_features)
    assert negative_penalized_loglik(d3, 0.1, b) == pytest.approx(
        3.0 * negative_penalized_loglik(d, 0.1, b), rel=1e-14
    )


def test_objective_penalty_additivity():
    rng = np.random.default_rng(1)
    d = random_problem(rng)
    b = rng.normal(size=d.n_features)
    l1f = rng.uniform(0, 2, d.n_features)
    l2f = rng.uniform(0, 2, d.n_features)
    pen = PenaltySpec(l1=0.7, l2=0.3, l1_factors=l1f, l2_factors=l2f)
    bare = negative_penalized_loglik(d, -0.4, b)
    full = negative_penalized_loglik(d, -0.4, b, pen)
    expected = bare + 0.3 * np.sum(l2f * b**2) + 0.7 * np.sum(l1f * np.abs(b))
    assert full == pytest.approx(expected, rel=1e-14)


def test_objective_stable_at_extreme_scores():
    d = SparseDataset.from_dense(np.array([[1.0], [1.0]]), [1, 0])
    val = negative_penalized_loglik(d, 0.0, np.array([800.0]))
    assert np.isfinite(val)
    assert val == pytest.approx(800.0, rel=1e-12)  # dominated by the y=0 row


def test_objective_is_convex_along_segments():
    rng = np.random.default_rng(2)
    d = random_problem(rng)
    m = d.n_features
    pen = PenaltySpec(l2=0.2)
    for _ in range(100):
        pa = rng.normal(0, 3, m + 1)
        pb = rng.normal(0, 3, m + 1)
        t = rng.uniform(0.05, 0.95)
        mid = t * pa + (1 - t) * pb
        fa = negative_penalized_loglik(d, pa[0], pa[1:], pen)
        fb = negative_penalized_loglik(d, pb[0], pb[1:], pen)
        fm = negative_penalized_loglik(d, mid[0], mid[1:], pen)
        assert fm <= t * fa + (1 - t) * fb + 1e-9


# ----------------------------------------------------------------- gradient


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(3)
    h = 1e-6
    for _ in range(20):
        d = random_problem(rng, n=40, m=5)
        pen = PenaltySpec(l2=rng.uniform(0, 1), l2_factors=rng.uniform(0, 2, 5))
        b0 = rng.normal()
        b = rng.normal(0, 1, 5)
        g0, g = smooth_gradient(d, b0, b, pen)

        fd0 = (
            negative_penalized_loglik(d, b0 + h, b, pen)
            - negative_penalized_loglik(d, b0 - h, b, pen)
        ) / (2 * h)
        assert abs(g0 - fd0) <= 1e-6 * max(1.0, abs(fd0))
        for j in range(5):
            e = np.zeros(5)
            e[j] = h
            fd = (
                negative_penalized_loglik(d, b0, b + e, pen)
                - negative_penalized_loglik(d, b0, b - e, pen)
            ) / (2 * h)
            assert abs(g[j] - fd) <= 1e-6 * max(1.0, abs(fd))


# ---------------------------------------------------------------------- fit


def test_fit_unpenalized_matches_scipy():
    from scipy import optimize

    rng = np.random.default_rng(4)
    d = random_problem(rng, n=120, m=6)
    fit = fit_penalized(d)
    assert fit.converged

    res = optimize.minimize(
        lambda p: negative_penalized_loglik(d, p[0], p[1:]),
        np.zeros(7),
        method="L-BFGS-B",
        options=dict(ftol=1e-15, gtol=1e-10, maxiter=5000),
    )
    assert fit.objective_value == pytest.approx(res.fun, abs=1e-9)
    np.testing.assert_allclose(fit.coefficients, res.x[1:], atol=1e-6)


def test_fit_at_optimum_beats_random_perturbations():
    rng = np.random.default_rng(5)
    d = random_problem(rng, n=80, m=6)
    pen = PenaltySpec(l1=0.8, l2=0.1, l1_factors=rng.uniform(0, 2, 6))
    fit = fit_penalized(d, pen)
    assert fit.converged
    base = negative_penalized_loglik(d, fit.intercept, fit.coefficients, pen)
    for scale in (1e-4, 1e-3, 1e-2):
        for _ in range(100):
            db0 = rng.normal(0, scale)
            db = rng.normal(0, scale, 6)
            val = negative_penalized_loglik(
                d, fit.intercept + db0, fit.coefficients + db, pen
            )
            assert val >= base - 1e-12


def test_fit_trace_is_monotone_descent():
    rng = np.random.default_rng(6)
    d = random_problem(rng, n=100, m=10)
    fit = fit_penalized(d, PenaltySpec(l1=0.5))
    tr = fit.objective_trace
    assert tr.size == fit.n_iterations
    assert np.all(np.diff(tr) <= 1e-9)
    assert fit.objective_value == tr[-1]


def test_fit_exact_zeros_and_intercept_only_limit():
    rng = np.random.default_rng(7)
    d = random_problem(rng, n=90, m=7)
    fit = fit_penalized(d, PenaltySpec(l1=1e4))
    assert np.all(fit.coefficients == 0.0)
    wbar = np.sum(d.weights * d.labels) / np.sum(d.weights)
    assert fit.intercept == pytest.approx(np.log(wbar / (1 - wbar)), abs=1e-6)


def test_fit_no_subthreshold_magnitudes_along_path():
    rng = np.random.default_rng(8)
    d = random_problem(rng, n=100, m=12)
    fits = fit_path(d, PenaltySpec(), np.geomspace(20.0, 0.01, 15))
    for f in fits:
        nz = f.coefficients[f.coefficients != 0.0]
        assert nz.size == 0 or np.min(np.abs(nz)) >= 1e-12


def test_fit_zero_factor_block_unpenalized():
    rng = np.random.default_rng(9)
    d = random_problem(rng, n=80, m=4)
    pen = PenaltySpec(l1=50.0, l1_factors=np.array([0.0, 0.0, 1.0, 1.0]))
    fit = fit_penalized(d, pen)
    assert fit.coefficients[2] == 0.0 and fit.coefficients[3] == 0.0
    # free block still fits the loss: gradient there must vanish
    _, g = smooth_gradient(d, fit.intercept, fit.coefficients, pen)
    assert abs(g[0]) <= 1e-6 and abs(g[1]) <= 1e-6
    assert fit.coefficients[0] != 0.0 or fit.coefficients[1] != 0.0


def test_fit_integer_weights_equal_duplicated_rows():
    rng = np.random.default_rng(10)
    d = random_problem(rng, n=40, m=5, weighted=False)
    reps = rng.integers(1, 4, d.n_rows)
    dup_rows = np.repeat(np.arange(d.n_rows), reps)
    d_dup = d.subset(dup_rows)
    d_w = d.with_weights(reps.astype(float))
    pen = PenaltySpec(l1=0.3, l2=0.05)
    f1 = fit_penalized(d_dup, pen)
    f2 = fit_penalized(d_w, pen)
    assert f1.intercept == pytest.approx(f2.intercept, abs=1e-6)
    np.testing.assert_allclose(f1.coefficients, f2.coefficients, atol=1e-6)


def test_fit_warm_start_agrees_with_cold():
    rng = np.random.default_rng(11)
    d = random_problem(rng, n=100, m=8)
    pen = PenaltySpec(l1=0.4)
    cold = fit_penalized(d, pen)
    other = fit_penalized(d, PenaltySpec(l1=2.0))
    warm = fit_penalized(d, pen, FitOptions(warm_start=other))
    assert warm.intercept == pytest.approx(cold.intercept, abs=1e-5)
    np.testing.assert_allclose(warm.coefficients, cold.coefficients, atol=1e-5)


def test_fit_deterministic_repeat():
    rng = np.random.default_rng(12)
    d = random_problem(rng)
    pen = PenaltySpec(l1=0.2, l2=0.1)
    f1 = fit_penalized(d, pen)
    f2 = fit_penalized(d, pen)
    assert f1.intercept == f2.intercept
    assert np.array_equal(f1.coefficients, f2.coefficients)
    assert f1.objective_value == f2.objective_value


def test_fit_max_iterations_reports_nonconverged():
    rng = np.random.default_rng(13)
    d = random_problem(rng, n=200, m=15)
    fit = fit_penalized(d, options=FitOptions(tolerance=1e-12, max_iterations=2))
    assert not fit.converged
    assert fit.n_iterations == 2
    assert np.isfinite(fit.kkt_violation)


def test_fit_path_rejects_ascending():
    rng = np.random.default_rng(14)
    d = random_problem(rng, n=30, m=3)
    with pytest.raises(ValueError):
        fit_path(d, PenaltySpec(), [0.1, 0.5])
    fits = fit_path(d, PenaltySpec(), [0.5, 0.5])  # ties allowed
    assert len(fits) == 2
    assert fits[0].objective_value == pytest.approx(fits[1].objective_value, abs=1e-8)


def test_penalty_validation():
    with pytest.raises(ValueError):
        PenaltySpec(l1=-1.0)
    with pytest.raises(ValueError):
        PenaltySpec(l1_factors=np.array([-0.5, 1.0]))
    rng = np.random.default_rng(15)
    d = random_problem(rng, n=20, m=4)
    with pytest.raises(ValueError):
        fit_penalized(d, PenaltySpec(l1=1.0, l1_factors=np.ones(3)))


# ------------------------------------------------------------------ predict


def test_predict_probability_tie_goes_to_class_zero():
    fit = GlmFit(0.0, np.zeros(2), 0.0, 1, True, 0.0, np.zeros(1))
    X = sparse.csr_matrix(np.array([[5.0, -3.0]]))
    assert predict_proba(X, fit)[0] == 0.5
    assert predict_labels(X, fit)[0] == 0


def test_predict_matches_manual_scores():
    fit = GlmFit(-1.0, np.array([2.0, 0.5]), 0.0, 1, True, 0.0, np.zeros(1))
    X = np.array([[1.0, 2.0], [0.0, 0.0], [-1.0, 0.0]])
    np.testing.assert_allclose(linear_predictor(X, fit), [2.0, -1.0, -3.0])
    np.testing.assert_array_equal(predict_labels(X, fit), [1, 0, 0])
