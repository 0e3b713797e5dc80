import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gprmax import gp
from gprmax.gp import (ArdDiagonal, FactorAnalysis, KernelHyperparams, RegressionData, Uniform)
from oracles import central_difference, dense_gp, dense_nlml


def ard(v0, b, *theta):
    return KernelHyperparams(v0, b, ArdDiagonal(theta))


# ---------------------------------------------------------------------------
# kernel


def test_kernel_at_zero_distance_is_prior_variance():
    h = ard(1.7, 0.3, 2.0, 5.0)
    assert gp.kernel_eval([0.2, -1.0], [0.2, -1.0], h) == pytest.approx(2.0)
    assert h.prior_variance == pytest.approx(2.0)


def test_kernel_uniform_hand_value():
    h = KernelHyperparams(1.0, 0.0, Uniform(1.0))
    assert gp.kernel_eval([0.0], [2.0], h) == pytest.approx(0.135335283, abs=1e-9)


def test_kernel_ard_ignores_dimension_with_tiny_theta():
    h = ard(1.0, 0.0, 4.0, 1e-300)
    assert gp.kernel_eval([0.0, 5.0], [1.0, 9.0], h) == pytest.approx(math.exp(-2.0), rel=1e-12)


def test_kernel_dimension_mismatch_raises():
    with pytest.raises(ValueError):
        gp.kernel_eval([0.0], [0.0, 1.0], ard(1.0, 0.0, 1.0))
    with pytest.raises(ValueError):
        gp.kernel_eval([0.0, 1.0, 2.0], [0.0, 1.0, 2.0], ard(1.0, 0.0, 1.0, 1.0))


def test_factor_analysis_metric_evaluates():
    M = ((1.0, 0.0), (0.0, 2.0))
    h = KernelHyperparams(1.0, 0.0, FactorAnalysis(M))
    # Omega = M M^T = diag(1, 4)
    assert gp.kernel_eval([0, 0], [1, 1], h) == pytest.approx(math.exp(-0.5 * 5.0))


def test_kernel_matrix_matches_pointwise_evaluation():
    rng = np.random.default_rng(0)
    X1, X2 = rng.normal(size=(5, 3)), rng.normal(size=(4, 3))
    h = ard(1.3, 0.1, 0.5, 2.0, 1.0)
    K = gp.kernel_matrix(X1, X2, h)
    ref = np.array([[gp.kernel_eval(a, b, h) for b in X2] for a in X1])
    np.testing.assert_allclose(K, ref, rtol=1e-12, atol=1e-14)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=2, max_size=2),
       st.lists(st.floats(-5, 5), min_size=2, max_size=2),
       st.floats(0.01, 10), st.floats(0, 1), st.floats(0.01, 10), st.floats(0.01, 10))
def test_kernel_symmetry(x, y, v0, b, t1, t2):
    h = ard(v0, b, t1, t2)
    assert gp.kernel_eval(x, y, h) == gp.kernel_eval(y, x, h)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 20), st.integers(1, 3), st.integers(0, 10_000))
def test_gram_matrix_is_positive_semidefinite(n, dim, seed):
    rng = np.random.default_rng(seed)
    X = rng.uniform(-2, 2, size=(n, dim))
    h = ard(rng.uniform(0.1, 5), rng.uniform(0, 1), *rng.uniform(0.1, 50, dim))
    K = gp.kernel_matrix(X, X, h)
    assert np.linalg.eigvalsh(K).min() >= -1e-8 * h.prior_variance


def test_hyperparams_validation():
    with pytest.raises(ValueError):
        ard(0.0, 0.1, 1.0)
    with pytest.raises(ValueError):
        ard(1.0, -0.1, 1.0)
    with pytest.raises(ValueError):
        ard(1.0, 0.1, 1.0, 0.0)
    with pytest.raises(ValueError):
        KernelHyperparams(1.0, 0.0, Uniform(-1.0))


def test_hyperparams_dict_round_trip():
    for h in (ard(1.5, 0.2, 3.0, 4.0), KernelHyperparams(1.0, 0.0, Uniform(2.0)),
              KernelHyperparams(1.0, 0.0, FactorAnalysis(((1.0, 0.5),)))):
        assert KernelHyperparams.from_dict(h.to_dict()) == h


# ---------------------------------------------------------------------------
# incomplete Cholesky


def test_icd_single_point():
    assert gp.icd_select(np.array([[0.3]]), ard(1.0, 0.0, 1.0), 1e-2, 10) == [0]


def test_icd_duplicate_inputs_select_one():
    X = np.array([[0.5, 0.5], [0.5, 0.5]])
    assert len(gp.icd_select(X, ard(1.0, 0.0, 1.0, 1.0), 1e-2, 10)) == 1


def test_icd_full_rank_reconstruction_matches_dense():
    X = np.linspace(0, 1, 10)[:, None]
    h = ard(1.0, 0.0, 10.0)
    piv, G = gp.pivoted_cholesky(X, h, 0.0, 10)
    assert sorted(piv) == list(range(10))
    K = gp.kernel_matrix(X, X, h)
    np.testing.assert_allclose(G @ G.T, K, atol=1e-8)
    # pivot order: largest residual first, so the first pivot is index 0 (all ties)
    assert piv[0] == 0


def test_icd_respects_max_size_and_tolerance():
    X = np.random.default_rng(1).uniform(size=(100, 2))
    h = ard(1.0, 0.0, 100.0, 100.0)
    assert len(gp.icd_select(X, h, 1e-12, 7)) == 7
    piv, G = gp.pivoted_cholesky(X, h, 1e-2, 100)
    resid = np.diag(gp.kernel_matrix(X, X, h)) - (G**2).sum(1)
    assert resid.max() <= 1e-2 + 1e-12


def test_icd_rejects_bad_arguments():
    with pytest.raises(ValueError):
        gp.icd_select(np.zeros((2, 1)), ard(1.0, 0.0, 1.0), 1e-2, 0)
    with pytest.raises(ValueError):
        gp.icd_select(np.zeros((2, 1)), ard(1.0, 0.0, 1.0), -1.0, 3)


# ---------------------------------------------------------------------------
# fit / predict


def _normalized_data(rng, n, dim=1, f=np.sin):
    X = rng.uniform(0, 1, size=(n, dim))
    y = f(6 * X).sum(1)
    return RegressionData(X, y, np.zeros(dim), np.ones(dim))


def test_full_subset_matches_dense_gp_oracle():
    rng = np.random.default_rng(2)
    data = _normalized_data(rng, 40, 2)
    h = ard(1.2, 0.05, 8.0, 3.0)
    noise = 1e-2
    p = gp.fit(data, h, max_subset=40, icd_tol=0.0, noise=noise)
    Xs = rng.uniform(0, 1, size=(25, 2))
    mean, var = p.predict(Xs)
    Xn, yn = data.normalized()
    m_ref, v_ref = dense_gp(Xn, yn, Xs, 1.2, 0.05, (8.0, 3.0), noise)
    np.testing.assert_allclose(mean, m_ref * data.y_std + data.y_mean, atol=1e-8)
    np.testing.assert_allclose(var, v_ref * data.y_std**2, atol=1e-8)


def test_sparse_mean_close_to_full_gp():
    rng = np.random.default_rng(3)
    data = _normalized_data(rng, 200)
    h = ard(1.0, 0.01, 20.0)
    sparse = gp.fit(data, h, max_subset=50)
    full = gp.fit(data, h, max_subset=200, icd_tol=0.0)
    Xs = np.linspace(0, 1, 101)[:, None]
    diff = sparse.predict(Xs)[0] - full.predict(Xs)[0]
    assert np.sqrt(np.mean(diff**2)) < 1e-2


def test_exact_interpolation_of_three_points():
    X = np.array([[0.1], [0.5], [0.9]])
    y = np.array([1.0, -2.0, 0.5])
    data = RegressionData(X, y, [0.0], [1.0])
    p = gp.fit(data, ard(1.0, 0.0, 10.0))
    mean, var = p.predict(X)
    _, yn = data.normalized()
    assert np.max(np.abs((mean - data.y_mean) / data.y_std - yn)) < 1e-4
    assert np.all(var < 1e-6 * p.prior_variance)


def test_duplicate_inputs_fit():
    X = np.array([[0.2], [0.2], [0.7]])
    p = gp.fit(RegressionData(X, [1.0, 1.0, 0.0], [0.0], [1.0]), ard(1.0, 0.0, 5.0), icd_tol=0.0)
    assert np.allclose(p.predict(X)[0], [1.0, 1.0, 0.0], atol=1e-3)


def test_far_query_recovers_prior():
    data = RegressionData([[0.0], [0.1]], [1.0, 3.0], [0.0], [1.0])
    p = gp.fit(data, ard(1.0, 0.0, 1e4))
    mean, var = gp.predict(p, [1.0])
    assert var >= 0.99 * p.prior_variance
    assert mean == pytest.approx(data.y_mean, abs=1e-6)


def test_symmetric_observations_give_zero_midpoint_mean():
    data = RegressionData([[-1.0], [1.0]], [1.0, -1.0], [-2.0], [2.0])
    p = gp.fit(data, ard(1.0, 0.0, 4.0))
    assert gp.predict(p, [0.0])[0] == pytest.approx(0.0, abs=1e-8)


def test_predict_dimension_mismatch():
    p = gp.fit(RegressionData([[0.0, 0.0], [1.0, 1.0]], [0.0, 1.0]), ard(1.0, 0.0, 1.0, 1.0))
    with pytest.raises(ValueError):
        p.predict(np.zeros((1, 3)))


def test_active_set_bounded_by_max_subset():
    rng = np.random.default_rng(4)
    p = gp.fit(_normalized_data(rng, 300, 2), ard(1.0, 0.0, 400.0, 400.0), max_subset=20)
    assert len(p.active_set) <= 20


def test_factorization_failure_reports_jitters(monkeypatch):
    def always_fail(A, lower=True):
        raise np.linalg.LinAlgError("not PD")
    monkeypatch.setattr(gp.sla, "cholesky", always_fail)
    with pytest.raises(gp.GpNumericalError) as info:
        gp.fit(RegressionData([[0.0]], [1.0]), ard(1.0, 0.0, 1.0))
    assert info.value.jitters == gp.JITTER_LEVELS


def test_predictor_dict_round_trip():
    rng = np.random.default_rng(5)
    p = gp.fit(_normalized_data(rng, 30, 2), ard(1.0, 0.1, 5.0, 2.0))
    q = gp.GpPredictor.from_dict(p.to_dict())
    Xs = rng.uniform(size=(10, 2))
    for a, b in zip(p.predict(Xs), q.predict(Xs)):
        np.testing.assert_array_equal(a, b)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 25))
def test_variance_bounded_and_shrinks_with_more_data(seed, n):
    rng = np.random.default_rng(seed)
    X = rng.uniform(size=(n + 1, 2))
    y = rng.normal(size=n + 1)
    h = ard(1.0, 0.01, *rng.uniform(1, 50, 2))
    Xs = rng.uniform(size=(20, 2))
    small = gp.fit(RegressionData(X[:n], y[:n], [0, 0], [1, 1]), h, icd_tol=0.0)
    big = gp.fit(RegressionData(X, y, [0, 0], [1, 1]), h, icd_tol=0.0)
    v_small = small.normalized_variance(Xs)
    v_big = big.normalized_variance(Xs)
    assert np.all(v_small >= 0) and np.all(v_small <= 1)
    assert np.all(v_big <= v_small + 1e-6)


# ---------------------------------------------------------------------------
# marginal likelihood


def test_nlml_matches_dense_oracle():
    rng = np.random.default_rng(6)
    X, y = rng.uniform(size=(15, 2)), rng.normal(size=15)
    h = ard(0.8, 0.2, 3.0, 7.0)
    val, _ = gp.neg_log_marginal_likelihood(X, y, h)
    assert val == pytest.approx(dense_nlml(X, y, 0.8, 0.2, (3.0, 7.0), gp.NOISE_FLOOR), rel=1e-9)


def test_nlml_single_zero_observation_closed_form():
    h = ard(1.3, 0.2, 1.0)
    val, _ = gp.neg_log_marginal_likelihood(np.array([[0.4]]), np.array([0.0]), h)
    assert val == pytest.approx(0.5 * math.log(2 * math.pi * (1.5 + gp.NOISE_FLOOR)), rel=1e-12)


@pytest.mark.parametrize("seed", range(5))
@pytest.mark.parametrize("kind", [ArdDiagonal, Uniform])
def test_nlml_gradient_matches_finite_differences(seed, kind):
    rng = np.random.default_rng(seed)
    dim = 1 if seed % 2 else 2
    X, y = rng.uniform(size=(20, dim)), rng.normal(size=20)
    n_theta = 1 if kind is Uniform else dim
    p = np.concatenate([rng.uniform(-1, 1, 1), rng.uniform(-3, 0, 1), rng.uniform(0, 3, n_theta)])

    def f(q):
        return gp.neg_log_marginal_likelihood(X, y, KernelHyperparams.from_log_params(q, kind),
                                              noise=1e-2)[0]

    _, grad = gp.neg_log_marginal_likelihood(X, y, KernelHyperparams.from_log_params(p, kind),
                                             noise=1e-2)
    fd = central_difference(f, p)
    assert np.max(np.abs(grad - fd) / np.maximum(np.abs(fd), 1e-3)) < 1e-4


def test_nlml_rejects_factor_analysis():
    h = KernelHyperparams(1.0, 0.0, FactorAnalysis(((1.0,),)))
    with pytest.raises(NotImplementedError):
        gp.neg_log_marginal_likelihood(np.zeros((2, 1)), np.zeros(2), h)


# ---------------------------------------------------------------------------
# hyperparameter optimization


def test_ard_recovers_irrelevant_dimension():
    rng = np.random.default_rng(7)
    X = rng.uniform(size=(300, 2))
    y = np.sin(6 * X[:, 0])
    hf = gp.optimize_hyperparams(RegressionData(X, y, [0, 0], [1, 1]), ArdDiagonal, seed=0)
    t1, t2 = hf.hyperparams.metric.theta
    assert not hf.degraded
    assert t2 < 0.01 * t1


def test_target_scaling_shifts_signal_variance():
    # raw (unstandardized) targets: scaling y by c scales the optimal v0 by c^2
    rng = np.random.default_rng(8)
    X = rng.uniform(size=(60, 1))
    y = np.sin(5 * X[:, 0])
    c = 3.0
    a = gp.optimize_hyperparams(X, ArdDiagonal, restarts=4, seed=1, y=y, noise=1e-4)
    b = gp.optimize_hyperparams(X, ArdDiagonal, restarts=4, seed=1, y=c * y, noise=c**2 * 1e-4,
                                init=KernelHyperparams(a.hyperparams.signal_variance * c**2,
                                                       a.hyperparams.bias * c**2,
                                                       a.hyperparams.metric))
    ratio = b.hyperparams.signal_variance / a.hyperparams.signal_variance
    assert ratio == pytest.approx(c**2, rel=5e-2)


def test_constant_targets_give_constant_predictions():
    rng = np.random.default_rng(9)
    X = rng.uniform(size=(50, 2))
    data = RegressionData(X, np.full(50, 2.5), [0, 0], [1, 1])
    hf = gp.optimize_hyperparams(data, ArdDiagonal, seed=0)
    p = gp.fit(data, hf.hyperparams)
    mean, _ = p.predict(rng.uniform(size=(30, 2)))
    assert np.ptp(mean) < 1e-3
    assert np.allclose(mean, 2.5, atol=1e-3)


def test_optimization_is_deterministic_given_seed():
    rng = np.random.default_rng(10)
    data = _normalized_data(rng, 80, 2)
    a = gp.optimize_hyperparams(data, ArdDiagonal, subsample_size=40, seed=3)
    b = gp.optimize_hyperparams(data, ArdDiagonal, subsample_size=40, seed=3)
    assert a == b


def test_all_restarts_failing_returns_degraded_default(monkeypatch):
    def broken(*args, **kwargs):
        raise np.linalg.LinAlgError("boom")
    monkeypatch.setattr(gp, "_nlml_from_sqdiff", broken)
    data = _normalized_data(np.random.default_rng(11), 10, 2)
    hf = gp.optimize_hyperparams(data, ArdDiagonal, seed=0)
    assert hf.degraded
    assert hf.hyperparams == gp.default_hyperparams(2, ArdDiagonal)


def test_factor_analysis_is_not_optimized():
    with pytest.raises(NotImplementedError):
        gp.optimize_hyperparams(np.zeros((3, 1)), FactorAnalysis, y=np.zeros(3))
