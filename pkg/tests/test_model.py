import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gprmax import model as M
from gprmax.environments import make_env
from gprmax.model import DynamicsModel, GpConfig, TransitionDataset

FAST = GpConfig(restarts=2, subsample_size=200)


class ShiftEnv:
    """x' = x + 0.1 on [0, 1] with two actions; action 1 is never taken."""

    lower = np.array([0.0])
    upper = np.array([1.0])
    periodic = (False,)
    n_actions = 2


def _collect(env, n, seed=0, actions=None):
    rng = np.random.default_rng(seed)
    data = TransitionDataset(env.dim, env.n_actions)
    X = rng.uniform(env.lower, env.upper, size=(n, env.dim))
    for x in X:
        a = int(rng.integers(env.n_actions)) if actions is None else actions
        data.append(x, a, env.transition(x[None, :], a)[0])
    return data


def test_dataset_partitions_by_action():
    data = TransitionDataset(2, 3)
    data.append([0, 0], 1, [1, 1])
    data.append([1, 0], 0, [2, 0])
    data.append([0, 2], 1, [0, 3])
    X, Xn = data.for_action(1)
    np.testing.assert_array_equal(X, [[0, 0], [0, 2]])
    np.testing.assert_array_equal(Xn, [[1, 1], [0, 3]])
    assert len(data.for_action(2)[0]) == 0
    with pytest.raises(ValueError):
        data.append([0, 0], 3, [0, 0])


def test_dataset_rows_round_trip():
    data = _collect(make_env("mountain_car"), 20)
    back = TransitionDataset.from_rows(data.to_rows(), 2, 3)
    np.testing.assert_array_equal(back.to_rows(), data.to_rows())
    assert len(data.head(5)) == 5


def test_empty_model_is_fully_uncertain():
    env = make_env("mountain_car")
    m = M.update_model(DynamicsModel.empty(env), TransitionDataset(2, 3), FAST)
    X = np.random.default_rng(0).uniform(env.lower, env.upper, size=(10, 2))
    for a in range(3):
        Z, c = m.predict_batch(X, a)
        np.testing.assert_array_equal(Z, X)
        np.testing.assert_array_equal(c, 1.0)


def test_unvisited_action_predicts_no_change():
    env = ShiftEnv()
    data = TransitionDataset(1, 2)
    for x in np.linspace(0.05, 0.85, 5):
        data.append([x], 0, [x + 0.1])
    m = M.update_model(DynamicsModel(env.lower, env.upper, env.periodic, 2), data, FAST, seed=0)
    pred = m.predict([0.4], 1)
    assert pred.uncertainty == 1.0
    assert pred.successor[0] == 0.4
    assert not m.is_fitted(1) and m.is_fitted(0)
    assert m.trained_counts == [[5, 0]]


def test_constant_shift_is_learned():
    env = ShiftEnv()
    data = TransitionDataset(1, 2)
    for x in np.linspace(0.05, 0.85, 5):
        data.append([x], 0, [x + 0.1])
    m = M.update_model(DynamicsModel(env.lower, env.upper, env.periodic, 2), data, FAST, seed=0)
    xs = np.linspace(0.05, 0.85, 33)[:, None]
    Z, _ = m.predict_batch(xs, 0)
    np.testing.assert_allclose(Z[:, 0] - xs[:, 0], 0.1, atol=1e-3)


def test_training_inputs_are_known_and_far_points_unknown():
    env = make_env("mountain_car")
    data = _collect(env, 60, seed=1, actions=2)
    m = M.update_model(DynamicsModel.empty(env), data, FAST, seed=0)
    _, c = m.predict_batch(data.states, 2)
    assert np.all(c < 0.01)
    # all lengthscales are finite, so a point far outside the sampled box
    # (the model accepts any query) is at prior variance
    far = np.array([[1e3, 1e3]])
    assert m.dimension_uncertainty(far, 2).min() > 0.99


def test_successor_wraps_periodic_angle():
    env = make_env("pendulum")
    data = TransitionDataset(2, env.n_actions)
    # constant positive angle change of 0.3 everywhere, zero velocity change
    rng = np.random.default_rng(0)
    for x in rng.uniform([-3.0, -1.0], [3.0, 1.0], size=(40, 2)):
        xn = np.array([x[0] + 0.3, x[1]])
        xn[0] = (xn[0] + math.pi) % (2 * math.pi) - math.pi
        data.append(x, 0, xn)
    m = M.update_model(DynamicsModel.empty(env), data, FAST, seed=0)
    z = m.predict([math.pi - 0.05, 0.0], 0).successor
    assert -math.pi <= z[0] < -math.pi + 0.5
    assert z[0] == pytest.approx(-math.pi + 0.25, abs=0.02)


def test_wrapped_training_targets_take_the_short_way():
    env = make_env("pendulum")
    X = np.array([[3.1, 0.0]])
    Xn = np.array([[-3.1, 0.0]])
    d = M.coordinate_change(env, X, Xn)
    assert d[0, 0] == pytest.approx(2 * math.pi - 6.2)


def test_prior_variance_positive_and_serialization_round_trip():
    env = make_env("mountain_car")
    m = M.update_model(DynamicsModel.empty(env), _collect(env, 40), FAST, seed=3)
    assert all(v > 0 for row in m.prior_variance for v in row if v is not None)
    back = DynamicsModel.from_dict(m.to_dict())
    X = np.random.default_rng(1).uniform(env.lower, env.upper, size=(15, 2))
    for a in range(3):
        for u, v in zip(m.predict_batch(X, a), back.predict_batch(X, a)):
            np.testing.assert_array_equal(u, v)
    bad = m.to_dict()
    bad["format_version"] = 99
    with pytest.raises(ValueError):
        DynamicsModel.from_dict(bad)


def test_update_is_deterministic_given_seed():
    env = make_env("mountain_car")
    data = _collect(env, 50)
    m1 = M.update_model(DynamicsModel.empty(env), data, FAST, seed=7)
    m2 = M.update_model(DynamicsModel.empty(env), data, FAST, seed=7)
    X = M.probe_points(env.lower, env.upper, 5)
    for a in range(3):
        np.testing.assert_array_equal(m1.predict_batch(X, a)[0], m2.predict_batch(X, a)[0])


def test_adding_a_transition_makes_it_known():
    env = make_env("mountain_car")
    data = _collect(env, 30, seed=5)
    x = np.array([-0.9, 0.05])
    data.append(x, 1, env.transition(x[None, :], 1)[0])
    m = M.update_model(DynamicsModel.empty(env), data, FAST, seed=0)
    assert m.predict(x, 1).uncertainty < 0.05


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 1000), st.integers(1, 30))
def test_uncertainty_in_unit_interval(seed, n):
    env = make_env("mountain_car")
    m = M.update_model(DynamicsModel.empty(env), _collect(env, n, seed), GpConfig(restarts=1),
                       seed=seed)
    X = np.random.default_rng(seed).uniform(env.lower, env.upper, size=(50, 2))
    for a in range(3):
        Z, c = m.predict_batch(X, a)
        assert np.all((c >= 0) & (c <= 1))
        assert np.all((Z >= env.lower) & (Z <= env.upper))


def test_stopping_criterion():
    env = make_env("mountain_car")
    data = _collect(env, 40)
    empty = DynamicsModel.empty(env)
    m = M.update_model(empty, data, FAST, seed=0)
    pts = M.probe_points(env.lower, env.upper)
    assert len(pts) == 81
    assert M.stopping_criterion(m, m, pts, 1e-12, 1e-12)
    assert not M.stopping_criterion(m, empty, pts, 1e-3, 0.99)
    with pytest.raises(ValueError):
        M.stopping_criterion(m, m, np.empty((0, 2)))


def test_unknown_metric_rejected():
    with pytest.raises(ValueError):
        GpConfig(metric="cosine").metric_class
