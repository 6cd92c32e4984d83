import numpy as np
import pytest
from hypothesis import given, strategies as st

from perfgame.game import GameError, JointDecision
from perfgame.maps import (
    CustomParams,
    DistributionMap,
    LinearShiftParams,
    LogisticDemandParams,
    SinhPriceParams,
    induce,
    sample,
    sample_all,
    stream_generator,
)


def _logistic(d=3):
    z0 = np.arange(1.0, d + 1)
    return LogisticDemandParams(z0, -0.5 * np.eye(d), 0.2 * np.eye(d))


def test_logistic_at_zero_is_initial_demand():
    p = _logistic()
    X = JointDecision.zeros((3, 3))
    np.testing.assert_allclose(induce(DistributionMap("logistic-demand", p, 0), X).mean(), p.z_initial)


def test_logistic_extremes_do_not_overflow():
    p = _logistic()
    X = JointDecision.assemble([np.full(3, 1e4), np.full(3, -1e4)])
    z = induce(DistributionMap("logistic-demand", p, 0), X).mean()
    assert np.all(np.isfinite(z)) and np.all(z >= 0)
    X = JointDecision.assemble([np.full(3, -1e4), np.zeros(3)])
    np.testing.assert_allclose(induce(DistributionMap("logistic-demand", p, 0), X).mean(), 2 * p.z_initial)


def test_logistic_params_enforce_signs():
    with pytest.raises(GameError):
        LogisticDemandParams([1.0], [[0.1]], [[0.1]])
    with pytest.raises(GameError):
        LogisticDemandParams([1.0], [[-0.1]], [[-0.1]])
    with pytest.raises(GameError):
        LogisticDemandParams([0.0], [[-0.1]], [[0.1]])


def test_sinh_price_intercept():
    X0 = JointDecision.zeros((1, 1))
    m = DistributionMap("sinh-price", SinhPriceParams(147.27, 0.5), 0)
    assert induce(m, X0).mean()[0] == 147.27
    X = JointDecision.assemble([[3.0], [4.0]])
    shift1 = 147.27 - induce(m, X).mean()[0]
    m2 = DistributionMap("sinh-price", SinhPriceParams(147.27, 1.0), 0)
    shift2 = 147.27 - induce(m2, X).mean()[0]
    assert shift2 == pytest.approx(2 * shift1, rel=1e-12)


def test_linear_shift_mean():
    theta = np.ones((4, 2))
    b = np.array([1.0, -1.0])
    C = (np.eye(2), 2 * np.eye(2))
    a = (np.array([1.0, 0.0]), np.array([0.0, 3.0]))
    p = LinearShiftParams(theta, b, C, a)
    m = DistributionMap("linear-shift", p, 0)
    X = JointDecision.assemble([[1.0, 0.0], [0.0, 1.0]])
    rows = induce(m, X).mean_rows
    np.testing.assert_allclose(rows[:, :2], np.ones((4, 2)) + np.array([1.0, 2.0]))
    np.testing.assert_allclose(rows[:, 2], 0.0 + 1.0 + 3.0)
    with pytest.raises(GameError):
        induce(m, JointDecision.zeros((3, 1)))
    with pytest.raises(GameError):
        LinearShiftParams(theta, b, (np.eye(3),), (np.ones(3),))


def test_map_validation():
    with pytest.raises(GameError):
        DistributionMap("nope", None, 0)
    with pytest.raises(GameError):
        DistributionMap("sinh-price", _logistic(), 0)
    with pytest.raises(GameError):
        DistributionMap("sinh-price", SinhPriceParams(1.0, 1.0), 0, noise_std=-1)


@given(st.lists(st.integers(0, 2 ** 31), min_size=1, max_size=4))
def test_sampling_is_a_pure_function_of_position(pos):
    m = DistributionMap("sinh-price", SinhPriceParams(10.0, 1.0), 0, noise_std=0.1)
    X = JointDecision.zeros((1,))
    a = sample(m, X, 7, tuple(pos))
    b = sample(m, X, 7, tuple(pos))
    np.testing.assert_array_equal(a.points, b.points)
    c = sample(m, X, 7, tuple(pos) + (1,))
    assert not np.array_equal(a.points, c.points)


def test_noise_has_requested_scale():
    m = DistributionMap("custom", CustomParams(lambda X: np.zeros((1, 2))), 0, noise_std=0.1)
    pts = sample(m, JointDecision.zeros((1,)), 50_000, (0,)).points
    np.testing.assert_allclose(pts.std(axis=0), 0.1, rtol=0.02)
    np.testing.assert_allclose(pts.mean(axis=0), 0.0, atol=3e-3)


def test_noiseless_sample_repeats_mean_rows():
    rows = np.array([[1.0, 2.0], [3.0, 4.0]])
    m = DistributionMap("custom", CustomParams(lambda X: rows), 0)
    pts = sample(m, JointDecision.zeros((1,)), 5, (0,)).points
    np.testing.assert_array_equal(pts, rows[[0, 1, 0, 1, 0]])


def test_sample_all_appends_player_index():
    ms = [DistributionMap("sinh-price", SinhPriceParams(10.0, 1.0), i, 0.1, "s") for i in range(2)]
    X = JointDecision.zeros((1, 1))
    b = sample_all(ms, X, 3, (5,))
    np.testing.assert_array_equal(b[1].points, sample(ms[1], X, 3, (5, 1)).points)
    assert [bt.player for bt in b] == [0, 1]


def test_stream_generator_rejects_negative_positions():
    with pytest.raises(GameError):
        stream_generator("s", (-1,))
    a = stream_generator("s", 3).standard_normal(2)
    b = stream_generator("s", (3,)).standard_normal(2)
    np.testing.assert_array_equal(a, b)
    with pytest.raises(GameError):
        sample(DistributionMap("sinh-price", SinhPriceParams(1.0, 1.0), 0), JointDecision.zeros((1,)), 0, (0,))
