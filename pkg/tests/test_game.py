import numpy as np
import pytest
from hypothesis import given, strategies as st

from perfgame.experiments import (
    _regression_player,
    _rideshare_player,
    build_cournot_game,
    load_market_data,
    resolve_data_path,
)
from perfgame.game import (
    GameError,
    GameSpec,
    JointDecision,
    PlayerSpec,
    SampleBatch,
    batch_mean,
    check_strong_monotonicity,
    finite_difference_gradient,
    individual_gradients,
    per_sample_individual_gradients,
)

finite = st.floats(-3, 3, allow_nan=False)


def test_batch_mean_matches_numpy(rng):
    v = rng.standard_normal((257, 3))
    np.testing.assert_allclose(batch_mean(v), v.mean(axis=0), rtol=1e-14)
    assert batch_mean(np.array([2.0, 4.0])) == 3.0
    with pytest.raises(GameError):
        batch_mean(np.zeros((0, 2)))


def test_joint_decision_layout():
    X = JointDecision.assemble([[1.0, 2.0], [3.0]])
    assert X.dims == (2, 1)
    np.testing.assert_array_equal(X.slice(0), [1.0, 2.0])
    np.testing.assert_array_equal(X.minus(0), [3.0])
    np.testing.assert_array_equal(X.minus(1), [1.0, 2.0])
    with pytest.raises(GameError):
        JointDecision(np.zeros(3), ((0, 0, 2),))
    with pytest.raises(GameError):
        JointDecision(np.zeros(3), ((0, 0, 2), (1, 1, 1)))
    with pytest.raises(ValueError):
        X.values[0] = 5.0


def test_sample_batch_validates():
    b = SampleBatch(0, [1.0, 2.0])
    assert (b.m, b.width) == (2, 1)
    with pytest.raises(GameError):
        SampleBatch(0, np.zeros((0, 2)))


@given(st.lists(finite, min_size=10, max_size=10), st.lists(finite, min_size=10, max_size=10))
def test_regression_gradient_matches_finite_differences(x, xm):
    rng = np.random.default_rng(0)
    pts = rng.standard_normal((30, 11))
    p = _regression_player(0, 10)
    g = p.grad(np.array(x), np.array(xm), pts)
    fd = finite_difference_gradient(p, np.array(x), np.array(xm), pts)
    np.testing.assert_allclose(g, fd, rtol=1e-5, atol=1e-5)


@given(st.lists(finite, min_size=11, max_size=11), st.floats(0.0, 2.0))
def test_regularized_player_adds_gamma_x(x, gamma):
    rng = np.random.default_rng(1)
    pts = rng.uniform(1, 5, (20, 11))
    p = _rideshare_player(0, 11, 1.0)
    x = np.array(x)
    r = p.regularized(gamma)
    np.testing.assert_allclose(r.grad(x, x, pts), p.grad(x, x, pts) + gamma * x, atol=1e-12)
    np.testing.assert_allclose(r.grad(x, x, pts), finite_difference_gradient(r, x, x, pts), atol=1e-5)
    assert r.psi_contrib == pytest.approx(gamma)


def _cournot():
    data = load_market_data(resolve_data_path("crude_exports_synthetic.csv"), "cournot")
    return build_cournot_game(0.5, data)


def test_cournot_gradients_match_finite_differences():
    game, _ = _cournot()
    rng = np.random.default_rng(2)
    X = game.decision(rng.uniform(-1e6, 1e6, game.n))
    pts = 147.0 + 0.1 * rng.standard_normal((5, 1))
    for i, p in enumerate(game.players):
        g = p.grad(X.slice(i), X.minus(i), pts)
        fd = finite_difference_gradient(p, X.slice(i), X.minus(i), pts, h=10.0)
        np.testing.assert_allclose(g, fd, rtol=1e-6)


def test_strong_monotonicity_probe_on_cournot():
    game, _ = _cournot()
    rng = np.random.default_rng(3)
    batches = [SampleBatch(i, [[140.0]]) for i in range(game.n)]
    pairs = [(game.decision(rng.standard_normal(game.n)), game.decision(rng.standard_normal(game.n)))
             for _ in range(20)]
    assert check_strong_monotonicity(game, pairs, batches) >= game.psi * (1 - 1e-9)
    X = game.zeros()
    with pytest.raises(GameError):
        check_strong_monotonicity(game, [(X, X)], batches)


def test_individual_gradients_checks_inputs():
    p = _rideshare_player(0, 2, 1.0)
    q = _rideshare_player(1, 2, 1.0)
    game = GameSpec((p, q), 1.0)
    X = game.zeros()
    with pytest.raises(GameError):
        individual_gradients(game, X, [SampleBatch(0, np.ones((1, 2)))])
    with pytest.raises(GameError):
        individual_gradients(game, X, [SampleBatch(1, np.ones((1, 2))), SampleBatch(0, np.ones((1, 2)))])
    G = per_sample_individual_gradients(game, X, [SampleBatch(0, np.ones((4, 2))), SampleBatch(1, np.ones((4, 2)))])
    assert G.shape == (4, 4)


def test_game_spec_validation_and_projection():
    p = _rideshare_player(0, 2, 1.0)
    with pytest.raises(GameError):
        GameSpec((), 1.0)
    with pytest.raises(GameError):
        GameSpec((p,), -1.0)
    with pytest.raises(GameError):
        GameSpec((p,), 1.0, decision_box=(1.0, 1.0))
    game = GameSpec((p,), 1.0, decision_box=(-1.0, 1.0))
    np.testing.assert_array_equal(game.project(np.array([-3.0, 0.5])), [-1.0, 0.5])
    reg = game.regularized(0.5)
    assert reg.psi == 1.5 and reg.gamma == 0.5
    with pytest.raises(GameError):
        game.regularized(-0.1)


def test_player_spec_validation():
    f = lambda x, xm, pts: np.zeros(len(pts))
    with pytest.raises(GameError):
        PlayerSpec(0, 0, f, f)
    with pytest.raises(GameError):
        PlayerSpec(0, 1, f, f, psi_contrib=-1.0)
