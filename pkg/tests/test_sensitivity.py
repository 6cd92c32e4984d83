import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.stats import chi2

from perfgame.algorithms import sir2_gamma
from perfgame.experiments import _rideshare_player
from perfgame.game import GameError, JointDecision, SampleBatch
from perfgame.sensitivity import (
    SensitivityState,
    chi2_coverage,
    concentration_report,
    covariance_top_eig,
    gradient_discrepancy,
    iteration_bound,
    update_eps_hat,
)


def test_gamma_example():
    assert sir2_gamma(np.array([0.3, 0.4]), 1.0, 2.1) == pytest.approx(0.05)
    assert sir2_gamma(np.array([0.01, 0.0]), 1.0, 2.1) == 0.0


@given(st.lists(st.tuples(st.floats(0, 10), st.floats(0, 5)), min_size=1, max_size=20))
def test_eps_hat_is_a_running_max(updates):
    state = SensitivityState.initial(1, 1e-3)
    best = 1e-3
    for t, (disc, step) in enumerate(updates, start=1):
        prev = state.eps_hat.copy()
        state = update_eps_hat(state, t, [disc], step)
        if step > 1e-12:
            best = max(best, disc / step)
        assert state.eps_hat[0] >= prev[0]
        assert state.eps_hat[0] == pytest.approx(best)
    assert len(state.history) == len(updates)


def test_guard_skips_tiny_steps():
    state = update_eps_hat(SensitivityState.initial(2, 0.5), 1, [1.0, 1.0], 1e-13)
    np.testing.assert_array_equal(state.eps_hat, [0.5, 0.5])
    with pytest.raises(GameError):
        update_eps_hat(state, 2, [1.0], 1.0)
    with pytest.raises(GameError):
        SensitivityState.initial(2, 0.0)


def test_gradient_discrepancy_is_batch_mean_difference():
    p = _rideshare_player(0, 2, 1.0)
    X = JointDecision.zeros((2, 2))
    new = SampleBatch(0, [[1.0, 2.0], [3.0, 4.0]])
    old = SampleBatch(0, [[0.0, 0.0]])
    # gradient is alpha x - z, so the discrepancy is ||mean z_new - mean z_old||
    assert gradient_discrepancy(p, X, new, old) == pytest.approx(math.hypot(2.0, 3.0))
    with pytest.raises(GameError):
        gradient_discrepancy(p, X, SampleBatch(1, [[0.0, 0.0]]), old)


@pytest.mark.parametrize("delta,gap,ratio,expected", [(0.01, 1.0, 0.5, 7), (0.5, 1.0, 0.5, 1), (1e-6, 1.0, 0.99, 1375)])
def test_iteration_bound_values(delta, gap, ratio, expected):
    assert iteration_bound(delta, gap, ratio) == expected


def test_iteration_bound_preconditions():
    with pytest.raises(ValueError):
        iteration_bound(0.1, 1.0, 1.0)
    with pytest.raises(ValueError):
        iteration_bound(2.0, 1.0, 0.5)


def test_chi2_coverage_values():
    # d=2 CDF is 1 - exp(-x/2); at 2 ln 2 it is one half
    assert chi2_coverage(1, math.sqrt(2 * math.log(2)), 1.0, 2) == pytest.approx(0.5, abs=1e-12)
    assert chi2_coverage(1, 1.0, 1.0, 1) == pytest.approx(0.6826894921370859, abs=1e-12)
    with pytest.raises(ValueError):
        chi2_coverage(0, 1.0, 1.0, 1)
    with pytest.raises(ValueError):
        chi2_coverage(1, 1.0, 1.0, 0)


@given(st.floats(1, 1e4), st.floats(1e-3, 2), st.floats(1e-3, 10), st.integers(1, 40))
def test_chi2_coverage_matches_scipy(m, delta, sigma, dof):
    assert chi2_coverage(m, delta, sigma, dof) == pytest.approx(chi2.cdf(m * delta ** 2 / sigma, dof), abs=1e-12)


@given(st.integers(0, 10_000), st.integers(1, 8))
def test_top_eig_matches_eigvalsh(seed, d):
    rng = np.random.default_rng(seed)
    G = rng.standard_normal((200, d)) * rng.uniform(0.1, 3.0, d)
    sigma, dof = covariance_top_eig(G)
    ref = np.linalg.eigvalsh(np.cov(G, rowvar=False, bias=True).reshape(d, d))[-1]
    assert dof == d
    assert sigma == pytest.approx(ref, rel=1e-6)


def test_concentration_report_degenerate():
    rep = concentration_report(np.ones((5, 2)), 5, 0.1)
    assert rep.sigma_hat == 0.0 and rep.coverage_prob == 1.0
    with pytest.raises(GameError):
        covariance_top_eig(np.ones((1, 2)))
