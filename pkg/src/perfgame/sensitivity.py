"""Gradient-based sensitivity estimates and finite-sample diagnostics."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammainc

from perfgame.game import GameError, JointDecision, PlayerSpec, SampleBatch

__all__ = [
    "STEP_GUARD",
    "SensitivityState",
    "ConcentrationReport",
    "gradient_discrepancy",
    "update_eps_hat",
    "chi2_coverage",
    "covariance_top_eig",
    "concentration_report",
    "iteration_bound",
]

STEP_GUARD = 1e-12


@dataclass(frozen=True)
class SensitivityState:
    """Running per-player sensitivity estimates.

    ``history`` holds ``(t, discrepancies, step_norm)`` for every update,
    including the guarded ones that left ``eps_hat`` unchanged.
    """

    eps_hat: np.ndarray
    eps_init: np.ndarray
    history: tuple = ()

    @classmethod
    def initial(cls, n: int, eps_init=1e-3) -> "SensitivityState":
        init = np.broadcast_to(np.asarray(eps_init, dtype=float), (n,)).copy()
        if np.any(init <= 0):
            raise GameError("initial sensitivity must be > 0")
        return cls(init.copy(), init)

    @property
    def joint(self) -> float:
        """sqrt(sum_i eps_i^2)."""
        return float(np.linalg.norm(self.eps_hat))


def gradient_discrepancy(player: PlayerSpec, eval_point: JointDecision,
                         batch_new: SampleBatch, batch_old: SampleBatch) -> float:
    """``||mean grad on batch_new - mean grad on batch_old||`` at ``eval_point``."""
    i = player.index
    if batch_new.player != i or batch_old.player != i:
        raise GameError(f"batches must belong to player {i}")
    if batch_new.width != batch_old.width:
        raise GameError("batches have different point widths")
    if eval_point.dims[i] != player.dim:
        raise GameError("evaluation point does not match player dimension")
    x_i, x_m = eval_point.slice(i), eval_point.minus(i)
    g_new = player.grad(x_i, x_m, batch_new.points)
    g_old = player.grad(x_i, x_m, batch_old.points)
    return float(np.linalg.norm(g_new - g_old))


def update_eps_hat(state: SensitivityState, t: int, discrepancies, step_norm: float,
                   guard: float = STEP_GUARD) -> SensitivityState:
    """Running maximum of ``discrepancy / step_norm``; skipped when the step is below ``guard``."""
    disc = np.asarray(discrepancies, dtype=float)
    if disc.shape != state.eps_hat.shape:
        raise GameError("one discrepancy per player is required")
    if step_norm < 0:
        raise GameError("step norm must be >= 0")
    eps = state.eps_hat
    if step_norm > guard:
        eps = np.maximum(eps, disc / step_norm)
    return SensitivityState(eps, state.eps_init, state.history + ((int(t), disc.copy(), float(step_norm)),))


def chi2_coverage(m: float, delta: float, sigma: float, dof: int) -> float:
    """Chi-square(dof) CDF at ``m delta^2 / sigma`` (regularized lower incomplete gamma)."""
    if not (m > 0 and delta > 0 and sigma > 0):
        raise ValueError("m, delta and sigma must be > 0")
    if int(dof) != dof or dof < 1:
        raise ValueError("dof must be an integer >= 1")
    x = m * delta * delta / sigma
    if math.isinf(x):
        return 1.0
    return float(gammainc(dof / 2.0, x / 2.0))


def covariance_top_eig(per_sample_gradients, rtol: float = 1e-10, max_iter: int = 100_000):
    """Largest eigenvalue of the (1/m-normalised) covariance of per-sample gradients.

    Returns ``(sigma_hat, dof)``.  Power iteration on the centred Gram form;
    singular covariances are fine since only the top eigenvalue is needed.
    """
    G = np.asarray(per_sample_gradients, dtype=float)
    if G.ndim == 1:
        G = G[:, None]
    m, d = G.shape
    if m < 2:
        raise GameError("need at least two samples")
    centred = G - G.mean(axis=0)
    cov = centred.T @ centred / m
    scale = float(np.trace(cov))
    if scale <= 0.0:
        return 0.0, d
    # deterministic start with all coordinates active
    v = 1.0 + np.arange(d) / d
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(max_iter):
        w = cov @ v
        nw = float(np.linalg.norm(w))
        if nw == 0.0:
            return 0.0, d
        new = float(v @ w)
        v = w / nw
        if abs(new - lam) <= rtol * new:
            lam = new
            break
        lam = new
    return max(lam, 0.0), d


@dataclass(frozen=True)
class ConcentrationReport:
    sigma_hat: float
    dof: int
    coverage_prob: float


def concentration_report(per_sample_gradients, m: int, delta: float) -> ConcentrationReport:
    sigma_hat, d = covariance_top_eig(per_sample_gradients)
    prob = 1.0 if sigma_hat == 0.0 else chi2_coverage(m, delta, sigma_hat, d)
    return ConcentrationReport(sigma_hat, d, prob)


def iteration_bound(delta: float, initial_gap: float, ratio: float) -> int:
    """Smallest t with ``t >= log(delta / initial_gap) / log(ratio)``."""
    if not 0 < ratio < 1:
        raise ValueError("the contraction ratio must lie in (0, 1)")
    if not 0 < delta < initial_gap:
        raise ValueError("need 0 < delta < initial_gap")
    q = math.log(delta / initial_gap) / math.log(ratio)
    t = math.ceil(q)
    # log rounding can push an exact integer quotient just above it
    if t - q > 1 - 1e-12 and t > 1:
        t -= 1
    return max(t, 1)
