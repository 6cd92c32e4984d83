"""Runnable checks of the convergence guarantees.

Each suite returns a list of ``Check`` results; a failing check carries the
offending instance so it can be replayed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import chi2

from perfgame.algorithms import AlgorithmConfig, contraction_diagnostic, fixed_point_gap, run
from perfgame.game import GameSpec, PlayerSpec, SampleBatch, per_sample_individual_gradients
from perfgame.maps import CustomParams, DistributionMap, sample, stream_generator
from perfgame.nash import NashProblem, cournot_closed_form, solve_nash
from perfgame.sensitivity import chi2_coverage, covariance_top_eig, iteration_bound

__all__ = [
    "Check",
    "SUITES",
    "linear_response_game",
    "quadratic_game",
    "contraction_suite",
    "fixed_point_suite",
    "coverage_suite",
    "regularizer_suite",
    "iteration_bound_suite",
    "solver_oracle_suite",
    "run_suites",
]


@dataclass
class Check:
    suite: str
    name: str
    passed: bool
    detail: str = ""
    instance: dict = field(default_factory=dict)


def _tracking_player(i: int, dim: int, psi: float) -> PlayerSpec:
    """``(psi/2)||x||^2 - x.z``; the best response is ``mean(z) / psi``."""

    def loss(x, xm, pts):
        return 0.5 * psi * float(x @ x) - pts @ x

    def grad(x, xm, pts):
        return psi * x[None, :] - pts

    def data_grad(x, xm, pts):
        return np.broadcast_to(-x, pts.shape).copy()

    return PlayerSpec(i, dim, loss, grad, data_grad)


def linear_response_game(rng, n: int, dim: int, psi: float, shift_scale: float, noise_std: float = 0.0):
    """Tracking game whose data mean is ``mu_i + B_i X``.

    Returns ``(game, maps, B, mu)``; the stable point is ``(psi I - B)^-1 mu``.
    """
    d = n * dim
    B = rng.standard_normal((d, d))
    B *= shift_scale / np.linalg.norm(B, 2)
    mu = rng.standard_normal(d)
    players = tuple(_tracking_player(i, dim, psi) for i in range(n))

    def affine(batches):
        return psi * np.eye(d), np.concatenate([bt.points.mean(axis=0) for bt in batches])

    maps = []
    for i in range(n):
        rows = slice(i * dim, (i + 1) * dim)

        def mean(X, rows=rows):
            return (mu[rows] + B[rows] @ X.values)[None, :]

        maps.append(DistributionMap("custom", CustomParams(mean), i, noise_std, "verify-linear"))
    game = GameSpec(players, psi, affine=affine, name="linear-response")
    return game, maps, B, mu


def quadratic_game(A: np.ndarray, r: np.ndarray, dims) -> GameSpec:
    """Data-free game whose stacked gradient is ``A X - r``."""
    offsets = np.concatenate([[0], np.cumsum(dims)])
    players = []
    for i, dim in enumerate(dims):
        o = offsets[i]
        Ai = A[o:o + dim]
        ri = r[o:o + dim]

        def stack(x, xm, o=o, dim=dim):
            return np.concatenate([xm[:o], x, xm[o:]])

        def loss(x, xm, pts, o=o, dim=dim, Ai=Ai, ri=ri, stack=stack):
            full = stack(x, xm)
            Aii = Ai[:, o:o + dim]
            val = 0.5 * x @ Aii @ x + x @ (Ai @ full - Aii @ x) - ri @ x
            return np.full(pts.shape[0], val)

        def grad(x, xm, pts, Ai=Ai, ri=ri, stack=stack):
            return np.broadcast_to(Ai @ stack(x, xm) - ri, (pts.shape[0], x.size)).copy()

        players.append(PlayerSpec(i, int(dim), loss, grad))
    alpha = float(np.linalg.eigvalsh(0.5 * (A + A.T))[0])
    return GameSpec(tuple(players), max(alpha, 0.0), affine=lambda batches: (A.copy(), r.copy()),
                    name="quadratic")


def _dummy_batches(n):
    return [SampleBatch(i, np.zeros((1, 1))) for i in range(n)]


def contraction_suite(n_games: int = 50, seed: int = 0, horizon: int = 40, slack: float = 1e-6) -> list:
    """Noiseless repeated retraining: every step ratio within ``sqrt(sum eps^2) / alpha``."""
    out = []
    for g in range(n_games):
        rng = stream_generator("verify-contraction", (seed, g))
        n = int(rng.integers(2, 4))
        dim = int(rng.integers(1, 4))
        psi = float(rng.uniform(0.5, 2.0))
        game, maps, B, mu = linear_response_game(rng, n, dim, psi, float(rng.uniform(0.1, 0.9)) * psi)
        trace = run(game, maps, AlgorithmConfig("RR", max_steps=horizon, samples_per_step=1), (seed, g))
        eps = trace.sensitivity.eps_hat
        steps = trace.step_norms()
        rep = contraction_diagnostic(steps, psi, eps, slack=slack, floor=1e-9 * steps.max())
        cond = psi > np.linalg.norm(eps)
        ok = rep.verdict and cond
        out.append(Check("contraction", f"game-{g}", ok,
                         f"max ratio {rep.ratios.max():.6g} <= bound {rep.bound:.6g}",
                         {} if ok else {"seed": seed, "game": g, "n": n, "dim": dim, "psi": psi,
                                        "ratios": rep.ratios.tolist(), "eps_hat": eps.tolist()}))
    return out


def iteration_bound_suite(n_games: int = 20, seed: int = 0, delta: float = 1e-6) -> list:
    """Noiseless runs reach ``delta`` of the stable point within the predicted count."""
    out = []
    for g in range(n_games):
        rng = stream_generator("verify-iterations", (seed, g))
        n, dim = 2, int(rng.integers(1, 4))
        psi = float(rng.uniform(0.5, 2.0))
        game, maps, B, mu = linear_response_game(rng, n, dim, psi, float(rng.uniform(0.1, 0.8)) * psi)
        x_ps = np.linalg.solve(psi * np.eye(n * dim) - B, mu)
        ratio = float(np.linalg.norm(B, 2)) / psi
        gap0 = float(np.linalg.norm(x_ps))
        if gap0 <= delta:
            continue
        T = iteration_bound(delta, gap0, ratio)
        trace = run(game, maps, AlgorithmConfig("RR", max_steps=T, samples_per_step=1), (seed, g))
        dist = float(np.linalg.norm(trace.final_X - x_ps))
        ok = dist <= delta * (1 + 1e-9)
        out.append(Check("iteration-bound", f"game-{g}", ok, f"after {T} iterations distance {dist:.3e}",
                         {} if ok else {"seed": seed, "game": g, "T": T, "distance": dist}))
    return out


def fixed_point_suite(seed: int = 0, horizon: int = 60, tol: float = 1e-7) -> list:
    """Converged SIR2 runs on noisy and noiseless linear-response games are Nash on their own data."""
    out = []
    for g, noise in enumerate((0.0, 0.0, 0.1, 0.1)):
        rng = stream_generator("verify-fixed-point", (seed, g))
        game, maps, _, _ = linear_response_game(rng, 2, 2, 1.0, 0.5, noise_std=noise)
        cfg = AlgorithmConfig("SIR2", max_steps=horizon, samples_per_step=50)
        trace = run(game, maps, cfg, (seed, g))
        if not trace.converged:
            out.append(Check("fixed-point", f"game-{g}", True, "did not report convergence; not certified"))
            continue
        gap = fixed_point_gap(game, trace, cfg)
        ok = gap <= tol
        out.append(Check("fixed-point", f"game-{g}", ok, f"gap {gap:.3e}",
                         {} if ok else {"seed": seed, "game": g, "noise": noise, "gap": gap}))
    return out


def _gaussian_gradient_player(dim):
    # gradient x - z: at x = 0 the batch-mean gradient is -mean(z)
    def loss(x, xm, pts):
        diff = x[None, :] - pts
        return 0.5 * np.sum(diff * diff, axis=1)

    def grad(x, xm, pts):
        return x[None, :] - pts

    return PlayerSpec(0, dim, loss, grad)


def coverage_estimate(dim: int, m: int, n_batches: int = 2000, seed: int = 0, level: float = 0.9,
                      pilot: int = 20_000):
    """Empirical ``P(||g_bar - E g|| <= delta)`` against the chi-square lower bound.

    The gradient noise is Gaussian with an anisotropic covariance.  ``delta``
    is set so the bound equals ``level`` under the pilot estimate of the top
    covariance eigenvalue.  Returns ``(empirical, bound, sigma_hat, delta)``.
    """
    rng = stream_generator("verify-coverage", (seed, dim, m))
    scales = np.linspace(0.3, 1.0, dim)
    Q, _ = np.linalg.qr(rng.standard_normal((dim, dim)))
    L = Q * scales
    mu = rng.standard_normal(dim)

    def mean(X):
        return mu[None, :]

    player = _gaussian_gradient_player(dim)
    game = GameSpec((player,), 1.0)
    x0 = game.zeros()

    def draw(count, stream, position):
        # correlated noise: pass isotropic samples through L
        base = sample(DistributionMap("custom", CustomParams(mean), 0, 1.0, stream), x0, count, position)
        return SampleBatch(0, mu + (base.points - mu) @ L.T)

    G = per_sample_individual_gradients(game, x0, [draw(pilot, "verify-pilot", (seed, dim, m))])
    sigma_hat, dof = covariance_top_eig(G)
    tau = chi2.ppf(level, dof)
    delta = math.sqrt(tau * sigma_hat / m)
    bound = chi2_coverage(m, delta, sigma_hat, dof)
    hits = 0
    for k in range(n_batches):
        bt = draw(m, "verify-mc", (seed, dim, m, k))
        gbar = player.grad(x0.values, x0.minus(0), bt.points)
        hits += float(np.linalg.norm(gbar + mu)) <= delta
    return hits / n_batches, bound, sigma_hat, delta


def coverage_suite(dims=(2, 20), ms=(10, 100, 1000), n_batches: int = 2000, seed: int = 0,
                   slack: float = 0.03) -> list:
    out = []
    for dim in dims:
        for m in ms:
            emp, bound, sigma_hat, delta = coverage_estimate(dim, m, n_batches, seed)
            ok = emp >= bound - slack
            out.append(Check("coverage", f"d={dim},m={m}", ok,
                             f"empirical {emp:.4f} vs bound {bound:.4f}",
                             {} if ok else {"seed": seed, "dim": dim, "m": m, "sigma_hat": sigma_hat,
                                            "delta": delta, "empirical": emp, "bound": bound}))
    return out


def random_monotone_matrix(rng, d: int, psi: float) -> np.ndarray:
    """``psi I + PSD + skew``: symmetric part has smallest eigenvalue >= psi."""
    M = rng.standard_normal((d, d))
    S = rng.standard_normal((d, d))
    return psi * np.eye(d) + 0.5 * (M @ M.T) / d + (S - S.T)


def regularizer_suite(n_games: int = 200, seed: int = 0, slack: float = 1e-9) -> list:
    """``||X* - X^R|| <= gamma ||X*|| / (psi + gamma)`` with both equilibria in closed form."""
    out = []
    for g in range(n_games):
        rng = stream_generator("verify-regularizer", (seed, g))
        n = int(rng.integers(1, 4))
        dims = tuple(int(v) for v in rng.integers(1, 4, size=n))
        d = sum(dims)
        psi = float(rng.uniform(0.5, 2.0))
        gamma = float(rng.uniform(0.0, 1.0))
        A = random_monotone_matrix(rng, d, psi)
        r = rng.standard_normal(d)
        game = quadratic_game(A, r, dims)
        batches = _dummy_batches(n)
        x_star = solve_nash(NashProblem(game, batches)).X_star.values
        x_reg = solve_nash(NashProblem(game.regularized(gamma), batches)).X_star.values
        lhs = float(np.linalg.norm(x_star - x_reg))
        rhs = gamma * float(np.linalg.norm(x_star)) / (psi + gamma)
        ok = lhs <= rhs + slack
        out.append(Check("regularizer", f"game-{g}", ok, f"{lhs:.6g} <= {rhs:.6g}",
                         {} if ok else {"seed": seed, "game": g, "psi": psi, "gamma": gamma,
                                        "A": A.tolist(), "r": r.tolist()}))
    return out


def cournot_field_game(b: float, q: np.ndarray, c: float, z: float) -> GameSpec:
    """Cournot adjustments game without an affine model, for the iterative solver."""
    n = q.size

    def make(i):
        def loss(x, xm, pts):
            own = q[i] + x[0]
            total = q.sum() + x.sum() + xm.sum()
            return np.full(pts.shape[0], c * own - own * (z - b * total))

        def grad(x, xm, pts):
            total = q.sum() + x.sum() + xm.sum()
            return np.full((pts.shape[0], 1), c - z + b * total + b * (q[i] + x[0]))

        return PlayerSpec(i, 1, loss, grad)

    return GameSpec(tuple(make(i) for i in range(n)), b, name="cournot-field")


def grid_nash_2p(losses, grid: np.ndarray) -> np.ndarray:
    """Pure equilibria of a two-player 1-D game restricted to ``grid``.

    ``losses[i](x1, x2)`` must broadcast over arrays.  Returns the grid pairs
    that are mutual grid best responses.
    """
    X1, X2 = np.meshgrid(grid, grid, indexing="ij")
    br1 = np.argmin(losses[0](X1, X2), axis=0)  # best x1 for each x2
    br2 = np.argmin(losses[1](X1, X2), axis=1)  # best x2 for each x1
    idx = np.arange(grid.size)
    fixed = idx[br1[br2[idx]] == idx]
    return np.array([[grid[a], grid[br2[a]]] for a in fixed])


def _quartic_pair(rng):
    a = rng.uniform(1.0, 2.0, 2)
    k = rng.uniform(0.0, 0.5, 2)
    s = rng.uniform(-0.4, 0.4, 2)
    h = rng.uniform(-0.5, 0.5, 2)

    def loss_fn(i):
        def f(x1, x2):
            own, other = (x1, x2) if i == 0 else (x2, x1)
            return 0.5 * a[i] * own ** 2 + 0.25 * k[i] * own ** 4 + s[i] * own * other + h[i] * own
        return f

    def player(i):
        def loss(x, xm, pts):
            return np.full(pts.shape[0], float(loss_fn(i)(*((x[0], xm[0]) if i == 0 else (xm[0], x[0])))))

        def grad(x, xm, pts):
            return np.full((pts.shape[0], 1), a[i] * x[0] + k[i] * x[0] ** 3 + s[i] * xm[0] + h[i])

        return PlayerSpec(i, 1, loss, grad)

    psi = float(min(a) - max(abs(s)))
    game = GameSpec((player(0), player(1)), psi, name="quartic")
    return game, (loss_fn(0), loss_fn(1))


def solver_oracle_suite(n_cournot: int = 100, n_grid: int = 10, seed: int = 0, tol: float = 1e-8,
                        grid_step: float = 1e-3) -> list:
    """Iterative solver against the Cournot closed form and a grid search."""
    out = []
    for g in range(n_cournot):
        rng = stream_generator("verify-cournot", (seed, g))
        n = int(rng.integers(2, 8))
        b = float(rng.uniform(0.2, 2.0))
        q = rng.uniform(0.0, 5.0, n)
        c = float(rng.uniform(0.0, 5.0))
        z = float(rng.uniform(20.0, 60.0))
        game = cournot_field_game(b, q, c, z)
        sol = solve_nash(NashProblem(game, _dummy_batches(n), solver="projected-pseudo-gradient", tol=1e-12))
        ref = cournot_closed_form(b, q, c, z)
        err = float(np.max(np.abs(sol.X_star.values - ref)))
        ok = err <= tol
        out.append(Check("solver-oracle", f"cournot-{g}", ok, f"max abs error {err:.3e}",
                         {} if ok else {"b": b, "q": q.tolist(), "c": c, "z": z, "error": err}))
    grid = np.round(np.arange(-1.0, 1.0 + grid_step / 2, grid_step), 12)
    for g in range(n_grid):
        rng = stream_generator("verify-grid", (seed, g))
        game, fns = _quartic_pair(rng)
        sol = solve_nash(NashProblem(game, _dummy_batches(2), solver="projected-pseudo-gradient", tol=1e-12))
        cands = grid_nash_2p(fns, grid)
        if cands.size == 0:
            out.append(Check("solver-oracle", f"grid-{g}", False, "grid search found no equilibrium"))
            continue
        err = float(np.min(np.max(np.abs(cands - sol.X_star.values), axis=1)))
        ok = err <= grid_step
        out.append(Check("solver-oracle", f"grid-{g}", ok, f"distance to grid equilibrium {err:.2e}",
                         {} if ok else {"seed": seed, "game": g, "error": err}))
    return out


SUITES = {
    "contraction": contraction_suite,
    "fixed-point": fixed_point_suite,
    "coverage": coverage_suite,
    "regularizer": regularizer_suite,
    "iteration-bound": iteration_bound_suite,
    "solver-oracle": solver_oracle_suite,
}


def run_suites(names=None, seed: int = 0) -> list:
    names = list(names) if names else list(SUITES)
    for nm in names:
        if nm not in SUITES:
            raise KeyError(f"unknown suite {nm!r}; choose from {sorted(SUITES)}")
    out = []
    for nm in names:
        out.extend(SUITES[nm](seed=seed))
    return out
