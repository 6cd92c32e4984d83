"""Nash equilibria of a game on frozen batches.

Three solvers are available.  ``closed-form-linear`` solves the affine
stationarity system ``A X = r``; ``closed-form-decoupled`` does the same
block by block when the players do not interact; ``projected-pseudo-gradient``
iterates ``X <- P(X - eta F(X))`` on the stacked gradient field and works for
any strongly monotone game.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from perfgame.game import GameSpec, JointDecision, individual_gradients

__all__ = [
    "NashError",
    "NashNonConvergence",
    "NashStructuralError",
    "NashProblem",
    "NashSolution",
    "solve_nash",
    "cournot_closed_form",
    "projected_residual",
]

SOLVERS = ("closed-form-linear", "closed-form-decoupled", "projected-pseudo-gradient")


class NashError(RuntimeError):
    pass


class NashNonConvergence(NashError):
    def __init__(self, residual: float, iters: int):
        super().__init__(f"no convergence after {iters} iterations, residual {residual:.3e}")
        self.residual = residual
        self.iters = iters


class NashStructuralError(NashError):
    pass


@dataclass(frozen=True)
class NashProblem:
    game: GameSpec
    batches: tuple
    solver: str = "closed-form-linear"
    tol: float = 1e-9
    max_iters: int = 100_000
    x0: JointDecision | None = None

    def __post_init__(self):
        if self.solver not in SOLVERS:
            raise ValueError(f"unknown solver {self.solver!r}")
        if not self.tol > 0:
            raise ValueError("tol must be > 0")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        object.__setattr__(self, "batches", tuple(self.batches))


@dataclass(frozen=True)
class NashSolution:
    X_star: JointDecision
    residual: float
    iters: int


def projected_residual(game: GameSpec, X: JointDecision, batches) -> float:
    """Natural-map residual ``||X - P(X - F(X))||``; equals ``||F(X)||`` without a box."""
    F = individual_gradients(game, X, batches)
    if game.decision_box is None:
        return float(np.linalg.norm(F))
    return float(np.linalg.norm(X.values - game.project(X.values - F)))


def cournot_closed_form(b: float, q, c: float, z) -> np.ndarray:
    """Cournot equilibrium adjustments ``x`` for ``A x = rhs`` with ``A = b(I + 11^T)``.

    Uses ``A^-1 = (I - 11^T/(n+1)) / b``.  ``z`` may be a scalar intercept or
    one intercept per firm.
    """
    if not b > 0:
        raise NashStructuralError("Cournot price sensitivity b must be > 0")
    q = np.atleast_1d(np.asarray(q, dtype=float))
    n = q.size
    z = np.broadcast_to(np.asarray(z, dtype=float), (n,))
    # rhs_i = -2 b q_i - b sum_{j != i} q_j - c + z_i = -b q_i - b sum_j q_j - c + z_i
    rhs = -b * q - b * q.sum() - c + z
    return (rhs - rhs.sum() / (n + 1)) / b


def _solve_linear(game: GameSpec, batches) -> np.ndarray:
    A, r = game.affine(batches)
    if game.decision_box is not None:
        raise NashStructuralError("closed-form-linear ignores the decision box; use an iterative solver")
    try:
        return np.linalg.solve(A, r)
    except np.linalg.LinAlgError as exc:
        raise NashStructuralError(f"singular stationarity system: {exc}") from None


def _solve_decoupled(game: GameSpec, batches) -> np.ndarray:
    A, r = game.affine(batches)
    out = np.empty(game.d)
    for _, o, d in game.layout:
        blk = slice(o, o + d)
        off = A[blk].copy()
        off[:, blk] = 0.0
        if np.any(off != 0.0):
            raise NashStructuralError("players interact; the decoupled solver does not apply")
        Aii = A[blk, blk]
        if game.decision_box is not None and np.any(Aii - np.diag(np.diag(Aii)) != 0.0):
            raise NashStructuralError("box projection is only exact for diagonal player blocks")
        try:
            out[blk] = np.linalg.solve(Aii, r[blk])
        except np.linalg.LinAlgError as exc:
            raise NashStructuralError(f"singular block for player at offset {o}: {exc}") from None
    return game.project(out)


def _lipschitz_estimate(field, x, d, iters=50):
    """Power iteration on J^T J, with J assembled by central differences."""
    h = 1e-6 * max(1.0, float(np.linalg.norm(x)))
    J = np.empty((d, d))
    for k in range(d):
        e = np.zeros(d)
        e[k] = h
        J[:, k] = (field(x + e) - field(x - e)) / (2 * h)
    v = np.ones(d) / np.sqrt(d)
    lam = 0.0
    for _ in range(iters):
        w = J.T @ (J @ v)
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return 0.0
        new = float(v @ w)
        v = w / nw
        if abs(new - lam) <= 1e-10 * max(new, 1e-300):
            lam = new
            break
        lam = new
    return float(np.sqrt(max(lam, 0.0)))


def _solve_iterative(problem: NashProblem):
    game, batches = problem.game, problem.batches
    alpha = game.psi
    if not alpha > 0:
        raise NashStructuralError("iterative solver needs a strongly monotone game (psi + gamma > 0)")

    def field(v):
        return individual_gradients(game, game.decision(v), batches)

    x = problem.x0.values.copy() if problem.x0 is not None else np.zeros(game.d)
    x = game.project(x)
    L = max(_lipschitz_estimate(field, x, game.d), alpha)
    # 1/(alpha + L) contracts for gradient-like fields; alpha/L^2 for any strongly monotone one.
    for eta in (1.0 / (alpha + L), alpha / (L * L)):
        y = x.copy()
        best = np.inf
        for it in range(1, problem.max_iters + 1):
            y_new = game.project(y - eta * field(y))
            res = float(np.linalg.norm(y_new - y)) / eta
            y = y_new
            if not np.isfinite(res) or res > 1e6 * max(best, 1e-12) and it > 10:
                break
            best = min(best, res)
            if res <= problem.tol:
                X = game.decision(y)
                final = projected_residual(game, X, batches)
                if final <= problem.tol:
                    return y, it
        else:
            X = game.decision(y)
            raise NashNonConvergence(projected_residual(game, X, batches), problem.max_iters)
    raise NashNonConvergence(float("inf"), problem.max_iters)


def solve_nash(problem: NashProblem) -> NashSolution:
    """Joint decision at which every player's batch-mean gradient vanishes (projected)."""
    game, batches = problem.game, problem.batches
    if problem.solver == "projected-pseudo-gradient":
        values, iters = _solve_iterative(problem)
    else:
        if game.affine is None:
            raise NashStructuralError(f"{problem.solver} needs an affine gradient field")
        if not game.psi > 0:
            raise NashStructuralError("degenerate game: psi + gamma must be > 0")
        values = _solve_linear(game, batches) if problem.solver == "closed-form-linear" \
            else _solve_decoupled(game, batches)
        iters = 1
    if not np.all(np.isfinite(values)):
        raise NashStructuralError("equilibrium has non-finite entries")
    X = game.decision(values)
    residual = projected_residual(game, X, batches)
    scale = max(1.0, float(np.linalg.norm(values)))
    if problem.solver != "projected-pseudo-gradient" and residual > problem.tol * scale:
        # a closed form is exact up to rounding; a large residual means a wrong affine model
        raise NashStructuralError(f"closed form left residual {residual:.3e}")
    return NashSolution(X, residual, iters)
