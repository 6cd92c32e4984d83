"""Repeated-retraining algorithms for decision-dependent games.

``run_sir2`` is sensitivity-informed repeated retraining: before every
retraining step the game is regularized by ``(gamma/2)||x_i||^2`` with
``gamma = max(0, c * sqrt(sum eps_i^2) - psi)``, where ``eps_i`` are running
maxima of the observed gradient-discrepancy-to-step ratios.

``run_baseline`` covers plain repeated retraining (RR), repeated gradient
descent (RGD), a single-sample stochastic forward-backward scheme (SFB) and
two methods that learn an affine model of the distribution map and descend
the estimated performative gradient (AGM: batch least squares on the whole
history; OPGD: decaying-gain online updates).

Every algorithm starts from the zero decision and an initial dataset drawn
at it, and emits the same ``RunTrace`` schema.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from perfgame.game import GameError, GameSpec, JointDecision, individual_gradients
from perfgame.maps import DistributionMap, sample_all, stream_generator
from perfgame.nash import NashError, NashProblem, solve_nash
from perfgame.sensitivity import SensitivityState, gradient_discrepancy, update_eps_hat

__all__ = [
    "ALGORITHMS",
    "AlgorithmConfig",
    "TraceRecord",
    "RunTrace",
    "RunError",
    "sir2_gamma",
    "run",
    "run_sir2",
    "run_baseline",
    "contraction_diagnostic",
    "fixed_point_gap",
]

ALGORITHMS = ("SIR2", "RR", "RGD", "SFB", "AGM", "OPGD")
GRADIENT_METHODS = ("RGD", "SFB", "AGM", "OPGD")


class RunError(RuntimeError):
    """A run failed; ``t`` is the iteration at which it happened."""

    def __init__(self, t: int, cause: Exception):
        super().__init__(f"iteration {t}: {cause}")
        self.t = t
        self.cause = cause


@dataclass(frozen=True)
class AlgorithmConfig:
    kind: str = "SIR2"
    c: float = 2.1
    step_size: float = 0.01
    max_steps: int = 100
    samples_per_step: int = 100
    convergence_eps: float = 1e-6
    eps_init: float = 1e-3
    solver: Optional[str] = None
    solver_tol: float = 1e-9
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {self.kind!r}; choose from {ALGORITHMS}")
        if self.kind == "SIR2" and not self.c > 2:
            raise ValueError(f"SIR2 needs c > 2 (got {self.c})")
        if self.kind in GRADIENT_METHODS and not self.step_size > 0:
            raise ValueError("step_size must be > 0 for gradient methods")
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")
        if self.samples_per_step < 1:
            raise ValueError("samples_per_step must be >= 1")
        if not self.eps_init > 0:
            raise ValueError("eps_init must be > 0")


@dataclass(frozen=True)
class TraceRecord:
    t: int
    X: np.ndarray
    losses: np.ndarray
    step_norm: float
    eps_hat: np.ndarray
    discrepancies: np.ndarray
    gamma: float
    residual: float
    metric: float
    wall_time: float


@dataclass
class RunTrace:
    algorithm: str
    n: int
    d: int
    records: list = field(default_factory=list)
    convergence_eps: float = 1e-6
    segment: str = ""
    final_batches: Optional[list] = None
    sensitivity: Optional[SensitivityState] = None

    @property
    def converged(self) -> bool:
        return bool(self.records) and self.records[-1].step_norm < self.convergence_eps

    @property
    def converged_at(self) -> Optional[int]:
        """First iteration whose step norm is below ``convergence_eps``."""
        for r in self.records:
            if r.step_norm < self.convergence_eps:
                return r.t
        return None

    @property
    def final_metric(self) -> float:
        return self.records[-1].metric

    @property
    def final_X(self) -> np.ndarray:
        return self.records[-1].X

    def step_norms(self) -> np.ndarray:
        return np.array([r.step_norm for r in self.records])

    def metrics(self) -> np.ndarray:
        return np.array([r.metric for r in self.records])

    def columns(self) -> list:
        n, d = self.n, self.d
        return (["segment", "t", "step_norm"] + [f"loss_{i}" for i in range(n)]
                + [f"eps_hat_{i}" for i in range(n)] + ["gamma", "residual", "metric"]
                + [f"discrepancy_{i}" for i in range(n)] + [f"x_{k}" for k in range(d)])

    def rows(self) -> list:
        out = []
        for r in self.records:
            out.append([self.segment, r.t, r.step_norm, *r.losses, *r.eps_hat, r.gamma,
                        r.residual, r.metric, *r.discrepancies, *r.X])
        return out


def sir2_gamma(eps_hat, psi: float, c: float) -> float:
    """``max(0, c * sqrt(sum eps_i^2) - psi)``."""
    return max(0.0, c * float(np.linalg.norm(eps_hat)) - psi)


def _auto_solver(game: GameSpec) -> str:
    if game.affine is None:
        return "projected-pseudo-gradient"
    return "closed-form-linear" if game.decision_box is None else "closed-form-decoupled"


def _nash(game: GameSpec, batches, cfg: AlgorithmConfig, x0=None):
    solver = cfg.solver or _auto_solver(game)
    return solve_nash(NashProblem(game, tuple(batches), solver=solver, tol=cfg.solver_tol, x0=x0))


class _AffineMapModel:
    """Affine model ``mean point_i ~ W_i [1, X]`` for every player."""

    def __init__(self, widths, d, online: bool, gain0: float, ridge: float):
        self.W = [np.zeros((w, d + 1)) for w in widths]
        self.online = online
        self.gain0 = gain0
        self.ridge = ridge
        self.phis: list = []
        self.targets: list = [[] for _ in widths]
        self.initialised = False

    def update(self, t: int, X: np.ndarray, means: Sequence[np.ndarray]):
        phi = np.concatenate([[1.0], X])
        if not self.initialised:
            # intercept from the first observation, zero slope
            for W, mu in zip(self.W, means):
                W[:, 0] = mu
            self.initialised = True
        if self.online:
            gain = self.gain0 / math.sqrt(t + 1)
            denom = 1.0 + float(phi @ phi)
            for W, mu in zip(self.W, means):
                W += gain * np.outer(mu - W @ phi, phi) / denom
            return
        self.phis.append(phi)
        for tg, mu in zip(self.targets, means):
            tg.append(mu)
        P = np.array(self.phis)
        reg = self.ridge * np.eye(P.shape[1])
        reg[0, 0] = 0.0
        lhs = P.T @ P + reg
        for k, tg in enumerate(self.targets):
            self.W[k] = np.linalg.lstsq(lhs, P.T @ np.array(tg), rcond=None)[0].T

    def jacobian_block(self, i: int, offset: int, dim: int) -> np.ndarray:
        return self.W[i][:, 1 + offset:1 + offset + dim]


def _metric(game: GameSpec, X: JointDecision, batches) -> float:
    return float(game.metric(X, batches)) if game.metric is not None else float("nan")


def run(game: GameSpec, maps: Sequence[DistributionMap], cfg: AlgorithmConfig, seed=(0,),
        segment: str = "") -> RunTrace:
    """Run ``cfg.kind`` for ``cfg.max_steps`` deployments.

    ``seed`` is the stream-position prefix; batch ``t`` for player ``i`` is
    drawn at position ``seed + (t, i)``, so algorithms sharing a seed see
    common random numbers.
    """
    if len(maps) != game.n:
        raise GameError(f"need one distribution map per player ({game.n}), got {len(maps)}")
    seed = tuple(seed) if not isinstance(seed, (int, np.integer)) else (int(seed),)
    m = cfg.samples_per_step
    kind = cfg.kind
    trace = RunTrace(kind, game.n, game.d, convergence_eps=cfg.convergence_eps, segment=segment)
    sens = SensitivityState.initial(game.n, cfg.eps_init)

    X_prev = game.zeros()
    Z_prev = sample_all(maps, X_prev, m, seed + (0,))

    model = None
    if kind in ("AGM", "OPGD"):
        ex = cfg.extra
        model = _AffineMapModel([b.width for b in Z_prev], game.d, online=(kind == "OPGD"),
                                gain0=float(ex.get("gain0", 0.5)), ridge=float(ex.get("ridge", 1e-6)))
        model.update(0, X_prev.values, [b.points.mean(axis=0) for b in Z_prev])
    explore = float(cfg.extra.get("explore_rel", 0.05))

    for t in range(1, cfg.max_steps + 1):
        t0 = time.perf_counter()
        gamma = 0.0
        residual = 0.0
        try:
            if kind in ("SIR2", "RR"):
                if kind == "SIR2":
                    gamma = sir2_gamma(sens.eps_hat, game.psi, cfg.c)
                sol = _nash(game.regularized(gamma), Z_prev, cfg)
                X = sol.X_star
                residual = sol.residual
            else:
                X = game.decision(_gradient_step(game, X_prev, Z_prev, cfg, model, explore, seed, t))
                if not np.all(np.isfinite(X.values)):
                    raise FloatingPointError("decision diverged to a non-finite value")
        except (NashError, FloatingPointError, np.linalg.LinAlgError) as exc:
            raise RunError(t, exc) from exc

        Z = sample_all(maps, X, m, seed + (t,))
        step = X.distance(X_prev)
        disc = np.array([gradient_discrepancy(p, X, Z[i], Z_prev[i]) for i, p in enumerate(game.players)])
        sens = update_eps_hat(sens, t, disc, step)
        if model is not None:
            model.update(t, X.values, [b.points.mean(axis=0) for b in Z])

        trace.records.append(TraceRecord(
            t=t, X=X.values.copy(), losses=game.losses(X, Z), step_norm=step,
            eps_hat=sens.eps_hat.copy(), discrepancies=disc, gamma=gamma, residual=residual,
            metric=_metric(game, X, Z), wall_time=time.perf_counter() - t0))
        X_prev, Z_prev = X, Z

    trace.final_batches = Z_prev
    trace.sensitivity = sens
    return trace


def _gradient_step(game, X_prev, Z_prev, cfg, model, explore, seed, t):
    eta = cfg.step_size
    kind = cfg.kind
    if kind == "SFB":
        batches = [type(b)(b.player, b.points[:1]) for b in Z_prev]
        g = individual_gradients(game, X_prev, batches)
    else:
        g = individual_gradients(game, X_prev, Z_prev)
    if kind in ("AGM", "OPGD"):
        g = g.copy()
        for i, p in enumerate(game.players):
            if p.data_grad is None:
                raise GameError(f"{kind} needs data gradients for player {i}")
            _, o, d = X_prev.layout[i]
            dz = np.asarray(p.data_grad(X_prev.slice(i), X_prev.minus(i), Z_prev[i].points), dtype=float)
            dz = dz.reshape(Z_prev[i].m, -1).mean(axis=0)
            g[o:o + d] += model.jacobian_block(i, o, d).T @ dz
    x = X_prev.values - eta * g
    if kind in ("AGM", "OPGD") and explore > 0:
        rng = stream_generator(f"explore-{kind}", seed + (t,))
        scale = explore * max(1.0, float(np.sqrt(np.mean(x * x))))
        x = x + scale * rng.standard_normal(x.size)
    return game.project(x)


def run_sir2(game, maps, cfg: AlgorithmConfig, seed=(0,), segment: str = "") -> RunTrace:
    if cfg.kind != "SIR2":
        raise ValueError("run_sir2 needs cfg.kind == 'SIR2'")
    return run(game, maps, cfg, seed, segment)


def run_baseline(game, maps, cfg: AlgorithmConfig, seed=(0,), segment: str = "") -> RunTrace:
    if cfg.kind == "SIR2":
        raise ValueError("run_baseline does not run SIR2")
    return run(game, maps, cfg, seed, segment)


@dataclass(frozen=True)
class ContractionReport:
    ratios: np.ndarray
    bound: float
    verdict: bool


def contraction_diagnostic(trace_or_steps, alpha: float, eps_hat_final, slack: float = 1e-6,
                           floor: float = 0.0) -> ContractionReport:
    """Consecutive step-norm ratios against ``sqrt(sum eps^2) / alpha``.

    Steps at or below ``floor`` are skipped as degenerate.
    """
    steps = trace_or_steps.step_norms() if isinstance(trace_or_steps, RunTrace) \
        else np.asarray(trace_or_steps, dtype=float)
    if steps.size < 2:
        raise ValueError("need at least three iterates (two steps)")
    ratios = []
    for a, b in zip(steps[:-1], steps[1:]):
        if a <= floor:
            continue
        ratios.append(b / a)
    ratios = np.array(ratios)
    bound = float(np.linalg.norm(eps_hat_final)) / alpha
    return ContractionReport(ratios, bound, bool(np.all(ratios <= bound + slack)))


def fixed_point_gap(game: GameSpec, trace: RunTrace, cfg: AlgorithmConfig) -> float:
    """``||Nash(D(X_final)) - X_final||`` using the final batch drawn at ``X_final``.

    The Nash problem is the regularized one with the last gamma in force,
    i.e. the game whose fixed point the run was approaching.
    """
    gamma = trace.records[-1].gamma
    if cfg.kind == "SIR2":
        gamma = sir2_gamma(trace.sensitivity.eps_hat, game.psi, cfg.c)
    sol = _nash(game.regularized(gamma), trace.final_batches, cfg)
    return float(np.linalg.norm(sol.X_star.values - trace.final_X))
