"""Core types for decision-dependent games.

A game is a tuple of players, each with a loss over its own decision block,
the other players' decisions and a batch of data drawn from that player's
decision-induced distribution.  Losses and gradients are hand-coded per game
and evaluated as per-sample arrays; batch means are taken with pairwise
summation so traces do not depend on evaluation order.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

__all__ = [
    "GameError",
    "PlayerSpec",
    "JointDecision",
    "SampleBatch",
    "GameSpec",
    "batch_mean",
    "individual_gradients",
    "check_strong_monotonicity",
    "finite_difference_gradient",
]


class GameError(ValueError):
    """Raised for malformed games, layouts or batches."""


def batch_mean(values: np.ndarray) -> np.ndarray:
    """Mean over the first axis using numpy's pairwise summation.

    ``np.add.reduce`` only sums pairwise along a contiguous axis, so the
    sample axis is moved last and made contiguous first.
    """
    values = np.asarray(values, dtype=float)
    if values.shape[0] == 0:
        raise GameError("empty batch")
    if values.ndim == 1:
        return np.add.reduce(np.ascontiguousarray(values)) / values.shape[0]
    moved = np.ascontiguousarray(np.moveaxis(values, 0, -1))
    return np.add.reduce(moved, axis=-1) / values.shape[0]


def _frozen(a, dtype=float) -> np.ndarray:
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class SampleBatch:
    """``m`` fixed-width data points for one player."""

    player: int
    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.ndim != 2 or pts.shape[0] < 1:
            raise GameError(f"batch for player {self.player} must be a non-empty (m, width) array")
        object.__setattr__(self, "points", _frozen(pts))

    @property
    def m(self) -> int:
        return self.points.shape[0]

    @property
    def width(self) -> int:
        return self.points.shape[1]


@dataclass(frozen=True)
class JointDecision:
    """Stacked decision vector with a per-player layout.

    ``layout`` holds ``(player, offset, dim)`` triples in player order and
    must tile ``[0, len(values))`` exactly.
    """

    values: np.ndarray
    layout: tuple

    def __post_init__(self):
        vals = _frozen(np.ravel(self.values))
        layout = tuple((int(p), int(o), int(d)) for p, o, d in self.layout)
        pos = 0
        for k, (p, o, d) in enumerate(layout):
            if p != k or o != pos or d < 1:
                raise GameError(f"layout entry {k} = {(p, o, d)} does not tile the decision vector")
            pos += d
        if pos != vals.size:
            raise GameError(f"layout covers {pos} coordinates but values has {vals.size}")
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "layout", layout)

    @classmethod
    def zeros(cls, dims: Sequence[int]) -> "JointDecision":
        return cls(np.zeros(int(sum(dims))), layout_for(dims))

    @classmethod
    def assemble(cls, blocks: Sequence[np.ndarray]) -> "JointDecision":
        blocks = [np.ravel(np.asarray(b, dtype=float)) for b in blocks]
        return cls(np.concatenate(blocks), layout_for([b.size for b in blocks]))

    @property
    def n(self) -> int:
        return len(self.layout)

    @property
    def dims(self) -> tuple:
        return tuple(d for _, _, d in self.layout)

    def slice(self, i: int) -> np.ndarray:
        _, o, d = self.layout[i]
        return self.values[o:o + d]

    def blocks(self) -> list:
        return [self.slice(i) for i in range(self.n)]

    def minus(self, i: int) -> np.ndarray:
        """Decisions of every player except ``i``, concatenated in order."""
        _, o, d = self.layout[i]
        return np.concatenate([self.values[:o], self.values[o + d:]])

    def with_values(self, values: np.ndarray) -> "JointDecision":
        return JointDecision(values, self.layout)

    def distance(self, other: "JointDecision") -> float:
        return float(np.linalg.norm(self.values - other.values))


def layout_for(dims: Sequence[int]) -> tuple:
    out, pos = [], 0
    for i, d in enumerate(dims):
        out.append((i, pos, int(d)))
        pos += int(d)
    return tuple(out)


LossFn = Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class PlayerSpec:
    """One player's loss.

    ``sample_loss(x_i, x_minus_i, points)`` returns the ``m`` per-sample
    losses and ``sample_grad`` the ``(m, dim)`` per-sample gradients with
    respect to ``x_i``.  ``data_grad`` (optional) returns the ``(m, width)``
    derivatives with respect to each data point; the map-learning baselines
    need it for the chain rule through an estimated distribution map.
    """

    index: int
    dim: int
    sample_loss: LossFn
    sample_grad: LossFn
    data_grad: Optional[LossFn] = None
    psi_contrib: float = 0.0

    def __post_init__(self):
        if self.dim < 1:
            raise GameError(f"player {self.index}: dim must be >= 1")
        if self.psi_contrib < 0:
            raise GameError(f"player {self.index}: psi_contrib must be >= 0")

    def loss(self, x_i, x_minus_i, points) -> float:
        return float(batch_mean(self.sample_loss(x_i, x_minus_i, points)))

    def grad(self, x_i, x_minus_i, points) -> np.ndarray:
        g = np.asarray(self.sample_grad(x_i, x_minus_i, points), dtype=float)
        return batch_mean(g.reshape(g.shape[0], self.dim))

    def regularized(self, gamma: float) -> "PlayerSpec":
        """Same player with ``(gamma/2)||x_i||^2`` added to every sample loss."""
        if gamma == 0:
            return self
        base_loss, base_grad = self.sample_loss, self.sample_grad

        def sample_loss(x, xm, pts):
            return base_loss(x, xm, pts) + 0.5 * gamma * float(x @ x)

        def sample_grad(x, xm, pts):
            g = np.asarray(base_grad(x, xm, pts), dtype=float).reshape(-1, self.dim)
            return g + gamma * x

        return replace(self, sample_loss=sample_loss, sample_grad=sample_grad,
                       psi_contrib=self.psi_contrib + gamma)


AffineFn = Callable[[Sequence[SampleBatch]], tuple]


@dataclass(frozen=True)
class GameSpec:
    """An n-player game with known strong-monotonicity constant ``psi``.

    ``affine`` (optional) returns ``(A, r)`` such that the stacked
    individual-gradient field on the given batches is ``A @ X - r``; the
    closed-form Nash solvers use it.  ``metric`` (optional) scores a joint
    decision on batches drawn from its own induced distribution.
    """

    players: tuple
    psi: float
    decision_box: Optional[tuple] = None
    affine: Optional[AffineFn] = None
    metric: Optional[Callable] = None
    gamma: float = 0.0
    name: str = "game"

    def __post_init__(self):
        players = tuple(self.players)
        if not players:
            raise GameError("a game needs at least one player")
        for k, p in enumerate(players):
            if p.index != k:
                raise GameError(f"player at position {k} has index {p.index}")
        if self.psi < 0:
            raise GameError("psi must be >= 0")
        object.__setattr__(self, "players", players)
        if self.decision_box is not None:
            lo, hi = (np.broadcast_to(np.asarray(b, dtype=float), (self.d,)) for b in self.decision_box)
            if np.any(lo >= hi):
                raise GameError("decision box needs lower < upper in every coordinate")
            object.__setattr__(self, "decision_box", (_frozen(lo), _frozen(hi)))

    @property
    def n(self) -> int:
        return len(self.players)

    @property
    def dims(self) -> tuple:
        return tuple(p.dim for p in self.players)

    @property
    def d(self) -> int:
        return int(sum(self.dims))

    @property
    def layout(self) -> tuple:
        return layout_for(self.dims)

    def decision(self, values) -> JointDecision:
        return JointDecision(values, self.layout)

    def zeros(self) -> JointDecision:
        return JointDecision.zeros(self.dims)

    def project(self, values: np.ndarray) -> np.ndarray:
        if self.decision_box is None:
            return np.asarray(values, dtype=float)
        return np.clip(values, self.decision_box[0], self.decision_box[1])

    def regularized(self, gamma: float) -> "GameSpec":
        """The game with ``(gamma/2)||x_i||^2`` added to every player's loss."""
        if gamma < 0:
            raise GameError("gamma must be >= 0")
        if gamma == 0:
            return self
        affine = None
        if self.affine is not None:
            base = self.affine

            def affine(batches):
                A, r = base(batches)
                return A + gamma * np.eye(A.shape[0]), r

        return replace(self, players=tuple(p.regularized(gamma) for p in self.players),
                       psi=self.psi + gamma, affine=affine, gamma=self.gamma + gamma)

    def losses(self, X: JointDecision, batches) -> np.ndarray:
        return np.array([p.loss(X.slice(i), X.minus(i), batches[i].points)
                         for i, p in enumerate(self.players)])


def _check_inputs(game: GameSpec, X: JointDecision, batches) -> None:
    if X.dims != game.dims:
        raise GameError(f"decision layout {X.dims} does not match game dims {game.dims}")
    if len(batches) != game.n:
        raise GameError(f"expected {game.n} batches, got {len(batches)}")
    for i, b in enumerate(batches):
        if b.player != i:
            raise GameError(f"batch {i} belongs to player {b.player}")


def individual_gradients(game: GameSpec, X: JointDecision, batches) -> np.ndarray:
    """Stacked batch-mean gradients of every player's loss in its own block."""
    _check_inputs(game, X, batches)
    return np.concatenate([p.grad(X.slice(i), X.minus(i), batches[i].points)
                           for i, p in enumerate(game.players)])


def per_sample_individual_gradients(game: GameSpec, X: JointDecision, batches) -> np.ndarray:
    """``(m, d)`` matrix whose row j stacks every player's gradient on sample j."""
    _check_inputs(game, X, batches)
    ms = {b.m for b in batches}
    if len(ms) != 1:
        raise GameError("per-sample stacking needs equal batch sizes")
    cols = [np.asarray(p.sample_grad(X.slice(i), X.minus(i), batches[i].points), dtype=float).reshape(-1, p.dim)
            for i, p in enumerate(game.players)]
    return np.hstack(cols)


def check_strong_monotonicity(game: GameSpec, trial_pairs, batches) -> float:
    """Smallest observed ``(F(X) - F(X'))^T (X - X') / ||X - X'||^2``.

    A probe on the supplied pairs only, never a certificate.  Coincident
    pairs are skipped.
    """
    best = np.inf
    for X, Xp in trial_pairs:
        diff = X.values - Xp.values
        denom = float(diff @ diff)
        if denom == 0.0:
            continue
        num = float((individual_gradients(game, X, batches) - individual_gradients(game, Xp, batches)) @ diff)
        best = min(best, num / denom)
    if best == np.inf:
        raise GameError("every trial pair is coincident")
    return best


def finite_difference_gradient(player: PlayerSpec, x_i, x_minus_i, points, h: float = 1e-6) -> np.ndarray:
    """Central differences of ``player.loss`` in the player's own block."""
    x_i = np.asarray(x_i, dtype=float)
    g = np.empty_like(x_i)
    for k in range(x_i.size):
        e = np.zeros_like(x_i)
        e[k] = h
        g[k] = (player.loss(x_i + e, x_minus_i, points) - player.loss(x_i - e, x_minus_i, points)) / (2 * h)
    return g
