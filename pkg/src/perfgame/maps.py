"""Decision-dependent data distribution maps.

Each map turns a joint decision into a Gaussian-perturbed family of data
points for one player.  Three closed-form kinds are bundled:

* ``logistic-demand``: demand ``2 z0 / (1 + exp(-(A_self x_i + A_other x_-i)))``
* ``linear-shift``: regression features ``theta + sum_j C_j x_j`` and labels
  ``theta @ b + sum_j a_j . x_j``
* ``sinh-price``: a market intercept ``z0 - mu * asinh(sum_j x_j)``

plus ``custom`` for a user-supplied mean function.  Sampling is a pure
function of ``(map, X, m, position)``: every draw comes from a Philox
counter-based generator keyed by the map's stream name and an integer
position tuple such as ``(trial, iteration, player)``.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass
from typing import Any, Callable, Optional, Sequence

import numpy as np

from perfgame.game import GameError, JointDecision, SampleBatch

__all__ = [
    "LogisticDemandParams",
    "LinearShiftParams",
    "SinhPriceParams",
    "CustomParams",
    "DistributionMap",
    "InducedDistribution",
    "induce",
    "sample",
    "stream_generator",
]

KINDS = ("logistic-demand", "linear-shift", "sinh-price", "custom")


def _arr(a, ndim=None):
    out = np.array(a, dtype=float, copy=True)
    if ndim is not None and out.ndim != ndim:
        raise GameError(f"expected a {ndim}-d array, got shape {out.shape}")
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class LogisticDemandParams:
    z_initial: np.ndarray
    A_self: np.ndarray
    A_other: np.ndarray

    def __post_init__(self):
        z0 = _arr(self.z_initial, 1)
        A = _arr(self.A_self, 2)
        B = _arr(self.A_other, 2)
        if A.shape != (z0.size, z0.size) or B.shape[0] != z0.size:
            raise GameError("A_self must be d_i x d_i and A_other must have d_i rows")
        if np.any(z0 <= 0):
            raise GameError("initial demand must be positive")
        if np.any(np.diag(A) > 0):
            raise GameError("A_self diagonal must be <= 0")
        if B.shape[0] == B.shape[1] and np.any(np.diag(B) < 0):
            raise GameError("A_other diagonal must be >= 0")
        object.__setattr__(self, "z_initial", z0)
        object.__setattr__(self, "A_self", A)
        object.__setattr__(self, "A_other", B)


@dataclass(frozen=True)
class LinearShiftParams:
    """Regression data shifted linearly by every player's decision.

    ``C[j]`` (k x d_j) shifts every feature row and ``a[j]`` (d_j) shifts
    the label by ``a[j] . x_j``.  ``a_self``/``a_other`` in the literature
    are ``a[i]`` and the concatenation of the remaining ``a[j]``.
    """

    theta_base: np.ndarray
    b_true: np.ndarray
    C: tuple
    a: tuple

    def __post_init__(self):
        theta = _arr(self.theta_base, 2)
        b = _arr(self.b_true, 1)
        if theta.shape[1] != b.size:
            raise GameError("theta_base columns must match b_true")
        C = tuple(_arr(c, 2) for c in self.C)
        a = tuple(_arr(v, 1) for v in self.a)
        if len(C) != len(a):
            raise GameError("need one C and one a per player")
        for c, v in zip(C, a):
            if c.shape != (b.size, v.size):
                raise GameError(f"C block of shape {c.shape} does not match k={b.size}, d_j={v.size}")
        object.__setattr__(self, "theta_base", theta)
        object.__setattr__(self, "b_true", b)
        object.__setattr__(self, "C", C)
        object.__setattr__(self, "a", a)

    @property
    def dims(self) -> tuple:
        return tuple(v.size for v in self.a)


@dataclass(frozen=True)
class SinhPriceParams:
    z0: float
    mu: float

    def __post_init__(self):
        if not (self.z0 > 0 and self.mu > 0):
            raise GameError("sinh-price needs z0 > 0 and mu > 0")


@dataclass(frozen=True)
class CustomParams:
    """``mean(X)`` returns an ``(rows, width)`` array; point j uses row ``j % rows``."""

    mean: Callable[[JointDecision], np.ndarray]


_PARAM_TYPES = {
    "logistic-demand": LogisticDemandParams,
    "linear-shift": LinearShiftParams,
    "sinh-price": SinhPriceParams,
    "custom": CustomParams,
}


@dataclass(frozen=True)
class DistributionMap:
    kind: str
    params: Any
    player: int
    noise_std: float = 0.0
    rng_stream: str = "default"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise GameError(f"unknown map kind {self.kind!r}")
        if not isinstance(self.params, _PARAM_TYPES[self.kind]):
            raise GameError(f"{self.kind} map needs {_PARAM_TYPES[self.kind].__name__}")
        if self.noise_std < 0:
            raise GameError("noise_std must be >= 0")


@dataclass(frozen=True)
class InducedDistribution:
    """Noiseless mean rows plus isotropic Gaussian noise of ``noise_std``."""

    player: int
    mean_rows: np.ndarray
    noise_std: float

    @property
    def width(self) -> int:
        return self.mean_rows.shape[1]

    def mean(self) -> np.ndarray:
        """Population mean of a single point (average over base rows)."""
        return self.mean_rows.mean(axis=0)


def _logistic_mean(p: LogisticDemandParams, X: JointDecision, i: int) -> np.ndarray:
    x_i, x_m = X.slice(i), X.minus(i)
    if x_i.size != p.z_initial.size or x_m.size != p.A_other.shape[1]:
        raise GameError("decision layout does not match logistic-demand parameters")
    s = p.A_self @ x_i + p.A_other @ x_m
    # 2 z0 / (1 + e^-s), written to avoid overflow for large |s|
    return (2.0 * p.z_initial * _expit(s))[None, :]


def _expit(s):
    out = np.empty_like(s, dtype=float)
    pos = s >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-s[pos]))
    e = np.exp(s[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def _linear_mean(p: LinearShiftParams, X: JointDecision) -> np.ndarray:
    if X.dims != p.dims:
        raise GameError(f"decision layout {X.dims} does not match linear-shift dims {p.dims}")
    blocks = X.blocks()
    shift = sum(C @ x for C, x in zip(p.C, blocks))
    label_shift = sum(float(a @ x) for a, x in zip(p.a, blocks))
    feats = p.theta_base + shift[None, :]
    labels = p.theta_base @ p.b_true + label_shift
    return np.hstack([feats, labels[:, None]])


def induce(dmap: DistributionMap, X: JointDecision) -> InducedDistribution:
    """Distribution of ``dmap.player``'s data under joint decision ``X``."""
    p = dmap.params
    if dmap.kind == "logistic-demand":
        rows = _logistic_mean(p, X, dmap.player)
    elif dmap.kind == "linear-shift":
        rows = _linear_mean(p, X)
    elif dmap.kind == "sinh-price":
        rows = np.array([[p.z0 - p.mu * np.arcsinh(X.values.sum())]])
    else:
        rows = np.atleast_2d(np.asarray(p.mean(X), dtype=float))
    return InducedDistribution(dmap.player, rows, dmap.noise_std)


def _stream_id(name: str) -> int:
    return zlib.crc32(name.encode("utf-8"))


def stream_generator(stream: str, position: Sequence[int] | int) -> np.random.Generator:
    """Philox generator for a named stream at an integer position tuple."""
    if isinstance(position, (int, np.integer)):
        position = (int(position),)
    key = tuple(int(k) for k in position)
    if any(k < 0 for k in key):
        raise GameError("stream positions must be non-negative")
    ss = np.random.SeedSequence(entropy=_stream_id(stream), spawn_key=key)
    return np.random.Generator(np.random.Philox(ss))


def sample(dmap: DistributionMap, X: JointDecision, m: int, position) -> SampleBatch:
    """Draw ``m`` points: mean row ``j % rows`` plus N(0, noise_std^2) per coordinate."""
    if m < 1:
        raise GameError("sample count must be >= 1")
    dist = induce(dmap, X)
    rows = dist.mean_rows
    idx = np.arange(m) % rows.shape[0]
    pts = rows[idx]
    if dist.noise_std > 0:
        rng = stream_generator(dmap.rng_stream, position)
        pts = pts + dist.noise_std * rng.standard_normal(pts.shape)
    return SampleBatch(dmap.player, pts)


def sample_all(maps: Sequence[DistributionMap], X: JointDecision, m: int, position: Sequence[int]) -> list:
    """One batch per player; the player index is appended to the position."""
    return [sample(mp, X, m, tuple(position) + (mp.player,)) for mp in maps]
