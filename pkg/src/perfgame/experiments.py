"""Reference environments and the multi-trial protocol.

Three games are provided:

* ``prediction``: two regression platforms whose deployed coefficients
  shift both the features and the labels they are trained on.
* ``cournot``: 28 crude exporters choosing export adjustments against a
  market intercept that falls with total adjustment through ``asinh``.
* ``rideshare``: two ride-share companies setting per-location price
  adjustments under logistic demand, one independent game per price interval.

Random game parameters depend only on ``(base_seed, trial)`` and are drawn
as standard normals scaled by the setting, so every setting and every
algorithm of a trial faces the same underlying draws.
"""

from __future__ import annotations

import csv
import hashlib
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from perfgame.algorithms import ALGORITHMS, AlgorithmConfig, RunError, RunTrace, run
from perfgame.game import GameError, GameSpec, PlayerSpec, batch_mean
from perfgame.maps import (
    DistributionMap,
    LinearShiftParams,
    LogisticDemandParams,
    SinhPriceParams,
    stream_generator,
)

__all__ = [
    "GAMES",
    "DEFAULT_SWEEPS",
    "DEFAULT_HORIZONS",
    "ExperimentSpec",
    "MarketData",
    "MetricReport",
    "data_root",
    "resolve_data_path",
    "load_market_data",
    "prediction_variances",
    "build_prediction_game",
    "build_cournot_game",
    "build_rideshare_game",
    "run_cell",
    "run_experiment",
]

GAMES = ("prediction", "cournot", "rideshare")
DEFAULT_SWEEPS = {
    "prediction": (2.5, 5.0, 7.5, 10.0),
    "cournot": (0.25, 0.5, 0.75, 1.0),
    "rideshare": (0.25, 0.5, 0.75, 1.0),
}
DEFAULT_HORIZONS = {"prediction": 100, "cournot": 100, "rideshare": 1000}
DEFAULT_DATA = {
    "cournot": "crude_exports_synthetic.csv",
    "rideshare": "rideshare_boston_synthetic.csv",
}
PRICE_INTERVALS = (10, 15, 20, 25, 30)
N_LOCATIONS = 11
N_EXPORTERS = 28
NOISE_VAR = 0.01
COURNOT_Z0 = 147.27
COURNOT_COST = 10.0
COURNOT_TARGET_PRICE = 70.0


# --------------------------------------------------------------------------- data

@dataclass(frozen=True)
class MarketData:
    """Validated market CSV: column name -> tuple of values, plus provenance."""

    schema: str
    columns: dict
    path: str
    checksum: str

    @property
    def n_rows(self) -> int:
        return len(next(iter(self.columns.values())))


SCHEMAS = {
    "cournot": ("country", "quantity_barrels"),
    "rideshare": ("company", "interval_low", "location", "demand"),
}
_NUMERIC = {"quantity_barrels", "interval_low", "demand"}


def data_root() -> Path:
    env = os.environ.get("PERFGAME_DATA_DIR")
    if env:
        return Path(env)
    return Path(str(resources.files("perfgame") / "data"))


def resolve_data_path(name: str | os.PathLike) -> Path:
    p = Path(name)
    return p if p.is_absolute() else data_root() / p


def load_market_data(path: str | os.PathLike, schema: str) -> MarketData:
    """Read and validate a market CSV against one of the two schemas."""
    if schema not in SCHEMAS:
        raise GameError(f"unknown market schema {schema!r}")
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"market data file not found: {path}")
    raw = path.read_bytes()
    text = raw.decode("utf-8")
    reader = csv.reader(text.splitlines())
    header = next(reader, None)
    expected = SCHEMAS[schema]
    if header is None or tuple(h.strip() for h in header) != expected:
        raise GameError(f"{path}: header must be {','.join(expected)}, got {header}")
    cols = {h: [] for h in expected}
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != len(expected):
            raise GameError(f"{path}:{lineno}: expected {len(expected)} fields, got {len(row)}")
        for h, v in zip(expected, row):
            v = v.strip()
            if h in _NUMERIC:
                try:
                    num = float(v)
                except ValueError:
                    raise GameError(f"{path}:{lineno}: {h} is not a number: {v!r}") from None
                if not math.isfinite(num) or num < 0:
                    raise GameError(f"{path}:{lineno}: {h} must be a finite value >= 0")
                cols[h].append(num)
            else:
                cols[h].append(v)
    if not cols[expected[0]]:
        raise GameError(f"{path}: no data rows")
    return MarketData(schema, {h: tuple(v) for h, v in cols.items()}, str(path),
                      hashlib.sha256(raw).hexdigest())


def cournot_quantities(data: MarketData) -> np.ndarray:
    if data.schema != "cournot":
        raise GameError("Cournot game needs country,quantity_barrels data")
    q = np.array(data.columns["quantity_barrels"], dtype=float)
    if q.size != N_EXPORTERS:
        raise GameError(f"Cournot data must list {N_EXPORTERS} exporters, got {q.size}")
    return q


def rideshare_demands(data: MarketData) -> tuple:
    """``(companies, locations, demand)`` with demand shaped (interval, company, location)."""
    if data.schema != "rideshare":
        raise GameError("ride-share game needs company,interval_low,location,demand data")
    companies = sorted(set(data.columns["company"]))
    locations = sorted(set(data.columns["location"]))
    if len(companies) != 2:
        raise GameError(f"ride-share data must have 2 companies, got {len(companies)}")
    if len(locations) != N_LOCATIONS:
        raise GameError(f"ride-share data must have {N_LOCATIONS} locations, got {len(locations)}")
    dem = np.full((len(PRICE_INTERVALS), 2, N_LOCATIONS), np.nan)
    for comp, p, loc, d in zip(*(data.columns[h] for h in SCHEMAS["rideshare"])):
        if int(p) not in PRICE_INTERVALS:
            raise GameError(f"unknown price interval {p}")
        dem[PRICE_INTERVALS.index(int(p)), companies.index(comp), locations.index(loc)] = d
    if np.isnan(dem).any():
        raise GameError("ride-share data must cover every (company, interval, location)")
    if np.any(dem <= 0):
        raise GameError("ride-share demands must be positive")
    return tuple(companies), tuple(locations), dem


# --------------------------------------------------------------------------- games

def _regression_player(i: int, k: int) -> PlayerSpec:
    def loss(x, xm, pts):
        r = pts[:, k] - pts[:, :k] @ x
        return r * r

    def grad(x, xm, pts):
        r = pts[:, k] - pts[:, :k] @ x
        return -2.0 * r[:, None] * pts[:, :k]

    def data_grad(x, xm, pts):
        r = pts[:, k] - pts[:, :k] @ x
        return np.hstack([-2.0 * r[:, None] * x[None, :], 2.0 * r[:, None]])

    return PlayerSpec(i, k, loss, grad, data_grad)


def prediction_variances(sigma_a_sq: float, n: int = 2) -> tuple:
    """``(var of a_ij for j != i, var of C entries)`` for own-label variance ``sigma_a_sq``."""
    return 12.5 - sigma_a_sq, sigma_a_sq / n


def build_prediction_game(sigma_a_sq: float, seed=(0, 0), *, n: int = 2, m: int = 100, k: int = 10,
                          sigma_other_sq: Optional[float] = None, sigma_c_sq: Optional[float] = None,
                          noise_var: float = NOISE_VAR, base_var: float = 0.1):
    """Competing regression platforms.

    Player i fits ``x_i`` to data whose features are ``theta_i + sum_j C_ij x_j``
    and labels ``theta_i b_i + sum_j a_ij . x_j``, both with Gaussian noise.
    ``a_ii`` has variance ``sigma_a_sq``, ``a_ij`` (j != i) ``12.5 - sigma_a_sq``
    and ``C_ij`` ``sigma_a_sq / n`` unless overridden.
    """
    if sigma_a_sq < 0:
        raise GameError("sigma_a_sq must be >= 0")
    var_other, var_c = prediction_variances(sigma_a_sq, n)
    if sigma_other_sq is not None:
        var_other = sigma_other_sq
    if sigma_c_sq is not None:
        var_c = sigma_c_sq
    if var_other < 0 or var_c < 0:
        raise GameError("shift variances must be >= 0")
    rng = stream_generator("prediction-game", seed)
    sd = math.sqrt(base_var)
    players, maps, grams = [], [], []
    for i in range(n):
        theta = sd * rng.standard_normal((m, k))
        b = sd * rng.standard_normal(k)
        C = tuple(math.sqrt(var_c) * rng.standard_normal((k, k)) for _ in range(n))
        a = tuple(math.sqrt(sigma_a_sq if j == i else var_other) * rng.standard_normal(k) for j in range(n))
        params = LinearShiftParams(theta, b, C, a)
        maps.append(DistributionMap("linear-shift", params, i, math.sqrt(noise_var), "prediction-noise"))
        players.append(_regression_player(i, k))
        grams.append(np.linalg.eigvalsh(theta.T @ theta / m)[0])
    psi = float(2.0 * min(grams))

    def affine(batches):
        A = np.zeros((n * k, n * k))
        r = np.zeros(n * k)
        for i, bt in enumerate(batches):
            Phi, z = bt.points[:, :k], bt.points[:, k]
            A[i * k:(i + 1) * k, i * k:(i + 1) * k] = 2.0 * Phi.T @ Phi / bt.m
            r[i * k:(i + 1) * k] = 2.0 * Phi.T @ z / bt.m
        return A, r

    def metric(X, batches):
        # sum over platforms of root mean squared error
        return float(sum(math.sqrt(players[i].loss(X.slice(i), X.minus(i), bt.points))
                         for i, bt in enumerate(batches)))

    game = GameSpec(tuple(players), psi, affine=affine, metric=metric, name="prediction")
    return game, maps


def cournot_price_slope(q: np.ndarray, z0: float = COURNOT_Z0, target: float = COURNOT_TARGET_PRICE) -> float:
    """Slope ``b`` putting the no-adjustment price ``z0 - b sum q`` at ``target``."""
    return (z0 - target) / float(np.sum(q))


def build_cournot_game(mu: float, data: MarketData, b: Optional[float] = None, *,
                       cost: float = COURNOT_COST, z0: float = COURNOT_Z0, noise_var: float = NOISE_VAR):
    """Exporters choose adjustments ``x_i`` to their baseline quantities ``q_i``.

    Loss ``c (q_i + x_i) - (q_i + x_i)(z - b sum_j (q_j + x_j))`` with the
    intercept ``z`` drawn from ``z0 - mu asinh(sum_j x_j) + w``.  Each exporter
    observes its own batch of intercept draws.
    """
    q = cournot_quantities(data)
    n = q.size
    if b is None:
        b = cournot_price_slope(q, z0)
    if not b > 0:
        raise GameError("price slope b must be > 0")
    Q = float(q.sum())

    def make_player(i):
        def loss(x, xm, pts):
            total = Q + float(x.sum() + xm.sum())
            own = q[i] + x[0]
            return cost * own - own * (pts[:, 0] - b * total)

        def grad(x, xm, pts):
            total = Q + float(x.sum() + xm.sum())
            g = cost - pts[:, 0] + b * total + b * (q[i] + x[0])
            return g[:, None]

        def data_grad(x, xm, pts):
            return np.full((pts.shape[0], 1), -(q[i] + x[0]))

        return PlayerSpec(i, 1, loss, grad, data_grad)

    players = tuple(make_player(i) for i in range(n))
    A = b * (np.eye(n) + np.ones((n, n)))

    def affine(batches):
        zbar = np.array([float(batch_mean(bt.points[:, 0])) for bt in batches])
        return A.copy(), zbar - cost - b * q - b * Q

    def metric(X, batches):
        zbar = float(np.mean([batch_mean(bt.points[:, 0]) for bt in batches]))
        supply = q + X.values
        return float(np.sum(supply) * (zbar - b * np.sum(supply)))

    params = SinhPriceParams(z0, mu)
    maps = [DistributionMap("sinh-price", params, i, math.sqrt(noise_var), "cournot-noise") for i in range(n)]
    game = GameSpec(players, b, affine=affine, metric=metric, name="cournot")
    return game, maps


def _rideshare_player(i: int, d: int, alpha: float) -> PlayerSpec:
    def loss(x, xm, pts):
        return -(pts @ x) + 0.5 * alpha * float(x @ x)

    def grad(x, xm, pts):
        return -pts + alpha * x[None, :]

    def data_grad(x, xm, pts):
        return np.broadcast_to(-x, pts.shape).copy()

    return PlayerSpec(i, d, loss, grad, data_grad)


def rideshare_sensitivities(mu_A: float, seed, interval: int, d: int = N_LOCATIONS) -> list:
    """``(A_self, A_other)`` for both companies with sign-truncated diagonals."""
    rng = stream_generator("rideshare-game", tuple(seed) + (interval,))
    out = []
    for _ in range(2):
        n_self = rng.standard_normal(d)
        n_other = rng.standard_normal(d)
        E = math.sqrt(NOISE_VAR) * rng.standard_normal((d, d))
        A_self = np.diag(-mu_A + (mu_A / 5.0) * n_self) + E
        A_other = np.diag(mu_A / 2.0 + (mu_A / 10.0) * n_other) + E
        idx = np.diag_indices(d)
        A_self[idx] = np.minimum(A_self[idx], 0.0)
        A_other[idx] = np.maximum(A_other[idx], 0.0)
        out.append((A_self, A_other))
    return out


def build_rideshare_game(mu_A: float, data: MarketData, alpha_reg: float = 1.0, seed=(0, 0), *,
                         interval: int = 0, noise_var: float = NOISE_VAR, box: bool = True):
    """Two companies pricing 11 locations inside one price interval.

    Company i minimises ``-z_i . x_i + (alpha/2)||x_i||^2`` where ``x_i`` are
    price adjustments around the interval's base price ``p`` and ``z_i`` is
    logistic demand.  Adjustments are confined to ``[-p, p]``.
    """
    if not alpha_reg > 0:
        raise GameError("alpha_reg must be > 0")
    if not 0 <= interval < len(PRICE_INTERVALS):
        raise GameError(f"interval index must be in [0, {len(PRICE_INTERVALS)})")
    _, _, dem = rideshare_demands(data)
    p = float(PRICE_INTERVALS[interval])
    d = N_LOCATIONS
    sens = rideshare_sensitivities(mu_A, seed, interval, d)
    players = tuple(_rideshare_player(i, d, alpha_reg) for i in range(2))
    maps = [DistributionMap("logistic-demand", LogisticDemandParams(dem[interval, i], *sens[i]), i,
                            math.sqrt(noise_var), f"rideshare-noise-{interval}") for i in range(2)]
    A = alpha_reg * np.eye(2 * d)

    def affine(batches):
        return A.copy(), np.concatenate([batch_mean(bt.points) for bt in batches])

    def metric(X, batches):
        return float(sum(batch_mean(bt.points) @ (X.slice(i) + p) for i, bt in enumerate(batches)))

    game = GameSpec(players, alpha_reg, decision_box=((-p,) * (2 * d), (p,) * (2 * d)) if box else None,
                    affine=affine, metric=metric, name=f"rideshare-p{int(p)}")
    return game, maps


# --------------------------------------------------------------------------- protocol

@dataclass(frozen=True)
class ExperimentSpec:
    game_id: str
    sweep: tuple = ()
    trials: int = 10
    horizon: Optional[int] = None
    algorithms: tuple = ALGORITHMS
    base_seed: int = 0
    samples_per_step: int = 100
    c: float = 2.1
    eps_init: float = 1e-3
    step_size: float = 0.01
    convergence_eps: float = 1e-6
    data: Optional[str] = None
    price_slope: Optional[float] = None
    alpha_reg: float = 1.0
    algorithm_extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.game_id not in GAMES:
            raise GameError(f"unknown game {self.game_id!r}; choose from {GAMES}")
        sweep = tuple(float(s) for s in (self.sweep or DEFAULT_SWEEPS[self.game_id]))
        object.__setattr__(self, "sweep", sweep)
        if self.horizon is None:
            object.__setattr__(self, "horizon", DEFAULT_HORIZONS[self.game_id])
        if self.data is None and self.game_id in DEFAULT_DATA:
            object.__setattr__(self, "data", DEFAULT_DATA[self.game_id])
        algs = tuple(self.algorithms)
        for a in algs:
            if a not in ALGORITHMS:
                raise GameError(f"unknown algorithm {a!r}")
        if not algs:
            raise GameError("at least one algorithm is required")
        object.__setattr__(self, "algorithms", algs)
        if self.trials < 1:
            raise GameError("trials must be >= 1")
        if self.horizon < 1:
            raise GameError("horizon must be >= 1")

    def config_for(self, kind: str) -> AlgorithmConfig:
        return AlgorithmConfig(kind=kind, c=self.c, step_size=self.step_size, max_steps=self.horizon,
                               samples_per_step=self.samples_per_step, convergence_eps=self.convergence_eps,
                               eps_init=self.eps_init, extra=dict(self.algorithm_extra.get(kind, {})))

    def load_data(self) -> Optional[MarketData]:
        if self.game_id == "prediction":
            return None
        return load_market_data(resolve_data_path(self.data), self.game_id)


def build_segments(spec: ExperimentSpec, setting: float, trial: int, data: Optional[MarketData]) -> list:
    """``[(segment, game, maps, seed)]`` for one (setting, trial)."""
    seed = (spec.base_seed, trial)
    if spec.game_id == "prediction":
        game, maps = build_prediction_game(setting, seed)
        return [("", game, maps, seed)]
    if spec.game_id == "cournot":
        game, maps = build_cournot_game(setting, data, spec.price_slope)
        return [("", game, maps, seed)]
    out = []
    for k, p in enumerate(PRICE_INTERVALS):
        game, maps = build_rideshare_game(setting, data, spec.alpha_reg, seed, interval=k)
        out.append((f"p{p}", game, maps, seed + (k,)))
    return out


@dataclass
class CellResult:
    setting: float
    algorithm: str
    traces: list = field(default_factory=list)
    values: list = field(default_factory=list)
    curves: list = field(default_factory=list)
    error: Optional[str] = None


def run_cell(spec: ExperimentSpec, setting: float, algorithm: str, data: Optional[MarketData] = None) -> CellResult:
    """Every trial of one (setting, algorithm); the first failure aborts the cell."""
    if data is None:
        data = spec.load_data()
    cfg = spec.config_for(algorithm)
    res = CellResult(setting, algorithm)
    try:
        for trial in range(spec.trials):
            segs = []
            for segment, game, maps, seed in build_segments(spec, setting, trial, data):
                segs.append(run(game, maps, cfg, seed, segment=segment))
            curve = np.sum([tr.metrics() for tr in segs], axis=0)
            res.traces.append(segs)
            res.curves.append(curve)
            res.values.append(float(curve[-1]))
    except (RunError, GameError, FloatingPointError) as exc:
        res.error = f"trial {trial}: {exc}"
        res.traces, res.values, res.curves = [], [], []
    return res


def _cell_worker(args):
    spec, setting, algorithm = args
    return run_cell(spec, setting, algorithm)


@dataclass
class MetricReport:
    """Per (setting, algorithm): terminal-metric mean/std over trials and mean curves."""

    game_id: str
    metric: str
    trials: int
    cells: list = field(default_factory=list)

    def cell(self, setting: float, algorithm: str) -> dict:
        for c in self.cells:
            if c["setting"] == float(setting) and c["algorithm"] == algorithm:
                return c
        raise KeyError((setting, algorithm))

    @property
    def failed(self) -> list:
        return [c for c in self.cells if c["error"] is not None]

    def to_dict(self, curves: bool = True) -> dict:
        cells = []
        for c in self.cells:
            c = dict(c)
            if not curves:
                c.pop("curve", None)
            cells.append(c)
        return {"game": self.game_id, "metric": self.metric, "trials": self.trials, "cells": cells}


METRIC_NAMES = {"prediction": "sum_rmse", "cournot": "total_revenue", "rideshare": "total_revenue"}


def _summarize(res: CellResult, trials: int) -> dict:
    if res.error is not None:
        return {"setting": res.setting, "algorithm": res.algorithm, "mean": None, "std": None,
                "n_trials": 0, "values": [], "curve": [], "error": res.error}
    vals = np.array(res.values)
    std = float(np.std(vals, ddof=1)) if vals.size > 1 else 0.0
    return {"setting": res.setting, "algorithm": res.algorithm, "mean": float(np.mean(vals)), "std": std,
            "n_trials": int(vals.size), "values": [float(v) for v in vals],
            "curve": [float(v) for v in np.mean(res.curves, axis=0)], "error": None}


def run_experiment(spec: ExperimentSpec, parallelism: int = 1,
                   on_cell: Optional[Callable[[CellResult], None]] = None) -> MetricReport:
    """Run every (setting, algorithm, trial) of ``spec``.

    Cells can run in worker processes; results are reduced in sweep order
    so the report does not depend on completion order.  ``on_cell`` sees
    each cell (with its traces) in that same order.
    """
    if parallelism < 1:
        raise ValueError("parallelism must be >= 1")
    data = spec.load_data()
    jobs = [(spec, s, a) for s in spec.sweep for a in spec.algorithms]
    if parallelism == 1 or len(jobs) == 1:
        results = (run_cell(sp, s, a, data) for sp, s, a in jobs)
    else:
        pool = ProcessPoolExecutor(max_workers=parallelism)
        results = pool.map(_cell_worker, jobs)
    report = MetricReport(spec.game_id, METRIC_NAMES[spec.game_id], spec.trials)
    try:
        for res in results:
            if on_cell is not None:
                on_cell(res)
            report.cells.append(_summarize(res, spec.trials))
    finally:
        if parallelism > 1 and len(jobs) > 1:
            pool.shutdown()
    return report


def with_overrides(spec: ExperimentSpec, **kw) -> ExperimentSpec:
    return replace(spec, **{k: v for k, v in kw.items() if v is not None})
