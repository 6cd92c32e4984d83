"""Command-line driver: ``run``, ``verify`` and ``sweep-c``.

Exit codes: 0 success, 1 configuration error or failed verification,
2 when some (setting, algorithm) cells failed but the rest were written.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from perfgame.algorithms import ALGORITHMS
from perfgame.experiments import ExperimentSpec, MetricReport, run_experiment, with_overrides
from perfgame.game import GameError
from perfgame.verify import SUITES, run_suites

EXIT_OK, EXIT_CONFIG, EXIT_PARTIAL = 0, 1, 2


class ConfigError(Exception):
    pass


@dataclass
class RunConfig:
    experiment: ExperimentSpec
    output_dir: Path
    parallelism: int = 1
    emit: dict = field(default_factory=lambda: {"traces": True, "report": True, "plotdata": True})


_SECTIONS = {
    "experiment": {"game", "sweep", "trials", "horizon", "algorithms", "base_seed", "samples_per_step"},
    "algorithm": {"c", "eps_init", "step_size", "convergence_eps", "extra"},
    "data": {"file", "price_slope", "alpha_reg"},
    "output": {"dir", "parallelism", "traces", "report", "plotdata"},
}


def _parse_algorithms(value) -> tuple:
    if isinstance(value, str):
        value = list(ALGORITHMS) if value.strip().lower() == "all" else [v.strip() for v in value.split(",") if v.strip()]
    algs = tuple(value)
    for a in algs:
        if a not in ALGORITHMS:
            raise ConfigError(f"algorithms: unknown algorithm {a!r} (choose from {', '.join(ALGORITHMS)} or 'all')")
    return algs


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        raw = tomllib.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    for sec, body in raw.items():
        if sec not in _SECTIONS:
            raise ConfigError(f"{path}: unknown section [{sec}]")
        unknown = set(body) - _SECTIONS[sec]
        if unknown:
            raise ConfigError(f"{path}: unknown field(s) in [{sec}]: {', '.join(sorted(unknown))}")
    exp = raw.get("experiment", {})
    alg = raw.get("algorithm", {})
    data = raw.get("data", {})
    out = raw.get("output", {})
    if "game" not in exp:
        raise ConfigError(f"{path}: [experiment] needs a 'game' field")
    kw = dict(game_id=exp["game"])
    for key, name in (("sweep", "sweep"), ("trials", "trials"), ("horizon", "horizon"),
                      ("base_seed", "base_seed"), ("samples_per_step", "samples_per_step")):
        if key in exp:
            kw[name] = exp[key]
    if "algorithms" in exp:
        kw["algorithms"] = _parse_algorithms(exp["algorithms"])
    for key in ("c", "eps_init", "step_size", "convergence_eps"):
        if key in alg:
            kw[key] = alg[key]
    if "extra" in alg:
        kw["algorithm_extra"] = dict(alg["extra"])
    if "file" in data:
        kw["data"] = data["file"]
    if "price_slope" in data:
        kw["price_slope"] = data["price_slope"]
    if "alpha_reg" in data:
        kw["alpha_reg"] = data["alpha_reg"]
    try:
        spec = ExperimentSpec(**kw)
    except (GameError, TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: [experiment] {exc}") from None
    parallelism = int(out.get("parallelism", 1))
    if parallelism < 1:
        raise ConfigError(f"{path}: [output] parallelism must be >= 1")
    emit = {k: bool(out.get(k, True)) for k in ("traces", "report", "plotdata")}
    return RunConfig(spec, Path(out.get("dir", "results")), parallelism, emit)


def _fmt(v) -> str:
    """Round-trip decimal text for floats, plain text otherwise."""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return str(v)


def setting_label(setting: float) -> str:
    return f"{setting:g}"


def write_trace(path: Path, segments) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(segments[0].columns())
        for tr in segments:
            for row in tr.rows():
                w.writerow([_fmt(v) for v in row])


def write_report(path: Path, report: MetricReport) -> None:
    path.write_text(json.dumps(report.to_dict(curves=False), indent=2, sort_keys=True) + "\n", encoding="utf-8")


def write_curves(path: Path, report: MetricReport) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["setting", "algorithm", "t", "mean_metric"])
        for c in report.cells:
            for t, v in enumerate(c["curve"], start=1):
                w.writerow([_fmt(c["setting"]), c["algorithm"], t, _fmt(v)])


def execute(cfg: RunConfig, log=print) -> tuple:
    """Run an experiment and write its files; returns ``(report, exit_code)``."""
    spec = cfg.experiment
    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)

    def on_cell(res):
        if res.error is not None:
            log(f"cell setting={setting_label(res.setting)} algorithm={res.algorithm} FAILED: {res.error}")
            return
        if cfg.emit["traces"]:
            for trial, segs in enumerate(res.traces):
                name = f"trace_{spec.game_id}_{res.algorithm}_{setting_label(res.setting)}_{trial}.csv"
                write_trace(out / name, segs)
        log(f"cell setting={setting_label(res.setting)} algorithm={res.algorithm} "
            f"mean={np.mean(res.values):.6g}")

    report = run_experiment(spec, cfg.parallelism, on_cell)
    if cfg.emit["report"]:
        write_report(out / "report.json", report)
    if cfg.emit["plotdata"]:
        write_curves(out / f"curves_{spec.game_id}.csv", report)
    return report, (EXIT_PARTIAL if report.failed else EXIT_OK)


def cmd_run(args) -> int:
    try:
        cfg = load_config(args.config)
        overrides = {"trials": args.trials, "base_seed": args.seed}
        if args.algorithms is not None:
            overrides["algorithms"] = _parse_algorithms(args.algorithms)
        cfg.experiment = with_overrides(cfg.experiment, **overrides)
        if args.output is not None:
            cfg.output_dir = Path(args.output)
        if args.parallelism is not None:
            if args.parallelism < 1:
                raise ConfigError("--parallelism must be >= 1")
            cfg.parallelism = args.parallelism
        cfg.experiment.load_data()
    except (ConfigError, GameError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    _, code = execute(cfg)
    return code


def cmd_verify(args) -> int:
    names = args.suites or list(SUITES)
    unknown = [n for n in names if n not in SUITES]
    if unknown:
        print(f"error: unknown suite(s) {', '.join(unknown)}; choose from {', '.join(SUITES)}", file=sys.stderr)
        return EXIT_CONFIG
    checks = run_suites(names, seed=args.seed or 0)
    failures = []
    for c in checks:
        print(f"{'PASS' if c.passed else 'FAIL'} {c.suite}/{c.name}: {c.detail}")
        if not c.passed:
            failures.append({"suite": c.suite, "name": c.name, "detail": c.detail, "instance": c.instance})
    print(f"{len(checks) - len(failures)}/{len(checks)} checks passed")
    if failures:
        text = json.dumps(failures, indent=2, sort_keys=True)
        if args.output:
            out = Path(args.output)
            out.mkdir(parents=True, exist_ok=True)
            (out / "verify_failures.json").write_text(text + "\n", encoding="utf-8")
        else:
            print(text)
        return EXIT_CONFIG
    return EXIT_OK


def sweep_c(spec: ExperimentSpec, values, parallelism: int = 1) -> dict:
    """Terminal SIR2 metric for every c and its relative spread ``(max - min) / mean`` per setting."""
    values = [float(v) for v in values]
    bad = [v for v in values if not v > 2]
    if bad:
        raise ConfigError(f"every c must satisfy c > 2 (got {', '.join(_fmt(v) for v in bad)})")
    means = {}
    for c in values:
        rep = run_experiment(with_overrides(spec, c=c, algorithms=("SIR2",)), parallelism)
        for cell in rep.cells:
            if cell["error"] is not None:
                raise RuntimeError(f"c={c}: {cell['error']}")
            means.setdefault(cell["setting"], []).append(cell["mean"])
    rows = []
    for setting, ms in means.items():
        ms = np.array(ms)
        spread = float((ms.max() - ms.min()) / abs(ms.mean())) if ms.size > 1 else 0.0
        rows.append({"setting": setting, "c": values, "terminal_mean": ms.tolist(), "relative_spread": spread})
    return {"game": spec.game_id, "horizon": spec.horizon, "trials": spec.trials, "settings": rows}


def cmd_sweep_c(args) -> int:
    try:
        cfg = load_config(args.config)
        values = [float(v) for v in args.values.split(",") if v.strip()]
        if not values:
            raise ConfigError("--values needs at least one c")
        spec = with_overrides(cfg.experiment, trials=args.trials, base_seed=args.seed, horizon=args.horizon)
        res = sweep_c(spec, values, args.parallelism or cfg.parallelism)
    except (ConfigError, GameError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    for row in res["settings"]:
        print(f"setting={setting_label(row['setting'])} relative_spread={row['relative_spread']:.4%}")
    out = Path(args.output) if args.output else cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    (out / "sweep_c.json").write_text(json.dumps(res, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="perfgame", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, config_required=True):
        p.add_argument("--config", required=config_required, help="TOML experiment config")
        p.add_argument("--output", help="output directory (overrides the config)")
        p.add_argument("--trials", type=int)
        p.add_argument("--seed", type=int)
        p.add_argument("--parallelism", type=int)

    p = sub.add_parser("run", help="run an experiment and write traces, report and curves")
    common(p)
    p.add_argument("--algorithms", help="comma-separated subset or 'all'")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("verify", help="run the invariant suites")
    p.add_argument("suites", nargs="*", help=f"any of: {', '.join(SUITES)} (default: all)")
    p.add_argument("--output")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("sweep-c", help="SIR2 terminal metric across values of c")
    common(p)
    p.add_argument("--values", default="2.1,4,6,8,10")
    p.add_argument("--horizon", type=int, default=15)
    p.set_defaults(func=cmd_sweep_c)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
