import csv
import json
from pathlib import Path

import pytest

import perfgame.experiments as ex
from perfgame.algorithms import RunError
from perfgame.cli import load_config, main, ConfigError

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def _write(tmp_path, text, name="cfg.toml"):
    p = tmp_path / name
    p.write_text(text)
    return p


MINIMAL = """
[experiment]
game = "prediction"
sweep = [2.5]
trials = 1
horizon = 6
algorithms = ["SIR2"]
"""


def test_minimal_run(tmp_path):
    cfg = _write(tmp_path, MINIMAL)
    out = tmp_path / "out"
    assert main(["run", "--config", str(cfg), "--output", str(out)]) == 0
    traces = sorted(p.name for p in out.glob("trace_*.csv"))
    assert traces == ["trace_prediction_SIR2_2.5_0.csv"]
    rep = json.loads((out / "report.json").read_text())
    assert len(rep["cells"]) == 1
    with open(out / traces[0]) as fh:
        rows = list(csv.DictReader(fh))
    assert [int(r["t"]) for r in rows] == list(range(1, 7))
    for col in ("step_norm", "loss_0", "loss_1", "eps_hat_0", "eps_hat_1", "gamma", "residual"):
        assert col in rows[0]
    assert (out / "curves_prediction.csv").exists()


def test_trace_floats_round_trip(tmp_path):
    from perfgame.algorithms import AlgorithmConfig, run
    from perfgame.cli import write_trace

    game, maps = ex.build_prediction_game(2.5, (0, 0))
    tr = run(game, maps, AlgorithmConfig("SIR2", max_steps=4), (0, 0))
    write_trace(tmp_path / "t.csv", [tr])
    with open(tmp_path / "t.csv") as fh:
        rows = list(csv.DictReader(fh))
    for rec, row in zip(tr.records, rows):
        assert float(row["step_norm"]) == rec.step_norm
        assert float(row["eps_hat_0"]) == rec.eps_hat[0]
        assert float(row["x_3"]) == rec.X[3]


def test_rerun_is_byte_identical(tmp_path):
    cfg = _write(tmp_path, MINIMAL.replace('["SIR2"]', '["SIR2", "AGM"]'))
    for d in ("a", "b"):
        assert main(["run", "--config", str(cfg), "--output", str(tmp_path / d)]) == 0
    names = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert names == sorted(p.name for p in (tmp_path / "b").iterdir())
    for n in names:
        assert (tmp_path / "a" / n).read_bytes() == (tmp_path / "b" / n).read_bytes()


def test_full_cardinality(tmp_path):
    cfg = _write(tmp_path, '[experiment]\ngame = "prediction"\nhorizon = 2\n')
    out = tmp_path / "out"
    assert main(["run", "--config", str(cfg), "--output", str(out), "--trials", "10", "--algorithms", "all"]) == 0
    assert len(list(out.glob("trace_*.csv"))) == 4 * 6 * 10


def test_missing_data_file(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("PERFGAME_DATA_DIR", str(tmp_path / "nowhere"))
    code = main(["run", "--config", str(CONFIGS / "cournot.toml"), "--output", str(tmp_path / "o")])
    assert code == 1
    assert "nowhere" in capsys.readouterr().err


def test_config_errors(tmp_path, capsys):
    bad = _write(tmp_path, "[experiment]\ngame = \"prediction\"\ncolour = 3\n")
    assert main(["run", "--config", str(bad)]) == 1
    assert "colour" in capsys.readouterr().err
    broken = _write(tmp_path, "[experiment\ngame = 1\n", "broken.toml")
    assert main(["run", "--config", str(broken)]) == 1
    assert "line" in capsys.readouterr().err
    with pytest.raises(ConfigError):
        load_config(_write(tmp_path, "[experiment]\ngame = \"prediction\"\nalgorithms = \"SIR2,FOO\"\n", "c.toml"))
    assert main(["run", "--config", str(tmp_path / "absent.toml")]) == 1


def test_partial_failure_exit_code(tmp_path, monkeypatch):
    real = ex.run

    def flaky(game, maps, cfg, seed, segment=""):
        if cfg.kind == "RR":
            raise RunError(1, RuntimeError("boom"))
        return real(game, maps, cfg, seed, segment=segment)

    monkeypatch.setattr(ex, "run", flaky)
    cfg = _write(tmp_path, MINIMAL.replace('["SIR2"]', '["SIR2", "RR"]'))
    out = tmp_path / "out"
    assert main(["run", "--config", str(cfg), "--output", str(out)]) == 2
    assert [p.name for p in out.glob("trace_*.csv")] == ["trace_prediction_SIR2_2.5_0.csv"]
    rep = json.loads((out / "report.json").read_text())
    assert {c["algorithm"]: c["error"] is None for c in rep["cells"]} == {"SIR2": True, "RR": False}


def test_verify_single_suite(capsys):
    assert main(["verify", "regularizer"]) == 0
    out = capsys.readouterr().out
    assert "PASS regularizer/game-0" in out and "200/200" in out
    assert main(["verify", "nonsense"]) == 1


def test_sweep_c(tmp_path, capsys):
    cfg = _write(tmp_path, '[experiment]\ngame = "rideshare"\nsweep = [0.5]\ntrials = 1\n')
    assert main(["sweep-c", "--config", str(cfg), "--values", "2.0,4", "--output", str(tmp_path)]) == 1
    assert "c > 2" in capsys.readouterr().err
    assert main(["sweep-c", "--config", str(cfg), "--values", "3", "--output", str(tmp_path)]) == 0
    res = json.loads((tmp_path / "sweep_c.json").read_text())
    assert res["settings"][0]["relative_spread"] == 0.0
    assert res["horizon"] == 15


def test_bundled_configs_parse():
    for p in CONFIGS.glob("*.toml"):
        cfg = load_config(p)
        cfg.experiment.load_data()
