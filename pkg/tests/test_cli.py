from __future__ import annotations

import json

import pytest

from avgcorr import cli, experiments
from avgcorr.errors import ConfigError, DivergenceError


def test_parse_config_and_seeds():
    text = "# settings\nupdates = 20   # short\n\ngammas=0.5,0.9\n"
    assert cli.parse_config(text) == {"updates": "20", "gammas": "0.5,0.9"}
    with pytest.raises(ConfigError):
        cli.parse_config("no equals sign")
    assert cli.parse_seeds("0-3") == [0, 1, 2, 3]
    assert cli.parse_seeds("4, 7,9") == [4, 7, 9]
    assert cli.parse_seeds("5") == [5]


def test_oracle_checks_run_and_verify(tmp_path, capsys):
    out = tmp_path / "oracle"
    argv = ["run", "oracle_checks", "--seed", "1", "--set", "instances=10", "--set", "repetitions=20", "--out", str(out)]
    assert cli.main(argv) == cli.EXIT_OK
    manifest = json.loads((out / "manifest.json").read_text())
    for key in ("anchor", "status", "config_hash", "seeds", "code_version", "kernel_backend", "elapsed_seconds"):
        assert key in manifest
    assert manifest["status"] == "ok" and manifest["seeds"] == [1]
    assert cli.main(["verify", "oracle_checks", "--in", str(out)]) == cli.EXIT_OK
    printed = capsys.readouterr().out
    assert "PASS corrected_gradient_equals_true" in printed and "FAIL" not in printed
    report = json.loads((out / "report.json").read_text())
    assert all(r["passed"] for r in report.values())


def test_counterexample_csv_is_bit_reproducible(tmp_path):
    outputs = []
    for name in ("a", "b"):
        out = tmp_path / name
        argv = ["run", "counterexample", "--seed", "0-1", "--steps", "30", "--set", "gammas=0.5",
                "--set", "log_every=5", "--out", str(out)]
        assert cli.main(argv) == cli.EXIT_OK
        outputs.append({p.name: p.read_bytes() for p in sorted(out.glob("*.csv"))})
    assert outputs[0] and outputs[0] == outputs[1]
    assert set(outputs[0]) == {"curves.csv", "summary.csv"}


def test_config_hash_tracks_settings(tmp_path):
    args = cli.make_parser().parse_args(["run", "counterexample", "--seed", "0", "--out", str(tmp_path)])
    same = cli.make_parser().parse_args(["run", "counterexample", "--seed", "0", "--out", str(tmp_path / "x")])
    other = cli.make_parser().parse_args(["run", "counterexample", "--seed", "1", "--out", str(tmp_path)])
    h = cli.config_hash(cli.build_spec(args))
    assert h == cli.config_hash(cli.build_spec(same))
    assert h != cli.config_hash(cli.build_spec(other))


def test_config_file_and_flag_precedence(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("seed = 3\nupdates = 40\n")
    args = cli.make_parser().parse_args(["run", "counterexample", "--config", str(cfg), "--seed", "5"])
    spec = cli.build_spec(args)
    assert spec.seeds == [5] and spec.get("updates", 0) == 40


def test_usage_errors_exit_two(tmp_path, capsys):
    assert cli.main(["run", "counterexample", "--env", "cartpole", "--out", str(tmp_path)]) == cli.EXIT_USAGE
    assert cli.main(["verify", "cartpole", "--in", str(tmp_path / "missing")]) == cli.EXIT_USAGE
    assert cli.main(["run", "oracle_checks", "--config", str(tmp_path / "nope.cfg")]) == cli.EXIT_USAGE
    with pytest.raises(SystemExit) as err:
        cli.main(["run", "pendulum"])
    assert err.value.code == cli.EXIT_USAGE
    assert "usage error" in capsys.readouterr().err


def test_divergence_leaves_partial_results(tmp_path, monkeypatch):
    def explode(spec):
        raise DivergenceError("non-finite parameters", [{"step": 0, "x": 1.0}, {"step": 10, "x": 2.0}])

    monkeypatch.setitem(cli.EXPERIMENTS, "cartpole",
                        experiments.Experiment(explode, experiments.verify_cartpole, "test"))
    out = tmp_path / "div"
    assert cli.main(["run", "cartpole", "--out", str(out)]) == cli.EXIT_FAILED
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["status"] == "error" and "DivergenceError" in manifest["error"]
    assert (out / "partial_curve.csv").read_text().splitlines() == ["step,x", "0,1.0", "10,2.0"]


def test_cartpole_verify_reports_failure(tmp_path, capsys):
    out = tmp_path / "cp"
    out.mkdir()
    rows = [dict(scheme=s, seed=i, final_return=r) for s, vals in (("uncorrected", [500, 490, 480]),
                                                                  ("averaging_net", [20, 25, 30]))
            for i, r in enumerate(vals)]
    cli.write_table(out / "summary.csv", rows)
    assert cli.main(["verify", "cartpole", "--in", str(out)]) == cli.EXIT_FAILED
    assert "FAIL cartpole_noninferiority" in capsys.readouterr().out
