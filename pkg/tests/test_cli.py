"""Tests for the config loader, the experiment runner and the command line."""

import hashlib
import json

import pytest

from parabolic_lab.cli import build_parser, main
from parabolic_lab.config import DEFAULTS, load_config
from parabolic_lab.experiments import (
    EXPERIMENTS,
    ExperimentConfig,
    InvalidRangeError,
    UnknownExperimentError,
    run_experiment,
)


def test_defaults_load():
    assert DEFAULTS.physics.mu == pytest.approx(1e-3)
    assert DEFAULTS.sweeps.tangency_n == (1000, 10000, 100000)
    assert DEFAULTS.normalform.max_degree == 10


def test_overlay_replaces_values(tmp_path):
    overlay = tmp_path / "overlay.cfg"
    overlay.write_text("[physics]\nmu = 0.01\n[sweeps]\nlambda_q0 = 0.1\n")
    cfg = load_config([overlay])
    assert cfg.physics.mu == pytest.approx(0.01)
    assert cfg.sweeps.lambda_q0 == (0.1,)
    assert cfg.physics.jacobi_J == DEFAULTS.physics.jacobi_J


def test_overlay_rejects_unknown_key(tmp_path):
    overlay = tmp_path / "bad.cfg"
    overlay.write_text("[physics]\nmass = 1\n")
    with pytest.raises(KeyError):
        load_config([overlay])


def test_experiment_config_validation(tmp_path):
    with pytest.raises(UnknownExperimentError):
        ExperimentConfig("no-such-experiment").validate()
    with pytest.raises(InvalidRangeError):
        ExperimentConfig("lambda-failure", threads=0).validate()
    overlay = tmp_path / "short.cfg"
    overlay.write_text("[sweeps]\nshilnikov_T = 100, 200\n")
    with pytest.raises(InvalidRangeError):
        ExperimentConfig("lambda-failure", lab=load_config([overlay])).validate()


def test_parser_lists_every_experiment():
    parser = build_parser()
    for name in EXPERIMENTS:
        assert parser.parse_args([name]).experiment == name
    with pytest.raises(SystemExit):
        parser.parse_args(["no-such-experiment"])


def test_run_writes_manifest_with_checksums(tmp_path):
    manifest = run_experiment(ExperimentConfig("lambda-failure", out_dir=str(tmp_path)))
    assert manifest.passed
    data = json.loads((tmp_path / "manifest.json").read_text())
    assert data["experiment"] == "lambda-failure"
    assert set(data["artifacts"]) == {"cone.csv", "lambda_limit.csv"}
    for name, digest in data["artifacts"].items():
        assert hashlib.sha256((tmp_path / name).read_bytes()).hexdigest() == digest


def test_runs_are_deterministic(tmp_path):
    first = run_experiment(ExperimentConfig("lambda-failure", out_dir=str(tmp_path / "a")))
    second = run_experiment(ExperimentConfig("lambda-failure", out_dir=str(tmp_path / "b"), seed=7))
    assert first.artifacts == second.artifacts
    assert first.metrics == second.metrics


def test_main_exit_codes(tmp_path, capsys):
    assert main(["lambda-failure", "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert "PASS cone_exponent" in out
    assert main(["lambda-failure", "--out", str(tmp_path), "--seed", "-1"]) == 2
    assert main(["lambda-failure", "--out", str(tmp_path), "--threads", "0"]) == 2
