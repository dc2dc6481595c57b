import json

import pytest

from regliq.cli import main
from conftest import tight_family_config, two_regime_jump_config

FAST = ["--steps", "192", "--L", "1,2,4,8,16", "--refinement", "1.4"]


@pytest.fixture
def config_path(tmp_path):
    path = tmp_path / "model.json"
    path.write_text(json.dumps(two_regime_jump_config()))
    return str(path)


@pytest.fixture
def tight_path(tmp_path):
    path = tmp_path / "tight.json"
    path.write_text(json.dumps(tight_family_config()))
    return str(path)


def test_solve_artifacts(config_path, tmp_path):
    out = tmp_path / "out"
    code = main(["solve", "--config", config_path, "--out", str(out)] + FAST)
    assert code == 0
    manifest = json.loads((out / "manifest_solve.json").read_text())
    assert manifest["command"] == "solve"
    for name in manifest["artifacts"]:
        assert (out / name).exists()
    assert "ladder_L16.csv" in manifest["artifacts"]
    assert manifest["parameters"]["levels"] == [1.0, 2.0, 4.0, 8.0, 16.0]


def test_bounds_verdict(config_path, tmp_path):
    out = tmp_path / "out"
    code = main(["bounds", "--config", config_path, "--out", str(out)] + FAST)
    assert code == 0
    verdict = json.loads((out / "sandwich_verdict.json").read_text())
    assert verdict["passed"] is True
    header = (out / "envelope.csv").read_text().splitlines()[0]
    assert header == "t,lower,upper"


def test_converge_artifacts(config_path, tmp_path):
    out = tmp_path / "out"
    code = main(["converge", "--config", config_path, "--out", str(out)] + FAST)
    assert code == 0
    summary = json.loads((out / "converge_summary.json").read_text())
    assert summary["passed"] is True
    assert (out / "singular.csv").exists()
    assert (out / "blowup_profile.csv").exists()


def test_simulate_deterministic_across_threads(tight_path, tmp_path):
    blobs = []
    for threads in ("1", "4"):
        out = tmp_path / f"out{threads}"
        code = main(
            ["simulate", "--config", tight_path, "--out", str(out),
             "--paths", "400", "--seed", "42", "--threads", threads] + FAST
        )
        assert code == 0
        blobs.append((out / "mc_report.json").read_bytes())
    assert blobs[0] == blobs[1]


def test_simulate_rerun_identical(tight_path, tmp_path):
    blobs = []
    for run in ("a", "b"):
        out = tmp_path / run
        code = main(
            ["simulate", "--config", tight_path, "--out", str(out),
             "--paths", "300", "--seed", "7", "--dump-paths", "3"] + FAST
        )
        assert code == 0
        blobs.append(
            (out / "mc_report.json").read_bytes() + (out / "paths.csv").read_bytes()
        )
    assert blobs[0] == blobs[1]


def test_simulate_penalized_mode(tight_path, tmp_path):
    out = tmp_path / "out"
    code = main(
        ["simulate", "--config", tight_path, "--out", str(out),
         "--paths", "2000", "--seed", "1", "--penalized", "1.0"] + FAST
    )
    assert code == 0
    report = json.loads((out / "mc_report.json").read_text())
    assert report["verdict"] == "PASS"
    assert report["tail_bound"] == 0.0


def test_perturbed_policy_fails_verdict(tight_path, tmp_path):
    # An intentionally suboptimal rate must break the value identity.
    out = tmp_path / "out"
    code = main(
        ["simulate", "--config", tight_path, "--out", str(out),
         "--paths", "4000", "--seed", "3", "--penalized", "1.0",
         "--perturb-xi", "1.8"] + FAST
    )
    assert code == 2
    report = json.loads((out / "mc_report.json").read_text())
    assert report["verdict"] == "FAIL"
    assert report["z_score"] > 3.0


def test_corrupted_config_exit_one(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{"regimes": [[0.0]], "horizon": -2}')
    code = main(["solve", "--config", str(bad), "--out", str(tmp_path / "o")])
    assert code == 1
    err = json.loads(capsys.readouterr().err.strip())
    assert err["code"] == "SchemaError"
    assert "horizon" in err["message"]


def test_missing_config_exit_one(tmp_path, capsys):
    code = main(["solve", "--config", str(tmp_path / "nope.json"),
                 "--out", str(tmp_path / "o")])
    assert code == 1
    err = json.loads(capsys.readouterr().err.strip())
    assert err["code"] == "FileNotFoundError"


def test_usage_error_exit_one(capsys):
    assert main(["frobnicate"]) == 1
    assert main([]) == 1


def test_verify_and_report(tight_path, tmp_path):
    out = tmp_path / "out"
    code = main(
        ["verify", "--config", tight_path, "--out", str(out),
         "--paths", "600", "--seed", "5"] + FAST
    )
    assert code == 0
    summary = json.loads((out / "verify_summary.json").read_text())
    assert summary["passed"] is True
    names = {c["name"] for c in summary["checks"]}
    assert {
        "ladder_envelope",
        "ladder_monotone",
        "singular_sandwich",
        "blowup_profile",
        "value_identity_penalized",
        "value_identity_singular",
        "product_formula_gap",
        "state_monotone",
        "quadratic_scaling",
        "martingale_checkpoints",
        "suboptimality_nonnegative",
    } <= names

    code = main(["report", "--out", str(out)])
    assert code == 0
    report = json.loads((out / "report.json").read_text())
    assert report["passed"] is True
    assert report["runs"][0]["command"] == "verify"
