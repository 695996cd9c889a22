import json


from dhw import cli, harness
from dhw.errors import NumericError


def shipped():
    return str(harness.shipped_config_path())


def small_config(tmp_path):
    d = json.loads(harness.shipped_config_path().read_text())
    d["beam_sets"] = {k: d["beam_sets"][k] for k in ("G1", "G2", "G3")}
    d["reference"] = "G3"
    p = tmp_path / "small.json"
    p.write_text(json.dumps(d))
    return str(p)


def test_simulate_writes_outputs(tmp_path, capsys):
    out = tmp_path / "out"
    assert cli.main(["simulate", small_config(tmp_path), "--out", str(out), "--zsamples", "64"]) == 0
    assert "status=PASSED" in capsys.readouterr().out
    report = json.loads((out / "report.json").read_text())
    assert report["status"] == "PASSED"
    assert (out / "solution_G3.csv").exists() and (out / "snapshot_G1.csv").exists()


def test_beams_prints_tables(capsys):
    assert cli.main(["beams", shipped()]) == 0
    out = capsys.readouterr().out
    assert "# G: 30 beams" in out and "PASS" in out


def test_bounds_prints_scalars_and_dominance(capsys):
    assert cli.main(["bounds", shipped(), "--zsamples", "64"]) == 0
    out = capsys.readouterr().out
    assert "scattering_length_nm" in out and "0 violated" in out


def test_bounds_with_seed_runs_random_suite(tmp_path, capsys, monkeypatch):
    real = harness.random_suite
    monkeypatch.setattr(harness, "random_suite", lambda seed: real(seed, count=2))
    assert cli.main(["bounds", small_config(tmp_path), "--seed", "5", "--zsamples", "32"]) == 0
    assert "random suite (seed 5): 2 systems" in capsys.readouterr().out


def test_table_prints_both_tables(capsys):
    assert cli.main(["table", shipped(), "--zsamples", "8"]) == 0
    out = capsys.readouterr().out
    assert "14.07" in out and "digits" in out


def test_missing_config_exits_with_validation_code(tmp_path, capsys):
    assert cli.main(["beams", str(tmp_path / "missing.json")]) == 1
    assert "validation error" in capsys.readouterr().err


def test_bad_zsamples_exits_with_validation_code(tmp_path):
    assert cli.main(["simulate", small_config(tmp_path), "--zsamples", "0"]) == 1


def test_numeric_failure_exit_code(tmp_path, monkeypatch):
    def boom(*_a, **_k):
        raise NumericError("eigendecomposition failed")

    monkeypatch.setattr(harness, "run", boom)
    assert cli.main(["simulate", small_config(tmp_path)]) == 2


def test_failed_run_exits_with_invariant_code(tmp_path, capsys):
    assert cli.main(["simulate", small_config(tmp_path), "--tol", "1e-300", "--zsamples", "16"]) == 3
    assert "invariant violation" in capsys.readouterr().err


def test_usage_errors_exit_with_validation_code():
    assert cli.main(["frobnicate", shipped()]) == 1
    assert cli.main(["simulate", shipped(), "--zsamples", "many"]) == 1


def test_help_exits_cleanly():
    assert cli.main(["--help"]) == 0
