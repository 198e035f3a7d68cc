"""End-to-end command-line checks (exit codes and emitted files)."""

import json

import numpy as np
import pytest

from ssdgp.cli import main


MODEL = {
    "nodes": [
        {
            "layer": 1,
            "position": 1,
            "alpha": 1,
            "lengthscale": {"parent": [2, 1], "wrapping": "exp"},
            "magnitude": {"fixed": 2.0},
        },
        {
            "layer": 2,
            "position": 1,
            "alpha": 0,
            "lengthscale": {"fixed": 0.1},
            "magnitude": {"fixed": 1.0},
        },
    ]
}


@pytest.fixture
def model_file(tmp_path):
    p = tmp_path / "model.json"
    p.write_text(json.dumps(MODEL))
    return p


def _write_config(tmp_path, **overrides):
    cfg = {
        "solver": "gp-mle",
        "data": {"kind": "rectangle", "n": 30, "noise_var": 0.002},
        "trials": 2,
        "seed": 7,
    }
    cfg.update(overrides)
    p = tmp_path / "config.json"
    p.write_text(json.dumps(cfg))
    return p


# -- run --------------------------------------------------------------------------


def test_run_writes_results_file(tmp_path, capsys):
    out = tmp_path / "results.csv"
    cfg = _write_config(tmp_path, output={"path": str(out), "format": "csv"})
    assert main(["run", "--config", str(cfg)]) == 0
    text = out.read_text()
    assert text.startswith("trial,seed,rmse,nlpd,status")
    assert "trials ok" in capsys.readouterr().out


def test_run_prints_csv_without_output_path(tmp_path, capsys):
    cfg = _write_config(tmp_path)
    assert main(["run", "--config", str(cfg)]) == 0
    assert capsys.readouterr().out.startswith("trial,seed,rmse,nlpd,status")


def test_run_output_flag_overrides_config(tmp_path):
    target = tmp_path / "override.json"
    cfg = _write_config(tmp_path, output={"path": str(tmp_path / "ignored.csv"),
                                          "format": "json"})
    assert main(["run", "--config", str(cfg), "--output", str(target)]) == 0
    assert json.loads(target.read_text())["solver"] == "gp-mle"
    assert not (tmp_path / "ignored.csv").exists()


def test_run_rejects_bad_config(tmp_path, capsys):
    cfg = tmp_path / "bad.json"
    cfg.write_text(json.dumps({"solver": "nope", "data": {"kind": "rectangle"}}))
    assert main(["run", "--config", str(cfg)]) == 2
    assert "unknown solver" in capsys.readouterr().err


def test_run_missing_config_file(capsys):
    assert main(["run", "--config", "/does/not/exist.json"]) == 2


def test_run_returns_3_when_every_trial_fails(tmp_path, model_file, capsys):
    cfg = _write_config(
        tmp_path,
        solver="pf",
        model=str(model_file),
        data={"kind": "rectangle", "n": 10, "noise_var": 0.0},
        options={"num_particles": 30},
        trials=1,
    )
    assert main(["run", "--config", str(cfg)]) == 3
    assert "all trials failed" in capsys.readouterr().err


def test_run_deterministic_output_files(tmp_path):
    out1, out2 = tmp_path / "a.json", tmp_path / "b.json"
    cfg = _write_config(tmp_path)
    assert main(["run", "--config", str(cfg), "--output", str(out1)]) == 0
    assert main(["run", "--config", str(cfg), "--output", str(out2)]) == 0
    assert out1.read_bytes() == out2.read_bytes()


# -- grid -------------------------------------------------------------------------


def test_grid_end_to_end(tmp_path, model_file, capsys):
    cfg = _write_config(
        tmp_path,
        solver="ckfs",
        model=str(model_file),
        data={"kind": "rectangle", "n": 30, "noise_var": 0.002},
        trials=1,
        seed=3,
    )
    grid = tmp_path / "grid.json"
    grid.write_text(json.dumps({"ell": [0.05, 0.1]}))
    out = tmp_path / "grid.csv"
    assert main(["grid", "--config", str(cfg), "--grid", str(grid),
                 "--output", str(out)]) == 0
    assert "best: ell=" in capsys.readouterr().out
    assert out.read_text().startswith("ell,rmse_mean,failures")


def test_grid_bad_key_is_config_error(tmp_path, model_file, capsys):
    cfg = _write_config(tmp_path, solver="ckfs", model=str(model_file), trials=1,
                        data={"kind": "rectangle", "n": 10, "noise_var": 0.002})
    grid = tmp_path / "grid.json"
    grid.write_text(json.dumps({"bogus": [1.0]}))
    assert main(["grid", "--config", str(cfg), "--grid", str(grid)]) == 2


# -- sample-prior -----------------------------------------------------------------


def test_sample_prior_csv(tmp_path, model_file, capsys):
    out = tmp_path / "paths.csv"
    assert main(["sample-prior", "--model", str(model_file), "--seed", "4",
                 "--t0", "0", "--t1", "0.5", "--steps", "200", "--paths", "2",
                 "--output", str(out)]) == 0
    lines = out.read_text().strip().splitlines()
    assert lines[0] == "path,time,node_1_1,node_2_1"
    assert len(lines) == 1 + 2 * 201


def test_sample_prior_is_seed_deterministic(tmp_path, model_file):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    for out in (a, b):
        assert main(["sample-prior", "--model", str(model_file), "--seed", "4",
                     "--steps", "100", "--output", str(out)]) == 0
    assert a.read_bytes() == b.read_bytes()


def test_sample_prior_bad_model_file(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["sample-prior", "--model", str(bad), "--seed", "0"]) == 2


# -- cov-analysis -----------------------------------------------------------------


def test_cov_analysis_writes_trace(tmp_path, capsys):
    out = tmp_path / "trace.csv"
    rc = main(["cov-analysis", "--mu", "-1", "--a", "-1", "--b", "1",
               "--dt", "0.1", "--R", "0.1", "--steps", "200",
               "--output", str(out)])
    assert rc == 0
    lines = out.read_text().strip().splitlines()
    assert lines[0] == "step,pred_ff,pred_fs,post_ff,post_fs,gain,bound"
    assert len(lines) == 201
    # the decay result: final cross-covariance far below its start
    last = lines[-1].split(",")
    assert abs(float(last[4])) < 1e-4
    err = capsys.readouterr().err
    assert "variance floor" in err.lower()


def test_cov_analysis_stdout_default(capsys):
    rc = main(["cov-analysis", "--mu", "-1", "--a", "-2", "--b", "0.5",
               "--dt", "0.05", "--R", "0.2", "--steps", "10"])
    assert rc == 0
    assert capsys.readouterr().out.startswith("step,")


def test_cov_analysis_validates_signs(capsys):
    rc = main(["cov-analysis", "--mu", "1", "--a", "-1", "--b", "1",
               "--dt", "0.1", "--R", "0.1", "--steps", "10"])
    assert rc == 2


# -- ingest -----------------------------------------------------------------------


def test_ingest_summary_and_grid(tmp_path, capsys):
    src = tmp_path / "strain.csv"
    src.write_text("# rate = 100\n" + "\n".join(str(0.1 * k) for k in range(50)))
    out = tmp_path / "grid.csv"
    assert main(["ingest", "--input", str(src), "--spacing", "0.01",
                 "--output", str(out)]) == 0
    stdout = capsys.readouterr().out
    # stdout is the JSON summary followed by a one-line note
    summary = json.loads(stdout[: stdout.rindex("}") + 1])
    assert summary["points"] == 50
    lines = out.read_text().strip().splitlines()
    assert lines[0] == "time,y,R,observed"
    assert len(lines) >= 51


def test_ingest_missing_file(capsys):
    assert main(["ingest", "--input", "/no/such/file.csv"]) == 2
