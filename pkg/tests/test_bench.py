"""Benchmark harness: generators, configs, experiment runs and result files."""

import json
import math

import numpy as np
import pytest

from ssdgp import (
    ExperimentConfig,
    emit_results,
    gen_rectangle,
    gen_sinusoid,
    grid_search,
    ingest_strain_csv,
    rmse,
    run_experiment,
)
from ssdgp.bench import (
    ConfigError,
    interpolation_grid,
    load_experiment_config,
    parse_experiment_config,
)


MODEL_TWO_NODE = {
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


# -- signal generators ---------------------------------------------------------


def test_rectangle_levels_and_grid():
    data = gen_rectangle(120, noise_var=0.002, seed=0)
    np.testing.assert_allclose(data.times, np.linspace(0.0, 1.0, 120))
    # piecewise-constant levels over sixths of the unit interval
    levels = (0.0, 1.0, 0.0, 0.6, 0.0, 0.4)
    for k, t in enumerate(data.times):
        assert data.truth[k] == levels[min(int(t * 6.0), 5)]
    np.testing.assert_allclose(data.R, 0.002)
    # observed=None means fully observed
    assert data.observed is None or data.observed.all()


def test_rectangle_noise_is_seeded():
    a = gen_rectangle(50, 0.002, seed=3)
    b = gen_rectangle(50, 0.002, seed=3)
    c = gen_rectangle(50, 0.002, seed=4)
    np.testing.assert_array_equal(a.y, b.y)
    assert not np.array_equal(a.y, c.y)
    # noise scale is plausible for the requested variance
    resid = a.y - a.truth
    assert 0.2 * math.sqrt(0.002) < resid.std() < 3.0 * math.sqrt(0.002)


def test_sinusoid_closed_form():
    data = gen_sinusoid(2000, noise_var=0.01, seed=1)
    assert len(data.times) == 2000
    for k in (0, 600, 1234, 1999):
        t = data.times[k]
        want = math.sin(7.0 * math.pi * math.cos(2.0 * math.pi * t**2) * t) ** 2 / (
            math.cos(5.0 * math.pi * t) + 2.0
        )
        assert data.truth[k] == pytest.approx(want, rel=1e-12)


def test_rmse():
    assert rmse(np.zeros(4), np.array([1.0, -1.0, 1.0, -1.0])) == pytest.approx(1.0)
    assert rmse(np.array([2.0]), np.array([2.0])) == 0.0


# -- configuration ----------------------------------------------------------------


def test_config_rejects_unknown_solver():
    with pytest.raises(ConfigError, match="unknown solver"):
        ExperimentConfig(solver="magic", data={"kind": "rectangle"})


def test_config_rejects_unknown_scheme():
    with pytest.raises(ConfigError, match="unknown scheme"):
        ExperimentConfig(
            solver="ckfs", data={"kind": "rectangle"}, model=MODEL_TWO_NODE, scheme="rk4"
        )


def test_config_requires_model_for_state_space_solvers():
    with pytest.raises(ConfigError, match="needs a model"):
        ExperimentConfig(solver="ckfs", data={"kind": "rectangle"})


def test_config_rejects_unknown_data_kind():
    with pytest.raises(ConfigError, match="unknown data kind"):
        ExperimentConfig(solver="gp-mle", data={"kind": "triangle"})


def test_parse_config_rejects_unknown_keys():
    with pytest.raises(ConfigError, match="unknown config keys"):
        parse_experiment_config(
            {"solver": "gp-mle", "data": {"kind": "rectangle"}, "colour": "red"}
        )


def test_parse_config_loads_model_from_file(tmp_path):
    model_path = tmp_path / "model.json"
    model_path.write_text(json.dumps(MODEL_TWO_NODE))
    config_path = tmp_path / "exp.json"
    config_path.write_text(
        json.dumps(
            {
                "solver": "ckfs",
                "data": {"kind": "rectangle", "n": 10},
                "model": "model.json",
                "trials": 1,
            }
        )
    )
    cfg = load_experiment_config(config_path)
    assert cfg.solver == "ckfs"
    assert cfg.model["nodes"][0]["layer"] == 1


def test_load_config_missing_file():
    with pytest.raises(ConfigError, match="cannot read config"):
        load_experiment_config("/nonexistent/config.json")


# -- experiment runs ---------------------------------------------------------------


def _gp_mle_config(trials=2, seed=11, n=40):
    return ExperimentConfig(
        solver="gp-mle",
        data={"kind": "rectangle", "n": n, "noise_var": 0.002},
        trials=trials,
        seed=seed,
        name="unit",
    )


def test_run_experiment_reports_per_trial_rows():
    table = run_experiment(_gp_mle_config())
    assert len(table.rows) == 2
    assert all(r.status == "ok" for r in table.rows)
    assert all(r.rmse is not None and r.rmse < 0.5 for r in table.rows)
    assert all(r.wall_time > 0.0 for r in table.rows)
    assert table.aggregate["trials_ok"] == 2
    assert "rmse_mean" in table.aggregate


def test_trials_use_independent_data_seeds():
    table = run_experiment(_gp_mle_config())
    assert table.rows[0].seed != table.rows[1].seed


def test_same_master_seed_reproduces_results():
    a = run_experiment(_gp_mle_config())
    b = run_experiment(_gp_mle_config())
    assert a.to_csv_text() == b.to_csv_text()
    assert json.dumps(a.to_json_obj(), sort_keys=True) == json.dumps(
        b.to_json_obj(), sort_keys=True
    )


def test_result_files_never_contain_wall_time():
    table = run_experiment(_gp_mle_config(trials=1))
    assert "wall_time" not in table.to_csv_text()
    assert "wall_time" not in json.dumps(table.to_json_obj())


def test_csv_layout():
    table = run_experiment(_gp_mle_config())
    lines = table.to_csv_text().strip().splitlines()
    assert lines[0] == "trial,seed,rmse,nlpd,status"
    assert lines[1].startswith("0,")
    # aggregate block after a separator
    assert "metric,value" in lines
    agg_start = lines.index("metric,value")
    agg = dict(line.split(",", 1) for line in lines[agg_start + 1 :])
    assert float(agg["rmse_mean"]) == pytest.approx(table.aggregate["rmse_mean"])


def test_map_solvers_report_no_nlpd():
    cfg = ExperimentConfig(
        solver="bmap",
        data={"kind": "rectangle", "n": 10, "noise_var": 0.002},
        model=MODEL_TWO_NODE,
        trials=1,
        seed=0,
        options={"map": {"max_iter": 30}},
    )
    table = run_experiment(cfg)
    assert table.rows[0].status == "ok"
    assert table.rows[0].nlpd is None
    # and the CSV shows the N/A marker
    assert ",N/A," in table.to_csv_text().splitlines()[1] + ","


def test_failed_trials_are_recorded_not_raised():
    # zero measurement noise makes the particle filter degenerate
    cfg = ExperimentConfig(
        solver="pf",
        data={"kind": "rectangle", "n": 15, "noise_var": 0.0},
        model=MODEL_TWO_NODE,
        trials=2,
        seed=5,
        options={"num_particles": 40},
    )
    table = run_experiment(cfg)
    assert table.aggregate["trials_ok"] == 0
    assert all(r.status.startswith("failed:") for r in table.rows)
    assert "rmse_mean" not in table.aggregate


def test_emit_results_round_trip(tmp_path):
    table = run_experiment(_gp_mle_config(trials=1))
    json_path = tmp_path / "out.json"
    csv_path = tmp_path / "out.csv"
    emit_results(table, "json", json_path)
    emit_results(table, "csv", csv_path)
    obj = json.loads(json_path.read_text())
    assert obj["solver"] == "gp-mle"
    assert len(obj["rows"]) == 1
    assert csv_path.read_text() == table.to_csv_text()


def test_emit_results_byte_stable(tmp_path):
    table = run_experiment(_gp_mle_config())
    p1, p2 = tmp_path / "a.json", tmp_path / "b.json"
    emit_results(table, "json", p1)
    emit_results(run_experiment(_gp_mle_config()), "json", p2)
    assert p1.read_bytes() == p2.read_bytes()


# -- grid search -------------------------------------------------------------------


def _grid_config():
    return ExperimentConfig(
        solver="ckfs",
        data={"kind": "rectangle", "n": 30, "noise_var": 0.002},
        model=MODEL_TWO_NODE,
        trials=1,
        seed=3,
        name="grid-unit",
    )


def test_grid_search_picks_best_cell():
    result = grid_search(_grid_config(), {"ell": [0.05, 0.1], "sigma": [1.0, 1.5]})
    assert result.keys == ("ell", "sigma")
    assert len(result.cells) == 4
    scores = [c["score"] for c in result.cells if c["score"] is not None]
    assert result.best_score == pytest.approx(min(scores))
    assert set(result.best_params) == {"ell", "sigma"}


def test_grid_search_single_cell():
    result = grid_search(_grid_config(), {"ell": [0.1]})
    assert len(result.cells) == 1
    assert result.best_params == {"ell": 0.1}


def test_grid_key_must_match_a_tunable_slot():
    with pytest.raises(ConfigError, match="matches no"):
        grid_search(_grid_config(), {"magnitude:3,1": [1.0]})


def test_grid_targets_specific_node():
    result = grid_search(_grid_config(), {"magnitude:2,1": [0.8, 1.2]})
    assert len(result.cells) == 2
    assert result.best_params["magnitude:2,1"] in (0.8, 1.2)


# -- strain ingestion ---------------------------------------------------------------


def test_ingest_two_column_csv(tmp_path):
    p = tmp_path / "strain.csv"
    p.write_text("# detector test\n0.0, 1.0\n0.5, 2.0\n1.0, -1.0\n")
    data = ingest_strain_csv(p)
    np.testing.assert_allclose(data.times, [0.0, 0.5, 1.0])
    np.testing.assert_allclose(data.y, [1.0, 2.0, -1.0])


def test_ingest_single_column_with_rate(tmp_path):
    p = tmp_path / "strain.csv"
    p.write_text("# rate = 4\n1.0\n2.0\n3.0\n4.0\n")
    data = ingest_strain_csv(p)
    np.testing.assert_allclose(data.times, [0.0, 0.25, 0.5, 0.75])
    np.testing.assert_allclose(data.y, [1.0, 2.0, 3.0, 4.0])


def test_ingest_sorts_and_rejects_duplicates(tmp_path):
    p = tmp_path / "s.csv"
    p.write_text("1.0 5.0\n0.0 4.0\n")
    data = ingest_strain_csv(p)
    np.testing.assert_allclose(data.times, [0.0, 1.0])
    np.testing.assert_allclose(data.y, [4.0, 5.0])

    p.write_text("0.0 1.0\n0.0 2.0\n")
    with pytest.raises(ValueError, match="increasing"):
        ingest_strain_csv(p)


def test_interpolation_grid_marks_observations(tmp_path):
    p = tmp_path / "s.csv"
    p.write_text("0.0 1.0\n0.013 2.0\n0.05 3.0\n")
    data = ingest_strain_csv(p)
    grid = interpolation_grid(data, spacing=0.01)
    assert grid.observed.sum() == 3
    assert (~grid.observed).sum() > 0
    # measured samples keep their values on the combined axis
    np.testing.assert_allclose(grid.y[grid.observed], [1.0, 2.0, 3.0])
    gaps = np.diff(grid.times)
    assert gaps.max() < 0.011
