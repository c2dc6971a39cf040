import json

import jsonschema
import numpy as np
import pytest

import infogeom.harness as harness
from infogeom.exceptions import ConfigError, DivergenceError, RunError
from infogeom.harness import (
    DESK_DENSE,
    RESULT_COLUMNS,
    SUMMARY_SCHEMA,
    ExperimentConfig,
    ResultRecord,
    build_problem,
    emit,
    nmse,
    read_results_csv,
    run_and_emit,
    run_experiment,
)
from infogeom.operators import StructuredOperator


def _same(a, b):
    """Record lists equal field by field, with NaN equal to NaN."""
    return [tuple(map(repr, vars(r).values())) for r in a] == [tuple(map(repr, vars(r).values())) for r in b]


def _dense_config(tmp_path, **kw):
    base = dict(scenario={"kind": "dense-random", "n_obs": 16, "n_vars": 4}, snr_db_list=[0.0, 10.0],
                estimators=["eiga", "iga", "mmse"], trials=3, output_dir=str(tmp_path / "out"))
    base.update(kw)
    return ExperimentConfig(**base)


def test_nmse_examples():
    truth = [np.array([1 + 1j, -2.0]), np.array([0.5j, 3.0])]
    assert nmse(truth, truth) == -300.0
    assert nmse([np.zeros(2), np.zeros(2)], truth) == pytest.approx(0.0)
    assert nmse([t * 1.1 for t in truth], truth) == pytest.approx(-20.0)


def test_nmse_zero_truth_excluded():
    with pytest.warns(RuntimeWarning):
        val = nmse([np.zeros(2), np.zeros(2)], [np.zeros(2), np.ones(2)])
    assert val == pytest.approx(0.0)


def test_nmse_bad_lengths():
    with pytest.raises(ValueError):
        nmse([], [])
    with pytest.raises(ValueError):
        nmse([np.zeros(1)], [np.ones(1), np.ones(1)])


@pytest.mark.parametrize("bad", [
    {"snr_db_list": []},
    {"trials": 0},
    {"damping": {"eiga": 1.5}},
    {"damping": {"eiga": 0.0}},
    {"estimators": ["gamp"]},
    {"scenario": {"kind": "other"}},
    {"scenario": {"kind": "dense-random", "n_obs": 4, "n_vars": 8}},
    {"seed": -1},
])
def test_config_validation(bad, tmp_path):
    with pytest.raises(ConfigError):
        _dense_config(tmp_path, **bad)


def test_config_unknown_key_and_load(tmp_path):
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"trails": 3})
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"scenario": {"kind": "dense-random"}, "trials": 2}))
    cfg = ExperimentConfig.load(path)
    assert cfg.trials == 2 and cfg.scenario["n_obs"] == 32
    path.write_text("{not json")
    with pytest.raises(ConfigError):
        ExperimentConfig.load(path)


def test_build_problem_structured():
    p = build_problem(harness.DESK_STRUCTURED, 5, 10.0)
    assert isinstance(p.op, StructuredOperator)
    assert p.op.n_cols == p.prior.dim == p.h.size
    assert p.prior.dim < p.op.n_rows
    assert p.prior.noise_var == pytest.approx(0.1)
    assert 0 < p.prior.virtual_noise_var < p.prior.noise_var


def test_build_problem_snr_only_changes_noise():
    a = build_problem(harness.DESK_DENSE, 3, 0.0)
    b = build_problem(harness.DESK_DENSE, 3, 20.0)
    np.testing.assert_array_equal(a.h, b.h)
    np.testing.assert_array_equal(a.op.to_dense(), b.op.to_dense())
    assert b.prior.noise_var == pytest.approx(a.prior.noise_var / 100)


def test_run_deterministic_and_worker_invariant(tmp_path):
    r1 = run_and_emit(_dense_config(tmp_path, output_dir=str(tmp_path / "a")))
    run_and_emit(_dense_config(tmp_path, output_dir=str(tmp_path / "b")))
    run_and_emit(_dense_config(tmp_path, output_dir=str(tmp_path / "c"), workers=2))
    ref = (tmp_path / "a" / "results.csv").read_bytes()
    assert (tmp_path / "b" / "results.csv").read_bytes() == ref
    assert (tmp_path / "c" / "results.csv").read_bytes() == ref
    assert [r.estimator for r in r1.records] == ["eiga", "eiga", "iga", "iga", "mmse", "mmse"]
    assert all(np.isfinite(r.nmse_db) for r in r1.records)


def test_emit_outputs(tmp_path):
    cfg = _dense_config(tmp_path, trials=2)
    out = run_and_emit(cfg)
    d = tmp_path / "out"
    assert _same(read_results_csv(d / "results.csv"), out.records)
    summary = json.loads((d / "summary.json").read_text())
    jsonschema.validate(summary, SUMMARY_SCHEMA)
    assert summary["config"]["trials"] == 2
    traces = sorted(p.name for p in (d / "traces").iterdir())
    assert "eiga_snr10_trial0001.csv" in traces and "iga_snr0_trial0000.csv" in traces
    assert len(traces) == 2 * 2 * 2


def test_emit_empty_records(tmp_path):
    emit([], {}, tmp_path / "e")
    assert (tmp_path / "e" / "results.csv").read_text() == ",".join(RESULT_COLUMNS) + "\n"
    assert read_results_csv(tmp_path / "e" / "results.csv") == []


def test_emit_round_trip_exact(tmp_path):
    recs = [ResultRecord("eiga", 10.0, -21.123456789012345, 53.0, float("nan"), 7),
            ResultRecord("mmse", -5.5, 0.1 + 0.2, 1.0, 1.25e-5, 7)]
    emit(recs, {}, tmp_path)
    back = read_results_csv(tmp_path / "results.csv")
    assert back[0].nmse_db == recs[0].nmse_db and back[1].nmse_db == recs[1].nmse_db
    assert np.isnan(back[0].wall_time_per_iteration)
    summary = json.loads((tmp_path / "summary.json").read_text())
    jsonschema.validate(summary, SUMMARY_SCHEMA)
    assert summary["records"][0]["wall_time_per_iteration"] is None


def test_emit_reports_path_on_failure(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(OSError, match="file"):
        emit([], {}, blocker / "sub")


def test_failed_trials_are_counted(tmp_path, monkeypatch):
    real = harness.eiga_run

    def flaky(op, y, prior, *args, **kw):
        if abs(y[0]) > 1.0:
            raise DivergenceError("forced", 3)
        return real(op, y, prior, *args, **kw)

    monkeypatch.setattr(harness, "eiga_run", flaky)
    out = run_experiment(_dense_config(tmp_path, trials=6, estimators=["eiga", "mmse"]))
    failed = out.failures["eiga@0"] + out.failures["eiga@10"]
    assert out.failed_runs == failed > 0
    assert out.total_runs == 24
    eiga = [r for r in out.records if r.estimator == "eiga"]
    assert all(r.trials == 6 - out.failures[f"eiga@{r.snr_db:g}"] for r in eiga)


def test_all_failed_raises(tmp_path, monkeypatch):
    def always(*args, **kw):
        raise DivergenceError("forced", 1)

    monkeypatch.setattr(harness, "eiga_run", always)
    with pytest.raises(RunError):
        run_experiment(_dense_config(tmp_path, estimators=["eiga"]))


def test_timing_opt_in(tmp_path):
    out = run_experiment(_dense_config(tmp_path, trials=1, estimators=["eiga"], record_timing=True))
    assert all(r.wall_time_per_iteration > 0 for r in out.records)
    out = run_experiment(_dense_config(tmp_path, trials=1, estimators=["eiga"]))
    assert all(np.isnan(r.wall_time_per_iteration) for r in out.records)


def test_structured_scenario_runs(tmp_path):
    cfg = ExperimentConfig(scenario={"kind": "structured", "n_rv": 2, "n_rh": 2, "n_p": 8,
                                     "k_users": 2, "n_clusters": 2, "cluster_width": 2},
                           snr_db_list=[10.0], estimators=["eiga", "mmse"], trials=2, max_iter=200,
                           output_dir=str(tmp_path))
    out = run_experiment(cfg)
    assert len(out.records) == 2


def test_mmse_is_the_nmse_floor():
    cfg = ExperimentConfig(scenario=dict(DESK_DENSE), snr_db_list=[0.0, 10.0, 20.0],
                           estimators=["eiga", "iga", "mmse"], trials=200, seed=5, save_traces=False,
                           output_dir="unused")
    out = run_experiment(cfg)
    by = {(r.estimator, r.snr_db): r for r in out.records}
    for snr in cfg.snr_db_list:
        floor = by["mmse", snr].nmse_db
        assert by["mmse", snr].trials >= 200
        assert floor <= by["eiga", snr].nmse_db + 0.05
        assert floor <= by["iga", snr].nmse_db + 0.05
