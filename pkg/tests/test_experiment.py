import csv
import json

import pytest

from zsc.errors import ConfigurationError, LeakageError
from zsc.experiment import (ExperimentError, ExperimentSpec, direction_check, run_experiment,
                            run_index_experiment, stage)

SMOKE = dict(
    version=1, n_databases=4, database_seed=50,
    generator={"table_count": [2, 4], "rows": [30, 300], "columns": [1, 3]},
    queries_per_database=60, test_queries=30, workload={"max_join": 3},
    holdouts=["db00"], baseline_sizes=[10, 20, 40], stagnation=[1],
    finetune_samples=20, finetune_epochs=2, index_queries=80, index_pairs=30,
    model={"hidden": 8, "epochs": 2, "batch_size": 32, "patience": 2},
)


def _spec(**kw):
    return ExperimentSpec.from_dict({**SMOKE, **kw})


@pytest.fixture(scope="module")
def smoke(tmp_path_factory):
    out = tmp_path_factory.mktemp("smoke")
    return out, run_experiment(_spec(index_mode=True), out)


def test_smoke_report_end_to_end(smoke):
    out, report = smoke
    for name in ("report.json", "spec.json", "databases.json", "timings.json", "table1.csv",
                 "figure3_curve.csv", "stagnation.csv"):
        assert (out / name).exists(), name
    assert json.loads((out / "report.json").read_text()) == report
    h = report["holdouts"][0]
    assert set(h["models"]) == {"exact", "estimated", "onehot"}
    assert h["validation"] == "db01" and h["training"] == ["db02", "db03"]
    assert h["leak_audit"]["training_databases_contain_holdout"] is False
    for m in h["models"].values():
        assert m["heldout"]["median"] >= 1 and m["heldout"]["count"] == 60
    assert [r["n_train_queries"] for r in h["scaled_cost_curve"]] == [10, 20, 40]
    assert [r["n_databases"] for r in h["stagnation"]] == [1, 2]
    assert set(h["finetune"]) == {"exact", "estimated"}
    assert report["index"]["pairs"] > 0


def test_csv_headers(smoke):
    out, report = smoke

    def header(name):
        with (out / name).open() as fh:
            return next(csv.reader(fh))

    assert header("table1.csv") == ["workload", "mode", "median", "p95", "max"]
    assert header("figure3_curve.csv")[1:] == ["n_train_queries", "baseline_median_q", "zeroshot_median_q"]
    assert header("stagnation.csv")[:2] == ["n_databases", "val_median_q"]
    with (out / "table1.csv").open() as fh:
        rows = list(csv.reader(fh))[1:]
    assert ["heldout:db00", "exact"] == rows[0][:2]
    assert rows[-1][:2] == ["index:reference", "exact"] and rows[-1][2] == "1.210000"


def test_report_has_no_timings(smoke):
    _, report = smoke
    assert "time" not in json.dumps(report).replace("wall_time", "")


def test_holdout_in_training_rejected():
    with pytest.raises(LeakageError):
        _spec(training=["db00", "db02"])
    with pytest.raises(ConfigurationError):
        _spec(holdouts=["db09"])
    with pytest.raises(ConfigurationError):
        ExperimentSpec.from_dict({k: v for k, v in SMOKE.items() if k != "version"})
    with pytest.raises(ConfigurationError):
        _spec(unknown_key=1)
    with pytest.raises(ConfigurationError):
        _spec(workload={"seed": 3})
    with pytest.raises(ConfigurationError):
        _spec(n_databases=2)


def test_spec_round_trip(tmp_path):
    s = _spec()
    p = tmp_path / "s.json"
    p.write_text(json.dumps(s.to_dict()))
    assert ExperimentSpec.load(p) == s
    p.write_text("{not json")
    with pytest.raises(ConfigurationError):
        ExperimentSpec.load(p)


def test_validation_wraps_around():
    s = _spec(holdouts=["db03"])
    assert s.validation_for("db03") == "db00"
    assert s.training_for("db03") == ["db01", "db02"]


def test_empty_index_sets_degenerate_to_plain_run():
    spec = _spec(index_fraction=0.0, card_modes=["exact"], onehot_ablation=False, stagnation=[])
    report = run_index_experiment(spec)
    idx = report["index"]
    assert all(d["indexes"] == [] for d in report["databases"])
    assert idx["heldout_plain_workload"] == report["holdouts"][0]["models"]["exact"]["heldout"]


def test_determinism_small():
    spec = _spec(onehot_ablation=False, stagnation=[])
    a = json.dumps(run_experiment(spec), sort_keys=True)
    b = json.dumps(run_experiment(_spec(onehot_ablation=False, stagnation=[])), sort_keys=True)
    assert a == b


def test_parallel_pipeline_matches_serial():
    spec = _spec(onehot_ablation=False, stagnation=[], card_modes=["exact"])
    assert run_experiment(spec, jobs=2) == run_experiment(spec, jobs=1)


def test_stage_tags_errors():
    timings = {}
    with pytest.raises(ExperimentError, match=r"\[execute db=db03\] ValueError: boom") as ei:
        with stage("execute", timings, db="db03"):
            raise ValueError("boom")
    assert ei.value.stage == "execute db=db03" and "execute db=db03" in timings
    with pytest.raises(LeakageError):
        with stage("train"):
            raise LeakageError("x")


def test_failure_keeps_partial_artifacts(tmp_path, monkeypatch):
    def broken(*a, **k):
        raise RuntimeError("disk on fire")

    monkeypatch.setattr("zsc.experiment.generate_database", broken)
    with pytest.raises(ExperimentError, match=r"\[generate db=db00\] RuntimeError: disk on fire"):
        run_experiment(_spec(), tmp_path)
    assert (tmp_path / "spec.json").exists() and (tmp_path / "timings.json").exists()
    assert not (tmp_path / "report.json").exists()


def test_direction_check():
    r = direction_check([10, 10, 10, 10], [1, 20, 9, 30], [100, 100, 100, 100], [10, 300, 90, 20])
    # third pair changes by < 2x and is ignored; the last is ordered wrongly
    assert r == {"pairs": 3, "correct": 2, "fraction": 2 / 3}
    assert direction_check([1], [1], [5], [5])["fraction"] is None
