"""Desk-scale acceptance suite; each test prints one PASS/FAIL line.

The leave-one-database-out run is shared by criteria 1-5 and repeated once
for the determinism check, so this module dominates the suite's runtime.
"""
import time
import warnings

import numpy as np
import pytest

from zsc.encoding import encode
from zsc.executor import brute_force_oracle, execute
from zsc.experiment import ExperimentSpec, run_experiment
from zsc.metrics import cost_qerrors, qerror
from zsc.model import ModelParameters, ZeroShotCostModel, forward
from zsc.planner import plan
from zsc.relcore import compute_statistics, generate_database
from zsc.workload import WorkloadConfig, WorkloadWarning, generate_workload

from conftest import SMALL, TINY
from helpers import (DIMS, annotated, finite_difference_check, random_graph, random_parameters, rename_db,
                     rename_query)

pytestmark = pytest.mark.acceptance

HOLDOUTS = ["db00", "db01", "db02"]
MODEL = {"hidden": 32, "lr": 1e-3, "batch_size": 128, "epochs": 30, "patience": 10, "seed": 0}
ACCEPTANCE_SPEC = {
    "version": 1,
    "n_databases": 14,  # 12 training + 1 validation + the held-out database
    "database_seed": 1000,
    "queries_per_database": 5000,
    "test_queries": 500,
    "holdouts": HOLDOUTS,
    "baseline_sizes": [100, 500, 1000, 5000],
    "stagnation": [1, 2, 4, 8],
    "finetune_samples": 100,
    "finetune_epochs": 20,
    "finetune_lr_factor": 0.1,
    "index_mode": True,
    "model": MODEL,
}
TIME_BUDGET_S = 3600


def report_line(capsys, n, passed, detail):
    with capsys.disabled():
        print(f"\nACCEPTANCE criterion {n}: {'PASS' if passed else 'FAIL'} | {detail}")


def _run(out_dir):
    t0 = time.perf_counter()
    report = run_experiment(ExperimentSpec.from_dict(ACCEPTANCE_SPEC), out_dir)
    return report, time.perf_counter() - t0


@pytest.fixture(scope="module")
def first_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("acceptance_a")
    report, elapsed = _run(out)
    return out, report, elapsed


def test_criterion_1_zero_shot_generalization(first_run, capsys):
    _, report, elapsed = first_run
    rows, ok = [], elapsed <= TIME_BUDGET_S
    for h in report["holdouts"]:
        ex, es = h["models"]["exact"]["heldout"], h["models"]["estimated"]["heldout"]
        good = ex["median"] <= 2.0 and ex["p95"] <= 6.0 and es["median"] <= 3.0
        ok &= good
        rows.append(f"{h['holdout']} exact {ex['median']:.3f}/{ex['p95']:.3f} est {es['median']:.3f}")
    ok &= [h["holdout"] for h in report["holdouts"]] == HOLDOUTS
    report_line(capsys, 1, ok, "; ".join(rows) + f"; run {elapsed:.0f}s")
    assert ok


def test_criterion_2_transferability_ablation(first_run, capsys):
    _, report, _ = first_run
    rows, ok = [], True
    for h in report["holdouts"]:
        oh = h["models"]["onehot"]["heldout"]["median"]
        tr = h["models"]["exact"]["heldout"]["median"]
        ok &= oh >= 2.0 * tr
        rows.append(f"{h['holdout']} onehot {oh:.3f} vs transferable {tr:.3f} ({oh / tr:.2f}x)")
    report_line(capsys, 2, ok, "; ".join(rows))
    assert ok


def test_criterion_3_scaled_cost_curve(first_run, capsys):
    _, report, _ = first_run
    rows, ok = [], True
    for h in report["holdouts"]:
        curve = h["scaled_cost_curve"]
        assert [r["n_train_queries"] for r in curve] == [100, 500, 1000, 5000]
        base = [r["baseline_median_q"] for r in curve]
        zs = curve[0]["zeroshot_median_q"]
        beats = base[0] > zs
        monotone = all(b <= a + 0.1 for a, b in zip(base, base[1:]))
        ok &= beats and monotone
        rows.append(f"{h['holdout']} base@100 {base[0]:.3f} > zero-shot {zs:.3f}: {beats}, "
                    f"curve {'/'.join(f'{b:.3f}' for b in base)}")
    report_line(capsys, 3, ok, "; ".join(rows))
    assert ok


def test_criterion_4_what_if_index(first_run, capsys):
    _, report, _ = first_run
    idx = report["index"]
    med = idx["index_workload"]["median"]
    d = idx["direction"]
    ok = med <= 3.0 and d["pairs"] > 0 and d["fraction"] >= 0.8
    report_line(capsys, 4, ok, f"index median {med:.3f} over {idx['pairs']} pairs; direction "
                               f"{d['correct']}/{d['pairs']} = {d['fraction']:.3f}")
    assert ok


def test_criterion_5_few_shot_direction(first_run, capsys):
    _, report, _ = first_run
    rows, ok = [], True
    for h in report["holdouts"]:
        for mode, r in h["finetune"].items():
            zs, ft = r["zeroshot_test_median_q"], r["finetuned_test_median_q"]
            ok &= ft <= zs + 0.05 and r["samples"] == 100
            rows.append(f"{h['holdout']}/{mode} {zs:.3f}->{ft:.3f}")
    report_line(capsys, 5, ok, "; ".join(rows))
    assert ok


def test_exact_cardinalities_are_an_upper_baseline(first_run):
    _, report, _ = first_run
    for h in report["holdouts"]:
        ex = h["models"]["exact"]["heldout"]["median"]
        es = h["models"]["estimated"]["heldout"]["median"]
        assert ex <= es + 0.1


def test_criterion_6_gradient_correctness(small_db, small_catalog, small_workload, capsys):
    """100 kink-free random pairs must agree on every parameter.

    Draws whose +-eps perturbations flip a ReLU are counted and replaced;
    on those, every parameter that stays on one side must still agree.
    """
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    real = [encode(annotated(q, small_db, small_catalog), small_catalog, m)
            for q in small_workload[:25] for m in ("exact", "estimated")]
    worst, worst_crossed, accepted, rejected, k = 0.0, 0.0, 0, 0, 0
    while accepted < 100 and k < 1000:
        g = real[k] if k < len(real) else random_graph(rng, int(rng.integers(1, 12)))
        check = finite_difference_check(random_parameters(3, 500 + k), [g], rng.normal(size=1) * 3)
        k += 1
        if check.kink_crossings:
            rejected += 1
            worst_crossed = max(worst_crossed, check.worst_smooth)
        else:
            accepted += 1
            worst = max(worst, check.worst)
    elapsed = time.perf_counter() - t0
    ok = accepted == 100 and worst <= 1e-3 and worst_crossed <= 1e-3 and elapsed <= 120
    report_line(capsys, 6, ok, f"{accepted} pairs, worst relative error {worst:.2e} (eps 1e-4); "
                               f"{rejected} draws crossed a ReLU corner, worst elsewhere {worst_crossed:.2e}; "
                               f"{elapsed:.1f}s")
    assert ok


def test_criterion_7_executor_oracle_equivalence(capsys):
    checked, joins, mismatches = 0, 0, []
    for seed in (11, 22, 33):
        db = generate_database(TINY, seed)
        cat = compute_statistics(db)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", WorkloadWarning)
            queries = generate_workload(db, cat, WorkloadConfig(count=50, seed=seed, max_join=min(5, len(db.tables))))
        for q in queries:
            p = plan(q, cat)
            res = execute(p, db)
            ref, cards = brute_force_oracle(q, db)
            same = len(ref) == len(res.result) and all(
                a == b if not (isinstance(a, float) or isinstance(b, float)) else np.isclose(a, b, rtol=1e-12, atol=0)
                for a, b in zip(res.result, ref))
            for node in p.ops():
                if node.op == "HashJoin":
                    joins += 1
                    same &= res.actual_cards[node.op_id] == cards[frozenset(node.tables)]
            checked += 1
            if not same:
                mismatches.append((seed, q.qid))
    ok = checked == 150 and not mismatches
    report_line(capsys, 7, ok, f"{checked} queries, {joins} joins checked, mismatches {mismatches}")
    assert ok


def test_criterion_8_encoding_invariance(capsys):
    db = generate_database(SMALL, 77)
    cat = compute_statistics(db)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", WorkloadWarning)
        queries = generate_workload(db, cat, WorkloadConfig(count=120, seed=5))
    rdb, tmap, cmap = rename_db(db, "renamed_")
    rcat = compute_statistics(rdb)
    graphs, renamed = [], []
    for q in queries:
        for mode in ("exact", "estimated"):
            graphs.append(encode(annotated(q, db, cat), cat, mode))
            renamed.append(encode(annotated(rename_query(q, tmap, cmap), rdb, rcat), rcat, mode))
    same_graphs = all(a.dumps() == b.dumps() for a, b in zip(graphs, renamed))
    model = ZeroShotCostModel(hidden=16, epochs=3, batch_size=32).fit(graphs, np.ones(len(graphs)) * 50)
    same_pred = np.array_equal(model.predict(graphs), model.predict(renamed))

    rng = np.random.default_rng(8)
    params = ModelParameters.initialize(16, DIMS, graphs[0].schema, 1)
    perm_ok = True
    for g in graphs[:100] + [random_graph(rng, 10) for _ in range(100)]:
        base = forward(params, g)
        for _ in range(3):
            h = type(g)(g.node_types, g.features, g.edges[rng.permutation(len(g.edges))], g.root)
            perm_ok &= forward(params, h) == base

    p = np.exp(rng.uniform(-10, 15, size=10_000))
    a = np.exp(rng.uniform(-10, 15, size=10_000))
    q_pa = np.array([qerror(x, y) for x, y in zip(p, a)])
    q_ap = np.array([qerror(y, x) for x, y in zip(p, a)])
    q_ok = bool(np.all(q_pa >= 1) and np.array_equal(q_pa, q_ap)
                and np.array_equal(cost_qerrors(p, a), cost_qerrors(a, p)) and np.all(cost_qerrors(p, a) >= 1))
    ok = same_graphs and same_pred and perm_ok and q_ok
    report_line(capsys, 8, ok, f"graphs identical {same_graphs}, predictions identical {same_pred}, "
                               f"child order {perm_ok}, q-error properties {q_ok} on 10000 pairs")
    assert ok


def test_criterion_9_end_to_end_determinism(first_run, tmp_path_factory, capsys):
    out_a, _, _ = first_run
    out_b = tmp_path_factory.mktemp("acceptance_b")
    _run(out_b)
    names = ["report.json", "table1.csv", "figure3_curve.csv", "stagnation.csv", "databases.json"]
    diff = [n for n in names if (out_a / n).read_bytes() != (out_b / n).read_bytes()]
    ok = not diff
    size = len((out_a / "report.json").read_bytes())
    report_line(capsys, 9, ok, f"report.json {size} bytes, differing files: {diff or 'none'}")
    assert ok
