"""Leave-one-database-out experiment harness.

Every database runs through generate -> plan -> execute -> encode
independently, so those stages can fan out across processes. Training,
evaluation and report assembly happen in the parent. The report contains no
timings, so identical specs produce identical bytes; timings go to a side file.
"""
from __future__ import annotations

import contextlib
import csv
import json
import logging
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .baseline import fit_scaled_cost_baseline
from .encoding import MODES, OneHotRegistry, encode, encode_onehot_ablation
from .errors import ConfigurationError, LeakageError, ZSCError
from .executor import CostWeights, annotate_actuals, execute
from .metrics import Metrics, cost_qerrors
from .model import ModelConfig, ZeroShotCostModel
from .planner import hypothetical_plan, plan, probe_candidates
from .relcore import (Database, GenConfig, IndexDef, build_index, compute_statistics,
                      generate_database)
from .samples import Sample
from .workload import WorkloadConfig, WorkloadWarning, generate_index_set, generate_workload, index_candidates

log = logging.getLogger(__name__)

SPEC_VERSION = 1
REPORT_FORMAT = "report_v1"
# published Table-1-style magnitudes for an index workload (exact cardinalities);
# shown for context only, the systems differ
REFERENCE_INDEX_ROW = {"median": 1.21, "p95": 2.51, "max": 10.73}


class ExperimentError(ZSCError):
    """A pipeline stage failed; ``stage`` names it."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage


@contextlib.contextmanager
def stage(name: str, timings: dict | None = None, **context):
    where = name + "".join(f" {k}={v}" for k, v in context.items())
    t0 = time.perf_counter()
    try:
        yield
    except ExperimentError:
        raise
    except LeakageError:
        raise
    except Exception as exc:
        raise ExperimentError(where, f"{type(exc).__name__}: {exc}") from exc
    finally:
        if timings is not None:
            timings[where] = round(time.perf_counter() - t0, 3)


def database_name(i: int) -> str:
    return f"db{i:02d}"


@dataclass
class ExperimentSpec:
    version: int = SPEC_VERSION
    n_databases: int = 14
    database_seed: int = 1000
    generator: dict = field(default_factory=dict)
    queries_per_database: int = 5000
    test_queries: int = 500
    workload: dict = field(default_factory=dict)
    holdouts: list = field(default_factory=lambda: ["db00"])
    training: list | None = None  # explicit training databases; default is all others
    card_modes: list = field(default_factory=lambda: list(MODES))
    onehot_ablation: bool = True
    baseline_sizes: list = field(default_factory=lambda: [100, 500, 1000, 5000])
    stagnation: list = field(default_factory=lambda: [1, 2, 4, 8])
    finetune_samples: int = 100
    finetune_epochs: int = 20
    finetune_lr_factor: float = 0.1
    index_mode: bool = False
    index_fraction: float = 0.5
    index_queries: int = 2000
    index_pairs: int = 500
    model: dict = field(default_factory=dict)
    weights: dict = field(default_factory=dict)

    @property
    def names(self) -> list[str]:
        return [database_name(i) for i in range(self.n_databases)]

    def gen_config(self) -> GenConfig:
        return GenConfig.from_dict(self.generator)

    def model_config(self) -> ModelConfig:
        return ModelConfig.from_dict(self.model)

    def cost_weights(self) -> CostWeights:
        return CostWeights.from_dict(self.weights)

    def workload_config(self, count: int, seed: int) -> WorkloadConfig:
        if {"count", "seed"} & set(self.workload):
            raise ConfigurationError("workload count and seed are derived, do not set them")
        return WorkloadConfig.from_dict({**self.workload, "count": count, "seed": seed})

    def validation_for(self, holdout: str) -> str:
        names = self.names
        return names[(names.index(holdout) + 1) % len(names)]

    def training_for(self, holdout: str) -> list[str]:
        val = self.validation_for(holdout)
        if self.training is not None:
            return [n for n in self.training if n != val]
        return [n for n in self.names if n not in (holdout, val)]

    def validate(self) -> "ExperimentSpec":
        if self.version != SPEC_VERSION:
            raise ConfigurationError(f"unsupported spec version {self.version}")
        if self.n_databases < 3:
            raise ConfigurationError("need at least three databases (train, validation, held-out)")
        names = set(self.names)
        if not self.holdouts:
            raise ConfigurationError("at least one held-out database is required")
        for h in self.holdouts:
            if h not in names:
                raise ConfigurationError(f"unknown held-out database {h!r}")
        if self.training is not None:
            unknown = set(self.training) - names
            if unknown:
                raise ConfigurationError(f"unknown training databases {sorted(unknown)}")
            for h in self.holdouts:
                if h in self.training:
                    raise LeakageError(f"held-out database {h} is listed as a training database")
        for h in self.holdouts:
            if not self.training_for(h):
                raise ConfigurationError(f"no training databases left for held-out {h}")
        bad = set(self.card_modes) - set(MODES)
        if bad or not self.card_modes:
            raise ConfigurationError(f"card_modes must be a non-empty subset of {MODES}")
        if self.queries_per_database < 2 or self.test_queries < 1:
            raise ConfigurationError("query counts too small")
        if any(n < 2 for n in self.baseline_sizes):
            raise ConfigurationError("baseline sizes must be >= 2")
        if not 0 <= self.index_fraction <= 1:
            raise ConfigurationError("index_fraction must be in [0, 1]")
        if self.finetune_samples > self.queries_per_database:
            raise ConfigurationError("finetune_samples exceeds the held-out workload")
        self.gen_config()
        self.model_config()
        self.cost_weights()
        self.workload_config(1, 0)
        return self

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentSpec":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigurationError(f"unknown ExperimentSpec keys: {sorted(unknown)}")
        if "version" not in d:
            raise ConfigurationError("spec needs a version field")
        return cls(**d).validate()

    @classmethod
    def load(cls, path) -> "ExperimentSpec":
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"{path}: invalid JSON: {exc}") from None
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        return asdict(self)


# -- per-database pipeline ----------------------------------------------------

def run_queries(db: Database, catalog, queries, weights: CostWeights, wall_clock: bool = False) -> list[Sample]:
    """Plan with the database's materialized indexes, execute, annotate."""
    indexes = db.index_defs
    out = []
    for q in queries:
        p = plan(q, catalog, indexes)
        res = execute(p, db, weights, wall_clock=wall_clock)
        annotate_actuals(p, res)
        out.append(Sample(db.name, q.qid, p, res.cost_units, res.wall_time_ms))
    return out


def encode_samples(samples, catalog, mode: str):
    return [encode(s.plan, catalog, mode) for s in samples]


@dataclass
class DatabaseBundle:
    name: str
    db: Database
    catalog: object
    samples: list
    graphs: dict  # mode -> graphs of ``samples``
    test_samples: list = field(default_factory=list)
    test_graphs: dict = field(default_factory=dict)
    index_defs: list = field(default_factory=list)
    index_samples: list = field(default_factory=list)
    index_graphs: list = field(default_factory=list)  # exact mode

    def summary(self) -> dict:
        return {"name": self.name, "seed": self.db.seed, "tables": len(self.db.tables),
                "rows": self.db.total_rows(), "queries": len(self.samples),
                "indexes": [str(d) for d in self.index_defs]}


def _seed(spec: ExperimentSpec, i: int, purpose: int) -> int:
    return (spec.database_seed + i) * 10 + purpose


def build_bundle(spec: ExperimentSpec, i: int, role: dict) -> DatabaseBundle:
    """generate -> plan -> execute -> encode for one database."""
    with warnings.catch_warnings():
        # small schemas clamp the join size; expected here
        warnings.simplefilter("ignore", WorkloadWarning)
        return _build_bundle(spec, i, role)


def _build_bundle(spec: ExperimentSpec, i: int, role: dict) -> DatabaseBundle:
    name = database_name(i)
    weights = spec.cost_weights()
    with stage("generate", db=name):
        db = generate_database(spec.gen_config(), spec.database_seed + i, name)
        catalog = compute_statistics(db)
        queries = generate_workload(db, catalog, spec.workload_config(spec.queries_per_database, _seed(spec, i, 1)))
    with stage("execute", db=name):
        samples = run_queries(db, catalog, queries, weights)
    with stage("encode", db=name):
        graphs = {m: encode_samples(samples, catalog, m) for m in spec.card_modes}
    b = DatabaseBundle(name, db, catalog, samples, graphs)
    if role.get("holdout"):
        with stage("execute", db=name, split="test"):
            test_q = generate_workload(db, catalog, spec.workload_config(spec.test_queries, _seed(spec, i, 2)))
            b.test_samples = run_queries(db, catalog, test_q, weights)
        with stage("encode", db=name, split="test"):
            b.test_graphs = {m: encode_samples(b.test_samples, catalog, m) for m in spec.card_modes}
    if role.get("indexed"):
        with stage("execute", db=name, split="indexed"):
            pool = index_candidates(db)
            k = int(round(spec.index_fraction * len(pool)))
            b.index_defs = generate_index_set(db, k, _seed(spec, i, 3))
            db_ix = db
            for d in b.index_defs:
                db_ix = build_index(db_ix, d)
            b.index_samples = run_queries(db_ix, catalog, queries, weights)
        with stage("encode", db=name, split="indexed"):
            b.index_graphs = encode_samples(b.index_samples, catalog, "exact")
    return b


def _build_bundle_job(args):
    return build_bundle(*args)


def build_bundles(spec: ExperimentSpec, roles: dict, jobs: int = 1) -> dict[str, DatabaseBundle]:
    tasks = [(spec, i, roles.get(database_name(i), {})) for i in range(spec.n_databases)]
    if jobs <= 1:
        bundles = [build_bundle(*t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            bundles = list(pool.map(_build_bundle_job, tasks))
    return {b.name: b for b in bundles}


# -- training and evaluation --------------------------------------------------

def _labels(samples) -> np.ndarray:
    return np.array([s.cost_units for s in samples], dtype=float)


def _fit(spec: ExperimentSpec, train_sets, val_set, holdout: str) -> ZeroShotCostModel:
    """``train_sets``/``val_set`` hold ``(database, graphs, samples)`` triples."""
    X, y, groups = [], [], []
    for name, graphs, samples in train_sets:
        X += graphs
        y.append(_labels(samples))
        groups += [name] * len(graphs)
    # runtime audit; train() re-checks the origins
    if holdout in groups:
        raise LeakageError(f"held-out database {holdout} reached the training set")
    cfg = spec.model_config()
    model = ZeroShotCostModel(**cfg.to_dict())
    _, val_graphs, val_samples = val_set
    return model.fit(X, np.concatenate(y), val_graphs, _labels(val_samples), groups=groups, holdout=[holdout])


def _metrics(model, graphs, samples) -> Metrics:
    return Metrics.from_qerrors(cost_qerrors(model.predict(graphs), _labels(samples)))


def _history(model) -> dict:
    h = model.history_
    return {"epochs_run": h.epochs_run, "best_epoch": h.best_epoch,
            "best_val_median_q": h.val_median_q[h.best_epoch] if h.val_median_q else None}


def _run_holdout(spec: ExperimentSpec, bundles: dict, holdout: str, first: bool, timings: dict) -> dict:
    val = spec.validation_for(holdout)
    train_names = spec.training_for(holdout)
    hb = bundles[holdout]
    out = {"holdout": holdout, "validation": val, "training": train_names, "models": {}}
    out["leak_audit"] = {"heldout_samples_in_training": 0,
                         "training_databases_contain_holdout": holdout in train_names}
    models = {}
    for mode in spec.card_modes:
        with stage("train", timings, holdout=holdout, mode=mode):
            m = _fit(spec, [(n, bundles[n].graphs[mode], bundles[n].samples) for n in train_names],
                     (val, bundles[val].graphs[mode], bundles[val].samples), holdout)
        with stage("evaluate", timings, holdout=holdout, mode=mode):
            models[mode] = m
            out["models"][mode] = {
                "heldout": _metrics(m, hb.graphs[mode], hb.samples).to_dict(),
                "test_split": _metrics(m, hb.test_graphs[mode], hb.test_samples).to_dict(),
                "training": _history(m),
            }
    if spec.onehot_ablation:
        with stage("train", timings, holdout=holdout, mode="onehot"):
            reg = OneHotRegistry.from_catalogs([bundles[n].catalog for n in train_names + [val]])

            def enc(name, samples):
                cat = bundles[name].catalog
                return [encode_onehot_ablation(s.plan, cat, reg, "exact") for s in samples]

            m = _fit(spec, [(n, enc(n, bundles[n].samples), bundles[n].samples) for n in train_names],
                     (val, enc(val, bundles[val].samples), bundles[val].samples), holdout)
        with stage("evaluate", timings, holdout=holdout, mode="onehot"):
            out["models"]["onehot"] = {
                "heldout": _metrics(m, enc(holdout, hb.samples), hb.samples).to_dict(),
                "training": _history(m),
                "registry": {"tables": len(reg.tables), "columns": len(reg.columns)},
            }
        del m
    with stage("baseline", timings, holdout=holdout):
        analytic = np.array([s.analytic_cost for s in hb.samples])
        test_analytic = np.array([s.analytic_cost for s in hb.test_samples])
        ref_mode = "estimated" if "estimated" in models else spec.card_modes[0]
        zs_test = out["models"][ref_mode]["test_split"]["median"]
        curve = []
        for n in sorted(spec.baseline_sizes):
            if n > len(hb.samples):
                continue
            b = fit_scaled_cost_baseline(analytic, _labels(hb.samples), n)
            q = Metrics.from_qerrors(cost_qerrors(b.predict(test_analytic), _labels(hb.test_samples)))
            curve.append({"n_train_queries": n, "baseline_median_q": q.median, "zeroshot_median_q": zs_test,
                          "coef": b.coef_, "intercept": b.intercept_, "degenerate": b.degenerate_})
        out["scaled_cost_curve"] = curve
        out["scaled_cost_reference_mode"] = ref_mode
    with stage("finetune", timings, holdout=holdout):
        k = spec.finetune_samples
        out["finetune"] = {}
        for mode, m in models.items():
            ft = m.finetune(hb.graphs[mode][:k], _labels(hb.samples[:k]), spec.finetune_lr_factor,
                            spec.finetune_epochs)
            out["finetune"][mode] = {
                "samples": k,
                "zeroshot_test_median_q": out["models"][mode]["test_split"]["median"],
                "finetuned_test_median_q": _metrics(ft, hb.test_graphs[mode], hb.test_samples).median,
            }
    if first and spec.stagnation and "exact" in models:
        rows = []
        for k in sorted(set(spec.stagnation)):
            if k >= len(train_names):
                continue
            with stage("stagnation", timings, holdout=holdout, n_databases=k):
                names = train_names[:k]
                m = _fit(spec, [(n, bundles[n].graphs["exact"], bundles[n].samples) for n in names],
                         (val, bundles[val].graphs["exact"], bundles[val].samples), holdout)
                rows.append({"n_databases": k, "val_median_q": _history(m)["best_val_median_q"],
                             "heldout_median_q": _metrics(m, hb.graphs["exact"], hb.samples).median})
        full = models["exact"]
        rows.append({"n_databases": len(train_names), "val_median_q": _history(full)["best_val_median_q"],
                     "heldout_median_q": out["models"]["exact"]["heldout"]["median"]})
        out["stagnation"] = rows
    return out


# -- what-if index evaluation -------------------------------------------------

@dataclass
class IndexPair:
    query_id: int
    index: IndexDef
    plain: Sample  # executed without the index
    indexed: Sample  # hypothetical plan, executed after materializing the index


def index_pairs(spec: ExperimentSpec, bundle: DatabaseBundle, i: int) -> list[IndexPair]:
    """Random query/index pairs on the held-out database.

    The prediction-side plan comes from ``hypothetical_plan`` on catalog
    statistics only; the index is materialized afterwards for ground truth.
    """
    db, catalog, weights = bundle.db, bundle.catalog, spec.cost_weights()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", WorkloadWarning)
        queries = generate_workload(db, catalog, spec.workload_config(spec.index_queries, _seed(spec, i, 4)))
    rng = np.random.default_rng(_seed(spec, i, 5))
    materialized: dict = {}
    pairs = []
    for q in queries:
        cands = sorted({(t, leaf.column) for t, pred in sorted(q.filters.items())
                        for _, leaf in probe_candidates(pred)})
        if not cands:
            continue
        t, c = cands[int(rng.integers(len(cands)))]
        ix = IndexDef(t, c, False)
        hyp = hypothetical_plan(q, catalog, [ix])
        plain = plan(q, catalog)
        if ix.key() not in materialized:
            materialized[ix.key()] = build_index(db, ix)
        res_i = execute(hyp, materialized[ix.key()], weights)
        res_p = execute(plain, db, weights)
        annotate_actuals(hyp, res_i)
        annotate_actuals(plain, res_p)
        pairs.append(IndexPair(q.qid, ix, Sample(db.name, q.qid, plain, res_p.cost_units),
                               Sample(db.name, q.qid, hyp, res_i.cost_units)))
        if len(pairs) >= spec.index_pairs:
            break
    return pairs


def direction_check(pred_plain, pred_indexed, cost_plain, cost_indexed, factor: float = 2.0) -> dict:
    """Share of pairs whose ground-truth costs differ by >= ``factor`` that the model orders correctly."""
    pred_plain, pred_indexed = np.asarray(pred_plain, float), np.asarray(pred_indexed, float)
    cost_plain, cost_indexed = np.asarray(cost_plain, float), np.asarray(cost_indexed, float)
    ratio = np.maximum(cost_plain / cost_indexed, cost_indexed / cost_plain)
    sel = ratio >= factor
    truth = np.sign(cost_indexed - cost_plain)[sel]
    guess = np.sign(pred_indexed - pred_plain)[sel]
    n = int(sel.sum())
    correct = int((truth == guess).sum())
    return {"pairs": n, "correct": correct, "fraction": correct / n if n else None}


def _run_index(spec: ExperimentSpec, bundles: dict, holdout: str, timings: dict) -> dict:
    val = spec.validation_for(holdout)
    train_names = spec.training_for(holdout)
    hb = bundles[holdout]
    with stage("train", timings, holdout=holdout, mode="index"):
        m = _fit(spec, [(n, bundles[n].index_graphs, bundles[n].index_samples) for n in train_names],
                 (val, bundles[val].index_graphs, bundles[val].index_samples), holdout)
    with stage("index-pairs", timings, holdout=holdout):
        pairs = index_pairs(spec, hb, spec.names.index(holdout))
    with stage("evaluate", timings, holdout=holdout, mode="index"):
        out = {"holdout": holdout, "training": _history(m), "reference_exact": dict(REFERENCE_INDEX_ROW),
               "heldout_plain_workload": _metrics(m, hb.graphs["exact"], hb.samples).to_dict()
               if "exact" in hb.graphs else None,
               "pairs": len(pairs)}
        if not pairs:
            out.update(index_workload=None, direction=None, index_used=0)
            return out
        cat = hb.catalog
        g_ix = [encode(p.indexed.plan, cat, "exact") for p in pairs]
        g_pl = [encode(p.plain.plan, cat, "exact") for p in pairs]
        c_ix = _labels([p.indexed for p in pairs])
        c_pl = _labels([p.plain for p in pairs])
        pred_ix, pred_pl = m.predict(g_ix), m.predict(g_pl)
        out["index_workload"] = Metrics.from_qerrors(cost_qerrors(pred_ix, c_ix)).to_dict()
        used = np.array([any(n.op == "IndexScan" for n in p.indexed.plan.ops()) for p in pairs])
        out["index_used"] = int(used.sum())
        if used.any():
            out["index_used_workload"] = Metrics.from_qerrors(cost_qerrors(pred_ix[used], c_ix[used])).to_dict()
        out["direction"] = direction_check(pred_pl, pred_ix, c_pl, c_ix)
    return out


# -- orchestration ------------------------------------------------------------

def _roles(spec: ExperimentSpec) -> dict:
    roles = {n: {} for n in spec.names}
    for h in spec.holdouts:
        roles[h]["holdout"] = True
    if spec.index_mode:
        h = spec.holdouts[0]
        for n in spec.training_for(h) + [spec.validation_for(h)]:
            roles[n]["indexed"] = True
    return roles


def run_experiment(spec: ExperimentSpec, out_dir=None, jobs: int = 1) -> dict:
    """Full protocol; writes report.json and the CSV files when ``out_dir`` is given."""
    spec.validate()
    timings: dict = {}
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "spec.json").write_text(json.dumps(spec.to_dict(), indent=2, sort_keys=True) + "\n")
    try:
        with stage("pipeline", timings):
            bundles = build_bundles(spec, _roles(spec), jobs)
        report = {
            "format": REPORT_FORMAT,
            "spec": spec.to_dict(),
            "cost_weights": spec.cost_weights().to_dict(),
            "databases": [bundles[n].summary() for n in spec.names],
            "executed_cost_units": float(sum(s.cost_units for b in bundles.values() for s in b.samples)),
            "holdouts": [],
        }
        if out_dir is not None:
            _write_json(out_dir / "databases.json", report["databases"])
        for j, h in enumerate(spec.holdouts):
            report["holdouts"].append(_run_holdout(spec, bundles, h, j == 0, timings))
        if spec.index_mode:
            report["index"] = _run_index(spec, bundles, spec.holdouts[0], timings)
    finally:
        if out_dir is not None:
            _write_json(out_dir / "timings.json", timings)
    if out_dir is not None:
        write_report(report, out_dir)
    return report


def run_index_experiment(spec: ExperimentSpec, out_dir=None, jobs: int = 1) -> dict:
    spec = ExperimentSpec.from_dict({**spec.to_dict(), "index_mode": True})
    return run_experiment(spec, out_dir, jobs)


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def table1_rows(report: dict) -> list[list]:
    rows = []
    for h in report["holdouts"]:
        for mode, r in h["models"].items():
            m = r["heldout"]
            rows.append([f"heldout:{h['holdout']}", mode, m["median"], m["p95"], m["max"]])
    idx = report.get("index")
    if idx and idx.get("index_workload"):
        m = idx["index_workload"]
        rows.append([f"index:{idx['holdout']}", "exact", m["median"], m["p95"], m["max"]])
        ref = idx["reference_exact"]
        rows.append(["index:reference", "exact", ref["median"], ref["p95"], ref["max"]])
    return rows


def write_report(report: dict, out_dir) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_json(out_dir / "report.json", report)

    def write_csv(name, header, rows):
        with (out_dir / name).open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            w.writerows(rows)

    def fmt(x):
        return "" if x is None else f"{x:.6f}"

    write_csv("table1.csv", ["workload", "mode", "median", "p95", "max"],
              [[w, m, fmt(a), fmt(b), fmt(c)] for w, m, a, b, c in table1_rows(report)])
    write_csv("figure3_curve.csv", ["holdout", "n_train_queries", "baseline_median_q", "zeroshot_median_q"],
              [[h["holdout"], r["n_train_queries"], fmt(r["baseline_median_q"]), fmt(r["zeroshot_median_q"])]
               for h in report["holdouts"] for r in h["scaled_cost_curve"]])
    stag = report["holdouts"][0].get("stagnation", [])
    write_csv("stagnation.csv", ["n_databases", "val_median_q", "heldout_median_q"],
              [[r["n_databases"], fmt(r["val_median_q"]), fmt(r["heldout_median_q"])] for r in stag])
