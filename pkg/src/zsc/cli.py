"""``zsc`` command line.

Exit codes: 0 success, 1 runtime failure, 2 usage error. ``ZSC_LOG`` picks the
log level (error, info, debug).
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .encoding import MODES, encode
from .errors import ConfigurationError, ZSCError
from .executor import CostWeights, annotate_actuals, execute
from .experiment import ExperimentError, ExperimentSpec, run_experiment, run_queries
from .metrics import Metrics, cost_qerrors, qerror
from .model import ModelConfig, ZeroShotCostModel, load_checkpoint
from .planner import hypothetical_plan, plan
from .relcore import (GenConfig, IndexDef, build_index, compute_statistics, generate_database,
                      load_catalog, load_database, save_database)
from .samples import load_samples, save_samples
from .workload import QuerySpec, WorkloadConfig, generate_workload, load_index_defs, load_workload, save_workload

log = logging.getLogger("zsc")
LOG_LEVELS = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
CONFIG_VERSION = 1


class UsageError(Exception):
    pass


# -- manifests ----------------------------------------------------------------

def digest(path) -> str:
    h = hashlib.sha256()
    with Path(path).open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _inventory(paths) -> list[dict]:
    files = []
    for p in paths:
        p = Path(p)
        items = sorted(q for q in p.rglob("*") if q.is_file()) if p.is_dir() else [p]
        for q in items:
            files.append({"path": str(q), "bytes": q.stat().st_size, "sha256": digest(q)})
    return files


class RunManifest:
    """Provenance record; written before the long stage and completed after it."""

    def __init__(self, path, command: str, argv: list[str]):
        self.path = Path(path)
        self.data = {"tool": "zsc", "version": __version__, "command": command, "argv": argv,
                     "seeds": {}, "configs": {}, "inputs": {}, "cost_weights": None,
                     "status": "running", "outputs": []}

    def config(self, name: str, path) -> None:
        self.data["configs"][name] = {"path": str(path), "sha256": digest(path)}

    def write(self) -> None:
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.path.write_text(json.dumps(self.data, indent=2, sort_keys=True) + "\n")

    def finish(self, outputs) -> None:
        self.data["status"] = "complete"
        self.data["outputs"] = [f for f in _inventory(outputs) if Path(f["path"]) != self.path]
        self.write()


def sidecar(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".run.json")


def read_config(path, kind: str) -> dict:
    try:
        data = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{path}: invalid JSON: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigurationError(f"{path}: {kind} config must be a JSON object")
    if data.get("version", CONFIG_VERSION) != CONFIG_VERSION:
        raise ConfigurationError(f"{path}: unsupported {kind} config version {data.get('version')}")
    return data


def _catalog(db_dir):
    cat = load_catalog(db_dir)
    return cat if cat is not None else compute_statistics(load_database(db_dir))


def catalogs_for(sample_paths, db_dirs=()) -> dict:
    """Database name -> catalog, from ``--db`` dirs or the samples' sidecar manifests."""
    out = {}
    dirs = list(db_dirs or [])
    for sp in sample_paths:
        sc = sidecar(sp)
        if sc.exists():
            db = json.loads(sc.read_text()).get("inputs", {}).get("db")
            if db:
                dirs.append(db)
    for d in dirs:
        cat = _catalog(d)
        out.setdefault(cat.database, cat)
    return out


def encode_all(samples, catalogs: dict, mode: str):
    graphs = []
    for s in samples:
        if s.database not in catalogs:
            raise ConfigurationError(f"no catalog for database {s.database}; pass --db")
        graphs.append(encode(s.plan, catalogs[s.database], mode))
    return graphs


# -- commands -----------------------------------------------------------------

def cmd_gen_data(args, argv):
    out = Path(args.out)
    m = RunManifest(out / "run.json", "gen-data", argv)
    cfg = GenConfig.from_dict(read_config(args.config, "generator"))
    m.config("generator", args.config)
    m.data["seeds"]["database"] = args.seed
    m.write()
    db = generate_database(cfg, args.seed, args.name)
    save_database(db, out, compute_statistics(db))
    m.finish([out])
    print(f"{db.name}: {len(db.tables)} tables, {db.total_rows()} rows -> {out}")


def cmd_gen_workload(args, argv):
    out = Path(args.out)
    m = RunManifest(sidecar(out), "gen-workload", argv)
    data = read_config(args.config, "workload")
    if args.seed is not None:
        data["seed"] = args.seed
    cfg = WorkloadConfig.from_dict(data)
    m.config("workload", args.config)
    m.data["seeds"]["workload"] = cfg.seed
    m.data["inputs"]["db"] = str(Path(args.db).resolve())
    m.write()
    db = load_database(args.db)
    queries = generate_workload(db, _catalog(args.db), cfg)
    save_workload(queries, out)
    m.finish([out, out.with_suffix(".sql")])
    print(f"{len(queries)} queries -> {out}")


def _weights(args) -> CostWeights:
    if getattr(args, "weights", None):
        return CostWeights.from_dict(read_config(args.weights, "weights"))
    return CostWeights()


def cmd_run_workload(args, argv):
    out = Path(args.out)
    m = RunManifest(sidecar(out), "run-workload", argv)
    weights = _weights(args)
    m.data["cost_weights"] = weights.to_dict()
    m.data["inputs"] = {"db": str(Path(args.db).resolve()), "workload": str(args.workload),
                        "workload_sha256": digest(args.workload)}
    if args.indexes:
        m.config("indexes", args.indexes)
    m.write()
    db = load_database(args.db)
    catalog = _catalog(args.db)
    for d in load_index_defs(args.indexes) if args.indexes else []:
        db = build_index(db, d)
    samples = run_queries(db, catalog, load_workload(args.workload), weights, wall_clock=args.wall_clock)
    save_samples(samples, out)
    m.finish([out])
    total = sum(s.cost_units for s in samples)
    print(f"{len(samples)} samples, {total:.0f} cost units -> {out}")


def _model_config(path) -> ModelConfig:
    return ModelConfig.from_dict(read_config(path, "model")) if path else ModelConfig()


def cmd_train(args, argv):
    out = Path(args.out)
    m = RunManifest(sidecar(out), "train", argv)
    cfg = _model_config(args.model_config)
    if args.model_config:
        m.config("model", args.model_config)
    m.data["seeds"]["model"] = cfg.seed
    m.data["inputs"]["samples"] = [{"path": str(p), "sha256": digest(p)} for p in args.samples]
    m.write()
    samples = [s for p in args.samples for s in load_samples(p)]
    origins = sorted({s.database for s in samples})
    catalogs = catalogs_for(args.samples, args.db)
    # the last training database (by name) validates unless only one exists
    train_dbs = [d for d in origins if d != args.holdout]
    val_db = args.validation or (train_dbs[-1] if len(train_dbs) > 1 else None)
    if val_db is not None and val_db not in origins:
        raise ConfigurationError(f"validation database {val_db} has no samples")
    tr = [s for s in samples if s.database != val_db]
    va = [s for s in samples if s.database == val_db]
    model = ZeroShotCostModel(**cfg.to_dict())
    y = np.array([s.cost_units for s in tr])
    kw = {}
    if va:
        kw = {"X_val": encode_all(va, catalogs, args.card_mode), "y_val": np.array([s.cost_units for s in va])}
    model.fit(encode_all(tr, catalogs, args.card_mode), y, groups=[s.database for s in tr],
              holdout=[args.holdout] if args.holdout else [], **kw)
    model.save(out, extra={"card_mode": args.card_mode, "holdout": args.holdout,
                           "training_databases": sorted({s.database for s in tr}), "validation_database": val_db,
                           "history": model.history_.to_dict()})
    m.finish([out])
    print(f"trained on {len(tr)} samples from {len(set(s.database for s in tr))} databases "
          f"({model.history_.epochs_run} epochs) -> {out}")


def _load_model(path):
    params, cfg, extra = load_checkpoint(path)
    model = ZeroShotCostModel(**cfg.to_dict())
    model.params_ = params
    return model, extra


def cmd_finetune(args, argv):
    out = Path(args.out)
    m = RunManifest(sidecar(out), "finetune", argv)
    m.data["inputs"] = {"checkpoint": str(args.checkpoint), "checkpoint_sha256": digest(args.checkpoint),
                        "samples": str(args.samples), "samples_sha256": digest(args.samples)}
    m.write()
    model, extra = _load_model(args.checkpoint)
    mode = extra.get("card_mode", "exact")
    samples = load_samples(args.samples)
    if extra.get("holdout") and any(s.database == extra["holdout"] for s in samples):
        log.info("fine-tuning on samples of the held-out database %s (few-shot)", extra["holdout"])
    graphs = encode_all(samples, catalogs_for([args.samples], args.db), mode)
    ft = model.finetune(graphs, np.array([s.cost_units for s in samples]), args.lr_factor, args.epochs)
    ft.save(out, extra={**extra, "finetuned_on": sorted({s.database for s in samples}),
                        "finetune_samples": len(samples)})
    m.finish([out])
    print(f"fine-tuned on {len(samples)} samples -> {out}")


def read_queries(path) -> list[QuerySpec]:
    """A single JSON query object or a JSONL workload."""
    text = Path(path).read_text()
    try:
        obj = json.loads(text)
    except json.JSONDecodeError:
        return load_workload(path)
    return [QuerySpec.from_dict(obj)] if isinstance(obj, dict) else [QuerySpec.from_dict(o) for o in obj]


def cmd_predict(args, argv):
    model, extra = _load_model(args.checkpoint)
    mode = extra.get("card_mode", "exact")
    db = load_database(args.db)
    catalog = _catalog(args.db)
    queries = read_queries(args.query)
    hyp = []
    if args.hypothetical_index:
        t, _, c = args.hypothetical_index.partition(".")
        if not c:
            raise UsageError("--hypothetical-index expects table.column")
        hyp = [IndexDef(t, c)]
    if mode == "exact" and args.no_execute:
        raise ConfigurationError("exact-cardinality checkpoints need execution; drop --no-execute")
    weights = _weights(args)
    for q in queries:
        q.validate(db)
        p = hypothetical_plan(q, catalog, hyp, db.index_defs) if hyp else plan(q, catalog, db.index_defs)
        actual = None
        if not args.no_execute:
            run_db = db
            for d in hyp:
                # materialized on an in-memory copy only; the input stays untouched
                run_db = build_index(run_db, d)
            res = execute(p, run_db, weights)
            annotate_actuals(p, res)
            actual = res.cost_units
        pred = float(model.predict([encode(p, catalog, mode)])[0])
        rec = {"query_id": q.qid, "card_mode": mode, "predicted_cost": pred,
               "plan": [n.op for n in p.ops()], "hypothetical_indexes": [str(d) for d in hyp]}
        if actual is not None:
            rec["actual_cost"] = actual
            rec["qerror"] = qerror(1.0 + pred, 1.0 + actual)
        print(json.dumps(rec, sort_keys=True))


def cmd_evaluate(args, argv):
    out = Path(args.out)
    m = RunManifest(out / "run.json", "evaluate", argv)
    m.data["inputs"] = {"checkpoint": str(args.checkpoint), "checkpoint_sha256": digest(args.checkpoint),
                        "samples": str(args.samples), "samples_sha256": digest(args.samples)}
    m.write()
    model, extra = _load_model(args.checkpoint)
    mode = extra.get("card_mode", "exact")
    samples = load_samples(args.samples)
    held = extra.get("holdout")
    trained = set(extra.get("training_databases", []))
    seen = sorted({s.database for s in samples} & trained)
    if seen:
        log.info("evaluation samples overlap training databases %s; not a zero-shot evaluation", seen)
    graphs = encode_all(samples, catalogs_for([args.samples], args.db), mode)
    costs = np.array([s.cost_units for s in samples])
    met = Metrics.from_qerrors(cost_qerrors(model.predict(graphs), costs))
    report = {"format": "evaluation_v1", "card_mode": mode, "holdout": held, "metrics": met.to_dict(),
              "databases": sorted({s.database for s in samples}), "zero_shot": not seen}
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    (out / "table1.csv").write_text("workload,mode,median,p95,max\n" + ",".join(
        [Path(args.samples).stem, mode] + [f"{x:.6f}" for x in (met.median, met.p95, met.max)]) + "\n")
    m.finish([out])
    print(f"median {met.median:.3f}  p95 {met.p95:.3f}  max {met.max:.3f}  (n={met.count})")


def cmd_experiment(args, argv):
    out = Path(args.out)
    m = RunManifest(out / "run.json", "experiment", argv)
    spec = ExperimentSpec.load(args.spec)
    if args.index_mode:
        spec = ExperimentSpec.from_dict({**spec.to_dict(), "index_mode": True})
    m.config("spec", args.spec)
    m.data["seeds"] = {"database_seed": spec.database_seed, "model": spec.model_config().seed}
    m.data["cost_weights"] = spec.cost_weights().to_dict()
    m.write()
    report = run_experiment(spec, out, jobs=args.jobs)
    m.finish([out])
    for h in report["holdouts"]:
        for mode, r in h["models"].items():
            x = r["heldout"]
            print(f"{h['holdout']:>6} {mode:>9}: median {x['median']:.3f} p95 {x['p95']:.3f} max {x['max']:.3f}")
    if "index" in report and report["index"].get("index_workload"):
        x = report["index"]["index_workload"]
        print(f"{'index':>6} {'exact':>9}: median {x['median']:.3f} p95 {x['p95']:.3f} max {x['max']:.3f}")


# -- entry point --------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="zsc", description="Zero-shot query cost estimation toolkit")
    p.add_argument("--version", action="version", version=f"zsc {__version__}")
    p.add_argument("--jobs", type=int, default=1, help="worker processes for per-database stages")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("gen-data", help="generate a database")
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--name")
    s.set_defaults(func=cmd_gen_data)

    s = sub.add_parser("gen-workload", help="generate a query workload")
    s.add_argument("--db", required=True)
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_gen_workload)

    s = sub.add_parser("run-workload", help="plan and execute a workload into training samples")
    s.add_argument("--db", required=True)
    s.add_argument("--workload", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--indexes")
    s.add_argument("--weights")
    s.add_argument("--wall-clock", action="store_true")
    s.set_defaults(func=cmd_run_workload)

    s = sub.add_parser("train", help="train a zero-shot model")
    s.add_argument("--samples", nargs="+", required=True)
    s.add_argument("--holdout", required=True)
    s.add_argument("--model-config")
    s.add_argument("--out", required=True)
    s.add_argument("--card-mode", choices=MODES, default="exact")
    s.add_argument("--validation")
    s.add_argument("--db", nargs="*", default=[])
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("finetune", help="few-shot fine-tuning of a checkpoint")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--samples", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--epochs", type=int, default=20)
    s.add_argument("--lr-factor", type=float, default=0.1)
    s.add_argument("--db", nargs="*", default=[])
    s.set_defaults(func=cmd_finetune)

    s = sub.add_parser("predict", help="predict query costs, optionally under a hypothetical index")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--db", required=True)
    s.add_argument("--query", required=True)
    s.add_argument("--hypothetical-index")
    s.add_argument("--no-execute", action="store_true")
    s.add_argument("--weights")
    s.set_defaults(func=cmd_predict)

    s = sub.add_parser("evaluate", help="q-error metrics of a checkpoint on samples")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--samples", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--db", nargs="*", default=[])
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("experiment", help="full leave-one-database-out experiment")
    s.add_argument("--spec", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--index-mode", action="store_true")
    s.set_defaults(func=cmd_experiment)
    return p


def _setup_logging() -> None:
    level = os.environ.get("ZSC_LOG", "info").lower()
    if level not in LOG_LEVELS:
        raise UsageError(f"ZSC_LOG must be one of {sorted(LOG_LEVELS)}, got {level!r}")
    logging.basicConfig(level=LOG_LEVELS[level], format="%(levelname)s %(name)s: %(message)s", force=True)


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if isinstance(exc.code, int) else 2
    try:
        _setup_logging()
        if args.jobs < 1:
            raise UsageError("--jobs must be >= 1")
        args.func(args, argv)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"zsc: error: {exc}", file=sys.stderr)
        return 2
    except ExperimentError as exc:
        print(f"zsc {args.command}: {exc}", file=sys.stderr)
        return 1
    except (ZSCError, OSError, ValueError, KeyError) as exc:
        print(f"zsc {args.command}: [{args.command}] {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
