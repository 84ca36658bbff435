"""Plan execution over in-memory columns with deterministic work-unit costs.

Every operator keeps integer counters of the elementary work it performs;
weights are applied once, after execution, so ``cost_units`` is bit-identical
across runs.
"""
from __future__ import annotations

import itertools
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ExecutionError, OracleSizeError
from .plan import PhysicalPlan, PlanNode
from .relcore import Database, DataType, page_count
from .workload import Predicate, QuerySpec

HASH_MULTIPLIER = np.uint64(0x9E3779B97F4A7C15)
ORACLE_LIMIT = 10**7


@dataclass(frozen=True)
class CostWeights:
    tuple_scan: float = 1.0
    predicate_leaf_eval: float = 0.2
    hash_insert: float = 2.0
    hash_probe: float = 1.0
    hash_match: float = 1.0
    index_match_fetch: float = 1.2
    aggregate_update: float = 0.5
    page_touch: float = 2.0
    # an index probe costs log2(row_count) of the indexed table

    def __post_init__(self):
        for k, v in asdict(self).items():
            if not v > 0:
                raise ValueError(f"cost weight {k} must be positive, got {v}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["index_probe"] = "log2(row_count)"
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "CostWeights":
        return cls(**{k: v for k, v in d.items() if k != "index_probe"})


@dataclass
class ExecResult:
    result: list
    actual_cards: dict[int, int]
    actual_sels: dict[int, list[float]]
    counters: dict[int, dict[str, int]]
    op_costs: dict[int, float]
    cost_units: float
    wall_time_ms: float | None = None


@dataclass
class _Rel:
    rows: dict[str, np.ndarray]
    size: int


@dataclass
class _Ctx:
    db: Database
    weights: CostWeights
    cards: dict = field(default_factory=dict)
    sels: dict = field(default_factory=dict)
    counters: dict = field(default_factory=dict)


def leaf_mask(leaf: Predicate, column, rows: np.ndarray | None = None) -> np.ndarray:
    """Truth value of a comparison leaf; nulls never satisfy a comparison."""
    values = column.values if rows is None else column.values[rows]
    if leaf.op == "IN":
        codes = [column.encode_literal(v) for v in leaf.literal]
        mask = np.isin(values, np.asarray(codes, dtype=values.dtype))
    else:
        lit = column.encode_literal(leaf.literal)
        if leaf.op == "=":
            mask = values == lit
        elif leaf.op == "<":
            mask = values < lit
        elif leaf.op == "<=":
            mask = values <= lit
        elif leaf.op == ">":
            mask = values > lit
        elif leaf.op == ">=":
            mask = values >= lit
        else:
            raise ExecutionError(f"unsupported comparison {leaf.op!r}")
    if column.nulls is not None:
        nulls = column.nulls if rows is None else column.nulls[rows]
        mask = mask & ~nulls
    return mask


def _full_masks(pred: Predicate, table, out: dict) -> np.ndarray:
    if pred.is_leaf:
        m = leaf_mask(pred, table.column(pred.column))
    else:
        parts = [_full_masks(c, table, out) for c in pred.children]
        m = parts[0].copy()
        for p in parts[1:]:
            m = (m & p) if pred.op == "AND" else (m | p)
    out[id(pred)] = m
    return m


def _short_circuit(pred: Predicate, rows: np.ndarray, masks: dict, counter: list) -> np.ndarray:
    """Mask over ``rows``; counts one leaf evaluation per tuple actually tested."""
    if pred.is_leaf:
        counter[0] += len(rows)
        return masks[id(pred)][rows]
    if pred.op == "AND":
        keep = np.ones(len(rows), dtype=bool)
        for c in pred.children:
            live = np.flatnonzero(keep)
            if len(live) == 0:
                break
            keep[live[~_short_circuit(c, rows[live], masks, counter)]] = False
        return keep
    hit = np.zeros(len(rows), dtype=bool)
    for c in pred.children:
        live = np.flatnonzero(~hit)
        if len(live) == 0:
            break
        hit[live[_short_circuit(c, rows[live], masks, counter)]] = True
    return hit


def _scan(node: PlanNode, ctx: _Ctx) -> _Rel:
    table = ctx.db.table(node.table)
    n = table.row_count
    cnt = {}
    masks: dict = {}
    if node.predicate is not None:
        _full_masks(node.predicate, table, masks)
        ctx.sels[node.op_id] = [float(masks[id(p)].mean()) if n else 0.0 for p in node.predicate.walk()]
    leaf_evals = [0]
    if node.op == "SeqScan":
        cnt["page_touch"] = page_count(n, table.row_width)
        cnt["tuple_scan"] = n
        rows = np.arange(n, dtype=np.int64)
        if node.predicate is not None:
            rows = rows[_short_circuit(node.predicate, rows, masks, leaf_evals)]
    else:
        index = ctx.db.indexes.get(node.index.key())
        if index is None:
            raise ExecutionError(f"index {node.index} is not materialized")
        rows = index.lookup(node.probe_leaf.literal).astype(np.int64)
        cnt["index_probe"] = 1
        cnt["index_match_fetch"] = len(rows)
        residual = node.residual()
        if residual is not None:
            rows = rows[_short_circuit(residual, rows, masks, leaf_evals)]
    cnt["predicate_leaf_eval"] = leaf_evals[0]
    ctx.counters[node.op_id] = cnt
    return _Rel({node.table: rows}, len(rows))


def bucket_of(keys: np.ndarray, bits: int) -> np.ndarray:
    """Multiplicative (Fibonacci) hashing into ``2**bits`` buckets."""
    h = keys.astype(np.uint64) * HASH_MULTIPLIER
    return (h >> np.uint64(64 - bits)).astype(np.int64)


def hash_join(build_keys: np.ndarray, probe_keys: np.ndarray):
    """Equi-join positions plus work counts of a chained hash table.

    Returns (build_pos, probe_pos, inserts, bucket entries visited, matches).
    Each probe walks its whole bucket chain; an empty bucket still costs one
    lookup.
    """
    nb = len(build_keys)
    bits = max(1, int(math.ceil(math.log2(max(2 * nb, 2)))))
    chain = np.bincount(bucket_of(build_keys, bits), minlength=1 << bits)
    visited = int(np.maximum(chain[bucket_of(probe_keys, bits)], 1).sum()) if len(probe_keys) else 0
    order = np.argsort(build_keys, kind="stable")
    sorted_keys = build_keys[order]
    lo = np.searchsorted(sorted_keys, probe_keys, side="left")
    hi = np.searchsorted(sorted_keys, probe_keys, side="right")
    counts = hi - lo
    total = int(counts.sum())
    probe_pos = np.repeat(np.arange(len(probe_keys), dtype=np.int64), counts)
    starts = np.repeat(lo - (np.cumsum(counts) - counts), counts)
    build_pos = order[starts + np.arange(total, dtype=np.int64)]
    return build_pos, probe_pos, nb, visited, total


def _join(node: PlanNode, ctx: _Ctx) -> _Rel:
    left, right = (_run(c, ctx) for c in node.children)
    j = node.join
    def keys(rel: _Rel) -> np.ndarray:
        if j.child_table in rel.rows:
            return ctx.db.table(j.child_table).column(j.child_column).values[rel.rows[j.child_table]]
        return ctx.db.table(j.parent_table).column(j.parent_column).values[rel.rows[j.parent_table]]
    build, probe = (left, right) if node.build == 0 else (right, left)
    b_pos, p_pos, inserts, visited, matches = hash_join(keys(build), keys(probe))
    rows = {t: r[b_pos] for t, r in build.rows.items()}
    rows.update({t: r[p_pos] for t, r in probe.rows.items()})
    ctx.counters[node.op_id] = {"hash_insert": inserts, "hash_probe": visited, "hash_match": matches}
    return _Rel(rows, matches)


def aggregate_value(func: str, column, rows: np.ndarray | None, n_rows: int):
    if func == "COUNT" and column is None:
        return n_rows
    vals = column.values[rows]
    if column.nulls is not None:
        vals = vals[~column.nulls[rows]]
    if func == "COUNT":
        return len(vals)
    if len(vals) == 0:
        return None
    if func in ("SUM", "AVG"):
        if column.dtype is DataType.INT:
            s = int(vals.sum(dtype=np.int64))
        else:
            s = math.fsum(vals.tolist())
        return s if func == "SUM" else s / len(vals)
    if func == "MIN":
        return vals.min().item()
    if func == "MAX":
        return vals.max().item()
    raise ExecutionError(f"unknown aggregate {func!r}")


def _aggregate(node: PlanNode, ctx: _Ctx):
    rel = _run(node.children[0], ctx)
    out = []
    for a in node.aggregates:
        col = None if a.column is None else ctx.db.table(a.table).column(a.column)
        rows = None if col is None else rel.rows[a.table]
        out.append(aggregate_value(a.func, col, rows, rel.size))
    ctx.counters[node.op_id] = {"aggregate_update": rel.size * len(node.aggregates)}
    return out


def _run(node: PlanNode, ctx: _Ctx):
    if node.op in ("SeqScan", "IndexScan"):
        rel = _scan(node, ctx)
    elif node.op == "HashJoin":
        rel = _join(node, ctx)
    elif node.op == "Aggregate":
        out = _aggregate(node, ctx)
        ctx.cards[node.op_id] = 1
        return out
    else:
        raise ExecutionError(f"unknown operator {node.op!r}")
    ctx.cards[node.op_id] = rel.size
    return rel


def _op_cost(node: PlanNode, counters: dict, db: Database, w: CostWeights) -> float:
    cost = 0.0
    for name in sorted(counters):
        n = counters[name]
        if name == "index_probe":
            weight = math.log2(max(db.table(node.table).row_count, 2))
        else:
            weight = getattr(w, name)
        cost += weight * n
    return cost


def execute(plan: PhysicalPlan, db: Database, weights: CostWeights | None = None,
            wall_clock: bool = False) -> ExecResult:
    weights = weights or CostWeights()
    for node in plan.ops():
        if node.op == "IndexScan" and node.index.key() not in db.indexes:
            if plan.hypothetical:
                raise ExecutionError(f"refusing hypothetical plan: index {node.index} is not materialized")
            raise ExecutionError(f"plan references missing index {node.index}")
    if plan.root.op != "Aggregate":
        raise ExecutionError("plan root must be an Aggregate")
    ctx = _Ctx(db, weights)
    t0 = time.perf_counter()
    result = _run(plan.root, ctx)
    elapsed = (time.perf_counter() - t0) * 1000.0 if wall_clock else None
    op_costs = {}
    for node in plan.ops():
        op_costs[node.op_id] = _op_cost(node, ctx.counters[node.op_id], db, weights)
    total = 0.0
    for op_id in sorted(op_costs):
        total += op_costs[op_id]
    return ExecResult(result, ctx.cards, ctx.sels, ctx.counters, op_costs, total, elapsed)


def annotate_actuals(plan: PhysicalPlan, res: ExecResult) -> PhysicalPlan:
    """Write actual cardinalities and selectivities into ``plan`` in place."""
    for node in plan.ops():
        node.act_card = res.actual_cards[node.op_id]
        if node.predicate is not None:
            for p, s in zip(node.predicate.walk(), res.actual_sels[node.op_id]):
                p.act_sel = s
    return plan


# -- brute-force oracle -------------------------------------------------------

def _row_satisfies(pred: Predicate, db: Database, row: int) -> bool:
    if not pred.is_leaf:
        parts = (_row_satisfies(c, db, row) for c in pred.children)
        return all(parts) if pred.op == "AND" else any(parts)
    v = db.table(pred.table).column(pred.column).python_value(row)
    if v is None:
        return False
    lit = pred.literal
    if pred.op == "IN":
        return v in lit
    if pred.op == "=":
        return v == lit
    if pred.op == "<":
        return v < lit
    if pred.op == "<=":
        return v <= lit
    if pred.op == ">":
        return v > lit
    if pred.op == ">=":
        return v >= lit
    raise ExecutionError(f"unsupported comparison {pred.op!r}")


def _nested_loop(q: QuerySpec, db: Database, tables: list[str]) -> list[tuple]:
    candidates = []
    for t in tables:
        n = db.table(t).row_count
        pred = q.filters.get(t)
        candidates.append([r for r in range(n) if pred is None or _row_satisfies(pred, db, r)])
    pos = {t: i for i, t in enumerate(tables)}
    joins = [j for j in q.joins if j.child_table in pos and j.parent_table in pos]
    out = []
    for combo in itertools.product(*candidates):
        ok = True
        for j in joins:
            cv = db.table(j.child_table).column(j.child_column).python_value(combo[pos[j.child_table]])
            pv = db.table(j.parent_table).column(j.parent_column).python_value(combo[pos[j.parent_table]])
            if cv is None or cv != pv:
                ok = False
                break
        if ok:
            out.append(combo)
    return out


def _connected_subsets(q: QuerySpec) -> list[list[str]]:
    out = []
    for k in range(2, len(q.tables) + 1):
        for subset in itertools.combinations(q.tables, k):
            s = set(subset)
            edges = [j for j in q.joins if j.child_table in s and j.parent_table in s]
            if len(edges) == k - 1:  # a tree-shaped query graph restricted to s
                out.append(list(subset))
    return out


def brute_force_oracle(q: QuerySpec, db: Database):
    """Reference semantics by enumeration.

    Returns ``(result_row, cards)`` where ``cards`` maps the frozenset of
    tables of every connected sub-join (size >= 2) to its true row count.
    """
    size = 1
    for t in q.tables:
        size *= max(db.table(t).row_count, 1)
    if size > ORACLE_LIMIT:
        raise OracleSizeError(f"cross product of {size} rows exceeds the oracle limit {ORACLE_LIMIT}")
    tables = list(q.tables)
    tuples = _nested_loop(q, db, tables)
    pos = {t: i for i, t in enumerate(tables)}
    result = []
    for a in q.aggregates:
        if a.column is None:
            result.append(len(tuples))
            continue
        col = db.table(a.table).column(a.column)
        vals = [col.python_value(tup[pos[a.table]]) for tup in tuples]
        vals = [v for v in vals if v is not None]
        if a.func == "COUNT":
            result.append(len(vals))
        elif not vals:
            result.append(None)
        elif a.func in ("SUM", "AVG"):
            s = sum(vals) if col.dtype is DataType.INT else math.fsum(vals)
            result.append(s if a.func == "SUM" else s / len(vals))
        elif a.func == "MIN":
            result.append(min(vals))
        else:
            result.append(max(vals))
    cards = {frozenset(tables): len(tuples)}
    for subset in _connected_subsets(q):
        key = frozenset(subset)
        if key not in cards:
            cards[key] = len(_nested_loop(q, db, subset))
    return result, cards
