"""Histogram-based selectivity and plan cardinality estimation."""
from __future__ import annotations

from .errors import ExecutionError
from .relcore import Catalog
from .workload import Predicate


def _clamp01(x: float) -> float:
    return min(max(x, 0.0), 1.0)


def _eq_count(stats, key) -> float:
    h = stats.histogram
    b = h.bucket_of(key)
    if b < 0 or h.ndv[b] == 0:
        return 0.0
    return float(h.counts[b]) / float(h.ndv[b])


def _lt_count(stats, key) -> float:
    """Estimated number of non-null values strictly below ``key``."""
    h = stats.histogram
    if h.total == 0 or key <= h.bounds[0]:
        return 0.0
    if key > h.bounds[-1]:
        return float(h.total)
    b = h.bucket_of(key)
    lo, hi = h.bounds[b], h.bounds[b + 1]
    frac = (key - lo) / (hi - lo) if hi > lo else 0.0
    return float(h.counts[:b].sum()) + float(h.counts[b]) * frac


def leaf_selectivity(leaf: Predicate, catalog: Catalog) -> float:
    stats = catalog.column(leaf.table, leaf.column)
    rows = catalog.table(leaf.table).row_count
    if rows == 0:
        return 0.0
    total = float(stats.histogram.total)
    if leaf.op == "IN":
        count = sum(_eq_count(stats, stats.code_of(v)) for v in set(leaf.literal))
    else:
        key = stats.code_of(leaf.literal)
        if leaf.op == "=":
            count = _eq_count(stats, key)
        elif leaf.op == "<":
            count = _lt_count(stats, key)
        elif leaf.op == "<=":
            count = _lt_count(stats, key) + _eq_count(stats, key)
        elif leaf.op == ">":
            count = total - _lt_count(stats, key) - _eq_count(stats, key)
        elif leaf.op == ">=":
            count = total - _lt_count(stats, key)
        else:
            raise ValueError(f"unsupported comparison {leaf.op!r}")
    count = min(max(count, 0.0), total)
    return _clamp01(count / rows)


def estimate_selectivity(pred: Predicate, catalog: Catalog, annotate: bool = False) -> float:
    """Selectivity in [0, 1] under per-leaf independence.

    With ``annotate`` every node's ``est_sel`` slot receives its subtree estimate.
    """
    if pred.is_leaf:
        sel = leaf_selectivity(pred, catalog)
    else:
        parts = [estimate_selectivity(c, catalog, annotate) for c in pred.children]
        if pred.op == "AND":
            sel = 1.0
            for s in parts:
                sel *= s
        else:
            miss = 1.0
            for s in parts:
                miss *= 1.0 - s
            sel = 1.0 - miss
    sel = _clamp01(sel)
    if annotate:
        pred.est_sel = sel
    return sel


def scan_estimate(table: str, pred: Predicate | None, catalog: Catalog, annotate: bool = False) -> float:
    rows = catalog.table(table).row_count
    if pred is None:
        return float(rows)
    return rows * estimate_selectivity(pred, catalog, annotate)


def join_estimate(join, left_tables, left_card: float, right_card: float, catalog: Catalog) -> float:
    """FK=PK join size under containment.

    Each surviving row of the referencing side matches one parent row, which
    survives with the parent side's filter selectivity.
    """
    if join.child_table in left_tables:
        child_card, parent_card = left_card, right_card
    else:
        child_card, parent_card = right_card, left_card
    parent_rows = catalog.table(join.parent_table).row_count
    if parent_rows == 0:
        return 0.0
    return child_card * min(parent_card / parent_rows, 1.0)


def estimate_plan_cardinalities(plan, catalog: Catalog):
    """Fill ``est_card`` (and predicate ``est_sel``) on every operator, in place."""
    def visit(node) -> float:
        if node.op in ("SeqScan", "IndexScan"):
            card = scan_estimate(node.table, node.predicate, catalog, annotate=True)
        elif node.op == "HashJoin":
            left, right = node.children
            lc, rc = visit(left), visit(right)
            card = join_estimate(node.join, set(left.tables), lc, rc, catalog)
        elif node.op == "Aggregate":
            visit(node.children[0])
            card = 1.0
        else:
            raise ValueError(f"unknown operator {node.op!r}")
        node.est_card = card
        return card

    visit(plan.root)
    return plan


def exact_cardinalities(plan, exec_result):
    """Copy of ``plan`` whose estimate slots hold the executed actuals."""
    if exec_result is None:
        raise ExecutionError("exact cardinalities need an execution result")
    out = plan.copy()
    for node in out.ops():
        if node.op_id not in exec_result.actual_cards:
            raise ExecutionError(f"operator {node.op_id} was not executed")
        node.act_card = exec_result.actual_cards[node.op_id]
        node.est_card = float(node.act_card)
        if node.predicate is not None:
            sels = exec_result.actual_sels[node.op_id]
            for p, s in zip(node.predicate.walk(), sels):
                p.act_sel = s
                p.est_sel = s
    return out
