"""Rule-based physical planning, analytic optimizer cost and What-If plans."""
from __future__ import annotations

import math

from .cardest import estimate_plan_cardinalities, estimate_selectivity, join_estimate, scan_estimate
from .errors import PlanError
from .plan import PhysicalPlan, PlanNode
from .relcore import Catalog, IndexDef
from .workload import QuerySpec

INDEX_SELECTIVITY_THRESHOLD = 0.05


def _index_keys(indexes) -> set[tuple[str, str]]:
    keys = set()
    for d in indexes or ():
        keys.add(d.key() if isinstance(d, IndexDef) else tuple(d))
    return keys


def probe_candidates(pred):
    """Equality leaves whose rows can be fetched through an index.

    Only a root leaf or a direct conjunct of a root AND qualifies, since the
    probe must imply the whole filter. Yields (walk position, leaf).
    """
    if pred is None:
        return []
    nodes = list(pred.walk())
    if pred.is_leaf:
        return [(0, pred)] if pred.op == "=" else []
    if pred.op != "AND":
        return []
    pos = {id(n): i for i, n in enumerate(nodes)}
    return [(pos[id(c)], c) for c in pred.children if c.is_leaf and c.op == "="]


def _scan(table: str, pred, catalog: Catalog, index_keys) -> PlanNode:
    best = None
    for pos, leaf in probe_candidates(pred):
        if (table, leaf.column) not in index_keys:
            continue
        sel = estimate_selectivity(leaf, catalog)
        if sel < INDEX_SELECTIVITY_THRESHOLD and (best is None or sel < best[0]):
            best = (sel, pos, leaf)
    if best is None:
        return PlanNode("SeqScan", table=table, predicate=pred)
    _, pos, leaf = best
    return PlanNode("IndexScan", table=table, predicate=pred, index=IndexDef(table, leaf.column), probe=pos)


def plan(q: QuerySpec, catalog: Catalog, indexes=()) -> PhysicalPlan:
    """Greedy left-deep hash-join plan with an Aggregate root."""
    keys = _index_keys(indexes)
    scans, cards = {}, {}
    for t in q.tables:
        pred = q.filters[t].copy() if t in q.filters else None
        scans[t] = _scan(t, pred, catalog, keys)
        cards[t] = scan_estimate(t, pred, catalog)

    start = min(q.tables, key=lambda t: (cards[t], t))
    current, current_card, joined = scans[start], cards[start], {start}
    while len(joined) < len(q.tables):
        options = []
        for j in q.joins:
            if (j.child_table in joined) == (j.parent_table in joined):
                continue
            other = j.parent_table if j.child_table in joined else j.child_table
            est = join_estimate(j, joined, current_card, cards[other], catalog)
            options.append((est, other, j))
        if not options:
            raise PlanError(f"query {q.qid}: join graph is not connected")
        est, other, j = min(options, key=lambda o: (o[0], o[1]))
        build = 1 if cards[other] < current_card else 0
        current = PlanNode("HashJoin", children=[current, scans[other]], join=j, build=build)
        current_card = est
        joined.add(other)

    root = PlanNode("Aggregate", children=[current], aggregates=list(q.aggregates))
    p = PhysicalPlan(root, qid=q.qid)
    estimate_plan_cardinalities(p, catalog)
    analytic_cost(p, catalog)
    return p


def op_analytic_cost(node: PlanNode, catalog: Catalog) -> float:
    if node.est_card is None or any(c.est_card is None for c in node.children):
        raise PlanError(f"operator {node.op_id} ({node.op}) lacks cardinality estimates")
    if node.op == "SeqScan":
        ts = catalog.table(node.table)
        return ts.page_count + 0.01 * ts.row_count
    if node.op == "IndexScan":
        rows = catalog.table(node.table).row_count
        leaf = node.probe_leaf
        if leaf.est_sel is None:
            raise PlanError(f"operator {node.op_id}: probe predicate lacks a selectivity estimate")
        return math.log2(max(rows, 1)) + rows * leaf.est_sel * 1.01
    if node.op == "HashJoin":
        build = node.children[node.build].est_card
        probe = node.children[1 - node.build].est_card
        return 1.5 * build + probe + 0.1 * node.est_card
    if node.op == "Aggregate":
        return 0.05 * node.children[0].est_card
    raise PlanError(f"unknown operator {node.op!r}")


def analytic_cost(p: PhysicalPlan, catalog: Catalog) -> float:
    """Textbook optimizer cost: sum of per-operator terms, stored on each node."""
    total = 0.0
    for node in p.ops():
        node.analytic_cost = op_analytic_cost(node, catalog)
        total += node.analytic_cost
    return total


def total_analytic_cost(p: PhysicalPlan) -> float:
    return sum(n.analytic_cost for n in p.ops())


def hypothetical_plan(q: QuerySpec, catalog: Catalog, hypothetical, existing=()) -> PhysicalPlan:
    """Plan as if the ``hypothetical`` indexes existed next to ``existing`` ones."""
    hyp = list(hypothetical)
    for d in hyp:
        catalog.column(d.table, d.column)
    p = plan(q, catalog, list(existing) + hyp)
    if hyp:
        p.hypothetical = True
        p.hypothetical_indexes = sorted(hyp, key=lambda d: d.key())
    return p
