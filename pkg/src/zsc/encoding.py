"""Plans as heterogeneous DAGs with transferable node features.

Node ids are assigned in a depth-first walk from the root plan operator, so
they depend only on plan structure, never on names. Every edge points from a
child towards the root.
"""
from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .errors import PlanError
from .plan import OP_KINDS, PhysicalPlan, PlanNode
from .relcore import Catalog, DataType
from .workload import AGG_FUNCS

GRAPH_FORMAT = "graph_v1"
FEATURE_SCHEMA = "features_v1"
PRED_KINDS = ("AND", "OR", "=", "<", "<=", ">", ">=", "IN")
DTYPES = (DataType.INT, DataType.FLOAT, DataType.CATEGORICAL)
MIN_SELECTIVITY = 1e-6
MODES = ("exact", "estimated")


class NodeType(enum.IntEnum):
    PLAN_OP = 0
    TABLE = 1
    COLUMN = 2
    PREDICATE = 3
    AGGREGATION = 4


TRANSFERABLE_DIMS = {
    NodeType.PLAN_OP: len(OP_KINDS) + 2,
    NodeType.TABLE: 2,
    NodeType.COLUMN: len(DTYPES) + 3,
    NodeType.PREDICATE: len(PRED_KINDS) + 2,
    NodeType.AGGREGATION: len(AGG_FUNCS),
}


def _onehot(n: int, i: int) -> list[float]:
    v = [0.0] * n
    v[i] = 1.0
    return v


def log_card(card: float) -> float:
    return math.log1p(max(float(card), 1.0))


def log_sel(sel: float) -> float:
    return math.log(max(float(sel), MIN_SELECTIVITY))


@dataclass(eq=False)
class QueryGraph:
    node_types: np.ndarray
    features: list[np.ndarray]
    edges: np.ndarray  # (E, 2) rows of (child, parent)
    root: int = 0
    schema: str = FEATURE_SCHEMA
    dims: tuple[int, ...] = tuple(TRANSFERABLE_DIMS[t] for t in NodeType)

    @property
    def n_nodes(self) -> int:
        return len(self.node_types)

    def heights(self) -> np.ndarray:
        """Longest path down to a leaf; raises on cycles."""
        n = self.n_nodes
        children = [[] for _ in range(n)]
        for c, p in self.edges:
            children[p].append(c)
        h = np.full(n, -1, dtype=np.int64)
        state = np.zeros(n, dtype=np.int8)
        for start in range(n):
            if state[start]:
                continue
            stack = [(start, 0)]
            while stack:
                v, i = stack.pop()
                if i == 0:
                    if state[v] == 1:
                        raise PlanError("query graph contains a cycle")
                    if state[v] == 2:
                        continue
                    state[v] = 1
                if i < len(children[v]):
                    stack.append((v, i + 1))
                    c = children[v][i]
                    if state[c] == 1:
                        raise PlanError("query graph contains a cycle")
                    if state[c] == 0:
                        stack.append((c, 0))
                else:
                    h[v] = 1 + max((h[c] for c in children[v]), default=-1)
                    state[v] = 2
        return h

    def reaches_root(self) -> bool:
        seen = {self.root}
        frontier = [self.root]
        child_of = [[] for _ in range(self.n_nodes)]
        for c, p in self.edges:
            child_of[p].append(c)
        while frontier:
            v = frontier.pop()
            for c in child_of[v]:
                if c not in seen:
                    seen.add(c)
                    frontier.append(c)
        return len(seen) == self.n_nodes

    def to_dict(self) -> dict:
        return {
            "format": GRAPH_FORMAT,
            "schema": self.schema,
            "dims": list(self.dims),
            "root": int(self.root),
            "nodes": [[i, NodeType(int(t)).name, [float(x) for x in f]]
                      for i, (t, f) in enumerate(zip(self.node_types, self.features))],
            "edges": [[int(c), int(p)] for c, p in self.edges],
        }

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), separators=(",", ":"))

    @classmethod
    def from_dict(cls, d: dict) -> "QueryGraph":
        if d.get("format") != GRAPH_FORMAT:
            raise PlanError(f"expected {GRAPH_FORMAT}, got {d.get('format')!r}")
        types = np.array([NodeType[n[1]] for n in d["nodes"]], dtype=np.int64)
        feats = [np.asarray(n[2], dtype=float) for n in d["nodes"]]
        edges = np.asarray(d["edges"], dtype=np.int64).reshape(-1, 2)
        return cls(types, feats, edges, d["root"], d["schema"], tuple(d["dims"]))


class _Builder:
    def __init__(self, catalog: Catalog, mode: str, table_features=None, column_features=None):
        if mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
        self.catalog = catalog
        self.mode = mode
        self.types: list[int] = []
        self.feats: list[list[float]] = []
        self.edges: list[tuple[int, int]] = []
        self.column_ids: dict[tuple[str, str], int] = {}
        self.table_features = table_features or self._table_features
        self.column_features = column_features or self._column_features

    def node(self, t: NodeType, f) -> int:
        self.types.append(int(t))
        self.feats.append(f)
        return len(self.types) - 1

    def card(self, node: PlanNode) -> float:
        c = node.act_card if self.mode == "exact" else node.est_card
        if c is None:
            raise PlanError(f"operator {node.op_id} has no {self.mode} cardinality")
        return c

    def sel(self, pred) -> float:
        s = pred.act_sel if self.mode == "exact" else pred.est_sel
        if s is None:
            raise PlanError(f"predicate on {pred.table}.{pred.column} has no {self.mode} selectivity")
        return s

    def _table_features(self, table: str) -> list[float]:
        ts = self.catalog.table(table)
        return [math.log1p(ts.row_count), math.log1p(ts.page_count)]

    def _column_features(self, table: str, column: str) -> list[float]:
        cs = self.catalog.column(table, column)
        return _onehot(len(DTYPES), DTYPES.index(cs.datatype)) + [
            math.log1p(cs.ndv), float(cs.null_frac), cs.width_bytes / 64.0]

    def column(self, table: str, column: str) -> int:
        key = (table, column)
        if key not in self.column_ids:
            self.column_ids[key] = self.node(NodeType.COLUMN, self.column_features(table, column))
        return self.column_ids[key]

    def predicate(self, pred, parent: int):
        extra = len(pred.literal) / 5.0 if pred.op == "IN" else 0.0
        f = _onehot(len(PRED_KINDS), PRED_KINDS.index(pred.op)) + [log_sel(self.sel(pred)), extra]
        pid = self.node(NodeType.PREDICATE, f)
        self.edges.append((pid, parent))
        if pred.is_leaf:
            self.edges.append((self.column(pred.table, pred.column), pid))
        for c in pred.children:
            self.predicate(c, pid)

    def plan_op(self, node: PlanNode, parent: int | None):
        in_card = sum(self.card(c) for c in node.children)
        f = _onehot(len(OP_KINDS), OP_KINDS.index(node.op)) + [log_card(in_card), log_card(self.card(node))]
        nid = self.node(NodeType.PLAN_OP, f)
        if parent is not None:
            self.edges.append((nid, parent))
        for a in node.aggregates:
            aid = self.node(NodeType.AGGREGATION, _onehot(len(AGG_FUNCS), AGG_FUNCS.index(a.func)))
            self.edges.append((aid, nid))
            if a.column is not None:
                self.edges.append((self.column(a.table, a.column), aid))
        if node.table is not None:
            tid = self.node(NodeType.TABLE, self.table_features(node.table))
            self.edges.append((tid, nid))
        if node.predicate is not None:
            self.predicate(node.predicate, nid)
        for c in node.children:
            self.plan_op(c, nid)

    def build(self, plan: PhysicalPlan, schema: str, dims) -> QueryGraph:
        self.plan_op(plan.root, None)
        edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        feats = [np.asarray(f, dtype=float) for f in self.feats]
        return QueryGraph(np.asarray(self.types, dtype=np.int64), feats, edges, 0, schema, tuple(dims))


def encode(plan: PhysicalPlan, catalog: Catalog, mode: str = "exact") -> QueryGraph:
    """Transferable query graph; ``mode`` picks actual or estimated cardinalities."""
    dims = tuple(TRANSFERABLE_DIMS[t] for t in NodeType)
    return _Builder(catalog, mode).build(plan, FEATURE_SCHEMA, dims)


class OneHotRegistry:
    """Global positions for every table and column seen in training databases."""

    def __init__(self, tables=(), columns=()):
        self.tables = {k: i for i, k in enumerate(sorted(tables))}
        self.columns = {k: i for i, k in enumerate(sorted(columns))}
        self._cache: dict = {}

    @classmethod
    def from_catalogs(cls, catalogs) -> "OneHotRegistry":
        tables, columns = set(), set()
        for cat in catalogs:
            tables |= {(cat.database, t) for t in cat.tables}
            columns |= {(cat.database, t, c) for (t, c) in cat.columns}
        return cls(tables, columns)

    @property
    def schema(self) -> str:
        return f"{FEATURE_SCHEMA}+onehot(T={len(self.tables)},C={len(self.columns)})"

    def dims(self) -> tuple[int, ...]:
        d = dict(TRANSFERABLE_DIMS)
        d[NodeType.TABLE] = max(len(self.tables), 1)
        d[NodeType.COLUMN] = max(len(self.columns), 1)
        return tuple(d[t] for t in NodeType)

    def _vector(self, positions: dict, key) -> np.ndarray:
        # shared read-only arrays keep wide one-hot graphs from duplicating memory
        ck = (id(positions), key)
        if ck not in self._cache:
            v = np.zeros(max(len(positions), 1))
            i = positions.get(key)
            if i is not None:
                v[i] = 1.0
            v.flags.writeable = False
            self._cache[ck] = v
        return self._cache[ck]

    def table_vector(self, database: str, table: str) -> np.ndarray:
        return self._vector(self.tables, (database, table))

    def column_vector(self, database: str, table: str, column: str) -> np.ndarray:
        return self._vector(self.columns, (database, table, column))

    def to_dict(self) -> dict:
        return {"tables": [list(k) for k in self.tables], "columns": [list(k) for k in self.columns]}


def encode_onehot_ablation(plan: PhysicalPlan, catalog: Catalog, registry: OneHotRegistry,
                           mode: str = "exact") -> QueryGraph:
    """Non-transferable variant: tables and columns become registry one-hots.

    Tables of databases outside the registry encode as all zeros.
    """
    db = catalog.database
    b = _Builder(catalog, mode,
                 table_features=lambda t: registry.table_vector(db, t),
                 column_features=lambda t, c: registry.column_vector(db, t, c))
    return b.build(plan, registry.schema, registry.dims())


class PlanGraphEncoder(BaseEstimator, TransformerMixin):
    """Transformer from ``(plan, catalog)`` pairs to query graphs.

    With ``encoding="onehot"``, ``fit`` records the tables and columns of the
    training catalogs; the transferable encoding needs no fitting.
    """

    def __init__(self, mode="exact", encoding="transferable"):
        self.mode = mode
        self.encoding = encoding

    def fit(self, X, y=None):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.encoding == "onehot":
            catalogs = {id(cat): cat for _, cat in X}
            self.registry_ = OneHotRegistry.from_catalogs(catalogs.values())
        elif self.encoding == "transferable":
            self.registry_ = None
        else:
            raise ValueError(f"unknown encoding {self.encoding!r}")
        return self

    def transform(self, X):
        check_is_fitted(self, "registry_")
        if self.encoding == "onehot":
            return [encode_onehot_ablation(p, cat, self.registry_, self.mode) for p, cat in X]
        return [encode(p, cat, self.mode) for p, cat in X]
