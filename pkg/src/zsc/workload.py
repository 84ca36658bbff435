"""Random analytical queries and per-database index sets."""
from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any

import numpy as np

from .errors import ConfigurationError, SchemaError
from .relcore import Catalog, Database, DataType, IndexDef

CONNECTIVES = ("AND", "OR")
NUMERIC_OPS = ("=", "<", "<=", ">", ">=")
CATEGORICAL_OPS = ("=", "IN")
AGG_FUNCS = ("COUNT", "SUM", "AVG", "MIN", "MAX")
MAX_IN_LIST = 5


class WorkloadWarning(UserWarning):
    pass


@dataclass(eq=False)
class Predicate:
    """Node of a predicate tree: a connective or a comparison leaf.

    ``est_sel`` and ``act_sel`` are annotation slots filled by the estimator
    and the executor respectively; they are not part of query identity.
    """

    op: str
    table: str | None = None
    column: str | None = None
    literal: Any = None
    children: list["Predicate"] = field(default_factory=list)
    est_sel: float | None = None
    act_sel: float | None = None

    @property
    def is_leaf(self) -> bool:
        return self.op not in CONNECTIVES

    def walk(self):
        yield self
        for c in self.children:
            yield from c.walk()

    def leaves(self) -> list["Predicate"]:
        return [p for p in self.walk() if p.is_leaf]

    def depth(self) -> int:
        return 1 + max((c.depth() for c in self.children), default=0)

    def to_dict(self, annotations: bool = False) -> dict:
        if self.is_leaf:
            d = {"op": self.op, "table": self.table, "column": self.column, "literal": self.literal}
        else:
            d = {"op": self.op, "children": [c.to_dict(annotations) for c in self.children]}
        if annotations:
            d["est_sel"] = self.est_sel
            d["act_sel"] = self.act_sel
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Predicate":
        children = [cls.from_dict(c) for c in d.get("children", [])]
        return cls(d["op"], d.get("table"), d.get("column"), d.get("literal"), children,
                   d.get("est_sel"), d.get("act_sel"))

    def copy(self) -> "Predicate":
        return Predicate.from_dict(self.to_dict(annotations=True))

    def sql(self) -> str:
        if not self.is_leaf:
            return "(" + f" {self.op} ".join(c.sql() for c in self.children) + ")"
        ref = f"{self.table}.{self.column}"
        if self.op == "IN":
            return f"{ref} IN ({', '.join(_sql_lit(v) for v in self.literal)})"
        return f"{ref} {self.op} {_sql_lit(self.literal)}"


def _sql_lit(v) -> str:
    return f"'{v}'" if isinstance(v, str) else repr(v)


@dataclass(frozen=True)
class Join:
    child_table: str
    child_column: str
    parent_table: str
    parent_column: str = "id"

    def sql(self) -> str:
        return f"{self.child_table}.{self.child_column} = {self.parent_table}.{self.parent_column}"


@dataclass(frozen=True)
class Aggregate:
    func: str
    table: str | None = None
    column: str | None = None

    def sql(self) -> str:
        if self.column is None:
            return f"{self.func}(*)"
        return f"{self.func}({self.table}.{self.column})"


@dataclass(eq=False)
class QuerySpec:
    qid: int
    tables: list[str]
    joins: list[Join]
    filters: dict[str, Predicate]
    aggregates: list[Aggregate]

    @property
    def join_size(self) -> int:
        return len(self.tables)

    def leaf_count(self) -> int:
        return sum(len(p.leaves()) for p in self.filters.values())

    def to_dict(self) -> dict:
        return {
            "qid": self.qid,
            "tables": list(self.tables),
            "joins": [[j.child_table, j.child_column, j.parent_table, j.parent_column] for j in self.joins],
            "filters": {t: p.to_dict() for t, p in sorted(self.filters.items())},
            "aggregates": [[a.func, a.table, a.column] for a in self.aggregates],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "QuerySpec":
        return cls(d["qid"], list(d["tables"]), [Join(*j) for j in d["joins"]],
                   {t: Predicate.from_dict(p) for t, p in d["filters"].items()},
                   [Aggregate(*a) for a in d["aggregates"]])

    def sql(self) -> str:
        conds = [j.sql() for j in self.joins] + [p.sql() for _, p in sorted(self.filters.items())]
        where = f" WHERE {' AND '.join(conds)}" if conds else ""
        aggs = ", ".join(a.sql() for a in self.aggregates)
        return f"SELECT {aggs} FROM {', '.join(self.tables)}{where};"

    def validate(self, db: Database | None = None) -> "QuerySpec":
        if not self.tables:
            raise ConfigurationError(f"query {self.qid}: no tables")
        if len(self.joins) != len(self.tables) - 1:
            raise ConfigurationError(f"query {self.qid}: join graph must be a tree")
        reached = {self.tables[0]}
        changed = True
        while changed:
            changed = False
            for j in self.joins:
                a, b = j.child_table, j.parent_table
                if (a in reached) != (b in reached):
                    reached |= {a, b}
                    changed = True
        if reached != set(self.tables):
            raise ConfigurationError(f"query {self.qid}: join graph not connected")
        if not 1 <= len(self.aggregates) <= 3:
            raise ConfigurationError(f"query {self.qid}: needs 1-3 aggregates")
        for t, p in self.filters.items():
            if t not in self.tables:
                raise ConfigurationError(f"query {self.qid}: filter on unjoined table {t}")
            if p.depth() > 3 or not 1 <= len(p.leaves()) <= 5:
                raise ConfigurationError(f"query {self.qid}: predicate tree shape out of bounds")
        if self.leaf_count() > 5:
            raise ConfigurationError(f"query {self.qid}: more than five predicate leaves")
        if db is not None:
            for t, p in self.filters.items():
                for leaf in p.leaves():
                    db.table(leaf.table).column(leaf.column)
        return self


@dataclass
class WorkloadConfig:
    count: int = 5000
    max_join: int = 5
    predicates: tuple[int, int] = (0, 5)
    aggregates: tuple[int, int] = (1, 3)
    seed: int = 0
    data_literal_prob: float = 0.7

    def validate(self) -> "WorkloadConfig":
        if self.count < 0:
            raise ConfigurationError("count must be non-negative")
        if not 1 <= self.max_join <= 5:
            raise ConfigurationError("max_join must lie in [1, 5]")
        lo, hi = self.predicates
        if not 0 <= lo <= hi <= 5:
            raise ConfigurationError("predicates range must lie within [0, 5]")
        lo, hi = self.aggregates
        if not 1 <= lo <= hi <= 3:
            raise ConfigurationError("aggregates range must lie within [1, 3]")
        return self

    @classmethod
    def from_dict(cls, data: dict) -> "WorkloadConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known - {"version"}
        if unknown:
            raise ConfigurationError(f"unknown WorkloadConfig keys: {sorted(unknown)}")
        kw = {k: tuple(v) if isinstance(v, list) else v for k, v in data.items() if k != "version"}
        return cls(**kw).validate()


def filter_columns(db: Database, catalog: Catalog, table: str) -> list[str]:
    """Columns a predicate may reference: everything but the key, with data."""
    out = []
    for cname, col in db.table(table).columns.items():
        if col.role != "key" and catalog.column(table, cname).ndv > 0:
            out.append(cname)
    return out


class _Generator:
    def __init__(self, db: Database, catalog: Catalog, cfg: WorkloadConfig):
        self.db = db
        self.catalog = catalog
        self.cfg = cfg
        self.rng = np.random.default_rng(cfg.seed)
        self.table_names = list(db.tables)
        self.eligible = {t: filter_columns(db, catalog, t) for t in self.table_names}
        self.valid_rows = {}

    def _rows(self, table, column):
        key = (table, column)
        if key not in self.valid_rows:
            self.valid_rows[key] = np.flatnonzero(self.db.table(table).column(column).valid)
        return self.valid_rows[key]

    def join_tree(self, size: int) -> tuple[list[str], list[Join]]:
        rng = self.rng
        start = self.table_names[rng.integers(len(self.table_names))]
        chosen = [start]
        joins = []
        while len(chosen) < size:
            frontier = []
            for t in chosen:
                for other, fk in self.db.neighbors(t):
                    if other not in chosen:
                        frontier.append((other, fk))
            frontier.sort(key=lambda x: (x[0], x[1].child_column))
            other, fk = frontier[rng.integers(len(frontier))]
            chosen.append(other)
            joins.append(Join(fk.child_table, fk.child_column, fk.parent_table, fk.parent_column))
        joins.sort(key=lambda j: (j.child_table, j.child_column))
        return sorted(chosen), joins

    def literal(self, table, column):
        rng = self.rng
        col = self.db.table(table).column(column)
        stats = self.catalog.column(table, column)
        from_data = rng.random() < self.cfg.data_literal_prob
        if col.dtype is DataType.CATEGORICAL:
            if from_data:
                rows = self._rows(table, column)
                return col.dictionary[int(col.values[rows[rng.integers(len(rows))]])]
            return col.dictionary[rng.integers(len(col.dictionary))]
        if from_data:
            rows = self._rows(table, column)
            return col.values[rows[rng.integers(len(rows))]].item()
        if col.dtype is DataType.INT:
            return int(rng.integers(int(stats.min), int(stats.max) + 1))
        return round(float(rng.uniform(stats.min, stats.max)), 2)

    def leaf(self, table) -> Predicate:
        rng = self.rng
        cols = self.eligible[table]
        column = cols[rng.integers(len(cols))]
        col = self.db.table(table).column(column)
        if col.dtype is DataType.CATEGORICAL:
            ndv = self.catalog.column(table, column).ndv
            if ndv >= 2 and rng.random() < 0.4:
                k = int(rng.integers(2, min(MAX_IN_LIST, ndv) + 1))
                vals: list = []
                for _ in range(4 * k):
                    v = self.literal(table, column)
                    if v not in vals:
                        vals.append(v)
                    if len(vals) == k:
                        break
                if len(vals) < k:  # heavy skew: top up from the dictionary
                    rest = [v for v in col.dictionary if v not in vals]
                    vals += [rest[i] for i in rng.permutation(len(rest))[:k - len(vals)]]
                return Predicate("IN", table, column, sorted(vals))
            return Predicate("=", table, column, self.literal(table, column))
        op = NUMERIC_OPS[rng.integers(len(NUMERIC_OPS))]
        return Predicate(op, table, column, self.literal(table, column))

    def tree(self, table, n_leaves: int) -> Predicate:
        rng = self.rng
        leaves = [self.leaf(table) for _ in range(n_leaves)]
        if n_leaves == 1:
            return leaves[0]
        root_op = "AND" if rng.random() < 0.7 else "OR"
        if n_leaves >= 3 and rng.random() < 0.4:
            g = int(rng.integers(2, n_leaves))
            sub_op = "OR" if root_op == "AND" else "AND"
            sub = Predicate(sub_op, children=leaves[:g])
            children = [sub] + leaves[g:]
            order = rng.permutation(len(children))
            return Predicate(root_op, children=[children[i] for i in order])
        return Predicate(root_op, children=leaves)

    def query(self, qid: int, max_join: int) -> QuerySpec:
        rng = self.rng
        size = int(rng.integers(1, max_join + 1))
        tables, joins = self.join_tree(size)
        filterable = [t for t in tables if self.eligible[t]]
        n_leaves = int(rng.integers(self.cfg.predicates[0], self.cfg.predicates[1] + 1))
        per_table: dict[str, int] = {}
        if filterable:
            for _ in range(n_leaves):
                t = filterable[rng.integers(len(filterable))]
                per_table[t] = per_table.get(t, 0) + 1
        filters = {t: self.tree(t, n) for t, n in sorted(per_table.items())}
        numeric = [(t, c) for t in tables for c, col in self.db.table(t).columns.items()
                   if col.role == "attr" and col.dtype.is_numeric and self.catalog.column(t, c).ndv > 0]
        aggs = []
        for _ in range(int(rng.integers(self.cfg.aggregates[0], self.cfg.aggregates[1] + 1))):
            func = AGG_FUNCS[rng.integers(len(AGG_FUNCS))]
            if func == "COUNT" or not numeric:
                aggs.append(Aggregate("COUNT"))
            else:
                t, c = numeric[rng.integers(len(numeric))]
                aggs.append(Aggregate(func, t, c))
        return QuerySpec(qid, tables, joins, filters, aggs)


def generate_workload(db: Database, catalog: Catalog, cfg: WorkloadConfig) -> list[QuerySpec]:
    """``cfg.count`` random aggregation queries; deterministic in (db, cfg)."""
    cfg.validate()
    gen = _Generator(db, catalog, cfg)
    max_join = cfg.max_join
    if max_join > len(db.tables):
        warnings.warn(f"max join size {max_join} exceeds the {len(db.tables)} tables of "
                      f"{db.name}; clamped", WorkloadWarning, stacklevel=2)
        max_join = len(db.tables)
    return [gen.query(i, max_join) for i in range(cfg.count)]


def index_candidates(db: Database) -> list[tuple[str, str]]:
    """FK and filter-eligible columns, i.e. every non-key column."""
    return [(t, c) for t, table in db.tables.items() for c, col in table.columns.items() if col.role != "key"]


def generate_index_set(db: Database, k: int, seed: int) -> list[IndexDef]:
    pool = index_candidates(db)
    if k < 0 or k > len(pool):
        raise ConfigurationError(f"cannot pick {k} indexes from a pool of {len(pool)} columns")
    rng = np.random.default_rng(seed)
    picks = rng.choice(len(pool), size=k, replace=False) if k else []
    return sorted((IndexDef(*pool[i]) for i in picks), key=lambda d: d.key())


def save_workload(queries: list[QuerySpec], path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w") as fh:
        for q in queries:
            fh.write(json.dumps(q.to_dict(), sort_keys=True) + "\n")
    path.with_suffix(".sql").write_text("".join(f"-- q{q.qid}\n{q.sql()}\n" for q in queries))
    return path


def load_workload(path) -> list[QuerySpec]:
    out = []
    with Path(path).open() as fh:
        for line in fh:
            if line.strip():
                out.append(QuerySpec.from_dict(json.loads(line)))
    return out


def load_index_defs(path) -> list[IndexDef]:
    """Index file: one ``table.column`` per line."""
    out = []
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if line and not line.startswith("#"):
            t, _, c = line.partition(".")
            if not c:
                raise SchemaError(f"bad index reference {line!r}")
            out.append(IndexDef(t, c))
    return out
