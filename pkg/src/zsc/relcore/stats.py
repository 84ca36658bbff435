"""Catalog statistics: per-table sizes and per-column equi-depth histograms."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from ..errors import SchemaError
from .schema import PAGE_SIZE, DataType, Database


@dataclass
class Histogram:
    """Equi-depth histogram over non-null values.

    Bucket ``i`` covers ``[bounds[i], bounds[i+1])``; the last bucket is closed
    on the right. ``counts`` and ``ndv`` are exact per-bucket occupancies.
    """

    bounds: np.ndarray
    counts: np.ndarray
    ndv: np.ndarray
    kind: str = "equi-depth"

    @property
    def n_buckets(self) -> int:
        return len(self.counts)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def bucket_of(self, value) -> int:
        """Bucket holding ``value`` or -1 when outside the covered range."""
        if self.total == 0 or value < self.bounds[0] or value > self.bounds[-1]:
            return -1
        b = int(np.searchsorted(self.bounds, value, side="right")) - 1
        return min(b, self.n_buckets - 1)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "bucket_bounds": [_plain(v) for v in self.bounds],
            "bucket_counts": [int(v) for v in self.counts],
            "bucket_ndv": [int(v) for v in self.ndv],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Histogram":
        return cls(np.asarray(d["bucket_bounds"], dtype=float), np.asarray(d["bucket_counts"], dtype=np.int64),
                   np.asarray(d["bucket_ndv"], dtype=np.int64), d.get("kind", "equi-depth"))


def build_histogram(values: np.ndarray, buckets: int = 32) -> Histogram:
    values = np.sort(np.asarray(values, dtype=float))
    n = len(values)
    if n == 0:
        return Histogram(np.zeros(2), np.zeros(1, dtype=np.int64), np.zeros(1, dtype=np.int64))
    pos = np.minimum((np.arange(buckets + 1) * n) // buckets, n - 1)
    bounds = values[pos]
    bounds[-1] = values[-1]
    counts = np.empty(buckets, dtype=np.int64)
    ndv = np.empty(buckets, dtype=np.int64)
    for i in range(buckets):
        lo = np.searchsorted(values, bounds[i], side="left")
        side = "right" if i == buckets - 1 else "left"
        hi = np.searchsorted(values, bounds[i + 1], side=side)
        counts[i] = hi - lo
        seg = values[lo:hi]
        ndv[i] = 0 if len(seg) == 0 else 1 + int(np.count_nonzero(seg[1:] != seg[:-1]))
    return Histogram(bounds, counts, ndv)


@dataclass
class ColumnStats:
    datatype: DataType
    ndv: int
    null_frac: float
    min: float | None
    max: float | None
    width_bytes: float
    histogram: Histogram
    role: str = "attr"
    dictionary: list[str] | None = None

    def code_of(self, literal):
        """Histogram key of a literal; categorical literals map to codes (-2 if absent)."""
        if self.dictionary is None:
            return literal
        codes = self.__dict__.get("_codes")
        if codes is None:
            codes = self.__dict__["_codes"] = {v: i for i, v in enumerate(self.dictionary)}
        return codes.get(literal, -2)

    def to_dict(self) -> dict:
        return {
            "datatype": self.datatype.value,
            "ndv": self.ndv,
            "null_frac": self.null_frac,
            "min": _plain(self.min),
            "max": _plain(self.max),
            "width_bytes": self.width_bytes,
            "histogram": self.histogram.to_dict(),
            "role": self.role,
            "dictionary": self.dictionary,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ColumnStats":
        return cls(DataType(d["datatype"]), d["ndv"], d["null_frac"], d["min"], d["max"],
                   d["width_bytes"], Histogram.from_dict(d["histogram"]), d.get("role", "attr"), d.get("dictionary"))


@dataclass
class TableStats:
    row_count: int
    page_count: int
    row_width: int

    def to_dict(self) -> dict:
        return {"row_count": self.row_count, "page_count": self.page_count, "row_width": self.row_width}


def page_count(row_count: int, row_width: float) -> int:
    return max(1, math.ceil(row_count * row_width / PAGE_SIZE))


class Catalog:
    def __init__(self, database: str, tables: dict[str, TableStats], columns: dict[tuple[str, str], ColumnStats]):
        self.database = database
        self.tables = tables
        self.columns = columns

    def table(self, name: str) -> TableStats:
        try:
            return self.tables[name]
        except KeyError:
            raise SchemaError(f"no statistics for table {name!r}") from None

    def column(self, table: str, column: str) -> ColumnStats:
        try:
            return self.columns[(table, column)]
        except KeyError:
            raise SchemaError(f"no statistics for column {table}.{column}") from None

    def to_dict(self) -> dict:
        tables = {}
        for tname, ts in self.tables.items():
            d = ts.to_dict()
            d["columns"] = {c: s.to_dict() for (t, c), s in self.columns.items() if t == tname}
            tables[tname] = d
        return {"format": "catalog_v1", "database": self.database, "tables": tables}

    @classmethod
    def from_dict(cls, d: dict) -> "Catalog":
        tables, columns = {}, {}
        for tname, td in d["tables"].items():
            tables[tname] = TableStats(td["row_count"], td["page_count"], td["row_width"])
            for cname, cd in td["columns"].items():
                columns[(tname, cname)] = ColumnStats.from_dict(cd)
        return cls(d["database"], tables, columns)

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1)


def _plain(v):
    if v is None:
        return None
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.floating, float)):
        f = float(v)
        return int(f) if f.is_integer() else f
    return v


def column_stats(col, row_count: int, buckets: int = 32) -> ColumnStats:
    vals = col.non_null_values()
    n = len(vals)
    ndv = int(len(np.unique(vals))) if n else 0
    null_frac = 0.0 if row_count == 0 else float((row_count - n) / row_count)
    if col.dtype.is_numeric and n:
        lo, hi = vals.min().item(), vals.max().item()
    else:
        lo = hi = None
    return ColumnStats(col.dtype, ndv, null_frac, lo, hi, float(col.dtype.width),
                       build_histogram(vals, buckets), col.role,
                       list(col.dictionary) if col.dictionary is not None else None)


def compute_statistics(db: Database, buckets: int = 32) -> Catalog:
    tables, columns = {}, {}
    for tname, table in db.tables.items():
        n = table.row_count
        width = table.row_width
        tables[tname] = TableStats(n, page_count(n, width), width)
        for cname, col in table.columns.items():
            columns[(tname, cname)] = column_stats(col, n, buckets)
    return Catalog(db.name, tables, columns)
