"""In-memory relational storage: columns, tables, databases and indexes."""
from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace

import numpy as np

from ..errors import ConfigurationError, SchemaError

PAGE_SIZE = 8192


class DataType(str, enum.Enum):
    INT = "int"
    FLOAT = "float"
    CATEGORICAL = "categorical"

    @property
    def width(self) -> int:
        # categoricals are stored as 32-bit dictionary codes
        return 4 if self is DataType.CATEGORICAL else 8

    @property
    def is_numeric(self) -> bool:
        return self is not DataType.CATEGORICAL


@dataclass(frozen=True)
class IndexDef:
    table: str
    column: str
    unique: bool = False

    def key(self) -> tuple[str, str]:
        return (self.table, self.column)

    def __str__(self) -> str:
        return f"{self.table}.{self.column}"


@dataclass(frozen=True)
class ForeignKey:
    """Edge child.column -> parent.key_column."""

    child_table: str
    child_column: str
    parent_table: str
    parent_column: str = "id"


@dataclass(eq=False)
class Column:
    name: str
    dtype: DataType
    values: np.ndarray
    nulls: np.ndarray | None = None
    dictionary: list[str] | None = None
    role: str = "attr"  # "key", "fk" or "attr"

    def __len__(self) -> int:
        return len(self.values)

    @property
    def valid(self) -> np.ndarray:
        if self.nulls is None:
            return np.ones(len(self.values), dtype=bool)
        return ~self.nulls

    def non_null_values(self) -> np.ndarray:
        if self.nulls is None:
            return self.values
        return self.values[~self.nulls]

    def encode_literal(self, literal):
        """Map a query literal onto the stored representation.

        Categorical literals become dictionary codes; a literal absent from
        the dictionary maps to -2, which never matches a stored code.
        """
        if self.dtype is DataType.CATEGORICAL:
            try:
                return self._code_of[literal]
            except KeyError:
                return -2
        return literal

    @property
    def _code_of(self) -> dict:
        cache = self.__dict__.get("_codes")
        if cache is None:
            cache = {v: i for i, v in enumerate(self.dictionary or [])}
            self.__dict__["_codes"] = cache
        return cache

    def python_value(self, row: int):
        """Value at ``row`` as a plain Python object (None for null)."""
        if self.nulls is not None and self.nulls[row]:
            return None
        v = self.values[row]
        if self.dtype is DataType.CATEGORICAL:
            return self.dictionary[int(v)]
        return v.item()


@dataclass(eq=False)
class Table:
    name: str
    columns: dict[str, Column]

    @property
    def row_count(self) -> int:
        if not self.columns:
            return 0
        return len(next(iter(self.columns.values())))

    @property
    def row_width(self) -> int:
        return sum(c.dtype.width for c in self.columns.values())

    def column(self, name: str) -> Column:
        try:
            return self.columns[name]
        except KeyError:
            raise SchemaError(f"unknown column {self.name}.{name}") from None


class Index:
    """Sorted (value -> row positions) lookup over one column."""

    def __init__(self, definition: IndexDef, column: Column):
        self.definition = definition
        self.column = column
        rows = np.flatnonzero(column.valid)
        order = np.argsort(column.values[rows], kind="stable")
        self.rows = rows[order]
        self.keys = column.values[self.rows]

    def lookup(self, value) -> np.ndarray:
        code = self.column.encode_literal(value)
        lo = np.searchsorted(self.keys, code, side="left")
        hi = np.searchsorted(self.keys, code, side="right")
        return np.sort(self.rows[lo:hi])


@dataclass(eq=False)
class Database:
    name: str
    seed: int
    tables: dict[str, Table]
    foreign_keys: list[ForeignKey] = field(default_factory=list)
    indexes: dict[tuple[str, str], Index] = field(default_factory=dict)

    def table(self, name: str) -> Table:
        try:
            return self.tables[name]
        except KeyError:
            raise SchemaError(f"unknown table {name!r} in database {self.name!r}") from None

    @property
    def index_defs(self) -> list[IndexDef]:
        return [ix.definition for _, ix in sorted(self.indexes.items())]

    def has_index(self, table: str, column: str) -> bool:
        return (table, column) in self.indexes

    def neighbors(self, table: str) -> list[tuple[str, ForeignKey]]:
        out = []
        for fk in self.foreign_keys:
            if fk.child_table == table:
                out.append((fk.parent_table, fk))
            elif fk.parent_table == table:
                out.append((fk.child_table, fk))
        return out

    def total_rows(self) -> int:
        return sum(t.row_count for t in self.tables.values())


def build_index(db: Database, definition: IndexDef) -> Database:
    """Return a copy of ``db`` with ``definition`` materialized.

    Column data is shared; only the index map differs. Re-adding an existing
    definition is a no-op.
    """
    column = db.table(definition.table).column(definition.column)
    if definition.key() in db.indexes:
        return db
    if definition.unique and len(np.unique(column.non_null_values())) != len(column.non_null_values()):
        raise ConfigurationError(f"unique index on non-unique column {definition}")
    indexes = dict(db.indexes)
    indexes[definition.key()] = Index(definition, column)
    return replace(db, indexes=indexes)


def drop_indexes(db: Database) -> Database:
    return replace(db, indexes={})
