"""Directory persistence for databases and catalogs.

Layout::

    <dir>/manifest.txt          key = value lines (name, seed, schema, FKs, indexes)
    <dir>/<table>.<column>.bin  little-endian fixed-width values
    <dir>/<table>.<column>.nulls.bin   packed null bitmap (only if nulls exist)
    <dir>/<table>.<column>.dict.json   dictionary for categorical codes
    <dir>/catalog.json          optional statistics
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..errors import SchemaError
from .schema import Column, DataType, Database, ForeignKey, IndexDef, Table, build_index
from .stats import Catalog

_DTYPES = {DataType.INT: "<i8", DataType.FLOAT: "<f8", DataType.CATEGORICAL: "<i4"}


def save_database(db: Database, path, catalog: Catalog | None = None) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    lines = ["format = database_v1", f"name = {db.name}", f"seed = {db.seed}"]
    for tname, table in db.tables.items():
        lines.append(f"table = {tname} rows={table.row_count}")
        for cname, col in table.columns.items():
            flag = " nulls" if col.nulls is not None else ""
            lines.append(f"column = {tname}.{cname} {col.dtype.value} {col.role}{flag}")
            col.values.astype(_DTYPES[col.dtype]).tofile(path / f"{tname}.{cname}.bin")
            if col.nulls is not None:
                np.packbits(col.nulls).tofile(path / f"{tname}.{cname}.nulls.bin")
            if col.dictionary is not None:
                (path / f"{tname}.{cname}.dict.json").write_text(json.dumps(col.dictionary))
    for fk in db.foreign_keys:
        lines.append(f"fk = {fk.child_table}.{fk.child_column} -> {fk.parent_table}.{fk.parent_column}")
    for d in db.index_defs:
        lines.append(f"index = {d.table}.{d.column} unique={int(d.unique)}")
    (path / "manifest.txt").write_text("\n".join(lines) + "\n")
    if catalog is not None:
        (path / "catalog.json").write_text(catalog.dumps())
    return path


def _split_ref(ref: str) -> tuple[str, str]:
    table, _, column = ref.partition(".")
    return table, column


def load_database(path) -> Database:
    path = Path(path)
    manifest = path / "manifest.txt"
    if not manifest.exists():
        raise FileNotFoundError(f"no database manifest in {path}")
    name, seed = None, 0
    order: list[str] = []
    rows: dict[str, int] = {}
    cols: dict[str, dict[str, Column]] = {}
    fks, index_defs = [], []
    for raw in manifest.read_text().splitlines():
        if not raw.strip():
            continue
        key, _, value = raw.partition(" = ")
        if key == "name":
            name = value
        elif key == "seed":
            seed = int(value)
        elif key == "table":
            tname, rows_kv = value.split()
            order.append(tname)
            rows[tname] = int(rows_kv.split("=")[1])
            cols[tname] = {}
        elif key == "column":
            parts = value.split()
            tname, cname = _split_ref(parts[0])
            dtype, role = DataType(parts[1]), parts[2]
            values = np.fromfile(path / f"{tname}.{cname}.bin", dtype=_DTYPES[dtype])
            values = values.astype(values.dtype.newbyteorder("="))
            nulls = None
            if "nulls" in parts[3:]:
                packed = np.fromfile(path / f"{tname}.{cname}.nulls.bin", dtype=np.uint8)
                nulls = np.unpackbits(packed, count=rows[tname]).astype(bool)
            dictionary = None
            if dtype is DataType.CATEGORICAL:
                dictionary = json.loads((path / f"{tname}.{cname}.dict.json").read_text())
            cols[tname][cname] = Column(cname, dtype, values, nulls, dictionary, role)
        elif key == "fk":
            left, right = value.split(" -> ")
            ct, cc = _split_ref(left)
            pt, pc = _split_ref(right)
            fks.append(ForeignKey(ct, cc, pt, pc))
        elif key == "index":
            ref, uniq = value.split()
            t, c = _split_ref(ref)
            index_defs.append(IndexDef(t, c, uniq.endswith("1")))
        elif key != "format":
            raise SchemaError(f"unrecognized manifest key {key!r}")
    if name is None:
        raise SchemaError("manifest lacks a database name")
    db = Database(name, seed, {t: Table(t, cols[t]) for t in order}, fks)
    for d in index_defs:
        db = build_index(db, d)
    return db


def load_catalog(path) -> Catalog | None:
    f = Path(path) / "catalog.json"
    if not f.exists():
        return None
    return Catalog.from_dict(json.loads(f.read_text()))
