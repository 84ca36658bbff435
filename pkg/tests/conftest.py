import numpy as np
import pytest

from zsc.relcore import Column, DataType, Database, ForeignKey, GenConfig, Table, compute_statistics, generate_database
from zsc.workload import WorkloadConfig, generate_workload

SMALL = GenConfig(table_count=(3, 5), rows=(40, 400), columns=(2, 4))
TINY = GenConfig(table_count=(2, 4), rows=(5, 30), columns=(1, 3))


@pytest.fixture(scope="session")
def small_db():
    return generate_database(SMALL, 7, "small")


@pytest.fixture(scope="session")
def small_catalog(small_db):
    return compute_statistics(small_db)


@pytest.fixture(scope="session")
def small_workload(small_db, small_catalog):
    return generate_workload(small_db, small_catalog, WorkloadConfig(count=150, seed=3))


def make_chain_db(name="chain", seed=0):
    """Hand-built three-table chain a -> b -> c (a references b, b references c)."""
    def col(n, dt, vals, **kw):
        return Column(n, dt, np.asarray(vals), **kw)

    a = Table("a", {
        "id": col("id", DataType.INT, np.arange(6), role="key"),
        "b_id": col("b_id", DataType.INT, [0, 0, 1, 2, 2, 2], role="fk"),
        "x": col("x", DataType.INT, [1, 2, 3, 4, 5, 6]),
    })
    b = Table("b", {
        "id": col("id", DataType.INT, np.arange(3), role="key"),
        "c_id": col("c_id", DataType.INT, [0, 1, 1], role="fk"),
        "y": col("y", DataType.FLOAT, [0.5, 1.5, 2.5], nulls=np.array([False, False, True])),
    })
    c = Table("c", {
        "id": col("id", DataType.INT, np.arange(2), role="key"),
        "k": col("k", DataType.CATEGORICAL, np.array([0, 1], dtype=np.int32), dictionary=["p", "q"]),
    })
    fks = [ForeignKey("a", "b_id", "b", "id"), ForeignKey("b", "c_id", "c", "id")]
    return Database(name, seed, {"a": a, "b": b, "c": c}, fks)


@pytest.fixture
def chain_db():
    return make_chain_db()
