import warnings

import numpy as np
import pytest
from hypothesis import example, given, settings, strategies as st

from zsc.errors import ConfigurationError
from zsc.relcore import Column, DataType, Database, GenConfig, Table, compute_statistics, generate_database
from zsc.workload import (QuerySpec, WorkloadConfig, WorkloadWarning, generate_index_set, generate_workload,
                          index_candidates, load_index_defs, load_workload, save_workload)

from conftest import SMALL


def _dicts(qs):
    return [q.to_dict() for q in qs]


def test_count_and_determinism(small_db, small_catalog):
    cfg = WorkloadConfig(count=300, seed=9)
    a = generate_workload(small_db, small_catalog, cfg)
    b = generate_workload(small_db, small_catalog, cfg)
    assert len(a) == 300
    assert _dicts(a) == _dicts(b)
    assert _dicts(a) != _dicts(generate_workload(small_db, small_catalog, WorkloadConfig(count=300, seed=10)))


def test_single_table_database_gives_single_table_queries():
    db = generate_database(GenConfig(table_count=(1, 1), rows=(50, 50)), 3)
    cat = compute_statistics(db)
    with pytest.warns(WorkloadWarning):
        qs = generate_workload(db, cat, WorkloadConfig(count=40, seed=1))
    assert all(q.join_size == 1 and not q.joins for q in qs)


@given(st.integers(0, 10_000))
@example(160)  # skewed categorical once produced a one-value IN list
@settings(max_examples=8, deadline=None)
def test_query_invariants(seed):
    db = generate_database(SMALL, seed)
    cat = compute_statistics(db)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", WorkloadWarning)
        qs = generate_workload(db, cat, WorkloadConfig(count=120, seed=seed))
    fk_edges = {(f.child_table, f.child_column, f.parent_table) for f in db.foreign_keys}
    for q in qs:
        q.validate(db)
        assert 1 <= q.join_size <= 5
        assert q.leaf_count() <= 5
        assert 1 <= len(q.aggregates) <= 3
        for j in q.joins:
            assert (j.child_table, j.child_column, j.parent_table) in fk_edges
        for t, pred in q.filters.items():
            assert pred.depth() <= 3
            for leaf in pred.leaves():
                col = db.table(leaf.table).column(leaf.column)
                cs = cat.column(leaf.table, leaf.column)
                assert col.role != "key"
                lits = leaf.literal if leaf.op == "IN" else [leaf.literal]
                if col.dtype is DataType.CATEGORICAL:
                    assert leaf.op in ("=", "IN")
                    assert all(v in col.dictionary for v in lits)
                    if leaf.op == "IN":
                        assert 2 <= len(lits) <= 5
                else:
                    assert leaf.op in ("=", "<", "<=", ">", ">=")
                    assert all(cs.min <= v <= cs.max for v in lits)
        for a in q.aggregates:
            if a.column is not None:
                assert db.table(a.table).column(a.column).dtype.is_numeric


def test_every_join_size_occurs():
    db = generate_database(GenConfig(table_count=(6, 6), rows=(50, 200)), 4)
    qs = generate_workload(db, compute_statistics(db), WorkloadConfig(count=5000, seed=0))
    assert {q.join_size for q in qs} == {1, 2, 3, 4, 5}


def test_literals_mix_data_and_domain_values(small_db, small_catalog):
    qs = generate_workload(small_db, small_catalog, WorkloadConfig(count=400, seed=2))
    in_data = off_data = 0
    for q in qs:
        for p in q.filters.values():
            for leaf in p.leaves():
                col = small_db.table(leaf.table).column(leaf.column)
                if col.dtype is DataType.CATEGORICAL:
                    continue
                present = leaf.literal in set(col.non_null_values().tolist())
                in_data += present
                off_data += not present
    assert in_data > off_data > 0


def test_config_validation():
    for bad in (dict(max_join=0), dict(max_join=6), dict(predicates=(0, 6)), dict(aggregates=(0, 2)),
                dict(count=-1)):
        with pytest.raises(ConfigurationError):
            WorkloadConfig(**bad).validate()
    with pytest.raises(ConfigurationError):
        WorkloadConfig.from_dict({"cnt": 1})
    assert WorkloadConfig.from_dict({"version": 1, "predicates": [1, 2]}).predicates == (1, 2)


def test_invalid_specs_rejected(small_workload):
    q = QuerySpec.from_dict(small_workload[0].to_dict())
    q.aggregates = []
    with pytest.raises(ConfigurationError):
        q.validate()
    multi = next(x for x in small_workload if x.joins)
    broken = QuerySpec.from_dict(multi.to_dict())
    broken.joins = []
    with pytest.raises(ConfigurationError):
        broken.validate()


def test_index_set_generation(small_db):
    pool = index_candidates(small_db)
    assert all(c != "id" for _, c in pool)
    assert generate_index_set(small_db, 0, 1) == []
    full = generate_index_set(small_db, len(pool), 1)
    assert sorted(d.key() for d in full) == sorted(pool)
    assert generate_index_set(small_db, 3, 5) == generate_index_set(small_db, 3, 5)
    assert len({d.key() for d in generate_index_set(small_db, 3, 5)}) == 3
    with pytest.raises(ConfigurationError):
        generate_index_set(small_db, len(pool) + 1, 0)


def test_workload_persistence(tmp_path, small_workload):
    path = save_workload(small_workload, tmp_path / "w.jsonl")
    assert _dicts(load_workload(path)) == _dicts(small_workload)
    sql = (tmp_path / "w.sql").read_text()
    assert sql.count("SELECT") == len(small_workload)


def test_index_file(tmp_path):
    p = tmp_path / "ix.txt"
    p.write_text("# comment\nt0.c1\n\nt1.t2_id\n")
    assert [d.key() for d in load_index_defs(p)] == [("t0", "c1"), ("t1", "t2_id")]
    p.write_text("nodot\n")
    with pytest.raises(KeyError):
        load_index_defs(p)


def test_table_without_filterable_columns_gets_no_filter():
    db = Database("k", 0, {"t": Table("t", {"id": Column("id", DataType.INT, np.arange(10), role="key")})})
    with pytest.warns(WorkloadWarning):
        qs = generate_workload(db, compute_statistics(db), WorkloadConfig(count=20, seed=0))
    assert all(not q.filters for q in qs)
    assert all(a.func == "COUNT" for q in qs for a in q.aggregates)
