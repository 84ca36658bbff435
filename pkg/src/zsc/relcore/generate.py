"""Synthetic snowflake-schema databases with controllable characteristics."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from ..errors import ConfigurationError
from .schema import Column, DataType, Database, ForeignKey, Table

DISTRIBUTIONS = ("uniform", "zipf", "normal")


@dataclass
class GenConfig:
    table_count: tuple[int, int] = (3, 7)
    rows: tuple[int, int] = (500, 30000)
    columns: tuple[int, int] = (2, 6)
    datatype_weights: dict = field(
        default_factory=lambda: {"int": 0.4, "float": 0.3, "categorical": 0.3})
    distribution_weights: dict = field(
        default_factory=lambda: {"uniform": 0.4, "zipf": 0.3, "normal": 0.3})
    zipf_s: tuple[float, float] = (0.5, 2.0)
    ndv_ratio: tuple[float, float] = (0.001, 1.0)
    categorical_ndv_cap: int = 2000
    null_frac: tuple[float, float] = (0.0, 0.2)
    null_column_prob: float = 0.3
    fk_fanout: tuple[float, float] = (1.0, 10.0)
    fk_zipf_prob: float = 0.5

    def validate(self) -> "GenConfig":
        for name in ("table_count", "rows", "columns", "zipf_s", "ndv_ratio", "null_frac", "fk_fanout"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ConfigurationError(f"{name}: empty range [{lo}, {hi}]")
        if self.table_count[0] < 1:
            raise ConfigurationError("table_count must allow at least one table")
        if self.rows[0] < 0 or self.columns[0] < 0:
            raise ConfigurationError("rows and columns ranges must be non-negative")
        if not 0 < self.ndv_ratio[0] <= self.ndv_ratio[1] <= 1:
            raise ConfigurationError(f"ndv_ratio must lie in (0, 1], got {self.ndv_ratio}")
        if not 0 <= self.null_frac[0] <= self.null_frac[1] < 1:
            raise ConfigurationError(f"null_frac must lie in [0, 1), got {self.null_frac}")
        if self.fk_fanout[0] <= 0:
            raise ConfigurationError("fk_fanout must be positive")
        if self.zipf_s[0] < 0:
            raise ConfigurationError("zipf_s must be non-negative")
        if self.categorical_ndv_cap < 1:
            raise ConfigurationError("categorical_ndv_cap must be >= 1")
        _check_weights("datatype_weights", self.datatype_weights, [d.value for d in DataType])
        _check_weights("distribution_weights", self.distribution_weights, DISTRIBUTIONS)
        return self

    @classmethod
    def from_dict(cls, data: dict) -> "GenConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known - {"version"}
        if unknown:
            raise ConfigurationError(f"unknown GenConfig keys: {sorted(unknown)}")
        kwargs = {}
        for k, v in data.items():
            if k == "version":
                continue
            kwargs[k] = tuple(v) if isinstance(v, list) else v
        return cls(**kwargs).validate()

    def to_dict(self) -> dict:
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(self).items()}


def _check_weights(name, weights, allowed):
    bad = set(weights) - set(allowed)
    if bad:
        raise ConfigurationError(f"{name}: unknown keys {sorted(bad)}")
    if any(w < 0 for w in weights.values()) or abs(sum(weights.values()) - 1.0) > 1e-9:
        raise ConfigurationError(f"{name} must be non-negative and sum to 1")


def _pick(rng, weights: dict) -> str:
    keys = sorted(weights)
    p = np.array([weights[k] for k in keys], dtype=float)
    return keys[rng.choice(len(keys), p=p / p.sum())]


def _log_uniform(rng, lo, hi) -> float:
    if lo == hi:
        return float(lo)
    lo_, hi_ = math.log(max(lo, 1e-12)), math.log(hi)
    return math.exp(rng.uniform(lo_, hi_))


def rank_probabilities(kind: str, ndv: int, s: float = 1.0) -> np.ndarray:
    """Probability of each of ``ndv`` value ranks under a distribution kind."""
    k = np.arange(ndv, dtype=float)
    if kind == "uniform":
        p = np.ones(ndv)
    elif kind == "zipf":
        p = 1.0 / (k + 1.0) ** s
    elif kind == "normal":
        mu, sigma = (ndv - 1) / 2.0, max(ndv / 6.0, 0.5)
        p = np.exp(-0.5 * ((k - mu) / sigma) ** 2)
    else:
        raise ConfigurationError(f"unknown distribution {kind!r}")
    return p / p.sum()


def _sample_ranks(rng, kind, ndv, n, s):
    if kind == "uniform":
        return rng.integers(0, ndv, size=n)
    return rng.choice(ndv, size=n, p=rank_probabilities(kind, ndv, s))


def _attr_column(rng, cfg: GenConfig, name: str, rows: int) -> Column:
    dtype = DataType(_pick(rng, cfg.datatype_weights))
    kind = _pick(rng, cfg.distribution_weights)
    s = rng.uniform(*cfg.zipf_s)
    ratio = _log_uniform(rng, *cfg.ndv_ratio)
    ndv = int(min(max(1, round(ratio * rows)), max(rows, 1)))
    if dtype is DataType.CATEGORICAL:
        ndv = min(ndv, cfg.categorical_ndv_cap)
    ranks = _sample_ranks(rng, kind, ndv, rows, s)
    # which domain value carries which frequency rank
    perm = rng.permutation(ndv)
    slots = perm[ranks]
    dictionary = None
    if dtype is DataType.INT:
        start = int(rng.integers(-1000, 1000))
        step = int(rng.integers(1, 6))
        values = (start + step * slots).astype(np.int64)
    elif dtype is DataType.FLOAT:
        start = round(float(rng.uniform(-1000, 1000)), 2)
        step = round(float(rng.uniform(0.05, 10.0)), 2)
        values = np.round(start + step * slots.astype(float), 2)
    else:
        dictionary = [f"val_{i:05d}" for i in range(ndv)]
        values = slots.astype(np.int32)
    nulls = None
    if rng.random() < cfg.null_column_prob:
        frac = rng.uniform(*cfg.null_frac)
        mask = rng.random(rows) < frac
        if mask.any():
            nulls = mask
            values = values.copy()
            values[mask] = -1 if dtype is DataType.CATEGORICAL else 0
    return Column(name, dtype, values, nulls, dictionary, role="attr")


def generate_database(config: GenConfig, seed: int, name: str | None = None) -> Database:
    """Deterministic function of ``(config, seed)``.

    Table ``t0`` is the fact table; every other table is referenced by exactly
    one earlier table, so the FK graph is a tree and any connected subset of
    tables has a unique top-most (referencing) table.
    """
    config.validate()
    rng = np.random.default_rng(seed)
    n_tables = int(rng.integers(config.table_count[0], config.table_count[1] + 1))
    referencer = [-1] + [int(rng.integers(0, i)) for i in range(1, n_tables)]

    rows = [0] * n_tables
    lo, hi = config.rows
    rows[0] = int(round(_log_uniform(rng, lo, hi))) if hi > 0 else 0
    for i in range(1, n_tables):
        fanout = _log_uniform(rng, *config.fk_fanout)
        rows[i] = int(min(max(round(rows[referencer[i]] / fanout), lo), hi))
        if rows[referencer[i]] > 0:
            rows[i] = max(rows[i], 1)  # FK targets must exist

    names = [f"t{i}" for i in range(n_tables)]
    tables: dict[str, Table] = {}
    fks: list[ForeignKey] = []
    columns: dict[str, dict[str, Column]] = {}
    for i, tname in enumerate(names):
        columns[tname] = {"id": Column("id", DataType.INT, np.arange(rows[i], dtype=np.int64), role="key")}
    for i in range(1, n_tables):
        child = names[referencer[i]]
        n_child = rows[referencer[i]]
        cname = f"{names[i]}_id"
        if rng.random() < config.fk_zipf_prob and rows[i] > 1:
            ranks = _sample_ranks(rng, "zipf", rows[i], n_child, rng.uniform(*config.zipf_s))
            vals = rng.permutation(rows[i])[ranks]
        else:
            vals = rng.integers(0, max(rows[i], 1), size=n_child)
        columns[child][cname] = Column(cname, DataType.INT, vals.astype(np.int64), role="fk")
        fks.append(ForeignKey(child, cname, names[i], "id"))
    for i, tname in enumerate(names):
        n_cols = int(rng.integers(config.columns[0], config.columns[1] + 1))
        for j in range(n_cols):
            cname = f"c{j}"
            columns[tname][cname] = _attr_column(rng, config, cname, rows[i])
        tables[tname] = Table(tname, columns[tname])
    return Database(name or f"db_{seed}", seed, tables, fks)
