"""Shared oracles and generators for the test suite."""
from dataclasses import dataclass

import numpy as np

from zsc.encoding import FEATURE_SCHEMA, TRANSFERABLE_DIMS, NodeType, QueryGraph
from zsc.executor import annotate_actuals, execute
from zsc.model import GraphDataset, ModelParameters, forward_batch, loss_and_grad
from zsc.planner import plan
from zsc.relcore import Column, Database, ForeignKey, Table
from zsc.workload import Aggregate, Join, Predicate, QuerySpec

DIMS = tuple(TRANSFERABLE_DIMS[t] for t in NodeType)


def annotated(q, db, cat):
    p = plan(q, cat)
    annotate_actuals(p, execute(p, db))
    return p


def rename_db(db, prefix):
    tmap = {t: prefix + t for t in db.tables}
    cmap = lambda c: c if c == "id" else prefix + c
    tables = {}
    for t, tab in db.tables.items():
        cols = {cmap(c): Column(cmap(c), col.dtype, col.values, col.nulls, col.dictionary, col.role)
                for c, col in tab.columns.items()}
        tables[tmap[t]] = Table(tmap[t], cols)
    fks = [ForeignKey(tmap[f.child_table], cmap(f.child_column), tmap[f.parent_table], cmap(f.parent_column))
           for f in db.foreign_keys]
    return Database(prefix + db.name, db.seed, tables, fks), tmap, cmap


def rename_pred(p, tmap, cmap):
    if p is None:
        return None
    return Predicate(p.op, tmap.get(p.table), cmap(p.column) if p.column else None, p.literal,
                     [rename_pred(c, tmap, cmap) for c in p.children])


def rename_query(q, tmap, cmap):
    return QuerySpec(q.qid, [tmap[t] for t in q.tables],
                     [Join(tmap[j.child_table], cmap(j.child_column), tmap[j.parent_table], cmap(j.parent_column))
                      for j in q.joins],
                     {tmap[t]: rename_pred(p, tmap, cmap) for t, p in q.filters.items()},
                     [Aggregate(a.func, tmap.get(a.table), cmap(a.column) if a.column else None)
                      for a in q.aggregates])


def _relu(v):
    return [max(x, 0.0) for x in v]


def _affine(x, W, b):
    return [sum(x[i] * W[i][j] for i in range(len(x))) + b[j] for j in range(len(b))]


def _mlp(p, prefix, x):
    h = _relu(_affine(x, p[prefix + ".W1"].tolist(), p[prefix + ".b1"].tolist()))
    return _affine(h, p[prefix + ".W2"].tolist(), p[prefix + ".b2"].tolist())


def reference_forward(params, g):
    """Plain-Python recursion over the graph, children summed in id order."""
    p = params.tensors
    children = {i: sorted(int(c) for c, q in g.edges if q == i) for i in range(g.n_nodes)}

    def hidden(v):
        t = int(g.node_types[v])
        e = _mlp(p, f"enc.{t}", list(map(float, g.features[v])))
        if not children[v]:
            return e
        s = [0.0] * params.hidden
        for c in children[v]:
            s = [a + b for a, b in zip(s, hidden(c))]
        return _mlp(p, f"comb.{t}", e + s)

    return _mlp(p, "readout", hidden(g.root))[0]


def random_graph(rng, n):
    types = rng.integers(0, len(NodeType), size=n)
    feats = [rng.normal(size=DIMS[t]) for t in types]
    # every node i > 0 gets a parent with a smaller id; some get a second parent
    edges = [[i, int(rng.integers(0, i))] for i in range(1, n)]
    for i in range(2, n):
        if rng.random() < 0.2:
            q = int(rng.integers(0, i))
            if [i, q] not in edges:
                edges.append([i, q])
    return QueryGraph(types.astype(np.int64), feats, np.array(edges, dtype=np.int64).reshape(-1, 2))


def random_parameters(hidden, seed):
    """Glorot-initialized weights with small random biases.

    Zero biases put exact zeros on ReLU corners whenever a whole layer is
    inactive, where central differences see half a slope.
    """
    params = ModelParameters.initialize(hidden, DIMS, FEATURE_SCHEMA, seed)
    rng = np.random.default_rng(seed + 12345)
    for k, v in params.tensors.items():
        if ".b" in k:
            v += rng.normal(scale=0.1, size=v.shape)
    return params


def _activation_pattern(cache) -> bytes:
    enc_cache, level_cache, rcache = cache
    pres = [c[1] for _, _, c in enc_cache] + [c[1] for level in level_cache for _, _, c in level] + [rcache[1]]
    return np.packbits(np.concatenate([(p > 0).ravel() for p in pres])).tobytes()


@dataclass
class GradientCheck:
    worst: float  # over every parameter
    worst_smooth: float  # over parameters whose perturbations keep every ReLU on the same side
    kink_crossings: int


def finite_difference_check(params, graphs, labels, eps=1e-4) -> GradientCheck:
    """Compare analytic gradients with central differences, parameter by parameter.

    The difference quotients use forward passes only, on one prebuilt batch.
    A perturbation that flips any ReLU activation straddles a corner of the
    piecewise-smooth loss, where the quotient is not a derivative estimate;
    those are counted separately.
    """
    labels = np.asarray(labels, dtype=float)
    _, grads = loss_and_grad(params, graphs, labels)
    batch = GraphDataset(graphs).batch(np.arange(len(graphs)))

    def loss():
        pred, cache = forward_batch(params, batch)
        return float(np.mean((pred - labels) ** 2)), _activation_pattern(cache)

    _, base = loss()
    worst = worst_smooth = 0.0
    crossings = 0
    for name in params.names():
        t = params.tensors[name]
        for idx in np.ndindex(t.shape):
            old = t[idx]
            t[idx] = old + eps
            up, pat_up = loss()
            t[idx] = old - eps
            down, pat_down = loss()
            t[idx] = old
            fd = (up - down) / (2 * eps)
            g = grads[name][idx]
            rel = abs(g - fd) / max(abs(g), abs(fd), 1e-6)
            worst = max(worst, rel)
            if pat_up == base and pat_down == base:
                worst_smooth = max(worst_smooth, rel)
            else:
                crossings += 1
    return GradientCheck(worst, worst_smooth, crossings)
