"""Zero-shot cost model: per-node-type encoders, bottom-up message passing, readout.

A node's hidden state is ``encoder(features)`` for leaves and
``combine(concat(encoder(features), sum of child hidden states))`` otherwise;
the root's hidden state goes through the readout network. Children are summed
in ascending node-id order, which makes the output bit-identical under any
re-listing of edges.
"""
from __future__ import annotations

import copy
import json
import logging
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from .encoding import NodeType, QueryGraph
from .errors import CheckpointError, ConfigurationError, ModelError
from .nn import Adam, init_mlp, mlp_backward, mlp_forward

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "model_v1"
N_TYPES = len(NodeType)


@dataclass
class ModelConfig:
    hidden: int = 64
    lr: float = 1e-3
    batch_size: int = 64
    epochs: int = 100
    patience: int = 10
    seed: int = 0

    def validate(self) -> "ModelConfig":
        if self.hidden < 1:
            raise ConfigurationError("hidden dimension must be >= 1")
        if self.batch_size < 1 or self.epochs < 0 or self.patience < 1 or self.lr < 0:
            raise ConfigurationError(f"invalid model config {self}")
        return self

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known - {"version"}
        if unknown:
            raise ConfigurationError(f"unknown ModelConfig keys: {sorted(unknown)}")
        return cls(**{k: v for k, v in d.items() if k != "version"}).validate()

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class ModelParameters:
    tensors: dict[str, np.ndarray]
    hidden: int
    dims: tuple[int, ...]
    schema: str

    @classmethod
    def initialize(cls, hidden: int, dims, schema: str, seed: int = 0, output_bias: float = 0.0):
        rng = np.random.default_rng(seed)
        tensors = {}
        for t in NodeType:
            tensors.update(init_mlp(rng, f"enc.{t.value}", dims[t], hidden, hidden))
        for t in NodeType:
            tensors.update(init_mlp(rng, f"comb.{t.value}", 2 * hidden, hidden, hidden))
        tensors.update(init_mlp(rng, "readout", hidden, hidden, 1))
        tensors["readout.b2"][:] = output_bias
        return cls(tensors, hidden, tuple(int(d) for d in dims), schema)

    def copy(self) -> "ModelParameters":
        return ModelParameters({k: v.copy() for k, v in self.tensors.items()}, self.hidden, self.dims, self.schema)

    def names(self) -> list[str]:
        return sorted(self.tensors)

    def zeros_like(self) -> dict[str, np.ndarray]:
        return {k: np.zeros_like(v) for k, v in self.tensors.items()}

    def equals(self, other: "ModelParameters") -> bool:
        return (self.names() == other.names() and self.dims == other.dims and self.schema == other.schema
                and all(np.array_equal(self.tensors[k], other.tensors[k]) for k in self.names()))


class GraphDataset:
    """Many query graphs flattened into shared arrays for fast batching."""

    def __init__(self, graphs: list[QueryGraph]):
        if not graphs:
            raise ModelError("empty graph collection")
        self.schema = graphs[0].schema
        self.dims = tuple(graphs[0].dims)
        for i, g in enumerate(graphs):
            if g.schema != self.schema or tuple(g.dims) != self.dims:
                raise ModelError(f"graph {i} has schema {g.schema}{g.dims}, expected {self.schema}{self.dims}")
        self.n_graphs = len(graphs)
        n_nodes = np.array([g.n_nodes for g in graphs], dtype=np.int64)
        n_edges = np.array([len(g.edges) for g in graphs], dtype=np.int64)
        self.n_nodes, self.n_edges = n_nodes, n_edges
        self.node_start = np.concatenate([[0], np.cumsum(n_nodes)])
        self.edge_start = np.concatenate([[0], np.cumsum(n_edges)])
        self.types = np.concatenate([g.node_types for g in graphs]).astype(np.int64)
        self.roots = np.array([g.root for g in graphs], dtype=np.int64)
        edges = [g.edges for g in graphs if len(g.edges)]
        self.edges_local = np.concatenate(edges) if edges else np.zeros((0, 2), dtype=np.int64)
        feats = [f for g in graphs for f in g.features]
        self.feat_row = np.zeros(len(self.types), dtype=np.int64)
        self.type_feats = []
        for t in range(N_TYPES):
            idx = np.flatnonzero(self.types == t)
            self.feat_row[idx] = np.arange(len(idx))
            mat = np.array([feats[i] for i in idx], dtype=float).reshape(len(idx), self.dims[t])
            self.type_feats.append(mat)
        self.heights = self._heights()

    def _heights(self) -> np.ndarray:
        n = len(self.types)
        shift = np.repeat(self.node_start[:-1], self.n_edges)
        src = self.edges_local[:, 0] + shift
        dst = self.edges_local[:, 1] + shift
        h = np.zeros(n, dtype=np.int64)
        for _ in range(n + 1):
            new = h.copy()
            np.maximum.at(new, dst, h[src] + 1)
            if np.array_equal(new, h):
                return h
            h = new
        raise ModelError("query graph contains a cycle")

    def batch(self, gids) -> "Batch":
        return Batch(self, np.asarray(gids, dtype=np.int64))


class Batch:
    """Index structure of a set of graphs evaluated together."""

    def __init__(self, ds: GraphDataset, gids: np.ndarray):
        self.gids = gids
        counts = ds.n_nodes[gids]
        offset = np.cumsum(counts) - counts
        total = int(counts.sum())
        nodes = np.repeat(ds.node_start[gids] - offset, counts) + np.arange(total)
        self.n = total
        types = ds.types[nodes]
        heights = ds.heights[nodes]
        self.roots = ds.roots[gids] + offset

        self.type_pos, self.type_x = [], []
        for t in range(N_TYPES):
            pos = np.flatnonzero(types == t)
            self.type_pos.append(pos)
            self.type_x.append(ds.type_feats[t][ds.feat_row[nodes[pos]]])
        self.leaves = np.flatnonzero(heights == 0)

        ecounts = ds.n_edges[gids]
        etotal = int(ecounts.sum())
        eoff = np.cumsum(ecounts) - ecounts
        eidx = np.repeat(ds.edge_start[gids] - eoff, ecounts) + np.arange(etotal)
        shift = np.repeat(offset, ecounts)
        src = ds.edges_local[eidx, 0] + shift
        dst = ds.edges_local[eidx, 1] + shift
        order = np.lexsort((src, dst))
        src, dst = src[order], dst[order]
        first = np.ones(len(dst), dtype=bool)
        first[1:] = dst[1:] != dst[:-1]
        run_start = np.maximum.accumulate(np.where(first, np.arange(len(dst)), 0))
        rank = np.arange(len(dst)) - run_start
        dst_h = heights[dst]

        inner = np.flatnonzero(heights > 0)
        key = heights[inner] * N_TYPES + types[inner]
        inner = inner[np.argsort(key, kind="stable")]
        key = heights[inner] * N_TYPES + types[inner]
        self.levels = []
        max_h = int(heights.max()) if total else 0
        for h in range(1, max_h + 1):
            groups = []
            sel = inner[(key // N_TYPES) == h]
            for t in range(N_TYPES):
                pos = sel[types[sel] == t]
                if len(pos):
                    groups.append((t, pos))
            e = np.flatnonzero(dst_h == h)
            sums = []
            if len(e):
                for k in range(int(rank[e].max()) + 1):
                    ek = e[rank[e] == k]
                    sums.append((src[ek], dst[ek]))
            self.levels.append((groups, sums))


def forward_batch(params: ModelParameters, batch: Batch):
    p = params.tensors
    H = params.hidden
    enc = np.zeros((batch.n, H))
    enc_cache = []
    for t in range(N_TYPES):
        pos = batch.type_pos[t]
        if len(pos):
            out, cache = mlp_forward(p, f"enc.{t}", batch.type_x[t])
            enc[pos] = out
            enc_cache.append((t, pos, cache))
    hidden = np.zeros((batch.n, H))
    hidden[batch.leaves] = enc[batch.leaves]
    child_sum = np.zeros((batch.n, H))
    level_cache = []
    for groups, sums in batch.levels:
        for src, dst in sums:
            child_sum[dst] += hidden[src]
        caches = []
        for t, pos in groups:
            out, cache = mlp_forward(p, f"comb.{t}", np.concatenate([enc[pos], child_sum[pos]], axis=1))
            hidden[pos] = out
            caches.append((t, pos, cache))
        level_cache.append(caches)
    out, rcache = mlp_forward(p, "readout", hidden[batch.roots])
    return out[:, 0], (enc_cache, level_cache, rcache)


def backward_batch(params: ModelParameters, batch: Batch, cache, dpred: np.ndarray) -> dict:
    """Reverse-mode pass: gradients of ``sum(dpred * prediction)``."""
    p = params.tensors
    H = params.hidden
    grads = params.zeros_like()
    enc_cache, level_cache, rcache = cache
    d_hidden = np.zeros((batch.n, H))
    d_enc = np.zeros((batch.n, H))
    d_root = mlp_backward(p, "readout", dpred[:, None], rcache, grads)
    np.add.at(d_hidden, batch.roots, d_root)
    # rows of d_sum are written for a level before its edges read them
    d_sum = np.empty((batch.n, H))
    for (groups, sums), caches in zip(reversed(batch.levels), reversed(level_cache)):
        for t, pos, c in caches:
            d_in = mlp_backward(p, f"comb.{t}", d_hidden[pos], c, grads)
            d_enc[pos] += d_in[:, :H]
            d_sum[pos] = d_in[:, H:]
        for src, dst in sums:
            # a shared column node may feed several parents of the same rank
            np.add.at(d_hidden, src, d_sum[dst])
    d_enc[batch.leaves] += d_hidden[batch.leaves]
    for t, pos, c in enc_cache:
        mlp_backward(p, f"enc.{t}", d_enc[pos], c, grads)
    return grads


def _check_graph(params: ModelParameters, graph: QueryGraph):
    if tuple(graph.dims) != tuple(params.dims) or graph.schema != params.schema:
        raise ModelError(f"graph schema {graph.schema}{tuple(graph.dims)} does not match "
                         f"parameters {params.schema}{tuple(params.dims)}")
    for t, f in zip(graph.node_types, graph.features):
        if len(f) != params.dims[int(t)]:
            raise ModelError(f"node feature length {len(f)} != {params.dims[int(t)]} for type {NodeType(int(t)).name}")


def forward(params: ModelParameters, graph: QueryGraph) -> float:
    """Predicted log(1 + cost) of a single graph."""
    _check_graph(params, graph)
    graph.heights()  # cycle check
    out, _ = forward_batch(params, GraphDataset([graph]).batch([0]))
    return float(out[0])


def loss_and_grad(params: ModelParameters, graphs: list[QueryGraph], labels, sample_ids=None):
    """Mean squared error of log-cost predictions and its exact gradient."""
    for g in graphs:
        _check_graph(params, g)
    ds = GraphDataset(graphs)
    return _loss_and_grad(params, ds.batch(np.arange(len(graphs))), np.asarray(labels, dtype=float), sample_ids)


def backward(params: ModelParameters, graphs: list[QueryGraph], labels) -> dict:
    return loss_and_grad(params, graphs, labels)[1]


def _loss_and_grad(params, batch: Batch, labels: np.ndarray, sample_ids=None):
    pred, cache = forward_batch(params, batch)
    resid = pred - labels
    if not np.all(np.isfinite(resid)):
        bad = int(np.flatnonzero(~np.isfinite(resid))[0])
        sid = sample_ids[bad] if sample_ids is not None else int(batch.gids[bad])
        raise ModelError(f"non-finite loss at sample {sid}")
    loss = float(np.mean(resid ** 2))
    grads = backward_batch(params, batch, cache, 2.0 * resid / len(resid))
    return loss, grads


def predict_dataset(params: ModelParameters, ds: GraphDataset, chunk: int = 4096) -> np.ndarray:
    out = np.empty(ds.n_graphs)
    for start in range(0, ds.n_graphs, chunk):
        gids = np.arange(start, min(start + chunk, ds.n_graphs))
        out[gids], _ = forward_batch(params, ds.batch(gids))
    return out


def log_qerrors(pred_log: np.ndarray, label_log: np.ndarray) -> np.ndarray:
    """Q-errors of de-logged predictions; predicted costs are clipped at 0."""
    return np.exp(np.abs(np.maximum(pred_log, 0.0) - label_log))


@dataclass
class TrainHistory:
    train_loss: list
    val_median_q: list
    best_epoch: int
    epochs_run: int

    def to_dict(self) -> dict:
        return asdict(self)


def train(train_graphs: list[QueryGraph], train_labels, cfg: ModelConfig,
          val_graphs=None, val_labels=None, init_params: ModelParameters | None = None,
          train_origins=None, forbidden_origins=()):
    """Mini-batch Adam on MSE of log(1 + cost); early stopping on validation median Q-error.

    Labels are log(1 + cost_units). Returns ``(params, history)``; the best
    validation epoch's parameters are returned when validation data is given.
    """
    cfg.validate()
    if len(train_graphs) == 0:
        raise ModelError("empty training set")
    if train_origins is not None:
        leaked = sorted(set(train_origins) & set(forbidden_origins))
        if leaked:
            from .errors import LeakageError
            raise LeakageError(f"training samples from held-out databases {leaked}")
    labels = np.asarray(train_labels, dtype=float)
    ds = GraphDataset(train_graphs)
    if init_params is None:
        params = ModelParameters.initialize(cfg.hidden, ds.dims, ds.schema, cfg.seed, float(labels.mean()))
    else:
        params = init_params.copy()
        if params.dims != ds.dims or params.schema != ds.schema:
            raise ModelError("training graphs do not match the initial parameters' schema")
    val_ds = GraphDataset(val_graphs) if val_graphs else None
    val_y = np.asarray(val_labels, dtype=float) if val_ds is not None else None
    opt = Adam(params.tensors, lr=cfg.lr)
    rng = np.random.default_rng(cfg.seed + 1)
    hist = TrainHistory([], [], -1, 0)
    best, best_q, stale = params.copy(), np.inf, 0
    for epoch in range(cfg.epochs):
        order = rng.permutation(ds.n_graphs)
        total, seen = 0.0, 0
        for start in range(0, ds.n_graphs, cfg.batch_size):
            gids = order[start:start + cfg.batch_size]
            loss, grads = _loss_and_grad(params, ds.batch(gids), labels[gids])
            opt.step(params.tensors, grads)
            total += loss * len(gids)
            seen += len(gids)
        hist.train_loss.append(total / seen)
        hist.epochs_run = epoch + 1
        if val_ds is not None:
            q = float(np.median(log_qerrors(predict_dataset(params, val_ds), val_y)))
            hist.val_median_q.append(q)
            log.debug("epoch %d loss %.4f val median q %.4f", epoch, hist.train_loss[-1], q)
            if q < best_q:
                best, best_q, stale, hist.best_epoch = params.copy(), q, 0, epoch
            else:
                stale += 1
                if stale >= cfg.patience:
                    break
        else:
            log.debug("epoch %d loss %.4f", epoch, hist.train_loss[-1])
    if val_ds is None:
        hist.best_epoch = hist.epochs_run - 1
        return params, hist
    return best, hist


def finetune(params: ModelParameters, graphs, labels, cfg: ModelConfig, lr_factor: float = 0.1,
             max_epochs: int = 20):
    """Continue training on a few target samples; ``params`` is left untouched."""
    if len(graphs) == 0:
        raise ModelError("fine-tuning needs at least one sample")
    ft = ModelConfig(hidden=cfg.hidden, lr=cfg.lr * lr_factor, batch_size=cfg.batch_size,
                     epochs=min(cfg.epochs, max_epochs), patience=cfg.patience, seed=cfg.seed)
    if ft.epochs == 0:
        return params.copy(), TrainHistory([], [], -1, 0)
    return train(graphs, labels, ft, init_params=params)


def save_checkpoint(params: ModelParameters, cfg: ModelConfig, path, extra: dict | None = None) -> Path:
    """``model_v1``: a JSON header line followed by little-endian float64 tensors."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tensors, offset, blobs = [], 0, []
    for name in params.names():
        arr = np.ascontiguousarray(params.tensors[name], dtype="<f8")
        blob = arr.tobytes()
        tensors.append({"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": len(blob)})
        offset += len(blob)
        blobs.append(blob)
    header = {"format": CHECKPOINT_FORMAT, "schema": params.schema, "dims": list(params.dims),
              "hidden": params.hidden, "config": cfg.to_dict(), "tensors": tensors, "extra": extra or {}}
    head = json.dumps(header, sort_keys=True).encode()
    with path.open("wb") as fh:
        fh.write(f"{CHECKPOINT_FORMAT} {len(head)}\n".encode())
        fh.write(head)
        fh.write(b"\n")
        for b in blobs:
            fh.write(b)
    return path


def load_checkpoint(path, expected_config: ModelConfig | None = None, expected_schema: str | None = None):
    """Returns ``(params, config, extra)``; any inconsistency raises CheckpointError."""
    raw = Path(path).read_bytes()
    try:
        first, rest = raw.split(b"\n", 1)
        magic, size = first.decode().split()
        if magic != CHECKPOINT_FORMAT:
            raise ValueError(f"bad magic {magic!r}")
        size = int(size)
        header = json.loads(rest[:size].decode())
        body = rest[size + 1:]
        cfg = ModelConfig.from_dict(header["config"])
        tensors = {}
        for t in header["tensors"]:
            chunk = body[t["offset"]:t["offset"] + t["nbytes"]]
            if len(chunk) != t["nbytes"]:
                raise ValueError(f"truncated tensor {t['name']}")
            tensors[t["name"]] = np.frombuffer(chunk, dtype="<f8").astype(np.float64).reshape(t["shape"])
        params = ModelParameters(tensors, int(header["hidden"]), tuple(header["dims"]), header["schema"])
    except CheckpointError:
        raise
    except Exception as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from None
    if expected_config is not None and expected_config.hidden != params.hidden:
        raise CheckpointError(f"checkpoint hidden dimension {params.hidden} != configured {expected_config.hidden}")
    if expected_schema is not None and expected_schema != params.schema:
        raise CheckpointError(f"checkpoint schema {params.schema} != expected {expected_schema}")
    expected = ModelParameters.initialize(params.hidden, params.dims, params.schema)
    if expected.names() != params.names() or any(
            expected.tensors[k].shape != params.tensors[k].shape for k in params.names()):
        raise CheckpointError("checkpoint tensor layout does not match its header")
    return params, cfg, header.get("extra", {})


class ZeroShotCostModel(BaseEstimator, RegressorMixin):
    """Estimator wrapper: ``fit(graphs, cost_units)`` / ``predict(graphs) -> cost_units``."""

    def __init__(self, hidden=64, lr=1e-3, batch_size=64, epochs=100, patience=10, seed=0):
        self.hidden = hidden
        self.lr = lr
        self.batch_size = batch_size
        self.epochs = epochs
        self.patience = patience
        self.seed = seed

    def _config(self) -> ModelConfig:
        return ModelConfig(self.hidden, self.lr, self.batch_size, self.epochs, self.patience, self.seed).validate()

    def fit(self, X, y, X_val=None, y_val=None, groups=None, holdout=()):
        X, y = _check_graphs(X, y)
        val = (None, None)
        if X_val is not None:
            X_val, y_val = _check_graphs(X_val, y_val)
            val = (X_val, np.log1p(y_val))
        self.params_, self.history_ = train(X, np.log1p(y), self._config(), *val,
                                            train_origins=groups, forbidden_origins=holdout)
        return self

    def predict_log(self, X) -> np.ndarray:
        check_is_fitted(self, "params_")
        X, _ = _check_graphs(X)
        for g in X:
            _check_graph(self.params_, g)
        return predict_dataset(self.params_, GraphDataset(X))

    def predict(self, X) -> np.ndarray:
        return np.expm1(np.maximum(self.predict_log(X), 0.0))

    def finetune(self, X, y, lr_factor: float = 0.1, max_epochs: int = 20) -> "ZeroShotCostModel":
        check_is_fitted(self, "params_")
        X, y = _check_graphs(X, y)
        out = copy.deepcopy(self)
        out.params_, out.finetune_history_ = finetune(self.params_, X, np.log1p(y), self._config(),
                                                      lr_factor, max_epochs)
        return out

    def save(self, path, extra=None) -> Path:
        check_is_fitted(self, "params_")
        return save_checkpoint(self.params_, self._config(), path, extra)

    @classmethod
    def load(cls, path) -> "ZeroShotCostModel":
        params, cfg, _ = load_checkpoint(path)
        model = cls(**cfg.to_dict())
        model.params_ = params
        return model


def _check_graphs(X, y=None):
    X = list(X)
    if not X:
        raise ValueError("need at least one query graph")
    if not all(isinstance(g, QueryGraph) for g in X):
        raise TypeError("X must be a sequence of QueryGraph")
    if y is None:
        return X, None
    y = np.asarray(y, dtype=float)
    if y.shape != (len(X),):
        raise ValueError(f"y has shape {y.shape}, expected ({len(X)},)")
    if not np.all(np.isfinite(y)) or np.any(y < 0):
        raise ValueError("costs must be finite and non-negative")
    return X, y
