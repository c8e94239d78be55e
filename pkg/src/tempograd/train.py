"""Link-prediction pretraining of the encoder and downstream node classification.

Pretraining walks the edge log in chronological batches. Each observed edge
``(u, i, t)`` is paired with a uniformly drawn node ``k`` and the encoder is
trained to score ``sigmoid(z_u . z_i)`` high and ``sigmoid(z_u . z_k)`` low, with
all embeddings taken at time ``t``.

The downstream phase freezes the encoder, embeds every node just after its
last event, and fits a separate MLP with binary cross-entropy on the labeled
training nodes.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from . import numerics as nx
from .embed import EmbedConfig, TemporalEmbedder
from .evaluation import UndefinedMetricError, split_auc
from .numerics import ContractError, Tensor
from .tgraph import DatasetBundle, NeighborIndex, NodeTable, build_index, chronological_batches, min_time_gap

log = logging.getLogger(__name__)

PROB_FLOOR = 1e-7


class NumericError(FloatingPointError):
    """A training loss became NaN or infinite."""


@dataclass
class PretrainConfig:
    batch_size: int = 200
    lr: float = 1e-4
    epochs: int = 10
    negatives: int = 1
    seed: int = 42

    def validate(self) -> None:
        if self.batch_size < 1 or self.epochs < 0 or self.negatives < 1 or self.lr <= 0:
            raise ContractError(f"invalid pretraining config: {self}")


@dataclass
class DownstreamConfig:
    batch_size: int = 100
    lr: float = 3e-4
    epochs: int = 10
    hidden: tuple = (128,)
    seed: int = 42

    def validate(self) -> None:
        if self.batch_size < 1 or self.epochs < 0 or self.lr <= 0:
            raise ContractError(f"invalid downstream config: {self}")


# losses ------------------------------------------------------------------------------


def _clamped(p: Tensor) -> Tensor:
    return nx.clip(p, PROB_FLOOR, 1.0 - PROB_FLOOR)


def link_loss(z_u, z_i, z_k) -> Tensor:
    """-[log s(z_u.z_i) + log(1 - s(z_u.z_k))], averaged over leading batch axes."""
    z_u, z_i, z_k = nx._wrap(z_u), nx._wrap(z_i), nx._wrap(z_k)
    pos = _clamped(nx.sigmoid((z_u * z_i).sum(axis=-1)))
    neg = _clamped(nx.sigmoid((z_u * z_k).sum(axis=-1)))
    per_pair = -(nx.log(pos) + nx.log(1.0 - neg))
    return per_pair.mean()


def node_loss(preds, labels) -> Tensor:
    """Mean binary cross-entropy of probabilities ``preds`` against 0/1 ``labels``."""
    preds = nx._wrap(preds)
    labels = np.asarray(labels, dtype=np.float64).reshape(preds.shape)
    if not np.all((labels == 0) | (labels == 1)):
        raise ContractError("node labels must be 0 or 1")
    p = _clamped(preds)
    return -(nx.log(p) * labels + nx.log(1.0 - p) * (1.0 - labels)).mean()


def _finite(loss: Tensor, where: str) -> float:
    value = loss.item()
    if not np.isfinite(value):
        raise NumericError(f"non-finite loss {value} during {where}")
    return value


# pretraining -------------------------------------------------------------------------


def sample_negative(rng: np.random.Generator, n_nodes: int, size=None):
    """Uniform node id(s) in ``[0, n_nodes)``."""
    if n_nodes < 1:
        raise ContractError("need at least one node to sample from")
    if size is None:
        return int(rng.integers(n_nodes))
    return rng.integers(n_nodes, size=size)


def pretrain(bundle: DatasetBundle, config: EmbedConfig, params: dict[str, Tensor],
             cfg: PretrainConfig, index: NeighborIndex | None = None):
    """Train ``params`` in place on link prediction; return ``(params, trace)``.

    ``trace`` holds one record per epoch with the mean per-pair loss.
    """
    cfg.validate()
    if index is None:
        index = build_index(bundle.edges, bundle.n_nodes, config.mode)
    embedder = TemporalEmbedder(config, params, index, bundle.nodes)
    opt = nx.Adam(params.values(), lr=cfg.lr)
    rng = np.random.default_rng(cfg.seed)
    trace = []
    for epoch in range(1, cfg.epochs + 1):
        total, count = 0.0, 0
        for batch in chronological_batches(bundle.edges, cfg.batch_size):
            src = np.repeat(batch.src, cfg.negatives)
            dst = np.repeat(batch.dst, cfg.negatives)
            t = np.repeat(batch.t, cfg.negatives)
            neg = sample_negative(rng, bundle.n_nodes, size=len(src))
            n = len(src)
            z = embedder.embed_batch(np.concatenate([src, dst, neg]), np.tile(t, 3))
            loss = link_loss(z[:n], z[n:2 * n], z[2 * n:])
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += _finite(loss, f"pretraining epoch {epoch}") * n
            count += n
        mean = total / max(count, 1)
        log.info("pretrain epoch %d loss %.6f", epoch, mean)
        trace.append({"phase": "pretrain", "epoch": epoch, "loss": mean, "valid_auc": None})
    return params, trace


def final_time_epsilon(bundle_or_edges) -> float:
    """Half the smallest gap between distinct timestamps, or 1.0 if there is none."""
    edges = getattr(bundle_or_edges, "edges", bundle_or_edges)
    gap = min_time_gap(edges)
    return gap / 2.0 if gap else 1.0


def final_times(index: NeighborIndex, eps: float) -> np.ndarray:
    """Per-node query time: last incident event + eps (global last event + eps if none)."""
    n = index.n_nodes
    counts = np.diff(index.indptr)
    glob = float(index.edges.t.max()) if len(index.edges) else 0.0
    last = np.full(n, glob)
    has = counts > 0
    last[has] = index.t[index.indptr[1:][has] - 1]
    return last + eps


def final_time_embeddings(embedder: TemporalEmbedder, eps: float | None = None,
                          batch_size: int = 500) -> np.ndarray:
    """z_u at each node's final time for every node, as an (N, d_h) array."""
    index = embedder.index
    if eps is None:
        eps = final_time_epsilon(index.edges)
    times = final_times(index, eps)
    out = []
    for start in range(0, index.n_nodes, batch_size):
        ids = np.arange(start, min(start + batch_size, index.n_nodes))
        out.append(embedder.embed_batch(ids, times[ids]).data)
    return np.concatenate(out) if out else np.zeros((0, embedder.config.d_h))


def final_time_embedding(params, config: EmbedConfig, index: NeighborIndex,
                         node_table: NodeTable, u: int) -> np.ndarray:
    eps = final_time_epsilon(index.edges)
    t = final_times(index, eps)[u]
    return TemporalEmbedder(config, params, index, node_table).embed(u, t).data


# downstream --------------------------------------------------------------------------


@dataclass
class MLP:
    """Fully connected ReLU network ending in one sigmoid unit.

    Inputs are shifted by ``in_mean`` and divided by ``in_scale`` before the
    first layer; both are fixed (not trained) and default to the identity.
    """

    weights: list = field(default_factory=list)
    biases: list = field(default_factory=list)
    in_mean: np.ndarray | None = None
    in_scale: np.ndarray | None = None

    @classmethod
    def init(cls, sizes, seed: int = 0) -> "MLP":
        rng = np.random.default_rng(seed)
        ws, bs = [], []
        for k, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
            ws.append(nx.glorot(rng, a, b, name=f"mlp.W{k}"))
            bs.append(nx.zeros(b, name=f"mlp.b{k}"))
        return cls(ws, bs)

    def parameters(self) -> list[Tensor]:
        return [*self.weights, *self.biases]

    def fit_scaling(self, x: np.ndarray) -> None:
        """Standardize inputs with per-column statistics of ``x``."""
        self.in_mean = x.mean(axis=0)
        sd = x.std(axis=0)
        self.in_scale = np.where(sd > 1e-12, sd, 1.0)

    def named(self) -> dict[str, np.ndarray]:
        out = {p.name: p.data for p in self.parameters()}
        if self.in_mean is not None:
            out["mlp.in_mean"] = self.in_mean
            out["mlp.in_scale"] = self.in_scale
        return out

    @classmethod
    def from_arrays(cls, arrays: dict[str, np.ndarray]) -> "MLP":
        n = sum(1 for k in arrays if k.startswith("mlp.W"))
        ws = [Tensor(arrays[f"mlp.W{k}"], requires_grad=True, name=f"mlp.W{k}") for k in range(n)]
        bs = [Tensor(arrays[f"mlp.b{k}"], requires_grad=True, name=f"mlp.b{k}") for k in range(n)]
        return cls(ws, bs, arrays.get("mlp.in_mean"), arrays.get("mlp.in_scale"))

    def logits(self, x) -> Tensor:
        h = nx._wrap(x)
        if self.in_mean is not None:
            h = (h - self.in_mean) * (1.0 / self.in_scale)
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w + b
            if k < len(self.weights) - 1:
                h = nx.relu(h)
        return h.reshape(-1)

    def forward(self, x) -> Tensor:
        return nx.sigmoid(self.logits(x))

    def __call__(self, x) -> np.ndarray:
        return self.forward(x).data


def prior_logit(labels) -> float:
    """Log-odds of the positive rate, clamped like the losses."""
    rate = float(np.clip(np.mean(labels), PROB_FLOOR, 1.0 - PROB_FLOOR))
    return float(np.log(rate / (1.0 - rate)))


def fit_classifier(model: MLP, forward, node_table: NodeTable, cfg: DownstreamConfig,
                   phase: str = "downstream", out_bias: Tensor | None = None):
    """Mini-batch Adam on BCE over labeled training nodes.

    ``forward(ids)`` returns predicted probabilities for those node ids, and
    ``forward(None)`` returns them for every node (used for validation AUC).
    ``out_bias``, if given, starts at the log-odds of the training labels so the
    first steps are not spent learning the base rate.
    """
    cfg.validate()
    train_ids = node_table.ids("train")
    if len(train_ids) == 0:
        raise ContractError("no labeled training nodes")
    labels = node_table.labels
    if out_bias is not None:
        out_bias.data[...] = prior_logit(labels[train_ids])
    opt = nx.Adam(model.parameters(), lr=cfg.lr)
    rng = np.random.default_rng(cfg.seed)
    trace = []
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(train_ids)
        total = 0.0
        for start in range(0, len(order), cfg.batch_size):
            ids = order[start:start + cfg.batch_size]
            loss = node_loss(forward(ids), labels[ids])
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += _finite(loss, f"{phase} epoch {epoch}") * len(ids)
        try:
            valid = split_auc(forward(None).data, node_table, "valid")
        except UndefinedMetricError:
            valid = None
        trace.append({"phase": phase, "epoch": epoch, "loss": total / len(order), "valid_auc": valid})
    return trace


def train_downstream(embeddings: np.ndarray, node_table: NodeTable, cfg: DownstreamConfig):
    """Fit a decoder MLP on frozen embeddings; return ``(decoder, trace)``."""
    embeddings = np.asarray(embeddings, dtype=np.float64)
    decoder = MLP.init([embeddings.shape[1], *cfg.hidden, 1], seed=cfg.seed)
    decoder.fit_scaling(embeddings[node_table.ids("train")])

    def forward(ids):
        x = embeddings if ids is None else embeddings[ids]
        return decoder.forward(x)

    trace = fit_classifier(decoder, forward, node_table, cfg, out_bias=decoder.biases[-1])
    return decoder, trace


def write_trace(records, path, append: bool = True) -> None:
    with open(path, "a" if append else "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec) + "\n")
