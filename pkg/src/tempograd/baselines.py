"""Static baselines on the time-collapsed graph: feature MLP, GCN and GraphSAGE."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import numerics as nx
from .embed import ConfigError
from .evaluation import evaluate
from .numerics import Tensor
from .tgraph import DatasetBundle, NodeTable
from .train import MLP, DownstreamConfig, fit_classifier

BASELINE_KINDS = ("mlp", "gcn", "sage")


@dataclass
class StaticGraph:
    """Node features plus undirected, deduplicated adjacency without timestamps.

    ``norm_adj`` is D^-1/2 (A + I) D^-1/2 for GCN; ``mean_adj`` averages over
    neighbors (a zero row for isolated nodes) for GraphSAGE.
    """

    features: np.ndarray
    adjacency: sp.csr_matrix
    norm_adj: sp.csr_matrix
    mean_adj: sp.csr_matrix

    @property
    def n_nodes(self) -> int:
        return self.features.shape[0]


def collapse(bundle: DatasetBundle) -> StaticGraph:
    n = bundle.n_nodes
    e = bundle.edges
    keep = e.src != e.dst
    rows = np.concatenate([e.src[keep], e.dst[keep]])
    cols = np.concatenate([e.dst[keep], e.src[keep]])
    adj = sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
    adj.data[:] = 1.0  # duplicates were summed on construction
    adj.sort_indices()

    with_self = (adj + sp.identity(n, format="csr")).tocsr()
    deg = np.asarray(with_self.sum(axis=1)).reshape(-1)
    d_inv_sqrt = sp.diags(1.0 / np.sqrt(deg))
    norm_adj = (d_inv_sqrt @ with_self @ d_inv_sqrt).tocsr()

    nbrs = np.asarray(adj.sum(axis=1)).reshape(-1)
    inv = np.divide(1.0, nbrs, out=np.zeros(n), where=nbrs > 0)
    mean_adj = (sp.diags(inv) @ adj).tocsr()
    return StaticGraph(bundle.nodes.features.copy(), adj, norm_adj, mean_adj)


class StaticModel:
    """A two-layer baseline producing one fraud probability per node."""

    def __init__(self, kind: str, graph: StaticGraph, hidden: int, seed: int = 0):
        if kind not in BASELINE_KINDS:
            raise ConfigError(f"unknown baseline {kind!r}; expected one of {BASELINE_KINDS}")
        self.kind = kind
        self.graph = graph
        d = graph.features.shape[1]
        rng = np.random.default_rng(seed)
        fan = 2 if kind == "sage" else 1
        self.params = {
            "W1": nx.glorot(rng, fan * d, hidden, name="W1"),
            "b1": nx.zeros(hidden, name="b1"),
            "W2": nx.glorot(rng, fan * hidden, 1, name="W2"),
            "b2": nx.zeros(1, name="b2"),
        }

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def logits(self, features=None) -> Tensor:
        g = self.graph
        x = Tensor(g.features if features is None else features)
        p = self.params
        if self.kind == "mlp":
            h = nx.relu(x @ p["W1"] + p["b1"])
            out = h @ p["W2"] + p["b2"]
        elif self.kind == "gcn":
            h = nx.relu(nx.spmm(g.norm_adj, x @ p["W1"]) + p["b1"])
            out = nx.spmm(g.norm_adj, h @ p["W2"]) + p["b2"]
        else:
            h = nx.relu(nx.concat([x, nx.spmm(g.mean_adj, x)]) @ p["W1"] + p["b1"])
            out = nx.concat([h, nx.spmm(g.mean_adj, h)]) @ p["W2"] + p["b2"]
        return out.reshape(-1)

    def forward(self, features=None) -> Tensor:
        return nx.sigmoid(self.logits(features))

    def __call__(self, features=None) -> np.ndarray:
        return self.forward(features).data


def train_baseline(kind: str, graph: StaticGraph, node_table: NodeTable,
                   cfg: DownstreamConfig | None = None):
    """Fit one baseline; return ``(model, report, trace)``.

    The whole graph is propagated at every step; the loss covers a mini-batch of
    labeled training nodes.
    """
    cfg = cfg or DownstreamConfig()
    hidden = cfg.hidden[0] if cfg.hidden else 128
    model = StaticModel(kind, graph, hidden, seed=cfg.seed)

    def forward(ids):
        probs = model.forward()
        return probs if ids is None else probs[ids]

    trace = fit_classifier(model, forward, node_table, cfg, phase=f"baseline-{kind}",
                           out_bias=model.params["b2"])
    report = evaluate(model, graph.features, node_table)
    return model, report, trace
