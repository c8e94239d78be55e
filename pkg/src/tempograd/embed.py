"""Temporal graph embedding modules: attn, sum, mean and conv.

Layer 0 of every node is its static feature vector. Layer ``l`` combines the
node's own layer ``l-1`` state with messages built from its K most recent
neighbors strictly before the query time. Each message is
``[h_j || e_ij || phi(t - t_j)]`` where ``phi`` is a learnable cosine time code.

    sum   h~ = relu(sum_j W1 m_j)                h = W2 [h_prev || h~]
    mean  h~ = relu(mean_j W1 m_j)               h = W2 [h_prev || h~]
    conv  h~ = relu(Wc sum_j W1 m_j)             h = W2 [h_prev || h~]
    attn  h~ = MultiHeadAttention(q, m, m)       h = MLP([h_prev || h~])

with ``q = [h_prev || phi(0)]``. An empty neighborhood gives ``h~ = 0``.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from . import numerics as nx
from .numerics import ContractError, DimensionError, Tensor
from .tgraph import NeighborIndex, NodeTable

KINDS = ("attn", "sum", "mean", "conv")
CKPT_MAGIC = "tempograd-ckpt v1"


class ConfigError(ValueError):
    pass


@dataclass
class EmbedConfig:
    kind: str = "mean"
    layers: int = 1
    heads: int = 2
    k: int = 10
    d_h: int = 128
    d_t: int = 32
    mode: str = "undirected"

    def validate(self) -> None:
        if self.kind not in KINDS:
            raise ConfigError(f"unknown embedding kind {self.kind!r}; expected one of {KINDS}")
        if self.layers < 1 or self.k < 1 or self.d_h < 1 or self.d_t < 1 or self.heads < 1:
            raise ConfigError(f"layers, k, d_h, d_t and heads must be positive: {self}")
        if self.kind == "attn" and self.d_h % self.heads:
            raise ConfigError(f"d_h={self.d_h} is not divisible by heads={self.heads}")


@dataclass
class TimeEncoder:
    """phi(dt)_k = cos(omega_k * dt + phase_k)."""

    omega: Tensor
    phase: Tensor

    @classmethod
    def init(cls, d_t: int) -> "TimeEncoder":
        omega = 1.0 / 10.0 ** np.linspace(0.0, 4.0, d_t)
        return cls(Tensor(omega, requires_grad=True, name="time.omega"),
                   nx.zeros(d_t, name="time.phase"))

    @property
    def dim(self) -> int:
        return self.omega.shape[0]

    def __call__(self, dt) -> Tensor:
        dt = np.asarray(dt, dtype=np.float64)
        return nx.cos(Tensor(dt[..., None]) * self.omega + self.phase)


def encode_time(enc: TimeEncoder, dt) -> Tensor:
    dt = np.asarray(dt, dtype=np.float64)
    if np.any(dt < 0):
        raise ContractError("time deltas must be non-negative")
    return enc(dt)


def init_params(config: EmbedConfig, d_v: int, d_e: int, seed: int = 0) -> dict[str, Tensor]:
    """Glorot-initialized weights for every layer plus the shared time encoder."""
    config.validate()
    rng = np.random.default_rng(seed)
    enc = TimeEncoder.init(config.d_t)
    params = {"time.omega": enc.omega, "time.phase": enc.phase}
    d_h, d_t = config.d_h, config.d_t
    for layer in range(1, config.layers + 1):
        d_in = d_v if layer == 1 else d_h
        d_msg = d_in + d_e + d_t
        p = f"layer{layer}."
        if config.kind == "attn":
            specs = {"Wq": (d_in + d_t, d_h), "Wk": (d_msg, d_h), "Wv": (d_msg, d_h),
                     "Wo": (d_h, d_h), "mlp1": (d_in + d_h, d_h), "mlp2": (d_h, d_h)}
        else:
            specs = {"W1": (d_msg, d_h), "W2": (d_in + d_h, d_h)}
            if config.kind == "conv":
                specs["Wc"] = (d_h, d_h)
        for name, (fan_in, fan_out) in specs.items():
            params[p + name] = nx.glorot(rng, fan_in, fan_out, name=p + name)
        if config.kind == "attn":
            params[p + "mlp1_b"] = nx.zeros(d_h, name=p + "mlp1_b")
            params[p + "mlp2_b"] = nx.zeros(d_h, name=p + "mlp2_b")
    return params


def attention(q: Tensor, keys: Tensor, values: Tensor, mask: np.ndarray,
              wq: Tensor, wk: Tensor, wv: Tensor, wo: Tensor, heads: int):
    """Batched multi-head scaled dot-product attention with one query per row.

    Shapes: q (B, dq), keys (B, K, dk), values (B, K, dv), mask (B, K).
    Returns ``(output (B, d_h), weights (B, heads, K))``.
    """
    b = q.shape[0]
    if keys.shape[:2] != values.shape[:2] or keys.shape[0] != b or np.shape(mask) != keys.shape[:2]:
        raise DimensionError(
            f"attention shapes disagree: q {q.shape}, keys {keys.shape}, "
            f"values {values.shape}, mask {np.shape(mask)}"
        )
    n = keys.shape[1]
    d_h = wq.shape[1]
    dk = d_h // heads
    qh = (q @ wq).reshape(b, heads, 1, dk)
    kh = (keys @ wk).reshape(b, n, heads, dk).transpose(0, 2, 3, 1)
    vh = (values @ wv).reshape(b, n, heads, dk).transpose(0, 2, 1, 3)
    scores = (qh @ kh) * (1.0 / np.sqrt(dk))
    w = nx.masked_softmax(scores, np.asarray(mask, dtype=bool)[:, None, None, :])
    out = (w @ vh).reshape(b, d_h) @ wo
    return out, w.data.reshape(b, heads, n)


def multi_head_attention(q, keys, values, mask, weights: dict, heads: int) -> Tensor:
    """Attention for a single query vector against a matrix of keys and values.

    ``weights`` holds ``Wq``, ``Wk``, ``Wv`` and ``Wo``. Rows with a false mask
    are ignored; if none is valid the result is the zero vector.
    """
    q, keys, values = nx._wrap(q), nx._wrap(keys), nx._wrap(values)
    if q.ndim != 1 or keys.ndim != 2 or values.ndim != 2:
        raise DimensionError(f"expected vector query and matrix keys/values, got "
                             f"{q.shape}, {keys.shape}, {values.shape}")
    mask = np.asarray(mask, dtype=bool)
    out, _ = attention(q.reshape(1, -1), keys.reshape(1, *keys.shape),
                       values.reshape(1, *values.shape), mask.reshape(1, -1),
                       weights["Wq"], weights["Wk"], weights["Wv"], weights["Wo"], heads)
    return out.reshape(-1)


class TemporalEmbedder:
    """Computes z_i(t) for batches of (node, time) queries over a fixed neighbor index."""

    def __init__(self, config: EmbedConfig, params: dict[str, Tensor],
                 index: NeighborIndex, node_table: NodeTable):
        config.validate()
        self.config = config
        self.params = params
        self.index = index
        self.features = node_table.features
        # trailing zero row serves padded slots, so an empty log still indexes
        self.edge_feat = np.vstack([index.edges.feat, np.zeros((1, index.edges.d_e))])
        self.encoder = TimeEncoder(params["time.omega"], params["time.phase"])
        self.last_attention: list[np.ndarray] = []

    def embed(self, i: int, t: float) -> Tensor:
        return self.embed_batch([i], [t]).reshape(-1)

    def embed_batch(self, nodes, times) -> Tensor:
        nodes = np.asarray(nodes, dtype=np.int64).reshape(-1)
        times = np.asarray(times, dtype=np.float64).reshape(-1)
        if nodes.shape != times.shape:
            raise DimensionError(f"{len(nodes)} nodes but {len(times)} times")
        self.last_attention = []
        return self._hidden(nodes, times, self.config.layers)

    def _hidden(self, nodes: np.ndarray, times: np.ndarray, layer: int) -> Tensor:
        if layer == 0:
            return Tensor(self.features[nodes])
        cfg = self.config
        b, k = len(nodes), cfg.k
        nb = self.index.gather(nodes, times, k)
        h_self = self._hidden(nodes, times, layer - 1)

        valid = nb.mask.reshape(-1)
        n_valid = int(valid.sum())
        sub = self._hidden(nb.nbr.reshape(-1)[valid], np.repeat(times, k)[valid], layer - 1)
        # row 0 of the padded table is the zero row used by masked slots
        slot = np.zeros(b * k, dtype=np.int64)
        slot[valid] = np.arange(1, n_valid + 1)
        padded = nx.concat([Tensor(np.zeros((1, sub.shape[1]))), sub], axis=0)
        h_nbr = nx.take(padded, slot).reshape(b, k, sub.shape[1])

        dt = np.where(nb.mask, times[:, None] - nb.t, 0.0)
        efeat = self.edge_feat[np.where(nb.mask, nb.eid, -1)]
        msg = nx.concat([h_nbr, Tensor(efeat), self.encoder(dt)], axis=-1)

        p = self.params
        pre = f"layer{layer}."
        if cfg.kind == "attn":
            q = nx.concat([h_self, self.encoder(np.zeros(b))], axis=-1)
            h_tilde, w = attention(q, msg, msg, nb.mask, p[pre + "Wq"], p[pre + "Wk"],
                                   p[pre + "Wv"], p[pre + "Wo"], cfg.heads)
            self.last_attention.append(w)
            hidden = nx.relu(nx.concat([h_self, h_tilde]) @ p[pre + "mlp1"] + p[pre + "mlp1_b"])
            return hidden @ p[pre + "mlp2"] + p[pre + "mlp2_b"]

        m = (msg @ p[pre + "W1"]) * nb.mask[..., None].astype(np.float64)
        agg = m.sum(axis=1)
        if cfg.kind == "mean":
            count = nb.mask.sum(axis=1, keepdims=True)
            agg = agg * (1.0 / np.maximum(count, 1))
        elif cfg.kind == "conv":
            agg = agg @ p[pre + "Wc"]
        h_tilde = nx.relu(agg)
        return nx.concat([h_self, h_tilde]) @ p[pre + "W2"]


def embed(params, config: EmbedConfig, index: NeighborIndex, node_table: NodeTable,
          i: int, t: float) -> np.ndarray:
    """z_i(t) as a plain array."""
    return TemporalEmbedder(config, params, index, node_table).embed(i, t).data


# checkpoints ----------------------------------------------------------------------


def save_checkpoint(path, params: dict, config: dict | None = None) -> None:
    """Write named float64 tensors after a versioned header echoing ``config``.

    Layout: ``tempograd-ckpt v1``, ``config <json>``, ``tensors <n>`` lines, then
    per tensor a ``<name> <shape> <nbytes>`` line followed by raw little-endian
    float64 bytes and a newline.
    """
    with open(path, "wb") as fh:
        fh.write(f"{CKPT_MAGIC}\n".encode())
        fh.write(b"config " + json.dumps(config or {}, sort_keys=True).encode() + b"\n")
        fh.write(f"tensors {len(params)}\n".encode())
        for name, value in params.items():
            arr = np.asarray(value.data if isinstance(value, Tensor) else value,
                                       dtype="<f8")
            if not name or any(c.isspace() for c in name):
                raise ContractError(f"tensor name {name!r} must be non-empty without whitespace")
            shape = ",".join(str(s) for s in arr.shape) or "scalar"
            raw = arr.tobytes()
            fh.write(f"{name} {shape} {len(raw)}\n".encode())
            fh.write(raw + b"\n")


class CheckpointError(ValueError):
    pass


def load_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    """Return ``(config, {name: array})`` from a file written by :func:`save_checkpoint`."""
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise CheckpointError(f"{path}: cannot read checkpoint ({exc.strerror})") from exc

    pos = 0

    def line() -> str:
        nonlocal pos
        end = blob.find(b"\n", pos)
        if end < 0:
            raise CheckpointError(f"{path}: truncated checkpoint")
        text = blob[pos:end].decode()
        pos = end + 1
        return text

    if line() != CKPT_MAGIC:
        raise CheckpointError(f"{path}: not a {CKPT_MAGIC} file")
    cfg_line = line()
    if not cfg_line.startswith("config "):
        raise CheckpointError(f"{path}: missing config line")
    config = json.loads(cfg_line[len("config "):])
    head = line().split()
    if len(head) != 2 or head[0] != "tensors":
        raise CheckpointError(f"{path}: missing tensor count")
    tensors = {}
    for _ in range(int(head[1])):
        parts = line().split()
        if len(parts) != 3:
            raise CheckpointError(f"{path}: malformed tensor record")
        name, shape_txt, nbytes = parts[0], parts[1], int(parts[2])
        shape = () if shape_txt == "scalar" else tuple(int(s) for s in shape_txt.split(","))
        if nbytes != 8 * int(np.prod(shape)) or pos + nbytes + 1 > len(blob):
            raise CheckpointError(f"{path}: tensor {name} has inconsistent size")
        tensors[name] = np.frombuffer(blob[pos:pos + nbytes], dtype="<f8").reshape(shape).astype(np.float64)
        pos += nbytes + 1
    return config, tensors


def params_from_arrays(arrays: dict[str, np.ndarray]) -> dict[str, Tensor]:
    return {name: Tensor(a.copy(), requires_grad=True, name=name) for name, a in arrays.items()}


def config_to_dict(config: EmbedConfig) -> dict:
    return asdict(config)


__all__ = [
    "KINDS", "EmbedConfig", "TimeEncoder", "TemporalEmbedder", "ConfigError",
    "encode_time", "init_params", "attention", "multi_head_attention", "embed",
    "save_checkpoint", "load_checkpoint", "params_from_arrays", "CheckpointError",
]
