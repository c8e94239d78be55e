"""Continuous-time dynamic graph storage, temporal neighbor lookup and dataset files.

The edge log is kept as parallel arrays sorted by timestamp. A
:class:`NeighborIndex` holds, for every node, its incident events in time order
(ties keep edge-log order) and answers "the K most recent neighbors strictly
before t".

On disk a dataset is a directory with two tab-separated text files::

    nodes.tsv   #nodes <N> dim <d_v>
                id  label(-1|0|1)  split(train|valid|test|bg)  f_1 ... f_dv
    edges.tsv   #edges <M> dim <d_e>
                src  dst  t  g_1 ... g_de

Lines starting with ``##`` right after a header carry ``key value`` metadata.
"""
from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from typing import Iterator, NamedTuple

import numpy as np

from .numerics import ContractError

SPLITS = ("train", "valid", "test", "bg")
SPLIT_CODE = {name: k for k, name in enumerate(SPLITS)}
MODES = ("directed-out", "directed-in", "undirected")


class DatasetFormatError(ValueError):
    """A dataset file is malformed; the message names the file and line."""


@dataclass(frozen=True)
class TemporalEdge:
    src: int
    dst: int
    t: float
    feat: tuple


@dataclass
class EdgeLog:
    """Timestamped interactions as parallel arrays."""

    src: np.ndarray
    dst: np.ndarray
    t: np.ndarray
    feat: np.ndarray

    def __post_init__(self):
        self.src = np.asarray(self.src, dtype=np.int64).reshape(-1)
        self.dst = np.asarray(self.dst, dtype=np.int64).reshape(-1)
        self.t = np.asarray(self.t, dtype=np.float64).reshape(-1)
        feat = np.asarray(self.feat, dtype=np.float64)
        if feat.ndim == 1 and feat.size == 0:
            feat = feat.reshape(len(self.src), 0)
        self.feat = feat
        m = len(self.src)
        if not (len(self.dst) == m and len(self.t) == m and self.feat.shape[0] == m):
            raise ContractError("edge arrays have different lengths")
        if self.feat.ndim != 2:
            raise ContractError(f"edge features must be 2-D, got shape {self.feat.shape}")

    @classmethod
    def empty(cls, d_e: int) -> "EdgeLog":
        return cls(np.zeros(0), np.zeros(0), np.zeros(0), np.zeros((0, d_e)))

    @classmethod
    def from_edges(cls, edges, d_e: int) -> "EdgeLog":
        edges = list(edges)
        if not edges:
            return cls.empty(d_e)
        feat = np.array([list(e.feat) for e in edges], dtype=np.float64).reshape(len(edges), d_e)
        return cls([e.src for e in edges], [e.dst for e in edges], [e.t for e in edges], feat)

    @property
    def d_e(self) -> int:
        return self.feat.shape[1]

    def __len__(self) -> int:
        return len(self.src)

    def __getitem__(self, idx) -> "EdgeLog":
        if isinstance(idx, (int, np.integer)):
            idx = slice(idx, idx + 1)
        return EdgeLog(self.src[idx], self.dst[idx], self.t[idx], self.feat[idx])

    def edge(self, k: int) -> TemporalEdge:
        return TemporalEdge(int(self.src[k]), int(self.dst[k]), float(self.t[k]), tuple(self.feat[k]))

    def is_sorted(self) -> bool:
        return bool(np.all(np.diff(self.t) >= 0))

    def equals(self, other: "EdgeLog") -> bool:
        return (
            _same(self.src, other.src)
            and _same(self.dst, other.dst)
            and _same(self.t, other.t)
            and _same(self.feat, other.feat)
        )


@dataclass
class NodeTable:
    """Per-node static features, labels (-1 = unlabeled) and split codes."""

    features: np.ndarray
    labels: np.ndarray
    split: np.ndarray

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        split = np.asarray(self.split)
        if split.dtype.kind in "US":
            split = np.array([SPLIT_CODE[s] for s in split], dtype=np.int64)
        self.split = split.astype(np.int64).reshape(-1)
        n = len(self.labels)
        if self.features.ndim != 2 or self.features.shape[0] != n or len(self.split) != n:
            raise ContractError("node features, labels and splits disagree in length")

    @property
    def n_nodes(self) -> int:
        return len(self.labels)

    @property
    def d_v(self) -> int:
        return self.features.shape[1]

    def mask(self, split: str) -> np.ndarray:
        """Labeled nodes belonging to ``split``."""
        return (self.split == SPLIT_CODE[split]) & (self.labels >= 0)

    def ids(self, split: str) -> np.ndarray:
        return np.flatnonzero(self.mask(split))

    def validate(self) -> None:
        if not np.all(np.isin(self.labels, (-1, 0, 1))):
            raise ContractError("labels must be -1, 0 or 1")
        if not np.all((self.split >= 0) & (self.split < len(SPLITS))):
            raise ContractError("unknown split code")
        if np.any((self.labels >= 0) & (self.split == SPLIT_CODE["bg"])):
            raise ContractError("labeled nodes must be in train, valid or test")

    def equals(self, other: "NodeTable") -> bool:
        return (
            _same(self.features, other.features)
            and _same(self.labels, other.labels)
            and _same(self.split, other.split)
        )


@dataclass
class DatasetBundle:
    nodes: NodeTable
    edges: EdgeLog
    name: str = "dataset"
    seed: int | None = None
    meta: dict = field(default_factory=dict)

    @property
    def n_nodes(self) -> int:
        return self.nodes.n_nodes

    @property
    def d_v(self) -> int:
        return self.nodes.d_v

    @property
    def d_e(self) -> int:
        return self.edges.d_e

    def validate(self) -> None:
        self.nodes.validate()
        e = self.edges
        if len(e) and (e.src.min() < 0 or e.dst.min() < 0
                       or max(e.src.max(), e.dst.max()) >= self.n_nodes):
            raise ContractError("edge endpoint outside the node range")
        if not np.all(np.isfinite(e.t)):
            raise ContractError("edge timestamps must be finite")
        if not e.is_sorted():
            raise ContractError("edge log must be sorted by timestamp")

    def equals(self, other: "DatasetBundle") -> bool:
        return (
            self.name == other.name
            and self.seed == other.seed
            and self.meta == other.meta
            and self.nodes.equals(other.nodes)
            and self.edges.equals(other.edges)
        )


def _same(a: np.ndarray, b: np.ndarray) -> bool:
    return a.shape == b.shape and a.dtype == b.dtype and a.tobytes() == b.tobytes()


# neighbor index ---------------------------------------------------------------


class NeighborBatch(NamedTuple):
    """Padded neighbor lookups for B queries, most-recent-first along axis 1."""

    nbr: np.ndarray   # (B, K) neighbor ids, 0 where padded
    eid: np.ndarray   # (B, K) edge-log positions, 0 where padded
    t: np.ndarray     # (B, K) event times, 0 where padded
    mask: np.ndarray  # (B, K) True for real entries


class NeighborIndex:
    """Per-node event lists in CSR layout, each sorted by (timestamp, log position)."""

    def __init__(self, edges: EdgeLog, n_nodes: int, mode: str = "undirected"):
        if mode not in MODES:
            raise ContractError(f"unknown neighbor mode {mode!r}; expected one of {MODES}")
        if not edges.is_sorted():
            bad = int(np.flatnonzero(np.diff(edges.t) < 0)[0]) + 1
            raise ContractError(f"edge log is not sorted by timestamp (record {bad})")
        self.edges = edges
        self.n_nodes = int(n_nodes)
        self.mode = mode
        eids = np.arange(len(edges), dtype=np.int64)
        if mode == "directed-out":
            owner, nbr, eid = edges.src, edges.dst, eids
        elif mode == "directed-in":
            owner, nbr, eid = edges.dst, edges.src, eids
        else:
            owner = np.concatenate([edges.src, edges.dst])
            nbr = np.concatenate([edges.dst, edges.src])
            eid = np.concatenate([eids, eids])
        if len(owner) and (owner.min() < 0 or owner.max() >= self.n_nodes):
            raise ContractError("edge endpoint outside the node range")
        order = np.lexsort((eid, owner))
        self.nbr = nbr[order]
        self.eid = eid[order]
        self.t = edges.t[self.eid]
        self.indptr = np.zeros(self.n_nodes + 1, dtype=np.int64)
        np.cumsum(np.bincount(owner, minlength=self.n_nodes), out=self.indptr[1:])

    def _check_node(self, i: int) -> None:
        if not 0 <= i < self.n_nodes:
            raise ContractError(f"unknown node id {i} (graph has {self.n_nodes} nodes)")

    def _cutoff(self, i: int, t: float) -> int:
        """Absolute position one past the last entry of node i with t_j < t."""
        lo, hi = self.indptr[i], self.indptr[i + 1]
        return lo + int(np.searchsorted(self.t[lo:hi], t, side="left"))

    def degree(self, i: int) -> int:
        self._check_node(i)
        return int(self.indptr[i + 1] - self.indptr[i])

    def events(self, i: int) -> list[tuple[int, int, float]]:
        """All (neighbor, edge position, time) entries of node i in stored order."""
        self._check_node(i)
        lo, hi = self.indptr[i], self.indptr[i + 1]
        return [(int(self.nbr[p]), int(self.eid[p]), float(self.t[p])) for p in range(lo, hi)]

    def last_time(self, i: int) -> float | None:
        self._check_node(i)
        lo, hi = self.indptr[i], self.indptr[i + 1]
        return float(self.t[hi - 1]) if hi > lo else None

    def neighbors_before(self, i: int, t: float, k: int) -> list[tuple[int, np.ndarray, float]]:
        """Up to k entries ``(j, e_ij, t_j)`` with ``t_j < t``, most recent first."""
        if k < 1:
            raise ContractError(f"neighbor cap must be >= 1, got {k}")
        self._check_node(i)
        lo = self.indptr[i]
        hi = self._cutoff(i, t)
        picks = range(hi - 1, max(lo, hi - k) - 1, -1)
        return [(int(self.nbr[p]), self.edges.feat[self.eid[p]], float(self.t[p])) for p in picks]

    def gather(self, nodes, times, k: int) -> NeighborBatch:
        """Vector form of :meth:`neighbors_before` for many (node, time) queries."""
        nodes = np.asarray(nodes, dtype=np.int64).reshape(-1)
        times = np.asarray(times, dtype=np.float64).reshape(-1)
        if k < 1:
            raise ContractError(f"neighbor cap must be >= 1, got {k}")
        if len(nodes) and (nodes.min() < 0 or nodes.max() >= self.n_nodes):
            bad = nodes[(nodes < 0) | (nodes >= self.n_nodes)][0]
            raise ContractError(f"unknown node id {bad} (graph has {self.n_nodes} nodes)")
        b = len(nodes)
        hi = np.empty(b, dtype=np.int64)
        for q in range(b):
            hi[q] = self._cutoff(nodes[q], times[q])
        lo = self.indptr[nodes]
        pos = hi[:, None] - 1 - np.arange(k)[None, :]
        mask = pos >= lo[:, None]
        pos = np.where(mask, pos, 0)
        if len(self.nbr) == 0:
            z = np.zeros((b, k), dtype=np.int64)
            return NeighborBatch(z, z.copy(), np.zeros((b, k)), np.zeros((b, k), dtype=bool))
        return NeighborBatch(
            np.where(mask, self.nbr[pos], 0),
            np.where(mask, self.eid[pos], 0),
            np.where(mask, self.t[pos], 0.0),
            mask,
        )


def build_index(edges: EdgeLog, n_nodes: int | None = None, mode: str = "undirected") -> NeighborIndex:
    if n_nodes is None:
        n_nodes = int(max(edges.src.max(), edges.dst.max())) + 1 if len(edges) else 0
    return NeighborIndex(edges, n_nodes, mode)


def chronological_batches(edges: EdgeLog, batch_size: int) -> Iterator[EdgeLog]:
    """Consecutive slices of the (time-sorted) log, each ``batch_size`` long except the last."""
    if batch_size < 1:
        raise ContractError(f"batch size must be >= 1, got {batch_size}")
    for start in range(0, len(edges), batch_size):
        yield edges[start:start + batch_size]


def min_time_gap(edges: EdgeLog) -> float | None:
    """Smallest positive difference between consecutive distinct timestamps."""
    gaps = np.diff(np.unique(edges.t))
    return float(gaps.min()) if len(gaps) else None


# file I/O ---------------------------------------------------------------------------


def _fmt(x: float) -> str:
    # shortest repr that parses back to the identical float64
    return repr(float(x))


def save_dataset(bundle: DatasetBundle, path) -> None:
    os.makedirs(path, exist_ok=True)
    meta = {"name": bundle.name}
    if bundle.seed is not None:
        meta["seed"] = str(bundle.seed)
    meta.update({k: str(v) for k, v in bundle.meta.items()})
    for key, value in meta.items():
        if any(c.isspace() for c in key) or "\n" in value or "\t" in value:
            raise ContractError(f"metadata {key!r} must be a single whitespace-free key and one-line value")
    meta_lines = [f"## {k} {v}\n" for k, v in meta.items()]

    nodes = bundle.nodes
    with open(os.path.join(path, "nodes.tsv"), "w", encoding="utf-8") as fh:
        fh.write(f"#nodes {nodes.n_nodes} dim {nodes.d_v}\n")
        fh.writelines(meta_lines)
        for i in range(nodes.n_nodes):
            cols = [str(i), str(int(nodes.labels[i])), SPLITS[nodes.split[i]]]
            cols += [_fmt(x) for x in nodes.features[i]]
            fh.write("\t".join(cols) + "\n")

    e = bundle.edges
    with open(os.path.join(path, "edges.tsv"), "w", encoding="utf-8") as fh:
        fh.write(f"#edges {len(e)} dim {e.d_e}\n")
        for k in range(len(e)):
            cols = [str(int(e.src[k])), str(int(e.dst[k])), _fmt(e.t[k])]
            cols += [_fmt(x) for x in e.feat[k]]
            fh.write("\t".join(cols) + "\n")


def _read_table(filename: str, tag: str):
    """Yield (count, dim, meta, [(lineno, fields), ...]) for one dataset file."""
    try:
        with open(filename, encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise DatasetFormatError(f"{filename}: cannot read ({exc.strerror})") from exc
    if not lines:
        raise DatasetFormatError(f"{filename}:1: empty file, expected '#{tag} <count> dim <d>'")
    head = lines[0].split()
    if len(head) != 4 or head[0] != f"#{tag}" or head[2] != "dim":
        raise DatasetFormatError(f"{filename}:1: malformed header {lines[0]!r}")
    try:
        count, dim = int(head[1]), int(head[3])
    except ValueError:
        raise DatasetFormatError(f"{filename}:1: malformed header {lines[0]!r}") from None
    meta = {}
    body_start = 1
    while body_start < len(lines) and lines[body_start].startswith("##"):
        parts = lines[body_start][2:].strip().split(None, 1)
        meta[parts[0]] = parts[1] if len(parts) > 1 else ""
        body_start += 1
    rows = [
        (n + 1, line.split("\t") if "\t" in line else line.split())
        for n, line in enumerate(lines[body_start:], start=body_start)
        if line.strip()
    ]
    if len(rows) != count:
        raise DatasetFormatError(f"{filename}: header declares {count} records, found {len(rows)}")
    return count, dim, meta, rows


def _floats(filename, lineno, record, cols):
    try:
        return [float(c) for c in cols]
    except ValueError:
        raise DatasetFormatError(f"{filename}:{lineno}: record {record}: bad number") from None


def load_dataset(path) -> DatasetBundle:
    nodes_file = os.path.join(path, "nodes.tsv")
    edges_file = os.path.join(path, "edges.tsv")

    n, d_v, meta, rows = _read_table(nodes_file, "nodes")
    feats = np.zeros((n, d_v))
    labels = np.zeros(n, dtype=np.int64)
    split = np.zeros(n, dtype=np.int64)
    for rec, (lineno, cols) in enumerate(rows):
        where = f"{nodes_file}:{lineno}: record {rec}"
        if len(cols) != 3 + d_v:
            raise DatasetFormatError(f"{where}: expected {3 + d_v} fields (dim {d_v}), got {len(cols)}")
        if cols[0] != str(rec):
            raise DatasetFormatError(f"{where}: node id {cols[0]!r} out of order")
        if cols[1] not in ("-1", "0", "1"):
            raise DatasetFormatError(f"{where}: label must be -1, 0 or 1, got {cols[1]!r}")
        if cols[2] not in SPLIT_CODE:
            raise DatasetFormatError(f"{where}: unknown split {cols[2]!r}")
        labels[rec] = int(cols[1])
        split[rec] = SPLIT_CODE[cols[2]]
        feats[rec] = _floats(nodes_file, lineno, rec, cols[3:])
        if labels[rec] >= 0 and cols[2] == "bg":
            raise DatasetFormatError(f"{where}: labeled node in background split")

    m, d_e, _, erows = _read_table(edges_file, "edges")
    src = np.zeros(m, dtype=np.int64)
    dst = np.zeros(m, dtype=np.int64)
    t = np.zeros(m)
    efeat = np.zeros((m, d_e))
    for rec, (lineno, cols) in enumerate(erows):
        where = f"{edges_file}:{lineno}: record {rec}"
        if len(cols) != 3 + d_e:
            raise DatasetFormatError(f"{where}: expected {3 + d_e} fields (dim {d_e}), got {len(cols)}")
        try:
            src[rec], dst[rec] = int(cols[0]), int(cols[1])
        except ValueError:
            raise DatasetFormatError(f"{where}: node ids must be integers") from None
        if not (0 <= src[rec] < n and 0 <= dst[rec] < n):
            raise DatasetFormatError(f"{where}: endpoint outside 0..{n - 1}")
        vals = _floats(edges_file, lineno, rec, cols[2:])
        if not math.isfinite(vals[0]):
            raise DatasetFormatError(f"{where}: timestamp must be finite")
        if rec and vals[0] < t[rec - 1]:
            raise DatasetFormatError(f"{where}: timestamp {vals[0]} earlier than previous record")
        t[rec] = vals[0]
        efeat[rec] = vals[1:]

    name = meta.pop("name", "dataset")
    seed = meta.pop("seed", None)
    return DatasetBundle(
        NodeTable(feats, labels, split),
        EdgeLog(src, dst, t, efeat),
        name=name,
        seed=int(seed) if seed is not None else None,
        meta=meta,
    )
