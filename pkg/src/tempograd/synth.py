"""Synthetic fraud graphs whose label signal lives only in event timing and structure.

Every node belongs to a community and emits edges to random members of its
own community at a slow Poisson rate over ``[0, horizon]``. Fraud nodes also
emit one burst: ``burst_size`` edges inside ``burst_window`` time units, to
targets drawn uniformly from the whole graph. Node and edge features are
i.i.d. standard normal for both classes, so they say nothing about the label.

With ``match_degree`` (the default) every normal node also emits
``burst_size`` edges to uniform targets, spread over the whole horizon. Both
classes then have the same degree distribution and the same share of
cross-community edges; only the timing of those edges differs. Without it a
static model can read the label off the node degree.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .embed import ConfigError
from .tgraph import SPLIT_CODE, DatasetBundle, EdgeLog, NodeTable


@dataclass
class SynthConfig:
    """Generator settings.

    ``normal_rate`` is the per-node community edge rate per time unit. Burst
    onsets are uniform over ``onset_range`` as fractions of the horizon left
    after the window. ``dormant_after_burst`` stops a fraud node's community
    traffic at its onset.
    """

    n_nodes: int = 2000
    fraud_rate: float = 0.1
    communities: int = 10
    d_v: int = 16
    d_e: int = 4
    normal_rate: float = 0.001
    burst_size: int = 8
    burst_window: float = 5.0
    horizon: float = 1000.0
    onset_range: tuple = (0.8, 1.0)
    dormant_after_burst: bool = False
    match_degree: bool = True
    seed: int = 42

    def validate(self) -> None:
        if not 0.0 < self.fraud_rate < 1.0:
            raise ConfigError(f"fraud_rate must be in (0, 1), got {self.fraud_rate}")
        if self.communities < 1 or self.n_nodes < self.communities:
            raise ConfigError(f"need n_nodes >= communities >= 1, got {self.n_nodes}, {self.communities}")
        if self.horizon <= 0 or self.normal_rate < 0 or self.burst_size < 0:
            raise ConfigError("horizon must be positive; rates and burst size non-negative")
        if not 0.0 <= self.burst_window <= self.horizon:
            raise ConfigError(f"burst window {self.burst_window} does not fit in horizon {self.horizon}")
        lo, hi = self.onset_range
        if not 0.0 <= lo <= hi <= 1.0:
            raise ConfigError(f"onset_range must satisfy 0 <= lo <= hi <= 1, got {self.onset_range}")
        if self.d_v < 1 or self.d_e < 0:
            raise ConfigError("d_v must be positive and d_e non-negative")


def _stratified_split(rng, labels: np.ndarray) -> np.ndarray:
    split = np.empty(len(labels), dtype=np.int64)
    for cls in (0, 1):
        ids = rng.permutation(np.flatnonzero(labels == cls))
        n_train = int(round(0.70 * len(ids)))
        n_valid = int(round(0.15 * len(ids)))
        split[ids[:n_train]] = SPLIT_CODE["train"]
        split[ids[n_train:n_train + n_valid]] = SPLIT_CODE["valid"]
        split[ids[n_train + n_valid:]] = SPLIT_CODE["test"]
    return split


def _mates(rng, pool: np.ndarray, u: int, size: int) -> np.ndarray:
    """Uniform draws from the other members of u's community."""
    pick = rng.integers(len(pool) - 1, size=size)
    own = np.searchsorted(pool, u)
    return pool[pick + (pick >= own)]


def generate(cfg: SynthConfig | None = None) -> DatasetBundle:
    cfg = cfg or SynthConfig()
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    n = cfg.n_nodes

    community = rng.permutation(np.arange(n) % cfg.communities)
    members = [np.flatnonzero(community == c) for c in range(cfg.communities)]
    n_fraud = int(round(n * cfg.fraud_rate))
    labels = np.zeros(n, dtype=np.int64)
    labels[rng.choice(n, size=n_fraud, replace=False)] = 1
    features = rng.standard_normal((n, cfg.d_v))

    lo, hi = cfg.onset_range
    span = cfg.horizon - cfg.burst_window
    onset = np.full(n, np.inf)
    fraud = np.flatnonzero(labels == 1)
    onset[fraud] = rng.uniform(lo * span, hi * span, size=len(fraud))
    active_until = np.where(np.isfinite(onset) & cfg.dormant_after_burst, onset, cfg.horizon)

    src, dst, times = [], [], []
    counts = rng.poisson(cfg.normal_rate * active_until)
    for u in range(n):
        if counts[u] == 0 or len(members[community[u]]) < 2:
            continue
        src.append(np.full(counts[u], u))
        dst.append(_mates(rng, members[community[u]], u, counts[u]))
        times.append(rng.uniform(0.0, active_until[u], size=counts[u]))

    extra = fraud if not cfg.match_degree else np.arange(n)
    for u in extra:
        if cfg.burst_size == 0 or n < 2:
            continue
        pick = rng.integers(n - 1, size=cfg.burst_size)
        src.append(np.full(cfg.burst_size, u))
        dst.append(pick + (pick >= u))
        if labels[u]:
            times.append(onset[u] + rng.uniform(0.0, cfg.burst_window, size=cfg.burst_size))
        else:
            times.append(rng.uniform(0.0, cfg.horizon, size=cfg.burst_size))

    src = np.concatenate(src) if src else np.zeros(0, dtype=np.int64)
    dst = np.concatenate(dst) if dst else np.zeros(0, dtype=np.int64)
    times = np.concatenate(times) if times else np.zeros(0)
    order = np.argsort(times, kind="stable")
    edge_feat = rng.standard_normal((len(order), cfg.d_e))
    edges = EdgeLog(src[order], dst[order], times[order], edge_feat)

    nodes = NodeTable(features, labels, _stratified_split(rng, labels))
    meta = {"generator": "tempograd.synth", "community_count": str(cfg.communities)}
    bundle = DatasetBundle(nodes, edges, name="synth", seed=cfg.seed, meta=meta)
    bundle.validate()
    return bundle


def config_dict(cfg: SynthConfig) -> dict:
    return asdict(cfg)
