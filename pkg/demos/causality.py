"""What a node can see: the strict-before cutoff, and why future edges never leak in."""
import numpy as np

from tempograd.embed import EmbedConfig, TemporalEmbedder, init_params
from tempograd.tgraph import EdgeLog, NodeTable, build_index

# five nodes, six interactions; node 0 talks to everyone at different times
edges = EdgeLog(src=[0, 0, 1, 0, 2, 0], dst=[1, 2, 3, 3, 4, 4],
                t=[1.0, 2.0, 3.0, 4.0, 5.0, 6.0],
                feat=np.arange(12, dtype=float).reshape(6, 2) / 10)
nodes = NodeTable(features=np.eye(5, 3), labels=[0, 1, 0, 0, 1], split=["train"] * 5)
index = build_index(edges, nodes.n_nodes)

for t in (1.0, 1.5, 4.0, 6.0, 6.5):
    seen = [(j, tj) for j, _, tj in index.neighbors_before(0, t, k=10)]
    print(f"node 0 at t={t}: {seen}")
# an event stamped exactly t is not yet visible at t

cfg = EmbedConfig(kind="attn", d_h=8, d_t=4)
params = init_params(cfg, d_v=3, d_e=2, seed=0)
z = TemporalEmbedder(cfg, params, index, nodes).embed(0, 4.0).data

# drop every edge at or after t=4 and embed again
keep = edges.t < 4.0
early = EdgeLog(edges.src[keep], edges.dst[keep], edges.t[keep], edges.feat[keep])
z_early = TemporalEmbedder(cfg, params, build_index(early, 5), nodes).embed(0, 4.0).data
print("max |z - z_without_future| =", np.abs(z - z_early).max())

# the last event of node 0 is at t=6; the final-time query sits just past it
z_late = TemporalEmbedder(cfg, params, index, nodes).embed(0, 6.5).data
print("embedding moved after more history:", not np.allclose(z, z_late))
