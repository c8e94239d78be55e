"""Index-free reference evaluation of the four embedding rules.

Written with plain loops over the full edge list so it shares no code path
with the batched implementation it checks.
"""
import math

import numpy as np

from tempograd.embed import KINDS
from tempograd.numerics import ContractError
from tempograd.tgraph import EdgeLog, NodeTable


def recent_neighbors(edges: EdgeLog, i, t, k):
    rows = []
    for e in range(len(edges)):
        s, d, te = int(edges.src[e]), int(edges.dst[e]), float(edges.t[e])
        if te >= t:
            continue
        if s == i:
            rows.append((te, e, d))
        if d == i:
            rows.append((te, e, s))
    rows.sort(key=lambda r: (r[0], r[1]), reverse=True)
    return [(j, e, te) for te, e, j in rows[:k]]


def _relu(x):
    return np.maximum(x, 0.0)


def reference_embed(kind, params, edges: EdgeLog, nodes: NodeTable, i, t, *, k, layers, heads):
    if kind not in KINDS:
        raise ContractError(kind)
    w = {name: np.asarray(getattr(p, "data", p)) for name, p in params.items()}
    omega, phase = w["time.omega"], w["time.phase"]

    def code(dt):
        return np.array([math.cos(o * dt + b) for o, b in zip(omega, phase)])

    def hidden(node, layer):
        if layer == 0:
            return nodes.features[node].copy()
        pre = f"layer{layer}."
        own = hidden(node, layer - 1)
        msgs = [np.concatenate([hidden(j, layer - 1), edges.feat[e], code(t - te)])
                for j, e, te in recent_neighbors(edges, node, t, k)]
        if kind == "attn":
            d_h = w[pre + "Wq"].shape[1]
            dk = d_h // heads
            q = np.concatenate([own, code(0.0)]) @ w[pre + "Wq"]
            agg = np.zeros(d_h)
            if msgs:
                keys = [m @ w[pre + "Wk"] for m in msgs]
                vals = [m @ w[pre + "Wv"] for m in msgs]
                for h in range(heads):
                    sl = slice(h * dk, (h + 1) * dk)
                    scores = [float(q[sl] @ key[sl]) / math.sqrt(dk) for key in keys]
                    top = max(scores)
                    ex = [math.exp(s - top) for s in scores]
                    tot = sum(ex)
                    for a, v in zip(ex, vals):
                        agg[sl] += (a / tot) * v[sl]
            h_tilde = agg @ w[pre + "Wo"]
            x = _relu(np.concatenate([own, h_tilde]) @ w[pre + "mlp1"] + w[pre + "mlp1_b"])
            return x @ w[pre + "mlp2"] + w[pre + "mlp2_b"]

        d_h = w[pre + "W1"].shape[1]
        total = np.zeros(d_h)
        for m in msgs:
            total = total + m @ w[pre + "W1"]
        if kind == "mean" and msgs:
            total = total / len(msgs)
        if kind == "conv":
            total = total @ w[pre + "Wc"]
        return np.concatenate([own, _relu(total)]) @ w[pre + "W2"]

    return hidden(i, layers)
