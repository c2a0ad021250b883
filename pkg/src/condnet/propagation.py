"""Masked multi-aspect message passing.

One layer maps node embeddings ``u^k`` to ``u^{k+1}``.  For a receiver ``i``
and a sampled neighbor (sender) ``j``:

* conditional views ``u_{j|c} = u_j * m_c`` for every mask row ``c``;
* raw score ``s_c = h . relu(W_a [u_{j|c}; u_{i|c}] + b_a)``, softmax over c;
* message ``sum_c a_c u_{j|c}``;
* ``u_i^{k+1} = relu(W [mean_j message_j ; u_i] + b)``.

Batches are laid out as a sampled tree: depth 0 holds the targets, depth
``l+1`` holds ``fanout[l]`` children per depth-``l`` slot, stored
contiguously.  Every slot carries a pooling weight, which lets the same
code run the exhaustive full-neighbor mode (padded slots get weight 0).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .exceptions import ConfigError
from .masks import apply_mask, binarize

logger = logging.getLogger(__name__)


@dataclass
class SampledNeighborhood:
    """``nodes[l]`` are node ids at depth ``l``; ``weights[l]`` has shape
    ``(len(nodes[l]), width_l)`` and gives each child's pooling weight."""

    nodes: list
    weights: list

    @property
    def depth(self) -> int:
        return len(self.weights)

    def width(self, level: int) -> int:
        return self.weights[level].shape[1]

    def slot_counts(self) -> list:
        return [len(n) for n in self.nodes]

    @property
    def num_slots(self) -> int:
        return sum(self.slot_counts())

    def unique_nodes(self) -> np.ndarray:
        return np.unique(np.concatenate(self.nodes))


def sample_neighborhood(graph, targets, fanouts, rng=None, full=False) -> SampledNeighborhood:
    """Forward-sample the tree of neighbors needed for ``len(fanouts)`` layers.

    Sampling is uniform, without replacement when a node has at least
    ``fanout`` neighbors and with replacement otherwise.  A node with no
    neighbors sends to itself.  ``full=True`` ignores ``fanouts``' values
    and expands every neighbor exactly once.
    """
    targets = np.asarray(targets, dtype=np.int64).ravel()
    if not len(targets):
        raise ValueError("targets must be non-empty")
    if any(int(n) <= 0 for n in fanouts):
        raise ConfigError(f"fanouts must be positive, got {list(fanouts)}")
    rng = np.random.default_rng(rng)
    deg_all = graph.degree()
    nodes, weights = [targets], []
    for fanout in fanouts:
        parents = nodes[-1]
        deg = deg_all[parents]
        if full:
            width = max(1, int(deg.max()))
            children = np.repeat(parents[:, None], width, axis=1)
            w = np.zeros((len(parents), width))
            for r, (p, d) in enumerate(zip(parents, deg)):
                if d == 0:
                    w[r, 0] = 1.0
                else:
                    children[r, :d] = graph.neighbors(p)
                    w[r, :d] = 1.0 / d
        else:
            fanout = int(fanout)
            children = np.empty((len(parents), fanout), dtype=np.int64)
            for r, (p, d) in enumerate(zip(parents, deg)):
                if d == 0:
                    children[r] = p
                elif d < fanout:
                    children[r] = graph.neighbors(p)[rng.integers(0, d, size=fanout)]
                else:
                    children[r] = graph.neighbors(p)[rng.choice(d, size=fanout, replace=False)]
            w = np.full((len(parents), fanout), 1.0 / fanout)
        nodes.append(children.ravel())
        weights.append(w)
    return SampledNeighborhood(nodes, weights)


# -- single-pair reference operations -------------------------------------

def attention_scores(cond_sender, cond_receiver, att_w, att_h, att_b=None):
    """Raw scores ``h . relu(W_a [sender_c ; receiver_c] + b_a)`` per row c."""
    x = np.concatenate([np.asarray(cond_sender), np.asarray(cond_receiver)], axis=-1)
    z = x @ np.asarray(att_w).T
    if att_b is not None:
        z = z + att_b
    return np.maximum(z, 0.0) @ np.asarray(att_h)


def normalize_scores(raw):
    raw = np.asarray(raw, dtype=np.float64)
    e = np.exp(raw - raw.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def send_message(sender_conditionals, weights):
    return np.asarray(weights) @ np.asarray(sender_conditionals)


def receive_update(self_embedding, neighbor_messages, dense_w, dense_b=None):
    msgs = np.asarray(neighbor_messages, dtype=np.float64)
    if msgs.ndim != 2 or not len(msgs):
        raise ValueError("need at least one message")
    x = np.concatenate([msgs.mean(axis=0), np.asarray(self_embedding)])
    y = np.asarray(dense_w) @ x
    if dense_b is not None:
        y = y + dense_b
    return np.maximum(y, 0.0)


# -- batched layer --------------------------------------------------------

def layer_forward(recv, send, pool, mask, p, attention=True):
    """Vectorized layer.

    recv: (n, d) receiver embeddings; send: (n, N, d) sender embeddings;
    pool: (n, N) pooling weights; mask: (R, d) binary mask rows;
    p: dict with ``att_w``, ``att_b``, ``att_h``, ``dense_w``, ``dense_b``.
    Returns the (n, d') output and a cache for :func:`layer_backward`.
    """
    n, N, d = send.shape
    R = mask.shape[0]
    cache = {"recv": recv, "send": send, "pool": pool, "mask": mask, "attention": attention}
    if attention:
        W_a = p["att_w"]
        t = W_a.shape[0]
        # fold the mask into the attention weights: W_s (u*m_c) == (W_s*m_c) u
        Ws_m = (W_a[None, :, :d] * mask[:, None, :]).reshape(R * t, d)
        Wr_m = (W_a[None, :, d:] * mask[:, None, :]).reshape(R * t, d)
        z = (send.reshape(n * N, d) @ Ws_m.T).reshape(n, N, R, t)
        z += (recv @ Wr_m.T).reshape(n, 1, R, t)
        z += p["att_b"]
        act = np.maximum(z, 0.0)
        probs = normalize_scores(act @ p["att_h"])
        cache.update(z=z, act=act, Ws_m=Ws_m, Wr_m=Wr_m)
    else:
        probs = np.full((n, N, R), 1.0 / R)
    gate = probs @ mask
    msg = send * gate
    pooled = np.einsum("ns,nsd->nd", pool, msg)
    x = np.concatenate([pooled, recv], axis=1)
    y = x @ p["dense_w"].T + p["dense_b"]
    cache.update(probs=probs, gate=gate, x=x, y=y)
    return np.maximum(y, 0.0), cache


def layer_backward(dout, cache, p):
    """Gradients w.r.t. receivers, senders, the binary mask and layer weights."""
    recv, send, pool, mask = cache["recv"], cache["send"], cache["pool"], cache["mask"]
    n, N, d = send.shape
    R = mask.shape[0]
    probs, gate, x, y = cache["probs"], cache["gate"], cache["x"], cache["y"]
    dy = dout * (y > 0)
    grads = {"dense_w": dy.T @ x, "dense_b": dy.sum(axis=0)}
    dx = dy @ p["dense_w"]
    dpooled, drecv = dx[:, :d], dx[:, d:].copy()
    dmsg = pool[:, :, None] * dpooled[:, None, :]
    dsend = dmsg * gate
    dgate = dmsg * send
    dmask = probs.reshape(n * N, R).T @ dgate.reshape(n * N, d)
    if cache["attention"]:
        W_a = p["att_w"]
        t = W_a.shape[0]
        z, act = cache["z"], cache["act"]
        dprobs = dgate @ mask.T
        dscore = probs * (dprobs - (probs * dprobs).sum(axis=-1, keepdims=True))
        grads["att_h"] = act.reshape(-1, t).T @ dscore.reshape(-1)
        dz = dscore[..., None] * p["att_h"] * (z > 0)
        grads["att_b"] = dz.sum(axis=(0, 1, 2))
        dz_s = dz.reshape(n * N, R * t)
        dWs_m = (dz_s.T @ send.reshape(n * N, d)).reshape(R, t, d)
        dsend += (dz_s @ cache["Ws_m"]).reshape(n, N, d)
        dz_r = dz.sum(axis=1).reshape(n, R * t)
        dWr_m = (dz_r.T @ recv).reshape(R, t, d)
        drecv += dz_r @ cache["Wr_m"]
        grads["att_w"] = np.concatenate(
            [(dWs_m * mask[:, None, :]).sum(axis=0), (dWr_m * mask[:, None, :]).sum(axis=0)], axis=1)
        dmask += (dWs_m * W_a[None, :, :d]).sum(axis=1) + (dWr_m * W_a[None, :, d:]).sum(axis=1)
    return drecv, dsend, dmask, grads


def _layer_params(params, k):
    return {
        "att_w": params[f"att_w.{k}"], "att_b": params[f"att_b.{k}"], "att_h": params[f"att_h.{k}"],
        "dense_w": params[f"dense_w.{k}"], "dense_b": params[f"dense_b.{k}"],
    }


def forward_batch(params, hood: SampledNeighborhood):
    """Final (unmasked) embeddings of the depth-0 targets.

    Returns ``(out, cache)``; ``cache`` feeds :func:`backward_batch`.
    """
    K = params.num_layers
    if hood.depth != K:
        raise ConfigError(f"neighborhood has depth {hood.depth} but the model has {K} layers")
    h = [[params["base"][nodes] for nodes in hood.nodes]]
    layer_caches = []
    for k in range(K):
        mask = binarize(params.mask_rows(k))
        lp = _layer_params(params, k)
        nxt, caches = [], []
        for level in range(K - k):
            recv = h[k][level]
            width = hood.width(level)
            send = h[k][level + 1].reshape(len(recv), width, -1)
            out, cache = layer_forward(recv, send, hood.weights[level], mask, lp, params.attention)
            nxt.append(out)
            caches.append(cache)
        h.append(nxt)
        layer_caches.append(caches)
    return h[K][0], {"hood": hood, "caches": layer_caches, "h": h}


def backward_batch(params, cache, dout, buf):
    """Push ``dout`` (gradient of the targets' final embeddings) back into
    ``buf``.  Mask gradients pass straight through the threshold."""
    K = params.num_layers
    hood = cache["hood"]
    dh = [None] * (K + 1)
    dh[K] = [dout]
    for k in range(K - 1, -1, -1):
        lp = _layer_params(params, k)
        grads_in = [np.zeros_like(a) for a in cache["h"][k]]
        dmask = 0.0
        for level in range(K - k - 1, -1, -1):
            drecv, dsend, dm, g = layer_backward(dh[k + 1][level], cache["caches"][k][level], lp)
            grads_in[level] += drecv
            grads_in[level + 1] += dsend.reshape(grads_in[level + 1].shape)
            dmask = dmask + dm
            for name, val in g.items():
                buf.add(f"{name}.{k}", val)
        add_mask_grad(params, buf, k, dmask)
        dh[k] = grads_in
    for nodes, g in zip(hood.nodes, dh[0]):
        buf.add_rows("base", nodes, g)


def add_mask_grad(params, buf, k, dmask_binary):
    """Straight-through: the binary-mask gradient is used as-is for the real
    mask, split between the original rows and any transfer rows."""
    rows = params[f"mask.{k}"].shape[0]
    dmask_binary = np.asarray(dmask_binary, dtype=np.float64)
    buf.add(f"mask.{k}", dmask_binary[:rows])
    if f"xmask.{k}" in params.tensors:
        buf.add(f"xmask.{k}", dmask_binary[rows:])


def conditional_embed(final, last_mask_binary, rows):
    """Per-category views of final embeddings: ``{row: final * mask[row]}``."""
    out = {}
    for r in rows:
        m = last_mask_binary[r]
        if not m.any():
            logger.warning("mask row %d is all zero; its conditional embedding vanishes", r)
        out[r] = apply_mask(final, m)
    return out


def category_views(params, final):
    """List of conditional embeddings, one per category, in category order."""
    mask = binarize(params.mask_rows(params.num_layers))
    views = conditional_embed(final, mask, params.category_rows)
    return [views[r] for r in params.category_rows]


def _padded_neighbors(graph):
    deg = graph.degree()
    width = max(1, int(deg.max())) if graph.num_nodes else 1
    nbrs = np.repeat(np.arange(graph.num_nodes)[:, None], width, axis=1)
    w = np.zeros((graph.num_nodes, width))
    for i in range(graph.num_nodes):
        d = deg[i]
        if d == 0:
            w[i, 0] = 1.0
        else:
            nbrs[i, :d] = graph.neighbors(i)
            w[i, :d] = 1.0 / d
    return nbrs, w


def propagate_full(params, graph, chunk=256):
    """Final embeddings of every node using all neighbors (no sampling).

    Runs layer by layer over the whole graph, so cost is O(|V| * max degree)
    per layer; agrees with :func:`forward_batch` in full-neighbor mode.
    """
    nbrs, w = _padded_neighbors(graph)
    h = params["base"]
    for k in range(params.num_layers):
        mask = binarize(params.mask_rows(k))
        lp = _layer_params(params, k)
        out = np.empty((graph.num_nodes, params.dims[k + 1]))
        for s in range(0, graph.num_nodes, chunk):
            sl = slice(s, s + chunk)
            out[sl], _ = layer_forward(h[sl], h[nbrs[sl]], w[sl], mask, lp, params.attention)
        h = out
    return h


def embed_all(params, graph, fanouts=None, rng=None, batch_size=256):
    """Final embeddings for every node: exhaustive when ``fanouts`` is None,
    otherwise sampled with the given fan-outs."""
    if fanouts is None:
        return propagate_full(params, graph)
    out = np.empty((graph.num_nodes, params.dims[-1]))
    rng = np.random.default_rng(rng)
    for s in range(0, graph.num_nodes, batch_size):
        targets = np.arange(s, min(s + batch_size, graph.num_nodes))
        hood = sample_neighborhood(graph, targets, fanouts, rng)
        out[targets], _ = forward_batch(params, hood)
    return out
