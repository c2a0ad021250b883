"""Finite-difference checks of the hand-written backward passes.

Each registered operation builds a small random instance and exposes the
scalar loss, the analytic gradients and the distance of the instance to the
nearest ReLU kink.  Instances closer than ``KINK_MARGIN`` to a kink are
redrawn, because central differences are meaningless across a kink.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .exceptions import GradCheckError
from .graph import SocialGraph
from .params import GradBuffer, init_params
from .propagation import layer_backward, layer_forward, sample_neighborhood
from .training import batch_loss, bpr_loss

KINK_MARGIN = 1e-3
REGISTRY = {}


def register(name):
    def deco(fn):
        REGISTRY[name] = fn
        return fn
    return deco


@dataclass
class Instance:
    tensors: dict          # name -> array, perturbed in place
    loss: object           # () -> float
    grads: object          # () -> {name: array}
    kink_distance: object  # () -> float


@dataclass
class GradCheckReport:
    op: str
    tolerance: float
    errors: dict = field(default_factory=dict)   # name -> relative error
    worst: dict = field(default_factory=dict)    # name -> (index, analytic, numeric)

    @property
    def passed(self) -> bool:
        return all(e < self.tolerance for e in self.errors.values())

    def failures(self):
        return {k: v for k, v in self.errors.items() if not v < self.tolerance}

    def lines(self):
        for name, err in self.errors.items():
            status = "PASS" if err < self.tolerance else "FAIL"
            idx, a, n = self.worst[name]
            yield f"{self.op:<18} {name:<12} rel_err={err:.2e}  {status}  worst{idx}: {a:.6g} vs {n:.6g}"


def numeric_grad(loss, x, eps=1e-6):
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + eps
        hi = loss()
        x[i] = old - eps
        lo = loss()
        x[i] = old
        g[i] = (hi - lo) / (2 * eps)
    return g


def _relu_margin(*arrays):
    return min(float(np.min(np.abs(a))) for a in arrays if np.size(a))


@register("receive_update")
def _receive_update(rng):
    n, N, d, d_out, R = 3, 4, 5, 5, 3
    t = {
        "recv": rng.normal(size=(n, d)), "send": rng.normal(size=(n, N, d)),
        "dense_w": rng.normal(size=(d_out, 2 * d)), "dense_b": rng.normal(size=d_out),
    }
    mask = (rng.random((R, d)) < 0.6).astype(float)
    pool = np.full((n, N), 1.0 / N)
    r = rng.normal(size=(n, d_out))

    def fwd():
        out, cache = layer_forward(t["recv"], t["send"], pool, mask, t, attention=False)
        return out, cache

    def grads():
        out, cache = fwd()
        drecv, dsend, _, g = layer_backward(r, cache, t)
        return {"recv": drecv, "send": dsend, "dense_w": g["dense_w"], "dense_b": g["dense_b"]}

    return Instance(t, lambda: float(np.sum(r * fwd()[0])), grads, lambda: _relu_margin(fwd()[1]["y"]))


@register("attention_softmax")
def _attention(rng):
    n, N, d, d_out, R, at = 2, 3, 4, 3, 4, 3
    t = {
        "recv": rng.normal(size=(n, d)), "send": rng.normal(size=(n, N, d)),
        "att_w": rng.normal(size=(at, 2 * d)), "att_b": rng.normal(size=at), "att_h": rng.normal(size=at),
        "dense_w": rng.normal(size=(d_out, 2 * d)), "dense_b": rng.normal(size=d_out),
    }
    mask = (rng.random((R, d)) < 0.6).astype(float)
    mask[:, 0] = 1.0
    pool = rng.dirichlet(np.ones(N), size=n)
    r = rng.normal(size=(n, d_out))

    def fwd():
        return layer_forward(t["recv"], t["send"], pool, mask, t, attention=True)

    def grads():
        _, cache = fwd()
        drecv, dsend, _, g = layer_backward(r, cache, t)
        return {"recv": drecv, "send": dsend, **g}

    def margin():
        _, cache = fwd()
        return _relu_margin(cache["y"], cache["z"])

    return Instance(t, lambda: float(np.sum(r * fwd()[0])), grads, margin)


@register("bpr_loss")
def _bpr(rng):
    t = {"user": rng.normal(size=4), "pos": rng.normal(size=4), "neg": rng.normal(size=4)}

    def grads():
        _, du, dp, dn = bpr_loss(t["user"], t["pos"], t["neg"])
        return {"user": du, "pos": dp, "neg": dn}

    return Instance(t, lambda: float(bpr_loss(t["user"], t["pos"], t["neg"])[0]), grads, lambda: np.inf)


def toy_problem(rng, num_nodes=6, dims=(4, 3, 3), num_categories=2, attention_dim=3, items=5,
                variant="full", scale=0.7):
    """A small fully-specified multi-task problem used by the end-to-end check."""
    edges = [(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (5, 0), (0, 3), (1, 4)][: max(num_nodes, 2)]
    edges = [(a % num_nodes, b % num_nodes) for a, b in edges]
    graph = SocialGraph.from_edges(num_nodes, edges)
    cats = [f"c{c}" for c in range(num_categories)]
    params = init_params(dims, num_nodes, [items] * num_categories, cats, attention_dim, rng,
                         variant=variant, init_std=scale)
    for name, arr in params.tensors.items():
        if name.startswith(("att_b", "dense_b")):
            arr[...] = rng.normal(0.2, scale, size=arr.shape)
        elif params.is_mask(name) and variant in ("full", "mcne_a"):
            # dense, distinct rows keep every path alive
            while True:
                bits = rng.random(arr.shape) < 0.7
                if bits.any(axis=1).all() and len({r.tobytes() for r in bits}) == len(bits):
                    break
            arr[...] = np.where(bits, 0.5, -0.5)
    targets = np.arange(num_nodes)
    hood = sample_neighborhood(graph, targets, [1] * (len(dims) - 1), full=True)
    triplets = {}
    for c in range(num_categories):
        b = np.repeat(targets, 2)
        pos = rng.integers(0, items // 2 + 1, size=len(b))
        neg = rng.integers(items // 2 + 1, items, size=len(b))
        triplets[c] = np.stack([b, pos, neg], axis=1)
    return graph, params, hood, triplets


@register("end_to_end")
def _end_to_end(rng, reg=1e-4):
    _, params, hood, triplets = toy_problem(rng)
    names = [n for n in params.trainable() if not params.is_mask(n)]

    def loss():
        return batch_loss(params, hood, triplets, reg)[0]

    def grads():
        buf = GradBuffer(params)
        batch_loss(params, hood, triplets, reg, buf)
        return {n: buf[n] for n in names}

    def margin():
        _, _, cache = batch_loss(params, hood, triplets, reg)
        arrays = []
        for layer in cache["caches"]:
            for c in layer:
                arrays.append(c["y"])
                if "z" in c:
                    arrays.append(c["z"][c["pool"] > 0])
        return _relu_margin(*arrays)

    return Instance({n: params.tensors[n] for n in names}, loss, grads, margin)


def grad_check(op_name, rng=None, epsilon=1e-6, tolerance=1e-4, max_tries=100, raise_on_fail=False):
    """Compare analytic and central-difference gradients for ``op_name``.

    The relative error of each tensor is ``|g_a - g_n| / max(|g_a|, |g_n|)``
    in the Euclidean norm.
    """
    if op_name not in REGISTRY:
        raise KeyError(f"unknown operation {op_name!r}; known: {sorted(REGISTRY)}")
    rng = np.random.default_rng(rng)
    for _ in range(max_tries):
        inst = REGISTRY[op_name](rng)
        if inst.kink_distance() <= KINK_MARGIN:
            continue
        analytic = inst.grads()
        # a tensor with no gradient at all would pass vacuously
        if min(np.linalg.norm(g) for g in analytic.values()) > 1e-8:
            break
    else:
        raise GradCheckError(f"{op_name}: could not draw a kink-free, non-degenerate instance")
    report = GradCheckReport(op_name, tolerance)
    for name, x in inst.tensors.items():
        num = numeric_grad(inst.loss, x, epsilon)
        a = analytic[name]
        denom = max(np.linalg.norm(a), np.linalg.norm(num), 1e-300)
        report.errors[name] = float(np.linalg.norm(a - num) / denom)
        idx = np.unravel_index(int(np.argmax(np.abs(a - num))), a.shape) if a.ndim else ()
        report.worst[name] = (idx, float(a[idx]), float(num[idx]))
    if raise_on_fail and not report.passed:
        name, err = max(report.failures().items(), key=lambda kv: kv[1])
        idx, a, n = report.worst[name]
        raise GradCheckError(f"{op_name}: {name} rel_err={err:.3e} > {tolerance:g}; "
                             f"worst coordinate {idx}: analytic {a:.6g} numeric {n:.6g}")
    return report


def run_all(seed=0, epsilon=1e-6, tolerance=1e-4):
    return [grad_check(name, np.random.default_rng([seed, i]), epsilon, tolerance)
            for i, name in enumerate(REGISTRY)]
