"""Trainable tensors, initialization, Adam and checkpoints.

Parameter tensors live in a flat ``dict`` keyed by name:

``base``               node embeddings, |V| x d_0
``mask.k``             real-valued mask for layer k, (C+1) x d_k, k = 0..K
``att_w.k``/``att_b.k``/``att_h.k``  attention network of layer k
``dense_w.k``/``dense_b.k``          receive/update layer k -> k+1
``items.c``            item embeddings of category c, M_c x d_K
``xmask.k``            extra mask rows added by transfer learning
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from .exceptions import CheckpointError, ConfigError, NonFiniteError
from .masks import fixed_disjoint_masks

VARIANTS = ("full", "mcne_a", "mcne_f", "shared")


@dataclass
class ModelParams:
    tensors: dict
    dims: list
    categories: list
    num_items: list
    attention_dim: int
    variant: str = "full"
    attention: bool = True
    category_rows: list = None
    frozen: set = field(default_factory=set)

    def __post_init__(self):
        if self.category_rows is None:
            self.category_rows = list(range(len(self.categories)))

    @property
    def num_layers(self) -> int:
        return len(self.dims) - 1

    @property
    def num_categories(self) -> int:
        return len(self.categories)

    @property
    def num_nodes(self) -> int:
        return self.tensors["base"].shape[0]

    def __getitem__(self, name):
        return self.tensors[name]

    def trainable(self) -> list:
        return [n for n in self.tensors if n not in self.frozen]

    def mask_rows(self, k: int) -> np.ndarray:
        """All real-valued mask rows of layer ``k`` (including transfer rows)."""
        m = self.tensors[f"mask.{k}"]
        extra = self.tensors.get(f"xmask.{k}")
        return m if extra is None else np.vstack([m, extra])

    def is_mask(self, name: str) -> bool:
        return name.startswith("mask.") or name.startswith("xmask.")

    def copy(self) -> "ModelParams":
        return ModelParams(
            {k: v.copy() for k, v in self.tensors.items()}, list(self.dims), list(self.categories),
            list(self.num_items), self.attention_dim, self.variant, self.attention,
            list(self.category_rows), set(self.frozen),
        )

    def checksum(self, names=None) -> str:
        h = hashlib.sha256()
        for name in sorted(names if names is not None else self.tensors):
            arr = np.ascontiguousarray(self.tensors[name])
            h.update(name.encode())
            h.update(str(arr.shape).encode())
            h.update(arr.tobytes())
        return h.hexdigest()


def init_params(dims, num_nodes, num_items, categories, attention_dim=64, rng=None,
                variant="full", init_std=0.01, mask_range=0.5) -> ModelParams:
    """Gaussian(0, init_std) weights and embeddings, zero biases, and
    Uniform(-mask_range, mask_range) real masks.

    ``variant`` selects the wiring: ``full`` (learned masks + attention),
    ``mcne_a`` (learned masks, uniform weights), ``mcne_f`` (fixed disjoint
    masks, uniform weights) or ``shared`` (all-ones masks, uniform weights,
    i.e. a single embedding per node).
    """
    dims = [int(d) for d in dims]
    if not dims or min(dims) <= 0:
        raise ConfigError(f"layer dimensions must be positive, got {dims}")
    if attention_dim <= 0 or num_nodes <= 0:
        raise ConfigError("attention_dim and num_nodes must be positive")
    if len(num_items) != len(categories) or not categories:
        raise ConfigError("need one item count per category")
    if min(num_items) <= 0:
        raise ConfigError("every category needs at least one item")
    if variant not in VARIANTS:
        raise ConfigError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
    rng = np.random.default_rng(rng)
    C1 = len(categories) + 1
    K = len(dims) - 1
    t = int(attention_dim)

    def gauss(*shape):
        return rng.normal(0.0, init_std, size=shape)

    tensors = {"base": gauss(num_nodes, dims[0])}
    frozen = set()
    for k in range(K + 1):
        if variant == "mcne_f":
            tensors[f"mask.{k}"] = 2.0 * fixed_disjoint_masks(C1 - 1, dims[k]) - 1.0
            frozen.add(f"mask.{k}")
        elif variant == "shared":
            tensors[f"mask.{k}"] = np.ones((C1, dims[k]))
            frozen.add(f"mask.{k}")
        else:
            tensors[f"mask.{k}"] = rng.uniform(-mask_range, mask_range, size=(C1, dims[k]))
    for k in range(K):
        tensors[f"att_w.{k}"] = gauss(t, 2 * dims[k])
        tensors[f"att_b.{k}"] = np.zeros(t)
        tensors[f"att_h.{k}"] = gauss(t)
        tensors[f"dense_w.{k}"] = gauss(dims[k + 1], 2 * dims[k])
        tensors[f"dense_b.{k}"] = np.zeros(dims[k + 1])
        if variant != "full":
            frozen.update({f"att_w.{k}", f"att_b.{k}", f"att_h.{k}"})
    for c, m in enumerate(num_items):
        tensors[f"items.{c}"] = gauss(int(m), dims[-1])
    return ModelParams(tensors, dims, list(categories), [int(m) for m in num_items], t,
                       variant=variant, attention=(variant == "full"), frozen=frozen)


class GradBuffer:
    """Same-shape gradient accumulators for the trainable tensors only.

    Writes addressed to frozen tensors are dropped, so their buffers stay
    exactly zero.
    """

    def __init__(self, params: ModelParams):
        self.grads = {n: np.zeros_like(params.tensors[n]) for n in params.tensors}
        self.active = set(params.trainable())

    def zero(self):
        for g in self.grads.values():
            g.fill(0.0)

    def add(self, name, grad):
        if name in self.active:
            self.grads[name] += grad

    def add_rows(self, name, rows, grad):
        if name in self.active:
            np.add.at(self.grads[name], rows, grad)

    def __getitem__(self, name):
        return self.grads[name]


class Adam:
    def __init__(self, lr=0.003, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = {}
        self.v = {}
        self.t = 0

    def step(self, params: ModelParams, grads, names=None):
        """One bias-corrected Adam update; real masks are clipped to [-1, 1]
        afterwards."""
        names = params.trainable() if names is None else list(names)
        for n in names:
            if not np.all(np.isfinite(grads[n])):
                raise NonFiniteError(n, f"non-finite gradient for parameter {n!r}; step aborted")
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for n in names:
            p, g = params.tensors[n], grads[n]
            if n not in self.m:
                self.m[n] = np.zeros_like(p)
                self.v[n] = np.zeros_like(p)
            m, v = self.m[n], self.v[n]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            if params.is_mask(n):
                np.clip(p, -1.0, 1.0, out=p)


def save_checkpoint(path, params: ModelParams, extra=None):
    meta = {
        "dims": params.dims, "categories": params.categories, "num_items": params.num_items,
        "attention_dim": params.attention_dim, "variant": params.variant,
        "attention": params.attention, "category_rows": params.category_rows,
        "frozen": sorted(params.frozen), "extra": extra or {},
    }
    arrays = {f"t:{k}": v for k, v in params.tensors.items()}
    with open(path, "wb") as fh:
        np.savez(fh, __meta__=np.array(json.dumps(meta, sort_keys=True)), **arrays)


def load_checkpoint(path, with_extra=False):
    try:
        with np.load(path, allow_pickle=False) as z:
            meta = json.loads(str(z["__meta__"]))
            tensors = {k[2:]: z[k].copy() for k in z.files if k.startswith("t:")}
    except (OSError, KeyError, ValueError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from None
    params = ModelParams(tensors, meta["dims"], meta["categories"], meta["num_items"],
                         meta["attention_dim"], meta["variant"], meta["attention"],
                         meta["category_rows"], set(meta["frozen"]))
    return (params, meta["extra"]) if with_extra else params


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()
