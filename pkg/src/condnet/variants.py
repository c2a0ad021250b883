"""Ablation wirings and transfer to a new behavior category."""

from __future__ import annotations

import json
import logging

import numpy as np

from .evaluation import evaluate
from .exceptions import CheckpointError, CondNetError, ConfigError
from .graph import DatasetSplit, make_records
from .params import VARIANTS, ModelParams, init_params
from .training import train

logger = logging.getLogger(__name__)

KINDS = ("full", "mcne_f", "mcne_a")


def build_variant(cfg, kind, num_nodes, num_items, categories, rng=None) -> ModelParams:
    """Fresh parameters wired as ``kind``.

    ``full``: learned masks with attention.  ``mcne_a``: learned masks, every
    condition weighted 1/(C+1).  ``mcne_f``: fixed disjoint masks and uniform
    weights.  ``shared`` (baseline): all-ones masks, i.e. one embedding per
    node reused by every category.
    """
    if kind not in VARIANTS:
        raise ConfigError(f"unknown variant {kind!r}; expected one of {VARIANTS}")
    rng = cfg.seed if rng is None else rng
    return init_params(cfg.dims, num_nodes, num_items, categories, cfg.attention_dim, rng,
                       variant=kind, init_std=cfg.init_std, mask_range=cfg.mask_init_range)


def extend_for_category(params: ModelParams, name, num_items, rng=None, init_std=0.01,
                        mask_range=0.5) -> ModelParams:
    """Copy of ``params`` with one new mask row per layer and a new item
    table for ``name``.  Everything that existed before is frozen and the
    attention network is switched off (uniform weights over all rows)."""
    if name in params.categories:
        raise ConfigError(f"category {name!r} already exists in the model")
    rng = np.random.default_rng(rng)
    p = params.copy()
    p.frozen = set(p.tensors)
    p.attention = False
    for k in range(p.num_layers + 1):
        if f"xmask.{k}" in p.tensors:
            raise ConfigError("model already carries transfer rows; transfer one category at a time")
        p.tensors[f"xmask.{k}"] = rng.uniform(-mask_range, mask_range, size=(1, p.dims[k]))
    c = p.num_categories
    p.tensors[f"items.{c}"] = rng.normal(0.0, init_std, size=(int(num_items), p.dims[-1]))
    p.categories.append(name)
    p.num_items.append(int(num_items))
    p.category_rows.append(p["mask.0"].shape[0])
    return p


def align_category(params: ModelParams, records, split, name):
    """Records/split indexed like ``params`` extended by ``name`` (old
    categories present but empty)."""
    src = records.index(name)
    C = params.num_categories
    empty = np.zeros((0, 2), dtype=np.int64)
    rec = make_records(params.categories + [name], params.num_items + [records.num_items[src]],
                       [empty] * C + [records.interactions[src]],
                       [np.array([str(i) for i in range(m)]) for m in params.num_items] + [records.item_ids[src]])
    folds = [[empty] * C + [split.fold(f)[src]] for f in ("train", "validation", "test")]
    return rec, DatasetSplit(*folds, seed=split.seed)


def transfer_new_category(params: ModelParams, graph, records, split, name, cfg, buf=None):
    """Adapt a trained model to category ``name`` by training only the new
    mask rows and item embeddings.

    Returns ``(new_params, history, test_result)``.  Raises if any frozen
    tensor changed during training.
    """
    ext = extend_for_category(params, name, records.num_items[records.index(name)],
                              np.random.default_rng([cfg.seed, 7]), cfg.init_std, cfg.mask_init_range)
    frozen = sorted(ext.frozen)
    before = ext.checksum(frozen)
    rec, sp = align_category(params, records, split, name)
    c = ext.num_categories - 1
    best, history = train(ext, graph, rec, sp, cfg, categories=[c], buf=buf)
    if best.checksum(frozen) != before or ext.checksum(frozen) != before:
        raise CondNetError("frozen tensors changed during transfer training")
    result = evaluate(best, graph, rec, sp, "test", 1, cfg.seed, count=cfg.eval_negatives,
                      categories=[c])
    return best, history, result


def transfer_trainable_count(params: ModelParams) -> int:
    return int(sum(params[n].size for n in params.trainable()))


def save_transfer(path, base: ModelParams, extended: ModelParams):
    """Store only the tensors added by transfer plus the base model's id."""
    new = [n for n in extended.tensors if n not in base.tensors]
    meta = {"base_id": base.checksum(), "category": extended.categories[-1],
            "num_items": extended.num_items[-1]}
    with open(path, "wb") as fh:
        np.savez(fh, __meta__=np.array(json.dumps(meta, sort_keys=True)),
                 **{f"t:{n}": extended[n] for n in new})


def load_transfer(path, base: ModelParams) -> ModelParams:
    with np.load(path, allow_pickle=False) as z:
        meta = json.loads(str(z["__meta__"]))
        delta = {k[2:]: z[k].copy() for k in z.files if k.startswith("t:")}
    if meta["base_id"] != base.checksum():
        raise CheckpointError("transfer delta was produced from a different base checkpoint")
    p = extend_for_category(base, meta["category"], meta["num_items"])
    p.tensors.update(delta)
    return p
