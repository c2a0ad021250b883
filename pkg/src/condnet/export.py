"""Plain-text exports of embeddings and binary masks."""

from __future__ import annotations

import csv
import logging
from pathlib import Path

import numpy as np

from .masks import binarize
from .propagation import category_views, embed_all

logger = logging.getLogger(__name__)


def _fmt(x):
    return format(float(x), ".10g")


def row_labels(params):
    """Label of every mask row: category names, ``other`` for the spare row."""
    labels = ["other"] * params.mask_rows(0).shape[0]
    for name, row in zip(params.categories, params.category_rows):
        labels[row] = name
    return labels


def export_embeddings(params, graph, out_dir, fanouts=None, seed=0):
    """One TSV per category (``node_id, category, d_K values``) plus
    ``embeddings_all.tsv`` holding the unmasked final embeddings."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    final = embed_all(params, graph, fanouts, seed)
    last = binarize(params.mask_rows(params.num_layers))
    for name, row in zip(params.categories, params.category_rows):
        if not last[row].any():
            logger.warning("category %r has an all-zero final mask; its embedding is all zeros", name)
    paths = []
    tables = [("all", final)] + list(zip(params.categories, category_views(params, final)))
    for name, table in tables:
        path = out_dir / f"embeddings_{name}.tsv"
        with open(path, "w") as fh:
            for node, vec in zip(graph.node_ids, table):
                fh.write("\t".join([str(node), name] + [_fmt(v) for v in vec]) + "\n")
        paths.append(path)
    return paths


def export_masks(params, out_dir):
    """``masks_layer<k>.csv``: one 0/1 row per mask row with its label and
    its count of active dimensions."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    labels = row_labels(params)
    paths = []
    for k in range(params.num_layers + 1):
        mask = binarize(params.mask_rows(k)).astype(np.int64)
        path = out_dir / f"masks_layer{k}.csv"
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["row", "active"] + [f"d{j}" for j in range(mask.shape[1])])
            for label, bits in zip(labels, mask):
                w.writerow([label, int(bits.sum())] + bits.tolist())
        paths.append(path)
    return paths


def read_mask_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    labels = [r[0] for r in rows[1:]]
    active = [int(r[1]) for r in rows[1:]]
    bits = np.array([[int(x) for x in r[2:]] for r in rows[1:]], dtype=np.int64)
    return labels, active, bits
