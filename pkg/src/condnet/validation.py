"""Input validation helpers shared by the estimator and the CLI."""

from __future__ import annotations

import numpy as np

from .exceptions import ConfigError, ReferentialIntegrityError
from .graph import FOLDS, BehaviorRecords, DatasetSplit, SocialGraph


def check_graph(graph):
    if not isinstance(graph, SocialGraph):
        raise TypeError(f"expected SocialGraph, got {type(graph).__name__}")
    n = graph.num_nodes
    if n == 0:
        raise ValueError("graph has no nodes")
    if len(graph.indices) and (graph.indices.min() < 0 or graph.indices.max() >= n):
        raise ValueError("neighbor id out of range")
    src = np.repeat(np.arange(n), graph.degree())
    if np.any(src == graph.indices):
        raise ValueError("graph contains self-loops")
    fwd = set(zip(src.tolist(), graph.indices.tolist()))
    if len(fwd) != len(src):
        raise ValueError("graph contains duplicate neighbors")
    if any((j, i) not in fwd for i, j in fwd):
        raise ValueError("graph adjacency is not symmetric")
    return graph


def check_records(records, graph):
    if not isinstance(records, BehaviorRecords):
        raise TypeError(f"expected BehaviorRecords, got {type(records).__name__}")
    if records.num_categories == 0:
        raise ValueError("no behavior categories")
    for name, m, pairs in zip(records.categories, records.num_items, records.interactions):
        if not len(pairs):
            continue
        if pairs[:, 0].min() < 0 or pairs[:, 0].max() >= graph.num_nodes:
            raise ReferentialIntegrityError(f"category {name!r} references users outside the graph")
        if pairs[:, 1].min() < 0 or pairs[:, 1].max() >= m:
            raise ReferentialIntegrityError(f"category {name!r} references items outside its catalog")
        if len(np.unique(pairs, axis=0)) != len(pairs):
            raise ValueError(f"category {name!r} has duplicate interactions")
    return records


def check_split(split, records):
    if not isinstance(split, DatasetSplit):
        raise TypeError(f"expected DatasetSplit, got {type(split).__name__}")
    for c, name in enumerate(records.categories):
        parts = [split.fold(f)[c] for f in FOLDS]
        joined = np.concatenate([p.reshape(-1, 2) for p in parts])
        if len(joined) and len(np.unique(joined, axis=0)) != len(joined):
            raise ValueError(f"folds overlap in category {name!r}")
        whole = records.interactions[c]
        if len(joined) != len(whole) or (len(whole) and not np.array_equal(
                np.unique(joined, axis=0), np.unique(whole, axis=0))):
            raise ValueError(f"folds of category {name!r} do not cover its interactions")
    return split


def check_params_match(params, graph, records):
    if params.num_nodes != graph.num_nodes:
        raise ConfigError(f"model has {params.num_nodes} nodes, graph has {graph.num_nodes}")
    for c, name in enumerate(params.categories):
        if name in records.categories:
            m = records.num_items[records.index(name)]
            if params.num_items[c] != m:
                raise ConfigError(f"category {name!r}: model has {params.num_items[c]} items, data {m}")
