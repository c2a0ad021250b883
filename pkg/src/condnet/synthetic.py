"""Planted multi-aspect community generator.

Every node gets an independent community label per category.  Two nodes
are linked with probability ``p_out + (p_in - p_out) * shared / C`` where
``shared`` counts the categories in which they share a community, so the
graph mixes all aspects.  In each category a node consumes items of its own
community (Zipf popularity within the community), except that a ``noise``
fraction of picks is uniform over the whole catalog.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .exceptions import ConfigError
from .graph import SocialGraph, make_records, save_dataset


@dataclass
class SyntheticData:
    graph: object
    records: object
    labels: np.ndarray  # (C, num_nodes) community label per category


def synth_gen(num_nodes=400, num_categories=2, communities_per_category=2, items_per_community=50,
              p_in=0.05, p_out=0.005, seed=0, noise=0.05, interactions_per_category=10,
              popularity_exponent=1.0) -> SyntheticData:
    if num_nodes < 2 or num_categories < 1 or communities_per_category < 1 or items_per_community < 1:
        raise ConfigError("degenerate generator sizes")
    if not 0 <= p_out < p_in <= 1:
        raise ConfigError(f"need 0 <= p_out < p_in <= 1, got p_in={p_in}, p_out={p_out}")
    if not 0 <= noise <= 1:
        raise ConfigError("noise must lie in [0, 1]")
    if not 0 < interactions_per_category <= items_per_community:
        raise ConfigError("interactions_per_category must be in 1..items_per_community")
    rng = np.random.default_rng(seed)
    n, C, G = num_nodes, num_categories, communities_per_category
    labels = rng.integers(0, G, size=(C, n))

    shared = np.zeros((n, n))
    for c in range(C):
        shared += labels[c][:, None] == labels[c][None, :]
    prob = p_out + (p_in - p_out) * shared / C
    draw = rng.random((n, n))
    iu, ju = np.triu_indices(n, k=1)
    hit = draw[iu, ju] < prob[iu, ju]
    graph = SocialGraph.from_edges(n, np.stack([iu[hit], ju[hit]], axis=1))

    pop = (np.arange(items_per_community) + 1.0) ** -popularity_exponent
    pop /= pop.sum()
    num_items = G * items_per_community
    interactions = []
    for c in range(C):
        rows = []
        for u in range(n):
            chosen = set()
            while len(chosen) < interactions_per_category:
                if rng.random() < noise:
                    item = int(rng.integers(num_items))
                else:
                    item = int(labels[c, u] * items_per_community + rng.choice(items_per_community, p=pop))
                chosen.add(item)
            rows.extend((u, i) for i in sorted(chosen))
        interactions.append(rows)
    names = [f"cat{c}" for c in range(C)]
    records = make_records(names, [num_items] * C, interactions)
    return SyntheticData(graph, records, labels)


def write_synthetic(directory, data: SyntheticData):
    directory = Path(directory)
    save_dataset(directory, data.graph, data.records)
    with open(directory / "labels.tsv", "w") as fh:
        fh.write("node\t" + "\t".join(data.records.categories) + "\n")
        for u in range(data.graph.num_nodes):
            fh.write(f"{data.graph.node_ids[u]}\t" + "\t".join(str(x) for x in data.labels[:, u]) + "\n")


def read_labels(path, graph):
    lookup = {v: i for i, v in enumerate(graph.node_ids)}
    with open(path) as fh:
        header = fh.readline().rstrip("\n").split("\t")[1:]
        labels = np.full((len(header), graph.num_nodes), -1, dtype=np.int64)
        for line in fh:
            parts = line.rstrip("\n").split("\t")
            if parts[0] in lookup:
                labels[:, lookup[parts[0]]] = [int(x) for x in parts[1:]]
    return header, labels


def nearest_centroid_accuracy(x, labels):
    """In-sample accuracy of assigning each row to the closest class mean."""
    x = np.asarray(x, dtype=np.float64)
    classes = np.unique(labels)
    cent = np.stack([x[labels == k].mean(axis=0) for k in classes])
    d = ((x[:, None, :] - cent[None]) ** 2).sum(axis=-1)
    return float(np.mean(classes[d.argmin(axis=1)] == labels))
