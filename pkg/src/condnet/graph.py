"""Social graph and behavior-record storage, activity filtering and splits.

Node and item ids are dense integers internally.  The original string ids
are kept alongside (``node_ids`` / ``item_ids``) and are what gets written
back to disk, so a saved dataset reloads to identical structures.
"""

from __future__ import annotations

import csv
import logging
import os
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from .exceptions import (
    EmptyDatasetError,
    EmptyGraphError,
    ParseError,
    ReferentialIntegrityError,
)

logger = logging.getLogger(__name__)

FOLDS = ("train", "validation", "test")


def _sorted_ids(ids):
    ids = set(ids)
    try:
        return sorted(ids, key=int)
    except ValueError:
        return sorted(ids)


def _read_pairs(path):
    pairs = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            parts = stripped.split()
            if len(parts) != 2:
                raise ParseError(path, lineno, f"expected 2 fields, got {len(parts)}: {stripped!r}")
            pairs.append((parts[0], parts[1]))
    return pairs


@dataclass(frozen=True, eq=False)
class SocialGraph:
    """Undirected, unweighted graph in CSR form (sorted neighbor lists)."""

    indptr: np.ndarray
    indices: np.ndarray
    node_ids: np.ndarray

    @property
    def num_nodes(self) -> int:
        return len(self.indptr) - 1

    @property
    def num_edges(self) -> int:
        return len(self.indices) // 2

    def degree(self, node=None):
        deg = np.diff(self.indptr)
        return deg if node is None else int(deg[node])

    def neighbors(self, node: int) -> np.ndarray:
        return self.indices[self.indptr[node]:self.indptr[node + 1]]

    def edges(self) -> np.ndarray:
        """Each undirected edge once, as ``(i, j)`` with ``i < j``."""
        src = np.repeat(np.arange(self.num_nodes), self.degree())
        keep = src < self.indices
        return np.stack([src[keep], self.indices[keep]], axis=1)

    @classmethod
    def from_edges(cls, num_nodes, edges, node_ids=None) -> "SocialGraph":
        edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        if edges.size and (edges.min() < 0 or edges.max() >= num_nodes):
            raise ValueError("edge endpoint out of range")
        edges = edges[edges[:, 0] != edges[:, 1]]
        both = np.concatenate([edges, edges[:, ::-1]])
        both = np.unique(both, axis=0) if len(both) else both.reshape(0, 2)
        counts = np.bincount(both[:, 0], minlength=num_nodes) if len(both) else np.zeros(num_nodes, np.int64)
        indptr = np.zeros(num_nodes + 1, dtype=np.int64)
        np.cumsum(counts, out=indptr[1:])
        indices = both[:, 1].astype(np.int64) if len(both) else np.zeros(0, np.int64)
        if node_ids is None:
            node_ids = np.array([str(i) for i in range(num_nodes)])
        return cls(indptr=indptr, indices=indices, node_ids=np.asarray(node_ids, dtype=str))

    def subgraph(self, keep: np.ndarray) -> "SocialGraph":
        """Induced subgraph on the boolean ``keep`` mask, re-indexed densely."""
        new_index = np.full(self.num_nodes, -1, dtype=np.int64)
        new_index[keep] = np.arange(int(keep.sum()))
        e = self.edges()
        e = e[keep[e[:, 0]] & keep[e[:, 1]]]
        return SocialGraph.from_edges(int(keep.sum()), new_index[e], self.node_ids[keep])

    def __eq__(self, other):
        if not isinstance(other, SocialGraph):
            return NotImplemented
        return (np.array_equal(self.indptr, other.indptr)
                and np.array_equal(self.indices, other.indices)
                and np.array_equal(self.node_ids, other.node_ids))


@dataclass(frozen=True, eq=False)
class BehaviorRecords:
    """Per-category sets of (user, item) interactions.

    ``interactions[c]`` is an ``(n, 2)`` int array of unique, lexicographically
    sorted ``(user, item)`` rows.
    """

    categories: list
    num_items: list
    interactions: list
    item_ids: list = field(default_factory=list)

    @property
    def num_categories(self) -> int:
        return len(self.categories)

    def index(self, category) -> int:
        if isinstance(category, (int, np.integer)):
            return int(category)
        return self.categories.index(category)

    def user_items(self, c: int) -> dict:
        """Map user -> set of items for category ``c``."""
        out = {}
        for u, i in self.interactions[c]:
            out.setdefault(int(u), set()).add(int(i))
        return out

    def records_per_user(self, num_nodes: int) -> np.ndarray:
        total = np.zeros(num_nodes, dtype=np.int64)
        for pairs in self.interactions:
            if len(pairs):
                total += np.bincount(pairs[:, 0], minlength=num_nodes)
        return total

    def __eq__(self, other):
        if not isinstance(other, BehaviorRecords):
            return NotImplemented
        return (list(self.categories) == list(other.categories)
                and list(self.num_items) == list(other.num_items)
                and all(np.array_equal(a, b) for a, b in zip(self.interactions, other.interactions))
                and all(np.array_equal(a, b) for a, b in zip(self.item_ids, other.item_ids)))


def _unique_pairs(pairs):
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    if not len(pairs):
        return pairs
    return np.unique(pairs, axis=0)


def make_records(categories, num_items, interactions, item_ids=None) -> BehaviorRecords:
    interactions = [_unique_pairs(p) for p in interactions]
    if item_ids is None:
        item_ids = [np.array([str(i) for i in range(m)]) for m in num_items]
    for name, m, pairs in zip(categories, num_items, interactions):
        if len(pairs) and (pairs[:, 1].min() < 0 or pairs[:, 1].max() >= m):
            raise ReferentialIntegrityError(f"item id out of range in category {name!r}")
    return BehaviorRecords(list(categories), [int(m) for m in num_items], interactions,
                           [np.asarray(x, dtype=str) for x in item_ids])


def load_edge_list(path) -> SocialGraph:
    pairs = _read_pairs(path)
    if not pairs:
        raise EmptyGraphError(f"{path}: no edges")
    ids = _sorted_ids(x for p in pairs for x in p)
    lookup = {v: i for i, v in enumerate(ids)}
    edges = np.array([(lookup[a], lookup[b]) for a, b in pairs], dtype=np.int64)
    return SocialGraph.from_edges(len(ids), edges, np.array(ids, dtype=str))


def load_behavior_records(paths, graph: SocialGraph, catalogs=None) -> BehaviorRecords:
    """Load one ``user item`` file per category.

    ``paths`` maps category name to file (a plain list uses file stems as
    names).  ``catalogs`` optionally maps category to a file listing the full
    item catalog, one id per line, so items without interactions survive.
    """
    if not isinstance(paths, dict):
        paths = {Path(p).stem: p for p in paths}
    catalogs = catalogs or {}
    node_lookup = {v: i for i, v in enumerate(graph.node_ids)}
    names, counts, inter, item_ids = [], [], [], []
    for name, path in paths.items():
        pairs = _read_pairs(path)
        items = {i for _, i in pairs}
        if name in catalogs:
            with open(catalogs[name]) as fh:
                items.update(line.strip() for line in fh if line.strip())
        ids = _sorted_ids(items)
        item_lookup = {v: i for i, v in enumerate(ids)}
        rows = []
        for u, i in pairs:
            if u not in node_lookup:
                raise ReferentialIntegrityError(f"{path}: user {u!r} is not in the social graph")
            rows.append((node_lookup[u], item_lookup[i]))
        names.append(name)
        counts.append(len(ids))
        inter.append(rows)
        item_ids.append(np.array(ids, dtype=str))
    return make_records(names, counts, inter, item_ids)


def filter_min_activity(graph: SocialGraph, records: BehaviorRecords, min_links: int, min_records: int):
    """Drop users with fewer than ``min_links`` neighbors or ``min_records``
    interactions (summed over categories), repeating until nothing changes.

    The item catalogs are left untouched.
    """
    if min_links < 0 or min_records < 0:
        raise ValueError("thresholds must be non-negative")
    n = graph.num_nodes
    alive = np.ones(n, dtype=bool)
    rec = records.records_per_user(n)
    src = np.repeat(np.arange(n), graph.degree())
    while True:
        live_edge = alive[src] & alive[graph.indices]
        deg = np.bincount(src[live_edge], minlength=n)
        drop = alive & ((deg < min_links) | (rec < min_records))
        if not drop.any():
            break
        alive &= ~drop
    if not alive.any():
        raise EmptyDatasetError("every user was removed by activity filtering")
    new_graph = graph.subgraph(alive)
    new_index = np.full(n, -1, dtype=np.int64)
    new_index[alive] = np.arange(int(alive.sum()))
    inter = []
    for pairs in records.interactions:
        kept = pairs[alive[pairs[:, 0]]] if len(pairs) else pairs
        inter.append(np.stack([new_index[kept[:, 0]], kept[:, 1]], axis=1) if len(kept) else kept)
    return new_graph, make_records(records.categories, records.num_items, inter, records.item_ids)


@dataclass(frozen=True, eq=False)
class DatasetSplit:
    """Per-category train/validation/test interaction arrays."""

    train: list
    validation: list
    test: list
    seed: int

    def fold(self, name: str) -> list:
        return {"train": self.train, "validation": self.validation, "test": self.test}[name]

    def __eq__(self, other):
        if not isinstance(other, DatasetSplit):
            return NotImplemented
        return all(
            all(np.array_equal(a, b) for a, b in zip(self.fold(f), other.fold(f)))
            for f in FOLDS
        )


def _fold_sizes(n, ratios):
    """Largest-remainder apportionment of ``n`` items (train floor of 1)."""
    exact = [r * n for r in ratios]
    sizes = [int(x) for x in exact]
    rest = n - sum(sizes)
    # ties go to test, then validation, then train
    order = sorted(range(3), key=lambda k: (-(exact[k] - sizes[k]), -k))
    for k in order[:rest]:
        sizes[k] += 1
    if n and sizes[0] == 0:
        donor = 2 if sizes[2] else 1
        sizes[donor] -= 1
        sizes[0] += 1
    return sizes


def split_dataset(records: BehaviorRecords, ratios=(0.7, 0.1, 0.2), seed: int = 0) -> DatasetSplit:
    """Seeded split of every category, apportioned separately per user."""
    fr = [Fraction(str(r)) for r in ratios]
    if len(fr) != 3 or sum(fr) != 1 or min(fr) < 0:
        raise ValueError(f"ratios must be three non-negative numbers summing to 1, got {ratios}")
    rng = np.random.default_rng(seed)
    folds = {f: [] for f in FOLDS}
    for name, pairs in zip(records.categories, records.interactions):
        keys = rng.random(len(pairs))
        if len(pairs) < 3:
            logger.warning("category %r has %d interactions; all placed in train", name, len(pairs))
            folds["train"].append(pairs.copy())
            folds["validation"].append(pairs[:0].copy())
            folds["test"].append(pairs[:0].copy())
            continue
        order = np.lexsort((keys, pairs[:, 0]))
        shuffled = pairs[order]
        users, starts, counts = np.unique(shuffled[:, 0], return_index=True, return_counts=True)
        assign = np.empty(len(pairs), dtype=np.int64)
        for start, count in zip(starts, counts):
            s = _fold_sizes(int(count), fr)
            assign[start:start + s[0]] = 0
            assign[start + s[0]:start + s[0] + s[1]] = 1
            assign[start + s[0] + s[1]:start + count] = 2
        for k, f in enumerate(FOLDS):
            part = shuffled[assign == k]
            folds[f].append(part[np.lexsort((part[:, 1], part[:, 0]))] if len(part) else part)
    return DatasetSplit(folds["train"], folds["validation"], folds["test"], seed)


def write_split_manifest(path, split: DatasetSplit, graph: SocialGraph, records: BehaviorRecords):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["category", "user", "item", "fold"])
        for c, name in enumerate(records.categories):
            for fold in FOLDS:
                for u, i in split.fold(fold)[c]:
                    w.writerow([name, graph.node_ids[u], records.item_ids[c][i], fold])


def read_split_manifest(path, graph: SocialGraph, records: BehaviorRecords, seed: int = -1) -> DatasetSplit:
    node_lookup = {v: i for i, v in enumerate(graph.node_ids)}
    item_lookup = [{v: i for i, v in enumerate(ids)} for ids in records.item_ids]
    rows = {f: [[] for _ in records.categories] for f in FOLDS}
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.DictReader(fh), 2):
            try:
                c = records.categories.index(row["category"])
                pair = (node_lookup[row["user"]], item_lookup[c][row["item"]])
                rows[row["fold"]][c].append(pair)
            except (KeyError, ValueError) as exc:
                raise ParseError(path, lineno, f"unknown entry {exc}") from None
    arrays = {f: [_unique_pairs(p) for p in rows[f]] for f in FOLDS}
    return DatasetSplit(arrays["train"], arrays["validation"], arrays["test"], seed)


def save_dataset(directory, graph: SocialGraph, records: BehaviorRecords):
    """Write ``edges.txt`` plus ``behavior/<category>.txt`` and ``.items``
    catalogs.  Isolated nodes are written as self-loops so they survive."""
    directory = Path(directory)
    (directory / "behavior").mkdir(parents=True, exist_ok=True)
    with open(directory / "edges.txt", "w") as fh:
        for i, j in graph.edges():
            fh.write(f"{graph.node_ids[i]} {graph.node_ids[j]}\n")
        for i in np.flatnonzero(graph.degree() == 0):
            fh.write(f"{graph.node_ids[i]} {graph.node_ids[i]}\n")
    for c, name in enumerate(records.categories):
        with open(directory / "behavior" / f"{name}.txt", "w") as fh:
            for u, i in records.interactions[c]:
                fh.write(f"{graph.node_ids[u]} {records.item_ids[c][i]}\n")
        with open(directory / "behavior" / f"{name}.items", "w") as fh:
            fh.writelines(f"{x}\n" for x in records.item_ids[c])
    with open(directory / "categories.txt", "w") as fh:
        fh.writelines(f"{name}\n" for name in records.categories)


def load_dataset(directory):
    directory = Path(directory)
    graph = load_edge_list(directory / "edges.txt")
    with open(directory / "categories.txt") as fh:
        names = [line.strip() for line in fh if line.strip()]
    paths = {n: directory / "behavior" / f"{n}.txt" for n in names}
    catalogs = {n: directory / "behavior" / f"{n}.items" for n in names
                if os.path.exists(directory / "behavior" / f"{n}.items")}
    return graph, load_behavior_records(paths, graph, catalogs)
