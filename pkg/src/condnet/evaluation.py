"""Sampled-negative ranking evaluation (Recall@K, NDCG@K).

Each held-out interaction is ranked against ``count`` items the user never
interacted with.  Ties are resolved pessimistically: the held-out item goes
after every negative with an equal score.  Metrics are averaged per
interaction.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .exceptions import EmptyDatasetError
from .propagation import category_views, embed_all

DEFAULT_KS = (5, 10, 20)


def sample_eval_negatives(user, category, interacted, num_items, count=100, seed=0, test_item=0,
                          candidates=None):
    """Up to ``count`` distinct items outside ``interacted``.

    The draw depends only on ``(seed, category, user, test_item)``.  Returns
    ``(items, shrunk)`` where ``shrunk`` flags a list shorter than ``count``.
    """
    if candidates is None:
        candidates = np.setdiff1d(np.arange(num_items), np.fromiter(interacted, dtype=np.int64))
    rng = np.random.default_rng([int(seed), int(category), int(user), int(test_item)])
    if len(candidates) <= count:
        return rng.permutation(candidates), len(candidates) < count
    return rng.choice(candidates, size=count, replace=False), False


def rank_and_score(user_vec, test_item, negatives, item_embeddings):
    """1-based rank of ``test_item`` among itself and ``negatives``."""
    s = item_embeddings[test_item] @ user_vec
    neg = item_embeddings[np.asarray(negatives, dtype=np.int64)] @ user_vec
    return 1 + int(np.count_nonzero(neg >= s))


def recall_at_k(rank, k):
    return 1.0 if rank <= k else 0.0


def ndcg_at_k(rank, k):
    # one relevant item, so the ideal DCG is 1
    return 1.0 / np.log2(rank + 1.0) if rank <= k else 0.0


def random_recall(list_sizes, k):
    """Expected Recall@k of a uniformly random ranking given the number of
    negatives in each list."""
    n = np.asarray(list_sizes, dtype=np.float64) + 1.0
    return float(np.mean(np.minimum(k, n) / n))


@dataclass
class EvalResult:
    categories: list
    ks: tuple
    recall: dict
    ndcg: dict
    recall_std: dict
    ndcg_std: dict
    counts: dict
    runs: int
    seed: int
    list_sizes: dict = field(default_factory=dict)

    def rows(self):
        for c in self.categories:
            for metric, mean, std in (("recall", self.recall, self.recall_std),
                                      ("ndcg", self.ndcg, self.ndcg_std)):
                for k in self.ks:
                    yield c, metric, k, mean[c][k], std[c][k], self.runs

    def mean(self, metric="recall", k=5) -> float:
        table = self.recall if metric == "recall" else self.ndcg
        return float(np.mean([table[c][k] for c in self.categories]))

    def random_baseline(self, k=5) -> dict:
        return {c: random_recall(self.list_sizes[c], k) for c in self.categories}

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["category", "metric", "K", "mean", "stddev", "runs"])
            for c, metric, k, mean, std, runs in self.rows():
                w.writerow([c, metric, k, f"{mean:.6f}", f"{std:.6f}", runs])


def _interacted(records, c):
    """Every item the user touched in category ``c`` (all folds)."""
    out = {}
    for u, i in records.interactions[c]:
        out.setdefault(int(u), set()).add(int(i))
    return out


def rank_fold(user_views, item_tables, records, split, fold="test", count=100, seed=0,
              categories=None):
    """Ranks of every interaction in ``fold``.

    ``user_views[c]`` is the (|V|, d) conditional embedding matrix for
    category ``c``.  Returns ``{c: (ranks, list_sizes)}``.
    """
    categories = range(records.num_categories) if categories is None else categories
    out = {}
    for c in categories:
        pairs = split.fold(fold)[c]
        touched = _interacted(records, c)
        cand_cache = {}
        ranks = np.empty(len(pairs), dtype=np.int64)
        sizes = np.empty(len(pairs), dtype=np.int64)
        for r, (u, i) in enumerate(pairs):
            u, i = int(u), int(i)
            if u not in cand_cache:
                cand_cache[u] = np.setdiff1d(np.arange(records.num_items[c]),
                                             np.fromiter(touched[u], dtype=np.int64))
            negs, _ = sample_eval_negatives(u, c, touched[u], records.num_items[c], count, seed, i,
                                            candidates=cand_cache[u])
            ranks[r] = rank_and_score(user_views[c][u], i, negs, item_tables[c])
            sizes[r] = len(negs)
        out[c] = (ranks, sizes)
    return out


def metrics_from_ranks(ranks, ks=DEFAULT_KS):
    ranks = np.asarray(ranks)
    rec = {k: float(np.mean(ranks <= k)) for k in ks}
    ndcg = {k: float(np.mean(np.where(ranks <= k, 1.0 / np.log2(ranks + 1.0), 0.0))) for k in ks}
    return rec, ndcg


def model_views(params, graph, fanouts=None, rng=None):
    """Conditional user embeddings and item tables for every category."""
    final = embed_all(params, graph, fanouts, rng)
    views = category_views(params, final)
    items = [params[f"items.{c}"] for c in range(params.num_categories)]
    return views, items


def evaluate_views(user_views, item_tables, records, split, fold="test", runs=1, seed=0,
                   ks=DEFAULT_KS, count=100, categories=None) -> EvalResult:
    categories = list(range(records.num_categories)) if categories is None else list(categories)
    if all(len(split.fold(fold)[c]) == 0 for c in categories):
        raise EmptyDatasetError(f"no {fold} interactions to evaluate")
    per_run = []
    sizes = {}
    for r in range(runs):
        ranked = rank_fold(user_views, item_tables, records, split, fold, count, seed + r, categories)
        per_run.append({c: metrics_from_ranks(ranked[c][0], ks) for c in categories})
        if r == 0:
            sizes = {records.categories[c]: ranked[c][1] for c in categories}
    names = [records.categories[c] for c in categories]
    rec, nd, rec_sd, nd_sd = {}, {}, {}, {}
    ddof = 1 if runs > 1 else 0
    for c, name in zip(categories, names):
        rec[name] = {k: float(np.mean([pr[c][0][k] for pr in per_run])) for k in ks}
        nd[name] = {k: float(np.mean([pr[c][1][k] for pr in per_run])) for k in ks}
        rec_sd[name] = {k: float(np.std([pr[c][0][k] for pr in per_run], ddof=ddof)) for k in ks}
        nd_sd[name] = {k: float(np.std([pr[c][1][k] for pr in per_run], ddof=ddof)) for k in ks}
    counts = {records.categories[c]: int(len(split.fold(fold)[c])) for c in categories}
    return EvalResult(names, tuple(ks), rec, nd, rec_sd, nd_sd, counts, runs, seed, sizes)


def evaluate(params, graph, records, split, fold="test", runs=1, seed=0, ks=DEFAULT_KS, count=100,
             fanouts=None, categories=None) -> EvalResult:
    """Evaluate a trained model on ``fold``; ``runs`` repeats the negative
    sampling with seeds ``seed .. seed+runs-1``."""
    views, items = model_views(params, graph, fanouts, seed)
    return evaluate_views(views, items, records, split, fold, runs, seed, ks, count, categories)
