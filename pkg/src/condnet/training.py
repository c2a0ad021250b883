"""Multi-task BPR training with explicit backward passes and Adam."""

from __future__ import annotations

import csv
import logging
import time

import numpy as np

from .exceptions import NonFiniteError
from .evaluation import evaluate_views, model_views
from .masks import binarize
from .params import Adam, GradBuffer
from .propagation import add_mask_grad, backward_batch, forward_batch, sample_neighborhood

logger = logging.getLogger(__name__)


def bpr_loss(user, pos, neg):
    """``-ln sigmoid(u.z_p - u.z_n)`` and its gradients w.r.t. u, z_p, z_n.

    Works on single vectors or on row-aligned matrices (one loss per row).
    """
    user, pos, neg = (np.asarray(a, dtype=np.float64) for a in (user, pos, neg))
    diff = np.sum(user * (pos - neg), axis=-1)
    loss = np.logaddexp(0.0, -diff)
    s = np.exp(-np.logaddexp(0.0, diff))  # sigmoid(-diff), overflow-free
    s = s[..., None] if np.ndim(s) else s
    return loss, -s * (pos - neg), -s * user, s * user


class TripletSampler:
    """Draws (user, positive, negative) triplets from a split.

    Positives come from the train fold; negatives are drawn uniformly by
    rejection from items the user never interacted with in any fold.
    """

    def __init__(self, records, split, negatives=5):
        self.negatives = int(negatives)
        self.num_items = list(records.num_items)
        self.train = []
        self.touched = []
        for c in range(records.num_categories):
            tr = {}
            for u, i in split.train[c]:
                tr.setdefault(int(u), []).append(int(i))
            self.train.append({u: np.array(v) for u, v in tr.items()})
            seen = {}
            for u, i in records.interactions[c]:
                seen.setdefault(int(u), set()).add(int(i))
            self.touched.append(seen)

    def users_with_training(self, categories=None) -> np.ndarray:
        cats = range(len(self.train)) if categories is None else categories
        users = set()
        for c in cats:
            users.update(self.train[c])
        return np.array(sorted(users), dtype=np.int64)

    def sample(self, c, users, rng):
        """Triplets ``(batch_position, positive, negative)`` for category ``c``;
        one positive per user with ``negatives`` negatives each."""
        out = []
        m = self.num_items[c]
        for b, u in enumerate(users):
            items = self.train[c].get(int(u))
            if items is None:
                continue
            seen = self.touched[c][int(u)]
            if len(seen) >= m:
                logger.warning("user %d interacted with every item of category %d; skipped", u, c)
                continue
            p = items[rng.integers(len(items))]
            negs = []
            while len(negs) < self.negatives:
                for n in rng.integers(0, m, size=2 * self.negatives):
                    if int(n) not in seen:
                        negs.append(int(n))
                        if len(negs) == self.negatives:
                            break
            out.extend((b, p, n) for n in negs)
        return np.array(out, dtype=np.int64).reshape(-1, 3)


def sample_triplets(records, split, category, users, negatives_per_positive=5, rng=None):
    """Triplets ``(user, positive, negative)`` for ``users`` in ``category``."""
    sampler = TripletSampler(records, split, negatives_per_positive)
    users = np.asarray(users, dtype=np.int64)
    trip = sampler.sample(records.index(category), users, np.random.default_rng(rng))
    if len(trip):
        trip[:, 0] = users[trip[:, 0]]
    return trip


def batch_loss(params, hood, triplets, reg=0.0, buf=None):
    """Total loss of one batch and (optionally) its gradients into ``buf``.

    ``triplets`` maps category index -> ``(batch_position, pos, neg)`` rows;
    positions index ``hood.nodes[0]``.  Category losses are means over their
    triplets; the total is their mean plus ``reg`` times the squared norm
    of the trainable tensors the batch touches.
    Returns ``(total, {category: loss}, cache)``.
    """
    final, cache = forward_batch(params, hood)
    K = params.num_layers
    mask = binarize(params.mask_rows(K))
    active = [c for c, t in triplets.items() if len(t)]
    per_cat = {}
    dfinal = np.zeros_like(final)
    dmask = np.zeros_like(mask)
    trainable = set(params.trainable())
    for c in active:
        trip = triplets[c]
        row = params.category_rows[c]
        b, p, n = trip[:, 0], trip[:, 1], trip[:, 2]
        items = params[f"items.{c}"]
        u = final[b] * mask[row]
        loss, du, dzp, dzn = bpr_loss(u, items[p], items[n])
        per_cat[c] = float(loss.mean())
        if buf is None:
            continue
        scale = 1.0 / (len(trip) * len(active))
        du *= scale
        np.add.at(dfinal, b, du * mask[row])
        dmask[row] += np.sum(du * final[b], axis=0)
        buf.add_rows(f"items.{c}", p, dzp * scale)
        buf.add_rows(f"items.{c}", n, dzn * scale)
    total = float(np.mean(list(per_cat.values()))) if per_cat else 0.0

    if reg:
        touched = {"base": hood.unique_nodes()}
        for c in active:
            touched[f"items.{c}"] = np.unique(triplets[c][:, 1:])
        for name in params.tensors:
            if name in trainable and name.split(".")[0] in ("att_w", "att_h", "dense_w"):
                touched[name] = None
        for name, rows in touched.items():
            if name not in trainable:
                continue
            theta = params[name] if rows is None else params[name][rows]
            total += reg * float(np.sum(theta * theta))
            if buf is not None:
                if rows is None:
                    buf.add(name, 2.0 * reg * theta)
                else:
                    buf.add_rows(name, rows, 2.0 * reg * theta)

    if buf is not None:
        add_mask_grad(params, buf, K, dmask)
        backward_batch(params, cache, dfinal, buf)
    return total, per_cat, cache


def multi_task_step(params, optimizer, sampler, graph, users, cfg, rng, buf=None, categories=None):
    """One forward/backward/update on a batch of users; returns per-category
    losses (and the total under key ``"total"``)."""
    buf = buf or GradBuffer(params)
    cats = range(params.num_categories) if categories is None else categories
    hood = sample_neighborhood(graph, users, cfg.fanouts, rng)
    triplets = {c: sampler.sample(c, users, rng) for c in cats}
    buf.zero()
    total, per_cat, _ = batch_loss(params, hood, triplets, cfg.reg, buf)
    if not np.isfinite(total):
        raise NonFiniteError("loss", f"non-finite loss {total}")
    optimizer.step(params, buf.grads, params.trainable())
    return {**per_cat, "total": total}


def epoch_order(users, seed, epoch):
    """Shuffled user order; a pure function of ``(seed, epoch)``."""
    return np.random.default_rng([int(seed), int(epoch), 0]).permutation(users)


def validation_score(params, graph, records, split, cfg, categories=None, fold="validation"):
    fanouts = cfg.fanouts if cfg.inference == "sampled" else None
    views, items = model_views(params, graph, fanouts, cfg.seed)
    res = evaluate_views(views, items, records, split, fold, 1, cfg.seed, (cfg.eval_k,),
                         cfg.eval_negatives, categories)
    return res.mean("recall", cfg.eval_k), res.mean("ndcg", cfg.eval_k)


def train(params, graph, records, split, cfg, categories=None, log_every=1, buf=None):
    """Train ``params`` in place; returns ``(best_params, history)``.

    Each epoch walks shuffled batches of users that have training data,
    then scores validation Recall@K.  The best-scoring snapshot is kept and
    training stops after ``cfg.patience`` epochs without improvement
    (``patience = 0`` disables early stopping).  A non-finite loss aborts
    training and returns the last good snapshot.
    """
    cats = list(range(params.num_categories)) if categories is None else list(categories)
    sampler = TripletSampler(records, split, cfg.negatives)
    users = sampler.users_with_training(cats)
    opt = Adam(cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_eps)
    buf = buf or GradBuffer(params)
    best, best_score, wait = params.copy(), -np.inf, 0
    history = []
    start = time.perf_counter()
    for epoch in range(1, cfg.epochs + 1):
        order = epoch_order(users, cfg.seed, epoch)
        sums = {c: 0.0 for c in cats}
        counts = {c: 0 for c in cats}
        try:
            for step, s in enumerate(range(0, len(order), cfg.batch_size)):
                rng = np.random.default_rng([int(cfg.seed), epoch, step, 1])
                losses = multi_task_step(params, opt, sampler, graph, order[s:s + cfg.batch_size],
                                         cfg, rng, buf, cats)
                for c in cats:
                    if c in losses:
                        sums[c] += losses[c]
                        counts[c] += 1
        except NonFiniteError as exc:
            logger.error("epoch %d diverged (%s); returning last good snapshot", epoch, exc)
            history.append({"epoch": epoch, "diverged": True})
            break
        recall, ndcg = validation_score(params, graph, records, split, cfg, cats)
        row = {"epoch": epoch}
        for c in cats:
            row[f"loss_{records.categories[c]}"] = sums[c] / max(counts[c], 1)
        row.update(val_recall=recall, val_ndcg=ndcg, wall_time=time.perf_counter() - start)
        history.append(row)
        if log_every and epoch % log_every == 0:
            logger.info("epoch %d  val recall@%d=%.4f ndcg=%.4f", epoch, cfg.eval_k, recall, ndcg)
        if recall > best_score:
            best, best_score, wait = params.copy(), recall, 0
        else:
            wait += 1
            if cfg.patience and wait >= cfg.patience:
                break
    return best, history


def write_history(path, history, eval_k=5):
    keys = []
    for row in history:
        keys.extend(k for k in row if k not in keys)
    header = {"val_recall": f"val_recall@{eval_k}", "val_ndcg": f"val_ndcg@{eval_k}"}
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([header.get(k, k) for k in keys])
        for row in history:
            w.writerow([f"{row[k]:.6f}" if isinstance(row.get(k), float) else row.get(k, "") for k in keys])
