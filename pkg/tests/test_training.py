import math

import numpy as np
import pytest

from condnet.exceptions import NonFiniteError
from condnet.graph import make_records, split_dataset
from condnet.params import GradBuffer
from condnet.propagation import sample_neighborhood
from condnet.training import (
    TripletSampler,
    batch_loss,
    bpr_loss,
    epoch_order,
    sample_triplets,
    train,
    write_history,
)
from condnet.variants import build_variant

from conftest import random_graph, random_params


def test_bpr_margin_ten():
    u = np.array([1.0, 0.0])
    loss, *_ = bpr_loss(u, np.array([10.0, 0.0]), np.zeros(2))
    assert loss == pytest.approx(-math.log(1 / (1 + math.exp(-10))), rel=1e-12)
    assert loss == pytest.approx(4.54e-5, rel=1e-3)


def test_bpr_extreme_margins_are_finite():
    u = np.array([1.0])
    lo, *g = bpr_loss(u, np.array([1e4]), np.array([0.0]))
    hi, *_ = bpr_loss(u, np.array([-1e4]), np.array([0.0]))
    assert lo == 0.0 and hi == pytest.approx(1e4)
    assert all(np.isfinite(x).all() for x in g)


def test_bpr_gradient_finite_difference(rng):
    u, p, n = rng.normal(size=(3, 4))
    _, du, dp, dn = bpr_loss(u, p, n)
    eps = 1e-6
    for vec, g in ((u, du), (p, dp), (n, dn)):
        num = np.zeros(4)
        for k in range(4):
            vec[k] += eps
            hi = bpr_loss(u, p, n)[0]
            vec[k] -= 2 * eps
            lo = bpr_loss(u, p, n)[0]
            vec[k] += eps
            num[k] = (hi - lo) / (2 * eps)
        np.testing.assert_allclose(g, num, atol=1e-6)


def test_triplets_share_positive_and_avoid_seen():
    rec = make_records(["a"], [20], [[(0, i) for i in range(8)] + [(1, 3)]])
    sp = split_dataset(rec, seed=0)
    trip = sample_triplets(rec, sp, "a", [0], 5, rng=1)
    assert trip.shape == (5, 3)
    assert len(set(trip[:, 1])) == 1 and trip[0, 1] in set(sp.train[0][:, 1])
    assert not set(trip[:, 2]) & set(range(8))


def test_sampler_skips_saturated_user(caplog):
    rec = make_records(["a"], [3], [[(0, 0), (0, 1), (0, 2), (1, 0), (1, 1), (1, 2)]])
    sp = split_dataset(rec, seed=0)
    out = TripletSampler(rec, sp, 2).sample(0, np.array([0, 1]), np.random.default_rng(0))
    assert len(out) == 0 and "every item" in caplog.text


def test_epoch_order_is_pure():
    u = np.arange(20)
    assert (epoch_order(u, 3, 2) == epoch_order(u, 3, 2)).all()
    assert not (epoch_order(u, 3, 2) == epoch_order(u, 3, 3)).all()


def toy_batch(rng):
    g = random_graph(rng, 6, 0.5)
    p = random_params(rng, 6, (4, 3, 3), 2, items=6)
    hood = sample_neighborhood(g, np.arange(6), [2, 2], rng)
    trip = {c: np.array([[b, b % 3, 3 + b % 3] for b in range(6)]) for c in range(2)}
    return p, hood, trip


def test_total_is_mean_of_category_means_plus_reg(rng):
    p, hood, trip = toy_batch(rng)
    total0, per_cat, _ = batch_loss(p, hood, trip, 0.0)
    assert total0 == pytest.approx(np.mean(list(per_cat.values())))
    reg = 0.01
    total, _, _ = batch_loss(p, hood, trip, reg)
    sq = (np.sum(p["base"][hood.unique_nodes()] ** 2)
          + sum(np.sum(p[f"items.{c}"][np.unique(trip[c][:, 1:])] ** 2) for c in range(2))
          + sum(np.sum(p[f"{n}.{k}"] ** 2) for n in ("att_w", "att_h", "dense_w") for k in range(2)))
    assert total == pytest.approx(total0 + reg * sq, rel=1e-12)


def test_empty_category_in_batch_is_ignored(rng):
    p, hood, trip = toy_batch(rng)
    trip[1] = np.zeros((0, 3), dtype=np.int64)
    total, per_cat, _ = batch_loss(p, hood, trip)
    assert list(per_cat) == [0] and total == per_cat[0]


def test_frozen_tensors_get_no_gradient(rng):
    p, hood, trip = toy_batch(rng)
    p.frozen |= {"att_w.0", "mask.1"}
    buf = GradBuffer(p)
    batch_loss(p, hood, trip, 1e-3, buf)
    assert not buf["att_w.0"].any() and not buf["mask.1"].any()
    assert buf["att_w.1"].any() and buf["mask.2"].any()


def test_training_reduces_loss(small_synth, small_split, tiny_cfg):
    cfg = tiny_cfg.replace(epochs=5)
    p = build_variant(cfg, "full", small_synth.graph.num_nodes, small_synth.records.num_items,
                      small_synth.records.categories)
    before = p.copy()
    best, hist = train(p, small_synth.graph, small_synth.records, small_split, cfg)
    assert len(hist) == 5
    assert hist[-1]["loss_cat0"] < hist[0]["loss_cat0"]
    assert best.checksum() != before.checksum()
    assert all(0 <= h["val_recall"] <= 1 for h in hist)


def test_training_is_reproducible(small_synth, small_split, tiny_cfg):
    runs = []
    for _ in range(2):
        p = build_variant(tiny_cfg, "full", small_synth.graph.num_nodes, small_synth.records.num_items,
                          small_synth.records.categories)
        runs.append(train(p, small_synth.graph, small_synth.records, small_split, tiny_cfg)[0].checksum())
    assert runs[0] == runs[1]


def test_early_stopping(small_synth, small_split, tiny_cfg):
    cfg = tiny_cfg.replace(epochs=30, patience=1, learning_rate=1e-9)
    p = build_variant(cfg, "full", small_synth.graph.num_nodes, small_synth.records.num_items,
                      small_synth.records.categories)
    _, hist = train(p, small_synth.graph, small_synth.records, small_split, cfg)
    assert len(hist) < 30


def test_divergence_returns_last_good(small_synth, small_split, tiny_cfg, monkeypatch):
    import condnet.training as tr

    calls = {"n": 0}
    real = tr.multi_task_step

    def flaky(*a, **k):
        calls["n"] += 1
        if calls["n"] > 4:
            raise NonFiniteError("base", "boom")
        return real(*a, **k)

    monkeypatch.setattr(tr, "multi_task_step", flaky)
    cfg = tiny_cfg.replace(epochs=4)
    p = build_variant(cfg, "full", small_synth.graph.num_nodes, small_synth.records.num_items,
                      small_synth.records.categories)
    best, hist = train(p, small_synth.graph, small_synth.records, small_split, cfg)
    assert hist[-1].get("diverged")
    assert all(np.isfinite(v).all() for v in best.tensors.values())


def test_write_history(tmp_path):
    write_history(tmp_path / "h.csv", [{"epoch": 1, "loss_a": 0.5, "val_recall": 0.25}])
    lines = (tmp_path / "h.csv").read_text().splitlines()
    assert lines == ["epoch,loss_a,val_recall@5", "1,0.500000,0.250000"]
