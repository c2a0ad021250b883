"""scikit-learn style front end."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .config import TrainConfig
from .evaluation import evaluate, model_views
from .graph import split_dataset
from .training import train
from .validation import check_graph, check_records, check_split
from .variants import build_variant


@dataclass
class Dataset:
    """Graph plus behavior records, optionally with a fixed split."""

    graph: object
    records: object
    split: object = None


class ConditionalNetworkEmbedding(TransformerMixin, BaseEstimator):
    """Learns one masked embedding per (node, behavior category).

    ``fit`` takes a :class:`Dataset`; ``transform`` returns a dict mapping
    category name to a ``(num_nodes, dims[-1])`` array.
    """

    def __init__(self, dims=(256, 128, 100), fanouts=(20, 20), attention_dim=64, learning_rate=0.003,
                 batch_size=128, negatives=5, reg=1e-4, epochs=100, patience=10, variant="full",
                 inference="full", eval_negatives=100, init_std=0.01, random_state=0):
        self.dims = dims
        self.fanouts = fanouts
        self.attention_dim = attention_dim
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.negatives = negatives
        self.reg = reg
        self.epochs = epochs
        self.patience = patience
        self.variant = variant
        self.inference = inference
        self.eval_negatives = eval_negatives
        self.init_std = init_std
        self.random_state = random_state

    def get_config(self) -> TrainConfig:
        return TrainConfig(
            dims=self.dims, fanouts=self.fanouts, attention_dim=self.attention_dim,
            learning_rate=self.learning_rate, batch_size=self.batch_size, negatives=self.negatives,
            reg=self.reg, epochs=self.epochs, patience=self.patience, variant=self.variant,
            inference=self.inference, eval_negatives=self.eval_negatives, init_std=self.init_std,
            seed=int(self.random_state),
        )

    def fit(self, X, y=None):
        cfg = self.get_config()
        graph = check_graph(X.graph)
        records = check_records(X.records, graph)
        split = X.split if X.split is not None else split_dataset(records, cfg.split_ratios, cfg.seed)
        check_split(split, records)
        params = build_variant(cfg, cfg.variant, graph.num_nodes, records.num_items, records.categories)
        self.params_, self.history_ = train(params, graph, records, split, cfg)
        self.graph_ = graph
        self.split_ = split
        self.categories_ = list(records.categories)
        self.n_features_out_ = cfg.dims[-1]
        return self

    def _views(self, graph=None):
        check_is_fitted(self, "params_")
        cfg = self.get_config()
        fanouts = cfg.fanouts if cfg.inference == "sampled" else None
        return model_views(self.params_, graph or self.graph_, fanouts, cfg.seed)

    def transform(self, X=None):
        views, _ = self._views(None if X is None else X.graph)
        return dict(zip(self.categories_, views))

    def score_items(self, users, items, category):
        """Inner-product preference scores of ``users`` for ``items``."""
        views, tables = self._views()
        c = self.categories_.index(category)
        return np.asarray(views[c])[np.asarray(users)] @ tables[c][np.asarray(items)].T

    def evaluate(self, X, fold="test", runs=1):
        check_is_fitted(self, "params_")
        split = X.split if X.split is not None else self.split_
        cfg = self.get_config()
        fanouts = cfg.fanouts if cfg.inference == "sampled" else None
        return evaluate(self.params_, X.graph, X.records, split, fold, runs, cfg.seed,
                        count=cfg.eval_negatives, fanouts=fanouts)

    def score(self, X, y=None):
        """Mean test Recall@5 over categories."""
        return self.evaluate(X).mean("recall", 5)
