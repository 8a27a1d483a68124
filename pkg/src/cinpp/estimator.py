"""scikit-learn style wrappers around lifting and the CIN++ model."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, RegressorMixin, TransformerMixin
from sklearn.preprocessing import LabelEncoder
from sklearn.utils.validation import check_is_fitted

from . import tensor as T
from .complex import CellComplex, Graph, lift
from .exceptions import EmptyDataset, ShapeMismatch
from .io import graph_from_json
from .model import CinModel, ModelConfig
from .train import TrainConfig, predict, train_loop


def check_graphs(X, max_ring_size: int) -> list:
    """Accept graphs, complexes or graph dicts; return a list of complexes."""
    if isinstance(X, (Graph, CellComplex, dict)):
        raise TypeError("expected a sequence of graphs, got a single graph")
    X = list(X)
    if not X:
        raise EmptyDataset("no graphs given")
    out = []
    for x in X:
        if isinstance(x, CellComplex):
            out.append(x)
        elif isinstance(x, Graph):
            out.append(lift(x, max_ring_size))
        elif isinstance(x, dict):
            out.append(lift(graph_from_json(x), max_ring_size))
        else:
            raise TypeError(f"cannot interpret {type(x).__name__} as a graph")
    return out


def _feature_dims(complexes) -> tuple:
    dims = set()
    for cx in complexes:
        g = cx.source_graph
        nd = 1 if g is None or g.node_features is None else g.node_features.shape[1]
        ed = 1 if g is None or g.edge_features is None else g.edge_features.shape[1]
        dims.add((nd, ed))
    if len(dims) != 1:
        raise ShapeMismatch(f"graphs disagree on feature widths: {sorted(dims)}")
    return dims.pop()


class CellLifter(TransformerMixin, BaseEstimator):
    """Stateless transformer: graphs -> cell complexes with rings up to ``max_ring_size``."""

    def __init__(self, max_ring_size: int = 6):
        self.max_ring_size = max_ring_size

    def fit(self, X, y=None):
        if int(self.max_ring_size) < 3:
            raise ValueError("max_ring_size must be >= 3")
        self.n_graphs_seen_ = len(check_graphs(X, self.max_ring_size))
        return self

    def transform(self, X):
        check_is_fitted(self, "n_graphs_seen_")
        return check_graphs(X, self.max_ring_size)


class _CINPPBase(BaseEstimator):
    _task = "regression"

    def __init__(self, max_ring_size=6, layers=3, hidden=64, readout="sum", dropout=0.0,
                 use_lower=True, lr=1e-3, weight_decay=0.0, batch_size=32, max_epochs=200,
                 plateau_patience=20, validation_fraction=0.1, random_state=0):
        self.max_ring_size = max_ring_size
        self.layers = layers
        self.hidden = hidden
        self.readout = readout
        self.dropout = dropout
        self.use_lower = use_lower
        self.lr = lr
        self.weight_decay = weight_decay
        self.batch_size = batch_size
        self.max_epochs = max_epochs
        self.plateau_patience = plateau_patience
        self.validation_fraction = validation_fraction
        self.random_state = random_state

    def _fit(self, complexes, y):
        if len(complexes) != len(y):
            raise ShapeMismatch(f"{len(complexes)} graphs but {len(y)} targets")
        if not 0.0 < self.validation_fraction < 1.0:
            raise ValueError("validation_fraction must be in (0, 1)")
        seed = int(self.random_state or 0)
        node_dim, edge_dim = _feature_dims(complexes)
        self.model_ = CinModel(ModelConfig(
            node_dim=node_dim, edge_dim=edge_dim, hidden=self.hidden, layers=self.layers,
            out_dim=y.shape[1], readout=self.readout, dropout=self.dropout,
            use_lower=self.use_lower, seed=seed,
        ))
        n = len(complexes)
        n_val = max(1, int(round(self.validation_fraction * n)))
        if n - n_val < 1:
            raise EmptyDataset("need at least two graphs to hold out a validation split")
        order = T.make_rng(seed, "estimator-split").permutation(n)
        tr, va = order[n_val:], order[:n_val]
        train = ([complexes[i] for i in tr], y[tr])
        val = ([complexes[i] for i in va], y[va])
        cfg = TrainConfig(lr=self.lr, weight_decay=self.weight_decay, batch_size=self.batch_size,
                          max_epochs=self.max_epochs, plateau_patience=self.plateau_patience,
                          seed=seed, task=self._task)
        self.report_ = train_loop(self.model_, {"train": train, "val": val}, cfg)
        self.n_features_in_ = node_dim
        return self

    def _raw(self, X):
        check_is_fitted(self, "model_")
        complexes = check_graphs(X, self.max_ring_size)
        node_dim, edge_dim = _feature_dims(complexes)
        cfg = self.model_.config
        if (node_dim, edge_dim) != (cfg.node_dim, cfg.edge_dim):
            raise ShapeMismatch(
                f"fitted on feature widths {(cfg.node_dim, cfg.edge_dim)}, got {(node_dim, edge_dim)}"
            )
        return predict(self.model_, complexes)


class CINPPRegressor(RegressorMixin, _CINPPBase):
    """Graph-level regression with an L1 objective."""

    _task = "regression"

    def fit(self, X, y):
        complexes = check_graphs(X, self.max_ring_size)
        y = np.asarray(y, dtype=float)
        self._y_1d = y.ndim == 1
        y = y.reshape(len(y), -1)
        if not np.all(np.isfinite(y)):
            raise ValueError("targets must be finite")
        return self._fit(complexes, y)

    def predict(self, X):
        out = self._raw(X)
        return out.ravel() if self._y_1d else out


class CINPPClassifier(ClassifierMixin, _CINPPBase):
    """Binary graph classification with a logistic head."""

    _task = "binary"

    def fit(self, X, y):
        complexes = check_graphs(X, self.max_ring_size)
        self.label_encoder_ = LabelEncoder().fit(np.asarray(y).ravel())
        self.classes_ = self.label_encoder_.classes_
        if len(self.classes_) != 2:
            raise ValueError(f"binary classification needs 2 classes, got {len(self.classes_)}")
        codes = self.label_encoder_.transform(np.asarray(y).ravel()).astype(float)
        return self._fit(complexes, codes.reshape(-1, 1))

    def decision_function(self, X):
        return self._raw(X).ravel()

    def predict_proba(self, X):
        p = 1.0 / (1.0 + np.exp(-self.decision_function(X)))
        return np.column_stack([1.0 - p, p])

    def predict(self, X):
        return self.classes_[(self.decision_function(X) > 0).astype(int)]
