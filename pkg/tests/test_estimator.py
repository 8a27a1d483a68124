import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError
from sklearn.pipeline import make_pipeline

from cinpp.complex import CellComplex, build_graph, lift
from cinpp.estimator import CellLifter, CINPPClassifier, CINPPRegressor
from cinpp.exceptions import EmptyDataset, ShapeMismatch
from cinpp.io import cycle_graph, generate_synthetic, graph_to_json


def ring_data(n=24, seed=0):
    ds = generate_synthetic("ring-count", {"n_graphs": n}, seed=seed)
    return ds.graphs, ds.targets.ravel()


TINY = dict(layers=1, hidden=8, max_epochs=3, batch_size=8, validation_fraction=0.25)


class TestCellLifter:
    def test_transform(self):
        g = build_graph(6, cycle_graph(6))
        out = CellLifter().fit_transform([g, graph_to_json(g)])
        assert all(isinstance(cx, CellComplex) for cx in out)
        assert out[0].counts == out[1].counts == (6, 6, 1)
        assert CellLifter(max_ring_size=5).fit_transform([g])[0].counts == (6, 6, 0)

    def test_errors(self):
        g = build_graph(3, cycle_graph(3))
        with pytest.raises(TypeError):
            CellLifter().fit(g)
        with pytest.raises(EmptyDataset):
            CellLifter().fit([])
        with pytest.raises(ValueError):
            CellLifter(max_ring_size=2).fit([g])
        with pytest.raises(NotFittedError):
            CellLifter().transform([g])


class TestRegressor:
    def test_params_and_clone(self):
        est = CINPPRegressor(hidden=16, lr=5e-4)
        params = est.get_params()
        assert params["hidden"] == 16 and params["plateau_patience"] == 20
        twin = clone(est)
        assert twin.get_params() == params and twin is not est

    def test_fit_predict(self):
        X, y = ring_data()
        est = CINPPRegressor(**TINY).fit(X, y)
        pred = est.predict(X)
        assert pred.shape == (len(X),)
        assert np.all(np.isfinite(pred))
        assert est.n_features_in_ == 5
        assert len(est.report_.history) == 3
        assert np.isfinite(est.score(X, y))

    def test_deterministic(self):
        X, y = ring_data(16)
        a = CINPPRegressor(**TINY, random_state=4).fit(X, y).predict(X)
        b = CINPPRegressor(**TINY, random_state=4).fit(X, y).predict(X)
        assert np.array_equal(a, b)

    def test_pipeline_with_lifter(self):
        X, y = ring_data(16)
        pipe = make_pipeline(CellLifter(), CINPPRegressor(**TINY)).fit(X, y)
        assert pipe.predict(X).shape == (16,)

    def test_errors(self):
        X, y = ring_data(8)
        with pytest.raises(NotFittedError):
            CINPPRegressor().predict(X)
        with pytest.raises(ShapeMismatch):
            CINPPRegressor(**TINY).fit(X, y[:-1])
        est = CINPPRegressor(**TINY).fit(X, y)
        plain = build_graph(6, cycle_graph(6))  # no degree features
        with pytest.raises(ShapeMismatch):
            est.predict([plain])


class TestClassifier:
    def test_string_labels(self):
        X, y = ring_data(20)
        labels = np.where(y > 1, "many", "few")
        labels[:2] = ["few", "many"]
        est = CINPPClassifier(**TINY).fit(X, labels)
        assert set(est.classes_) == {"few", "many"}
        proba = est.predict_proba(X)
        np.testing.assert_allclose(proba.sum(axis=1), 1.0)
        assert set(est.predict(X)) <= {"few", "many"}
        assert est.report_.config["task"] == "binary"

    def test_needs_two_classes(self):
        X, _ = ring_data(8)
        with pytest.raises(ValueError):
            CINPPClassifier(**TINY).fit(X, np.zeros(8))


def test_lifted_input_accepted():
    X, y = ring_data(12)
    cxs = [lift(g, 6) for g in X]
    a = CINPPRegressor(**TINY).fit(cxs, y).predict(cxs)
    b = CINPPRegressor(**TINY).fit(X, y).predict(X)
    assert np.array_equal(a, b)
