import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from ltransformer.estimator import LTransformerClassifier
from ltransformer.trainer import synth_dataset


def keyword_xy(n=400, seed=1):
    tokens, _, labels = synth_dataset("keyword", n, 8, 20, 2, seed=seed).to_arrays(8)
    return tokens, np.array(["neg", "pos"])[labels]


def test_fit_predict_string_labels():
    X, y = keyword_xy()
    clf = LTransformerClassifier(d=8, p=1, heads=2, lr_peak=3e-3, epochs=10)
    assert clf.fit(X, y) is clf
    assert list(clf.classes_) == ["neg", "pos"]
    assert clf.n_features_in_ == 8
    assert clf.score(X, y) == 1.0
    proba = clf.predict_proba(X[:5])
    np.testing.assert_allclose(proba.sum(axis=1), 1.0)
    assert clf.decision_function(X[:5]).shape == (5, 2)
    assert len(clf.history_) == 11


def test_params_and_clone():
    clf = LTransformerClassifier(p=2, epochs=3, pad_token=0)
    params = clf.get_params()
    assert params["p"] == 2 and params["pad_token"] == 0 and params["execution"] == "batched"
    c2 = clone(clf).set_params(d=32)
    assert c2.d == 32 and clf.d == 16


def test_padding_and_validation():
    X = np.array([[5, 6, 7, 0], [8, 9, 0, 0], [5, 9, 6, 7], [8, 8, 0, 0]])
    y = np.array([0, 1, 0, 1])
    clf = LTransformerClassifier(d=8, p=2, heads=2, epochs=1, batch=2, pad_token=0).fit(X, y)
    assert clf.predict(X).shape == (4,)
    with pytest.raises(ValueError, match="trailing"):
        clf.predict(np.array([[0, 5, 6, 7]]))
    with pytest.raises(ValueError):
        clf.predict(np.array([[5, 6, 7]]))
    with pytest.raises(ValueError):
        clf.predict(np.array([[5, 6, 7, 99]]))
    with pytest.raises(ValueError):
        LTransformerClassifier().fit(np.array([[0.5, 1.0]]), [0])
    with pytest.raises(NotFittedError):
        LTransformerClassifier().predict(X)


def test_sequential_execution_gives_same_model():
    X, y = keyword_xy(64)
    kw = dict(d=8, p=2, heads=2, epochs=2, batch=16)
    a = LTransformerClassifier(**kw).fit(X, y)
    b = LTransformerClassifier(execution="sequential", **kw).fit(X, y)
    for k in a.model_.params:
        assert np.array_equal(a.model_.params[k], b.model_.params[k])
