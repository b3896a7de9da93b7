import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from slotpack.estimators import HEResNetClassifier, LegendreActivation
from slotpack.model import ResNetConfig, random_weights
from slotpack.oracle import build_refnet, forward_ref, poly_activation


def test_activation_params_and_clone():
    est = LegendreActivation(degree=3, bound=2.0)
    assert est.get_params() == {"degree": 3, "bound": 2.0, "quad_order": 64, "function": "silu"}
    assert clone(est).get_params() == est.get_params()


def test_activation_fit_transform(rng):
    X = rng.uniform(-4, 4, size=(20, 3))
    est = LegendreActivation(bound="auto").fit(X)
    assert est.interval_[1] == pytest.approx(np.abs(X).max())
    out = est.transform(X)
    assert out.shape == X.shape
    assert np.max(np.abs(out - X / (1 + np.exp(-X)))) < 0.2
    assert est.score(X) <= 0
    with pytest.raises(NotFittedError):
        LegendreActivation().transform(X)
    with pytest.raises(ValueError):
        LegendreActivation(degree=9).fit(X)


def test_classifier(rng):
    cfg = ResNetConfig.resnet20(0.25)
    X = rng.normal(size=(3, 3 * 16 * 16))
    clf = HEResNetClassifier(random_state=4).fit(X, np.arange(10))
    scores = clf.decision_function(X)
    ref = build_refnet(cfg, random_weights(cfg, 4), poly_activation(clf.plan_.act_coeffs))
    expect = np.array([forward_ref(ref, x.reshape(3, 16, 16)) for x in X])
    assert np.max(np.abs(scores - expect)) <= 1e-6
    assert np.array_equal(clf.predict(X), np.argmax(expect, axis=1))
    assert clf.n_bootstraps_ == clf.plan_.bootstrap_count


def test_classifier_validation(rng):
    with pytest.raises(NotFittedError):
        HEResNetClassifier().predict(np.zeros((1, 768)))
    with pytest.raises(ValueError):
        HEResNetClassifier().fit(np.zeros((2, 10)), [0, 1])
