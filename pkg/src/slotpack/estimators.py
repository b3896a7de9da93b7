"""scikit-learn style front ends.

``LegendreActivation`` fits a polynomial activation and applies it
elementwise.  ``HEResNetClassifier`` wraps plan building, bootstrap
placement and encrypted-simulation inference behind fit/predict; it does
not train, ``fit`` only records classes and prepares weights.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from . import act as act_mod
from .engine import HeContext, HeParams
from .model import ResNetConfig, check_weights, random_weights
from .netplan import build_resnet20, compile_weights, place_bootstraps, run_plan


class LegendreActivation(TransformerMixin, BaseEstimator):
    """Elementwise least-squares polynomial stand-in for an activation.

    ``bound="auto"`` takes the interval from the largest magnitude seen in
    ``fit``.
    """

    def __init__(self, degree=5, bound=8.0, quad_order=64, function="silu"):
        self.degree = degree
        self.bound = bound
        self.quad_order = quad_order
        self.function = function

    def fit(self, X, y=None):
        X = check_array(X, ensure_2d=False, allow_nd=True)
        if self.bound == "auto":
            b = float(np.max(np.abs(X))) or 1.0
        else:
            b = float(self.bound)
        if b <= 0:
            raise ValueError("bound must be positive")
        if not 0 <= self.degree <= 7:
            raise ValueError("degree must be between 0 and 7")
        self.approx_ = act_mod.approximate(self.function, self.degree, (-b, b), self.quad_order)
        self.interval_ = self.approx_.interval
        self.coef_ = self.approx_.monomial_coeffs
        self.legendre_coef_ = self.approx_.legendre_coeffs
        self.n_features_in_ = X.shape[1] if X.ndim == 2 else None
        return self

    def transform(self, X):
        check_is_fitted(self, "coef_")
        X = check_array(X, ensure_2d=False, allow_nd=True)
        return act_mod.eval_monomial(self.coef_, X)

    def score(self, X, y=None):
        """Negative mean squared gap to the exact activation."""
        check_is_fitted(self, "coef_")
        X = check_array(X, ensure_2d=False, allow_nd=True)
        exact = act_mod.ACTIVATIONS[self.function](X)
        return -float(np.mean((exact - self.transform(X)) ** 2))


class HEResNetClassifier(ClassifierMixin, BaseEstimator):
    """ResNet inference under the slot simulator.

    Inputs are flattened ``(n, c*h*w)`` rows or ``(n, c, h, w)`` arrays.
    ``weights=None`` draws random weights from ``random_state``.  The
    i-th entry of the sorted ``classes_`` is scored by logit i.
    """

    def __init__(self, width=0.25, conv="dsc", max_level=26, boot_depth=14,
                 weights=None, random_state=0):
        self.width = width
        self.conv = conv
        self.max_level = max_level
        self.boot_depth = boot_depth
        self.weights = weights
        self.random_state = random_state

    def fit(self, X, y):
        cfg = ResNetConfig.resnet20(self.width, conv=self.conv)
        self._check_input(X, cfg)
        self.classes_ = np.unique(np.asarray(y))
        if len(self.classes_) > cfg.num_classes:
            raise ValueError(f"{len(self.classes_)} classes, network has {cfg.num_classes} outputs")
        weights = self.weights if self.weights is not None else random_weights(cfg, self.random_state)
        check_weights(cfg, weights)
        he = HeParams(n_slots=cfg.f_max, max_level=self.max_level, boot_depth=self.boot_depth)
        self.config_ = cfg
        self.plan_ = place_bootstraps(build_resnet20(cfg), he)
        self.weights_ = weights
        self._compiled = compile_weights(self.plan_, weights)
        self.n_bootstraps_ = self.plan_.bootstrap_count
        return self

    def _check_input(self, X, cfg):
        shape = (cfg.in_channels, cfg.input_side, cfg.input_side)
        X = check_array(X, allow_nd=True)
        if X.ndim == 2:
            if X.shape[1] != int(np.prod(shape)):
                raise ValueError(f"expected {int(np.prod(shape))} features, got {X.shape[1]}")
            X = X.reshape((-1,) + shape)
        if X.shape[1:] != shape:
            raise ValueError(f"expected images of shape {shape}, got {X.shape[1:]}")
        return X

    def decision_function(self, X):
        check_is_fitted(self, "plan_")
        X = self._check_input(X, self.config_)
        logits = [run_plan(self.plan_, x, self.weights_, HeContext(self.plan_.params), self._compiled)[0]
                  for x in X]
        return np.array(logits)[:, : len(self.classes_)]

    def predict(self, X):
        scores = self.decision_function(X)
        return self.classes_[np.argmax(scores, axis=1)]
