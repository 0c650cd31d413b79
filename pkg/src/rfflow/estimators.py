"""scikit-learn compatible random-feature regressor trained by gradient flow."""
from __future__ import annotations

import math

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted, validate_data

from .model import get_activation

__all__ = ["RandomFeatureRegressor"]


class RandomFeatureRegressor(RegressorMixin, BaseEstimator):
    """Readout of fixed random features trained for time ``t`` by exact gradient flow.

    ``n_features`` is N; the first-layer weights are standard normal and
    fixed at fit time.  ``t=inf`` gives the ridge estimator.  ``init_scale``
    is the standard deviation of the initial readout.
    """

    def __init__(self, n_features=100, activation="relu-centered", lam=1e-3, t=math.inf,
                 init_scale=0.0, random_state=None):
        self.n_features = n_features
        self.activation = activation
        self.lam = lam
        self.t = t
        self.init_scale = init_scale
        self.random_state = random_state

    def _features(self, X):
        act = get_activation(self.activation)
        return act(X @ self.theta_.T / math.sqrt(X.shape[1]))

    def fit(self, X, y):
        X, y = validate_data(self, X, y, y_numeric=True)
        if self.t < 0:
            raise ValueError("t must be nonnegative")
        n, d = X.shape
        N = int(self.n_features)
        rng = np.random.Generator(np.random.Philox(self.random_state))
        self.theta_ = rng.standard_normal((N, d))
        a0 = self.init_scale * rng.standard_normal(N)
        Z = self._features(X)
        delta = n / N * self.lam
        vals, vecs = np.linalg.eigh(Z.T @ Z / N)
        vals = np.clip(vals, 0.0, None)
        b = vecs.T @ (Z.T @ y / math.sqrt(N))
        p0 = vecs.T @ a0
        rate = vals + delta
        if math.isinf(self.t):
            if delta <= 0:
                raise ValueError("t=inf requires lam > 0")
            coeff = b / rate
        else:
            frozen = rate < 1e-12
            safe = np.where(frozen, 1.0, rate)
            stat = np.where(frozen, 0.0, b / safe)
            coeff = np.exp(-self.t * rate) * (p0 - stat) + stat
        self.coef_ = vecs @ coeff
        self.n_samples_fit_ = n
        return self

    def predict(self, X):
        check_is_fitted(self, "coef_")
        X = validate_data(self, X, reset=False)
        return self._features(X) @ self.coef_ / math.sqrt(self.n_features)
