"""Scikit-learn style estimator tying the pipeline together.

DeltaSketchRegressor trains a small fully connected network, streams its
prediction Jacobian through the score-driven sketch (or computes the dense
covariance when method="exact"), and hands out prediction intervals.  All
constructor arguments follow scikit-learn conventions: stored verbatim,
validated in fit, with fitted state on trailing-underscore attributes.
"""
from __future__ import annotations

import time

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from .data import StandardizationStats
from .delta import build_covariance, predict_intervals
from .errors import ConfigError, DegreesOfFreedomError
from .linalg import t_quantile
from .nn import Mlp, TrainConfig, jacobian_rows, train
from .oracle import exact_covariance
from .sketch import RidSketch
from .validation import check_matrix, check_probability, check_vector

METHODS = ("id", "exact")


class DeltaSketchRegressor(RegressorMixin, BaseEstimator):
    """Neural regression with delta-method prediction intervals.

    Parameters
    ----------
    hidden : tuple of int, hidden layer widths.
    activation : "tanh" or "relu".
    lam : L2 coefficient of the training objective sum r^2 + lam ||w||^2;
        the same value drives the sketch score and the covariance assembly.
    method : "id" for the streaming low-rank sketch, "exact" for the dense
        reference path (size-gated).
    rank : sketch rank k for method="id"; clamped to the parameter count.
    score : sketch selection score, "magnitude" or "covariance".
    complement : include the off-subspace covariance correction.
    epochs : training epochs when epoch_grid is None.
    epoch_grid : optional epoch counts to tune over on a validation split.
    alpha : default interval miscoverage level.
    standardize : z-score features and target with training statistics;
        intervals are always reported in original units.
    random_state : seed for init, shuffling, and the tuning split.
    """

    def __init__(self, hidden=(50, 50), activation="tanh", lam=0.01,
                 method="id", rank=500, score="covariance", complement=False,
                 epochs=100, epoch_grid=None, batch_size=32,
                 learning_rate=1e-3, alpha=0.05, standardize=True,
                 random_state=0):
        self.hidden = hidden
        self.activation = activation
        self.lam = lam
        self.method = method
        self.rank = rank
        self.score = score
        self.complement = complement
        self.epochs = epochs
        self.epoch_grid = epoch_grid
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.alpha = alpha
        self.standardize = standardize
        self.random_state = random_state

    def fit(self, X, y):
        X = check_matrix(X, "X")
        y = check_vector(y, "y", length=X.shape[0])
        if self.method not in METHODS:
            raise ConfigError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.method == "id" and int(self.rank) < 1:
            raise ConfigError(f"rank must be >= 1, got {self.rank}")
        check_probability(self.alpha, "alpha")

        if self.standardize:
            self.stats_ = StandardizationStats.from_arrays(X, y)
            xs = self.stats_.transform_x(X)
            ys = self.stats_.transform_y(y)
        else:
            self.stats_ = None
            xs, ys = X, y

        cfg = TrainConfig(
            lam=self.lam, epochs=self.epochs, batch_size=self.batch_size,
            learning_rate=self.learning_rate, seed=self.random_state,
            epoch_grid=self.epoch_grid,
        )
        t0 = time.perf_counter()
        self.net_: Mlp = train(xs, ys, (X.shape[1], *self.hidden, 1), cfg,
                               activation=self.activation)
        self.train_seconds_ = time.perf_counter() - t0

        residuals = ys - self.net_.forward_batch(xs)
        p = self.net_.n_params
        t0 = time.perf_counter()
        if self.method == "id":
            sk = RidSketch(min(int(self.rank), p), p,
                           score=self.score, lam=self.lam)
            for row in jacobian_rows(self.net_, xs):
                sk.update(row)
            self.model_ = build_covariance(sk.finalize(), self.lam, residuals,
                                           complement=self.complement)
            self.p_star_ = self.model_.p_star
            self.s_hat_ = self.model_.s_hat
        else:
            j = np.vstack(list(jacobian_rows(self.net_, xs)))
            self.exact_ = exact_covariance(j, self.lam, residuals)
            if self.exact_.dof <= 0.0:
                raise DegreesOfFreedomError(
                    f"n - p* = {self.exact_.dof:.6g} <= 0 on the exact path"
                )
            self.p_star_ = self.exact_.p_star
            self.s_hat_ = self.exact_.s_hat
        self.sketch_seconds_ = time.perf_counter() - t0
        self.n_features_in_ = X.shape[1]
        return self

    def _to_std(self, X) -> np.ndarray:
        X = check_matrix(X, "X")
        if X.shape[1] != self.n_features_in_:
            raise ValueError(
                f"expected {self.n_features_in_} features, got {X.shape[1]}"
            )
        return self.stats_.transform_x(X) if self.stats_ is not None else X

    def predict(self, X) -> np.ndarray:
        check_is_fitted(self, "net_")
        centers = self.net_.forward_batch(self._to_std(X))
        if self.stats_ is not None:
            centers = self.stats_.invert_y(centers)
        return centers

    def predict_interval(self, X, alpha=None):
        """Centers and interval bounds in original units.

        Returns (center, lower, upper) arrays, one entry per row of X.
        """
        check_is_fitted(self, "net_")
        alpha = check_probability(self.alpha if alpha is None else alpha,
                                  "alpha")
        xs = self._to_std(X)
        if self.method == "id":
            centers, halves = predict_intervals(self.net_, self.model_, xs,
                                                alpha)
        else:
            centers = self.net_.forward_batch(xs)
            g = self.net_.param_gradient_batch(xs)
            q = np.clip(np.einsum("ij,jk,ik->i", g, self.exact_.sigma_inv, g),
                        0.0, None)
            t = t_quantile(1.0 - alpha / 2.0, self.exact_.dof)
            halves = t * self.exact_.s_hat * np.sqrt(1.0 + q)
        if self.stats_ is not None:
            centers = self.stats_.invert_y(centers)
            halves = halves * self.stats_.y_sd
        return centers, centers - halves, centers + halves
