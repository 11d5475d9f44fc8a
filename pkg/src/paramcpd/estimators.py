"""scikit-learn style front ends.

`PosteriorEstimator` wraps dataset standardization plus the mixture-density
network behind fit/predict/sample/score, and `KernelChangePointDetector`
exposes penalized kernel segmentation with the familiar fit/fit_predict
surface (per-sample segment labels, like clustering estimators). Both follow
sklearn conventions: constructor arguments are stored verbatim, fitted state
lives in trailing-underscore attributes, and get_params/set_params come from
BaseEstimator.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array

from . import npe
from .cpd import auto_penalty, pelt
from .dataset import PriorSpec, TrainingSet, compute_norm_stats, featurize


class PosteriorEstimator(BaseEstimator):
    """Amortized conditional density estimator q(theta | window).

    fit(X, y) takes raw 4-channel windows X of shape (n_samples, 4, w) and
    parameter targets y of shape (n_samples, 3); standardization statistics
    are computed on X once and frozen into the model.
    """

    def __init__(
        self,
        hidden_sizes=(256, 256),
        n_components=5,
        learning_rate=1e-3,
        batch_size=256,
        epochs=30,
        val_fraction=0.1,
        std_floor=1e-4,
        n_samples=256,
        aggregator="median",
        prior=None,
        random_state=0,
    ):
        self.hidden_sizes = hidden_sizes
        self.n_components = n_components
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.epochs = epochs
        self.val_fraction = val_fraction
        self.std_floor = std_floor
        self.n_samples = n_samples
        self.aggregator = aggregator
        self.prior = prior
        self.random_state = random_state

    def fit(self, X, y):
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        if X.ndim != 3 or X.shape[1] != 4:
            raise ValueError(f"X must be (n_samples, 4, w), got {X.shape}")
        if y.shape != (len(X), 3):
            raise ValueError(f"y must be (n_samples, 3), got {y.shape}")
        prior = self.prior
        if prior is None:
            lo, hi = y.min(axis=0) - 1e-6, y.max(axis=0) + 1e-6
            prior = PriorSpec(*((float(a), float(b)) for a, b in zip(lo, hi)))
        ts = TrainingSet(
            thetas=y, windows=X, norm_stats=compute_norm_stats(X), prior=prior,
            w=X.shape[2], seed=self.random_state,
        )
        config = npe.MdnConfig(
            input_dim=4 * ts.w,
            hidden_sizes=tuple(self.hidden_sizes),
            n_components=self.n_components,
            std_floor=self.std_floor,
        )
        opt = npe.OptimizerParams(
            learning_rate=self.learning_rate, batch_size=self.batch_size,
            epochs=self.epochs, val_fraction=self.val_fraction,
        )
        self.model_ = npe.train(ts, config, opt, seed=self.random_state)
        self.norm_stats_ = self.model_.norm_stats
        self.history_ = self.model_.training_meta["history"]
        return self

    def _features(self, X):
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 3 or X.shape[1] != 4:
            raise ValueError(f"X must be (n_samples, 4, w), got {X.shape}")
        return featurize(X, self.model_.norm_stats).reshape(len(X), -1)

    def predict(self, X):
        """Aggregated posterior point estimate per window, (n_samples, 3)."""
        self._check_fitted()
        draws = self.sample(X, self.n_samples)
        agg = np.median if self.aggregator == "median" else np.mean
        return agg(draws, axis=1)

    def sample(self, X, n_samples=None, random_state=None):
        """(n_samples_X, n_draws, 3) posterior draws."""
        self._check_fitted()
        m = self.n_samples if n_samples is None else n_samples
        seed = self.random_state if random_state is None else random_state
        return npe.sample_posterior(self.model_, self._features(X), m, seed)

    def log_prob(self, X, y):
        self._check_fitted()
        return npe.log_prob(self.model_, self._features(X), y)

    def score(self, X, y):
        """Mean log posterior density (higher is better)."""
        return float(np.mean(self.log_prob(X, y)))

    def _check_fitted(self):
        if not hasattr(self, "model_"):
            raise RuntimeError("PosteriorEstimator is not fitted yet; call fit(X, y)")


class KernelChangePointDetector(BaseEstimator):
    """Penalized RBF-kernel changepoint detection (PELT).

    fit(X) segments the series; labels_ holds a segment index per sample and
    breakpoints_ the first index of each new segment.
    """

    def __init__(self, penalty="auto", penalty_scale=0.5, min_size=20, gamma="median"):
        self.penalty = penalty
        self.penalty_scale = penalty_scale
        self.min_size = min_size
        self.gamma = gamma

    def fit(self, X, y=None):
        series = check_array(X, ensure_2d=False, dtype=np.float64)
        if series.ndim == 1:
            series = series[:, None]
        gamma = None if self.gamma == "median" else float(self.gamma)
        if self.penalty == "auto":
            penalty = auto_penalty(series, self.penalty_scale)
        else:
            penalty = float(self.penalty)
        seg = self.segmentation_ = pelt(series, penalty, min_size=self.min_size, gamma=gamma)
        self.breakpoints_ = list(seg.breakpoints)
        self.penalty_ = seg.penalty
        self.gamma_ = seg.gamma
        self.n_changepoints_ = len(seg.breakpoints)
        labels = np.zeros(len(series), dtype=np.int64)
        for k, b in enumerate(seg.breakpoints, start=1):
            labels[b:] = k
        self.labels_ = labels
        return self

    def fit_predict(self, X, y=None):
        return self.fit(X).labels_
