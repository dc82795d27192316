"""Target distributions ``pi ∝ exp(-V)`` and dataset ingestion.

A target exposes ``log_density(x)`` (``-V(x)`` up to a constant) and
``score(x)`` (``grad log pi(x)``). Both accept a single point of shape
``(d,)`` or a batch of shape ``(N, d)``.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass

import numpy as np
from scipy.special import expit, log_expit, logsumexp


class Target:
    """Base class for targets.

    Subclasses implement ``_log_density`` and ``_score`` on ``(N, d)`` arrays.
    ``rng`` is only consumed by stochastic (minibatched) targets.
    """

    dim: int

    def log_density(self, x, **kwargs):
        X, single = self._batch(x)
        out = self._log_density(X, **kwargs)
        return float(out[0]) if single else out

    def score(self, x, rng: np.random.Generator | None = None, **kwargs):
        X, single = self._batch(x)
        out = self._score(X, rng=rng, **kwargs)
        return out[0] if single else out

    def _batch(self, x):
        X = np.asarray(x, dtype=float)
        single = X.ndim <= 1
        if single:
            X = X.reshape(1, -1)
        if X.ndim != 2 or X.shape[1] != self.dim:
            raise ValueError(f"expected points of dimension {self.dim}, got shape {np.shape(x)}")
        return X, single

    def _log_density(self, X, **kwargs):
        raise NotImplementedError

    def _score(self, X, rng=None, **kwargs):
        raise NotImplementedError


class GaussianMixture(Target):
    """Mixture of axis-aligned Gaussians.

    Args:
        weights: Component weights, positive, summing to 1.
        means: Component means, shape ``(K, d)``.
        variances: Diagonal variances, shape ``(K, d)``. A scalar is shared by
            every component; a length-``K`` vector gives isotropic components.
    """

    def __init__(self, weights, means, variances=1.0):
        w = np.asarray(weights, dtype=float).ravel()
        mu = np.atleast_2d(np.asarray(means, dtype=float))
        if mu.shape[0] != w.size:
            raise ValueError(f"{w.size} weights but {mu.shape[0]} means")
        var = np.asarray(variances, dtype=float)
        if var.ndim == 1:
            var = var[:, None]
        var = np.broadcast_to(var, mu.shape).astype(float)
        if np.any(w <= 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("mixture weights must be positive and sum to 1")
        if np.any(var <= 0):
            raise ValueError("mixture variances must be positive")
        self.weights = w
        self.means = mu
        self.variances = var
        self.dim = mu.shape[1]
        self._log_norm = -0.5 * np.sum(np.log(2.0 * np.pi * var), axis=1)

    @classmethod
    def gaussian(cls, mean, variance=1.0) -> GaussianMixture:
        mean = np.atleast_1d(np.asarray(mean, dtype=float))
        return cls([1.0], mean[None, :], np.broadcast_to(variance, mean.shape)[None, :])

    def _component_logpdf(self, X):
        diff = X[:, None, :] - self.means[None, :, :]  # (N, K, d)
        quad = np.sum(diff**2 / self.variances[None], axis=2)
        return np.log(self.weights)[None] + self._log_norm[None] - 0.5 * quad, diff

    def _log_density(self, X):
        comp, _ = self._component_logpdf(X)
        return logsumexp(comp, axis=1)

    def _score(self, X, rng=None):
        comp, diff = self._component_logpdf(X)
        resp = np.exp(comp - logsumexp(comp, axis=1, keepdims=True))
        return -np.einsum("nk,nkd->nd", resp, diff / self.variances[None])

    def mean(self) -> np.ndarray:
        return self.weights @ self.means

    def second_moment(self) -> np.ndarray:
        """Per-coordinate ``E[x_j^2]``."""
        return self.weights @ (self.means**2 + self.variances)

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        comp = rng.choice(self.weights.size, size=n, p=self.weights)
        noise = rng.standard_normal((n, self.dim))
        return self.means[comp] + noise * np.sqrt(self.variances[comp])


def gaussian_mixture_score(x, mix: GaussianMixture) -> np.ndarray:
    """``grad log sum_k w_k N(x; mu_k, Sigma_k)`` via responsibilities."""
    return mix.score(x)


@dataclass
class Dataset:
    """Feature matrix and ±1 labels."""

    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=float)
        self.labels = np.asarray(self.labels, dtype=float)
        if self.features.ndim != 2:
            raise ValueError("features must be a 2-D array")
        if self.features.shape[0] != self.labels.shape[0]:
            raise ValueError("feature and label row counts differ")
        if not np.all(np.isin(self.labels, (-1.0, 1.0))):
            raise ValueError("labels must be in {-1, +1}")

    @property
    def feature_count(self) -> int:
        return self.features.shape[1]

    def __len__(self) -> int:
        return self.features.shape[0]

    def standardized(self) -> Dataset:
        mu = self.features.mean(axis=0)
        sd = self.features.std(axis=0)
        sd[sd == 0] = 1.0
        return Dataset((self.features - mu) / sd, self.labels)

    def split(self, holdout: float, seed: int) -> tuple[Dataset, Dataset]:
        """Single random holdout split into ``(train, test)``."""
        if not 0.0 < holdout < 1.0:
            raise ValueError(f"holdout fraction must be in (0, 1), got {holdout}")
        perm = np.random.default_rng(seed).permutation(len(self))
        n_test = max(1, int(round(holdout * len(self))))
        test, train = perm[:n_test], perm[n_test:]
        return (
            Dataset(self.features[train], self.labels[train]),
            Dataset(self.features[test], self.labels[test]),
        )


class DatasetError(ValueError):
    """Base class for CSV ingestion errors."""


class EmptyDatasetError(DatasetError):
    def __init__(self, path):
        super().__init__(f"{path}: no rows")


class RaggedRowError(DatasetError):
    def __init__(self, row, expected, got):
        self.row = row
        super().__init__(f"row {row}: expected {expected} columns, got {got}")


class NonNumericError(DatasetError):
    def __init__(self, row, column, token):
        self.row = row
        self.column = column
        super().__init__(f"row {row}, column {column}: non-numeric token {token!r}")


class LabelEncodingError(DatasetError):
    def __init__(self, values):
        self.values = values
        super().__init__(f"labels must be encoded {{0,1}} or {{-1,+1}}, found {values}")


def _is_number(tok: str) -> bool:
    try:
        float(tok)
    except ValueError:
        return False
    return True


def load_dataset(path, label_col: int = -1, fmt: str = "csv", standardize: bool = False) -> Dataset:
    """Read a comma-separated file into a :class:`Dataset`.

    A first row with no numeric token is treated as a header. Rows are
    numbered from 0 counting data rows only. Labels may be ``{0, 1}`` or
    ``{-1, +1}`` and come out as ``{-1, +1}``.
    """
    if fmt != "csv":
        raise ValueError(f"unsupported dataset format {fmt!r}")
    if not os.path.exists(path):
        raise FileNotFoundError(path)
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and any(tok.strip() for tok in r)]
    if rows and not any(_is_number(tok) for tok in rows[0]):
        rows = rows[1:]
    if not rows:
        raise EmptyDatasetError(path)
    width = len(rows[0])
    if width < 2:
        raise DatasetError(f"{path}: need at least one feature column and a label column")
    data = np.empty((len(rows), width))
    for i, row in enumerate(rows):
        if len(row) != width:
            raise RaggedRowError(i, width, len(row))
        for j, tok in enumerate(row):
            try:
                data[i, j] = float(tok)
            except ValueError:
                raise NonNumericError(i, j, tok) from None
    if not np.all(np.isfinite(data)):
        bad = int(np.argwhere(~np.isfinite(data))[0, 0])
        raise NonNumericError(bad, None, "non-finite")
    col = label_col % width
    raw = data[:, col]
    found = set(np.unique(raw).tolist())
    if found <= {0.0, 1.0}:
        labels = 2.0 * raw - 1.0
    elif found <= {-1.0, 1.0}:
        labels = raw.copy()
    else:
        raise LabelEncodingError(sorted(found))
    ds = Dataset(np.delete(data, col, axis=1), labels)
    return ds.standardized() if standardize else ds


def synthesize_logistic_data(d: int, n: int, seed: int = 0, true_weights=None) -> tuple[Dataset, np.ndarray]:
    """Standard-normal features, standard-normal weights, Bernoulli labels."""
    if d < 1 or n < 1:
        raise ValueError(f"need d, n >= 1, got d={d}, n={n}")
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, d))
    if true_weights is None:
        w = rng.standard_normal(d)
    else:
        w = np.asarray(true_weights, dtype=float).reshape(d)
    p = expit(X @ w)
    y = np.where(rng.random(n) < p, 1.0, -1.0)
    return Dataset(X, y), w


class LogisticPosterior(Target):
    """Posterior of Bayesian logistic regression with a N(0, 1/alpha I) prior.

    ``log p(w | data) = sum_i log sigmoid(y_i <x_i, w>) - alpha/2 ||w||^2 + const``.
    With ``minibatch`` set, the likelihood sum runs over a random batch drawn
    without replacement and is scaled by ``n_data / |batch|``.
    """

    def __init__(self, design, labels, prior_precision: float = 0.01, minibatch: int | None = None):
        self.design = np.asarray(design, dtype=float)
        self.labels = np.asarray(labels, dtype=float).ravel()
        if self.design.ndim != 2:
            raise ValueError("design must be a 2-D array")
        if self.design.shape[0] != self.labels.size:
            raise ValueError("design row count must equal label count")
        if self.labels.size and not np.all(np.isin(self.labels, (-1.0, 1.0))):
            raise ValueError("labels must be in {-1, +1}")
        if not prior_precision > 0:
            raise ValueError("prior precision must be positive")
        if minibatch is not None and minibatch < 1:
            raise ValueError("minibatch must be a positive integer")
        self.prior_precision = float(prior_precision)
        self.minibatch = minibatch
        self.dim = self.design.shape[1]

    @classmethod
    def from_dataset(cls, data: Dataset, **kwargs) -> LogisticPosterior:
        return cls(data.features, data.labels, **kwargs)

    @property
    def n_data(self) -> int:
        return self.labels.size

    @property
    def stochastic(self) -> bool:
        return self.minibatch is not None and self.minibatch < self.n_data

    def draw_batch(self, rng: np.random.Generator) -> np.ndarray | None:
        if not self.stochastic:
            return None
        if self.n_data == 0:
            raise ValueError("cannot draw a minibatch from an empty dataset")
        return rng.choice(self.n_data, size=self.minibatch, replace=False)

    def _rows(self, batch):
        if batch is None:
            return self.design, self.labels, 1.0
        batch = np.asarray(batch)
        if batch.size == 0:
            raise ValueError("empty minibatch")
        return self.design[batch], self.labels[batch], self.n_data / batch.size

    def _log_density(self, W, batch=None):
        A, y, scale = self._rows(batch)
        margins = (A @ W.T) * y[:, None]  # (n, N)
        return scale * log_expit(margins).sum(axis=0) - 0.5 * self.prior_precision * np.sum(W**2, axis=1)

    def _score(self, W, rng=None, batch=None):
        if batch is None and self.stochastic:
            if rng is None:
                raise ValueError("a minibatched posterior needs an rng to draw batches")
            batch = self.draw_batch(rng)
        A, y, scale = self._rows(batch)
        margins = (A @ W.T) * y[:, None]
        coef = y[:, None] * expit(-margins)  # d/dz log sigmoid(z) = sigmoid(-z)
        return scale * (coef.T @ A) - self.prior_precision * W

    def predict_proba(self, W, features) -> np.ndarray:
        """Posterior-predictive ``P(y = +1 | x)`` averaged over particles ``W``."""
        return expit(np.asarray(features) @ np.atleast_2d(W).T).mean(axis=1)


def logistic_score(w, post: LogisticPosterior, rng: np.random.Generator | None = None, batch=None):
    return post.score(w, rng=rng, batch=batch)


def accuracy(W, data: Dataset) -> float:
    p = expit(data.features @ np.atleast_2d(W).T).mean(axis=1)
    return float(np.mean(np.where(p >= 0.5, 1.0, -1.0) == data.labels))


def translate(target: Target, shift) -> Target:
    """Target with density ``pi(x - shift)``."""
    return _Translated(target, np.asarray(shift, dtype=float))


class _Translated(Target):
    def __init__(self, base, shift):
        self.base = base
        self.shift = shift
        self.dim = base.dim

    def _log_density(self, X, **kw):
        return self.base.log_density(X - self.shift, **kw)

    def _score(self, X, rng=None, **kw):
        return self.base.score(X - self.shift, rng=rng, **kw)
