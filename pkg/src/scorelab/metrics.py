"""Wasserstein-2 estimators between sample sets and Gaussian targets."""

from __future__ import annotations

import numpy as np

from . import _rng
from .gaussian import w2_gaussian
from .mc import Z95, McEstimate

__all__ = ["w2_empirical_1d", "w2_gaussian_fit", "w2_fit_estimate", "sliced_w2", "fit_gaussian"]


def w2_empirical_1d(xs, ys) -> float:
    """Exact W2 between two equal-size 1-D empirical measures (sorted coupling)."""
    xs = np.sort(np.asarray(xs, dtype=float).ravel())
    ys = np.sort(np.asarray(ys, dtype=float).ravel())
    if xs.size != ys.size:
        raise ValueError("sample sets must have the same size")
    if xs.size == 0:
        raise ValueError("empty sample set")
    diff = xs - ys
    return float(np.sqrt(np.mean(diff * diff)))


def fit_gaussian(samples):
    """Sample mean and (unbiased) covariance of an ``(n, d)`` array."""
    x = np.asarray(samples, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    n, d = x.shape
    if n <= d:
        raise ValueError("need more samples than dimensions")
    mean = x.mean(axis=0)
    c = x - mean
    cov = (c.T @ c) / (n - 1)
    return mean, 0.5 * (cov + cov.T)


def w2_gaussian_fit(samples, target_mean, target_cov) -> float:
    """W2 between the Gaussian fitted to ``samples`` and N(target_mean, target_cov).

    Exact for Gaussian sampling laws up to the estimation error of the
    mean and covariance.
    """
    mean, cov = fit_gaussian(samples)
    tm = np.atleast_1d(np.asarray(target_mean, dtype=float))
    tc = np.atleast_2d(np.asarray(target_cov, dtype=float))
    return w2_gaussian(mean, cov, tm, tc)


def w2_fit_estimate(samples, target_mean, target_cov, n_batches: int = 20, seed=None) -> McEstimate:
    """Fitted-Gaussian W2 on all samples with a batch-means 95% half-width.

    Batches are contiguous blocks of rows.  Each batch fit is noisier than
    the full fit, so the spread of batch values over sqrt(n_batches) is a
    conservative error scale for the full-sample value.
    """
    x = np.asarray(samples, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    point = w2_gaussian_fit(x, target_mean, target_cov)
    if n_batches < 2:
        return McEstimate(point, x.shape[0], float("inf"), seed)
    parts = np.array_split(x, n_batches)
    vals = np.array([w2_gaussian_fit(p, target_mean, target_cov) for p in parts])
    hw = Z95 * float(np.std(vals, ddof=1)) / np.sqrt(n_batches)
    return McEstimate(point, x.shape[0], hw, seed)


def sliced_w2(xs, ys, n_projections: int, seed: int) -> float:
    """Root mean of squared 1-D W2 distances over random unit directions.

    In one dimension every direction is +-1 and the result equals
    ``w2_empirical_1d``.
    """
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    if xs.ndim == 1:
        xs = xs[:, None]
    if ys.ndim == 1:
        ys = ys[:, None]
    if xs.shape != ys.shape:
        raise ValueError("sample sets must have the same shape")
    d = xs.shape[1]
    if d == 1:
        return w2_empirical_1d(xs[:, 0], ys[:, 0])
    dirs = _rng.normals(_rng.stream_key(seed, "sliced"), np.arange(n_projections), 0, d)
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    sq = [w2_empirical_1d(xs @ v, ys @ v) ** 2 for v in dirs]
    return float(np.sqrt(np.mean(sq)))
