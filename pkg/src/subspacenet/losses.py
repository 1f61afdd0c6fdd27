"""Clustering losses on an embedding ``Z`` (K_e x N) with one-hot labels ``Y``.

Every loss returns a :class:`LossEval` holding the scalar value and the exact
gradient with respect to ``Z``. The pairwise losses compare the ideal
affinity ``Y^T Y`` with the reconstructed affinity ``Z^T Z``; the
cluster-statistics losses work on per-cluster means and scatters.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .dataio import ValidationError

EPS = 1e-8


@dataclass
class LossEval:
    value: float
    grad: np.ndarray


def _check(z, y):
    z = np.asarray(z, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if z.ndim != 2 or y.ndim != 2 or z.shape[1] != y.shape[1]:
        raise ValidationError(
            f"embedding {z.shape} and labels {y.shape} disagree on N")
    return z, y


def affinities(z, y):
    """Ideal ``Y^T Y`` and reconstructed ``Z^T Z`` affinity matrices."""
    z, y = _check(z, y)
    return y.T @ y, z.T @ z


def l2_regression(z, y, normalize=False):
    """Squared Frobenius distance between ideal and reconstructed affinities."""
    z, y = _check(z, y)
    value, grad = _kernels.pairwise_loss(z, y, False)
    if normalize:
        n2 = z.shape[1] ** 2
        value, grad = value / n2, grad / n2
    return LossEval(value, grad)


def cross_entropy(z, y, normalize=False):
    """Element-wise binary cross-entropy between ``Y^T Y`` and ``sigmoid(Z^T Z)``.

    Sums over all ordered pairs including ``i == j``.
    """
    z, y = _check(z, y)
    # -log(sigmoid(s)) = softplus(-s), -log(1 - sigmoid(s)) = softplus(s)
    value, grad = _kernels.pairwise_loss(z, y, True)
    if normalize:
        n2 = z.shape[1] ** 2
        value, grad = value / n2, grad / n2
    return LossEval(value, grad)


@dataclass
class ClusterStats:
    """Per-cluster index sets, means and scatters of an embedding."""

    labels: np.ndarray
    sizes: np.ndarray
    means: np.ndarray
    scatters: np.ndarray
    centered: np.ndarray

    @property
    def n_clusters(self):
        return self.sizes.size

    def inter_distances(self):
        mu = self.means
        sq = np.sum(mu * mu, axis=0)
        d = sq[:, None] + sq[None, :] - 2.0 * (mu.T @ mu)
        return np.maximum(d, 0.0)

    def closest_pair(self):
        """Lexicographically first ``(m, n)``, ``m < n``, minimizing ``|mu_m - mu_n|^2``."""
        k = self.n_clusters
        mu = self.means
        best, pair = np.inf, None
        for m in range(k):
            for n in range(m + 1, k):
                diff = mu[:, m] - mu[:, n]
                d = float(diff @ diff)
                if d < best:
                    best, pair = d, (m, n)
        return pair, best

    def widest_cluster(self):
        l = int(np.argmax(self.scatters))
        return l, float(self.scatters[l])


def cluster_stats(z, y):
    z, y = _check(z, y)
    sizes = y.sum(axis=1)
    if np.any(sizes < 1):
        raise ValidationError("every cluster needs at least one point")
    labels = np.argmax(y, axis=0)
    means = (z @ y.T) / sizes
    centered = z - means[:, labels]
    scatters = y @ np.sum(centered * centered, axis=0)
    return ClusterStats(labels, sizes, means, scatters, centered)


def _inter_term(stats, grad):
    if stats.n_clusters < 2:
        raise ValidationError("the inter-cluster term needs at least two clusters")
    (m, n), d = stats.closest_pair()
    diff = stats.means[:, m] - stats.means[:, n]
    scale = -2.0 / (d + EPS)
    labels = stats.labels
    grad[:, labels == m] += (scale / stats.sizes[m]) * diff[:, None]
    grad[:, labels == n] -= (scale / stats.sizes[n]) * diff[:, None]
    return -np.log(d + EPS)


def _intra_term(stats, grad):
    l, s = stats.widest_cluster()
    mask = stats.labels == l
    grad[:, mask] += (2.0 / (s + EPS)) * stats.centered[:, mask]
    return np.log(s + EPS)


def mimi(z, y, normalize=False):
    """Worst-case inter/intra ratio loss.

    ``-log(min_{m<n} |mu_m - mu_n|^2 + eps) + log(max_l s_l + eps)``; the
    gradient flows through the selected closest pair and widest cluster only
    (ties resolved to the smallest indices).
    """
    stats = cluster_stats(z, y)
    grad = np.zeros_like(stats.centered)
    value = _inter_term(stats, grad) + _intra_term(stats, grad)
    return LossEval(float(value), grad)


def max_inter(z, y, normalize=False):
    stats = cluster_stats(z, y)
    grad = np.zeros_like(stats.centered)
    return LossEval(float(_inter_term(stats, grad)), grad)


def min_intra(z, y, normalize=False):
    stats = cluster_stats(z, y)
    grad = np.zeros_like(stats.centered)
    return LossEval(float(_intra_term(stats, grad)), grad)


def supervised_kmeans(z, y, normalize=False):
    """Sum of squared distances to ground-truth cluster means."""
    stats = cluster_stats(z, y)
    value = float(stats.scatters.sum())
    grad = 2.0 * stats.centered
    if normalize:
        n = z.shape[1]
        value, grad = value / n, grad / n
    return LossEval(value, grad)


LOSSES = {
    "l2": l2_regression,
    "ce": cross_entropy,
    "mimi": mimi,
    "maxinter": max_inter,
    "minintra": min_intra,
    "skm": supervised_kmeans,
}

NEEDS_TWO_CLUSTERS = {"mimi", "maxinter"}


def get_loss(name):
    try:
        return LOSSES[name]
    except KeyError:
        raise ValidationError(
            f"unknown loss {name!r}; choose from {sorted(LOSSES)}") from None
