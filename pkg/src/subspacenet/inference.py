"""K-means on embeddings and parameter-free estimation of the cluster count.

Embeddings are K_e x N (one column per point), matching the network output.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import cdist

from . import _kernels
from .dataio import ValidationError

MAX_ITER = 300
DEFAULT_RESTARTS = 20
DEFAULT_K_MAX = 10


@dataclass
class ClusterResult:
    assignments: np.ndarray
    centroids: np.ndarray
    residual: float

    def to_dict(self):
        return {
            "assignments": self.assignments.tolist(),
            "centroids": self.centroids.tolist(),
            "residual": self.residual,
        }


@dataclass
class ResidualCurve:
    """``r[K-1]`` is the (enveloped) K-means residual for ``K`` clusters."""

    r: np.ndarray
    restarts: int
    raw: np.ndarray = field(default=None, repr=False)

    @property
    def k_max(self):
        return self.r.size

    def __getitem__(self, k):
        return self.r[k - 1]

    def to_csv(self):
        lines = ["K,r"] + [f"{k},{float(v)!r}" for k, v in enumerate(self.r.tolist(), start=1)]
        return "\n".join(lines) + "\n"


def residual(z, assignments, centroids):
    """Sum of squared distances of each column to its assigned centroid."""
    diff = z - centroids[:, assignments]
    return float(np.sum(diff * diff))


def _sq_dists(points, centers):
    # points N x d, centers K x d; explicit differences keep exact zeros exact
    diff = points[:, None, :] - centers[None, :, :]
    return np.einsum("nkd,nkd->nk", diff, diff)


def _kmeans_pp(points, k, rng):
    n = points.shape[0]
    chosen = [int(rng.integers(n))]
    d2 = _sq_dists(points, points[chosen])[:, 0]
    for _ in range(1, k):
        total = d2.sum()
        if total > 0:
            idx = int(rng.choice(n, p=d2 / total))
        else:
            free = np.setdiff1d(np.arange(n), chosen)
            idx = int(rng.choice(free))
        chosen.append(idx)
        d2 = np.minimum(d2, _sq_dists(points, points[[idx]])[:, 0])
    return points[chosen].copy()


def _assign(d2, current=None):
    best = np.argmin(d2, axis=1)
    if current is not None:
        # stay put on exact ties so duplicated points cannot oscillate
        keep = d2[np.arange(d2.shape[0]), current] <= d2[np.arange(d2.shape[0]), best]
        best = np.where(keep, current, best)
    return best


def _repair_empty(points, labels, centers, k):
    """Move the farthest point of a multi-member cluster into each empty cluster."""
    for j in range(k):
        counts = np.bincount(labels, minlength=k)
        if counts[j] > 0:
            continue
        d2 = np.sum((points - centers[labels]) ** 2, axis=1)
        d2[counts[labels] < 2] = -1.0
        i = int(np.argmax(d2))
        labels[i] = j
        centers[j] = points[i]
    return labels


def _lloyd_fixpoint(points, labels, centers, k, max_iter):
    for _ in range(max_iter):
        for j in range(k):
            centers[j] = points[labels == j].mean(axis=0)
        new = _assign(_sq_dists(points, centers), labels)
        new = _repair_empty(points, new, centers, k)
        if np.array_equal(new, labels):
            break
        labels = new
    return labels


def _lloyd(points, k, rng, max_iter):
    """Lloyd from k-means++ seeds, then Hartigan moves, then Lloyd again.

    Every Hartigan move strictly lowers the residual, and a partition with no
    Hartigan move left is also a Lloyd fixpoint, so the refinement can only
    escape poor fixpoints. The final Lloyd pass recomputes exact means.
    """
    centers = _kmeans_pp(points, k, rng)
    labels = _assign(_sq_dists(points, centers))
    labels = _repair_empty(points, labels, centers, k)
    labels = _lloyd_fixpoint(points, labels, centers, k, max_iter)
    if k > 1 and _kernels.hartigan_refine(points, labels, k, max_iter) > 0:
        labels = _lloyd_fixpoint(points, labels, centers, k, max_iter)
    for j in range(k):
        centers[j] = points[labels == j].mean(axis=0)
    return labels, centers


def kmeans(z, k, restarts=DEFAULT_RESTARTS, seed=0, max_iter=MAX_ITER):
    """Best-of-``restarts`` Lloyd K-means with k-means++ seeding."""
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 2:
        raise ValidationError("embedding must be a K_e x N matrix")
    n = z.shape[1]
    if not 1 <= k <= n:
        raise ValidationError(f"need 1 <= K <= N, got K={k}, N={n}")
    if restarts < 1:
        raise ValidationError("restarts must be >= 1")
    points = np.ascontiguousarray(z.T)
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(restarts):
        labels, centers = _lloyd(points, k, rng, max_iter)
        r = residual(z, labels, centers.T)
        if best is None or r < best.residual:
            best = ClusterResult(labels.astype(np.int64), centers.T.copy(), r)
    return best


def residual_curve(z, k_max=DEFAULT_K_MAX, restarts=DEFAULT_RESTARTS, seed=0):
    """K-means residuals for K = 1..k_max with a non-increasing envelope."""
    n = np.asarray(z).shape[1]
    if not 1 <= k_max <= n:
        raise ValidationError(f"need 1 <= k_max <= N, got {k_max} with N={n}")
    raw = np.array([kmeans(z, k, restarts, seed=[seed, k]).residual
                    for k in range(1, k_max + 1)])
    return ResidualCurve(np.minimum.accumulate(raw), restarts, raw)


SOD_FLOOR = 1e-12


def sod_scores(curve):
    """Second differences of ``log(r(K) / r(1))`` for K = 2..k_max-1.

    Residuals are floored at ``SOD_FLOOR`` (relative to ``r(1)``) so that an
    exactly-zero tail stays finite.
    """
    r = np.asarray(curve.r if isinstance(curve, ResidualCurve) else curve, dtype=np.float64)
    if r.size < 3:
        raise ValidationError("second-order difference needs k_max >= 3")
    if r[0] <= 0:
        return None
    lr = np.log(np.maximum(r / r[0], SOD_FLOOR))
    return lr[:-2] + lr[2:] - 2.0 * lr[1:-1]


def select_k_sod(curve):
    """Elbow K maximizing the second-order difference; 1 for a flat curve."""
    scores = sod_scores(curve)
    if scores is None:
        return 1
    return int(np.argmax(scores)) + 2


def silhouette(z, labels):
    """Mean silhouette coefficient; singleton clusters score 0."""
    z = np.asarray(z, dtype=np.float64)
    labels = np.asarray(labels)
    n = z.shape[1]
    ids, labels = np.unique(labels, return_inverse=True)
    k = ids.size
    if k < 2:
        return 0.0
    d = cdist(z.T, z.T)
    onehot = np.zeros((n, k))
    onehot[np.arange(n), labels] = 1.0
    sizes = onehot.sum(axis=0)
    sums = d @ onehot
    own = sizes[labels]
    a = np.where(own > 1, sums[np.arange(n), labels] / np.maximum(own - 1, 1), 0.0)
    mean_other = sums / sizes
    mean_other[np.arange(n), labels] = np.inf
    b = mean_other.min(axis=1)
    denom = np.maximum(a, b)
    s = np.where((own > 1) & (denom > 0), (b - a) / np.where(denom > 0, denom, 1.0), 0.0)
    return float(s.mean())


def select_k_silhouette(z, k_max=DEFAULT_K_MAX, restarts=DEFAULT_RESTARTS, seed=0):
    """K in 2..k_max maximizing the mean silhouette of the K-means labeling."""
    n = np.asarray(z).shape[1]
    if n < 3:
        raise ValidationError("silhouette analysis needs N >= 3")
    if k_max < 2:
        raise ValidationError("silhouette analysis needs k_max >= 2")
    k_max = min(k_max, n - 1)
    scores = [silhouette(z, kmeans(z, k, restarts, seed=[seed, k]).assignments)
              for k in range(2, k_max + 1)]
    return int(np.argmax(scores)) + 2


def select_k(z, method="sod", k_max=DEFAULT_K_MAX, restarts=DEFAULT_RESTARTS, seed=0):
    if method == "sod":
        return select_k_sod(residual_curve(z, k_max, restarts, seed))
    if method in ("silh", "silhouette"):
        return select_k_silhouette(z, k_max, restarts, seed)
    raise ValidationError(f"unknown model selection method {method!r}")
