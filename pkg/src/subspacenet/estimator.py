"""scikit-learn style wrappers around the training and inference pipeline.

Each estimator sees a point set in sklearn's ``(n_samples, n_features)``
layout; internally everything is transposed to the ``D x N`` column layout
of the core modules. A training set is a sequence of such point sets, one
per instance, with a matching sequence of label vectors.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClusterMixin
from sklearn.utils.validation import check_array, check_is_fitted, column_or_1d

from .dataio import Instance, ValidationError, reindex_labels
from .geometry import sequential_fit
from .inference import DEFAULT_K_MAX, DEFAULT_RESTARTS, kmeans, select_k
from .metrics import error_rate
from .network import NetworkConfig, embed
from .training import TrainConfig, train


def _points(X):
    return check_array(X, dtype=np.float64, ensure_min_samples=2, ensure_min_features=2).T


def _instances(X, y):
    if isinstance(X, np.ndarray) and X.ndim == 2:
        raise ValidationError("fit expects a sequence of point sets, one per instance")
    if y is None or len(X) != len(y):
        raise ValidationError("fit needs one label vector per point set")
    out = []
    for i, (pts, lab) in enumerate(zip(X, y)):
        pts = _points(pts)
        lab = column_or_1d(lab)
        if lab.size != pts.shape[1]:
            raise ValidationError(f"instance {i}: {lab.size} labels for {pts.shape[1]} points")
        out.append(Instance(pts, reindex_labels(lab), name=f"fit_{i}"))
    return out


class SubspaceClusterer(BaseEstimator):
    """Learned embedding followed by K-means.

    ``fit`` trains the network on labeled instances. ``transform`` maps the
    points of one new instance to embedding rows and ``predict`` clusters
    them, with ``n_clusters="auto"`` choosing K by ``selection``.
    """

    def __init__(self, n_clusters="auto", hidden_width=128, num_blocks=50, embed_dim=5,
                 l2norm=True, loss="mimi", learning_rate=1e-3, epochs=300,
                 label_fraction=1.0, selection="sod", k_max=DEFAULT_K_MAX,
                 restarts=DEFAULT_RESTARTS, random_state=0):
        self.n_clusters = n_clusters
        self.hidden_width = hidden_width
        self.num_blocks = num_blocks
        self.embed_dim = embed_dim
        self.l2norm = l2norm
        self.loss = loss
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.label_fraction = label_fraction
        self.selection = selection
        self.k_max = k_max
        self.restarts = restarts
        self.random_state = random_state

    def _configs(self, dim):
        net = NetworkConfig(input_dim=dim, hidden_width=self.hidden_width,
                            num_blocks=self.num_blocks, output_dim=self.embed_dim,
                            use_l2norm_output=self.l2norm, seed=self.random_state)
        tr = TrainConfig(loss=self.loss, learning_rate=self.learning_rate, epochs=self.epochs,
                         label_fraction=self.label_fraction, seed=self.random_state)
        return net, tr

    def fit(self, X, y):
        instances = _instances(X, y)
        dims = {inst.dim for inst in instances}
        if len(dims) != 1:
            raise ValidationError(f"point sets disagree on the feature count: {sorted(dims)}")
        net, tr = self._configs(dims.pop())
        self.params_, self.train_log_ = train(instances, net, tr)
        self.n_features_in_ = net.input_dim
        return self

    def transform(self, X):
        check_is_fitted(self, "params_")
        pts = _points(X)
        if pts.shape[0] != self.n_features_in_:
            raise ValidationError(
                f"expected {self.n_features_in_} features, got {pts.shape[0]}")
        return embed(pts, self.params_).T

    def predict(self, X):
        z = self.transform(X).T
        k = self.n_clusters
        if k == "auto":
            k = select_k(z, self.selection, min(self.k_max, z.shape[1]), self.restarts,
                         seed=self.random_state)
        return kmeans(z, int(k), self.restarts, seed=self.random_state).assignments

    def score(self, X, y):
        """One minus the misclassification rate on a single labeled point set."""
        return 1.0 - error_rate(self.predict(X), column_or_1d(y))


class SequentialRansac(ClusterMixin, BaseEstimator):
    """Greedy multi-type RANSAC baseline. Nothing is learned; ``fit`` labels the given points."""

    def __init__(self, schedule=(("line", 1), ("circle", 1), ("ellipse", 2)),
                 inlier_threshold=0.1, ransac_iters=200, random_state=0):
        self.schedule = schedule
        self.inlier_threshold = inlier_threshold
        self.ransac_iters = ransac_iters
        self.random_state = random_state

    def fit(self, X, y=None):
        pts = _points(X)
        self.labels_ = sequential_fit(pts, list(self.schedule), self.inlier_threshold,
                                      self.ransac_iters, seed=self.random_state)
        return self

    def predict(self, X):
        return self.fit(X).labels_
