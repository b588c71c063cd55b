"""Spectral clustering on the top eigenvectors of ``X^T X`` and two count baselines."""
from dataclasses import dataclass, field
from itertools import permutations

import numpy as np
from scipy.optimize import linear_sum_assignment
from sklearn.base import BaseEstimator, ClusterMixin
from sklearn.metrics import silhouette_score
from sklearn.utils.validation import check_array, check_is_fitted

from ._validation import as_symmetric, check_positive_int
from .clustercount import ClusterCountEstimator
from .exceptions import DegenerateSpectrumError, DimensionError
from .matkernel import sym_eig

KMEANS_RESTARTS = 10
KMEANS_MAX_ITER = 300
KMEANS_TOL = 1e-8
PERMUTATION_LIMIT = 8
GAP_REFERENCES = 50


def _fix_signs(U):
    pivot = np.argmax(np.abs(U), axis=0)
    signs = np.sign(U[pivot, np.arange(U.shape[1])])
    signs[signs == 0] = 1.0
    return U * signs


def embed(S_tilde, K):
    """Top-``K`` eigenvectors of a symmetric n x n matrix, as columns (descending).

    Each column is oriented so its largest-magnitude entry is positive.
    """
    S = as_symmetric(S_tilde, "S_tilde")
    K = check_positive_int(K, "K")
    if K > S.shape[0]:
        raise DimensionError(f"K={K} exceeds the matrix size {S.shape[0]}")
    return _fix_signs(sym_eig(S).vectors[:, :K])


def embed_data(X, K, centered=False):
    """Embedding of a p x n data matrix through ``X^T X`` (or its centered version)."""
    X = np.asarray(X, dtype=float)
    if centered:
        X = X - X.mean(axis=1, keepdims=True)
    return embed(X.T @ X, K)


@dataclass
class Clustering:
    labels: np.ndarray
    centers: np.ndarray
    inertia: float
    history: list = field(default_factory=list, repr=False)
    n_iter: int = 0


def _inertia(U, labels, centers):
    return float(np.sum((U - centers[labels]) ** 2))


def _assign(U, centers):
    d2 = (np.sum(U * U, axis=1)[:, None] - 2 * U @ centers.T
          + np.sum(centers * centers, axis=1)[None, :])
    return np.argmin(d2, axis=1), np.maximum(d2, 0.0)


def _kmeanspp(U, K, rng):
    n = U.shape[0]
    centers = np.empty((K, U.shape[1]))
    centers[0] = U[rng.integers(n)]
    closest = np.sum((U - centers[0]) ** 2, axis=1)
    for j in range(1, K):
        total = closest.sum()
        idx = rng.integers(n) if total <= 0 else rng.choice(n, p=closest / total)
        centers[j] = U[idx]
        closest = np.minimum(closest, np.sum((U - centers[j]) ** 2, axis=1))
    return centers


def _lloyd(U, centers, max_iter, tol):
    labels, d2 = _assign(U, centers)
    history = [_inertia(U, labels, centers)]
    it = 0
    for it in range(1, max_iter + 1):
        new = centers.copy()
        for j in range(centers.shape[0]):
            members = labels == j
            if members.any():
                new[j] = U[members].mean(axis=0)
            else:
                # empty cluster: move its center to the point worst served
                far = int(np.argmax(d2[np.arange(U.shape[0]), labels]))
                new[j] = U[far]
                labels[far] = j
                d2[far] = 0.0
        labels, d2 = _assign(U, new)
        centers = new
        history.append(_inertia(U, labels, centers))
        if history[-2] - history[-1] <= tol * max(history[-2], 1e-300):
            break
    for j in range(centers.shape[0]):
        if np.any(labels == j):
            centers[j] = U[labels == j].mean(axis=0)
    return Clustering(labels, centers, _inertia(U, labels, centers), history, it)


def kmeans_rows(U, K, rng=None, restarts=KMEANS_RESTARTS, max_iter=KMEANS_MAX_ITER,
                tol=KMEANS_TOL):
    """K-means on the rows of ``U``: k-means++ starts, Lloyd iterations, best of ``restarts``."""
    U = np.asarray(U, dtype=float)
    if U.ndim == 1:
        U = U[:, None]
    K = check_positive_int(K, "K")
    if K > U.shape[0]:
        raise DimensionError(f"K={K} exceeds the number of rows {U.shape[0]}")
    rng = np.random.default_rng(rng)
    best = None
    for _ in range(check_positive_int(restarts, "restarts")):
        fit = _lloyd(U, _kmeanspp(U, K, rng), max_iter, tol)
        if best is None or fit.inertia < best.inertia:
            best = fit
    return best


def misclustering_rate(labels, truth):
    """Smallest fraction of disagreements over all matchings of label names.

    Exhaustive over permutations for up to eight labels, Hungarian assignment beyond.
    """
    labels = np.asarray(labels).ravel()
    truth = np.asarray(truth).ravel()
    if labels.size != truth.size or labels.size == 0:
        raise DimensionError("labelings must be non-empty and of equal length")
    a_names, a = np.unique(labels, return_inverse=True)
    b_names, b = np.unique(truth, return_inverse=True)
    size = max(a_names.size, b_names.size)
    table = np.zeros((size, size), dtype=np.int64)
    np.add.at(table, (a, b), 1)
    if size <= PERMUTATION_LIMIT:
        rows = np.arange(size)
        agree = max(table[rows, list(perm)].sum() for perm in permutations(range(size)))
    else:
        r, c = linear_sum_assignment(-table)
        agree = table[r, c].sum()
    return 1.0 - agree / labels.size


def _points(X):
    """Columns of a p x n matrix as rows of an n x p array."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise DimensionError("X must be a p x n matrix")
    return X.T


def silhouette_k(X, k_range, rng=None, restarts=KMEANS_RESTARTS):
    """Average-silhouette choice of k for the columns of ``X``.

    Returns ``(k, scores)`` with ``scores[k]`` the mean silhouette width.
    """
    pts = _points(X)
    if np.allclose(pts, pts[0]):
        raise DegenerateSpectrumError("all points coincide; silhouettes are undefined")
    rng = np.random.default_rng(rng)
    scores = {}
    for k in k_range:
        if not 2 <= k <= pts.shape[0] - 1:
            raise DimensionError(f"silhouette needs 2 <= k <= n - 1, got {k}")
        fit = kmeans_rows(pts, k, rng, restarts)
        if np.unique(fit.labels).size < 2:
            scores[k] = 0.0
            continue
        scores[k] = float(silhouette_score(pts, fit.labels, metric="euclidean"))
    best = max(scores, key=lambda k: (scores[k], -k))
    return best, scores


def _log_within(pts, k, rng, restarts):
    return np.log(max(kmeans_rows(pts, k, rng, restarts).inertia, 1e-300))


def gap_statistic_k(X, k_range, B=GAP_REFERENCES, rng=None, restarts=3):
    """Gap-statistic choice of k for the columns of ``X``.

    References are uniform over the per-feature bounding box; the chosen k is
    the smallest with ``Gap(k) >= Gap(k+1) - s_{k+1}`` (the largest k in the
    range if none qualifies). Returns ``(k, gaps, s)``.
    """
    if B < 10:
        raise ValueError("B must be at least 10")
    pts = _points(X)
    rng = np.random.default_rng(rng)
    ks = sorted(k_range)
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    refs = [rng.uniform(lo, hi, size=pts.shape) for _ in range(B)]
    gaps, s = {}, {}
    for k in ks:
        observed = _log_within(pts, k, rng, restarts)
        ref = np.array([_log_within(R, k, rng, restarts) for R in refs])
        gaps[k] = float(ref.mean() - observed)
        s[k] = float(ref.std() * np.sqrt(1.0 + 1.0 / B))
    for k, k_next in zip(ks, ks[1:]):
        if gaps[k] >= gaps[k_next] - s[k_next]:
            return k, gaps, s
    return ks[-1], gaps, s


class SpectralMixtureClustering(ClusterMixin, BaseEstimator):
    """Spectral clustering with an estimated number of clusters.

    The count comes from :class:`ClusterCountEstimator` unless ``n_clusters``
    is given; samples are then clustered by k-means on the rows of the top
    eigenvectors of the n x n Gram matrix.

    ``fit`` takes ``X`` of shape (n_samples, n_features).
    """

    def __init__(self, n_clusters=None, criterion="edb", pseudo="auto", w=None,
                 centered=False, restarts=KMEANS_RESTARTS, random_state=None):
        self.n_clusters = n_clusters
        self.criterion = criterion
        self.pseudo = pseudo
        self.w = w
        self.centered = centered
        self.restarts = restarts
        self.random_state = random_state

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64, ensure_min_samples=2)
        if self.n_clusters is None:
            counter = ClusterCountEstimator(self.criterion, self.pseudo, self.w, self.centered)
            k = counter.fit(X).n_clusters_
            self.count_estimator_ = counter
        else:
            k = check_positive_int(self.n_clusters, "n_clusters")
        data = X.T / np.sqrt(X.shape[0])
        U = embed_data(data, k, self.centered)
        fit = kmeans_rows(U, k, self.random_state, self.restarts)
        self.n_clusters_ = k
        self.embedding_ = U
        self.labels_ = fit.labels
        self.cluster_centers_ = fit.centers
        self.inertia_ = fit.inertia
        self.n_features_in_ = X.shape[1]
        return self

    def fit_predict(self, X, y=None):
        return self.fit(X).labels_

    def predict(self, X=None):
        check_is_fitted(self, "labels_")
        return self.labels_
