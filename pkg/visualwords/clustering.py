import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

logger = logging.getLogger(__name__)

METHODS = ('kmeans', 'kmeans++')

# Rows per block when computing point-to-centroid distances.
CHUNK_SIZE = 4096
# Relative rounding error of the expanded squared distance.
NEAR_TIE_EPS = 1e-9


class ClusteringError(ArithmeticError):
    pass


@dataclass
class Codebook(object):
    centroids: np.ndarray
    seed: int = 0
    method: str = 'kmeans++'
    inertia: float = 0.0
    n_iter: int = 0
    inertia_history: list = field(default_factory=list)

    @property
    def k(self):
        return self.centroids.shape[0]

    @property
    def dim(self):
        return self.centroids.shape[1]


def _check_points(points):
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2:
        raise ClusteringError("Expected an n x d matrix, got shape %s"
                              % (points.shape,))
    if not np.all(np.isfinite(points)):
        raise ClusteringError("Points contain non-finite values.")
    return points


def nearest_centroid(points, centroids):
    """
    Index of the nearest centroid (squared Euclidean, lowest index on
    ties) and the squared distance to it, for every row of ``points``.

    The expanded form |x|^2 - 2 x.c + |c|^2 only shortlists candidates;
    every centroid within rounding distance of the row minimum is scored
    again as sum((x - c)^2), so the result matches an exhaustive scan.
    """
    points = np.asarray(points, dtype=np.float64)
    centroids = np.asarray(centroids, dtype=np.float64)
    n = points.shape[0]
    labels = np.zeros(n, dtype=np.int64)
    distances = np.zeros(n)
    if n == 0:
        return labels, distances

    centroid_norms = np.einsum('ij,ij->i', centroids, centroids)
    for start in range(0, n, CHUNK_SIZE):
        block = points[start:start + CHUNK_SIZE]
        block_norms = np.einsum('ij,ij->i', block, block)
        d2 = (block_norms[:, None] - 2.0 * block.dot(centroids.T) +
              centroid_norms[None, :])
        slack = NEAR_TIE_EPS * (block_norms + centroid_norms.max())
        near = d2 <= (d2.min(axis=1) + slack)[:, None]
        rows, cols = np.nonzero(near)
        exact = np.full(d2.shape, np.inf)
        exact[rows, cols] = ((block[rows] - centroids[cols]) ** 2).sum(axis=1)
        best = np.argmin(exact, axis=1)
        labels[start:start + CHUNK_SIZE] = best
        distances[start:start + CHUNK_SIZE] = exact[np.arange(len(block)),
                                                    best]
    return labels, distances


def kmeanspp_seed(points, k, rng):
    """
    k-means++ seeding: the first center uniformly, then each next one with
    probability proportional to its squared distance D(x)^2 to the nearest
    chosen center.
    """
    points = _check_points(points)
    n = points.shape[0]
    if k < 1:
        raise ClusteringError("k must be >= 1, got %d" % k)
    if n < k:
        raise ClusteringError("Cannot seed %d centers from %d points." % (k, n))

    chosen = [int(rng.integers(n))]
    d2 = np.sum((points - points[chosen[0]]) ** 2, axis=1)
    for _ in range(1, k):
        cumulative = np.cumsum(d2)
        total = cumulative[-1]
        if not total > 0:
            raise ClusteringError("degenerate data for k>1: every point "
                                  "coincides with a chosen center")
        # Points with D(x) = 0 own an empty interval and are never hit.
        target = rng.random() * total
        index = int(np.searchsorted(cumulative, target, side='right'))
        index = min(index, n - 1)
        chosen.append(index)
        d2 = np.minimum(d2, np.sum((points - points[index]) ** 2, axis=1))
    return points[chosen].copy()


def uniform_seed(points, k, rng):
    """Baseline seeding: k distinct points drawn uniformly."""
    points = _check_points(points)
    n = points.shape[0]
    if n < k:
        raise ClusteringError("Cannot seed %d centers from %d points." % (k, n))
    return points[np.sort(rng.choice(n, size=k, replace=False))].copy()


def _update(points, labels, distances, k):
    """
    Cluster means. An empty cluster takes the point farthest from its
    current centroid so the vocabulary keeps exactly k words.
    """
    n = points.shape[0]
    membership = sparse.csr_matrix(
        (np.ones(n), (labels, np.arange(n))), shape=(k, n))
    counts = np.asarray(membership.sum(axis=1)).ravel()
    sums = membership.dot(points)

    empty = np.flatnonzero(counts == 0)
    if len(empty):
        distances = distances.copy()
        for cluster in empty:
            # Never empty the donor cluster.
            candidates = np.where(counts[labels] > 1, distances, -np.inf)
            farthest = int(np.argmax(candidates))
            logger.debug("Re-seeding empty cluster %d with point %d",
                         cluster, farthest)
            old = labels[farthest]
            counts[old] -= 1
            sums[old] -= points[farthest]
            counts[cluster] = 1
            sums[cluster] = points[farthest]
            labels[farthest] = cluster
            distances[farthest] = -1.0
    return sums / counts[:, None]


def lloyd(points, init, max_iter=100, tol=1e-4):
    """
    Alternating assignment / mean update until the largest centroid move
    drops below ``tol`` or ``max_iter`` updates have run.
    """
    points = _check_points(points)
    centroids = _check_points(init).copy()
    if max_iter < 1:
        raise ClusteringError("max_iter must be >= 1")
    k = centroids.shape[0]

    labels, distances = nearest_centroid(points, centroids)
    history = [float(distances.sum())]
    iterations = 0
    for iterations in range(1, max_iter + 1):
        updated = _update(points, labels, distances, k)
        shift = np.max(np.linalg.norm(updated - centroids, axis=1))
        centroids = updated
        labels, distances = nearest_centroid(points, centroids)
        history.append(float(distances.sum()))
        if shift < tol:
            break
    else:
        logger.info("k-means stopped after %d iterations without "
                    "converging", max_iter)

    return Codebook(centroids, inertia=history[-1], n_iter=iterations,
                    inertia_history=history)


def build_codebook(descriptors, k=2000, seed=0, method='kmeans++',
                   max_iter=100, tol=1e-4, max_points=200000):
    """
    Clusters pooled training descriptors into a k-word vocabulary.
    """
    if method not in METHODS:
        raise ClusteringError("Unknown clustering method %r" % method)
    points = _check_points(descriptors)
    rng = np.random.default_rng(seed)
    if max_points and points.shape[0] > max_points:
        logger.info("Subsampling %d of %d descriptors", max_points,
                    points.shape[0])
        points = points[np.sort(rng.choice(points.shape[0], max_points,
                                           replace=False))]
    if points.shape[0] < k:
        raise ClusteringError("Need at least %d descriptors for a %d-word "
                              "codebook, got %d" % (k, k, points.shape[0]))

    if method == 'kmeans++':
        init = kmeanspp_seed(points, k, rng)
    else:
        init = uniform_seed(points, k, rng)

    codebook = lloyd(points, init, max_iter=max_iter, tol=tol)
    # Persisted centroids are float32; keep memory and disk identical.
    codebook.centroids = codebook.centroids.astype(np.float32).astype(
        np.float64)
    codebook.seed = seed
    codebook.method = method
    logger.info("Built %d-word codebook (%s) in %d iterations, inertia %.6g",
                k, method, codebook.n_iter, codebook.inertia)
    return codebook
