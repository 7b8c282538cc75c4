import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

from .encoding import Signature
from .utils import parallel_map

logger = logging.getLogger(__name__)

KERNELS = ('intersection', 'rbf', 'spatial_pyramid')
FORMS = ('weighted', 'telescoping')
SP_MODE = 'sp'


class KernelError(ValueError):
    pass


def level_weights(level):
    """Weight of each pyramid level 0..L; coarse matches count less."""
    return [1.0 / 2 ** level] + [1.0 / 2 ** (level - l + 1)
                                 for l in range(1, level + 1)]


def _check_level(level):
    if level < 0:
        raise KernelError("Pyramid level must be >= 0, got %r" % level)


def grid_histogram(points, level):
    """
    Point counts over the 2^l x 2^l grid; ``hist[i, j]`` counts points with
    floor(x 2^l) = i and floor(y 2^l) = j.
    """
    _check_level(level)
    points = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    if len(points) and (points.min() < 0.0 or points.max() >= 1.0):
        raise KernelError("Pyramid coordinates must lie in [0, 1).")
    cells = 2 ** level
    index = np.floor(points * cells).astype(np.int64)
    hist = np.zeros((cells, cells), dtype=np.int64)
    np.add.at(hist, (index[:, 0], index[:, 1]), 1)
    return hist


def _histogram_intersection(a, b):
    return float(np.minimum(a, b).sum())


def pyramid_match_kernel(X, Y, level, form='weighted'):
    """
    Pyramid match between two point sets. ``weighted`` sums level
    intersections with weights 1/2^L (level 0) and 1/2^(L-l+1) (level l);
    ``telescoping`` counts new matches per level, weighted 1/2^(L-l).
    """
    _check_level(level)
    if form not in FORMS:
        raise KernelError("Unknown pyramid match form %r" % form)
    matches = [_histogram_intersection(grid_histogram(X, l),
                                       grid_histogram(Y, l))
               for l in range(level + 1)]

    if form == 'weighted':
        return sum(weight * value
                   for weight, value in zip(level_weights(level), matches))

    value = matches[level]
    for l in range(level):
        value += (matches[l] - matches[l + 1]) / 2 ** (level - l)
    return value


@dataclass
class PyramidFeatures(object):
    """
    Normalized keypoint positions split into channels, one per word.
    """
    channels: list = field(default_factory=list)
    image_id: str = ''

    def __post_init__(self):
        self.channels = [np.asarray(points, dtype=np.float64).reshape(-1, 2)
                         for points in self.channels]
        for points in self.channels:
            if len(points) and (points.min() < 0.0 or points.max() >= 1.0):
                raise KernelError("Pyramid coordinates must lie in [0, 1).")

    @property
    def n_channels(self):
        return len(self.channels)

    @property
    def size(self):
        return sum(len(points) for points in self.channels)

    @classmethod
    def from_words(cls, words, positions, width, height, n_channels,
                   image_id=''):
        """Splits pixel positions by channel and scales them by image size."""
        words = np.asarray(words, dtype=np.int64)
        positions = np.asarray(positions, dtype=np.float64).reshape(-1, 2)
        if len(words) and (words.min() < 0 or words.max() >= n_channels):
            raise KernelError("Channel id outside [0, %d)" % n_channels)
        scaled = positions / np.array([width, height], dtype=np.float64)
        scaled = np.clip(scaled, 0.0, np.nextafter(1.0, 0.0))
        return cls([scaled[words == m] for m in range(n_channels)], image_id)

    def to_signature(self, level=2):
        """
        Concatenated level-weighted grid histograms of every channel. The
        intersection of two such signatures is their spatial pyramid kernel.
        """
        _check_level(level)
        weights = level_weights(level)
        cells = [4 ** l for l in range(level + 1)]
        per_channel = sum(cells)
        features, values = [], []
        for m, points in enumerate(self.channels):
            if not len(points):
                continue
            offset = m * per_channel
            for l in range(level + 1):
                hist = grid_histogram(points, l).ravel()
                nonzero = np.flatnonzero(hist)
                features.append(offset + nonzero)
                values.append(weights[l] * hist[nonzero])
                offset += cells[l]
        if features:
            features = np.concatenate(features)
            values = np.concatenate(values)
        return Signature(features, values, SP_MODE,
                         self.n_channels * per_channel, self.image_id)


def spatial_pyramid_kernel(X, Y, level=2):
    if X.n_channels != Y.n_channels:
        raise KernelError("Channel count mismatch: %d vs %d"
                          % (X.n_channels, Y.n_channels))
    return sum(pyramid_match_kernel(x, y, level)
               for x, y in zip(X.channels, Y.channels))


def _dense(value):
    if isinstance(value, Signature):
        return value.features, value.weights
    value = np.asarray(value, dtype=np.float64).ravel()
    support = np.flatnonzero(value)
    return support, value[support]


def intersection_kernel(a, b):
    """Histogram intersection of two non-negative vectors."""
    if not isinstance(a, Signature) and not isinstance(b, Signature):
        a = np.asarray(a, dtype=np.float64).ravel()
        b = np.asarray(b, dtype=np.float64).ravel()
        if a.shape != b.shape:
            raise KernelError("Vectors differ in length: %d vs %d"
                              % (len(a), len(b)))
    fa, wa = _dense(a)
    fb, wb = _dense(b)
    if np.any(wa < 0) or np.any(wb < 0):
        raise KernelError("Histogram intersection needs non-negative "
                          "weights.")
    _, ia, ib = np.intersect1d(fa, fb, assume_unique=True,
                               return_indices=True)
    return float(np.minimum(wa[ia], wb[ib]).sum())


def rbf_kernel(a, b, gamma=None):
    """exp(-gamma |a - b|^2); gamma defaults to 1 / dimension."""
    va = a.to_dense() if isinstance(a, Signature) else np.asarray(a, float)
    vb = b.to_dense() if isinstance(b, Signature) else np.asarray(b, float)
    if va.shape != vb.shape:
        raise KernelError("Vectors differ in length: %d vs %d"
                          % (len(va), len(vb)))
    if gamma is None:
        gamma = 1.0 / len(va)
    return float(np.exp(-gamma * np.sum((va - vb) ** 2)))


@dataclass
class KernelMatrix(object):
    values: np.ndarray
    kernel: str
    ids: list = field(default_factory=list)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        n = self.values.shape[0]
        if self.values.shape != (n, n):
            raise KernelError("Kernel matrix must be square, got %s"
                              % (self.values.shape,))
        if not np.all(np.isfinite(self.values)):
            raise KernelError("Kernel matrix holds non-finite values.")
        if not np.allclose(self.values, self.values.T, rtol=0, atol=1e-9):
            raise KernelError("Kernel matrix is not symmetric.")
        self.ids = list(self.ids)

    def __len__(self):
        return self.values.shape[0]

    def subset(self, indices):
        indices = np.asarray(indices, dtype=np.int64)
        return KernelMatrix(self.values[np.ix_(indices, indices)],
                            self.kernel, [self.ids[i] for i in indices]
                            if self.ids else [])


def _as_signatures(items, kernel, level):
    if kernel not in KERNELS:
        raise KernelError("Unknown kernel %r" % kernel)
    signatures = []
    for item in items:
        if isinstance(item, PyramidFeatures):
            if kernel != 'spatial_pyramid':
                raise KernelError("Pyramid features need the "
                                  "spatial_pyramid kernel.")
            item = item.to_signature(level)
        elif not isinstance(item, Signature):
            raise KernelError("Cannot build a %s kernel over %s"
                              % (kernel, type(item).__name__))
        elif kernel == 'spatial_pyramid' and item.mode != SP_MODE:
            raise KernelError("The spatial_pyramid kernel needs pyramid "
                              "signatures, got mode %s" % item.mode)
        signatures.append(item)
    return signatures


def _to_csr(signatures, dim):
    indptr = np.zeros(len(signatures) + 1, dtype=np.int64)
    indptr[1:] = np.cumsum([len(s) for s in signatures])
    if signatures:
        indices = np.concatenate([s.features for s in signatures])
        data = np.concatenate([s.weights for s in signatures])
    else:
        indices, data = np.zeros(0, dtype=np.int64), np.zeros(0)
    return sparse.csr_matrix((data, indices, indptr),
                             shape=(len(signatures), dim))


def _common_dim(*groups):
    dims = set(s.dim for group in groups for s in group)
    if len(dims) > 1:
        raise KernelError("Signatures differ in dimension: %s"
                          % sorted(dims))
    return dims.pop() if dims else 0


def _intersection_values(rows, columns, upper=False):
    """
    Intersection kernel of every row signature against every column one.
    With ``upper`` only entries j >= i are filled.
    """
    csc = columns.tocsc()
    n = columns.shape[0]

    def compute(i):
        out = np.zeros(n)
        lo, hi = rows.indptr[i], rows.indptr[i + 1]
        if hi == lo:
            return out
        first = i if upper else 0
        block = csc[:, rows.indices[lo:hi]].toarray()[first:]
        out[first:] = np.minimum(block, rows.data[lo:hi][None, :]).sum(axis=1)
        return out

    values = parallel_map(compute, range(rows.shape[0]))
    return np.array(values).reshape(rows.shape[0], n)


def _rbf_values(rows, columns, gamma):
    row_norms = np.asarray(rows.multiply(rows).sum(axis=1)).ravel()
    column_norms = np.asarray(columns.multiply(columns).sum(axis=1)).ravel()
    dots = rows.dot(columns.T).toarray()
    d2 = np.maximum(row_norms[:, None] + column_norms[None, :] - 2.0 * dots,
                    0.0)
    return np.exp(-gamma * d2)


def _mirror_upper(values):
    upper = np.triu(values)
    return upper + np.triu(values, 1).T


def gram_matrix(items, kernel='intersection', level=2, gamma=None,
                ids=None):
    """
    Kernel values between all training items. The upper triangle is
    computed and mirrored, so the result equals its transpose exactly.
    """
    signatures = _as_signatures(items, kernel, level)
    dim = _common_dim(signatures)
    matrix = _to_csr(signatures, dim)
    if ids is None:
        ids = [s.image_id for s in signatures]

    if kernel == 'rbf':
        gamma = 1.0 / max(dim, 1) if gamma is None else gamma
        values = _rbf_values(matrix, matrix, gamma)
        np.fill_diagonal(values, 1.0)
    else:
        values = _intersection_values(matrix, matrix, upper=True)
    logger.debug("Built %d x %d %s Gram matrix", len(signatures),
                 len(signatures), kernel)
    return KernelMatrix(_mirror_upper(values), kernel, ids)


def cross_kernel(rows, columns, kernel='intersection', level=2, gamma=None):
    """Kernel values of each of ``rows`` against each of ``columns``."""
    rows = _as_signatures(rows, kernel, level)
    columns = _as_signatures(columns, kernel, level)
    dim = _common_dim(rows, columns)
    row_matrix = _to_csr(rows, dim)
    column_matrix = _to_csr(columns, dim)
    if kernel == 'rbf':
        gamma = 1.0 / max(dim, 1) if gamma is None else gamma
        return _rbf_values(row_matrix, column_matrix, gamma)
    return _intersection_values(row_matrix, column_matrix)
