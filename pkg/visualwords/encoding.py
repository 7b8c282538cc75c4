import csv
import logging
from collections import Counter
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.sparse import csgraph

from .clustering import nearest_centroid

logger = logging.getLogger(__name__)

MODES = ('sbovw', 'sbovw_tfidf', 'sbovw_rcm', 'impbovw')
# Modes built on the relative conjunction matrix and word grouping.
RCM_MODES = ('sbovw_rcm', 'impbovw')
# Modes weighted by inverse document frequency.
TFIDF_MODES = ('sbovw_tfidf', 'impbovw')


class EncodingError(ValueError):
    pass


@dataclass
class QuantizedImage(object):
    words: np.ndarray
    positions: np.ndarray
    width: int = 0
    height: int = 0
    image_id: str = ''

    def __post_init__(self):
        self.words = np.asarray(self.words, dtype=np.int64).ravel()
        self.positions = np.asarray(self.positions,
                                    dtype=np.float64).reshape(-1, 2)
        if len(self.words) != len(self.positions):
            raise EncodingError("%d words but %d positions"
                                % (len(self.words), len(self.positions)))


@dataclass
class Histogram(object):
    bins: np.ndarray
    normalized: bool


@dataclass
class ConjunctionMatrix(object):
    """Upper-triangular co-occurrence counts, keyed by (i, j) with i <= j."""
    n_words: int
    entries: dict = field(default_factory=dict)

    def total(self):
        return sum(self.entries.values())

    def to_sparse(self):
        if not self.entries:
            return sparse.csr_matrix((self.n_words, self.n_words))
        keys = sorted(self.entries)
        rows = [i for i, _ in keys]
        cols = [j for _, j in keys]
        data = [self.entries[key] for key in keys]
        return sparse.csr_matrix((data, (rows, cols)),
                                 shape=(self.n_words, self.n_words))

    def to_dense(self):
        return self.to_sparse().toarray()


@dataclass
class IdfVector(object):
    idf: np.ndarray
    T: int
    doc_counts: np.ndarray

    def __len__(self):
        return len(self.idf)


@dataclass
class GroupingMap(object):
    groups: np.ndarray

    @property
    def n_words(self):
        return len(self.groups)

    @property
    def n_groups(self):
        return int(self.groups.max()) + 1 if len(self.groups) else 0

    def map(self, words):
        return self.groups[np.asarray(words, dtype=np.int64)]


@dataclass
class Signature(object):
    features: np.ndarray
    weights: np.ndarray
    mode: str
    dim: int
    image_id: str = ''

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.int64).ravel()
        self.weights = np.asarray(self.weights, dtype=np.float64).ravel()
        if len(self.features) != len(self.weights):
            raise EncodingError("Signature features and weights differ in "
                                "length.")
        if len(self.features):
            order = np.argsort(self.features, kind='stable')
            self.features = self.features[order]
            self.weights = self.weights[order]
            if np.any(np.diff(self.features) == 0):
                raise EncodingError("Signature feature ids must be unique.")
            if self.features[0] < 0 or self.features[-1] >= self.dim:
                raise EncodingError("Signature feature id out of range.")
        if not np.all(np.isfinite(self.weights)) or np.any(self.weights < 0):
            raise EncodingError("Signature weights must be finite and >= 0.")

    def __len__(self):
        return len(self.features)

    @classmethod
    def from_dense(cls, vector, mode, support=None, image_id=''):
        """
        Keeps the entries in ``support`` (default: the non-zero ones).
        """
        vector = np.asarray(vector, dtype=np.float64)
        if support is None:
            support = vector != 0
        features = np.flatnonzero(support)
        return cls(features, vector[features], mode, len(vector), image_id)

    def to_dense(self):
        vector = np.zeros(self.dim)
        vector[self.features] = self.weights
        return vector


def quantize(descriptors, positions, codebook, width=0, height=0,
             image_id=''):
    """
    Nearest visual word for every descriptor (lowest index on ties).
    """
    descriptors = np.asarray(descriptors, dtype=np.float64)
    if descriptors.size == 0:
        return QuantizedImage(np.zeros(0, dtype=np.int64), np.zeros((0, 2)),
                              width, height, image_id)
    descriptors = descriptors.reshape(len(descriptors), -1)
    if descriptors.shape[1] != codebook.dim:
        raise EncodingError("Descriptor dimension %d does not match the "
                            "codebook dimension %d"
                            % (descriptors.shape[1], codebook.dim))
    words, _ = nearest_centroid(descriptors, codebook.centroids)
    return QuantizedImage(words, positions, width, height, image_id)


def _check_words(words, n_words):
    if len(words) and (words.min() < 0 or words.max() >= n_words):
        raise EncodingError("Word id outside [0, %d)" % n_words)


def tf_histogram(q, n_words):
    """
    Term frequencies: word counts over the number of words in the image.
    """
    _check_words(q.words, n_words)
    counts = np.bincount(q.words, minlength=n_words).astype(np.float64)
    if not len(q.words):
        return Histogram(counts, normalized=False)
    return Histogram(counts / len(q.words), normalized=True)


def compute_idf(presence, n_words, T=None):
    """
    IDF(w) = ln(T / n_w) with n_w the number of training images containing
    w at least once, clamped to 1.
    """
    presence = list(presence)
    if T is None:
        T = len(presence)
    if T < 1:
        raise EncodingError("IDF needs at least one training image.")

    doc_counts = np.zeros(n_words, dtype=np.int64)
    for words in presence:
        words = np.unique(np.asarray(words, dtype=np.int64))
        _check_words(words, n_words)
        doc_counts[words] += 1
    idf = np.log(T / np.maximum(doc_counts, 1).astype(np.float64))
    return IdfVector(idf, T, doc_counts)


def tfidf_weight(h, idf):
    if len(h.bins) != len(idf.idf):
        raise EncodingError("Histogram has %d bins but the IDF vector %d"
                            % (len(h.bins), len(idf.idf)))
    return h.bins * idf.idf


def conjunction_matrix(q, n_words, neighbors=5):
    """
    Counts visual-word pairs among each keypoint's ``neighbors`` nearest
    keypoints (ties by index). An unordered keypoint pair counts once.
    """
    if neighbors < 1:
        raise EncodingError("Neighbor count must be >= 1")
    _check_words(q.words, n_words)
    n = len(q.words)
    if n < 2:
        return ConjunctionMatrix(n_words)

    positions = q.positions
    d2 = np.sum((positions[:, None, :] - positions[None, :, :]) ** 2, axis=2)
    np.fill_diagonal(d2, np.inf)
    k = min(neighbors, n - 1)
    nearest = np.argsort(d2, axis=1, kind='stable')[:, :k]

    first = np.repeat(np.arange(n), k)
    second = nearest.ravel()
    pairs = np.unique(np.stack([np.minimum(first, second),
                                np.maximum(first, second)], axis=1), axis=0)
    wa, wb = q.words[pairs[:, 0]], q.words[pairs[:, 1]]
    counts = Counter(zip(np.minimum(wa, wb).tolist(),
                         np.maximum(wa, wb).tolist()))
    return ConjunctionMatrix(n_words, dict(counts))


def sum_conjunctions(matrices, n_words):
    """Corpus-level conjunction counts as a sparse upper-triangular matrix."""
    total = sparse.csr_matrix((n_words, n_words))
    for matrix in matrices:
        total = total + matrix.to_sparse()
    return total


def _context_rows(corpus):
    if isinstance(corpus, ConjunctionMatrix):
        corpus = corpus.to_sparse()
    if sparse.issparse(corpus):
        upper = sparse.triu(corpus).toarray().astype(np.float64)
    else:
        upper = np.triu(np.asarray(corpus, dtype=np.float64))
    # Mirror so each row is the word's full contextual distribution.
    return upper + upper.T - np.diag(np.diag(upper))


def word_grouping(corpus, threshold=0.6):
    """
    Joins words whose contextual rows have Pearson correlation >= threshold;
    groups are the connected components, numbered by their lowest word id.
    Zero-variance rows stay singletons.
    """
    if not threshold > 0:
        raise EncodingError("Grouping threshold must be > 0, got %r"
                            % threshold)
    rows = _context_rows(corpus)
    n = rows.shape[0]

    centered = rows - rows.mean(axis=1, keepdims=True)
    norms = np.linalg.norm(centered, axis=1)
    valid = np.flatnonzero(norms > 0)
    unit = centered[valid] / norms[valid, None]
    correlation = unit.dot(unit.T)
    # Identical rows must join even at threshold 1.
    linked = correlation >= threshold - 1e-12
    np.fill_diagonal(linked, False)
    a, b = np.nonzero(linked)
    graph = sparse.csr_matrix((np.ones(len(a)), (valid[a], valid[b])),
                              shape=(n, n))
    _, labels = csgraph.connected_components(graph, directed=False)

    _, first, inverse = np.unique(labels, return_index=True,
                                  return_inverse=True)
    rank = np.empty(len(first), dtype=np.int64)
    rank[np.argsort(first, kind='stable')] = np.arange(len(first))
    grouping = GroupingMap(rank[inverse])
    logger.info("Grouped %d words into %d groups at threshold %.3g",
                n, grouping.n_groups, threshold)
    return grouping


def triangular_index(i, j, size):
    """Row-major position of (i, j), i <= j, in the upper triangle."""
    return i * size - i * (i - 1) // 2 + (j - i)


def triangular_size(size):
    return size * (size + 1) // 2


def build_signature(q, mode, n_words, grouping=None, idf=None, neighbors=5,
                    flat=False):
    """
    Per-image classification feature.

    ``sbovw`` is the normalized TF histogram, ``sbovw_tfidf`` weights it by
    IDF. ``sbovw_rcm`` and ``impbovw`` remap words to groups, count grouped
    co-occurrences among spatial neighbours, normalize by the pair total and
    emit the diagonal and upper triangle; ``impbovw`` weights pair (i, j) by
    idf(i) * idf(j) at group granularity. ``flat`` replaces the pair
    features by the grouped 1-D histogram.
    """
    if mode not in MODES:
        raise EncodingError("Unknown signature mode %r" % mode)

    if mode not in RCM_MODES:
        h = tf_histogram(q, n_words)
        if mode == 'sbovw_tfidf':
            if idf is None:
                raise EncodingError("Mode sbovw_tfidf needs an IDF vector.")
            weights = tfidf_weight(h, idf)
        else:
            weights = h.bins
        return Signature.from_dense(weights, mode, support=h.bins > 0,
                                    image_id=q.image_id)

    if grouping is None or grouping.n_words != n_words:
        raise EncodingError("Mode %s needs a grouping over %d words."
                            % (mode, n_words))
    size = grouping.n_groups
    if mode == 'impbovw' and (idf is None or len(idf) != size):
        raise EncodingError("grouping/idf dimension mismatch: %d groups, "
                            "%s IDF entries"
                            % (size, None if idf is None else len(idf)))

    grouped = QuantizedImage(grouping.map(q.words), q.positions, q.width,
                             q.height, q.image_id)
    if flat:
        h = tf_histogram(grouped, size)
        weights = tfidf_weight(h, idf) if mode == 'impbovw' else h.bins
        return Signature.from_dense(weights, mode, support=h.bins > 0,
                                    image_id=q.image_id)

    matrix = conjunction_matrix(grouped, size, neighbors)
    total = matrix.total()
    dim = triangular_size(size)
    if not total:
        return Signature([], [], mode, dim, q.image_id)

    keys = sorted(matrix.entries)
    features, weights = [], []
    for i, j in keys:
        weight = matrix.entries[(i, j)] / float(total)
        if mode == 'impbovw':
            weight *= idf.idf[i] * idf.idf[j]
        features.append(triangular_index(i, j, size))
        weights.append(weight)
    return Signature(features, weights, mode, dim, q.image_id)


def write_signatures(signatures, path):
    with open(path, 'w', encoding='utf-8', newline='') as handle:
        writer = csv.writer(handle, lineterminator='\n')
        writer.writerow(('image_id', 'feature_id', 'weight'))
        for signature in signatures:
            for feature, weight in zip(signature.features,
                                       signature.weights):
                writer.writerow((signature.image_id, int(feature),
                                 repr(float(weight))))


def read_signatures(path, image_ids, mode, dim):
    """
    Reads a sparse signature CSV. Images without rows get empty
    signatures, in the order of ``image_ids``.
    """
    rows = {}
    with open(path, encoding='utf-8', newline='') as handle:
        reader = csv.reader(handle)
        next(reader, None)
        for image_id, feature, weight in reader:
            features, weights = rows.setdefault(image_id, ([], []))
            features.append(int(feature))
            weights.append(float(weight))
    signatures = []
    for image_id in image_ids:
        features, weights = rows.get(image_id, ([], []))
        signatures.append(Signature(features, weights, mode, dim, image_id))
    return signatures


def write_grouping(grouping, path):
    with open(path, 'w', encoding='utf-8', newline='') as handle:
        writer = csv.writer(handle, lineterminator='\n')
        writer.writerow(('word_id', 'group_id'))
        for word, group in enumerate(grouping.groups):
            writer.writerow((word, int(group)))


def read_grouping(path):
    with open(path, encoding='utf-8', newline='') as handle:
        reader = csv.reader(handle)
        next(reader, None)
        pairs = sorted((int(word), int(group)) for word, group in reader)
    return GroupingMap(np.array([group for _, group in pairs],
                                dtype=np.int64))
