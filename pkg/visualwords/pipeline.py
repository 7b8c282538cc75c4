import csv
import dataclasses
import hashlib
import json
import logging
import os
import statistics
import time
from dataclasses import dataclass, field

import numpy as np
from django.conf import settings
from django.core.exceptions import ImproperlyConfigured

try:
    import tomllib
except ImportError:
    import tomli as tomllib

from .clustering import METHODS, Codebook, build_codebook
from .dataset import (DatasetSplit, ImageLoadError, check_disjoint,
                      load_grayscale, loo_folds, manifest_hash,
                      write_manifest)
from .encoding import (MODES, RCM_MODES, GroupingMap, IdfVector,
                       build_signature, compute_idf, conjunction_matrix,
                       quantize, read_grouping, read_signatures,
                       sum_conjunctions, word_grouping, write_grouping,
                       write_signatures)
from .features import (DETECTORS, DogParams, FeatureError, HarrisParams,
                       ImageFeatures, describe_keypoints, detect)
from .kernels import (KERNELS, SP_MODE, KernelMatrix, PyramidFeatures,
                      cross_kernel, gram_matrix)
from .storage import (BundleStorage, decode_codebook, decode_gram,
                      decode_model, encode_codebook, encode_gram,
                      encode_model)
from .svm import MultiModel, SvmModel, ova_train, predict_many
from .utils import PhaseTimer, parallel_map

logger = logging.getLogger(__name__)

ALL_MODES = MODES + (SP_MODE,)
PHASES = ('detect', 'describe', 'cluster', 'encode', 'gram', 'svm')

STATUS_OK = 'ok'
STATUS_FAILED = 'failed'


class PipelineError(RuntimeError):
    """A stage failed; carries the stage name and, if any, the image."""

    def __init__(self, message, stage=None, image_id=None):
        self.stage = stage
        self.image_id = image_id
        prefix = '[%s] ' % stage if stage else ''
        if image_id:
            prefix += '%s: ' % image_id
        super().__init__(prefix + message)


def _setting(name, default):
    return getattr(settings, name, default)


def _default(name, default):
    return field(default_factory=lambda: _setting(name, default))


@dataclass
class RunConfig(object):
    name: str = ''
    mode: str = _default('VV_MODE', 'impbovw')
    detector: str = _default('VV_DETECTOR', 'harris')
    vocab_size: int = _default('VV_VOCAB_SIZE', 2000)
    clustering: str = _default('VV_CLUSTERING', 'kmeans++')
    kernel: str = _default('VV_KERNEL', 'intersection')
    C: float = _default('VV_C', 10.0)
    neighbors: int = _default('VV_NEIGHBORS', 5)
    threshold: float = _default('VV_GROUPING_THRESHOLD', 0.6)
    rcm_flat: bool = _default('VV_RCM_FLAT', False)
    pyramid_level: int = _default('VV_PYRAMID_LEVEL', 2)
    sp_channels: int = _default('VV_SP_CHANNELS', 200)
    seed: int = _default('VV_SEED', 0)
    train_fraction: float = _default('VV_TRAIN_FRACTION', 0.7)
    tol: float = _default('VV_SVM_TOL', 1e-3)
    max_iter: int = _default('VV_SVM_MAX_ITER', 100000)
    rbf_gamma: float = _default('VV_RBF_GAMMA', None)
    kmeans_max_iter: int = _default('VV_KMEANS_MAX_ITER', 100)
    kmeans_tol: float = _default('VV_KMEANS_TOL', 1e-4)
    max_descriptors: int = _default('VV_MAX_DESCRIPTORS', 200000)
    harris: dict = _default('VV_HARRIS', {})
    dog: dict = _default('VV_DOG', {})
    dense_step: int = _default('VV_DENSE_STEP', 5)
    dense_scale: float = _default('VV_DENSE_SCALE', 1.6)

    def __post_init__(self):
        self.harris = dict(self.harris)
        self.dog = dict(self.dog)
        self.validate()

    def validate(self):
        def check(condition, message):
            if not condition:
                raise ImproperlyConfigured(message)

        check(self.mode in ALL_MODES, "mode must be one of %s, got %r"
              % (', '.join(ALL_MODES), self.mode))
        check(self.detector in DETECTORS, "detector must be one of %s, got %r"
              % (', '.join(DETECTORS), self.detector))
        check(self.clustering in METHODS, "clustering must be one of %s, "
              "got %r" % (', '.join(METHODS), self.clustering))
        check(self.kernel in KERNELS, "kernel must be one of %s, got %r"
              % (', '.join(KERNELS), self.kernel))
        check((self.mode == SP_MODE) == (self.kernel == 'spatial_pyramid'),
              "mode sp and kernel spatial_pyramid go together (mode %s, "
              "kernel %s)" % (self.mode, self.kernel))
        check(self.vocab_size >= 1, "vocab_size must be >= 1")
        check(self.C > 0, "C must be > 0")
        check(self.neighbors >= 1, "neighbors must be >= 1")
        check(self.threshold > 0, "threshold must be > 0")
        check(self.pyramid_level >= 0, "pyramid_level must be >= 0")
        check(self.sp_channels >= 0, "sp_channels must be >= 0")
        check(0.0 < self.train_fraction < 1.0,
              "train_fraction must lie in (0, 1)")
        check(self.tol > 0 and self.max_iter >= 1,
              "tol must be > 0 and max_iter >= 1")
        check(self.rbf_gamma is None or self.rbf_gamma > 0,
              "rbf_gamma must be > 0")
        check(self.kmeans_max_iter >= 1 and self.kmeans_tol >= 0,
              "Invalid k-means iteration settings")
        check(self.dense_step > 0 and self.dense_scale > 0,
              "dense_step and dense_scale must be > 0")
        try:
            HarrisParams(**self.harris).validate()
            DogParams(**self.dog).validate()
        except (TypeError, FeatureError) as error:
            raise ImproperlyConfigured("Invalid detector settings: %s"
                                       % error)

    @classmethod
    def from_dict(cls, values):
        names = set(f.name for f in dataclasses.fields(cls))
        unknown = sorted(set(values) - names)
        if unknown:
            raise ImproperlyConfigured("Unknown config keys: %s"
                                       % ', '.join(unknown))
        try:
            return cls(**values)
        except TypeError as error:
            raise ImproperlyConfigured(str(error))

    @classmethod
    def from_toml(cls, path):
        return cls.from_dict(read_toml(path))

    def replace(self, **changes):
        return self.from_dict(dict(self.to_dict(), **changes))

    def to_dict(self):
        return dataclasses.asdict(self)

    def config_hash(self):
        values = self.to_dict()
        values.pop('name')
        encoded = json.dumps(values, sort_keys=True).encode('utf-8')
        return hashlib.sha256(encoded).hexdigest()

    @property
    def label(self):
        if self.name:
            return self.name
        return '%s/%s/%s/%s' % (self.mode, self.detector, self.clustering,
                                self.kernel)

    def feature_key(self):
        """Settings that determine keypoints and descriptors."""
        return json.dumps([self.detector, self.harris, self.dog,
                           self.dense_step, self.dense_scale],
                          sort_keys=True)


def read_toml(path):
    try:
        with open(path, 'rb') as handle:
            return tomllib.load(handle)
    except FileNotFoundError:
        raise ImproperlyConfigured("Config file %s does not exist." % path)
    except tomllib.TOMLDecodeError as error:
        raise ImproperlyConfigured("Cannot parse %s: %s" % (path, error))


def _expand_grid(grid):
    points = [{}]
    for key in sorted(grid):
        values = grid[key]
        if not isinstance(values, list) or not values:
            raise ImproperlyConfigured("Grid entry %s must be a non-empty "
                                       "list" % key)
        points = [dict(point, **{key: value})
                  for point in points for value in values]
    return points


def load_grid(path=None):
    """
    Base config plus grid points from a TOML file whose ``[grid]`` table
    maps config keys to candidate lists. Without a file or table the
    VV_CV_GRID setting is used.
    """
    values = read_toml(path) if path else {}
    grid = values.pop('grid', None) or _setting('VV_CV_GRID',
                                                {'C': [0.1, 1.0, 10.0,
                                                       100.0]})
    base = RunConfig.from_dict(values)
    points = _expand_grid(grid)
    # Fail before any training on an invalid grid point.
    for point in points:
        base.replace(**point)
    return base, points


def default_bench_configs():
    return [{'name': '%s+%s' % (clustering, kernel), 'mode': 'impbovw',
             'clustering': clustering, 'kernel': kernel}
            for clustering in ('kmeans', 'kmeans++')
            for kernel in ('rbf', 'intersection')]


def load_bench_configs(path=None):
    """
    One RunConfig per ``[[config]]`` entry; top-level keys are shared.
    """
    values = read_toml(path) if path else {}
    entries = values.pop('config', None) or default_bench_configs()
    if not isinstance(entries, list):
        raise ImproperlyConfigured("[[config]] entries must form an array.")
    return [RunConfig.from_dict(dict(values, **entry)) for entry in entries]


def _extract(entry, config):
    """Loads one image and computes keypoints and descriptors."""
    image_id = entry.image_path
    start = time.perf_counter()
    try:
        image = load_grayscale(entry.location)
        keypoints = detect(image, config.detector,
                           harris=HarrisParams(**config.harris),
                           dog=DogParams(**config.dog),
                           dense_step=config.dense_step,
                           dense_scale=config.dense_scale)
    except (ImageLoadError, FeatureError) as error:
        raise PipelineError(str(error), stage='detect', image_id=image_id)
    detected = time.perf_counter()
    try:
        kept, descriptors = describe_keypoints(image, keypoints)
    except FeatureError as error:
        raise PipelineError(str(error), stage='describe', image_id=image_id)
    finished = time.perf_counter()
    if not kept:
        logger.warning("No describable keypoints in %s", image_id)
    features = ImageFeatures(image_id, image.width, image.height, kept,
                             descriptors)
    return features, detected - start, finished - detected


def extract_corpus(entries, config, cache=None, timer=None,
                   keep_failures=False):
    """
    Features for every entry, in order. Failed images raise unless
    ``keep_failures``, in which case they map to the PipelineError.
    """
    cache = {} if cache is None else cache
    key = config.feature_key()

    def work(entry):
        cached = cache.get((entry.location, key))
        if cached is not None:
            return cached, 0.0, 0.0
        try:
            return _extract(entry, config)
        except PipelineError as error:
            if not keep_failures:
                raise
            return error, 0.0, 0.0

    results = parallel_map(work, entries)
    features = []
    for entry, (result, detect_seconds, describe_seconds) in zip(entries,
                                                                 results):
        if isinstance(result, ImageFeatures):
            cache[(entry.location, key)] = result
        if timer is not None:
            timer['detect'] = timer.get('detect', 0.0) + detect_seconds
            timer['describe'] = timer.get('describe', 0.0) + describe_seconds
        features.append(result)
    return features


@dataclass
class Bundle(object):
    """Everything needed to classify new images."""
    config: RunConfig
    codebook: Codebook
    model: MultiModel
    signatures: list
    train_labels: list
    train_identities: list
    train_hash: str
    channel_codebook: Codebook = None
    grouping: GroupingMap = None
    idf: IdfVector = None
    gram: object = None
    timings: PhaseTimer = field(default_factory=PhaseTimer)

    @property
    def classes(self):
        return self.model.classes

    def quantize(self, features):
        return quantize(features.descriptors, features.positions,
                        self.codebook, features.width, features.height,
                        features.image_id)

    def encode(self, features, quantized=None):
        """Signature of one image under the trained representation."""
        config = self.config
        q = quantized if quantized is not None else self.quantize(features)
        if config.mode == SP_MODE:
            if self.channel_codebook is None:
                channels, n_channels = q.words, self.codebook.k
            else:
                channels = self.quantize_channels(features)
                n_channels = self.channel_codebook.k
            pyramid = PyramidFeatures.from_words(
                channels, q.positions, features.width, features.height,
                n_channels, features.image_id)
            return pyramid.to_signature(config.pyramid_level)
        return build_signature(q, config.mode, self.codebook.k,
                               grouping=self.grouping, idf=self.idf,
                               neighbors=config.neighbors,
                               flat=config.rcm_flat)

    def quantize_channels(self, features):
        return quantize(features.descriptors, features.positions,
                        self.channel_codebook).words

    def kernel_rows(self, signatures):
        return cross_kernel(signatures, self.signatures, self.config.kernel,
                            level=self.config.pyramid_level,
                            gamma=self.config.rbf_gamma)

    def save(self, directory):
        storage = BundleStorage(location=directory)
        config = self.config
        storage.write_json('config.json', dict(config.to_dict(),
                                               config_hash=config.config_hash()))

        storage.write('codebook.vvcb', encode_codebook(self.codebook.centroids))
        storage.write_json('codebook.json', _codebook_meta(self.codebook))
        if self.channel_codebook is not None:
            storage.write('channels.vvcb',
                          encode_codebook(self.channel_codebook.centroids))
            storage.write_json('channels.json',
                               _codebook_meta(self.channel_codebook))
        if self.grouping is not None:
            write_grouping(self.grouping, storage.path('grouping.csv'))
        if self.idf is not None:
            _write_idf(self.idf, storage.path('idf.csv'))

        _write_rows(storage.path('train.csv'),
                    ('image_id', 'label', 'identity'),
                    zip([s.image_id for s in self.signatures],
                        self.train_labels, self.train_identities))
        write_signatures(self.signatures, storage.path('signatures.csv'))
        if self.gram is not None:
            storage.write('gram.vvgm', encode_gram(self.gram.values))
            storage.write_json('gram.json', {'ids': self.gram.ids,
                                             'kernel': self.gram.kernel})

        storage.write('model.vvsv', encode_model(
            self.model.kernel, [(m.alpha, m.y, m.bias)
                                for m in self.model.models]))
        storage.write_json('model.json', {
            'C': config.C,
            'tol': config.tol,
            'seed': config.seed,
            'kernel': self.model.kernel,
            'classes': self.model.classes,
            'signature_mode': self.signatures[0].mode,
            'signature_dim': self.signatures[0].dim,
            'train_manifest_hash': self.train_hash,
        })
        logger.info("Saved bundle to %s", directory)

    @classmethod
    def load(cls, directory):
        storage = BundleStorage(location=directory)
        if not storage.exists('model.vvsv'):
            raise ImproperlyConfigured("%s does not hold a trained bundle."
                                       % directory)
        values = storage.read_json('config.json')
        values.pop('config_hash', None)
        config = RunConfig.from_dict(values)

        codebook = _read_codebook(storage, 'codebook')
        channel_codebook = None
        if storage.exists('channels.vvcb'):
            channel_codebook = _read_codebook(storage, 'channels')
        grouping = None
        if storage.exists('grouping.csv'):
            grouping = read_grouping(storage.path('grouping.csv'))
        idf = None
        if storage.exists('idf.csv'):
            idf = _read_idf(storage.path('idf.csv'))

        meta = storage.read_json('model.json')
        rows = _read_rows(storage.path('train.csv'))
        ids = [row[0] for row in rows]
        signatures = read_signatures(storage.path('signatures.csv'), ids,
                                     meta['signature_mode'],
                                     meta['signature_dim'])
        kernel, models = decode_model(storage.read('model.vvsv'))
        model = MultiModel(
            [SvmModel(alpha, bias, y, meta['C'], kernel, meta['tol'])
             for alpha, y, bias in models],
            meta['classes'], kernel, ids)

        gram = None
        if storage.exists('gram.vvgm'):
            gram_meta = storage.read_json('gram.json')
            gram = KernelMatrix(decode_gram(storage.read('gram.vvgm')),
                                gram_meta['kernel'], gram_meta['ids'])

        return cls(config, codebook, model, signatures,
                   [row[1] for row in rows], [row[2] for row in rows],
                   meta['train_manifest_hash'], channel_codebook, grouping,
                   idf, gram)


def _codebook_meta(codebook):
    return {'k': codebook.k, 'dim': codebook.dim, 'seed': codebook.seed,
            'method': codebook.method, 'inertia': codebook.inertia,
            'n_iter': codebook.n_iter}


def _read_codebook(storage, name):
    meta = storage.read_json(name + '.json')
    centroids = decode_codebook(storage.read(name + '.vvcb'))
    return Codebook(centroids, meta['seed'], meta['method'], meta['inertia'],
                    meta['n_iter'])


def _write_rows(path, header, rows):
    with open(path, 'w', encoding='utf-8', newline='') as handle:
        writer = csv.writer(handle, lineterminator='\n')
        writer.writerow(header)
        writer.writerows(rows)


def _read_rows(path):
    with open(path, encoding='utf-8', newline='') as handle:
        reader = csv.reader(handle)
        next(reader, None)
        return [row for row in reader]


def _write_idf(idf, path):
    _write_rows(path, ('word_id', 'doc_count', 'idf', 'T'),
                ((word, int(count), repr(float(value)), idf.T)
                 for word, (count, value) in enumerate(zip(idf.doc_counts,
                                                           idf.idf))))


def _read_idf(path):
    rows = _read_rows(path)
    T = int(rows[0][3]) if rows else 0
    return IdfVector(np.array([float(row[2]) for row in rows]), T,
                     np.array([int(row[1]) for row in rows], dtype=np.int64))


def _fit_corpus_statistics(config, quantized, n_words):
    """Grouping and IDF from the training side only."""
    grouping, idf = None, None
    if config.mode in RCM_MODES:
        corpus = sum_conjunctions(
            (conjunction_matrix(q, n_words, config.neighbors)
             for q in quantized), n_words)
        grouping = word_grouping(corpus, config.threshold)
        if config.mode == 'impbovw':
            idf = compute_idf((grouping.map(q.words) for q in quantized),
                              grouping.n_groups, len(quantized))
    elif config.mode == 'sbovw_tfidf':
        idf = compute_idf((q.words for q in quantized), n_words,
                          len(quantized))
    return grouping, idf


def train_pipeline(config, split, cache=None):
    """
    detect -> describe -> cluster -> quantize -> encode -> Gram -> OvA SVM,
    with every corpus statistic computed on ``split.train``.
    """
    train = list(split.train)
    if not train:
        raise PipelineError("No training images.", stage='detect')
    check_disjoint(set(entry.identity for entry in train), split.test)
    timer = PhaseTimer()
    logger.info("Training %s on %d images", config.label, len(train))

    features = extract_corpus(train, config, cache=cache, timer=timer)

    with timer.phase('cluster'):
        pooled = [f.descriptors for f in features if len(f.descriptors)]
        if not pooled:
            raise PipelineError("No descriptors in the training images.",
                                stage='cluster')
        pooled = np.vstack(pooled)
        codebook = build_codebook(
            pooled, k=config.vocab_size, seed=config.seed,
            method=config.clustering, max_iter=config.kmeans_max_iter,
            tol=config.kmeans_tol, max_points=config.max_descriptors)
        channel_codebook = None
        if (config.mode == SP_MODE and config.sp_channels and
                config.sp_channels != config.vocab_size):
            channel_codebook = build_codebook(
                pooled, k=config.sp_channels, seed=config.seed,
                method=config.clustering, max_iter=config.kmeans_max_iter,
                tol=config.kmeans_tol, max_points=config.max_descriptors)

    with timer.phase('encode'):
        bundle = Bundle(config, codebook, None, [],
                        [entry.class_label for entry in train],
                        [entry.identity for entry in train],
                        manifest_hash(train), channel_codebook)
        quantized = [bundle.quantize(f) for f in features]
        bundle.grouping, bundle.idf = _fit_corpus_statistics(
            config, quantized, codebook.k)
        bundle.signatures = [bundle.encode(f, q)
                             for f, q in zip(features, quantized)]

    with timer.phase('gram'):
        bundle.gram = gram_matrix(bundle.signatures, config.kernel,
                                  level=config.pyramid_level,
                                  gamma=config.rbf_gamma)

    with timer.phase('svm'):
        bundle.model = ova_train(bundle.gram, bundle.train_labels, C=config.C,
                                 tol=config.tol, max_iter=config.max_iter)

    bundle.timings = timer
    logger.info("Trained %s in %.2fs (%s)", config.label, timer.total,
                ', '.join('%s %.2fs' % (phase, timer.get(phase, 0.0))
                          for phase in PHASES))
    return bundle


@dataclass
class Prediction(object):
    image_path: str
    label: str
    predicted: str = ''
    scores: list = field(default_factory=list)
    status: str = STATUS_OK
    reason: str = ''

    @property
    def failed(self):
        return self.status == STATUS_FAILED


@dataclass
class EvalReport(object):
    classes: list
    predictions: list = field(default_factory=list)
    timings: dict = field(default_factory=dict)
    name: str = ''

    @property
    def evaluated(self):
        return [p for p in self.predictions if not p.failed]

    @property
    def failures(self):
        return [p for p in self.predictions if p.failed]

    @property
    def labels(self):
        """Trained classes, then any test-only labels."""
        extra = sorted(set(p.label for p in self.evaluated) -
                       set(self.classes))
        return list(self.classes) + extra

    @property
    def confusion(self):
        labels = self.labels
        index = dict((label, i) for i, label in enumerate(labels))
        matrix = np.zeros((len(labels), len(labels)), dtype=np.int64)
        for p in self.evaluated:
            matrix[index[p.label], index[p.predicted]] += 1
        return matrix

    @property
    def total(self):
        return len(self.evaluated)

    @property
    def correct(self):
        return sum(1 for p in self.evaluated if p.label == p.predicted)

    @property
    def accuracy(self):
        """Average recognition rate in percent."""
        if not self.total:
            return 0.0
        return 100.0 * self.correct / self.total

    @property
    def recall(self):
        confusion = self.confusion
        result = {}
        for i, label in enumerate(self.labels):
            count = confusion[i].sum()
            result[label] = 100.0 * confusion[i, i] / count if count else None
        return result

    def write(self, directory):
        storage = BundleStorage(location=directory)
        storage.write('predictions.csv', self._predictions_csv())
        storage.write('confusion.csv', self._confusion_csv())
        storage.write('report.txt', self.as_text())
        if self.timings:
            storage.write('timings.csv', 'phase,seconds\n' + ''.join(
                '%s,%.6f\n' % (phase, seconds)
                for phase, seconds in sorted(self.timings.items())))
        logger.info("Wrote evaluation report to %s", directory)

    def _predictions_csv(self):
        lines = [','.join(['path', 'label', 'predicted', 'status'] +
                          ['score_%s' % label for label in self.classes])]
        for p in self.predictions:
            scores = [repr(float(score)) for score in p.scores]
            lines.append(','.join([p.image_path, p.label, p.predicted,
                                   p.status] + scores))
        return '\n'.join(lines) + '\n'

    def _confusion_csv(self):
        labels = self.labels
        lines = [','.join(['label'] + labels)]
        for label, row in zip(labels, self.confusion):
            lines.append(','.join([label] + [str(int(v)) for v in row]))
        return '\n'.join(lines) + '\n'

    def as_text(self):
        lines = []
        if self.name:
            lines.append('Run: %s' % self.name)
        lines.append('Average recognition rate: %.2f%% (%d / %d)'
                     % (self.accuracy, self.correct, self.total))
        lines.append('Failed images: %d' % len(self.failures))
        lines.append('')
        lines.append('Per-class recall:')
        for label, value in self.recall.items():
            lines.append('  %-16s %s' % (label, 'n/a' if value is None
                                         else '%.2f%%' % value))
        lines.append('')
        lines.append('Confusion matrix (rows: true, columns: predicted):')
        labels = self.labels
        width = max(len(label) for label in labels) if labels else 1
        lines.append(' ' * (width + 1) + ' '.join('%6s' % label[:6]
                                                   for label in labels))
        for label, row in zip(labels, self.confusion):
            lines.append('%-*s ' % (width, label) +
                         ' '.join('%6d' % v for v in row))
        for p in self.failures:
            lines.append('FAILED %s: %s' % (p.image_path, p.reason))
        return '\n'.join(lines) + '\n'


def evaluate(bundle, entries, cache=None):
    """
    Classifies every entry through kernel rows against the training
    signatures. Unreadable images are reported and left out of the rates.
    """
    entries = list(entries)
    check_disjoint(bundle.train_identities, entries)
    timer = PhaseTimer()
    results = extract_corpus(entries, bundle.config, cache=cache,
                             timer=timer, keep_failures=True)

    report = EvalReport(list(bundle.classes), name=bundle.config.label)
    signatures, pending = [], []
    with timer.phase('encode'):
        for entry, result in zip(entries, results):
            prediction = Prediction(entry.image_path, entry.class_label)
            report.predictions.append(prediction)
            if isinstance(result, PipelineError):
                logger.warning("Skipping %s: %s", entry.image_path, result)
                prediction.status = STATUS_FAILED
                prediction.reason = str(result)
                continue
            signatures.append(bundle.encode(result))
            pending.append(prediction)

    if signatures:
        with timer.phase('gram'):
            rows = bundle.kernel_rows(signatures)
        with timer.phase('svm'):
            labels, scores = predict_many(bundle.model, rows)
        for prediction, label, row in zip(pending, labels, scores):
            prediction.predicted = label
            prediction.scores = list(row)

    report.timings = dict(timer)
    logger.info("Evaluated %d images: %.2f%% correct, %d failed",
                report.total, report.accuracy, len(report.failures))
    return report


@dataclass
class CvPoint(object):
    overrides: dict
    config: RunConfig
    fold_scores: dict = field(default_factory=dict)

    @property
    def scores(self):
        return [s for s in self.fold_scores.values() if s is not None]

    @property
    def mean(self):
        scores = self.scores
        return sum(scores) / len(scores) if scores else None


@dataclass
class CvResult(object):
    points: list
    best: CvPoint

    def write(self, directory):
        storage = BundleStorage(location=directory)
        lines = ['point,params,identity,accuracy']
        for index, point in enumerate(self.points):
            params = json.dumps(point.overrides, sort_keys=True)
            for identity, score in sorted(point.fold_scores.items()):
                lines.append('%d,"%s",%s,%s' % (
                    index, params.replace('"', '""'), identity,
                    'failed' if score is None else '%.4f' % score))
        storage.write('cv_folds.csv', '\n'.join(lines) + '\n')
        storage.write_json('best_config.json', self.best.config.to_dict())


def cross_validate(base, grid, train, cache=None):
    """
    Leave-one-identity-out accuracy for every grid point. The best point
    has the highest mean, then the smaller C, then the smaller vocabulary.
    """
    grid = list(grid)
    if not grid:
        raise ImproperlyConfigured("The cross-validation grid is empty.")
    folds = loo_folds(train)
    cache = {} if cache is None else cache

    points = []
    for overrides in grid:
        point = CvPoint(overrides, base.replace(**overrides))
        for fold in folds:
            split = DatasetSplit(fold.remainder, fold.held_out)
            try:
                bundle = train_pipeline(point.config, split, cache=cache)
                score = evaluate(bundle, fold.held_out, cache=cache).accuracy
            except (PipelineError, ArithmeticError, ValueError) as error:
                logger.warning("Fold %s failed for %s: %s", fold.identity,
                               json.dumps(overrides, sort_keys=True), error)
                score = None
            point.fold_scores[fold.identity] = score
        logger.info("Grid point %s: mean accuracy %s",
                    json.dumps(overrides, sort_keys=True),
                    'n/a' if point.mean is None else '%.2f%%' % point.mean)
        points.append(point)

    scored = [p for p in points if p.mean is not None]
    if not scored:
        raise PipelineError("Every fold failed for every grid point.",
                            stage='cv')
    best = min(scored, key=lambda p: (-p.mean, p.config.C,
                                      p.config.vocab_size))
    return CvResult(points, best)


@dataclass
class TimingRow(object):
    config: RunConfig
    phases: dict
    total: float
    accuracy: float = None
    repeats: int = 1

    @property
    def name(self):
        return self.config.label


def benchmark_timing(configs, split, repeats=1):
    """
    Median phase timings of full training runs, one row per config. Each
    run extracts features afresh so detection time is included.
    """
    if repeats < 1:
        raise ImproperlyConfigured("repeats must be >= 1")
    rows = []
    for config in configs:
        runs, bundle = [], None
        for _ in range(repeats):
            bundle = train_pipeline(config, split)
            runs.append(bundle.timings)
        phases = dict((phase, statistics.median(run.get(phase, 0.0)
                                                for run in runs))
                      for phase in PHASES)
        total = statistics.median(run.total for run in runs)
        accuracy = None
        if split.test:
            accuracy = evaluate(bundle, split.test).accuracy
        rows.append(TimingRow(config, phases, total, accuracy, repeats))
        logger.info("Benchmarked %s: %.2fs median total", config.label,
                    total)
    return rows


TIMING_HEADER = (('name', 'mode', 'detector', 'clustering', 'kernel') +
                 PHASES + ('total', 'accuracy'))


def write_timing_table(rows, path):
    with open(path, 'w', encoding='utf-8', newline='') as handle:
        writer = csv.writer(handle, lineterminator='\n')
        writer.writerow(TIMING_HEADER)
        for row in rows:
            config = row.config
            writer.writerow(
                [row.name, config.mode, config.detector, config.clustering,
                 config.kernel] +
                ['%.4f' % row.phases[phase] for phase in PHASES] +
                ['%.4f' % row.total,
                 '' if row.accuracy is None else '%.2f' % row.accuracy])
    return path


def write_split_manifests(split, directory):
    os.makedirs(directory, exist_ok=True)
    write_manifest(split.train, os.path.join(directory, 'train_manifest.csv'))
    write_manifest(split.test, os.path.join(directory, 'test_manifest.csv'))
