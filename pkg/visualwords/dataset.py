import csv
import hashlib
import logging
import os
from dataclasses import dataclass, field

import numpy as np
from PIL import Image as PILImage, UnidentifiedImageError

logger = logging.getLogger(__name__)

MANIFEST_HEADER = ('path', 'label', 'identity')

# Pillow reports binary PGM as part of the PPM family.
SUPPORTED_FORMATS = ('PPM', 'PNG')

# ITU-R BT.601 luma weights.
LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])

# Smallest side the detectors are tuned for.
MIN_SIDE = 32


class DatasetError(ValueError):
    """Base class for corpus and protocol errors."""


class ManifestError(DatasetError):
    pass


class SplitError(DatasetError):
    pass


class ImageLoadError(DatasetError):
    pass


class LeakageError(DatasetError):
    """ Raised when test identities were seen while training."""


@dataclass
class Image(object):
    pixels: np.ndarray

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.float64)
        if self.pixels.ndim != 2:
            raise ImageLoadError("Image pixels must be a 2-D luminance array.")
        if not np.all(np.isfinite(self.pixels)):
            raise ImageLoadError("Image holds non-finite pixel values.")
        if self.pixels.size and (self.pixels.min() < 0.0 or
                                 self.pixels.max() > 1.0):
            raise ImageLoadError("Pixel values must lie within [0, 1].")

    @property
    def width(self):
        return self.pixels.shape[1]

    @property
    def height(self):
        return self.pixels.shape[0]


@dataclass(frozen=True)
class ManifestEntry(object):
    image_path: str
    class_label: str
    identity: str
    base_dir: str = ''

    @property
    def location(self):
        if os.path.isabs(self.image_path):
            return self.image_path
        return os.path.normpath(os.path.join(self.base_dir, self.image_path))


class Manifest(list):
    """
    Entries in file order, plus the declared label set (sorted).
    """

    def __init__(self, entries=(), labels=None):
        super().__init__(entries)
        if labels is None:
            labels = sorted(set(entry.class_label for entry in self))
        self.labels = list(labels)

    @property
    def identities(self):
        return sorted(set(entry.identity for entry in self))


@dataclass
class DatasetSplit(object):
    train: list = field(default_factory=list)
    test: list = field(default_factory=list)


@dataclass
class Fold(object):
    identity: str
    held_out: list
    remainder: list


def load_manifest(path):
    """
    Parses a ``path,label,identity`` CSV manifest.

    Image paths are kept as written; relative ones resolve against the
    manifest's own directory through ``ManifestEntry.location``.
    """
    if not os.path.isfile(path):
        raise ManifestError("Manifest %s does not exist." % path)

    base_dir = os.path.dirname(os.path.abspath(path))
    entries = []
    seen = set()
    with open(path, encoding='utf-8', newline='') as handle:
        reader = csv.reader(handle, quoting=csv.QUOTE_NONE)
        header = next(reader, None)
        if header is None:
            raise ManifestError("empty manifest: %s has no header" % path)
        if tuple(column.strip() for column in header) != MANIFEST_HEADER:
            raise ManifestError("Manifest header must be %s, got %s."
                                % (','.join(MANIFEST_HEADER), ','.join(header)))

        for row in reader:
            line = reader.line_num
            if not row or not ''.join(row).strip():
                continue
            if len(row) != len(MANIFEST_HEADER):
                raise ManifestError(
                    "Line %d: expected %d columns, got %d."
                    % (line, len(MANIFEST_HEADER), len(row)))
            image_path, label, identity = [value.strip() for value in row]
            if not image_path or not label:
                raise ManifestError("Line %d: empty path or label." % line)
            if not identity:
                raise ManifestError("Line %d: missing identity." % line)
            if image_path in seen:
                raise ManifestError("Line %d: duplicate image path %s."
                                    % (line, image_path))
            seen.add(image_path)
            entries.append(ManifestEntry(image_path, label, identity,
                                         base_dir))

    if not entries:
        raise ManifestError("empty manifest: %s has no data rows" % path)

    manifest = Manifest(entries)
    logger.info("Loaded %d entries, %d classes, %d identities from %s",
                len(manifest), len(manifest.labels),
                len(manifest.identities), path)
    return manifest


def write_manifest(entries, path):
    with open(path, 'w', encoding='utf-8', newline='') as handle:
        writer = csv.writer(handle, lineterminator='\n')
        writer.writerow(MANIFEST_HEADER)
        for entry in entries:
            writer.writerow((entry.location, entry.class_label,
                             entry.identity))


def manifest_hash(entries):
    digest = hashlib.sha256()
    for entry in entries:
        digest.update(('%s,%s,%s\n' % (entry.image_path, entry.class_label,
                                       entry.identity)).encode('utf-8'))
    return digest.hexdigest()


def _by_identity(entries):
    groups = {}
    for entry in entries:
        groups.setdefault(entry.identity, []).append(entry)
    return groups


def split_identity_disjoint(entries, train_fraction, seed):
    """
    Shuffles identities with a seeded generator and moves whole identities
    to the training side until it holds at least ``train_fraction`` of the
    images. An identity never appears on both sides.
    """
    if not 0.0 < train_fraction < 1.0:
        raise SplitError("train_fraction must lie in (0, 1), got %r"
                         % train_fraction)

    groups = _by_identity(entries)
    if len(groups) < 2:
        raise SplitError("An identity-disjoint split needs at least 2 "
                         "identities, got %d." % len(groups))

    identities = sorted(groups)
    rng = np.random.default_rng(seed)
    order = [identities[i] for i in rng.permutation(len(identities))]

    target = train_fraction * len(entries)
    train_ids = set()
    count = 0
    # Always keep one identity for the test side.
    for identity in order[:-1]:
        if count >= target:
            break
        train_ids.add(identity)
        count += len(groups[identity])

    split = DatasetSplit(
        train=[entry for entry in entries if entry.identity in train_ids],
        test=[entry for entry in entries if entry.identity not in train_ids])
    logger.info("Split %d images into %d train / %d test (%d / %d identities)",
                len(entries), len(split.train), len(split.test),
                len(train_ids), len(groups) - len(train_ids))
    return split


def loo_folds(train):
    """
    Leave-one-identity-out folds over the training side.
    """
    groups = _by_identity(train)
    if len(groups) < 2:
        raise SplitError("Leave-one-out needs at least 2 identities, got %d."
                         % len(groups))
    folds = []
    for identity in sorted(groups):
        remainder = [entry for entry in train if entry.identity != identity]
        folds.append(Fold(identity, list(groups[identity]), remainder))
    return folds


def check_disjoint(train_identities, entries):
    leaked = sorted(set(train_identities) &
                    set(entry.identity for entry in entries))
    if leaked:
        raise LeakageError("Test manifest shares identities with the "
                           "training set: %s" % ', '.join(leaked))


def load_grayscale(path):
    """
    Reads an 8-bit PGM or PNG file as a luminance image in [0, 1].
    """
    try:
        with PILImage.open(path) as source:
            if source.format not in SUPPORTED_FORMATS:
                raise ImageLoadError("Unsupported image format %s for %s."
                                     % (source.format, path))
            if source.mode in ('L', 'P', 'LA', 'PA'):
                source = source.convert('L')
            elif source.mode not in ('RGB', 'RGBA'):
                source = source.convert('RGB')
            data = np.asarray(source, dtype=np.float64)
    except FileNotFoundError:
        raise ImageLoadError("Image %s does not exist." % path)
    except (UnidentifiedImageError, OSError, SyntaxError) as error:
        raise ImageLoadError("Could not decode %s: %s" % (path, error))

    if data.ndim == 3:
        # Luminance is computed here rather than by Pillow, which rounds
        # to integers.
        data = data[:, :, :3].dot(LUMA_WEIGHTS)
    if min(data.shape[:2]) < MIN_SIDE:
        logger.warning("Image %s is %dx%d, smaller than %dx%d",
                       path, data.shape[1], data.shape[0], MIN_SIDE, MIN_SIDE)
    return Image(np.clip(data / 255.0, 0.0, 1.0))
