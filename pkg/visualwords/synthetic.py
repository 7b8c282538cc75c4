"""
Textured-pattern corpus for exercising the pipeline end to end.

Every identity has its own brightness, contrast, noise level and pattern
scale, and contributes images of every class, the way a subject in a face
database appears with every expression.
"""
import logging
import os

import numpy as np
from PIL import Image as PILImage

from .dataset import ManifestEntry, write_manifest

logger = logging.getLogger(__name__)


def _blocks(rng, size, scale):
    canvas = np.zeros((size, size))
    for _ in range(rng.integers(3, 6)):
        h, w = (rng.integers(10, 22, size=2) * scale).astype(int)
        y = rng.integers(0, max(size - h, 1))
        x = rng.integers(0, max(size - w, 1))
        canvas[y:y + h, x:x + w] = rng.uniform(0.6, 1.0)
    return canvas


def _discs(rng, size, scale):
    yy, xx = np.mgrid[0:size, 0:size]
    canvas = np.zeros((size, size))
    for _ in range(rng.integers(6, 11)):
        radius = rng.uniform(2.5, 4.5) * scale
        cy, cx = rng.uniform(radius + 2, size - radius - 2, size=2)
        canvas[(yy - cy) ** 2 + (xx - cx) ** 2 <= radius ** 2] = 1.0
    return canvas


def _checker(rng, size, scale):
    cell = max(int(round(rng.integers(6, 11) * scale)), 3)
    dy, dx = rng.integers(0, cell, size=2)
    yy, xx = np.mgrid[0:size, 0:size]
    return (((yy + dy) // cell + (xx + dx) // cell) % 2).astype(np.float64)


def _stripes(rng, size, scale):
    period = max(int(round(rng.integers(6, 12) * scale)), 4)
    yy, xx = np.mgrid[0:size, 0:size]
    coordinate = xx if rng.random() < 0.5 else yy
    return ((coordinate + rng.integers(0, period)) % period <
            period // 2).astype(np.float64)


def _rings(rng, size, scale):
    yy, xx = np.mgrid[0:size, 0:size]
    cy, cx = rng.uniform(size * 0.3, size * 0.7, size=2)
    radius = np.hypot(yy - cy, xx - cx)
    period = max(rng.uniform(6, 10) * scale, 4)
    return ((radius % period) < period / 2).astype(np.float64)


def _crosses(rng, size, scale):
    canvas = np.zeros((size, size))
    for _ in range(rng.integers(3, 6)):
        arm = int(rng.integers(6, 11) * scale)
        width = max(int(2 * scale), 1)
        cy, cx = rng.integers(arm + 1, size - arm - 1, size=2)
        canvas[cy - arm:cy + arm, cx - width:cx + width] = 1.0
        canvas[cy - width:cy + width, cx - arm:cx + arm] = 1.0
    return canvas


PATTERNS = (
    ('blocks', _blocks),
    ('discs', _discs),
    ('checker', _checker),
    ('stripes', _stripes),
    ('rings', _rings),
    ('crosses', _crosses),
)


def identity_style(rng):
    return {
        'brightness': rng.uniform(-0.12, 0.12),
        'contrast': rng.uniform(0.6, 0.95),
        'noise': rng.uniform(0.005, 0.03),
        'scale': rng.uniform(0.85, 1.15),
    }


def render(pattern, style, rng, size):
    canvas = pattern(rng, size, style['scale'])
    pixels = 0.5 + style['contrast'] * (canvas - 0.5) + style['brightness']
    pixels = pixels + rng.normal(0.0, style['noise'], pixels.shape)
    return np.clip(pixels, 0.0, 1.0)


def write_pgm(pixels, path):
    data = np.round(np.clip(pixels, 0.0, 1.0) * 255).astype(np.uint8)
    PILImage.fromarray(data).save(path, format='PPM')


def generate_corpus(out, classes=3, per_class=60, identities=20, seed=0,
                    size=64):
    """
    Writes ``classes`` x ``per_class`` PGM images below ``out`` plus
    ``manifest.csv``. Image n of a class belongs to identity n mod
    ``identities``. Returns the manifest path.
    """
    if not 1 <= classes <= len(PATTERNS):
        raise ValueError("classes must lie in [1, %d], got %d"
                         % (len(PATTERNS), classes))
    if per_class < 1 or identities < 1 or size < 32:
        raise ValueError("per_class and identities must be >= 1 and size "
                         ">= 32")

    rng = np.random.default_rng(seed)
    styles = [identity_style(rng) for _ in range(identities)]
    names = ['id%02d' % i for i in range(identities)]

    entries = []
    for label, pattern in PATTERNS[:classes]:
        os.makedirs(os.path.join(out, label), exist_ok=True)
        for n in range(per_class):
            identity = n % identities
            relative = '%s/%s_%03d.pgm' % (label, names[identity], n)
            write_pgm(render(pattern, styles[identity], rng, size),
                      os.path.join(out, relative))
            entries.append(ManifestEntry(relative, label, names[identity]))

    manifest = os.path.join(out, 'manifest.csv')
    write_manifest(entries, manifest)
    logger.info("Wrote %d synthetic images (%d classes, %d identities) to %s",
                len(entries), classes, identities, out)
    return manifest
