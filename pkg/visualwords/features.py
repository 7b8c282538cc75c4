import csv
import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import ndimage

logger = logging.getLogger(__name__)

DESCRIPTOR_SIZE = 128
# Descriptor layout: 4x4 spatial cells of 4x4 samples, 8 orientation bins.
CELLS = 4
CELL_SAMPLES = 4
ORIENTATION_BINS = 8
WINDOW_SAMPLES = CELLS * CELL_SAMPLES
HALF_WINDOW = WINDOW_SAMPLES // 2

# Scale at which descriptor samples are one pixel apart.
BASE_SCALE = 1.6
# Blur assumed to be present in a freshly loaded image.
ASSUMED_BLUR = 0.5

CLAMP = 0.2
CLAMP_PASSES = 20
# Fewest non-zero bins a unit vector needs to fit under the clamp.
CLAMPABLE_BINS = 25
MIN_ENERGY = 1e-12

DOMINANT_BINS = 36

DETECTORS = ('harris', 'dog', 'dense')


class FeatureError(ValueError):
    pass


@dataclass(frozen=True)
class Keypoint(object):
    x: float
    y: float
    scale: float
    orientation: float = 0.0
    response: float = 0.0
    # False until a dominant orientation has been assigned.
    oriented: bool = False


@dataclass
class HarrisParams(object):
    k: float = 0.04
    sigma: float = 1.5
    sigma_d: float = 1.0
    threshold_rel: float = 0.01
    max_points: int = 500
    scale: float = BASE_SCALE

    def validate(self):
        if not 0.04 <= self.k <= 0.06:
            raise FeatureError("Harris k must lie in [0.04, 0.06], got %r"
                               % self.k)
        if not 0.0 < self.threshold_rel < 1.0:
            raise FeatureError("Harris threshold_rel must lie in (0, 1), "
                               "got %r" % self.threshold_rel)
        if self.sigma <= 0 or self.sigma_d < 0 or self.max_points < 1:
            raise FeatureError("Invalid Harris parameters: %r" % (self,))


@dataclass
class DogParams(object):
    scales: int = 3
    octaves: int = 4
    sigma: float = 1.6
    contrast: float = 0.03
    edge_ratio: float = 10.0
    max_points: int = 500

    def validate(self):
        if self.scales < 1 or self.octaves < 1 or self.sigma <= 0:
            raise FeatureError("Invalid DoG parameters: %r" % (self,))
        if self.contrast < 0 or self.edge_ratio <= 0 or self.max_points < 1:
            raise FeatureError("Invalid DoG parameters: %r" % (self,))


@dataclass
class ImageFeatures(object):
    image_id: str
    width: int
    height: int
    keypoints: list = field(default_factory=list)
    descriptors: np.ndarray = None

    def __post_init__(self):
        if self.descriptors is None:
            self.descriptors = np.zeros((0, DESCRIPTOR_SIZE))

    @property
    def positions(self):
        return np.array([(kp.x, kp.y) for kp in self.keypoints],
                        dtype=np.float64).reshape(-1, 2)


def _suppress_plateaus(ys, xs, values, shape, limit=None):
    """
    Greedy selection by descending value (ties row-major); a candidate
    touching an already selected pixel is dropped so that a flat maximum
    yields a single point.
    """
    order = np.lexsort((xs, ys, -values))
    taken = np.zeros(shape, dtype=bool)
    kept = []
    for index in order:
        y, x = ys[index], xs[index]
        if taken[max(y - 1, 0):y + 2, max(x - 1, 0):x + 2].any():
            continue
        taken[y, x] = True
        kept.append(index)
        if limit is not None and len(kept) >= limit:
            break
    return kept


def harris_response(pixels, k=0.04, sigma=1.5, sigma_d=1.0):
    smoothed = ndimage.gaussian_filter(pixels, sigma_d) if sigma_d else pixels
    iy, ix = np.gradient(smoothed)
    sxx = ndimage.gaussian_filter(ix * ix, sigma)
    syy = ndimage.gaussian_filter(iy * iy, sigma)
    sxy = ndimage.gaussian_filter(ix * iy, sigma)
    trace = sxx + syy
    return sxx * syy - sxy * sxy - k * trace * trace


def detect_harris(image, params=None):
    """
    2D-Harris corners: 3x3 maxima of det(M) - k trace(M)^2 above
    ``threshold_rel`` times the strongest response.
    """
    params = params or HarrisParams()
    params.validate()

    response = harris_response(image.pixels, params.k, params.sigma,
                               params.sigma_d)
    peak = response.max()
    if not peak > 0:
        return []

    local_max = response == ndimage.maximum_filter(response, size=3,
                                                   mode='nearest')
    ys, xs = np.nonzero(local_max & (response >= params.threshold_rel * peak))
    values = response[ys, xs]
    kept = _suppress_plateaus(ys, xs, values, response.shape,
                              params.max_points)
    return [Keypoint(float(xs[i]), float(ys[i]), params.scale,
                     response=float(values[i])) for i in kept]


def gaussian_octaves(pixels, params):
    """
    Gaussian scale space, ``scales + 3`` levels per octave. Each octave
    starts from the level with twice the base blur of the previous one,
    decimated by two.
    """
    step = 2.0 ** (1.0 / params.scales)
    sigmas = [params.sigma * step ** i for i in range(params.scales + 3)]
    base = ndimage.gaussian_filter(
        pixels, math.sqrt(max(params.sigma ** 2 - ASSUMED_BLUR ** 2, 1e-4)))

    octaves = []
    for octave in range(params.octaves):
        # The 3x3x3 extremum test needs some room.
        if min(base.shape) < 8:
            logger.debug("Image too small for octave %d, stopping", octave)
            break
        levels = [base]
        for i in range(1, len(sigmas)):
            increment = math.sqrt(sigmas[i] ** 2 - sigmas[i - 1] ** 2)
            levels.append(ndimage.gaussian_filter(levels[-1], increment))
        octaves.append(np.stack(levels))
        base = levels[params.scales][::2, ::2]
    return octaves, sigmas


def _passes_edge_test(layer, y, x, edge_ratio):
    value = layer[y, x]
    dxx = layer[y, x + 1] + layer[y, x - 1] - 2.0 * value
    dyy = layer[y + 1, x] + layer[y - 1, x] - 2.0 * value
    dxy = (layer[y + 1, x + 1] - layer[y + 1, x - 1] -
           layer[y - 1, x + 1] + layer[y - 1, x - 1]) / 4.0
    trace = dxx + dyy
    det = dxx * dyy - dxy * dxy
    if det <= 0:
        return False
    return trace * trace / det <= (edge_ratio + 1.0) ** 2 / edge_ratio


def detect_dog(image, params=None):
    """
    Scale-space extrema of the difference-of-Gaussians pyramid, filtered
    by contrast and principal-curvature ratio.
    """
    params = params or DogParams()
    params.validate()

    octaves, sigmas = gaussian_octaves(image.pixels, params)
    step = 2.0 ** (1.0 / params.scales)
    found = []
    for octave, levels in enumerate(octaves):
        dog = levels[1:] - levels[:-1]
        upper = ndimage.maximum_filter(dog, size=3, mode='nearest')
        lower = ndimage.minimum_filter(dog, size=3, mode='nearest')
        factor = 2 ** octave
        for index in range(1, params.scales + 1):
            layer = dog[index]
            extremum = (layer == upper[index]) | (layer == lower[index])
            extremum &= np.abs(layer) >= params.contrast
            # Curvature needs one pixel of context.
            extremum[[0, -1], :] = False
            extremum[:, [0, -1]] = False
            ys, xs = np.nonzero(extremum)
            values = np.abs(layer[ys, xs])
            # DoG between sigma and k*sigma peaks for blobs of their
            # geometric mean.
            scale = sigmas[index] * math.sqrt(step) * factor
            for i in _suppress_plateaus(ys, xs, values, layer.shape):
                y, x = int(ys[i]), int(xs[i])
                if not _passes_edge_test(layer, y, x, params.edge_ratio):
                    continue
                px, py = float(x * factor), float(y * factor)
                if px >= image.width or py >= image.height:
                    continue
                found.append(Keypoint(px, py, scale,
                                      response=float(values[i])))

    found.sort(key=lambda kp: -kp.response)
    return found[:params.max_points]


def detect_dense(image, step=5, scale=BASE_SCALE):
    """
    Grid keypoints in row-major order, inset so every descriptor window
    lies inside the image.
    """
    if step < 1:
        raise FeatureError("Dense step must be >= 1, got %r" % step)
    margin = HALF_WINDOW * scale / BASE_SCALE
    xs = np.arange(margin, image.width - margin + 1e-9, step)
    ys = np.arange(margin, image.height - margin + 1e-9, step)
    return [Keypoint(float(x), float(y), scale) for y in ys for x in xs]


def image_gradients(pixels, scale):
    """
    Central-difference gradients (gx, gy) of the image blurred to ``scale``.
    """
    sigma = math.sqrt(max(scale ** 2 - ASSUMED_BLUR ** 2, 0.0))
    smoothed = ndimage.gaussian_filter(pixels, sigma) if sigma > 0 else pixels
    gy, gx = np.gradient(smoothed)
    return gx, gy


class GradientCache(dict):
    """Gradients per keypoint scale for one image."""

    def __init__(self, image):
        super().__init__()
        self.image = image

    def get_gradients(self, scale):
        key = round(scale, 6)
        if key not in self:
            self[key] = image_gradients(self.image.pixels, scale)
        return self[key]


def assign_orientation(image, kp, gradients=None):
    """
    Dominant gradient orientation from a 36-bin histogram weighted by
    magnitude and a Gaussian of 1.5x the keypoint scale.
    """
    gx, gy = gradients if gradients is not None else \
        image_gradients(image.pixels, kp.scale)

    sigma = 1.5 * kp.scale
    radius = max(int(round(3 * sigma)), 1)
    cx, cy = int(round(kp.x)), int(round(kp.y))
    y0, y1 = max(cy - radius, 0), min(cy + radius + 1, image.height)
    x0, x1 = max(cx - radius, 0), min(cx + radius + 1, image.width)
    dy, dx = np.mgrid[y0 - cy:y1 - cy, x0 - cx:x1 - cx]
    inside = dx * dx + dy * dy <= radius * radius

    px = gx[y0:y1, x0:x1][inside]
    py = gy[y0:y1, x0:x1][inside]
    weights = np.hypot(px, py) * np.exp(
        -(dx[inside] ** 2 + dy[inside] ** 2) / (2.0 * sigma * sigma))
    angles = np.mod(np.arctan2(py, px), 2 * np.pi)
    bins = np.floor(angles * DOMINANT_BINS / (2 * np.pi)).astype(int)
    hist = np.bincount(bins % DOMINANT_BINS, weights,
                       minlength=DOMINANT_BINS)

    hist = (6 * hist + 4 * (np.roll(hist, 1) + np.roll(hist, -1)) +
            np.roll(hist, 2) + np.roll(hist, -2)) / 16.0
    if not hist.max() > 0:
        return replace(kp, orientation=0.0, oriented=True)

    peak = int(np.argmax(hist))
    left = hist[(peak - 1) % DOMINANT_BINS]
    right = hist[(peak + 1) % DOMINANT_BINS]
    denominator = left - 2 * hist[peak] + right
    offset = 0.5 * (left - right) / denominator if denominator else 0.0
    orientation = ((peak + 0.5 + offset) * 2 * np.pi / DOMINANT_BINS) \
        % (2 * np.pi)
    return replace(kp, orientation=float(orientation), oriented=True)


def descriptor_support(kp):
    return HALF_WINDOW * kp.scale / BASE_SCALE


def has_support(image, kp):
    half = descriptor_support(kp)
    return (kp.x - half >= 0 and kp.x + half <= image.width and
            kp.y - half >= 0 and kp.y + half <= image.height)


def _normalize(vector):
    """
    Unit length, then clamp at CLAMP and renormalise. Unit length wins: a
    vector with fewer than 1 / CLAMP^2 non-zero bins cannot stay under the
    clamp, so it gets a single clamp pass and may end above it.
    """
    vector /= np.linalg.norm(vector)
    passes = CLAMP_PASSES
    if np.count_nonzero(vector) < CLAMPABLE_BINS:
        passes = 1
    for _ in range(passes):
        if vector.max() <= CLAMP + 1e-7:
            break
        np.minimum(vector, CLAMP, out=vector)
        vector /= np.linalg.norm(vector)
    return vector


def describe_sift(image, kp, gradients=None):
    """
    128-d gradient-orientation histogram over a 16x16 sample grid rotated
    to the keypoint orientation. Returns None when the window leaves the
    image, so the caller can drop the keypoint.
    """
    if not has_support(image, kp):
        return None

    if gradients is None:
        gradients = image_gradients(image.pixels, kp.scale)
    if not kp.oriented:
        kp = assign_orientation(image, kp, gradients)
    gx, gy = gradients

    spacing = kp.scale / BASE_SCALE
    offsets = np.arange(WINDOW_SAMPLES) - (WINDOW_SAMPLES - 1) / 2.0
    v, u = np.meshgrid(offsets, offsets, indexing='ij')
    cos, sin = math.cos(kp.orientation), math.sin(kp.orientation)
    px = kp.x + spacing * (cos * u - sin * v)
    py = kp.y + spacing * (sin * u + cos * v)

    coords = [py.ravel(), px.ravel()]
    sx = ndimage.map_coordinates(gx, coords, order=1, mode='nearest')
    sy = ndimage.map_coordinates(gy, coords, order=1, mode='nearest')
    magnitude = np.hypot(sx, sy)
    if np.sum(magnitude * magnitude) < MIN_ENERGY:
        return np.zeros(DESCRIPTOR_SIZE)

    angle = np.mod(np.arctan2(sy, sx) - kp.orientation, 2 * np.pi)
    u, v = u.ravel(), v.ravel()
    magnitude = magnitude * np.exp(-(u * u + v * v) /
                                   (2.0 * HALF_WINDOW ** 2))

    row = (v + HALF_WINDOW) / CELL_SAMPLES - 0.5
    col = (u + HALF_WINDOW) / CELL_SAMPLES - 0.5
    ori = angle * ORIENTATION_BINS / (2 * np.pi)
    r0, c0, o0 = np.floor(row), np.floor(col), np.floor(ori)
    fr, fc, fo = row - r0, col - c0, ori - o0
    r0, c0, o0 = r0.astype(int), c0.astype(int), o0.astype(int)

    # Padded by one cell on each side for the interpolation spill-over.
    hist = np.zeros((CELLS + 2, CELLS + 2, ORIENTATION_BINS))
    for dr, wr in ((0, 1 - fr), (1, fr)):
        for dc, wc in ((0, 1 - fc), (1, fc)):
            for do, wo in ((0, 1 - fo), (1, fo)):
                np.add.at(hist, (r0 + dr + 1, c0 + dc + 1,
                                 (o0 + do) % ORIENTATION_BINS),
                          magnitude * wr * wc * wo)

    vector = hist[1:-1, 1:-1, :].ravel()
    if not np.linalg.norm(vector) > 0:
        return np.zeros(DESCRIPTOR_SIZE)
    return _normalize(vector)


def detect(image, detector='harris', harris=None, dog=None, dense_step=5,
           dense_scale=BASE_SCALE):
    if detector == 'harris':
        return detect_harris(image, harris)
    if detector == 'dog':
        return detect_dog(image, dog)
    if detector == 'dense':
        return detect_dense(image, dense_step, dense_scale)
    raise FeatureError("Unknown detector %r, expected one of %s"
                       % (detector, ', '.join(DETECTORS)))


def describe_keypoints(image, keypoints):
    """
    Describes every keypoint, dropping those without full support.
    Returns the kept (oriented) keypoints and an n x 128 matrix.
    """
    cache = GradientCache(image)
    kept, rows = [], []
    for kp in keypoints:
        if not has_support(image, kp):
            continue
        gradients = cache.get_gradients(kp.scale)
        if not kp.oriented:
            kp = assign_orientation(image, kp, gradients)
        rows.append(describe_sift(image, kp, gradients))
        kept.append(kp)
    if len(kept) < len(keypoints):
        logger.debug("Dropped %d keypoints without descriptor support",
                     len(keypoints) - len(kept))
    descriptors = np.array(rows).reshape(-1, DESCRIPTOR_SIZE)
    return kept, descriptors


def extract_features(image, image_id='', **options):
    keypoints = detect(image, **options)
    kept, descriptors = describe_keypoints(image, keypoints)
    return ImageFeatures(image_id, image.width, image.height, kept,
                         descriptors)


def write_keypoints(keypoints, path):
    with open(path, 'w', encoding='utf-8', newline='') as handle:
        writer = csv.writer(handle, lineterminator='\n')
        writer.writerow(('x', 'y', 'scale', 'orientation', 'response'))
        for kp in keypoints:
            writer.writerow(('%.6f' % kp.x, '%.6f' % kp.y, '%.6f' % kp.scale,
                             '%.6f' % kp.orientation, '%.9g' % kp.response))
