import json
import struct

import numpy as np
from django.core.files.base import ContentFile
from django.core.files.storage import FileSystemStorage

FORMAT_VERSION = 1

CODEBOOK_MAGIC = b'VVCB'
GRAM_MAGIC = b'VVGM'
MODEL_MAGIC = b'VVSV'

KERNEL_CODES = {
    'intersection': 0,
    'rbf': 1,
    'spatial_pyramid': 2,
}


class FormatError(ValueError):
    pass


class BundleStorage(FileSystemStorage):
    """
    Filesystem storage for trained bundles and reports. Saving under an
    existing name replaces the file instead of picking a fresh name.
    """

    def get_available_name(self, name, max_length=None):
        if self.exists(name):
            self.delete(name)
        return name

    def write(self, name, data):
        if isinstance(data, str):
            data = data.encode('utf-8')
        return self.save(name, ContentFile(data))

    def read(self, name):
        with self.open(name, 'rb') as handle:
            return handle.read()

    def write_json(self, name, value):
        return self.write(name, json.dumps(value, sort_keys=True, indent=2) +
                          '\n')

    def read_json(self, name):
        return json.loads(self.read(name).decode('utf-8'))


def _check_magic(data, magic):
    if data[:4] != magic:
        raise FormatError("Expected a %s file, got magic %r"
                          % (magic.decode('ascii'), data[:4]))


def _take(data, offset, size):
    if offset + size > len(data):
        raise FormatError("Truncated file: need %d bytes at offset %d, "
                          "have %d" % (size, offset, len(data)))
    return data[offset:offset + size], offset + size


def encode_codebook(centroids):
    centroids = np.asarray(centroids)
    k, dim = centroids.shape
    header = CODEBOOK_MAGIC + struct.pack('<III', FORMAT_VERSION, k, dim)
    return header + centroids.astype('<f4').tobytes()


def decode_codebook(data):
    _check_magic(data, CODEBOOK_MAGIC)
    fields, offset = _take(data, 4, 12)
    version, k, dim = struct.unpack('<III', fields)
    if version != FORMAT_VERSION:
        raise FormatError("Unsupported codebook version %d" % version)
    body, offset = _take(data, offset, 4 * k * dim)
    return np.frombuffer(body, dtype='<f4').reshape(k, dim).astype(
        np.float64)


def encode_gram(values):
    values = np.asarray(values)
    n = values.shape[0]
    return GRAM_MAGIC + struct.pack('<I', n) + values.astype('<f8').tobytes()


def decode_gram(data):
    _check_magic(data, GRAM_MAGIC)
    fields, offset = _take(data, 4, 4)
    n, = struct.unpack('<I', fields)
    body, _ = _take(data, offset, 8 * n * n)
    return np.frombuffer(body, dtype='<f8').reshape(n, n).copy()


def encode_model(kernel, models):
    """
    ``models`` is a list of (alpha, y, bias) per class.
    """
    if kernel not in KERNEL_CODES:
        raise FormatError("Unknown kernel %r" % kernel)
    parts = [MODEL_MAGIC, struct.pack('<III', FORMAT_VERSION,
                                      KERNEL_CODES[kernel], len(models))]
    for alpha, y, bias in models:
        parts.append(struct.pack('<I', len(alpha)))
        parts.append(np.asarray(alpha).astype('<f8').tobytes())
        parts.append(np.asarray(y).astype('<i1').tobytes())
        parts.append(struct.pack('<d', bias))
    return b''.join(parts)


def decode_model(data):
    _check_magic(data, MODEL_MAGIC)
    fields, offset = _take(data, 4, 12)
    version, code, n_classes = struct.unpack('<III', fields)
    if version != FORMAT_VERSION:
        raise FormatError("Unsupported model version %d" % version)
    kernels = dict((value, name) for name, value in KERNEL_CODES.items())
    if code not in kernels:
        raise FormatError("Unknown kernel code %d" % code)

    models = []
    for _ in range(n_classes):
        chunk, offset = _take(data, offset, 4)
        n, = struct.unpack('<I', chunk)
        chunk, offset = _take(data, offset, 8 * n)
        alpha = np.frombuffer(chunk, dtype='<f8').astype(np.float64)
        chunk, offset = _take(data, offset, n)
        y = np.frombuffer(chunk, dtype='<i1').astype(np.float64)
        chunk, offset = _take(data, offset, 8)
        bias, = struct.unpack('<d', chunk)
        models.append((alpha, y, bias))
    if offset != len(data):
        raise FormatError("Trailing bytes after %d models" % n_classes)
    return kernels[code], models
