import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

from .kernels import KernelMatrix
from .utils import parallel_map

logger = logging.getLogger(__name__)

# Multipliers above this count as support vectors.
SUPPORT_EPS = 1e-9
# Floor for the curvature along the pair direction.
MIN_ETA = 1e-12
# Multipliers this close to 0 or C, relative to C, are pinned to the bound.
BOUND_EPS = 1e-12


class SvmError(ArithmeticError):
    pass


@dataclass
class SvmModel(object):
    alpha: np.ndarray
    bias: float
    y: np.ndarray
    C: float
    kernel: str = 'intersection'
    tol: float = 1e-3
    n_iter: int = 0

    @property
    def support(self):
        return np.flatnonzero(self.alpha > SUPPORT_EPS)

    def decision_function(self, rows):
        """
        f(x) = sum_i alpha_i y_i K(x, x_i) + b for each kernel row.
        """
        rows = np.asarray(rows, dtype=np.float64)
        if rows.shape[-1] != len(self.alpha):
            raise SvmError("Kernel row has %d entries, the model %d"
                           % (rows.shape[-1], len(self.alpha)))
        return rows.dot(self.alpha * self.y) + self.bias

    def dual_objective(self, gram):
        values = _values(gram)
        ay = self.alpha * self.y
        return float(self.alpha.sum() - 0.5 * ay.dot(values).dot(ay))


@dataclass
class MultiModel(object):
    models: list
    classes: list
    kernel: str = 'intersection'
    train_ids: list = field(default_factory=list)

    def __post_init__(self):
        if len(self.classes) < 2:
            raise SvmError("One-vs-all needs at least 2 classes.")
        if len(self.models) != len(self.classes):
            raise SvmError("Expected one model per class.")
        if any(model.kernel != self.kernel for model in self.models):
            raise SvmError("Per-class models disagree on the kernel.")

    @property
    def n_train(self):
        return len(self.models[0].alpha)

    def decision_function(self, rows):
        """Per-class scores, one column per class."""
        rows = np.asarray(rows, dtype=np.float64)
        return np.stack([model.decision_function(rows)
                         for model in self.models], axis=-1)


def _values(gram):
    if isinstance(gram, KernelMatrix):
        return gram.values
    return np.asarray(gram, dtype=np.float64)


def _pin(value, C):
    # Clipping leaves residue like 1e-16 that keeps an index in the working
    # set while it can no longer move.
    if value < BOUND_EPS * C:
        return 0.0
    if value > C - BOUND_EPS * C:
        return C
    return value


def smo_train(gram, y, C=10.0, tol=1e-3, max_iter=100000, kernel=None):
    """
    Soft-margin SVM dual by sequential minimal optimization.

    Every step optimizes the maximal violating pair: i maximizes
    F = y - sum_j alpha_j y_j K(., j) over the multipliers that may move
    up, j minimizes it over those that may move down. Training stops once
    max F - min F < tol, which bounds every KKT violation by ``tol``.
    """
    K = _values(gram)
    n = K.shape[0] if K.ndim == 2 else 0
    if n == 0:
        raise SvmError("Cannot train on an empty training set.")
    if K.shape != (n, n):
        raise SvmError("Gram matrix must be square, got %s" % (K.shape,))
    y = np.asarray(y, dtype=np.float64).ravel()
    if len(y) != n:
        raise SvmError("Got %d labels for %d training points" % (len(y), n))
    if not np.all(np.abs(y) == 1):
        raise SvmError("Binary labels must be +1 or -1.")
    if len(np.unique(y)) < 2:
        raise SvmError("Training labels hold a single class.")
    if not C > 0:
        raise SvmError("C must be > 0, got %r" % C)
    if kernel is None:
        kernel = getattr(gram, 'kernel', 'intersection')

    alpha = np.zeros(n)
    g = np.zeros(n)
    positive = y > 0
    iterations = 0
    while True:
        F = y - g
        up = np.where(positive, alpha < C, alpha > 0)
        low = np.where(positive, alpha > 0, alpha < C)
        i = int(np.argmax(np.where(up, F, -np.inf)))
        j = int(np.argmin(np.where(low, F, np.inf)))
        upper, lower = F[i], F[j]
        if upper - lower < tol:
            break
        if iterations >= max_iter:
            message = ("SMO stopped after %d iterations with KKT gap %.3g"
                       % (max_iter, upper - lower))
            logger.warning(message)
            warnings.warn(message, RuntimeWarning)
            break
        iterations += 1

        eta = max(K[i, i] + K[j, j] - 2.0 * K[i, j], MIN_ETA)
        if y[i] != y[j]:
            low_bound = max(0.0, alpha[j] - alpha[i])
            high_bound = min(C, C + alpha[j] - alpha[i])
        else:
            low_bound = max(0.0, alpha[i] + alpha[j] - C)
            high_bound = min(C, alpha[i] + alpha[j])
        # E_i - E_j equals F_j - F_i; the bias cancels.
        alpha_j = alpha[j] + y[j] * (lower - upper) / eta
        alpha_j = min(max(alpha_j, low_bound), high_bound)
        alpha_i = alpha[i] + y[i] * y[j] * (alpha[j] - alpha_j)
        alpha_i = _pin(alpha_i, C)
        alpha_j = _pin(alpha_j, C)

        delta_i, delta_j = alpha_i - alpha[i], alpha_j - alpha[j]
        alpha[i], alpha[j] = alpha_i, alpha_j
        g += delta_i * y[i] * K[:, i] + delta_j * y[j] * K[:, j]

    free = (alpha > SUPPORT_EPS) & (alpha < C - SUPPORT_EPS)
    if np.any(free):
        bias = float(np.mean(F[free]))
    else:
        bias = float((upper + lower) / 2.0)

    logger.debug("SMO converged in %d iterations, %d support vectors",
                 iterations, int(np.sum(alpha > SUPPORT_EPS)))
    return SvmModel(alpha, bias, y, C, kernel, tol, iterations)


def ova_train(gram, labels, C=10.0, tol=1e-3, max_iter=100000, classes=None):
    """
    One binary model per class: +1 for the class, -1 for the rest.
    """
    labels = list(labels)
    if classes is None:
        classes = sorted(set(labels))
    classes = list(classes)
    if len(classes) < 2:
        raise SvmError("One-vs-all needs at least 2 classes, got %d"
                       % len(classes))
    for label in classes:
        if label not in labels:
            raise SvmError("Class %s has no training examples." % label)
    unknown = set(labels) - set(classes)
    if unknown:
        raise SvmError("Labels outside the class list: %s"
                       % ', '.join(sorted(unknown)))

    kernel = getattr(gram, 'kernel', 'intersection')
    labels = np.array(labels, dtype=object)

    def train(label):
        y = np.where(labels == label, 1.0, -1.0)
        return smo_train(gram, y, C=C, tol=tol, max_iter=max_iter,
                         kernel=kernel)

    models = parallel_map(train, classes)
    logger.info("Trained %d one-vs-all models (C=%g, kernel %s)",
                len(models), C, kernel)
    return MultiModel(models, classes, kernel,
                      list(getattr(gram, 'ids', [])))


def predict(model, kernel_row):
    """
    Class with the highest decision value (lowest class index on ties) and
    the per-class scores.
    """
    kernel_row = np.asarray(kernel_row, dtype=np.float64).ravel()
    if len(kernel_row) != model.n_train:
        raise SvmError("Kernel row has %d entries for %d training points"
                       % (len(kernel_row), model.n_train))
    scores = model.decision_function(kernel_row)
    return model.classes[int(np.argmax(scores))], scores


def predict_many(model, kernel_rows):
    kernel_rows = np.asarray(kernel_rows, dtype=np.float64)
    if kernel_rows.ndim != 2 or kernel_rows.shape[1] != model.n_train:
        raise SvmError("Kernel rows must be m x %d" % model.n_train)
    scores = model.decision_function(kernel_rows)
    return [model.classes[int(index)]
            for index in np.argmax(scores, axis=1)], scores
