"""Dense float64 building blocks shared by the model and the trainer.

Matrices are plain 2-D ``numpy.ndarray`` objects in C order.
"""
import struct

import numpy as np
from scipy.special import expit

from .errors import ShapeError

_HEADER = struct.Struct("<4sQQ")
_MAGIC = b"MTX1"


def as_matrix(x):
    a = np.ascontiguousarray(x, dtype=np.float64)
    if a.ndim == 1:
        a = a.reshape(1, -1)
    if a.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got shape {a.shape}")
    return a


def matmul(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def hadamard(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"hadamard needs equal shapes, got {a.shape} and {b.shape}")
    return a * b


def relu(x):
    return np.maximum(x, 0.0)


def sigmoid(x):
    return expit(x)


def tanh(x):
    return np.tanh(x)


def frobenius_sq(x):
    x = np.asarray(x, dtype=np.float64)
    return float(np.dot(x.ravel(), x.ravel()))


class SeededRng:
    """Reproducible random source; equal seeds give equal draw sequences."""

    def __init__(self, seed):
        self.seed = int(seed)
        self.generator = np.random.Generator(np.random.PCG64(self.seed))

    def uniform(self, low, high, size):
        return self.generator.uniform(low, high, size)

    def integers(self, low, high, size=None):
        return self.generator.integers(low, high, size)

    def random(self, size=None):
        return self.generator.random(size)

    def permutation(self, n):
        return self.generator.permutation(n)

    def choice(self, a, size, replace=True):
        return self.generator.choice(a, size=size, replace=replace)

    def derive(self, *keys):
        """Independent child generator keyed by ``keys`` (ints), same for any call order."""
        seq = np.random.SeedSequence([self.seed & 0xFFFFFFFFFFFFFFFF, *[int(k) for k in keys]])
        return SeededRng(int(seq.generate_state(2, dtype=np.uint64)[0]))


def glorot_init(rows, cols, rng):
    if rows < 1 or cols < 1:
        raise ShapeError(f"glorot_init needs positive dims, got {rows}x{cols}")
    limit = np.sqrt(6.0 / (rows + cols))
    return rng.uniform(-limit, limit, (rows, cols))


def finite_diff_grad(f, x, h=1e-5):
    """Central-difference gradient of the scalar function ``f`` at ``x``.

    ``x`` is perturbed in place one entry at a time and restored afterwards, so
    ``f`` may close over the very array being differentiated.
    """
    if h <= 0:
        raise ValueError("step h must be positive")
    x = np.asarray(x)
    grad = np.zeros(x.shape, dtype=np.float64)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for idx in range(flat.size):
        orig = flat[idx]
        flat[idx] = orig + h
        fp = f(x)
        flat[idx] = orig - h
        fm = f(x)
        flat[idx] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise FloatingPointError(f"non-finite objective at entry {idx}")
        gflat[idx] = (fp - fm) / (2.0 * h)
    return grad


def matrix_to_bytes(m):
    m = as_matrix(m)
    rows, cols = m.shape
    return _HEADER.pack(_MAGIC, rows, cols) + m.astype("<f8").tobytes(order="C")


def matrix_from_bytes(blob):
    if len(blob) < _HEADER.size:
        raise ShapeError("matrix blob is truncated")
    magic, rows, cols = _HEADER.unpack_from(blob)
    if magic != _MAGIC:
        raise ShapeError("not a matrix blob")
    expected = _HEADER.size + 8 * rows * cols
    if len(blob) != expected:
        raise ShapeError(f"matrix blob has {len(blob)} bytes, expected {expected}")
    values = np.frombuffer(blob, dtype="<f8", offset=_HEADER.size)
    return values.reshape(rows, cols).astype(np.float64)


def write_matrix(path, m):
    with open(path, "wb") as fh:
        fh.write(matrix_to_bytes(m))


def read_matrix(path):
    with open(path, "rb") as fh:
        return matrix_from_bytes(fh.read())
