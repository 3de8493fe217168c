"""Dense float64 linear algebra and seeded randomness.

Matrices are plain 2-D ``numpy.float64`` arrays. Products and SPD solves go
through the selected kernel backend, which fixes the summation order so that
traces are reproducible bit for bit.
"""
import numpy as np

from ._backend import KernelSingularError, kernels

PIVOT_REL_TOL = 1e-12


class ShapeMismatchError(ValueError):
    pass


class SingularMatrixError(ArithmeticError):
    pass


def as_matrix(a):
    """Coerce to a C-contiguous float64 2-D array; scalars become 1x1."""
    a = np.asarray(a, dtype=np.float64)
    if a.ndim == 0:
        a = a.reshape(1, 1)
    elif a.ndim == 1:
        a = a.reshape(-1, 1)
    if a.ndim != 2:
        raise ShapeMismatchError(f"expected a 2-D matrix, got shape {a.shape}")
    return a


def matmul(a, b):
    """Row-by-column product summed left to right over the inner index."""
    a = as_matrix(a)
    b = as_matrix(b)
    if a.shape[1] != b.shape[0]:
        raise ShapeMismatchError(
            f"cannot multiply {a.shape[0]}x{a.shape[1]} by {b.shape[0]}x{b.shape[1]}")
    return kernels.matmul(a, b)


def solve_spd(a, b):
    """Solve ``a @ x = b`` for symmetric positive definite ``a``.

    Uses a Cholesky factorisation of the lower triangle of ``a``. A pivot at
    or below ``1e-12 * trace(a)`` raises :class:`SingularMatrixError`.
    """
    a = as_matrix(a)
    b = as_matrix(b)
    if a.shape[0] != a.shape[1]:
        raise ShapeMismatchError(f"solve_spd needs a square matrix, got {a.shape}")
    if a.shape[0] != b.shape[0]:
        raise ShapeMismatchError(
            f"cannot solve {a.shape[0]}x{a.shape[1]} system with rhs {b.shape[0]}x{b.shape[1]}")
    try:
        return kernels.cholesky_solve(a, b, PIVOT_REL_TOL)
    except KernelSingularError as exc:
        raise SingularMatrixError(f"matrix is not positive definite: {exc}") from None


def frob_norm(a):
    a = np.asarray(a, dtype=np.float64)
    # scale by the largest entry so squares neither underflow nor overflow
    m = float(np.max(np.abs(a))) if a.size else 0.0
    if m == 0.0 or not np.isfinite(m):
        return m
    s = a / m
    return m * float(np.sqrt(np.sum(s * s)))


class RandomSource:
    """Seeded normal generator backed by numpy's counter-based Philox.

    Philox output and numpy's ziggurat normal sampler are platform
    independent, so a seed pins the draw sequence everywhere. The frozen
    test vectors in ``tests/test_numerics.py`` guard that.
    """

    def __init__(self, seed):
        seed = int(seed)
        if not 0 <= seed < 2**64:
            raise ValueError(f"seed must be an unsigned 64-bit integer, got {seed}")
        self.seed = seed
        self._gen = np.random.Generator(np.random.Philox(seed))

    def normal(self, shape):
        return self._gen.standard_normal(shape)

    def spawn(self, key):
        """Independent child stream, deterministic in (seed, key)."""
        return RandomSource((self.seed * 1000003 + int(key) + 1) % 2**64)


def gaussian_fill(rng, rows, cols, scale):
    if scale < 0:
        raise ValueError(f"scale must be non-negative, got {scale}")
    draws = rng.normal((rows, cols))
    if scale == 0:
        return np.zeros((rows, cols))
    return scale * draws


def format_float(x):
    return "%.17g" % float(x)


def dumps_matrix(a):
    """Text form: ``rows cols`` header, then one space-separated row per line."""
    a = as_matrix(a)
    lines = [f"{a.shape[0]} {a.shape[1]}"]
    lines += [" ".join(format_float(v) for v in row) for row in a]
    return "\n".join(lines) + "\n"


def loads_matrix(text):
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise ValueError("empty matrix text")
    try:
        rows, cols = (int(t) for t in lines[0].split())
    except ValueError:
        raise ValueError(f"bad matrix header {lines[0]!r}") from None
    if rows <= 0 or cols <= 0:
        raise ValueError(f"bad matrix header {lines[0]!r}")
    if len(lines) - 1 != rows:
        raise ValueError(f"expected {rows} rows, found {len(lines) - 1}")
    data = [[float(t) for t in ln.split()] for ln in lines[1:]]
    if any(len(r) != cols for r in data):
        raise ValueError(f"expected {cols} entries per row")
    return np.array(data, dtype=np.float64).reshape(rows, cols)


def write_matrix(path, a):
    with open(path, "w") as fh:
        fh.write(dumps_matrix(a))


def read_matrix(path):
    with open(path) as fh:
        return loads_matrix(fh.read())
