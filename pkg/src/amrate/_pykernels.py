"""Pure-Python twins of the compiled kernels in ``_kernels.pyx``.

Same operations, same order, so results match the extension bit for bit.
Loops over the reduction index are kept in Python while the other axes are
vectorised with numpy elementwise ops, which round identically to scalar code.
"""
import math

import numpy as np


class KernelSingularError(ArithmeticError):
    pass


def matmul(a, b):
    m, kk = a.shape
    out = np.zeros((m, b.shape[1]), dtype=np.float64)
    for k in range(kk):
        out += a[:, k, None] * b[None, k, :]
    return out


def cholesky_solve(a, b, rel_tol):
    n = a.shape[0]
    tr = 0.0
    for i in range(n):
        tr += a[i, i]
    piv_tol = rel_tol * tr
    if not tr > 0.0:
        raise KernelSingularError(f"non-positive trace {tr!r}")
    L = np.zeros((n, n), dtype=np.float64)
    for j in range(n):
        s = np.array(a[j:, j], dtype=np.float64)
        for k in range(j):
            s -= L[j:, k] * L[j, k]
        if s[0] <= piv_tol:
            raise KernelSingularError(
                f"pivot {float(s[0])!r} at column {j} below {piv_tol!r}")
        L[j, j] = math.sqrt(s[0])
        L[j + 1:, j] = s[1:] / L[j, j]
    x = np.array(b, dtype=np.float64)
    for i in range(n):
        for k in range(i):
            x[i] -= L[i, k] * x[k]
        x[i] /= L[i, i]
    for i in range(n - 1, -1, -1):
        for k in range(i + 1, n):
            x[i] -= L[k, i] * x[k]
        x[i] /= L[i, i]
    return x


def _sgn(x):
    if x > 0.0:
        return 1.0
    if x < 0.0:
        return -1.0
    return 0.0


def _gd_step(x, p, t):
    if x == 0.0:
        return 0.0
    return x - t * p * _sgn(x) * math.fabs(x) ** (p - 1.0)


def _prox_step(x, p, t):
    if x == 0.0:
        return 0.0
    a = math.fabs(x)
    if p == 1.0:
        a = a - t
        if a <= 0.0:
            return 0.0
        return _sgn(x) * a
    if p == 2.0:
        return x / (1.0 + 2.0 * t)
    lo, hi, y = 0.0, a, a
    for _ in range(200):
        g = y + t * p * y ** (p - 1.0) - a
        if g > 0.0:
            hi = y
        else:
            lo = y
        dg = 1.0 + t * p * (p - 1.0) * y ** (p - 2.0)
        ynew = y - g / dg
        if not (lo < ynew < hi):
            ynew = 0.5 * (lo + hi)
        if ynew == y or hi - lo <= 0.0:
            break
        y = ynew
    return _sgn(x) * y


def toy_iterate(kind, p, t, delta, x0, steps):
    """kind: 0 gradient descent, 1 proximal point, 2 two-phase."""
    p, t, delta, x = float(p), float(t), float(delta), float(x0)
    out = np.empty(steps + 1, dtype=np.float64)
    out[0] = x
    for k in range(steps):
        if kind == 0:
            x = _gd_step(x, p, t)
        elif kind == 1:
            x = _prox_step(x, p, t)
        elif k % 2 == 0:
            x = _gd_step(_gd_step(x, p, t), p, t)
        else:
            x = x * (1.0 + delta)
        out[k + 1] = x
    return out
