# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot loops.

Every routine here has a twin in ``_pykernels`` performing the same floating
point operations in the same order, so both backends give bit-identical
results (the extension is built with ``-ffp-contract=off``).
"""
import numpy as np
from libc.math cimport sqrt, pow, fabs


class KernelSingularError(ArithmeticError):
    pass


def matmul(const double[:, :] a, const double[:, :] b):
    cdef Py_ssize_t m = a.shape[0], kk = a.shape[1], n = b.shape[1]
    cdef Py_ssize_t i, j, k
    cdef double s
    out = np.empty((m, n), dtype=np.float64)
    cdef double[:, :] c = out
    for i in range(m):
        for j in range(n):
            s = 0.0
            for k in range(kk):
                s += a[i, k] * b[k, j]
            c[i, j] = s
    return out


def cholesky_solve(const double[:, :] a, const double[:, :] b, double rel_tol):
    cdef Py_ssize_t n = a.shape[0], m = b.shape[1]
    cdef Py_ssize_t i, j, k, c
    cdef double s, tr = 0.0, piv_tol
    for i in range(n):
        tr += a[i, i]
    piv_tol = rel_tol * tr
    if not tr > 0.0:
        raise KernelSingularError(f"non-positive trace {tr!r}")
    lmat = np.zeros((n, n), dtype=np.float64)
    cdef double[:, :] L = lmat
    for j in range(n):
        s = a[j, j]
        for k in range(j):
            s -= L[j, k] * L[j, k]
        if s <= piv_tol:
            raise KernelSingularError(f"pivot {s!r} at column {j} below {piv_tol!r}")
        L[j, j] = sqrt(s)
        for i in range(j + 1, n):
            s = a[i, j]
            for k in range(j):
                s -= L[i, k] * L[j, k]
            L[i, j] = s / L[j, j]
    out = np.empty((n, m), dtype=np.float64)
    cdef double[:, :] x = out
    for c in range(m):
        for i in range(n):
            s = b[i, c]
            for k in range(i):
                s -= L[i, k] * x[k, c]
            x[i, c] = s / L[i, i]
        for i in range(n - 1, -1, -1):
            s = x[i, c]
            for k in range(i + 1, n):
                s -= L[k, i] * x[k, c]
            x[i, c] = s / L[i, i]
    return out


cdef inline double _sgn(double x):
    if x > 0.0:
        return 1.0
    if x < 0.0:
        return -1.0
    return 0.0


cdef inline double _gd_step(double x, double p, double t):
    if x == 0.0:
        return 0.0
    return x - t * p * _sgn(x) * pow(fabs(x), p - 1.0)


cdef double _prox_step(double x, double p, double t):
    cdef double a, lo, hi, y, g, dg, ynew
    cdef int it
    if x == 0.0:
        return 0.0
    a = fabs(x)
    if p == 1.0:
        a = a - t
        if a <= 0.0:
            return 0.0
        return _sgn(x) * a
    if p == 2.0:
        return x / (1.0 + 2.0 * t)
    # root of y + t p y^(p-1) = a on (0, a); safeguarded Newton
    lo = 0.0
    hi = a
    y = a
    for it in range(200):
        g = y + t * p * pow(y, p - 1.0) - a
        if g > 0.0:
            hi = y
        else:
            lo = y
        dg = 1.0 + t * p * (p - 1.0) * pow(y, p - 2.0)
        ynew = y - g / dg
        if not (ynew > lo and ynew < hi):
            ynew = 0.5 * (lo + hi)
        if ynew == y or hi - lo <= 0.0:
            break
        y = ynew
    return _sgn(x) * y


def toy_iterate(int kind, double p, double t, double delta, double x0, Py_ssize_t steps):
    """kind: 0 gradient descent, 1 proximal point, 2 two-phase."""
    out = np.empty(steps + 1, dtype=np.float64)
    cdef double[:] xs = out
    cdef double x = x0
    cdef Py_ssize_t k
    xs[0] = x
    for k in range(steps):
        if kind == 0:
            x = _gd_step(x, p, t)
        elif kind == 1:
            x = _prox_step(x, p, t)
        else:
            if k % 2 == 0:
                x = _gd_step(_gd_step(x, p, t), p, t)
            else:
                x = x * (1.0 + delta)
        xs[k + 1] = x
    return out
