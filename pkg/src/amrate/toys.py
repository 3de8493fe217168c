"""One-dimensional test problems f(x) = |x|^p with a known KL exponent.

For p >= 1 the function satisfies gap^theta <= c * dist with
theta = 1 - 1/p and c = 1/p, so every rate regime can be produced on
demand: p = 1 terminates finitely, p = 2 is linear, p > 2 is sublinear.
"""
import math
from dataclasses import dataclass

import numpy as np

from ._backend import kernels
from .diagnostics import KLParams
from .trace import IterTrace

ITERATORS = ("gradient_descent", "proximal_point", "two_phase")
_KIND_CODE = {"gradient_descent": 0, "proximal_point": 1, "two_phase": 2}


class StabilityError(ValueError):
    """The iterator would not converge monotonically from this start."""


@dataclass(frozen=True)
class ToyProblem:
    p: float

    def __post_init__(self):
        if not (math.isfinite(self.p) and self.p >= 1.0):
            raise ValueError(f"p must be a finite number >= 1, got {self.p}")

    @property
    def theta_analytic(self):
        return 1.0 - 1.0 / self.p

    @property
    def fstar(self):
        return 0.0

    @property
    def minimizer(self):
        return 0.0

    def f(self, x):
        return np.abs(x) ** self.p

    def dist(self, x):
        """|f'(x)|, with the min-norm subgradient 0 at the kink of |x|."""
        x = np.asarray(x, dtype=np.float64)
        out = self.p * np.abs(x) ** (self.p - 1.0)
        return np.where(x == 0.0, 0.0, out)


@dataclass(frozen=True)
class ToyIterator:
    kind: str
    t: float
    delta: float = 0.0

    def __post_init__(self):
        if self.kind not in ITERATORS:
            raise ValueError(f"iterator must be one of {ITERATORS}, got {self.kind!r}")
        if not self.t > 0:
            raise ValueError(f"step t must be > 0, got {self.t}")
        if not self.delta >= 0:
            raise ValueError(f"bump delta must be >= 0, got {self.delta}")


def check_stability(problem, iterator, x0):
    """Raise StabilityError unless the iteration contracts from ``x0``."""
    p, t = problem.p, iterator.t
    if iterator.kind == "proximal_point":
        return
    if p < 2.0:
        raise StabilityError(
            f"{iterator.kind} needs p >= 2 (gradient of |x|^{p:g} is not Lipschitz at 0); "
            "use proximal_point")
    if iterator.kind == "two_phase":
        if p != 2.0:
            raise StabilityError("two_phase is defined for p = 2 only")
        if not t < 0.5:
            raise StabilityError(f"two_phase needs t < 1/2, got {t}")
        factor = (1.0 + iterator.delta) * (1.0 - 2.0 * t) ** 2
        if not factor < 1.0:
            raise StabilityError(
                f"two-step factor (1+delta)(1-2t)^2 = {factor:g} does not contract")
        return
    # gradient descent: x+ = x (1 - t p |x|^(p-2)) must keep its sign
    step = t * p * abs(x0) ** (p - 2.0)
    if not step < 1.0:
        raise StabilityError(
            f"gradient step t*p*|x0|^(p-2) = {step:g} must be < 1 for a monotone run")


def run_toy(problem, iterator, x0, steps):
    """Iterate from ``x0`` and return the exact (f, dist) trace."""
    steps = int(steps)
    if steps < 0:
        raise ValueError(f"steps must be >= 0, got {steps}")
    x0 = float(x0)
    if not math.isfinite(x0):
        raise ValueError(f"x0 must be finite, got {x0}")
    check_stability(problem, iterator, x0)
    xs = kernels.toy_iterate(_KIND_CODE[iterator.kind], problem.p, iterator.t,
                             iterator.delta, x0, steps)
    meta = {
        "source": "toy",
        "p": problem.p,
        "iterator": iterator.kind,
        "t": iterator.t,
        "delta": iterator.delta,
        "x0": x0,
        "theta_analytic": problem.theta_analytic,
        "fstar": problem.fstar,
    }
    return IterTrace.from_arrays(problem.f(xs), problem.dist(xs), meta=meta)


def analytic_kl_params(problem):
    return KLParams(theta=problem.theta_analytic, c=1.0 / problem.p, fstar=0.0)
