"""Trace-level checks of j-step sufficient decrease, KL inequalities and rates.

All regressions run over the trace tail, the last half of the usable
points (at least ``MIN_FIT_POINTS`` of them when available).
"""
import enum
import math
from dataclasses import dataclass, field

import numpy as np

MIN_FIT_POINTS = 16
REGIME_RESIDUAL_MAX = 0.5
# fewest trailing exact zeros that count as finite termination; a single
# zero is what fstar = min(f) produces at the argmin
MIN_ZERO_RUN = 3
# relative slack for inequalities that hold with equality on exact toys
REL_SLACK = 1e-9
# growth slope (log-ratio per unit abscissa) above which an envelope is
# declared to be losing against the data
ENVELOPE_GROWTH_TOL = 1e-3


class Bound(enum.Enum):
    """Stand-in for a constant that no finite number witnesses."""
    UNBOUNDED = "unbounded"
    UNDETERMINED = "undetermined"


@dataclass(frozen=True)
class KLParams:
    theta: float
    c: float
    tau: float = math.inf
    fstar: float = None

    def __post_init__(self):
        if not 0 <= self.theta < 1:
            raise ValueError(f"theta must lie in [0, 1), got {self.theta}")
        if not self.c > 0:
            raise ValueError(f"c must be > 0, got {self.c}")
        if not self.tau > 0:
            raise ValueError(f"tau must be > 0, got {self.tau}")


@dataclass
class DecreaseCertificate:
    j: int
    c1_hat: object
    k0_hat: int
    violations: list
    holds_after_k0: bool
    checked: int = 0

    def as_dict(self):
        return {"j": self.j, "c1_hat": _ser(self.c1_hat), "k0_hat": self.k0_hat,
                "violations": list(self.violations), "holds_after_k0": self.holds_after_k0,
                "checked": self.checked}


@dataclass
class A2Certificate:
    j: int
    alpha: float
    c2_hat: object
    k0_hat: int
    violations: list
    holds_after_k0: bool
    checked: int = 0

    def as_dict(self):
        return {"j": self.j, "alpha": self.alpha, "c2_hat": _ser(self.c2_hat),
                "k0_hat": self.k0_hat, "violations": list(self.violations),
                "holds_after_k0": self.holds_after_k0, "checked": self.checked}


@dataclass
class RateReport:
    regime: str
    fit_residual: float = None
    r1_hat: float = None
    k1_hat: int = None
    eta_hat: float = None
    C_hat: float = None
    sublinear_exponent_hat: float = None
    theta_implied: float = None
    tail_start: int = None
    residuals: dict = field(default_factory=dict)

    def as_dict(self):
        return {k: _ser(v) for k, v in self.__dict__.items()}


@dataclass
class KLEstimate:
    theta_hat: object
    slope: float = None
    intercept: float = None
    fit_residual: float = None
    points: int = 0

    def as_dict(self):
        return {k: _ser(v) for k, v in self.__dict__.items()}


@dataclass
class ChiReport:
    chi_hat: object
    k0: int = None
    skipped: list = field(default_factory=list)

    def as_dict(self):
        return {"chi_hat": _ser(self.chi_hat), "k0": self.k0, "skipped": list(self.skipped)}


def _ser(v):
    if isinstance(v, Bound):
        return v.value
    if isinstance(v, dict):
        return {k: _ser(x) for k, x in v.items()}
    if isinstance(v, float) and not math.isfinite(v):
        return "unbounded" if v > 0 else "-unbounded"
    return v


def _series(trace):
    if hasattr(trace, "f_array"):
        return trace.f_array, trace.dist_array
    f, d = trace
    return np.asarray(f, dtype=np.float64), np.asarray(d, dtype=np.float64)


def _decrease(trace, j, exponent):
    j = int(j)
    if j < 1:
        raise ValueError(f"j must be a positive integer, got {j}")
    f, dist = _series(trace)
    if len(f) <= j:
        raise ValueError(f"trace of {len(f)} records is too short for j={j}")
    m = len(f) - j
    ratios = np.full(m, np.inf)
    ok = np.zeros(m, dtype=bool)
    for k in range(m):
        dec = f[k] - f[k + j]
        d = dist[k + j]
        if d > 0:
            denom = d * d if exponent == 2.0 else d ** exponent
            if denom > 0:
                ratios[k] = dec / denom
                ok[k] = ratios[k] > 0
                continue
            # denominator underflowed: only the sign of the decrease is informative
        ok[k] = dec >= 0 and (d == 0 or dec > 0)
    bad = [int(k) for k in np.flatnonzero(~ok)]
    cap = m // 2
    k0 = bad[-1] + 1 if bad else 0
    if k0 <= cap:
        tail = ratios[k0:]
        finite = tail[np.isfinite(tail)]
        c = float(np.min(finite)) if finite.size else Bound.UNBOUNDED
        return c, k0, bad, True, m
    return None, cap, bad, False, m


def check_A1(trace, j):
    """Empirical j-step sufficient decrease ``c1 dist_{k+j}^2 <= f_k - f_{k+j}``.

    ``k0_hat`` is the first index after the last failure. The certificate
    holds when that burn-in covers at most half of the checked indices;
    otherwise ``k0_hat`` is reported at the half-way cap with every failure.
    """
    c, k0, bad, holds, m = _decrease(trace, j, 2.0)
    return DecreaseCertificate(int(j), c, k0, bad, holds, m)


def check_A2(trace, j, alpha):
    """As :func:`check_A1` with ``dist^(1/alpha)`` in place of ``dist^2``."""
    if not alpha > 0:
        raise ValueError(f"alpha must be > 0, got {alpha}")
    c, k0, bad, holds, m = _decrease(trace, j, 1.0 / alpha)
    return A2Certificate(int(j), float(alpha), c, k0, bad, holds, m)


def check_lemma1(trace, kl, j, certificate):
    """Check ``gap_k^(2 theta) <= c^2/c1 (f_{k-j} - f_k)`` along a trace.

    Evaluated at every ``k >= k0_hat + j`` with ``0 < gap_k < 1``. Returns
    ``(checks, worst_margin)`` where ``checks`` is a list of ``(k, bool)``
    and the margin is min(RHS - LHS) (``None`` when nothing was eligible).
    """
    if kl.fstar is None:
        raise ValueError("check_lemma1 needs KLParams.fstar")
    c1 = certificate.c1_hat
    if not isinstance(c1, float) or not c1 > 0:
        raise ValueError(f"check_lemma1 needs a finite positive c1, got {c1!r}")
    j = int(j)
    f, _ = _series(trace)
    gaps = f - kl.fstar
    coef = kl.c ** 2 / c1
    checks = []
    worst = None
    for k in range(certificate.k0_hat + j, len(f)):
        g = gaps[k]
        if not 0 < g < 1:
            continue
        lhs = g ** (2 * kl.theta)
        rhs = coef * (f[k - j] - f[k])
        checks.append((k, bool(lhs <= rhs + REL_SLACK * abs(rhs))))
        margin = rhs - lhs
        worst = margin if worst is None else min(worst, margin)
    return checks, worst


def _tail_slice(count):
    size = max(count - count // 2, min(MIN_FIT_POINTS, count))
    return count - size


def _linfit(x, y):
    a = np.vstack([x, np.ones_like(x)]).T
    (slope, icpt), *_ = np.linalg.lstsq(a, y, rcond=None)
    resid = float(np.max(np.abs(y - (slope * x + icpt)))) if len(x) else 0.0
    return float(slope), float(icpt), resid


def _zero_run_start(gaps):
    nz = np.flatnonzero(gaps != 0)
    start = int(nz[-1]) + 1 if nz.size else 0
    return start if len(gaps) - start >= MIN_ZERO_RUN else None


def fit_rate(gaps, j=1):
    """Classify a gap sequence as finite, R-linear or R-sublinear.

    Linear model: ``log gap_k ~ a + b k`` with ``eta = exp(j b)``. Sublinear
    model: ``log gap_k ~ a - p log(floor(k/j) + 1)`` with implied
    ``theta = (1/p + 1)/2``. The model with the smaller max log residual over
    the tail wins; ``undetermined`` if both exceed 0.5 or fewer than 16
    positive gaps exist. ``C_hat`` is the least constant for which
    ``C eta^floor(k/j)`` (resp. ``C (floor(k/j)+1)^-p``) dominates the tail.
    """
    gaps = np.asarray(gaps, dtype=np.float64)
    j = int(j)
    if np.any(gaps < 0):
        raise ValueError("gaps must be non-negative")
    start = _zero_run_start(gaps)
    if start is not None and len(gaps) > 0:
        return RateReport("finite", fit_residual=0.0, k1_hat=start, theta_implied=0.0,
                          r1_hat=_r1(gaps, np.arange(len(gaps)), start))
    ks = np.flatnonzero(gaps > 0)
    if ks.size < MIN_FIT_POINTS:
        return RateReport("undetermined")
    ks = ks[_tail_slice(ks.size):]
    lg = np.log(gaps[ks])
    slope, icpt, res_lin = _linfit(ks.astype(float), lg)
    ab = np.floor(ks / j) + 1.0
    sslope, sicpt, res_sub = _linfit(np.log(ab), lg)
    r1 = _r1(gaps, ks, ks[0])
    resid = {"r_linear": res_lin, "r_sublinear": res_sub}
    if min(res_lin, res_sub) > REGIME_RESIDUAL_MAX:
        return RateReport("undetermined", fit_residual=min(res_lin, res_sub), r1_hat=r1,
                          tail_start=int(ks[0]), residuals=resid)
    if res_lin <= res_sub and slope < 0:
        eta = math.exp(j * slope)
        c = float(np.max(gaps[ks] / eta ** np.floor(ks / j)))
        return RateReport("r_linear", fit_residual=res_lin, r1_hat=r1, k1_hat=0,
                          eta_hat=eta, C_hat=c, tail_start=int(ks[0]), residuals=resid)
    if sslope < 0:
        p = -sslope
        c = float(np.max(gaps[ks] * ab ** p))
        return RateReport("r_sublinear", fit_residual=res_sub, r1_hat=r1, k1_hat=0,
                          sublinear_exponent_hat=p, theta_implied=(1.0 / p + 1.0) / 2.0,
                          C_hat=c, tail_start=int(ks[0]), residuals=resid)
    return RateReport("undetermined", fit_residual=min(res_lin, res_sub), r1_hat=r1,
                      tail_start=int(ks[0]), residuals=resid)


def _r1(gaps, ks, start):
    """max over the tail of gap_k^(1/k): a finite stand-in for the limsup."""
    sel = [k for k in ks if k >= max(start, 1)]
    if not sel:
        return None
    return float(max(gaps[k] ** (1.0 / k) for k in sel))


def estimate_kl_exponent(trace, fstar):
    """Least-squares slope m of log(gap) on log(dist) over the tail; theta = 1/m."""
    f, d = _series(trace)
    gaps = f - fstar
    use = np.flatnonzero((gaps > 0) & (d > 0))
    if use.size < MIN_FIT_POINTS:
        return KLEstimate(Bound.UNDETERMINED, points=int(use.size))
    use = use[_tail_slice(use.size):]
    x = np.log(d[use])
    y = np.log(gaps[use])
    if np.ptp(x) == 0 or np.ptp(y) == 0:
        return KLEstimate(Bound.UNDETERMINED, points=int(use.size))
    slope, icpt, res = _linfit(x, y)
    if not slope > 0:
        return KLEstimate(Bound.UNDETERMINED, slope=slope, intercept=icpt,
                          fit_residual=res, points=int(use.size))
    theta = min(max(1.0 / slope, 0.0), np.nextafter(1.0, 0.0))
    return KLEstimate(float(theta), slope=slope, intercept=icpt, fit_residual=res,
                      points=int(use.size))


def verify_envelope(gaps, j, theta, k1=0):
    """Smallest C for which the rate envelope dominates every gap at k >= k1.

    theta <= 1/2: ``C eta^floor((k-k1)/j)`` with eta fitted by log-linear
    least squares on the positive gaps. theta > 1/2:
    ``C (floor((k-k1)/j) + 1)^(-1/(2 theta - 1))``. When the gap-to-envelope
    ratio keeps growing over the tail (least-squares slope of its log above
    ``ENVELOPE_GROWTH_TOL``) no constant works and ``C_min`` is ``inf``.
    Returns ``(holds, C_min)``.
    """
    if not 0 < theta < 1:
        raise ValueError(f"theta must lie in (0, 1), got {theta}")
    gaps = np.asarray(gaps, dtype=np.float64)
    if np.any(gaps < 0):
        raise ValueError("gaps must be non-negative")
    j, k1 = int(j), int(k1)
    ks = np.arange(k1, len(gaps))
    if ks.size == 0:
        return True, 0.0
    steps = np.floor((ks - k1) / j)
    g = gaps[ks]
    pos = g > 0
    if not np.any(pos):
        return True, 0.0
    if theta <= 0.5:
        if np.count_nonzero(pos) < 2:
            return True, float(np.max(g))
        slope, _, _ = _linfit(ks[pos].astype(float), np.log(g[pos]))
        if slope >= 0:
            return False, math.inf
        log_env = j * slope * steps
        x = ks.astype(float)
    else:
        p = 1.0 / (2.0 * theta - 1.0)
        log_env = -p * np.log(steps + 1.0)
        x = np.log(steps + 1.0)
    log_ratio = np.log(g[pos]) - log_env[pos]
    c_min = float(np.exp(np.max(log_ratio)))
    xs = x[pos]
    tail = slice(_tail_slice(xs.size), None)
    if xs[tail].size >= 2 and np.ptp(xs[tail]) > 0:
        growth, _, _ = _linfit(xs[tail], log_ratio[tail])
        if growth > ENVELOPE_GROWTH_TOL:
            return False, math.inf
    return True, c_min


def check_chi_ratio(diffs):
    """chi_hat = max over the tail of diff_{k-1}/diff_k, skipping zero diff_k."""
    diffs = np.asarray(diffs, dtype=np.float64)
    if diffs.size < 3:
        raise ValueError(f"need at least 3 records, got {diffs.size}")
    idx, ratios, skipped = [], [], []
    for k in range(1, diffs.size):
        if diffs[k] == 0:
            skipped.append(k)
            continue
        idx.append(k)
        ratios.append(diffs[k - 1] / diffs[k])
    if not ratios:
        return ChiReport(Bound.UNBOUNDED, None, skipped)
    ratios = np.asarray(ratios)
    tail = ratios[_tail_slice(ratios.size):]
    chi = float(np.max(tail))
    above = np.flatnonzero(ratios > chi)
    k0 = idx[int(above[-1]) + 1] if above.size else idx[0]
    return ChiReport(chi, k0, skipped)
