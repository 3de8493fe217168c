"""Activations, losses and regularizers, plus network and dataset descriptions."""
from dataclasses import dataclass, field

import numpy as np

from .numerics import frob_norm

ACTIVATIONS = ("identity", "tanh", "sigmoid", "relu")
LOSSES = ("half_squared", "logistic")
REGULARIZERS = ("none", "squared_frobenius", "ell1")


def _sigmoid(z):
    # split by sign so exp never overflows
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def activation_apply(kind, z):
    z = np.asarray(z, dtype=np.float64)
    if kind == "identity":
        return z.copy()
    if kind == "tanh":
        return np.tanh(z)
    if kind == "sigmoid":
        return _sigmoid(z)
    if kind == "relu":
        return np.maximum(z, 0.0)
    raise ValueError(f"unknown activation {kind!r}")


def activation_derivative(kind, z):
    """Elementwise derivative; relu takes 0 at the kink."""
    z = np.asarray(z, dtype=np.float64)
    if kind == "identity":
        return np.ones_like(z)
    if kind == "tanh":
        th = np.tanh(z)
        return 1.0 - th * th
    if kind == "sigmoid":
        s = _sigmoid(z)
        return s * (1.0 - s)
    if kind == "relu":
        return (z > 0).astype(np.float64)
    raise ValueError(f"unknown activation {kind!r}")


def activation_range(kind):
    return {
        "identity": (-np.inf, np.inf),
        "tanh": (-1.0, 1.0),
        "sigmoid": (0.0, 1.0),
        "relu": (0.0, np.inf),
    }[kind]


def activation_preimage_interval(kind, lo, hi):
    """Entrywise interval of ``z`` with ``lo <= sigma(z) <= hi``.

    Bounds outside the activation's range open the interval to +-inf.
    Callers guarantee the interval is non-empty (it contains the current
    pre-activation of a feasible state).
    """
    lo = np.asarray(lo, dtype=np.float64)
    hi = np.asarray(hi, dtype=np.float64)
    rlo, rhi = activation_range(kind)
    with np.errstate(divide="ignore", invalid="ignore"):
        if kind == "identity":
            return lo.copy(), hi.copy()
        if kind == "tanh":
            zlo = np.where(lo <= rlo, -np.inf, np.arctanh(np.clip(lo, -1.0, 1.0)))
            zhi = np.where(hi >= rhi, np.inf, np.arctanh(np.clip(hi, -1.0, 1.0)))
            return zlo, zhi
        if kind == "sigmoid":
            zlo = np.where(lo <= rlo, -np.inf, np.log(lo) - np.log1p(-lo))
            zhi = np.where(hi >= rhi, np.inf, np.log(hi) - np.log1p(-hi))
            return zlo, zhi
        if kind == "relu":
            zlo = np.where(lo <= 0.0, -np.inf, lo)
            return zlo, hi.copy()
    raise ValueError(f"unknown activation {kind!r}")


def _check_pm1(y):
    if not np.all((y == 1.0) | (y == -1.0)):
        raise ValueError("logistic loss needs labels in {-1, +1}")


def loss_eval(kind, v, y):
    v = np.asarray(v, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if v.shape != y.shape:
        raise ValueError(f"loss shapes differ: {v.shape} vs {y.shape}")
    if kind == "half_squared":
        d = v - y
        return 0.5 * float(np.sum(d * d))
    if kind == "logistic":
        _check_pm1(y)
        # log(1 + exp(-m)) without overflow
        return float(np.sum(np.logaddexp(0.0, -y * v)))
    raise ValueError(f"unknown loss {kind!r}")


def loss_grad(kind, v, y):
    v = np.asarray(v, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if v.shape != y.shape:
        raise ValueError(f"loss shapes differ: {v.shape} vs {y.shape}")
    if kind == "half_squared":
        return v - y
    if kind == "logistic":
        _check_pm1(y)
        return -y * _sigmoid(-y * v)
    raise ValueError(f"unknown loss {kind!r}")


@dataclass(frozen=True)
class Regularizer:
    kind: str = "none"
    lam: float = 0.0

    def __post_init__(self):
        if self.kind not in REGULARIZERS:
            raise ValueError(f"unknown regularizer {self.kind!r}")
        if self.lam < 0:
            raise ValueError(f"regularizer weight must be >= 0, got {self.lam}")

    @property
    def smooth(self):
        return self.kind != "ell1" or self.lam == 0.0


def regularizer_eval(reg, w):
    w = np.asarray(w, dtype=np.float64)
    if reg.kind == "none":
        return 0.0
    if reg.kind == "squared_frobenius":
        return 0.5 * reg.lam * float(np.sum(w * w))
    return reg.lam * float(np.sum(np.abs(w)))


def regularizer_grad(reg, w):
    """Gradient of a smooth regularizer (zero for ``none``)."""
    w = np.asarray(w, dtype=np.float64)
    if reg.kind == "squared_frobenius":
        return reg.lam * w
    if reg.kind == "none" or reg.lam == 0.0:
        return np.zeros_like(w)
    raise ValueError("ell1 has no gradient; use regularizer_min_norm_dist")


def soft_threshold(w, thresh):
    return np.sign(w) * np.maximum(np.abs(w) - thresh, 0.0)


def regularizer_prox(reg, w, t):
    """argmin_p  t*r(p) + 0.5*||p - w||^2."""
    if t <= 0:
        raise ValueError(f"prox step must be positive, got {t}")
    w = np.asarray(w, dtype=np.float64)
    if reg.kind == "none":
        return w.copy()
    if reg.kind == "squared_frobenius":
        return w / (1.0 + reg.lam * t)
    return soft_threshold(w, reg.lam * t)


def regularizer_min_norm_entries(reg, w, g_smooth):
    """Per-entry magnitudes of the min-norm element of ``g_smooth + dr(w)``."""
    w = np.asarray(w, dtype=np.float64)
    g = np.asarray(g_smooth, dtype=np.float64)
    if w.shape != g.shape:
        raise ValueError(f"shapes differ: {w.shape} vs {g.shape}")
    if reg.kind == "ell1":
        at_zero = w == 0.0
        return np.where(at_zero,
                        np.maximum(np.abs(g) - reg.lam, 0.0),
                        np.abs(g + reg.lam * np.sign(w)))
    return np.abs(g + regularizer_grad(reg, w))


def regularizer_min_norm_dist(reg, w, g_smooth):
    """min over s in dr(w) of ||g_smooth + s||."""
    return frob_norm(regularizer_min_norm_entries(reg, w, g_smooth))


@dataclass
class NetworkSpec:
    """Layer widths ``dims = [d_0, ..., d_N]`` and per-layer choices.

    ``activations[i-1]``, ``weight_regs[i-1]`` and ``state_regs[i-1]``
    belong to layer ``i``.
    """
    dims: list
    activations: list
    loss: str = "half_squared"
    weight_regs: list = field(default=None)
    state_regs: list = field(default=None)

    def __post_init__(self):
        self.dims = [int(d) for d in self.dims]
        if len(self.dims) < 2 or any(d <= 0 for d in self.dims):
            raise ValueError(f"dims must hold at least two positive widths, got {self.dims}")
        n = self.depth
        if isinstance(self.activations, str):
            self.activations = [self.activations] * n
        self.activations = list(self.activations)
        if len(self.activations) != n:
            raise ValueError(f"need {n} activations, got {len(self.activations)}")
        for a in self.activations:
            if a not in ACTIVATIONS:
                raise ValueError(f"unknown activation {a!r}")
        if self.loss not in LOSSES:
            raise ValueError(f"unknown loss {self.loss!r}")
        self.weight_regs = self._regs(self.weight_regs, "weight_regs")
        self.state_regs = self._regs(self.state_regs, "state_regs")

    def _regs(self, regs, name):
        n = self.depth
        if regs is None:
            return [Regularizer()] * n
        if isinstance(regs, Regularizer):
            return [regs] * n
        regs = [r if isinstance(r, Regularizer) else Regularizer(**r) for r in regs]
        if len(regs) != n:
            raise ValueError(f"need {n} {name}, got {len(regs)}")
        return regs

    @property
    def depth(self):
        return len(self.dims) - 1

    def activation(self, i):
        return self.activations[i - 1]

    def weight_reg(self, i):
        return self.weight_regs[i - 1]

    def state_reg(self, i):
        return self.state_regs[i - 1]


@dataclass
class DataSet:
    inputs: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.inputs = np.atleast_2d(np.asarray(self.inputs, dtype=np.float64))
        self.labels = np.atleast_2d(np.asarray(self.labels, dtype=np.float64))
        if self.inputs.shape[1] != self.labels.shape[1]:
            raise ValueError(
                f"inputs have {self.inputs.shape[1]} samples, labels {self.labels.shape[1]}")

    @property
    def n(self):
        return self.inputs.shape[1]

    def check(self, spec):
        if self.inputs.shape[0] != spec.dims[0] or self.labels.shape[0] != spec.dims[-1]:
            raise ValueError(
                f"data is {self.inputs.shape[0]}->{self.labels.shape[0]}, "
                f"network is {spec.dims[0]}->{spec.dims[-1]}")
