"""Alternating-minimization training loops for the five splitting forms.

One iteration is a full sweep over the blocks, layer by layer (backward by
default: layer N first). Within a layer the order is

* bcd2:         V_i, W_i
* bcd3, resnet: V_i, U_i, W_i
* admm:         V_i, W_i; after all layers the dual step on every Lam_i,
                then Vbar_i <- V_i
* mdlam:        u_i (i < N), v_i, W_i

A block whose terms are quadratic in it is minimised exactly through
``solve_spd``. Every other block takes a proximal-linearised step
``argmin <g, B - B_k> + r(B) + alpha/2 ||B - B_k||^2`` with alpha doubled
from ``prox_alpha`` until the smooth part of f sits below its quadratic
model, which makes f drop by at least ``alpha/2 ||B - B_k||^2``.

mdlam differs on purpose: ``u_i`` jumps to the minimiser of the quadratic
penalty plus a fixed proximal term and is then clipped into its box
``[sigma(v_i) - eps, sigma(v_i) + eps]``. Clipping the unconstrained
minimiser is not the constrained minimiser, so this step carries no descent
guarantee. ``v_i`` is clipped to the pre-image of that box so every recorded
state stays feasible.
"""
import hashlib
import json
import math
import time
from dataclasses import asdict, dataclass

import numpy as np

from . import network as nw
from . import objectives as ob
from .numerics import SingularMatrixError, frob_norm, matmul, solve_spd
from .trace import IterTrace

KIND_FORM = {
    "bcd2": "two_split_fnn",
    "bcd3": "three_split_fnn",
    "bcd3_resnet": "three_split_resnet",
    "admm": "admm_lagrangian",
    "mdlam": "mdlam",
}
NOMINAL_J = {"bcd2": 1, "bcd3": 1, "bcd3_resnet": 1, "admm": 1, "mdlam": 2}

STALL_WINDOW = 50
STALL_TOL = 1e-15
# relative slack on the backtracking test, scaled by the summed magnitude
# of the objective terms, so that rounding noise in f near a stationary
# point cannot force endless doublings
MODEL_SLACK = 1e-14


class DivergenceError(RuntimeError):
    def __init__(self, message, trace):
        super().__init__(message)
        self.trace = trace


@dataclass
class SolverConfig:
    kind: str = "bcd2"
    max_iter: int = 1000
    prox_alpha: float = 1e-2
    backtrack_factor: float = 0.5
    stop_dist_tol: float = 1e-8
    record_block_diffs: bool = True
    order: str = "backward"
    max_backtracks: int = 60
    record_wall_time: bool = False

    def __post_init__(self):
        if self.kind not in KIND_FORM:
            raise ValueError(f"kind must be one of {sorted(KIND_FORM)}, got {self.kind!r}")
        if int(self.max_iter) < 1:
            raise ValueError(f"max_iter must be positive, got {self.max_iter}")
        if not self.prox_alpha > 0:
            raise ValueError(f"prox_alpha must be > 0, got {self.prox_alpha}")
        if not 0 < self.backtrack_factor < 1:
            raise ValueError(f"backtrack_factor must lie in (0, 1), got {self.backtrack_factor}")
        if self.stop_dist_tol < 0:
            raise ValueError(f"stop_dist_tol must be >= 0, got {self.stop_dist_tol}")
        if self.order not in ("backward", "forward"):
            raise ValueError(f"order must be backward or forward, got {self.order!r}")
        self.max_iter = int(self.max_iter)

    @property
    def form(self):
        return KIND_FORM[self.kind]

    def digest(self):
        blob = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class SolverResult:
    state: ob.ParamState
    trace: IterTrace
    reason: str


def sweep_order(kind, depth, order="backward"):
    layers = range(depth, 0, -1) if order == "backward" else range(1, depth + 1)
    seq = []
    for i in layers:
        if kind == "bcd2":
            seq += [f"V{i}", f"W{i}"]
        elif kind in ("bcd3", "bcd3_resnet"):
            seq += [f"V{i}", f"U{i}", f"W{i}"]
        elif kind == "admm":
            seq += [f"V{i}", f"W{i}"]
        elif kind == "mdlam":
            seq += ([f"u{i}"] if i < depth else []) + [f"v{i}", f"W{i}"]
    return seq


class _Runner:
    def __init__(self, kind, spec, data, hyper, config):
        self.kind = kind
        self.form = KIND_FORM[kind]
        self.spec = spec
        self.data = data
        self.hyper = hyper
        self.cfg = config
        self.n = spec.depth

    # -- shared helpers ------------------------------------------------
    def f(self, st):
        return ob.evaluate(self.form, self.spec, self.data, self.hyper, st)

    def prev(self, st, i):
        if i == 1:
            return self.data.inputs
        return st[f"u{i - 1}"] if self.form == "mdlam" else st[f"V{i - 1}"]

    def _reg(self, block):
        return ob.block_regularizer(self.form, self.spec, self.hyper, block)

    def _ridge_mu(self, reg):
        """Curvature of a regularizer usable inside a linear solve, or None."""
        if reg is None or reg.kind == "none" or reg.lam == 0.0:
            return 0.0
        if reg.kind == "squared_frobenius":
            return reg.lam
        return None

    def _check(self, b, block):
        if not np.all(np.isfinite(b)):
            raise FloatingPointError(f"non-finite values in block {block}")
        return b

    # -- generic proximal-linearised step ---------------------------------
    def prox_linear(self, st, block):
        reg = self._reg(block)
        reg = reg if reg is not None else nw.Regularizer()
        b0 = st[block]
        g = ob.coupling_gradients(self.form, self.spec, self.data, self.hyper, st)[block]
        self._check(g, block)
        if not np.any(g):
            cand = nw.regularizer_prox(reg, b0, 1.0 / self.cfg.prox_alpha)
            if np.array_equal(cand, b0):
                return
        terms = [v for _, v in ob.objective_terms(self.form, self.spec, self.data,
                                                   self.hyper, st)]
        f0 = float(sum(terms)) - nw.regularizer_eval(reg, b0)
        slack = MODEL_SLACK * float(sum(abs(v) for v in terms))
        alpha = self.cfg.prox_alpha
        for _ in range(self.cfg.max_backtracks + 1):
            cand = nw.regularizer_prox(reg, b0 - g / alpha, 1.0 / alpha)
            delta = cand - b0
            st[block] = cand
            smooth = self.f(st) - nw.regularizer_eval(reg, cand)
            model = f0 + float(np.sum(g * delta)) + 0.5 * alpha * float(np.sum(delta * delta))
            if smooth <= model + slack:
                return
            alpha /= self.cfg.backtrack_factor
        st[block] = b0
        raise FloatingPointError(
            f"backtracking on {block} failed after {self.cfg.max_backtracks} increases")

    # -- closed-form pieces -------------------------------------------
    def ridge_w(self, st, i, target, weight, shift=None):
        """argmin_W weight/2 ||target - W P||^2 (+ shift term) + r(W).

        ``shift`` adds <shift, W P> (used by the admm dual pairing).
        Falls back to a proximal-linear step when no exact solve applies.
        """
        block = f"W{i}"
        mu = self._ridge_mu(self._reg(block))
        if mu is None:
            return self.prox_linear(st, block)
        p = self.prev(st, i)
        pt = p.T
        a = weight * matmul(p, pt) + mu * np.eye(p.shape[0])
        rhs_t = weight * target
        if shift is not None:
            rhs_t = rhs_t - shift
        try:
            w = solve_spd(a, matmul(p, rhs_t.T)).T
        except SingularMatrixError:
            return self.prox_linear(st, block)
        st[block] = self._check(np.ascontiguousarray(w), block)

    def quad_v(self, st, block, hess_extra, rhs, diag):
        """Solve (diag*I + hess_extra) V = rhs, with the block's regularizer.

        ``hess_extra`` is a d x d matrix or None. An ell1 state regularizer
        with no cross term has the closed form soft(rhs/diag); otherwise it
        falls back to a proximal-linear step.
        """
        reg = self._reg(block)
        mu = self._ridge_mu(reg)
        if mu is None:
            if hess_extra is None:
                st[block] = self._check(nw.soft_threshold(rhs / diag, reg.lam / diag), block)
                return
            return self.prox_linear(st, block)
        d = rhs.shape[0]
        if hess_extra is None:
            st[block] = self._check(rhs / (diag + mu), block)
            return
        a = hess_extra + (diag + mu) * np.eye(d)
        st[block] = self._check(solve_spd(a, rhs), block)

    # -- per-form block updates ----------------------------------------
    def update(self, st, block):
        kind, i = ob.parse_block(block)
        getattr(self, f"_upd_{self.kind}")(st, kind, i, block)

    def _loss_quadratic(self):
        return self.spec.loss == "half_squared"

    def _lw(self):
        return 1.0 / self.data.n if self.form in ob._AVERAGED else 1.0

    def _upd_bcd2(self, st, kind, i, block):
        g = self.hyper.gamma
        sp = self.spec
        if kind == "W":
            if sp.activation(i) == "identity":
                return self.ridge_w(st, i, st[f"V{i}"], g)
            return self.prox_linear(st, block)
        s = nw.activation_apply(sp.activation(i), matmul(st[f"W{i}"], self.prev(st, i)))
        if i == self.n:
            if not self._loss_quadratic():
                return self.prox_linear(st, block)
            lw = self._lw()
            return self.quad_v(st, block, None, lw * self.data.labels + g * s, lw + g)
        if sp.activation(i + 1) != "identity":
            return self.prox_linear(st, block)
        w = st[f"W{i + 1}"]
        rhs = g * s + g * matmul(w.T, st[f"V{i + 1}"])
        return self.quad_v(st, block, g * matmul(w.T, w), rhs, g)

    def _upd_bcd3(self, st, kind, i, block):
        self._upd_three(st, kind, i, block, resnet=False)

    def _upd_bcd3_resnet(self, st, kind, i, block):
        self._upd_three(st, kind, i, block, resnet=True)

    def _upd_three(self, st, kind, i, block, resnet):
        g = self.hyper.gamma
        sp = self.spec
        dims = sp.dims
        prev = self.prev(st, i)
        if kind == "W":
            return self.ridge_w(st, i, st[f"U{i}"], g)
        if kind == "U":
            if sp.activation(i) != "identity":
                return self.prox_linear(st, block)
            base = st[f"V{i}"] - (ob.embed_rows(prev, dims[i]) if resnet else 0.0)
            st[block] = 0.5 * (base + matmul(st[f"W{i}"], prev))
            return
        target = nw.activation_apply(sp.activation(i), st[f"U{i}"])
        if resnet:
            target = target + ob.embed_rows(prev, dims[i])
        if i == self.n:
            if not self._loss_quadratic():
                return self.prox_linear(st, block)
            lw = self._lw()
            return self.quad_v(st, block, None, lw * self.data.labels + g * target, lw + g)
        w = st[f"W{i + 1}"]
        hess = g * matmul(w.T, w)
        rhs = g * target + g * matmul(w.T, st[f"U{i + 1}"])
        if resnet:
            nxt = st[f"V{i + 1}"] - nw.activation_apply(sp.activation(i + 1), st[f"U{i + 1}"])
            rhs = rhs + g * ob.embed_rows(nxt, dims[i])
            eye = ob.embed_rows(ob.embed_rows(np.eye(dims[i]), dims[i + 1]), dims[i])
            hess = hess + g * eye
        return self.quad_v(st, block, hess, rhs, g)

    def _upd_admm(self, st, kind, i, block):
        h = self.hyper
        sp = self.spec
        n = self.n
        linear_i = i == n or sp.activation(i) == "identity"
        if kind == "W":
            if not linear_i:
                return self.prox_linear(st, block)
            return self.ridge_w(st, i, st[f"V{i}"], h.beta_i(i), shift=st[f"Lam{i}"])
        bi, xi = h.beta_i(i), h.xi_i(i)
        z = matmul(st[f"W{i}"], self.prev(st, i))
        s = z if i == n else nw.activation_apply(sp.activation(i), z)
        rhs = st[f"Lam{i}"] + bi * s + 2.0 * xi * st[f"Vbar{i}"]
        if i == n:
            if not self._loss_quadratic():
                return self.prox_linear(st, block)
            return self.quad_v(st, block, None, rhs + self.data.labels, 1.0 + bi + 2.0 * xi)
        if not (i + 1 == n or sp.activation(i + 1) == "identity"):
            return self.prox_linear(st, block)
        w = st[f"W{i + 1}"]
        b1 = h.beta_i(i + 1)
        rhs = rhs - matmul(w.T, st[f"Lam{i + 1}"]) + b1 * matmul(w.T, st[f"V{i + 1}"])
        return self.quad_v(st, block, b1 * matmul(w.T, w), rhs, bi + 2.0 * xi)

    def admm_duals(self, st):
        for i in range(1, self.n + 1):
            c = ob._admm_residual(self.spec, self.data, st, i)
            st[f"Lam{i}"] = st[f"Lam{i}"] + self.hyper.beta_i(i) * c
        for i in range(1, self.n + 1):
            st[f"Vbar{i}"] = st[f"V{i}"].copy()

    def _upd_mdlam(self, st, kind, i, block):
        g = self.hyper.gamma
        sp = self.spec
        eps = self.hyper.eps
        n = self.n
        if kind == "W":
            return self.ridge_w(st, i, st[f"v{i}"], g)
        if kind == "v":
            z = matmul(st[f"W{i}"], self.prev(st, i))
            if i == n:
                if not self._loss_quadratic():
                    return self.prox_linear(st, block)
                st[block] = (self.data.labels + g * z) / (1.0 + g)
                return
            u = st[f"u{i}"]
            lo, hi = nw.activation_preimage_interval(sp.activation(i), u - eps, u + eps)
            st[block] = np.clip(z, lo, hi)
            self._restore_box(st, i)
            return
        # u_i: quadratic minimiser with a fixed proximal term, then the box
        w = st[f"W{i + 1}"]
        alpha = self.cfg.prox_alpha
        a = g * matmul(w.T, w) + alpha * np.eye(w.shape[1])
        rhs = g * matmul(w.T, st[f"v{i + 1}"]) + alpha * st[block]
        unc = solve_spd(a, rhs)
        lo, hi = ob.box_bounds(sp, self.hyper, st, i)
        st[block] = self._check(np.clip(unc, lo, hi), block)

    def _restore_box(self, st, i):
        # sigma(preimage(x)) can miss x by an ulp; pull u back inside
        lo, hi = ob.box_bounds(self.spec, self.hyper, st, i)
        st[f"u{i}"] = np.clip(st[f"u{i}"], lo, hi)


def _validate_init(form, spec, data, hyper, state):
    ob.check_state(form, spec, data, state)
    if form == "mdlam":
        ob.check_box(spec, hyper, state)


def run(kind, spec, data, hyper, config, init_state, rng=None, sink=None):
    """Run one solver and return a :class:`SolverResult`.

    ``sink(trace, idx)`` is called after each record is appended.
    ``rng`` is accepted for interface symmetry; the sweeps are deterministic.
    """
    if config.kind != kind:
        raise ValueError(f"config is for {config.kind!r}, run asked for {kind!r}")
    runner = _Runner(kind, spec, data, hyper, config)
    form = runner.form
    st = init_state.copy()
    _validate_init(form, spec, data, hyper, st)
    names = ob.block_names(form, spec)
    order = sweep_order(kind, spec.depth, config.order)

    trace = IterTrace(meta={
        "source": "solver",
        "kind": kind,
        "form": form,
        "seed": None if rng is None else rng.seed,
        "config_digest": config.digest(),
    })
    timed = config.record_wall_time
    t0 = time.perf_counter_ns()

    def measure(state):
        f = runner.f(state)
        d = ob.subgrad_dist(form, spec, data, hyper, state)
        return f, d

    def record(k, f, d, diffs):
        trace.append(k, f, d, diffs, time.perf_counter_ns() - t0 if timed else None)
        if sink is not None:
            sink(trace, len(trace) - 1)

    try:
        with np.errstate(over="raise", invalid="raise"):
            f, d = measure(st)
    except FloatingPointError as exc:
        raise DivergenceError(f"initial state: {exc}", trace) from exc
    if not (math.isfinite(f) and math.isfinite(d)):
        raise DivergenceError("non-finite objective at the initial state", trace)
    record(0, f, d, {})
    if d <= config.stop_dist_tol:
        return SolverResult(st, trace, "dist_tol")

    flat = 0
    for k in range(1, config.max_iter + 1):
        before = {b: st[b].copy() for b in names} if config.record_block_diffs else None
        try:
            with np.errstate(over="raise", invalid="raise"):
                for block in order:
                    runner.update(st, block)
                if kind == "admm":
                    runner.admm_duals(st)
                f_new, d = measure(st)
        except (FloatingPointError, SingularMatrixError, OverflowError) as exc:
            raise DivergenceError(f"cycle {k}: {exc}", trace) from exc
        if not (math.isfinite(f_new) and math.isfinite(d)):
            raise DivergenceError(f"cycle {k}: non-finite objective", trace)
        diffs = {b: frob_norm(st[b] - before[b]) for b in names} if before else {}
        record(k, f_new, d, diffs)
        if d <= config.stop_dist_tol:
            return SolverResult(st, trace, "dist_tol")
        flat = flat + 1 if abs(f_new - f) < STALL_TOL else 0
        f = f_new
        if flat >= STALL_WINDOW:
            return SolverResult(st, trace, "stall")
    return SolverResult(st, trace, "max_iter")
