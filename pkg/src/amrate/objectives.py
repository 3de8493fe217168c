"""The five splitting objectives, their block gradients and dist(0, df(X)).

Forms and their blocks (layer index ``i`` runs 1..N):

* ``two_split_fnn``       W_i, V_i
* ``three_split_fnn``     W_i, U_i, V_i
* ``three_split_resnet``  W_i, U_i, V_i
* ``admm_lagrangian``     W_i, V_i, Lam_i, Vbar_i
* ``mdlam``               W_i, v_i (i = 1..N), u_i (i = 1..N-1)

Block ids are strings such as ``"W2"`` or ``"Vbar1"``. The input ``V_0``
(``u_0`` for mdlam) is the data matrix and is never a block.
"""
import re
from dataclasses import dataclass, field

import numpy as np

from . import network as nw
from .numerics import gaussian_fill, matmul

FORMS = ("two_split_fnn", "three_split_fnn", "admm_lagrangian", "mdlam",
         "three_split_resnet")

# Forms whose loss carries the 1/n sample average.
_AVERAGED = {"two_split_fnn", "three_split_fnn", "three_split_resnet"}

BOX_TOL = 1e-12

_BLOCK_RE = re.compile(r"^(W|V|U|Lam|Vbar|u|v)(\d+)$")


class InfeasibleStateError(ValueError):
    """An mdlam state violates its box constraints."""


@dataclass
class Hyperparams:
    gamma: float = 1.0
    lam: float = 0.2
    beta: object = 2.0
    xi: object = 0.05
    eps: float = 0.1

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError(f"gamma must be > 0, got {self.gamma}")
        if self.lam < 0:
            raise ValueError(f"lam must be >= 0, got {self.lam}")
        if self.eps < 0:
            raise ValueError(f"eps must be >= 0, got {self.eps}")
        for name in ("beta", "xi"):
            vals = getattr(self, name)
            vals = [vals] if np.isscalar(vals) else list(vals)
            if name == "beta" and any(not b > 0 for b in vals):
                raise ValueError(f"beta entries must be > 0, got {vals}")
            if name == "xi" and any(x < 0 for x in vals):
                raise ValueError(f"xi entries must be >= 0, got {vals}")

    def _per_layer(self, vals, i):
        if np.isscalar(vals):
            return float(vals)
        return float(vals[i - 1])

    def beta_i(self, i):
        return self._per_layer(self.beta, i)

    def xi_i(self, i):
        return self._per_layer(self.xi, i)


@dataclass
class ParamState:
    form: str
    blocks: dict = field(default_factory=dict)

    def __getitem__(self, key):
        return self.blocks[key]

    def __setitem__(self, key, value):
        self.blocks[key] = value

    def copy(self):
        return ParamState(self.form, {k: v.copy() for k, v in self.blocks.items()})


def block_names(form, spec):
    n = spec.depth
    if form == "two_split_fnn":
        kinds = ("W", "V")
    elif form in ("three_split_fnn", "three_split_resnet"):
        kinds = ("W", "U", "V")
    elif form == "admm_lagrangian":
        kinds = ("W", "V", "Lam", "Vbar")
    elif form == "mdlam":
        names = [f"W{i}" for i in range(1, n + 1)]
        names += [f"u{i}" for i in range(1, n)]
        names += [f"v{i}" for i in range(1, n + 1)]
        return names
    else:
        raise ValueError(f"unknown form {form!r}")
    return [f"{k}{i}" for k in kinds for i in range(1, n + 1)]


def parse_block(block_id):
    m = _BLOCK_RE.match(block_id)
    if not m:
        raise KeyError(f"malformed block id {block_id!r}")
    return m.group(1), int(m.group(2))


def block_shape(form, spec, data, block_id):
    kind, i = parse_block(block_id)
    if kind == "W":
        return (spec.dims[i], spec.dims[i - 1])
    return (spec.dims[i], data.n)


def check_state(form, spec, data, state):
    if state.form != form:
        raise ValueError(f"state belongs to {state.form!r}, not {form!r}")
    names = block_names(form, spec)
    missing = [b for b in names if b not in state.blocks]
    extra = [b for b in state.blocks if b not in names]
    if missing or extra:
        raise ValueError(f"state blocks mismatch: missing {missing}, unexpected {extra}")
    for b in names:
        want = block_shape(form, spec, data, b)
        if state[b].shape != want:
            raise ValueError(f"block {b} has shape {state[b].shape}, expected {want}")
    data.check(spec)


def embed_rows(a, rows):
    """Identity shortcut between widths: zero-pad or truncate rows."""
    if a.shape[0] == rows:
        return a
    if a.shape[0] > rows:
        return a[:rows]
    out = np.zeros((rows, a.shape[1]))
    out[:a.shape[0]] = a
    return out


def _loss_weight(form, data):
    return 1.0 / data.n if form in _AVERAGED else 1.0


def block_regularizer(form, spec, hyper, block_id):
    """The separable term attached to a block, or None (mdlam ``u`` blocks
    carry the box indicator instead, see :func:`box_bounds`)."""
    kind, i = parse_block(block_id)
    if form == "admm_lagrangian":
        if kind == "W":
            return nw.Regularizer("squared_frobenius", hyper.lam)
        return None
    if kind == "W":
        return spec.weight_reg(i)
    if kind == "V" and form != "mdlam":
        return spec.state_reg(i)
    return None


def box_bounds(spec, hyper, state, i):
    s = nw.activation_apply(spec.activation(i), state[f"v{i}"])
    return s - hyper.eps, s + hyper.eps


def check_box(spec, hyper, state, tol=BOX_TOL):
    for i in range(1, spec.depth):
        lo, hi = box_bounds(spec, hyper, state, i)
        u = state[f"u{i}"]
        worst = max(float(np.max(lo - u)), float(np.max(u - hi)))
        if worst > tol:
            raise InfeasibleStateError(
                f"u{i} leaves its box by {worst:.3e} (eps={hyper.eps})")


def _prev(form, data, state, i):
    if i == 1:
        return data.inputs
    return state[f"u{i - 1}"] if form == "mdlam" else state[f"V{i - 1}"]


def objective_terms(form, spec, data, hyper, state):
    """Objective broken into named terms, in printed order."""
    n = spec.depth
    lw = _loss_weight(form, data)
    terms = []
    if form == "mdlam":
        check_box(spec, hyper, state)
        terms.append(("loss", nw.loss_eval(spec.loss, state[f"v{n}"], data.labels)))
        for i in range(1, n + 1):
            terms.append((f"r{i}", nw.regularizer_eval(spec.weight_reg(i), state[f"W{i}"])))
        for i in range(1, n + 1):
            p = state[f"v{i}"] - matmul(state[f"W{i}"], _prev(form, data, state, i))
            terms.append((f"pen{i}", 0.5 * hyper.gamma * float(np.sum(p * p))))
        return terms

    if form == "admm_lagrangian":
        terms.append(("loss", nw.loss_eval(spec.loss, state[f"V{n}"], data.labels)))
        wsq = sum(float(np.sum(state[f"W{i}"] ** 2)) for i in range(1, n + 1))
        terms.append(("weight_decay", 0.5 * hyper.lam * wsq))
        for i in range(1, n + 1):
            c = _admm_residual(spec, data, state, i)
            terms.append((f"dual{i}", float(np.sum(state[f"Lam{i}"] * c))))
            terms.append((f"aug{i}", 0.5 * hyper.beta_i(i) * float(np.sum(c * c))))
        for i in range(1, n + 1):
            d = state[f"V{i}"] - state[f"Vbar{i}"]
            terms.append((f"prox{i}", hyper.xi_i(i) * float(np.sum(d * d))))
        return terms

    terms.append(("loss", lw * nw.loss_eval(spec.loss, state[f"V{n}"], data.labels)))
    for i in range(1, n + 1):
        terms.append((f"r{i}", nw.regularizer_eval(spec.weight_reg(i), state[f"W{i}"])))
    for i in range(1, n + 1):
        terms.append((f"s{i}", nw.regularizer_eval(spec.state_reg(i), state[f"V{i}"])))
    for i in range(1, n + 1):
        vprev = _prev(form, data, state, i)
        if form == "two_split_fnn":
            z = matmul(state[f"W{i}"], vprev)
            r = state[f"V{i}"] - nw.activation_apply(spec.activation(i), z)
        elif form == "three_split_fnn":
            r = state[f"V{i}"] - nw.activation_apply(spec.activation(i), state[f"U{i}"])
        else:
            r = (state[f"V{i}"] - embed_rows(vprev, spec.dims[i])
                 - nw.activation_apply(spec.activation(i), state[f"U{i}"]))
        terms.append((f"pen{i}", 0.5 * hyper.gamma * float(np.sum(r * r))))
    if form != "two_split_fnn":
        for i in range(1, n + 1):
            q = state[f"U{i}"] - matmul(state[f"W{i}"], _prev(form, data, state, i))
            terms.append((f"lin{i}", 0.5 * hyper.gamma * float(np.sum(q * q))))
    return terms


def evaluate(form, spec, data, hyper, state):
    """Objective value f(X) of the selected splitting form."""
    return float(sum(v for _, v in objective_terms(form, spec, data, hyper, state)))


def _admm_residual(spec, data, state, i):
    z = matmul(state[f"W{i}"], _prev("admm_lagrangian", data, state, i))
    if i < spec.depth:
        z = nw.activation_apply(spec.activation(i), z)
    return z - state[f"V{i}"]


def coupling_gradients(form, spec, data, hyper, state):
    """Gradient of every smooth term except each block's own regularizer."""
    n = spec.depth
    g = hyper.gamma
    lw = _loss_weight(form, data)
    out = {}
    T = np.transpose

    if form in ("two_split_fnn", "three_split_fnn", "three_split_resnet"):
        vn = state[f"V{n}"]
        loss_g = lw * nw.loss_grad(spec.loss, vn, data.labels)
        res, rd, lin = {}, {}, {}
        for i in range(1, n + 1):
            vprev = _prev(form, data, state, i)
            act = spec.activation(i)
            if form == "two_split_fnn":
                z = matmul(state[f"W{i}"], vprev)
                res[i] = state[f"V{i}"] - nw.activation_apply(act, z)
                rd[i] = res[i] * nw.activation_derivative(act, z)
            else:
                u = state[f"U{i}"]
                sh = embed_rows(vprev, spec.dims[i]) if form == "three_split_resnet" else 0.0
                res[i] = state[f"V{i}"] - sh - nw.activation_apply(act, u)
                rd[i] = res[i] * nw.activation_derivative(act, u)
                lin[i] = u - matmul(state[f"W{i}"], vprev)
        for i in range(1, n + 1):
            vprev = _prev(form, data, state, i)
            if form == "two_split_fnn":
                out[f"W{i}"] = -g * matmul(rd[i], T(vprev))
                gv = g * res[i]
                if i < n:
                    gv = gv - g * matmul(T(state[f"W{i + 1}"]), rd[i + 1])
            else:
                out[f"W{i}"] = -g * matmul(lin[i], T(vprev))
                out[f"U{i}"] = -g * rd[i] + g * lin[i]
                gv = g * res[i]
                if i < n:
                    gv = gv - g * matmul(T(state[f"W{i + 1}"]), lin[i + 1])
                    if form == "three_split_resnet":
                        gv = gv - g * embed_rows(res[i + 1], spec.dims[i])
            if i == n:
                gv = gv + loss_g
            out[f"V{i}"] = gv
        return out

    if form == "admm_lagrangian":
        gd, resid = {}, {}
        for i in range(1, n + 1):
            vprev = _prev(form, data, state, i)
            z = matmul(state[f"W{i}"], vprev)
            if i < n:
                act = spec.activation(i)
                c = nw.activation_apply(act, z) - state[f"V{i}"]
                dz = nw.activation_derivative(act, z)
            else:
                c = z - state[f"V{i}"]
                dz = 1.0
            resid[i] = c
            gi = state[f"Lam{i}"] + hyper.beta_i(i) * c
            gd[i] = (gi, gi * dz)
        for i in range(1, n + 1):
            vprev = _prev(form, data, state, i)
            out[f"W{i}"] = matmul(gd[i][1], T(vprev))
            d = state[f"V{i}"] - state[f"Vbar{i}"]
            gv = -gd[i][0] + 2.0 * hyper.xi_i(i) * d
            if i < n:
                gv = gv + matmul(T(state[f"W{i + 1}"]), gd[i + 1][1])
            else:
                gv = gv + nw.loss_grad(spec.loss, state[f"V{n}"], data.labels)
            out[f"V{i}"] = gv
            out[f"Lam{i}"] = resid[i].copy()
            out[f"Vbar{i}"] = -2.0 * hyper.xi_i(i) * d
        return out

    if form == "mdlam":
        pen = {}
        for i in range(1, n + 1):
            pen[i] = state[f"v{i}"] - matmul(state[f"W{i}"], _prev(form, data, state, i))
        for i in range(1, n + 1):
            out[f"W{i}"] = -g * matmul(pen[i], T(_prev(form, data, state, i)))
            gv = g * pen[i]
            if i == n:
                gv = gv + nw.loss_grad(spec.loss, state[f"v{n}"], data.labels)
            out[f"v{i}"] = gv
            if i < n:
                out[f"u{i}"] = -g * matmul(T(state[f"W{i + 1}"]), pen[i + 1])
        return out

    raise ValueError(f"unknown form {form!r}")


def grad_block(form, spec, data, hyper, state, block_id):
    """Partial gradient of all smooth terms with respect to one block.

    Smooth regularizers attached to the block are included; an ``ell1``
    term and the mdlam box indicator are not.
    """
    if block_id not in block_names(form, spec):
        raise KeyError(f"form {form!r} has no block {block_id!r}")
    gr = coupling_gradients(form, spec, data, hyper, state)[block_id]
    reg = block_regularizer(form, spec, hyper, block_id)
    if reg is not None and reg.smooth:
        gr = gr + nw.regularizer_grad(reg, state[block_id])
    return gr


def _box_tangent_entries(g, u, lo, hi, tol=BOX_TOL):
    at_hi = np.abs(u - hi) <= tol
    at_lo = np.abs(u - lo) <= tol
    # drop components whose descent direction -g points out of the box
    keep = ~((at_hi & (g < 0)) | (at_lo & (g > 0)) | (at_hi & at_lo))
    return np.where(keep, g, 0.0)


def block_dist_sq(form, spec, hyper, state, block_id, coupling):
    """Squared min-norm subgradient contribution of one block."""
    kind, i = parse_block(block_id)
    b = state[block_id]
    if form == "mdlam" and kind == "u":
        lo, hi = box_bounds(spec, hyper, state, i)
        e = _box_tangent_entries(coupling, b, lo, hi)
        return float(np.sum(e * e))
    reg = block_regularizer(form, spec, hyper, block_id)
    if reg is None:
        return float(np.sum(coupling * coupling))
    e = nw.regularizer_min_norm_entries(reg, b, coupling)
    return float(np.sum(e * e))


def block_dists(form, spec, data, hyper, state):
    if form == "mdlam":
        check_box(spec, hyper, state)
    grads = coupling_gradients(form, spec, data, hyper, state)
    return {b: block_dist_sq(form, spec, hyper, state, b, grads[b])
            for b in block_names(form, spec)}


def subgrad_dist(form, spec, data, hyper, state):
    """dist(0, df(X)) assembled blockwise from min-norm subgradients."""
    parts = block_dists(form, spec, data, hyper, state)
    return float(np.sqrt(sum(parts[b] for b in block_names(form, spec))))


def forward_state(form, spec, data, hyper, weights):
    """State whose auxiliary blocks come from a forward pass of ``weights``,
    so every penalty term starts at zero."""
    n = spec.depth
    st = ParamState(form, {f"W{i}": np.array(weights[i - 1], dtype=np.float64)
                           for i in range(1, n + 1)})
    prev = data.inputs
    for i in range(1, n + 1):
        act = spec.activation(i)
        z = matmul(st[f"W{i}"], prev)
        if form == "two_split_fnn":
            st[f"V{i}"] = nw.activation_apply(act, z)
        elif form == "three_split_fnn":
            st[f"U{i}"] = z
            st[f"V{i}"] = nw.activation_apply(act, z)
        elif form == "three_split_resnet":
            st[f"U{i}"] = z
            st[f"V{i}"] = embed_rows(prev, spec.dims[i]) + nw.activation_apply(act, z)
        elif form == "admm_lagrangian":
            st[f"V{i}"] = nw.activation_apply(act, z) if i < n else z
            st[f"Lam{i}"] = np.zeros_like(z)
            st[f"Vbar{i}"] = st[f"V{i}"].copy()
        elif form == "mdlam":
            st[f"v{i}"] = z
            if i < n:
                st[f"u{i}"] = nw.activation_apply(act, z)
        else:
            raise ValueError(f"unknown form {form!r}")
        prev = st[f"u{i}"] if form == "mdlam" and i < n else st.blocks.get(f"V{i}")
    return st


def init_state(form, spec, data, hyper, rng, scale=0.1):
    """Gaussian weights (std ``scale``) and forward-pass auxiliaries."""
    weights = [gaussian_fill(rng, spec.dims[i], spec.dims[i - 1], scale)
               for i in range(1, spec.depth + 1)]
    return forward_state(form, spec, data, hyper, weights)


def random_state(form, spec, data, hyper, rng, scale=1.0):
    """Every block drawn independently; mdlam ``u`` is placed inside its box."""
    st = ParamState(form)
    for b in block_names(form, spec):
        st[b] = gaussian_fill(rng, *block_shape(form, spec, data, b), scale)
    if form == "mdlam":
        for i in range(1, spec.depth):
            lo, hi = box_bounds(spec, hyper, st, i)
            st[f"u{i}"] = lo + (hi - lo) * (0.5 + 0.4 * np.tanh(st[f"u{i}"]))
    return st
