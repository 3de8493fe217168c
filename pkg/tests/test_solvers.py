import numpy as np
import pytest

from amrate import diagnostics as dg
from amrate import network as nw
from amrate import objectives as ob
from amrate import solvers as sv
from amrate.numerics import RandomSource
from amrate.synthetic import small_instance

KINDS = list(sv.KIND_FORM)


def _run(kind, spec, data, hyper=None, seed=0, **cfg):
    hyper = hyper or ob.Hyperparams()
    config = sv.SolverConfig(kind, **cfg)
    init = ob.init_state(config.form, spec, data, hyper, RandomSource(seed).spawn(1))
    return sv.run(kind, spec, data, hyper, config, init, RandomSource(seed))


@pytest.mark.parametrize("kind", KINDS)
def test_zero_data_is_a_fixed_point(kind):
    spec = nw.NetworkSpec([2, 3, 1], ["tanh", "identity"])
    data = nw.DataSet(np.zeros((2, 5)), np.zeros((1, 5)))
    hyper = ob.Hyperparams()
    form = sv.KIND_FORM[kind]
    init = ob.ParamState(form, {b: np.zeros(ob.block_shape(form, spec, data, b))
                                for b in ob.block_names(form, spec)})
    res = sv.run(kind, spec, data, hyper, sv.SolverConfig(kind, max_iter=5), init)
    assert res.reason == "dist_tol"
    assert res.trace.f == [0.0] and res.trace.dist == [0.0]


def _linear_problem(noise):
    rng = np.random.default_rng(0)
    x = rng.standard_normal((3, 10))
    y = rng.standard_normal((2, 3)) @ x + noise * rng.standard_normal((2, 10))
    return nw.NetworkSpec([3, 2], ["identity"]), nw.DataSet(x, y)


@pytest.mark.parametrize("noise", [0.0, 0.3])
def test_bcd2_matches_least_squares_oracle(noise):
    spec, data = _linear_problem(noise)
    # min over V of a/2 |V - Y|^2 + b/2 |V - W X|^2 is ab/(2(a+b)) |Y - W X|^2,
    # so the optimum is that factor times the least-squares residual
    a, b = 1.0 / data.n, 1.0
    w_ls, *_ = np.linalg.lstsq(data.inputs.T, data.labels.T, rcond=None)
    resid = float(np.sum((data.labels - w_ls.T @ data.inputs) ** 2))
    f_opt = a * b / (2 * (a + b)) * resid
    res = _run("bcd2", spec, data, ob.Hyperparams(lam=0.0), max_iter=200)
    assert abs(res.trace.f[-1] - f_opt) <= 1e-6
    assert res.trace.dist[-1] < 1e-8
    assert res.reason == "dist_tol"


@pytest.mark.parametrize("kind", ["bcd2", "bcd3", "bcd3_resnet"])
@pytest.mark.parametrize("seed", [0, 1])
def test_monotone_families(kind, seed):
    spec, data = small_instance(seed, noise=0.05)
    res = _run(kind, spec, data, seed=seed, max_iter=300)
    f = res.trace.f_array
    assert np.all(np.diff(f) <= 1e-12)
    cert = dg.check_A1(res.trace, 1)
    assert cert.holds_after_k0 and cert.k0_hat == 0 and cert.c1_hat > 0


def test_monotone_with_ell1_weights():
    spec = nw.NetworkSpec([2, 4, 1], ["tanh", "identity"],
                          weight_regs=nw.Regularizer("ell1", 0.01))
    _, data = small_instance(0, noise=0.05)
    for kind in ("bcd2", "bcd3", "bcd3_resnet"):
        f = _run(kind, spec, data, max_iter=150).trace.f_array
        assert np.all(np.diff(f) <= 1e-12), kind


@pytest.mark.parametrize("kind", KINDS)
def test_deterministic(kind):
    spec, data = small_instance(2, noise=0.05)
    a = _run(kind, spec, data, seed=2, max_iter=40).trace
    b = _run(kind, spec, data, seed=2, max_iter=40).trace
    assert a.f == b.f and a.dist == b.dist and a.block_diffs == b.block_diffs


@pytest.mark.parametrize("kind", KINDS)
def test_trace_shape(kind):
    spec, data = small_instance(1)
    res = _run(kind, spec, data, max_iter=25)
    tr = res.trace
    assert len(tr) <= 26
    assert tr.k == list(range(len(tr)))
    assert all(d >= 0 for d in tr.dist)
    assert set(tr.blocks()) == set(ob.block_names(sv.KIND_FORM[kind], spec))
    assert tr.meta["kind"] == kind and tr.meta["seed"] == 0


def test_mdlam_states_stay_feasible():
    # weight decay pulls the solution away from zero loss, so the box binds
    spec = nw.NetworkSpec([2, 4, 1], ["tanh", "identity"],
                          weight_regs=nw.Regularizer("squared_frobenius", 0.5))
    _, data = small_instance(0, noise=0.1)
    hyper = ob.Hyperparams(eps=0.05)
    active = 0
    for n in range(1, 16):
        st = _run("mdlam", spec, data, hyper, max_iter=n).state
        ob.check_box(spec, hyper, st, tol=1e-12)
        lo, hi = ob.box_bounds(spec, hyper, st, 1)
        active += int(np.sum(np.isclose(st["u1"], lo, rtol=0, atol=1e-12)
                             | np.isclose(st["u1"], hi, rtol=0, atol=1e-12)))
    assert active > 0


def test_admm_vbar_tracks_v_exactly():
    spec, data = small_instance(0, noise=0.05)
    hyper = ob.Hyperparams()
    for n in (1, 2, 7):
        st = _run("admm", spec, data, hyper, max_iter=n).state
        for i in range(1, spec.depth + 1):
            d = st[f"V{i}"] - st[f"Vbar{i}"]
            assert hyper.xi_i(i) * float(np.sum(d * d)) == 0.0


def test_mdlam_two_step_certificate_on_small_network():
    spec, data = small_instance(0)
    res = _run("mdlam", spec, data, max_iter=200)
    cert = dg.check_A1(res.trace, 2)
    assert cert.holds_after_k0
    assert all(k < 10 for k in cert.violations)
    assert cert.k0_hat <= 10
    assert cert.c1_hat is dg.Bound.UNBOUNDED or cert.c1_hat > 0


def test_sweep_order():
    assert sv.sweep_order("bcd2", 2) == ["V2", "W2", "V1", "W1"]
    assert sv.sweep_order("bcd3", 2, "forward") == ["V1", "U1", "W1", "V2", "U2", "W2"]
    assert sv.sweep_order("mdlam", 2) == ["v2", "W2", "u1", "v1", "W1"]


def test_config_validation():
    with pytest.raises(ValueError):
        sv.SolverConfig("sgd")
    for kw in ({"max_iter": 0}, {"prox_alpha": 0.0}, {"backtrack_factor": 1.0},
               {"stop_dist_tol": -1.0}, {"order": "random"}):
        with pytest.raises(ValueError):
            sv.SolverConfig("bcd2", **kw)
    assert sv.SolverConfig("admm").form == "admm_lagrangian"
    assert sv.SolverConfig("bcd2").digest() != sv.SolverConfig("bcd2", max_iter=5).digest()


def test_run_rejects_mismatched_inputs():
    spec, data = small_instance()
    hyper = ob.Hyperparams()
    init = ob.init_state("two_split_fnn", spec, data, hyper, RandomSource(0))
    with pytest.raises(ValueError):
        sv.run("bcd3", spec, data, hyper, sv.SolverConfig("bcd2"), init)
    with pytest.raises(ValueError):
        sv.run("bcd3", spec, data, hyper, sv.SolverConfig("bcd3"), init)
    md = ob.init_state("mdlam", spec, data, hyper, RandomSource(0))
    md["u1"] = md["u1"] + 1.0
    with pytest.raises(ob.InfeasibleStateError):
        sv.run("mdlam", spec, data, hyper, sv.SolverConfig("mdlam"), md)


def test_divergence_carries_partial_trace():
    spec = nw.NetworkSpec([2, 1], ["identity"])
    data = nw.DataSet(np.full((2, 3), 1e200), np.zeros((1, 3)))
    hyper = ob.Hyperparams()
    init = ob.init_state("two_split_fnn", spec, data, hyper, RandomSource(0))
    with pytest.raises(sv.DivergenceError) as info:
        sv.run("bcd2", spec, data, hyper, sv.SolverConfig("bcd2"), init)
    assert len(info.value.trace) == 0


def test_sink_sees_every_record():
    spec, data = small_instance()
    seen = []
    hyper = ob.Hyperparams()
    cfg = sv.SolverConfig("bcd2", max_iter=5)
    init = ob.init_state("two_split_fnn", spec, data, hyper, RandomSource(0))
    res = sv.run("bcd2", spec, data, hyper, cfg, init,
                 sink=lambda tr, i: seen.append((tr.k[i], tr.f[i])))
    assert seen == list(zip(res.trace.k, res.trace.f))


def test_wall_time_only_when_requested():
    spec, data = small_instance()
    assert all(w is None for w in _run("bcd2", spec, data, max_iter=3).trace.wall_nanos)
    timed = _run("bcd2", spec, data, max_iter=3, record_wall_time=True).trace.wall_nanos
    assert all(isinstance(w, int) for w in timed)
