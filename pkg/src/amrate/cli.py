"""Command-line runner: ``amrate train | diagnose | toy | report``.

Exit codes: 0 ok, 1 usage or input error, 2 solver divergence,
3 the sufficient-decrease check failed.

A run directory holds ``trace.jsonl``, ``manifest.json``, ``state/<block>.txt``
(train only) and, after ``diagnose``, ``diagnosis.json``.
"""
import argparse
import csv
import io
import json
import math
import os
import sys
import time

import numpy as np

from . import __version__, backend
from . import diagnostics as dg
from . import network as nw
from . import objectives as ob
from . import solvers as so
from .numerics import RandomSource, write_matrix
from .synthetic import SyntheticTask, generate_synthetic
from .toys import ITERATORS, StabilityError, ToyIterator, ToyProblem, run_toy
from .trace import JsonlSink, TraceFormatError, read_trace, to_json, write_trace

EXIT_OK, EXIT_USAGE, EXIT_DIVERGED, EXIT_VIOLATION = 0, 1, 2, 3

REPORT_COLUMNS = ["run", "solver", "form", "j", "c1_hat", "regime", "rate",
                  "theta_hat", "iterations", "final_f", "final_dist"]

_HYPER_FIELDS = ("gamma", "lam", "beta", "xi", "eps")
_SOLVER_FIELDS = ("max_iter", "prox_alpha", "backtrack_factor", "stop_dist_tol",
                  "record_block_diffs", "order", "record_wall_time")
_TOP_FIELDS = {"solver", "form", "dims", "activations", "loss", "weight_regs",
               "state_regs", "data", "seed", "init_scale", "out",
               *_HYPER_FIELDS, *_SOLVER_FIELDS}


class ConfigError(ValueError):
    def __init__(self, fieldname, message):
        super().__init__(f"config field '{fieldname}': {message}")
        self.field = fieldname


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage, which is our divergence code
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _warn(msg):
    print(f"warning: {msg}", file=sys.stderr)


def _fail(msg, code=EXIT_USAGE):
    print(f"error: {msg}", file=sys.stderr)
    return code


def _write_json(path, obj):
    with open(path, "w") as fh:
        fh.write(to_json(obj) + "\n")


# -- configuration ---------------------------------------------------------

def _field(cfg, name, default, kind=None):
    val = cfg.get(name, default)
    if kind is float:
        if isinstance(val, bool) or not isinstance(val, (int, float)):
            raise ConfigError(name, f"expected a number, got {val!r}")
        if not math.isfinite(val):
            raise ConfigError(name, f"must be finite, got {val!r}")
        return float(val)
    if kind is int:
        if isinstance(val, bool) or not isinstance(val, int):
            raise ConfigError(name, f"expected an integer, got {val!r}")
        return val
    return val


def _build(name, ctor, **kw):
    try:
        return ctor(**kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(name, str(exc)) from None


def read_csv_dataset(path, d_in, d_out):
    """Header row, then ``d_in`` feature columns and ``d_out`` label columns per sample."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if len(rows) < 2:
        raise ValueError(f"{path}: need a header row and at least one sample")
    width = d_in + d_out
    if len(rows[0]) != width:
        raise ValueError(f"{path}: header has {len(rows[0])} columns, expected {width}")
    body = []
    for n, row in enumerate(rows[1:], 2):
        if not row:
            continue
        if len(row) != width:
            raise ValueError(f"{path}:{n}: expected {width} values, got {len(row)}")
        try:
            body.append([float(v) for v in row])
        except ValueError:
            raise ValueError(f"{path}:{n}: non-numeric value") from None
    a = np.array(body, dtype=np.float64)
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{path}: non-finite values")
    return nw.DataSet(a[:, :d_in].T.copy(), a[:, d_in:].T.copy())


def load_run_config(cfg, base_dir="."):
    """Validate a parsed config object; returns a dict of ready-made parts."""
    if not isinstance(cfg, dict):
        raise ConfigError("<root>", "expected a JSON object")
    for key in cfg:
        if key not in _TOP_FIELDS:
            raise ConfigError(key, "unknown field")
    for key in ("solver", "dims"):
        if key not in cfg:
            raise ConfigError(key, "required field is missing")
    kind = cfg["solver"]
    if kind not in so.KIND_FORM:
        raise ConfigError("solver", f"must be one of {sorted(so.KIND_FORM)}, got {kind!r}")
    form = cfg.get("form", so.KIND_FORM[kind])
    if form != so.KIND_FORM[kind]:
        raise ConfigError("form", f"solver {kind!r} runs form {so.KIND_FORM[kind]!r}, got {form!r}")

    dims = cfg["dims"]
    if not isinstance(dims, list) or len(dims) < 2 or not all(
            isinstance(d, int) and not isinstance(d, bool) and d > 0 for d in dims):
        raise ConfigError("dims", f"expected a list of at least two positive integers, got {dims!r}")
    depth = len(dims) - 1
    acts = cfg.get("activations", ["tanh"] * (depth - 1) + ["identity"])
    spec = _build("activations", nw.NetworkSpec, dims=dims, activations=acts,
                  loss=cfg.get("loss", "half_squared"))
    for name in ("weight_regs", "state_regs"):
        if name in cfg:
            regs = cfg[name]
            if not isinstance(regs, (list, dict)):
                raise ConfigError(name, "expected a regularizer object or a list of them")
            if isinstance(regs, dict):
                regs = [regs] * depth
            try:
                setattr(spec, name, spec._regs(regs, name))
            except (TypeError, ValueError) as exc:
                raise ConfigError(name, str(exc)) from None

    hkw = {}
    for name in _HYPER_FIELDS:
        if name not in cfg:
            continue
        val = cfg[name]
        if name in ("beta", "xi") and isinstance(val, list):
            if len(val) != depth:
                raise ConfigError(name, f"need {depth} per-layer values, got {len(val)}")
            hkw[name] = [_field({name: v}, name, None, float) for v in val]
        else:
            hkw[name] = _field(cfg, name, None, float)
    for name, val in hkw.items():
        try:
            ob.Hyperparams(**{name: val})
        except ValueError as exc:
            raise ConfigError(name, str(exc)) from None
    hyper = ob.Hyperparams(**hkw)

    skw = {"kind": kind}
    for name in _SOLVER_FIELDS:
        if name not in cfg:
            continue
        if name in ("record_block_diffs", "record_wall_time"):
            if not isinstance(cfg[name], bool):
                raise ConfigError(name, f"expected true or false, got {cfg[name]!r}")
            skw[name] = cfg[name]
        elif name == "max_iter":
            skw[name] = _field(cfg, name, None, int)
        elif name == "order":
            skw[name] = cfg[name]
        else:
            skw[name] = _field(cfg, name, None, float)
    for name, val in skw.items():
        if name == "kind":
            continue
        try:
            so.SolverConfig(kind=kind, **{name: val})
        except ValueError as exc:
            raise ConfigError(name, str(exc)) from None
    config = so.SolverConfig(**skw)

    seed = _field(cfg, "seed", 0, int)
    if not 0 <= seed < 2**64:
        raise ConfigError("seed", f"must be an unsigned 64-bit integer, got {seed}")
    init_scale = _field(cfg, "init_scale", 0.1, float)
    if init_scale < 0:
        raise ConfigError("init_scale", f"must be >= 0, got {init_scale}")

    data_cfg = cfg.get("data", {})
    if not isinstance(data_cfg, dict):
        raise ConfigError("data", "expected an object")
    source = data_cfg.get("source", "synthetic")
    if source == "synthetic":
        for key in data_cfg:
            if key not in ("source", "n", "noise", "seed"):
                raise ConfigError(f"data.{key}", "unknown field")
        n = _field(data_cfg, "n", 8, int)
        noise = _field(data_cfg, "noise", 0.0, float)
        dseed = _field(data_cfg, "seed", seed, int)
        task = _build("data", SyntheticTask, teacher=spec, noise=noise, n=n)
        data = generate_synthetic(task, RandomSource(dseed))
        data_desc = {"source": "synthetic", "n": n, "noise": noise, "seed": dseed}
    elif source == "csv":
        for key in data_cfg:
            if key not in ("source", "path"):
                raise ConfigError(f"data.{key}", "unknown field")
        if not isinstance(data_cfg.get("path"), str):
            raise ConfigError("data.path", "csv source needs a path")
        path = os.path.join(base_dir, data_cfg["path"])
        try:
            data = read_csv_dataset(path, dims[0], dims[-1])
        except (OSError, ValueError) as exc:
            raise ConfigError("data.path", str(exc)) from None
        data_desc = {"source": "csv", "path": data_cfg["path"]}
    else:
        raise ConfigError("data.source", f"must be synthetic or csv, got {source!r}")
    if spec.loss == "logistic" and not np.all(np.abs(data.labels) == 1):
        raise ConfigError("loss", "logistic loss needs labels in {-1, +1}")

    return {"kind": kind, "form": form, "spec": spec, "hyper": hyper, "config": config,
            "seed": seed, "init_scale": init_scale, "data": data, "data_desc": data_desc,
            "out": cfg.get("out")}


# -- commands --------------------------------------------------------------

def cmd_train(args):
    try:
        with open(args.config) as fh:
            raw = json.load(fh)
    except OSError as exc:
        return _fail(f"cannot read config: {exc}")
    except json.JSONDecodeError as exc:
        return _fail(f"config is not valid JSON: {exc}")
    try:
        run = load_run_config(raw, os.path.dirname(os.path.abspath(args.config)))
    except ConfigError as exc:
        return _fail(str(exc))
    out = args.out or run["out"]
    if not out:
        return _fail("no output directory: pass --out or set 'out' in the config")
    os.makedirs(os.path.join(out, "state"), exist_ok=True)

    spec, hyper, config, data = run["spec"], run["hyper"], run["config"], run["data"]
    base = RandomSource(run["seed"])
    init = ob.init_state(run["form"], spec, data, hyper, base.spawn(1), scale=run["init_scale"])
    meta = {"source": "solver", "kind": run["kind"], "form": run["form"],
            "seed": run["seed"], "config_digest": config.digest()}
    manifest = {"command": "train", "solver": run["kind"], "form": run["form"],
                "seed": run["seed"], "config_digest": config.digest(), "config": raw,
                "data": run["data_desc"], "backend": backend, "version": __version__}
    t0 = time.perf_counter_ns()
    code = EXIT_OK
    with open(os.path.join(out, "trace.jsonl"), "w") as fh:
        sink = JsonlSink(fh, meta)
        try:
            res = so.run(run["kind"], spec, data, hyper, config, init, base, sink=sink)
            trace, reason, state = res.trace, res.reason, res.state
        except so.DivergenceError as exc:
            trace, reason, state = exc.trace, "divergence", None
            manifest["error"] = str(exc)
            code = EXIT_DIVERGED
    manifest.update({
        "termination": reason,
        "iterations": trace.k[-1] if len(trace) else 0,
        "final_f": trace.f[-1] if len(trace) else None,
        "final_dist": trace.dist[-1] if len(trace) else None,
        "wall_seconds": (time.perf_counter_ns() - t0) / 1e9,
        "created_unix": time.time(),
    })
    if state is not None:
        for name in ob.block_names(run["form"], spec):
            write_matrix(os.path.join(out, "state", f"{name}.txt"), state[name])
    _write_json(os.path.join(out, "manifest.json"), manifest)
    if code == EXIT_DIVERGED:
        print(f"error: {manifest['error']}", file=sys.stderr)
    return code


def diagnose_trace(trace, j=1, fstar=None, theta=None, alpha=None, kl_c=None):
    """Everything the diagnose command reports, as a plain dict."""
    f = trace.f_array
    fstar_src = "flag"
    if fstar is None:
        fstar, fstar_src = float(np.min(f)), "min_f"
    gaps = np.maximum(f - fstar, 0.0)
    cert = dg.check_A1(trace, j)
    rate = dg.fit_rate(gaps, j)
    doc = {"j": j, "fstar": fstar, "fstar_source": fstar_src, "records": len(trace),
           "A1": cert.as_dict()}
    if alpha is not None:
        doc["A2"] = dg.check_A2(trace, j, alpha).as_dict()
    doc["rate"] = rate.as_dict()
    doc["theta_hat"] = dg.estimate_kl_exponent(trace, fstar).as_dict()
    chi = {}
    for block in trace.blocks():
        series = trace.block_series(block)
        if series.size >= 3:
            chi[block] = dg.check_chi_ratio(series).as_dict()
    doc["chi"] = chi
    if theta is not None:
        if 0 < theta < 1:
            k1 = rate.k1_hat or 0
            holds, c_min = dg.verify_envelope(gaps, j, theta, k1)
            doc["envelope"] = {"theta": theta, "k1": k1, "holds": holds,
                               "C_min": dg._ser(c_min)}
        if kl_c is not None:
            kl = dg.KLParams(theta=theta, c=kl_c, fstar=fstar)
            checks, margin = dg.check_lemma1(trace, kl, j, cert)
            doc["lemma1"] = {"theta": theta, "c": kl_c, "eligible": len(checks),
                             "failures": [k for k, ok in checks if not ok],
                             "worst_margin": dg._ser(margin)}
    return doc, cert


def cmd_diagnose(args):
    if args.j < 1:
        return _fail(f"--j must be a positive integer, got {args.j}")
    if args.alpha is not None and not 0 < args.alpha <= 0.5:
        return _fail(f"--alpha must lie in (0, 1/2], got {args.alpha}")
    if args.theta is not None and not 0 <= args.theta < 1:
        return _fail(f"--theta must lie in [0, 1), got {args.theta}")
    if args.kl_c is not None and (args.theta is None or not args.kl_c > 0):
        return _fail("--kl-c needs --theta and a positive value")
    try:
        trace = read_trace(args.trace)
    except TraceFormatError as exc:
        return _fail(str(exc))
    doc, cert = diagnose_trace(trace, args.j, args.fstar, args.theta, args.alpha, args.kl_c)
    doc = {"trace": os.path.basename(args.trace), **doc}
    out = args.out or os.path.join(os.path.dirname(os.path.abspath(args.trace)), "diagnosis.json")
    if os.path.isdir(out):
        out = os.path.join(out, "diagnosis.json")
    _write_json(out, doc)
    rate = doc["rate"]
    print(f"A1 j={args.j}: {'holds' if cert.holds_after_k0 else 'violated'} "
          f"(c1_hat={doc['A1']['c1_hat']}, k0_hat={cert.k0_hat}, "
          f"violations={len(cert.violations)})")
    print(f"rate: {rate['regime']} eta_hat={rate['eta_hat']} "
          f"exponent_hat={rate['sublinear_exponent_hat']}")
    return EXIT_OK if cert.holds_after_k0 else EXIT_VIOLATION


def cmd_toy(args):
    try:
        problem = ToyProblem(args.p)
        iterator = ToyIterator(args.iterator, args.t, args.delta)
        trace = run_toy(problem, iterator, args.x0, args.steps)
    except (StabilityError, ValueError) as exc:
        return _fail(str(exc))
    os.makedirs(args.out, exist_ok=True)
    write_trace(os.path.join(args.out, "trace.jsonl"), trace)
    _write_json(os.path.join(args.out, "manifest.json"), {
        "command": "toy", "solver": f"toy:{args.iterator}", "form": f"abs_power_p{args.p:g}",
        **trace.meta, "iterations": trace.k[-1], "final_f": trace.f[-1],
        "final_dist": trace.dist[-1], "backend": backend, "version": __version__})
    return EXIT_OK


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return "%.17g" % v
    return str(v)


def report_rows(dirs):
    rows = []
    for d in dirs:
        mpath = os.path.join(d, "manifest.json")
        try:
            with open(mpath) as fh:
                man = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            _warn(f"{d}: unreadable manifest ({exc}); skipped")
            continue
        row = {"run": os.path.basename(os.path.normpath(d)), "solver": man.get("solver"),
               "form": man.get("form"), "iterations": man.get("iterations"),
               "final_f": man.get("final_f"), "final_dist": man.get("final_dist")}
        try:
            with open(os.path.join(d, "diagnosis.json")) as fh:
                diag = json.load(fh)
        except (OSError, json.JSONDecodeError):
            _warn(f"{d}: no diagnosis.json; diagnostic columns left blank")
            diag = None
        if diag is not None:
            rate = diag.get("rate", {})
            row.update({
                "j": diag.get("j"),
                "c1_hat": diag.get("A1", {}).get("c1_hat"),
                "regime": rate.get("regime"),
                "rate": rate.get("eta_hat") if rate.get("regime") == "r_linear"
                else rate.get("sublinear_exponent_hat"),
                "theta_hat": diag.get("theta_hat", {}).get("theta_hat"),
            })
        rows.append(row)
    return rows


def render_csv(rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(REPORT_COLUMNS)
    for r in rows:
        w.writerow([_fmt(r.get(c)) for c in REPORT_COLUMNS])
    return buf.getvalue()


def render_table(rows):
    def short(v):
        if isinstance(v, float):
            return f"{v:.4g}"
        return "" if v is None else str(v)
    cells = [REPORT_COLUMNS] + [[short(r.get(c)) for c in REPORT_COLUMNS] for r in rows]
    widths = [max(len(row[i]) for row in cells) for i in range(len(REPORT_COLUMNS))]
    lines = ["  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip() for row in cells]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def cmd_report(args):
    rows = report_rows(args.dirs)
    text = render_csv(rows)
    if args.out:
        with open(args.out, "w", newline="") as fh:
            fh.write(text)
        sys.stdout.write(render_table(rows))
    else:
        sys.stdout.write(text)
        sys.stderr.write(render_table(rows))
    return EXIT_OK


def build_parser():
    p = _Parser(prog="amrate", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"amrate {__version__} ({backend})")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("train", help="run a solver from a JSON config")
    t.add_argument("--config", required=True)
    t.add_argument("--out", help="run directory (overrides the config's 'out')")
    t.set_defaults(func=cmd_train)

    d = sub.add_parser("diagnose", help="check sufficient decrease and fit rates on a trace")
    d.add_argument("--trace", required=True)
    d.add_argument("--j", type=int, default=1)
    d.add_argument("--fstar", type=float, help="limit value (default: the smallest f in the trace)")
    d.add_argument("--theta", type=float, help="KL exponent for the envelope check")
    d.add_argument("--kl-c", type=float, dest="kl_c", help="KL constant c; with --theta runs the key-inequality check")
    d.add_argument("--alpha", type=float, help="also check the A2 condition with this alpha")
    d.add_argument("--out", help="diagnosis file or directory (default: next to the trace)")
    d.set_defaults(func=cmd_diagnose)

    y = sub.add_parser("toy", help="write a trace of a one-dimensional |x|^p iteration")
    y.add_argument("--p", type=float, required=True)
    y.add_argument("--iterator", choices=ITERATORS, default="gradient_descent")
    y.add_argument("--t", type=float, required=True)
    y.add_argument("--delta", type=float, default=0.0)
    y.add_argument("--x0", type=float, default=1.0)
    y.add_argument("--steps", type=int, default=100)
    y.add_argument("--out", required=True)
    y.set_defaults(func=cmd_toy)

    r = sub.add_parser("report", help="tabulate run directories as CSV")
    r.add_argument("dirs", nargs="+")
    r.add_argument("--out", help="CSV path (default: stdout, table on stderr)")
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
