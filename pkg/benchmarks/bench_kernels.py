"""Time the compiled kernels against their pure-Python twins.

    python benchmarks/bench_kernels.py [--repeat 5]

Each kernel runs on the same inputs under both backends; the outputs are
compared bit for bit before any timing is reported.
"""
import argparse
import timeit

import numpy as np

from amrate import _pykernels

try:
    from amrate import _kernels
except ImportError:
    _kernels = None


def _spd(rng, n):
    a = rng.standard_normal((n, n))
    return a @ a.T + n * np.eye(n)


def cases(rng):
    out = []
    for n in (8, 32, 64):
        a = rng.standard_normal((n, n))
        b = rng.standard_normal((n, 48))
        out.append((f"matmul {n}x{n} @ {n}x48", "matmul", (a, b)))
    for n in (8, 32, 64):
        out.append((f"cholesky_solve n={n}", "cholesky_solve",
                    (_spd(rng, n), rng.standard_normal((n, 4)), 1e-12)))
    out.append(("toy gd p=4, 1e5 steps", "toy_iterate", (0, 4.0, 0.1, 0.0, 1.0, 100000)))
    out.append(("toy prox p=3, 1e4 steps", "toy_iterate", (1, 3.0, 0.1, 0.0, 1.0, 10000)))
    return out


def best_time(fn, args, repeat):
    timer = timeit.Timer(lambda: fn(*args))
    number, _ = timer.autorange()
    return min(timer.repeat(repeat=repeat, number=number)) / number


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    if _kernels is None:
        print("compiled extension not built; only the Python kernels are available")
    rng = np.random.default_rng(args.seed)
    print(f"{'kernel':28s} {'python':>12s} {'compiled':>12s} {'speedup':>9s}  identical")
    for label, name, inputs in cases(rng):
        py = getattr(_pykernels, name)
        t_py = best_time(py, inputs, args.repeat)
        if _kernels is None:
            print(f"{label:28s} {t_py * 1e6:10.1f}us {'-':>12s} {'-':>9s}  -")
            continue
        cc = getattr(_kernels, name)
        same = np.array_equal(np.asarray(py(*inputs)), np.asarray(cc(*inputs)))
        t_cc = best_time(cc, inputs, args.repeat)
        print(f"{label:28s} {t_py * 1e6:10.1f}us {t_cc * 1e6:10.1f}us "
              f"{t_py / t_cc:8.1f}x  {'yes' if same else 'NO'}")


if __name__ == "__main__":
    main()
