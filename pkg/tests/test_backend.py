import os
import subprocess
import sys

import numpy as np
import pytest

from amrate import _backend, _pykernels

_kernels = pytest.importorskip("amrate._kernels")


def _spd(rng, n):
    m = rng.standard_normal((n, n))
    return m @ m.T + n * np.eye(n)


def test_default_backend_is_compiled_when_built():
    assert _backend.name == "compiled"


def test_matmul_bit_identical():
    rng = np.random.default_rng(0)
    for n in (1, 3, 17, 40):
        a = rng.standard_normal((n, n + 2))
        b = rng.standard_normal((n + 2, 5))
        assert np.array_equal(_pykernels.matmul(a, b), np.asarray(_kernels.matmul(a, b)))


def test_cholesky_bit_identical():
    rng = np.random.default_rng(1)
    for n in (1, 4, 16, 33):
        a = _spd(rng, n)
        b = rng.standard_normal((n, 3))
        assert np.array_equal(_pykernels.cholesky_solve(a, b, 1e-12),
                              np.asarray(_kernels.cholesky_solve(a, b, 1e-12)))


def test_cholesky_both_reject_indefinite():
    a = np.array([[1.0, 2.0], [2.0, 1.0]])
    b = np.ones((2, 1))
    with pytest.raises(_pykernels.KernelSingularError):
        _pykernels.cholesky_solve(a, b, 1e-12)
    with pytest.raises(_kernels.KernelSingularError):
        _kernels.cholesky_solve(a, b, 1e-12)


@pytest.mark.parametrize("args", [
    (0, 2.0, 0.25, 0.0, 1.0, 50),
    (0, 4.0, 0.1, 0.0, -0.8, 2000),
    (1, 1.0, 0.3, 0.0, 1.0, 10),
    (1, 3.0, 0.2, 0.0, 2.0, 500),
    (2, 2.0, 0.25, 0.05, 1.0, 60),
])
def test_toy_iterate_bit_identical(args):
    assert np.array_equal(_pykernels.toy_iterate(*args),
                          np.asarray(_kernels.toy_iterate(*args)))


def _backend_in_subprocess(value):
    env = dict(os.environ, AMRATE_BACKEND=value)
    return subprocess.run([sys.executable, "-c", "import amrate; print(amrate.backend)"],
                          env=env, capture_output=True, text=True)


def test_env_var_forces_python_backend():
    out = _backend_in_subprocess("python")
    assert out.returncode == 0
    assert out.stdout.strip() == "python"


def test_env_var_rejects_unknown_value():
    out = _backend_in_subprocess("fortran")
    assert out.returncode != 0
    assert "AMRATE_BACKEND" in out.stderr
