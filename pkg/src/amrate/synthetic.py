"""Teacher-student synthetic tasks and the standard experiment instances."""
from dataclasses import dataclass

import numpy as np

from . import network as nw
from .numerics import RandomSource, gaussian_fill, matmul


@dataclass
class SyntheticTask:
    teacher: nw.NetworkSpec
    noise: float = 0.0
    n: int = 8

    def __post_init__(self):
        if self.noise < 0:
            raise ValueError(f"noise must be >= 0, got {self.noise}")
        if int(self.n) < 1:
            raise ValueError(f"sample count must be positive, got {self.n}")


def teacher_weights(spec, rng):
    return [gaussian_fill(rng, spec.dims[i], spec.dims[i - 1], 1.0 / np.sqrt(spec.dims[i - 1]))
            for i in range(1, spec.depth + 1)]


def forward(spec, weights, x):
    out = x
    for i, w in enumerate(weights, 1):
        out = nw.activation_apply(spec.activation(i), matmul(w, out))
    return out


def generate_synthetic(task, rng, return_weights=False):
    """Inputs ~ N(0, 1), labels = teacher(inputs) + noise.

    For the logistic loss the labels are the signs of that output (0 -> +1).
    """
    spec = task.teacher
    weights = teacher_weights(spec, rng)
    x = rng.normal((spec.dims[0], int(task.n)))
    y = forward(spec, weights, x)
    if task.noise > 0:
        y = y + task.noise * rng.normal(y.shape)
    if spec.loss == "logistic":
        y = np.where(y >= 0, 1.0, -1.0)
    data = nw.DataSet(x, y)
    return (data, weights) if return_weights else data


def small_spec(activation="tanh"):
    """The N=2, dims 2-4-1 network used for gradient and criticality checks."""
    return nw.NetworkSpec([2, 4, 1], [activation, "identity"])


def small_instance(seed=0, noise=0.0, n=8):
    spec = small_spec()
    data = generate_synthetic(SyntheticTask(spec, noise, n), RandomSource(seed))
    return spec, data


def suite_spec():
    """Standard suite network: N=3, widths <= 16, tanh hidden, linear output."""
    return nw.NetworkSpec([4, 12, 8, 2], ["tanh", "tanh", "identity"])


def suite_instance(seed=0, noise=0.05, n=48):
    spec = suite_spec()
    data = generate_synthetic(SyntheticTask(spec, noise, n), RandomSource(seed))
    return spec, data
