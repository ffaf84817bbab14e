"""Random synthetic plants and shared data sets for the tests."""

import numpy as np

from ddsynth.basis import parse_library
from ddsynth.data import DataSet, Experiment, InputSignal, PlantModel, Run, collect

# nonlinear candidates; "{i}" and "{j}" are replaced by variable indices
NONLINEAR_POOL = ("x{i}^2", "x{i}*x{j}", "sin(x{i})", "x{i}^3", "tanh(x{i})", "cos(x{i}) - 1")


def scalar_discrete_data():
    """x+ = 2x + u sampled at (x, u) = (1, 0), (2, 1)."""
    lib = parse_library("x1", 1)
    return DataSet(np.array([[0.0, 1.0]]), np.array([[1.0, 2.0]]), np.array([[1.0, 2.0]]),
                   np.array([[2.0, 5.0]]), "discrete", lib)


def scalar_continuous_data():
    """dx/dt = x + u sampled at (x, u) = (1, 0), (1, 1)."""
    lib = parse_library("x1", 1)
    return DataSet(np.array([[0.0, 1.0]]), np.array([[1.0, 1.0]]), np.array([[1.0, 1.0]]),
                   np.array([[1.0, 2.0]]), "continuous", lib)


def random_library(rng, n, s):
    """Coordinate-prefix library with s - n distinct nonlinear entries."""
    entries = [f"x{i + 1}" for i in range(n)]
    seen = set()
    while len(entries) < s:
        tmpl = NONLINEAR_POOL[rng.integers(len(NONLINEAR_POOL))]
        i, j = rng.integers(1, n + 1, size=2)
        if "{j}" in tmpl and i == j:
            continue
        e = tmpl.format(i=i, j=j)
        if e not in seen:
            seen.add(e)
            entries.append(e)
    return parse_library("; ".join(entries), n)


def random_plant(rng, n, s, m, mode="discrete", cancellable=True, scale=0.8):
    """Plant with random linear part and, if ``cancellable``, nonlinear columns in im B."""
    lib = random_library(rng, n, s)
    B = rng.standard_normal((n, m))
    A_lin = scale * rng.standard_normal((n, n))
    if cancellable:
        A_nl = B @ rng.standard_normal((m, s - n))
    else:
        A_nl = rng.standard_normal((n, s - n))
    return PlantModel(lib, np.hstack([A_lin, A_nl]), B, mode)


def rich_experiment(rng, n, N, h=None, radius=0.5, amplitude=0.5):
    """N one-sample runs from random initial states with random inputs."""
    runs = [Run(tuple(rng.uniform(-radius, radius, n)), InputSignal("random", seed=int(rng.integers(2**31)),
                                                                     amplitude=amplitude), 1)
            for _ in range(N)]
    return Experiment(tuple(runs), h)


def random_data(rng, n, s, m, mode="discrete", cancellable=True, extra=2, min_cond=1e-4):
    """Random plant plus data whose stack [Z0; U0] is well conditioned.

    Nearly collinear libraries (sin, tanh and x on a small range) are
    redrawn; they are a data-quality issue, not what these tests exercise.
    """
    h = 0.01 if mode == "continuous" else None
    while True:
        plant = random_plant(rng, n, s, m, mode, cancellable)
        data = collect(plant, rich_experiment(rng, n, s + m + extra, h, radius=1.5))
        sv = np.linalg.svd(np.vstack([data.Z0, data.U0]), compute_uv=False)
        if sv[-1] >= min_cond * sv[0]:
            return plant, data


def controllable_pair(rng, n, m):
    while True:
        A = rng.standard_normal((n, n))
        B = rng.standard_normal((n, m))
        C = np.hstack([np.linalg.matrix_power(A, k) @ B for k in range(n)])
        if np.linalg.svd(C, compute_uv=False).min() > 1e-3:
            return A, B
