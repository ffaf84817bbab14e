"""Plant simulation, experiment collection and data-matrix diagnostics."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Literal, Sequence

import numpy as np

from .basis import FunctionLibrary, evaluate
from .exceptions import DivergenceError, ModelError

TimeMode = Literal["discrete", "continuous"]

DIVERGENCE_BOUND = 1e9
DEFAULT_RTOL = 1e-10


@dataclass(frozen=True)
class PlantModel:
    """Ground-truth plant x+ = A Z(x) + B u, used for data generation and oracles only."""

    library: FunctionLibrary
    A: np.ndarray
    B: np.ndarray
    mode: TimeMode = "discrete"

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        B = np.asarray(self.B, dtype=float)
        if B.ndim == 1:
            B = B.reshape(-1, 1)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        n, s = self.library.n, self.library.s
        if A.shape != (n, s):
            raise ModelError(f"A must be {n}x{s} to match the library, got {A.shape}")
        if B.shape[0] != n:
            raise ModelError(f"B must have {n} rows, got {B.shape}")
        if self.mode not in ("discrete", "continuous"):
            raise ModelError(f"unknown time mode {self.mode!r}")
        sv = np.linalg.svd(B, compute_uv=False)
        if B.shape[1] > n or sv.min() <= DEFAULT_RTOL * max(sv.max(), 1.0) * max(B.shape):
            raise ModelError("B must have full column rank")

    @property
    def n(self) -> int:
        return self.library.n

    @property
    def m(self) -> int:
        return self.B.shape[1]

    def vector_field(self, x, u) -> np.ndarray:
        return self.A @ evaluate(self.library, x) + self.B @ np.asarray(u, dtype=float)


def _guard(x: np.ndarray) -> np.ndarray:
    if not np.all(np.isfinite(x)) or np.linalg.norm(x) > DIVERGENCE_BOUND:
        raise DivergenceError(f"state norm exceeded {DIVERGENCE_BOUND:g}")
    return x


def rk4_step(f: Callable[[np.ndarray, np.ndarray], np.ndarray], x, u, h: float) -> np.ndarray:
    """One classical Runge-Kutta step with the input held constant over the step."""
    k1 = f(x, u)
    k2 = f(x + 0.5 * h * k1, u)
    k3 = f(x + 0.5 * h * k2, u)
    k4 = f(x + h * k3, u)
    return x + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)


def simulate(
    f: Callable[[np.ndarray, np.ndarray], np.ndarray],
    x0,
    inputs: np.ndarray,
    mode: TimeMode,
    h: float | None = None,
) -> np.ndarray:
    """Iterate ``x+ = f(x, u)`` or integrate ``dx/dt = f(x, u)`` with RK4.

    Returns an array of shape (n, len(inputs) + 1) whose first column is x0.
    """
    x = _guard(np.asarray(x0, dtype=float).copy())
    if mode == "continuous" and (h is None or not h > 0):
        raise ModelError("continuous-time simulation needs a step h > 0")
    traj = [x]
    for u in inputs:
        x = f(x, u) if mode == "discrete" else rk4_step(f, x, u, h)
        traj.append(_guard(x))
    return np.array(traj).T


def simulate_plant(plant: PlantModel, x0, inputs, h: float | None = None) -> np.ndarray:
    inputs = _input_array(inputs, plant.m)
    if not np.all(np.isfinite(inputs)):
        raise ModelError("inputs must be finite")
    return simulate(plant.vector_field, x0, inputs, plant.mode, h)


def _input_array(inputs, m: int) -> np.ndarray:
    arr = np.asarray(inputs, dtype=float)
    if arr.size == 0:
        return np.zeros((0, m))
    return arr.reshape(-1, m)


@dataclass(frozen=True)
class InputSignal:
    """Input applied during one run: constant, piecewise (one value per sample) or random."""

    kind: Literal["constant", "piecewise", "random"]
    value: Sequence[float] | None = None
    values: Sequence[Sequence[float]] | None = None
    seed: int = 0
    amplitude: float = 1.0

    def sample(self, samples: int, m: int) -> np.ndarray:
        if self.kind == "constant":
            v = np.zeros(m) if self.value is None else np.asarray(self.value, dtype=float).reshape(m)
            return np.tile(v, (samples, 1))
        if self.kind == "piecewise":
            vals = np.asarray(self.values, dtype=float).reshape(-1, m)
            if len(vals) < samples:
                raise ModelError(f"piecewise input has {len(vals)} values for {samples} samples")
            return vals[:samples]
        if self.kind == "random":
            rng = np.random.default_rng(self.seed)
            return rng.uniform(-self.amplitude, self.amplitude, size=(samples, m))
        raise ModelError(f"unknown input kind {self.kind!r}")


@dataclass(frozen=True)
class Run:
    x0: Sequence[float]
    input: InputSignal
    samples: int


@dataclass(frozen=True)
class Experiment:
    runs: Sequence[Run]
    h: float | None = None


@dataclass(frozen=True)
class DataSet:
    """Data matrices U0 (m x N), X0 (n x N), Z0 (s x N), X1 (n x N)."""

    U0: np.ndarray
    X0: np.ndarray
    Z0: np.ndarray
    X1: np.ndarray
    mode: TimeMode
    library: FunctionLibrary = field(repr=False)

    def __post_init__(self):
        for name in ("U0", "X0", "Z0", "X1"):
            arr = np.atleast_2d(np.asarray(getattr(self, name), dtype=float))
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        N = self.X0.shape[1]
        if N < 1:
            raise ModelError("data set needs at least one sample")
        if any(a.shape[1] != N for a in (self.U0, self.Z0, self.X1)):
            raise ModelError("U0, X0, Z0 and X1 must have the same number of columns")
        if self.X0.shape[0] != self.library.n or self.X1.shape[0] != self.library.n:
            raise ModelError("state rows do not match the library dimension")
        if self.Z0.shape[0] != self.library.s:
            raise ModelError("Z0 rows do not match the library size")

    @classmethod
    def from_samples(cls, library: FunctionLibrary, X0, U0, X1, mode: TimeMode) -> "DataSet":
        X0 = np.atleast_2d(np.asarray(X0, dtype=float))
        return cls(np.atleast_2d(U0), X0, evaluate(library, X0), np.atleast_2d(X1), mode, library)

    @property
    def n(self) -> int:
        return self.X0.shape[0]

    @property
    def m(self) -> int:
        return self.U0.shape[0]

    @property
    def s(self) -> int:
        return self.Z0.shape[0]

    @property
    def N(self) -> int:
        return self.X0.shape[1]

    @property
    def fingerprint(self) -> str:
        return self.library.fingerprint()


def collect(plant: PlantModel, exp: Experiment) -> DataSet:
    """Run every experiment and stack the samples into a DataSet.

    Discrete time records successor states. Continuous time records the exact
    vector field at each visited sample; the states themselves come from RK4
    with step ``exp.h``.
    """
    if not exp.runs:
        raise ModelError("experiment has no runs")
    if plant.mode == "continuous" and (exp.h is None or not exp.h > 0):
        raise ModelError("continuous-time experiments need a step h > 0")
    X0, U0, X1 = [], [], []
    for run in exp.runs:
        if run.samples < 1:
            raise ModelError("each run needs at least one sample")
        if len(run.x0) != plant.n:
            raise ModelError(f"initial state must have {plant.n} entries")
        inputs = run.input.sample(run.samples, plant.m)
        traj = simulate_plant(plant, run.x0, inputs, exp.h)
        states = traj[:, :-1]
        X0.append(states)
        U0.append(inputs.T)
        if plant.mode == "discrete":
            X1.append(traj[:, 1:])
        else:
            X1.append(plant.A @ evaluate(plant.library, states) + plant.B @ inputs.T)
    return DataSet.from_samples(plant.library, np.hstack(X0), np.hstack(U0), np.hstack(X1), plant.mode)


def estimate_derivatives(traj, h: float) -> np.ndarray:
    """Second-order finite-difference derivative of a uniformly sampled trajectory.

    ``traj`` has shape (n, N) with N >= 3. Interior columns use central
    differences; the end columns use one-sided three-point stencils.
    """
    X = np.atleast_2d(np.asarray(traj, dtype=float))
    if X.shape[1] < 3:
        raise ModelError("derivative estimation needs at least 3 samples")
    if not h > 0:
        raise ModelError("step h must be positive")
    return np.gradient(X, h, axis=1, edge_order=2)


def matrix_rank(M: np.ndarray, rtol: float = DEFAULT_RTOL) -> int:
    M = np.atleast_2d(M)
    if M.size == 0:
        return 0
    sv = np.linalg.svd(M, compute_uv=False)
    if sv.size == 0 or sv[0] == 0.0:
        return 0
    return int(np.sum(sv > rtol * sv[0] * max(M.shape)))


@dataclass
class RankReport:
    rank_Z0: int
    rank_stack: int
    s: int
    m: int
    N: int

    @property
    def attainable_nonempty(self) -> bool:
        return self.rank_Z0 == self.s

    @property
    def data_equals_model(self) -> bool:
        return self.rank_stack == self.s + self.m

    @property
    def note(self) -> str:
        if self.data_equals_model:
            return ("[Z0; U0] has full row rank: a data-attainable desired closed loop exists "
                    "if and only if the control problem is solvable")
        return ("[Z0; U0] is rank deficient: the data-attainable set is a strict subset of "
                "the model-attainable set, so infeasibility does not prove unsolvability")

    def to_dict(self) -> dict:
        return {
            "rank_Z0": self.rank_Z0,
            "rank_Z0_U0": self.rank_stack,
            "s": self.s,
            "m": self.m,
            "N": self.N,
            "attainable_set_nonempty": self.attainable_nonempty,
            "data_equals_model_attainable": self.data_equals_model,
            "note": self.note,
        }


def check_rank(data: DataSet, rtol: float = DEFAULT_RTOL) -> RankReport:
    stack = np.vstack([data.Z0, data.U0])
    return RankReport(matrix_rank(data.Z0, rtol), matrix_rank(stack, rtol), data.s, data.m, data.N)
