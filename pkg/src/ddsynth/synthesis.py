"""Controller synthesis from input-state data.

Every routine follows the same three steps: describe the desired closed-loop
matrices, intersect them with what the data can reach (``[F; I] = [X1; Z0] G``),
and read the gain off the interpolant as ``K = U0 G``. Because
``X1 = A Z0 + B U0`` holds for the unknown plant, ``A + B K = X1 G`` follows
without ever touching ``A`` or ``B``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, fields
from typing import Any

import numpy as np
import scipy.linalg

from . import lmi
from .basis import ZERO, FunctionLibrary, Pow, Var, derivative_expr, evaluate, jacobian
from .data import DataSet, matrix_rank
from .exceptions import (
    ClassMViolation,
    Infeasible,
    ModelError,
    MonotonicityViolation,
    NotAttainable,
    PreconditionError,
    RankDeficient,
    SynthesisError,
)
from .lmi import MatrixVar, Problem, block, eq, nsd, psd
from .results import DiagonalD, ExactMatch, LyapunovP, PassivityPair, SynthesisResult
from .verification import class_M_membership, spectral_radius

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SynthesisOptions:
    eq_tol: float = 1e-8
    eig_tol: float = 1e-9
    epsilon: float = 1e-6
    attain_tol: float = 1e-8
    rank_rtol: float = 1e-10
    seed: int = 0
    dump_lmi: str | None = None

    def lmi_options(self) -> lmi.SolveOptions:
        return lmi.SolveOptions(eq_tol=self.eq_tol, eig_tol=self.eig_tol)


DEFAULT_OPTIONS = SynthesisOptions()


# -- objectives ----------------------------------------------------------------

@dataclass(frozen=True)
class LinearizedStabilization:
    rho: float = 1.0
    kind = "linearized_stabilization"


@dataclass(frozen=True)
class NonlinearityCancellation:
    rho: float = 1.0
    kind = "nonlinearity_cancellation"


@dataclass(frozen=True)
class DiagonalStabilization:
    kind = "diagonal_stabilization"


@dataclass(frozen=True)
class OscillatorDesign:
    mu_lo: float
    mu_hi: float
    kind = "oscillator"


@dataclass(frozen=True)
class ModelReference:
    A_bar: np.ndarray
    B_bar: np.ndarray
    s_bar: int | None = None
    reference_library: str | None = None
    kind = "model_reference"


@dataclass(frozen=True)
class Passivation:
    M: Any
    m_r: int = 1
    input_map: Any = None
    kind = "passivation"


@dataclass(frozen=True)
class PassivationLinear:
    m_r: int = 1
    input_map: Any = None
    kind = "passivation_linear"


OBJECTIVES = {cls.kind: cls for cls in (LinearizedStabilization, NonlinearityCancellation, DiagonalStabilization,
                                        OscillatorDesign, ModelReference, Passivation, PassivationLinear)}

_MATRIX_FIELDS = {"A_bar", "B_bar", "input_map"}


def objective_from_dict(spec: dict):
    """Build an objective from its JSON form ``{"kind": ..., <parameters>}``.

    ``M`` may be a single matrix or a list of candidate matrices tried in order.
    """
    spec = dict(spec)
    kind = spec.pop("kind", None)
    if kind not in OBJECTIVES:
        raise ModelError(f"unknown objective kind {kind!r}; expected one of {sorted(OBJECTIVES)}")
    cls = OBJECTIVES[kind]
    names = {f.name for f in fields(cls)}
    unknown = set(spec) - names
    if unknown:
        raise ModelError(f"unknown parameters for {kind}: {sorted(unknown)}")
    args = {}
    for k, v in spec.items():
        if k in _MATRIX_FIELDS and v is not None:
            v = np.atleast_2d(np.asarray(v, dtype=float))
        args[k] = v
    obj = cls(**args)
    _validate(obj)
    return obj


def _validate(obj) -> None:
    if isinstance(obj, (LinearizedStabilization, NonlinearityCancellation)) and not obj.rho >= 1:
        raise ModelError("decay rate rho must be >= 1")
    if isinstance(obj, OscillatorDesign) and not 0 < obj.mu_lo <= obj.mu_hi:
        raise ModelError("oscillator bounds must satisfy 0 < mu_lo <= mu_hi")


def synthesize(objective, data: DataSet, opts: SynthesisOptions = DEFAULT_OPTIONS) -> SynthesisResult:
    """Dispatch an objective to its synthesis routine."""
    _validate(objective)
    lib = data.library
    if isinstance(objective, LinearizedStabilization):
        return synth_linearized_stabilization(data, lib, objective.rho, opts)
    if isinstance(objective, NonlinearityCancellation):
        return synth_nonlinearity_cancellation(data, lib, objective.rho, opts)
    if isinstance(objective, DiagonalStabilization):
        return synth_diagonal_stabilization(data, lib, opts)
    if isinstance(objective, OscillatorDesign):
        return synth_oscillator(data, lib, objective.mu_lo, objective.mu_hi, opts)
    if isinstance(objective, ModelReference):
        return synth_model_reference(data, lib, objective.A_bar, objective.B_bar, objective.s_bar,
                                     objective.reference_library, opts)
    if isinstance(objective, Passivation):
        return synth_passivation(data, lib, objective.M, objective.m_r, objective.input_map, opts)
    if isinstance(objective, PassivationLinear):
        return synth_passivation_linear(data, objective.m_r, objective.input_map, opts)
    raise ModelError(f"unsupported objective {objective!r}")


# -- helpers -------------------------------------------------------------------

def _identity_chain(data: DataSet, G: np.ndarray, K: np.ndarray, F: np.ndarray) -> dict:
    s = data.s
    return {
        "Z0G_minus_I": float(np.max(np.abs(data.Z0 @ G - np.eye(s)))),
        "X1G_minus_F": float(np.max(np.abs(data.X1 @ G - F))),
        "U0G_minus_K": float(np.max(np.abs(data.U0 @ G - K))),
    }


def _require_prefix(lib: FunctionLibrary, what: str) -> None:
    if not lib.coordinate_prefix:
        raise PreconditionError(f"{what} needs a library whose first n entries are x1..xn")


def _require_full_row_rank(data: DataSet, opts: SynthesisOptions) -> None:
    r = matrix_rank(data.Z0, opts.rank_rtol)
    if r < data.s:
        raise RankDeficient("Z0", r, data.s)


def _solve(problem: Problem, opts: SynthesisOptions, what: str) -> dict[str, np.ndarray]:
    if opts.dump_lmi:
        problem.dump(opts.dump_lmi)
    out = lmi.solve(problem, opts.lmi_options())
    if out.status == "infeasible":
        raise Infeasible(f"{what}: {out.message}", out.residuals.to_dict() if out.residuals else {"margin": out.margin})
    if out.status != "feasible":
        detail = out.residuals.to_dict() if out.residuals else {}
        raise Infeasible(f"{what}: solver inconclusive ({out.message})", detail)
    return out.values


def _right_inverse(Z0: np.ndarray) -> np.ndarray:
    return Z0.T @ np.linalg.inv(Z0 @ Z0.T)


# -- target-driven synthesis ---------------------------------------------------

def attainability_membership(F: np.ndarray, data: DataSet, F_r: np.ndarray | None = None):
    """Least-squares interpolant for ``[F; I] = [X1; Z0] G``.

    Returns ``(G, residual)`` with the residual the max-norm defect. With
    ``F_r`` the open-system columns ``[F_r; 0] = [X1; Z0] G_r`` are solved as
    well and ``(G, G_r, residual)`` is returned.
    """
    F = np.atleast_2d(np.asarray(F, dtype=float))
    stack = np.vstack([data.X1, data.Z0])
    rhs = np.vstack([F, np.eye(data.s)])
    G = np.linalg.lstsq(stack, rhs, rcond=None)[0]
    res = float(np.max(np.abs(stack @ G - rhs)))
    if F_r is None:
        return G, res
    F_r = np.atleast_2d(np.asarray(F_r, dtype=float))
    rhs_r = np.vstack([F_r, np.zeros((data.s, F_r.shape[1]))])
    G_r = np.linalg.lstsq(stack, rhs_r, rcond=None)[0]
    res = max(res, float(np.max(np.abs(stack @ G_r - rhs_r))))
    return G, G_r, res


def synth_from_target(F_star, data: DataSet, F_r_star=None, opts: SynthesisOptions = DEFAULT_OPTIONS,
                      objective: str = "target") -> SynthesisResult:
    """Gain realising a prescribed data-attainable closed loop (minimum-norm interpolant)."""
    if F_r_star is None:
        G, res = attainability_membership(F_star, data)
        G_r = None
    else:
        G, G_r, res = attainability_membership(F_star, data, F_r_star)
    if res > opts.attain_tol:
        raise NotAttainable("target closed loop is not attainable from the data", res)
    K = data.U0 @ G
    F = data.X1 @ G
    residuals = _identity_chain(data, G, K, F)
    residuals["attainability"] = res
    result = SynthesisResult(objective, K, G, F, ExactMatch(res, np.asarray(F_star, dtype=float),
                                                            None if F_r_star is None else np.asarray(F_r_star, dtype=float)),
                             residuals=residuals)
    if G_r is not None:
        result.G_r = G_r
        result.K_r = data.U0 @ G_r
        result.F_r_star = data.X1 @ G_r
        residuals["Z0Gr"] = float(np.max(np.abs(data.Z0 @ G_r)))
    return result


def synth_model_reference(data: DataSet, lib: FunctionLibrary, A_bar, B_bar, s_bar: int | None = None,
                          reference_library: str | None = None,
                          opts: SynthesisOptions = DEFAULT_OPTIONS) -> SynthesisResult:
    """Exact matching of a reference model ``x+ = A_bar Zbar(x) + B_bar r``.

    ``Zbar`` must be the first ``s_bar`` entries of the plant library.
    """
    A_bar = np.atleast_2d(np.asarray(A_bar, dtype=float))
    B_bar = np.atleast_2d(np.asarray(B_bar, dtype=float))
    n, s = data.n, data.s
    s_bar = A_bar.shape[1] if s_bar is None else int(s_bar)
    if A_bar.shape != (n, s_bar) or s_bar > s:
        raise PreconditionError(f"A_bar must be {n}x{s_bar} with s_bar <= s={s}")
    if B_bar.shape[0] != n:
        raise PreconditionError(f"B_bar must have {n} rows")
    if B_bar.shape[1] > data.m:
        raise PreconditionError("reference input dimension must not exceed the plant input dimension")
    if reference_library is not None:
        from .basis import parse_library

        ref = parse_library(reference_library, n)
        if ref.basis != lib.basis[:ref.s] or ref.s != s_bar:
            raise PreconditionError("reference library must be a prefix of the plant library")
    F_star = np.hstack([A_bar, np.zeros((n, s - s_bar))])
    result = synth_from_target(F_star, data, B_bar, opts, objective="model_reference")
    result.params["s_bar"] = s_bar
    return result


# -- LMI-based objectives ------------------------------------------------------

def synth_linearized_stabilization(data: DataSet, lib: FunctionLibrary, rho: float = 1.0,
                                   opts: SynthesisOptions = DEFAULT_OPTIONS) -> SynthesisResult:
    """Stabilise the linearisation at the origin with decay factor ``rho``.

    Solves ``[[P, sqrt(rho) X1 Y], [., P]] > 0``, ``Z'(0) P = Z0 Y`` and
    recovers ``G = Z0^+ + (I - Z0^+ Z0) Y P^{-1} [I 0]``.
    """
    _require_prefix(lib, "linearized stabilization")
    _require_full_row_rank(data, opts)
    n, N, s = data.n, data.N, data.s
    Zp = jacobian(lib, np.zeros(n))
    P = MatrixVar("P", (n, n), "symmetric")
    Y = MatrixVar("Y", (N, n))
    r = np.sqrt(rho)
    X1Y = data.X1 @ Y
    cons = [
        psd(block([[P, r * X1Y], [r * X1Y.T, P]]), opts.epsilon, "lyapunov"),
        psd(P, opts.epsilon, "P"),
        eq(Zp @ P - data.Z0 @ Y, 0.0, "jacobian"),
    ]
    vals = _solve(Problem([P, Y], cons), opts, "linearized stabilization")
    Pv, Yv = vals["P"], vals["Y"]
    Zr = _right_inverse(data.Z0)
    left_inv = np.hstack([np.eye(n), np.zeros((n, s - n))])
    G = Zr + (np.eye(N) - Zr @ data.Z0) @ Yv @ np.linalg.solve(Pv, left_inv)
    K = data.U0 @ G
    F = data.X1 @ G
    lin = F @ Zp
    radius = spectral_radius(lin)
    bound = rho ** -0.5 + 1e-6
    if radius > bound:
        raise SynthesisError(f"recovered closed loop has spectral radius {radius:.6g} > {bound:.6g}")
    residuals = _identity_chain(data, G, K, F)
    residuals["spectral_radius_linearization"] = radius
    return SynthesisResult("linearized_stabilization", K, G, F, LyapunovP(Pv, rho, "dual"),
                           params={"rho": rho}, residuals=residuals)


def synth_nonlinearity_cancellation(data: DataSet, lib: FunctionLibrary, rho: float = 1.0,
                                    opts: SynthesisOptions = DEFAULT_OPTIONS) -> SynthesisResult:
    """Cancel every nonlinear column and make the remaining linear part Schur stable.

    Convexified with ``Y1 = G1 P``: ``[[P, sqrt(rho) X1 Y1], [., P]] > 0``,
    ``Z0 Y1 = [P; 0]``, ``X1 G2 = 0``, ``Z0 G2 = [0; I]``. The returned
    certificate is ``P^{-1}``, which satisfies ``rho Fbar' P Fbar - P < 0``.
    """
    _require_prefix(lib, "nonlinearity cancellation")
    n, N, s = data.n, data.N, data.s
    P = MatrixVar("P", (n, n), "symmetric")
    Y1 = MatrixVar("Y1", (N, n))
    r = np.sqrt(rho)
    X1Y = data.X1 @ Y1
    variables = [P, Y1]
    cons = [
        psd(block([[P, r * X1Y], [r * X1Y.T, P]]), opts.epsilon, "lyapunov"),
        psd(P, opts.epsilon, "P"),
        eq(data.Z0 @ Y1 - block([[P], [np.zeros((s - n, n))]]) if s > n else data.Z0 @ Y1 - P, 0.0, "interpolation_linear"),
    ]
    if s > n:
        G2 = MatrixVar("G2", (N, s - n))
        variables.append(G2)
        cons += [
            eq(data.X1 @ G2, 0.0, "cancel"),
            eq(data.Z0 @ G2, np.vstack([np.zeros((n, s - n)), np.eye(s - n)]), "interpolation_nonlinear"),
        ]
    vals = _solve(Problem(variables, cons), opts, "nonlinearity cancellation")
    Pv = vals["P"]
    G1 = np.linalg.solve(Pv.T, vals["Y1"].T).T
    G = np.hstack([G1, vals["G2"]]) if s > n else G1
    K = data.U0 @ G
    F = data.X1 @ G
    P_lyap = np.linalg.inv(Pv)
    P_lyap = 0.5 * (P_lyap + P_lyap.T)
    F_lin = F[:, :n]
    residuals = _identity_chain(data, G, K, F)
    residuals["nonlinear_columns"] = float(np.max(np.abs(F[:, n:]), initial=0.0))
    residuals["spectral_radius_linear"] = spectral_radius(F_lin)
    # substitute back into the printed (non-convex) constraint set
    lyap = rho * F_lin.T @ P_lyap @ F_lin - P_lyap
    residuals["lyapunov_max_eig"] = float(np.max(np.linalg.eigvalsh(0.5 * (lyap + lyap.T))))
    if residuals["nonlinear_columns"] > 1e-6:
        raise SynthesisError(f"nonlinear columns not cancelled: {residuals['nonlinear_columns']:.3e}")
    if residuals["lyapunov_max_eig"] >= 0 or residuals["spectral_radius_linear"] >= rho ** -0.5 + 1e-9:
        raise SynthesisError("recovered closed loop failed the Lyapunov substitution check")
    return SynthesisResult("nonlinearity_cancellation", K, G, F, LyapunovP(P_lyap, rho, "primal"),
                           params={"rho": rho}, residuals=residuals)


def _depends_only_on(lib: FunctionLibrary, row: int, index: int) -> bool:
    return all(derivative_expr(lib, row, j) == ZERO for j in range(lib.n) if j != index)


def check_monotone_prefix(data: DataSet, lib: FunctionLibrary, samples: int = 401) -> dict:
    """Sample-check that entry i of the library is a strictly monotone phi_i(x_i) with phi_i(0) = 0.

    Each phi_i is probed on a symmetric grid covering the sampled data range.
    """
    n = lib.n
    if lib.s < n:
        raise PreconditionError("library shorter than the state dimension")
    report = {}
    for i in range(n):
        if not _depends_only_on(lib, i, i):
            raise MonotonicityViolation(f"entry {i + 1} ({lib.basis[i]}) must depend on x{i + 1} only")
        span = max(1.0, float(np.max(np.abs(data.X0[i]))))
        grid = np.zeros((n, samples))
        grid[i] = np.linspace(-span, span, samples)
        vals = evaluate(lib, grid)[i]
        at0 = float(evaluate(lib, np.zeros(n))[i])
        if abs(at0) > 1e-12:
            raise MonotonicityViolation(f"entry {i + 1} ({lib.basis[i]}) does not vanish at 0 (value {at0:.3g})")
        d = np.diff(vals)
        if not (np.all(d > 0) or np.all(d < 0)):
            raise MonotonicityViolation(f"entry {i + 1} ({lib.basis[i]}) is not strictly monotone on [-{span:g}, {span:g}]")
        report[str(lib.basis[i])] = "increasing" if d[0] > 0 else "decreasing"
    return report


def synth_diagonal_stabilization(data: DataSet, lib: FunctionLibrary,
                                 opts: SynthesisOptions = DEFAULT_OPTIONS) -> SynthesisResult:
    """Continuous-time design of ``dx/dt = M phi(x)`` with ``M`` diagonally stable.

    Convexified with ``E = D^{-1}``, ``W = G1 E``:
    ``sym(X1 W) < 0``, ``E > 0`` diagonal, ``Z0 W = [E; 0]``, ``X1 G2 = 0``,
    ``Z0 G2 = [0; I]``.
    """
    if data.mode != "continuous":
        raise PreconditionError("diagonal stabilization is a continuous-time design")
    monotone = check_monotone_prefix(data, lib)
    n, N, s = data.n, data.N, data.s
    W = MatrixVar("W", (N, n))
    E = MatrixVar("E", (n, n), "diagonal")
    X1W = data.X1 @ W
    variables = [W, E]
    cons = [
        nsd(0.5 * (X1W + X1W.T), opts.epsilon, "lyapunov"),
        psd(E, opts.epsilon, "E"),
        eq(data.Z0 @ W - (block([[E], [np.zeros((s - n, n))]]) if s > n else E), 0.0, "interpolation_phi"),
    ]
    if s > n:
        G2 = MatrixVar("G2", (N, s - n))
        variables.append(G2)
        cons += [
            eq(data.X1 @ G2, 0.0, "cancel"),
            eq(data.Z0 @ G2, np.vstack([np.zeros((n, s - n)), np.eye(s - n)]), "interpolation_Q"),
        ]
    vals = _solve(Problem(variables, cons), opts, "diagonal stabilization")
    Ev = np.diag(np.diag(vals["E"]))
    G1 = vals["W"] @ np.diag(1.0 / np.diag(Ev))
    G = np.hstack([G1, vals["G2"]]) if s > n else G1
    D = np.diag(1.0 / np.diag(Ev))
    K = data.U0 @ G
    F = data.X1 @ G
    M = F[:, :n]
    lyap = M.T @ D + D @ M
    residuals = _identity_chain(data, G, K, F)
    residuals["nonlinear_columns"] = float(np.max(np.abs(F[:, n:]), initial=0.0))
    residuals["lyapunov_max_eig"] = float(np.max(np.linalg.eigvalsh(lyap)))
    if residuals["lyapunov_max_eig"] > -opts.epsilon / 2:
        raise SynthesisError(f"M'D + DM max eigenvalue {residuals['lyapunov_max_eig']:.3e} above -epsilon/2")
    return SynthesisResult("diagonal_stabilization", K, G, F, DiagonalD(D, M),
                           params={"monotone": monotone}, residuals=residuals)


def oscillator_target(mu: float, s: int) -> np.ndarray:
    nu = mu * mu
    T = np.zeros((2, s))
    T[0, :3] = [1.0, 1.0, 0.0]
    T[1, :3] = [-nu, 1.0 + nu, -nu / 3.0]
    return T


def _is_vdp_prefix(lib: FunctionLibrary) -> bool:
    return lib.n == 2 and lib.s >= 3 and lib.basis[:3] == (Var(1), Var(2), Pow(Var(2), 3))


def synth_oscillator(data: DataSet, lib: FunctionLibrary, mu_lo: float, mu_hi: float,
                     opts: SynthesisOptions = DEFAULT_OPTIONS) -> SynthesisResult:
    """Shape the closed loop into a discrete Van der Pol oscillator with mu in [mu_lo, mu_hi].

    The target depends on mu only through nu = mu^2, so the program is linear
    in (nu, G) and is solved as such.
    """
    if not 0 < mu_lo <= mu_hi:
        raise PreconditionError("need 0 < mu_lo <= mu_hi")
    if not _is_vdp_prefix(lib):
        raise PreconditionError("oscillator design needs n=2 and a library starting x1; x2; x2^3")
    N, s = data.N, data.s
    nu = MatrixVar("nu", (1, 1), "symmetric", regularize=False)
    G = MatrixVar("G", (N, s))
    e2 = np.array([[0.0], [1.0]])
    row = np.zeros((1, s))
    row[0, :3] = [-1.0, 1.0, -1.0 / 3.0]
    T0 = oscillator_target(0.0, s)
    cons = [
        eq(data.X1 @ G - (T0 + e2 @ nu @ row), 0.0, "target"),
        eq(data.Z0 @ G, np.eye(s), "interpolation"),
    ]
    if mu_lo == mu_hi:
        cons.append(eq(nu, mu_lo ** 2, "mu"))
    else:
        cons += [psd(nu - mu_lo ** 2, 0.0, "mu_lo"), psd(mu_hi ** 2 - nu, 0.0, "mu_hi")]
    try:
        vals = _solve(Problem([nu, G], cons), opts, "oscillator design")
    except Infeasible as exc:
        ends = {}
        for label, mu in (("mu_lo", mu_lo), ("mu_hi", mu_hi)):
            ends[label] = attainability_membership(oscillator_target(mu, s), data)[1]
        raise Infeasible(f"{exc} (endpoint attainability residuals {ends})", ends) from None
    nu_v = float(vals["nu"][0, 0])
    mu = float(np.sqrt(max(nu_v, 0.0)))
    Gv = vals["G"]
    K = data.U0 @ Gv
    F = data.X1 @ Gv
    target = oscillator_target(mu, s)
    residuals = _identity_chain(data, Gv, K, F)
    residuals["target"] = float(np.max(np.abs(F - target)))
    return SynthesisResult("oscillator", K, Gv, F, ExactMatch(residuals["target"], target),
                           params={"mu": mu, "mu_lo": mu_lo, "mu_hi": mu_hi}, residuals=residuals)


def _input_map(data: DataSet, m_r: int, input_map) -> np.ndarray:
    if not 1 <= m_r <= data.m:
        raise PreconditionError(f"need 1 <= m_r <= m={data.m}")
    if input_map is None:
        return np.eye(data.m, m_r)
    Kr = np.atleast_2d(np.asarray(input_map, dtype=float))
    if Kr.shape != (data.m, m_r):
        raise PreconditionError(f"input_map must be {data.m}x{m_r}")
    return Kr


def _candidates(M, n: int, s: int) -> list[np.ndarray]:
    arr = np.asarray(M, dtype=float)
    if arr.ndim == 3:
        cands = list(arr)
    elif arr.ndim == 2 or arr.ndim <= 1:
        cands = [np.atleast_2d(arr)]
    else:
        raise PreconditionError("M must be a matrix or a list of matrices")
    for c in cands:
        if c.shape != (n, s):
            raise PreconditionError(f"M must be {n}x{s}, got {c.shape}")
    return cands


def synth_passivation(data: DataSet, lib: FunctionLibrary, M, m_r: int = 1, input_map=None,
                      opts: SynthesisOptions = DEFAULT_OPTIONS, class_m_samples: int = 1000) -> SynthesisResult:
    """Feedback cyclo-passivation for a given storage-gradient matrix ``M``.

    Finds G1, G2, Theta with ``Z0 [G1 G2] = [I 0]``, ``X1 G1 = Theta M`` and
    ``Theta + Theta' <= 0``. ``U0 G2 = input_map`` fixes how the external
    input enters (default: r drives the first m_r plant inputs). Several
    candidate M may be passed; the first feasible one wins.
    """
    if data.mode != "continuous":
        raise PreconditionError("passivation is a continuous-time design")
    n, N, s = data.n, data.N, data.s
    Kr = _input_map(data, m_r, input_map)
    last = None
    for Mc in _candidates(M, n, s):
        if not np.any(Mc):
            last = ClassMViolation("M is zero, the storage function would be degenerate", 0.0)
            continue
        report = class_M_membership(lib, Mc, samples=class_m_samples, seed=opts.seed)
        if not report["pass"]:
            last = ClassMViolation("M is not in class M", report["defect"])
            continue
        G1 = MatrixVar("G1", (N, s))
        G2 = MatrixVar("G2", (N, m_r))
        Th = MatrixVar("Theta", (n, n))
        cons = [
            eq(data.Z0 @ G1, np.eye(s), "interpolation"),
            eq(data.Z0 @ G2, 0.0, "output_kernel"),
            eq(data.U0 @ G2, Kr, "input_map"),
            eq(data.X1 @ G1 - Th @ Mc, 0.0, "port_hamiltonian"),
            nsd(0.5 * (Th + Th.T), 0.0, "dissipation"),
        ]
        try:
            vals = _solve(Problem([G1, G2, Th], cons), opts, "passivation")
        except Infeasible as exc:
            last = exc
            continue
        G1v, G2v, Thv = vals["G1"], vals["G2"], vals["Theta"]
        K = data.U0 @ G1v
        F = data.X1 @ G1v
        result = SynthesisResult("passivation", K, G1v, F,
                                 PassivityPair(Thv, Mc, G2v.T @ data.X1.T @ Mc),
                                 K_r=data.U0 @ G2v, G_r=G2v, F_r_star=data.X1 @ G2v,
                                 params={"m_r": m_r, "storage": "line_integral"})
        result.residuals = _identity_chain(data, G1v, K, F)
        result.residuals["Z0Gr"] = float(np.max(np.abs(data.Z0 @ G2v)))
        result.residuals["port_hamiltonian"] = float(np.max(np.abs(F - Thv @ Mc)))
        result.residuals["dissipation_max_eig"] = float(np.max(np.linalg.eigvalsh(Thv + Thv.T)))
        return result
    assert last is not None
    raise last


def synth_passivation_linear(data: DataSet, m_r: int = 1, input_map=None,
                             opts: SynthesisOptions = DEFAULT_OPTIONS) -> SynthesisResult:
    """Passivation of a linear plant (library Z(x) = x) with quadratic storage.

    Solves ``X1 Q + (X1 Q)' <= 0``, ``Z0 Q = (Z0 Q)' > 0``, ``Z0 G2 = 0`` and
    sets ``M = (Z0 Q)^{-1}``, ``G1 = Q M``. Storage ``S(x) = x' M x / 2``.
    """
    lib = data.library
    if data.mode != "continuous":
        raise PreconditionError("passivation is a continuous-time design")
    if lib.s != lib.n or not lib.coordinate_prefix:
        raise PreconditionError("linear passivation needs the library Z(x) = x")
    n, N = data.n, data.N
    Kr = _input_map(data, m_r, input_map)
    Q = MatrixVar("Q", (N, n))
    G2 = MatrixVar("G2", (N, m_r))
    Z0Q = data.Z0 @ Q
    X1Q = data.X1 @ Q
    cons = [
        eq(Z0Q - Z0Q.T, 0.0, "symmetry"),
        psd(0.5 * (Z0Q + Z0Q.T), opts.epsilon, "storage"),
        nsd(0.5 * (X1Q + X1Q.T), 0.0, "dissipation"),
        eq(data.Z0 @ G2, 0.0, "output_kernel"),
        eq(data.U0 @ G2, Kr, "input_map"),
    ]
    vals = _solve(Problem([Q, G2], cons), opts, "linear passivation")
    Qv, G2v = vals["Q"], vals["G2"]
    S = data.Z0 @ Qv
    S = 0.5 * (S + S.T)
    Mv = np.linalg.inv(S)
    Mv = 0.5 * (Mv + Mv.T)
    G1 = Qv @ Mv
    K = data.U0 @ G1
    F = data.X1 @ G1
    Theta = data.X1 @ Qv
    result = SynthesisResult("passivation_linear", K, G1, F, PassivityPair(Theta, Mv, G2v.T @ data.X1.T @ Mv),
                             K_r=data.U0 @ G2v, G_r=G2v, F_r_star=data.X1 @ G2v,
                             params={"m_r": m_r, "storage": "quadratic", "Q": Qv})
    result.residuals = _identity_chain(data, G1, K, F)
    result.residuals["Z0Gr"] = float(np.max(np.abs(data.Z0 @ G2v)))
    result.residuals["dissipation_max_eig"] = float(np.max(np.linalg.eigvalsh(Theta + Theta.T)))
    return result


# -- informativity -------------------------------------------------------------

@dataclass
class Informativity:
    certified: bool
    direction: np.ndarray | None = None
    kernel_vector: np.ndarray | None = None
    norm: float = 0.0


def certify_by_data(data: DataSet, K, tol: float = 1e-8) -> Informativity:
    """Check whether ``[I; K]`` lies in the image of ``[Z0; U0]``.

    For each vector ``(va, vb)`` of an orthonormal basis of the left kernel of
    ``[Z0; U0]`` the direction ``v = va + K' vb`` is formed; any nonzero ``v``
    means some plant consistent with the data has a different closed loop
    under ``K``.
    """
    K = np.atleast_2d(np.asarray(K, dtype=float))
    s = data.s
    stack = np.vstack([data.Z0, data.U0])
    kernel = scipy.linalg.null_space(stack.T)
    best = Informativity(True)
    for k in range(kernel.shape[1]):
        vt = kernel[:, k]
        v = vt[:s] + K.T @ vt[s:]
        nv = float(np.linalg.norm(v))
        if nv > tol and nv > best.norm:
            # fix the sign so the direction is reproducible
            j = int(np.argmax(np.abs(v)))
            sign = 1.0 if v[j] > 0 else -1.0
            best = Informativity(False, sign * v, sign * vt, nv)
    return best
