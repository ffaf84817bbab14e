"""Independent checks of synthesised controllers.

Nothing here trusts the solver: closed loops are rebuilt from ``F_star``,
certificates are re-derived from the raw data with dense linear algebra,
and Lyapunov/dissipation inequalities are sampled along states and
trajectories.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .basis import FunctionLibrary, evaluate, jacobian
from .data import DataSet, PlantModel, TimeMode, simulate
from .exceptions import ModelError, QuadratureError
from .results import DiagonalD, ExactMatch, LyapunovP, PassivityPair, SynthesisResult


@dataclass
class Check:
    name: str
    passed: bool
    margin: float
    samples: int = 1
    detail: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = {"name": self.name, "pass": bool(self.passed), "margin": float(self.margin), "samples": int(self.samples)}
        if self.detail:
            out["detail"] = self.detail
        return out


@dataclass
class VerificationReport:
    checks: list[Check] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def add(self, check: Check) -> Check:
        self.checks.append(check)
        return check

    def extend(self, other: "VerificationReport") -> None:
        self.checks.extend(other.checks)

    def __getitem__(self, name: str) -> Check:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def to_dict(self) -> dict:
        return {"checks": [c.to_dict() for c in self.checks], "pass": self.passed}


@dataclass(frozen=True)
class ClosedLoop:
    F_star: np.ndarray
    library: FunctionLibrary
    mode: TimeMode = "discrete"
    F_r_star: np.ndarray | None = None

    def __post_init__(self):
        F = np.atleast_2d(np.asarray(self.F_star, dtype=float))
        object.__setattr__(self, "F_star", F)
        if F.shape != (self.library.n, self.library.s):
            raise ModelError(f"F_star must be {self.library.n}x{self.library.s}, got {F.shape}")
        if self.F_r_star is not None:
            Fr = np.atleast_2d(np.asarray(self.F_r_star, dtype=float))
            if Fr.shape[0] != self.library.n:
                raise ModelError("F_r_star must have n rows")
            object.__setattr__(self, "F_r_star", Fr)

    @classmethod
    def from_result(cls, result: SynthesisResult, data: DataSet) -> "ClosedLoop":
        return cls(result.F_star, data.library, data.mode, result.F_r_star)

    @property
    def m_r(self) -> int:
        return 0 if self.F_r_star is None else self.F_r_star.shape[1]

    def vector_field(self, x, r) -> np.ndarray:
        out = self.F_star @ evaluate(self.library, x)
        if self.F_r_star is not None:
            out = out + self.F_r_star @ np.asarray(r, dtype=float)
        return out


RSignal = Callable[[float], np.ndarray] | np.ndarray | None


def _reference_samples(r: RSignal, steps: int, m_r: int, h: float | None) -> np.ndarray:
    if m_r == 0 or r is None:
        return np.zeros((steps, m_r))
    if callable(r):
        dt = 1.0 if h is None else h
        return np.array([np.atleast_1d(r(k * dt)) for k in range(steps)], dtype=float).reshape(steps, m_r)
    arr = np.asarray(r, dtype=float).reshape(-1, m_r)
    if len(arr) < steps:
        raise ModelError(f"reference signal has {len(arr)} samples, need {steps}")
    return arr[:steps]


def simulate_closed_loop(cl: ClosedLoop, x0, steps: int, h: float | None = None, r: RSignal = None) -> np.ndarray:
    """Trajectory of ``x+ = F* Z(x) + F_r* r`` (RK4 with held r in continuous time).

    ``r`` is a callable of time (step index times h, or the step index in
    discrete time) or an array of per-step samples. Returns shape (n, steps+1).
    """
    rs = _reference_samples(r, steps, cl.m_r, h)
    return simulate(cl.vector_field, x0, rs, cl.mode, h)


def spectral_radius(M, continuous: bool = False) -> float:
    """Largest eigenvalue modulus, or largest real part when ``continuous``."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.shape[0] != M.shape[1]:
        raise ModelError(f"spectral radius needs a square matrix, got {M.shape}")
    lam = np.linalg.eigvals(M)
    return float(np.max(lam.real)) if continuous else float(np.max(np.abs(lam)))


def sample_ball(n: int, count: int, radius: float, rng: np.random.Generator) -> np.ndarray:
    """Uniform samples from the closed n-ball, shape (n, count)."""
    g = rng.standard_normal((n, count))
    g /= np.linalg.norm(g, axis=0, keepdims=True)
    return g * radius * rng.uniform(0, 1, count) ** (1.0 / n)


def lyapunov_decrease_check(cl: ClosedLoop, cert, samples: int = 10_000, radius: float = 1.0, seed: int = 0,
                            local: bool = False, sweep: int = 12) -> Check:
    """Sampled Lyapunov decrease for a quadratic or diagonal certificate.

    Discrete time with :class:`LyapunovP`: ``rho V(F* Z(x)) <= V(x)`` with
    ``V(x) = x' P x``. With ``local`` the check is repeated on balls shrinking
    by halves from ``radius`` and the largest passing radius is reported.
    Continuous time with :class:`DiagonalD`: ``phi' D M phi <= 0`` with
    ``phi`` the first n library entries.
    """
    rng = np.random.default_rng(seed)
    n = cl.library.n
    if isinstance(cert, DiagonalD):
        X = sample_ball(n, samples, radius, rng)
        phi = evaluate(cl.library, X)[:n]
        vdot = np.einsum("ik,ij,jk->k", phi, cert.D @ cert.M, phi)
        scale = np.maximum(np.sum(phi * phi, axis=0), 1e-300)
        worst = float(np.max(vdot / scale))
        return Check("lyapunov_decrease", worst <= 1e-12, -worst, samples, {"kind": "diagonal"})
    if not isinstance(cert, LyapunovP):
        raise ModelError(f"no Lyapunov decrease check for certificate {type(cert).__name__}")
    P = cert.lyapunov_matrix

    def worst_on(r):
        X = sample_ball(n, samples, r, rng)
        nxt = cl.F_star @ evaluate(cl.library, X)
        V = np.einsum("ik,ij,jk->k", X, P, X)
        Vn = np.einsum("ik,ij,jk->k", nxt, P, nxt)
        # relative decrease; 1e-12 absorbs rounding at tiny radii
        return float(np.max((cert.rho * Vn - V) / np.maximum(V, 1e-300)))

    if not local:
        worst = worst_on(radius)
        return Check("lyapunov_decrease", worst <= 1e-12, -worst, samples, {"kind": "global", "radius": radius})
    pass_radius = 0.0
    radii = {}
    r = radius
    worst_pass = np.nan
    for _ in range(sweep):
        w = worst_on(r)
        radii[f"{r:.6g}"] = w <= 1e-12
        if w <= 1e-12:
            pass_radius = r
            worst_pass = w
            break
        r /= 2
    return Check("lyapunov_decrease", pass_radius > 0, -worst_pass if pass_radius > 0 else -np.inf,
                 samples * len(radii), {"kind": "local", "pass_radius": pass_radius, "radii": radii})


def class_M_membership(lib: FunctionLibrary, M, samples: int = 1000, seed: int = 0, radius: float = 2.0,
                       tol: float = 1e-9) -> dict:
    """Sampled symmetry test of ``M Z'(x)``; a passing result is not a proof."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.shape != (lib.n, lib.s):
        raise ModelError(f"M must be {lib.n}x{lib.s}, got {M.shape}")
    rng = np.random.default_rng(seed)
    X = rng.uniform(-radius, radius, size=(lib.n, samples))
    X[:, 0] = 0.0
    J = jacobian(lib, X)  # (s, n, K)
    MJ = np.einsum("is,snk->ink", M, J)
    defect = float(np.max(np.abs(MJ - MJ.transpose(1, 0, 2))))
    scale = max(1.0, float(np.max(np.abs(MJ))))
    return {"pass": defect <= tol * scale, "defect": defect, "samples": samples, "exhaustive": False}


_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(10)


def _gl(f, a, b):
    mid, half = 0.5 * (a + b), 0.5 * (b - a)
    return half * float(np.dot(_GL_WEIGHTS, f(mid + half * _GL_NODES)))


def adaptive_gauss_legendre(f: Callable[[np.ndarray], np.ndarray], a: float, b: float, tol: float = 1e-10,
                            max_depth: int = 40) -> float:
    """Integrate a vectorised ``f`` on [a, b] by interval bisection with 10-point rules."""
    stack = [(a, b, _gl(f, a, b), tol, 0)]
    total = 0.0
    while stack:
        lo, hi, whole, t, depth = stack.pop()
        mid = 0.5 * (lo + hi)
        left, right = _gl(f, lo, mid), _gl(f, mid, hi)
        if abs(left + right - whole) <= t:
            total += left + right
            continue
        if depth >= max_depth:
            raise QuadratureError(f"no convergence on [{lo:g}, {hi:g}] after {max_depth} bisections")
        stack.append((lo, mid, left, t / 2, depth + 1))
        stack.append((mid, hi, right, t / 2, depth + 1))
    return total


def storage_eval(lib: FunctionLibrary, M, x, tol: float = 1e-10) -> float:
    """Storage ``S(x) = int_0^1 x' M Z(t x) dt`` whose gradient is ``M Z(x)``."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    x = np.asarray(x, dtype=float).reshape(lib.n)
    w = M.T @ x

    def integrand(t):
        return w @ evaluate(lib, np.outer(x, t))

    return adaptive_gauss_legendre(integrand, 0.0, 1.0, tol)


def passivity_trajectory_check(cl: ClosedLoop, cert: PassivityPair, r_signals: Sequence[RSignal], x0s,
                               h: float, steps: int, tol: float = 1e-6) -> Check:
    """Dissipation ``S(x(T)) - S(x(0)) <= int r'y dt + tol T`` along simulated runs.

    The supply integral is carried as an extra state ``w' = r'y`` with
    ``y = N_out Z(x)`` and integrated by the same RK4 scheme as x, with r
    held over each step, so a lossless loop gives ``dS = supply`` to RK4
    accuracy.
    """
    if cl.mode != "continuous":
        raise ModelError("passivity check needs a continuous-time closed loop")
    x0s = np.atleast_2d(np.asarray(x0s, dtype=float))
    if x0s.shape[0] != cl.library.n:
        x0s = x0s.T
    T = h * steps
    worst = np.inf
    runs = []
    for k in range(x0s.shape[1]):
        r = r_signals[k % len(r_signals)] if len(r_signals) else None
        rs = _reference_samples(r, steps, cl.m_r, h)
        n = cl.library.n

        def augmented(z, rk):
            x = z[:n]
            y = cert.N_out @ evaluate(cl.library, x)
            return np.concatenate([cl.vector_field(x, rk), [float(np.dot(rk, y))]])

        aug = simulate(augmented, np.concatenate([x0s[:, k], [0.0]]), rs, "continuous", h)
        traj = aug[:n]
        supply = float(aug[n, -1])
        dS = storage_eval(cl.library, cert.M, traj[:, -1]) - storage_eval(cl.library, cert.M, traj[:, 0])
        margin = supply + tol * T - dS
        runs.append({"dS": dS, "supply": supply})
        worst = min(worst, margin)
    return Check("dissipation", worst >= 0, worst, x0s.shape[1], {"horizon": T, "runs": runs[:5]})


def trajectory_identity_check(plant: PlantModel, result: SynthesisResult, x0s, steps: int, h: float | None = None,
                              r_signals: Sequence[RSignal] = (), tol: float = 1e-8) -> Check:
    """Plant under ``u = K Z(x) + K_r r`` versus the data-built closed loop from the same x0."""
    lib = plant.library
    cl = ClosedLoop(result.F_star, lib, plant.mode, result.F_r_star)
    x0s = np.atleast_2d(np.asarray(x0s, dtype=float))
    if x0s.shape[0] != lib.n:
        x0s = x0s.T
    worst = 0.0
    for k in range(x0s.shape[1]):
        r = r_signals[k % len(r_signals)] if len(r_signals) else None
        rs = _reference_samples(r, steps, cl.m_r, h)
        Kr = result.K_r

        def plant_cl(x, rk):
            u = result.K @ evaluate(lib, x)
            if Kr is not None:
                u = u + Kr @ rk
            return plant.vector_field(x, u)

        a = simulate(plant_cl, x0s[:, k], rs, plant.mode, h)
        b = simulate(cl.vector_field, x0s[:, k], rs, plant.mode, h)
        worst = max(worst, float(np.max(np.abs(a - b))))
    return Check("trajectory_identity", worst <= tol, tol - worst, x0s.shape[1], {"max_deviation": worst})


def reference_tracking_check(cl: ClosedLoop, A_bar, B_bar, s_bar: int, x0s, steps: int, r_signals,
                             h: float | None = None, tol: float = 1e-8) -> Check:
    """Closed loop versus the reference model ``x+ = A_bar Zbar(x) + B_bar r`` under the same r."""
    A_bar = np.atleast_2d(A_bar)
    B_bar = np.atleast_2d(B_bar)
    ref_lib = cl.library.prefix(s_bar)

    def ref(x, r):
        return A_bar @ evaluate(ref_lib, x) + B_bar @ r

    x0s = np.atleast_2d(np.asarray(x0s, dtype=float))
    if x0s.shape[0] != cl.library.n:
        x0s = x0s.T
    worst = 0.0
    for k in range(x0s.shape[1]):
        rs = _reference_samples(r_signals[k % len(r_signals)], steps, B_bar.shape[1], h)
        a = simulate(cl.vector_field, x0s[:, k], rs, cl.mode, h)
        b = simulate(ref, x0s[:, k], rs, cl.mode, h)
        worst = max(worst, float(np.max(np.abs(a - b))))
    return Check("reference_tracking", worst <= tol, tol - worst, x0s.shape[1], {"max_deviation": worst})


@dataclass(frozen=True)
class Gates:
    eq_tol: float = 1e-8
    eig_tol: float = 1e-9
    epsilon: float = 1e-6


def _gate(report: VerificationReport, name: str, value: float, tol: float) -> None:
    report.add(Check(name, bool(value <= tol), tol - value))


def recheck_certificate(result: SynthesisResult, data: DataSet, gates: Gates = Gates()) -> VerificationReport:
    """Re-derive every equality and inequality of the originating program from raw data."""
    from .basis import jacobian as jac
    from .synthesis import oscillator_target

    rep = VerificationReport()
    n, s = data.n, data.s
    G, K, F = result.G, result.K, result.F_star
    tol = gates.eq_tol
    _gate(rep, "Z0G=I", float(np.max(np.abs(data.Z0 @ G - np.eye(s)))), tol)
    _gate(rep, "X1G=F*", float(np.max(np.abs(data.X1 @ G - F))), tol)
    _gate(rep, "U0G=K", float(np.max(np.abs(data.U0 @ G - K))), tol)
    if result.G_r is not None:
        _gate(rep, "Z0Gr=0", float(np.max(np.abs(data.Z0 @ result.G_r))), tol)
        _gate(rep, "X1Gr=Fr*", float(np.max(np.abs(data.X1 @ result.G_r - result.F_r_star))), tol)
        _gate(rep, "U0Gr=Kr", float(np.max(np.abs(data.U0 @ result.G_r - result.K_r))), tol)

    cert = result.certificate
    obj = result.objective

    def max_eig(S):
        S = 0.5 * (S + S.T)
        return float(np.max(np.linalg.eigvalsh(S)))

    def min_eig(S):
        S = 0.5 * (S + S.T)
        return float(np.min(np.linalg.eigvalsh(S)))

    if isinstance(cert, LyapunovP):
        P = cert.P
        rep.add(Check("P>0", min_eig(P) > 0, min_eig(P)))
        if obj == "linearized_stabilization":
            L = F @ jac(data.library, np.zeros(n))
            lyap = cert.rho * L @ P @ L.T - P
        else:
            _gate(rep, "nonlinear_columns=0", float(np.max(np.abs(F[:, n:]), initial=0.0)), tol)
            L = F[:, :n]
            lyap = cert.rho * L.T @ P @ L - P
        e = max_eig(lyap)
        rep.add(Check("lyapunov<0", e < 0, -e))
    elif isinstance(cert, DiagonalD):
        D, M = cert.D, cert.M
        _gate(rep, "M=F*[:, :n]", float(np.max(np.abs(F[:, :n] - M))), tol)
        _gate(rep, "nonlinear_columns=0", float(np.max(np.abs(F[:, n:]), initial=0.0)), tol)
        offdiag = float(np.max(np.abs(D - np.diag(np.diag(D)))))
        _gate(rep, "D_diagonal", offdiag, 0.0)
        rep.add(Check("D>0", bool(np.min(np.diag(D)) > 0), float(np.min(np.diag(D)))))
        e = max_eig(M.T @ D + D @ M)
        rep.add(Check("M'D+DM<0", e <= -gates.epsilon / 2, -gates.epsilon / 2 - e))
    elif isinstance(cert, PassivityPair):
        Th, M = cert.Theta, cert.M
        _gate(rep, "X1G1=ThetaM", float(np.max(np.abs(F - Th @ M))), tol)
        e = max_eig(Th + Th.T)
        rep.add(Check("Theta+Theta'<=0", e <= gates.eig_tol, gates.eig_tol - e))
        if result.G_r is not None:
            N_out = result.G_r.T @ data.X1.T @ M
            _gate(rep, "N_out", float(np.max(np.abs(N_out - cert.N_out))), tol)
        if obj == "passivation_linear":
            rep.add(Check("M>0", min_eig(M) > 0, min_eig(M)))
        else:
            cm = class_M_membership(data.library, M)
            rep.add(Check("class_M", cm["pass"], -cm["defect"], cm["samples"]))
    elif isinstance(cert, ExactMatch):
        if obj == "oscillator":
            mu = result.params["mu"]
            lo, hi = result.params["mu_lo"], result.params["mu_hi"]
            rep.add(Check("mu_in_range", lo - 1e-12 <= mu <= hi + 1e-12, min(mu - lo, hi - mu)))
            target = oscillator_target(mu, s)
        else:
            target = cert.target
        if target is not None:
            _gate(rep, "F*=target", float(np.max(np.abs(F - target))), tol)
        if cert.target_r is not None and result.F_r_star is not None:
            _gate(rep, "Fr*=target_r", float(np.max(np.abs(result.F_r_star - cert.target_r))), tol)
    return rep
