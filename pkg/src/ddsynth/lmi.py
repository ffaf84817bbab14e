"""Small affine semidefinite feasibility problems.

Problems are stated over structured matrix variables with constraints of the
form ``C + sum_k L_k V_k R_k  (= 0 | >= eps I | <= -eps I)``.

Solving proceeds in three stages:

1. Equality constraints are eliminated exactly: the stacked linear system is
   solved for a minimum-norm particular solution and a nullspace basis, so
   every returned assignment satisfies the equalities to rounding error.
2. Margin phase: the common slack ``t`` of all semidefinite constraints is
   maximised (capped at ``margin_cap``). This decides feasibility and picks
   the working margin.
3. Selection phase: among points meeting the working margin, the one of
   minimum Frobenius norm over the regularised variables is returned.

The conic subproblems are handed to Clarabel through cvxpy.
"""

from __future__ import annotations

import json
import logging
import warnings
from dataclasses import dataclass, field
from typing import Literal, Mapping, Sequence

import cvxpy as cp
import numpy as np
import scipy.linalg

from .exceptions import ModelError

log = logging.getLogger(__name__)

Structure = Literal["free", "symmetric", "diagonal"]


@dataclass(frozen=True)
class MatrixVar:
    name: str
    shape: tuple[int, int]
    structure: Structure = "free"
    regularize: bool = True

    __array_ufunc__ = None  # let ndarray @ MatrixVar reach __rmatmul__

    def __post_init__(self):
        r, c = self.shape
        if r < 0 or c < 0:
            raise ModelError(f"variable {self.name} has negative shape")
        if self.structure in ("symmetric", "diagonal") and r != c:
            raise ModelError(f"{self.structure} variable {self.name} must be square")
        if self.structure not in ("free", "symmetric", "diagonal"):
            raise ModelError(f"unknown structure {self.structure!r}")

    @property
    def T(self) -> "Affine":
        return Affine.of(self).T

    def __matmul__(self, other):
        return Affine.of(self) @ other

    def __rmatmul__(self, other):
        return other @ Affine.of(self)

    def __add__(self, other):
        return Affine.of(self) + other

    def __radd__(self, other):
        return other + Affine.of(self)

    def __sub__(self, other):
        return Affine.of(self) - other

    def __rsub__(self, other):
        return other - Affine.of(self)

    def __neg__(self):
        return -Affine.of(self)

    def __mul__(self, k):
        return Affine.of(self) * k

    __rmul__ = __mul__

    # -- parametrisation ---------------------------------------------------

    @property
    def size(self) -> int:
        r, c = self.shape
        if self.structure == "symmetric":
            return r * (r + 1) // 2
        if self.structure == "diagonal":
            return r
        return r * c

    def basis(self) -> np.ndarray:
        """Matrix S with vec(V) = S @ theta (column-major vec)."""
        r, c = self.shape
        if self.structure == "free":
            return np.eye(r * c)
        S = np.zeros((r * c, self.size))
        k = 0
        if self.structure == "diagonal":
            for i in range(r):
                S[i + i * r, k] = 1.0
                k += 1
            return S
        for j in range(r):
            for i in range(j + 1):
                S[i + j * r, k] = 1.0
                S[j + i * r, k] = 1.0
                k += 1
        return S

    def unpack(self, theta: np.ndarray) -> np.ndarray:
        r, c = self.shape
        return (self.basis() @ theta).reshape((r, c), order="F")


@dataclass(frozen=True)
class Term:
    left: np.ndarray
    var: MatrixVar
    right: np.ndarray
    transposed: bool = False


def _commutation(r: int, c: int) -> np.ndarray:
    """K with vec(V.T) = K vec(V) for V of shape (r, c)."""
    K = np.zeros((r * c, r * c))
    for i in range(r):
        for j in range(c):
            K[j + i * c, i + j * r] = 1.0
    return K


@dataclass(frozen=True)
class Affine:
    """Affine matrix expression ``const + sum(left @ var(^T) @ right)``."""

    const: np.ndarray
    terms: tuple[Term, ...] = ()

    __array_ufunc__ = None

    @classmethod
    def of(cls, v) -> "Affine":
        if isinstance(v, Affine):
            return v
        if isinstance(v, MatrixVar):
            r, c = v.shape
            return cls(np.zeros((r, c)), (Term(np.eye(r), v, np.eye(c)),))
        return cls(np.atleast_2d(np.asarray(v, dtype=float)))

    @property
    def shape(self) -> tuple[int, int]:
        return self.const.shape

    def _check(self, other: "Affine", op: str):
        if self.shape != other.shape:
            raise ModelError(f"dimension mismatch in {op}: {self.shape} vs {other.shape}")

    def __add__(self, other):
        other = Affine.of(other)
        self._check(other, "+")
        return Affine(self.const + other.const, self.terms + other.terms)

    __radd__ = __add__

    def __neg__(self):
        return Affine(-self.const, tuple(Term(-t.left, t.var, t.right, t.transposed) for t in self.terms))

    def __sub__(self, other):
        return self + (-Affine.of(other))

    def __rsub__(self, other):
        return Affine.of(other) + (-self)

    def __mul__(self, k):
        k = float(k)
        return Affine(k * self.const, tuple(Term(k * t.left, t.var, t.right, t.transposed) for t in self.terms))

    __rmul__ = __mul__

    def __matmul__(self, M):
        if isinstance(M, (Affine, MatrixVar)):
            if isinstance(M, MatrixVar) and not self.terms:
                return self.const @ Affine.of(M)
            if isinstance(M, Affine) and not self.terms:
                return self.const @ M
            raise ModelError("product of two affine expressions is not affine")
        M = np.atleast_2d(np.asarray(M, dtype=float))
        if self.shape[1] != M.shape[0]:
            raise ModelError(f"dimension mismatch in @: {self.shape} vs {M.shape}")
        return Affine(self.const @ M, tuple(Term(t.left, t.var, t.right @ M, t.transposed) for t in self.terms))

    def __rmatmul__(self, M):
        M = np.atleast_2d(np.asarray(M, dtype=float))
        if M.shape[1] != self.shape[0]:
            raise ModelError(f"dimension mismatch in @: {M.shape} vs {self.shape}")
        return Affine(M @ self.const, tuple(Term(M @ t.left, t.var, t.right, t.transposed) for t in self.terms))

    @property
    def T(self) -> "Affine":
        return Affine(self.const.T, tuple(Term(t.right.T, t.var, t.left.T, not t.transposed) for t in self.terms))

    def value(self, values: Mapping[str, np.ndarray]) -> np.ndarray:
        out = self.const.copy()
        for t in self.terms:
            V = np.asarray(values[t.var.name], dtype=float)
            out = out + t.left @ (V.T if t.transposed else V) @ t.right
        return out

    def variables(self) -> list[MatrixVar]:
        seen = {}
        for t in self.terms:
            seen.setdefault(t.var.name, t.var)
        return list(seen.values())


def block(rows: Sequence[Sequence[object]]) -> Affine:
    """Assemble a block matrix from affine expressions, arrays or ``None`` (zero)."""
    heights = []
    for row in rows:
        h = {Affine.of(b).shape[0] for b in row if b is not None}
        if len(h) != 1:
            raise ModelError("inconsistent block row heights")
        heights.append(h.pop())
    widths = []
    for j in range(len(rows[0])):
        w = {Affine.of(row[j]).shape[1] for row in rows if row[j] is not None}
        if len(w) != 1:
            raise ModelError("inconsistent block column widths")
        widths.append(w.pop())
    H, W = sum(heights), sum(widths)
    out = Affine(np.zeros((H, W)))
    r0 = 0
    for i, row in enumerate(rows):
        c0 = 0
        for j, b in enumerate(row):
            if b is not None:
                Ei = np.zeros((H, heights[i]))
                Ei[r0:r0 + heights[i]] = np.eye(heights[i])
                Ej = np.zeros((widths[j], W))
                Ej[:, c0:c0 + widths[j]] = np.eye(widths[j])
                out = out + Ei @ Affine.of(b) @ Ej
            c0 += widths[j]
        r0 += heights[i]
    return out


@dataclass(frozen=True)
class AffineConstraint:
    kind: Literal["eq", "psd", "nsd"]
    expr: Affine
    margin: float = 0.0
    name: str = ""

    def __post_init__(self):
        if self.kind not in ("eq", "psd", "nsd"):
            raise ModelError(f"unknown constraint kind {self.kind!r}")
        if self.kind != "eq" and self.expr.shape[0] != self.expr.shape[1]:
            raise ModelError(f"semidefinite constraint {self.name!r} must be square, got {self.expr.shape}")
        if self.margin < 0:
            raise ModelError("strictness margin must be non-negative")

    @property
    def psd_form(self) -> Affine:
        """Expression that must be >= margin * I."""
        return self.expr if self.kind == "psd" else -self.expr


def eq(expr, rhs=0.0, name: str = "") -> AffineConstraint:
    e = Affine.of(expr)
    if np.ndim(rhs) == 0:
        rhs = np.full(e.shape, float(rhs))
    return AffineConstraint("eq", e - rhs, 0.0, name)


def psd(expr, margin: float = 0.0, name: str = "") -> AffineConstraint:
    return AffineConstraint("psd", Affine.of(expr), margin, name)


def nsd(expr, margin: float = 0.0, name: str = "") -> AffineConstraint:
    return AffineConstraint("nsd", Affine.of(expr), margin, name)


@dataclass(frozen=True)
class Problem:
    variables: tuple[MatrixVar, ...]
    constraints: tuple[AffineConstraint, ...]

    def __init__(self, variables: Sequence[MatrixVar], constraints: Sequence[AffineConstraint]):
        names = [v.name for v in variables]
        if len(set(names)) != len(names):
            raise ModelError("duplicate variable names")
        known = {v.name: v for v in variables}
        for c in constraints:
            for v in c.expr.variables():
                if known.get(v.name) != v:
                    raise ModelError(f"constraint {c.name!r} uses undeclared variable {v.name!r}")
            for t in c.expr.terms:
                r, col = t.var.shape
                if t.transposed:
                    r, col = col, r
                if t.left.shape[1] != r or t.right.shape[0] != col:
                    raise ModelError(f"dimension mismatch in constraint {c.name!r}")
        object.__setattr__(self, "variables", tuple(variables))
        object.__setattr__(self, "constraints", tuple(constraints))

    def to_json(self) -> dict:
        def term(t):
            return {"left": t.left.tolist(), "var": t.var.name, "transposed": t.transposed,
                    "right": t.right.tolist()}

        return {
            "variables": [{"name": v.name, "shape": list(v.shape), "structure": v.structure,
                           "regularize": v.regularize} for v in self.variables],
            "constraints": [{"name": c.name, "kind": c.kind, "margin": c.margin,
                             "const": c.expr.const.tolist(), "terms": [term(t) for t in c.expr.terms]}
                            for c in self.constraints],
        }

    def dump(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh, indent=1)


@dataclass(frozen=True)
class SolveOptions:
    eq_tol: float = 1e-8
    eig_tol: float = 1e-9
    margin_cap: float = 1.0
    radius: float = 1e6
    solver_tol: float = 1e-10
    max_iter: int = 400


@dataclass
class ResidualReport:
    eq_residual: float
    margins: dict[str, float]
    min_margin: float
    passed: bool

    def to_dict(self) -> dict:
        return {"eq_residual": self.eq_residual, "margins": self.margins,
                "min_margin": self.min_margin, "passed": self.passed}


@dataclass
class FeasibilityOutcome:
    status: Literal["feasible", "infeasible", "inconclusive"]
    values: dict[str, np.ndarray] = field(default_factory=dict)
    residuals: ResidualReport | None = None
    margin: float = float("nan")
    message: str = ""

    @property
    def feasible(self) -> bool:
        return self.status == "feasible"


def check_solution(problem: Problem, values: Mapping[str, np.ndarray], opts: SolveOptions = SolveOptions()) -> ResidualReport:
    """Recompute every residual from scratch with a dense symmetric eigensolver.

    The reported margin of a semidefinite constraint is its smallest
    eigenvalue minus the required strictness; a constraint passes when that
    is at least ``-eig_tol``.
    """
    eq_res = 0.0
    margins = {}
    for k, c in enumerate(problem.constraints):
        name = c.name or f"c{k}"
        if c.kind == "eq":
            eq_res = max(eq_res, float(np.max(np.abs(c.expr.value(values)), initial=0.0)))
            continue
        E = c.psd_form.value(values)
        E = 0.5 * (E + E.T)
        lam = scipy.linalg.eigh(E, eigvals_only=True)[0] if E.size else np.inf
        margins[name] = float(lam - c.margin)
    for v in problem.variables:
        V = np.asarray(values[v.name])
        if v.structure == "symmetric":
            eq_res = max(eq_res, float(np.max(np.abs(V - V.T), initial=0.0)))
        elif v.structure == "diagonal":
            eq_res = max(eq_res, float(np.max(np.abs(V - np.diag(np.diag(V))), initial=0.0)))
    min_margin = min(margins.values(), default=np.inf)
    return ResidualReport(eq_res, margins, min_margin, eq_res <= opts.eq_tol and min_margin >= -opts.eig_tol)


class _Reduced:
    """Problem rewritten over the nullspace coordinates of its equalities."""

    def __init__(self, problem: Problem, opts: SolveOptions):
        self.problem = problem
        self.offsets = {}
        k = 0
        for v in problem.variables:
            self.offsets[v.name] = (k, k + v.size)
            k += v.size
        self.dim = k
        self.bases = {v.name: v.basis() for v in problem.variables}

        eq_rows, eq_rhs = [], []
        self.cones = []
        for c in problem.constraints:
            A, const = self._vectorize(c.expr if c.kind == "eq" else c.psd_form)
            if c.kind == "eq":
                eq_rows.append(A)
                eq_rhs.append(-const)
            else:
                self.cones.append((c, A, const))

        if eq_rows:
            Aeq = np.vstack(eq_rows)
            beq = np.concatenate(eq_rhs)
            theta0 = np.linalg.lstsq(Aeq, beq, rcond=None)[0] if Aeq.size else np.zeros(k)
            self.eq_residual = float(np.max(np.abs(Aeq @ theta0 - beq), initial=0.0))
            if Aeq.size:
                _, sv, Vt = np.linalg.svd(Aeq)
                tol = max(Aeq.shape) * np.finfo(float).eps * (sv[0] if sv.size else 0.0)
                rank = int(np.sum(sv > tol))
                self.null = Vt[rank:].T
            else:
                self.null = np.eye(k)
        else:
            theta0 = np.zeros(k)
            self.eq_residual = 0.0
            self.null = np.eye(k)
        self.theta0 = theta0

        reg = []
        for v in problem.variables:
            lo, hi = self.offsets[v.name]
            W = np.zeros((v.shape[0] * v.shape[1], k))
            if v.regularize:
                W[:, lo:hi] = self.bases[v.name]
            reg.append(W)
        self.reg = np.vstack(reg) if reg else np.zeros((0, k))

    def _vectorize(self, expr: Affine):
        r, c = expr.shape
        A = np.zeros((r * c, self.dim))
        for t in expr.terms:
            vr, vc = t.var.shape
            S = self.bases[t.var.name]
            if t.transposed:
                S = _commutation(vr, vc) @ S
            lo, hi = self.offsets[t.var.name]
            A[:, lo:hi] += np.kron(t.right.T, t.left) @ S
        return A, expr.const.reshape(-1, order="F").astype(float)

    def values(self, theta: np.ndarray) -> dict[str, np.ndarray]:
        out = {}
        for v in self.problem.variables:
            lo, hi = self.offsets[v.name]
            out[v.name] = v.unpack(theta[lo:hi])
        return out

    def cone_exprs(self, z):
        for c, A, const in self.cones:
            r = c.expr.shape[0]
            vec = const + A @ self.theta0
            if self.null.shape[1]:
                E = cp.reshape(vec + (A @ self.null) @ z, (r, r), order="F")
            else:
                E = cp.Constant(vec.reshape((r, r), order="F"))
            yield c, 0.5 * (E + E.T), r


_OK = ("optimal", "optimal_inaccurate")


def _clarabel(prob: cp.Problem, opts: SolveOptions) -> str:
    # Tight tolerances occasionally stall on tiny, badly scaled instances;
    # loosen step by step. The caller re-checks every accepted point anyway.
    status = "solver_error"
    for tol in (opts.solver_tol, 100 * opts.solver_tol, 1e4 * opts.solver_tol):
        try:
            with warnings.catch_warnings():
                # "inaccurate" points are screened by check_solution instead
                warnings.simplefilter("ignore", UserWarning)
                prob.solve(solver=cp.CLARABEL, tol_gap_abs=tol, tol_gap_rel=tol, tol_feas=tol, max_iter=opts.max_iter)
        except cp.error.SolverError as exc:
            log.debug("Clarabel failed at tol %g: %s", tol, exc)
            continue
        status = prob.status
        if status in _OK or status in ("infeasible", "infeasible_inaccurate"):
            break
    return status


def solve(problem: Problem, opts: SolveOptions = SolveOptions()) -> FeasibilityOutcome:
    """Solve a feasibility problem and select its minimum-norm well-margined point.

    Never reports ``feasible`` unless :func:`check_solution` passes on the
    returned assignment.
    """
    red = _Reduced(problem, opts)
    if red.eq_residual > opts.eq_tol:
        return FeasibilityOutcome("infeasible", message=f"equality constraints inconsistent (residual {red.eq_residual:.3e})",
                                  residuals=ResidualReport(red.eq_residual, {}, np.nan, False))
    k = red.null.shape[1]
    required = max((c.margin for c, _, _ in red.cones), default=0.0)

    if not red.cones:
        theta = red.theta0
        if k:
            # min-norm point of the affine set under the regularisation weights
            RN = red.reg @ red.null
            z = -np.linalg.lstsq(RN, red.reg @ red.theta0, rcond=None)[0] if RN.size else np.zeros(k)
            theta = red.theta0 + red.null @ z
        return _finish(problem, red.values(theta), opts, np.inf)

    # margin phase: maximise a common slack over all semidefinite constraints,
    # then, if that fails, over the strict ones only (boundary-feasible
    # non-strict constraints such as a lossless dissipation inequality).
    z = cp.Variable(k) if k else None
    t = cp.Variable()
    ball = [cp.norm(red.theta0 + red.null @ z) <= opts.radius] if k else []
    plan = None
    best = np.nan
    solver_trouble = False
    for strict_only in (False, True):
        cons = [t <= opts.margin_cap] + ball
        slacked = 0
        for c, E, r in red.cone_exprs(z):
            if strict_only and c.margin == 0.0:
                cons.append(E >> 0)
            else:
                cons.append(E >> t * np.eye(r))
                slacked += 1
        if strict_only and slacked == 0:
            break
        status = _clarabel(cp.Problem(cp.Maximize(t), cons), opts)
        if status in ("infeasible", "infeasible_inaccurate"):
            # only possible when some non-strict constraint cannot be met at all
            continue
        if status not in _OK:
            solver_trouble = True
            continue
        tstar = float(t.value)
        best = tstar if not np.isfinite(best) else max(best, tstar)
        if tstar >= required - opts.eig_tol and (tstar > 0 or required == 0.0):
            plan = (strict_only, tstar)
            fallback = red.theta0 + (red.null @ z.value if k else 0.0)
            break
    if plan is None:
        if solver_trouble:
            return FeasibilityOutcome("inconclusive", margin=best, message="margin phase did not converge")
        return FeasibilityOutcome("infeasible", margin=best,
                                  message=f"best achievable margin {best:.3e} below required {required:.3e}")

    strict_only, tstar = plan
    if tstar >= opts.margin_cap * (1 - 1e-6):
        tau = opts.margin_cap
    else:
        tau = max(required, 0.5 * tstar, 0.0)

    # selection phase; the norm objective keeps the point bounded, and a
    # redundant ball here badly hurts the solver's scaling
    cons = []
    for c, E, r in red.cone_exprs(z):
        level = 0.0 if (strict_only and c.margin == 0.0) else max(tau, c.margin)
        cons.append(E >> level * np.eye(r))
    objective = cp.sum_squares(red.reg @ red.theta0 + (red.reg @ red.null) @ z) if k else cp.Constant(0.0)
    prob = cp.Problem(cp.Minimize(objective), cons)
    status = _clarabel(prob, opts)
    if status in _OK and not (k and z.value is None):
        out = _finish(problem, red.values(red.theta0 + (red.null @ z.value if k else 0.0)), opts, tstar)
        if out.feasible:
            return out
    # badly scaled instances can defeat the selection solve; the margin-phase
    # point is feasible too, just not minimum-norm
    log.debug("selection phase ended with status %s; using the margin-phase point", status)
    out = _finish(problem, red.values(fallback), opts, tstar)
    if not out.feasible:
        out.message = f"selection phase ended with status {status}; " + out.message
    return out


def _finish(problem, values, opts, tstar) -> FeasibilityOutcome:
    report = check_solution(problem, values, opts)
    if report.passed:
        return FeasibilityOutcome("feasible", values, report, tstar)
    return FeasibilityOutcome("inconclusive", values, report, tstar,
                              message="returned point failed the independent residual check")
