"""Synthesis results and the certificates attached to them."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import ClassVar

import numpy as np


@dataclass
class LyapunovP:
    """Quadratic Lyapunov certificate.

    ``form == "primal"``: rho * L.T P L - P < 0 with V(x) = x' P x.
    ``form == "dual"``:   rho * L P L.T - P < 0 with V(x) = x' P^{-1} x.
    """

    P: np.ndarray
    rho: float = 1.0
    form: str = "primal"
    kind: ClassVar[str] = "lyapunov_P"

    @property
    def lyapunov_matrix(self) -> np.ndarray:
        return self.P if self.form == "primal" else np.linalg.inv(self.P)

    def payload(self) -> dict:
        return {"P": self.P, "rho": self.rho, "form": self.form}


@dataclass
class DiagonalD:
    """Diagonal stability certificate M' D + D M < 0."""

    D: np.ndarray
    M: np.ndarray
    kind: ClassVar[str] = "diagonal_D"

    def payload(self) -> dict:
        return {"D": self.D, "M": self.M}


@dataclass
class PassivityPair:
    """Port-Hamiltonian passivity data: closed loop Theta M Z(x), output N_out Z(x)."""

    Theta: np.ndarray
    M: np.ndarray
    N_out: np.ndarray
    kind: ClassVar[str] = "passivity_pair"

    def payload(self) -> dict:
        return {"Theta": self.Theta, "M": self.M, "N_out": self.N_out}


@dataclass
class ExactMatch:
    residual: float
    target: np.ndarray | None = None
    target_r: np.ndarray | None = None
    kind: ClassVar[str] = "exact_match"

    def payload(self) -> dict:
        out = {"residual": self.residual}
        if self.target is not None:
            out["target"] = self.target
        if self.target_r is not None:
            out["target_r"] = self.target_r
        return out


Certificate = LyapunovP | DiagonalD | PassivityPair | ExactMatch

CERTIFICATES = {c.kind: c for c in (LyapunovP, DiagonalD, PassivityPair, ExactMatch)}


def certificate_from_payload(kind: str, payload: dict) -> Certificate:
    cls = CERTIFICATES[kind]
    args = {}
    for k, v in payload.items():
        args[k] = np.asarray(v, dtype=float) if isinstance(v, list) else v
    return cls(**args)


@dataclass
class SynthesisResult:
    """Gains, interpolants and certificate produced by one synthesis call.

    ``F_star`` is always the achieved closed-loop matrix ``X1 @ G``.
    """

    objective: str
    K: np.ndarray
    G: np.ndarray
    F_star: np.ndarray
    certificate: Certificate
    K_r: np.ndarray | None = None
    G_r: np.ndarray | None = None
    F_r_star: np.ndarray | None = None
    params: dict = field(default_factory=dict)
    residuals: dict = field(default_factory=dict)
