"""Command-line front end: ``ddsynth collect | check | synth | verify``.

Exit codes: 0 success, 1 a check failed, 2 configuration error,
3 divergence, 4 infeasible, 5 target not attainable, 6 precondition violated.
Every global flag can also be set through an environment variable named
``DDSYNTH_<FLAG>`` (for example ``DDSYNTH_EQ_TOL``); explicit flags win.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np

from . import io
from .basis import evaluate
from .data import DEFAULT_RTOL, check_rank, collect
from .exceptions import (
    DDSynthError,
    DivergenceError,
    Infeasible,
    NotAttainable,
    PreconditionError,
    SynthesisError,
)
from .results import DiagonalD, ExactMatch, LyapunovP, PassivityPair
from .synthesis import SynthesisOptions, synthesize
from .verification import (
    Check,
    ClosedLoop,
    Gates,
    VerificationReport,
    lyapunov_decrease_check,
    passivity_trajectory_check,
    recheck_certificate,
    reference_tracking_check,
    sample_ball,
    simulate_closed_loop,
    storage_eval,
    trajectory_identity_check,
)

log = logging.getLogger("ddsynth")

EXIT_OK, EXIT_CHECK, EXIT_CONFIG, EXIT_DIVERGENCE, EXIT_INFEASIBLE, EXIT_NOT_ATTAINABLE, EXIT_PRECONDITION = range(7)

DEFAULT_SEED = 0

_GLOBAL_FLAGS = [
    # (flag, type, default)
    ("--seed", int, DEFAULT_SEED),
    ("--eq-tol", float, 1e-8),
    ("--eig-tol", float, 1e-9),
    ("--epsilon", float, 1e-6),
    ("--rank-rtol", float, DEFAULT_RTOL),
    ("--dump-lmi", str, None),
]


def _env_default(flag: str, typ, default):
    key = "DDSYNTH_" + flag.lstrip("-").replace("-", "_").upper()
    raw = os.environ.get(key)
    if raw is None:
        return default
    try:
        return typ(raw)
    except ValueError:
        raise SystemExit(f"ddsynth: bad value for {key}: {raw!r}") from None


def _add_globals(p: argparse.ArgumentParser, with_defaults: bool) -> None:
    for flag, typ, default in _GLOBAL_FLAGS:
        kw = {"default": _env_default(flag, typ, default)} if with_defaults else {"default": argparse.SUPPRESS}
        p.add_argument(flag, type=typ, **kw)
    p.add_argument("-v", "--verbose", action="count", **({"default": 0} if with_defaults else {"default": argparse.SUPPRESS}))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ddsynth", description="Data-driven nonlinear state-feedback synthesis.")
    _add_globals(parser, True)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("collect", help="simulate a plant and write a data set")
    _add_globals(p, False)
    p.add_argument("--plant", required=True)
    p.add_argument("--experiment", required=True)
    p.add_argument("--out", required=True, help="data CSV; the sidecar is written next to it")

    p = sub.add_parser("check", help="rank diagnostics of a data set")
    _add_globals(p, False)
    p.add_argument("--data", required=True)

    p = sub.add_parser("synth", help="synthesise a controller")
    _add_globals(p, False)
    p.add_argument("--objective", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("verify", help="verify a controller")
    _add_globals(p, False)
    p.add_argument("--controller", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--plant", help="ground-truth plant for the trajectory identity check")
    p.add_argument("--sim", help="simulation settings JSON")
    p.add_argument("--out", required=True, help="report JSON")
    p.add_argument("--trajectory", help="write one closed-loop trajectory as CSV")
    return parser


def _options(args) -> SynthesisOptions:
    return SynthesisOptions(eq_tol=args.eq_tol, eig_tol=args.eig_tol, epsilon=args.epsilon,
                            rank_rtol=args.rank_rtol, seed=args.seed, dump_lmi=args.dump_lmi)


def _tolerances(args) -> dict:
    return {"eq_tol": args.eq_tol, "eig_tol": args.eig_tol, "epsilon": args.epsilon, "rank_rtol": args.rank_rtol}


# -- subcommands -----------------------------------------------------------------

def cmd_collect(args) -> int:
    plant = io.load_plant(args.plant)
    exp = io.load_experiment(args.experiment)
    data = collect(plant, exp)
    side = io.write_data(data, args.out)
    rep = check_rank(data, args.rank_rtol)
    print(f"N = {data.N}  (n={data.n}, m={data.m}, s={data.s}, mode={data.mode})")
    print(f"rank Z0 = {rep.rank_Z0}/{rep.s}, rank [Z0; U0] = {rep.rank_stack}/{rep.s + rep.m}")
    print(f"wrote {args.out} and {side}")
    return EXIT_OK


def cmd_check(args) -> int:
    data = io.load_data(args.data)
    rep = check_rank(data, args.rank_rtol)
    print(json.dumps(rep.to_dict(), indent=2, sort_keys=True))
    if not rep.data_equals_model:
        print("warning: [Z0; U0] is rank deficient; an infeasible design no longer proves that no "
              "controller exists", file=sys.stderr)
    return EXIT_OK if rep.attainable_nonempty else EXIT_CHECK


def _summary(result) -> str:
    cert = result.certificate
    lines = [f"objective: {result.objective}", f"K = {np.array2string(result.K, precision=6)}"]
    if result.K_r is not None:
        lines.append(f"K_r = {np.array2string(result.K_r, precision=6)}")
    if isinstance(cert, LyapunovP):
        lines.append(f"certificate: P with eigenvalues {np.array2string(np.linalg.eigvalsh(cert.P), precision=6)}")
    elif isinstance(cert, DiagonalD):
        lines.append(f"certificate: D = diag{tuple(np.round(np.diag(cert.D), 6))}")
    elif isinstance(cert, PassivityPair):
        e = np.max(np.linalg.eigvalsh(cert.Theta + cert.Theta.T))
        lines.append(f"certificate: Theta with max eig(Theta + Theta') = {e:.3e}")
    elif isinstance(cert, ExactMatch):
        lines.append(f"certificate: exact match, residual {cert.residual:.3e}")
    if "mu" in result.params:
        lines.append(f"mu = {result.params['mu']:.10g}")
    return "\n".join(lines)


def cmd_synth(args) -> int:
    objective = io.load_objective(args.objective)
    data = io.load_data(args.data)
    opts = _options(args)
    result = synthesize(objective, data, opts)
    report = recheck_certificate(result, data, Gates(args.eq_tol, args.eig_tol, args.epsilon))
    print(_summary(result))
    if not report.passed:
        for c in report.checks:
            if not c.passed:
                print(f"recheck failed: {c.name} (margin {c.margin:.3e})", file=sys.stderr)
        return EXIT_CHECK
    io.write_json(args.out, io.controller_to_dict(result, data, _tolerances(args)))
    print(f"wrote {args.out}")
    return EXIT_OK


def reference_signal(spec: dict, m_r: int, rng: np.random.Generator):
    """A callable r(t) from ``{"kind": "sine"|"constant"|"random", "amplitude", "frequency"}``."""
    kind = spec.get("kind", "sine")
    amp = float(spec.get("amplitude", 1.0))
    if kind == "sine":
        freq = float(spec.get("frequency", 1.0))
        phase = rng.uniform(0, 2 * np.pi, m_r)
        return lambda t: amp * np.sin(freq * t + phase)
    if kind == "constant":
        val = amp * rng.uniform(-1, 1, m_r)
        return lambda t: val
    if kind == "random":
        table = amp * rng.uniform(-1, 1, (int(spec.get("length", 10_000)), m_r))
        return table
    raise io.ConfigError(f"unknown reference kind {kind!r}")


def run_verification(result, data, sim: dict, seed: int, gates: Gates, plant=None) -> tuple[VerificationReport, dict]:
    """The verification suite matching the certificate kind, plus one archived trajectory."""
    rng = np.random.default_rng(seed)
    rep = recheck_certificate(result, data, gates)
    cl = ClosedLoop.from_result(result, data)
    n = data.n
    steps = int(sim.get("steps", 100))
    h = float(sim.get("h", 0.01)) if data.mode == "continuous" else None
    runs = int(sim.get("runs", 10))
    x0_radius = float(sim.get("x0_radius", 0.5))
    x0s = sample_ball(n, runs, x0_radius, rng)
    ref_spec = sim.get("reference", {"kind": "sine"})
    r_signals = [reference_signal(ref_spec, cl.m_r, rng) for _ in range(runs)] if cl.m_r else []
    cert = result.certificate

    def guarded(fn, name):
        try:
            rep.add(fn())
        except DivergenceError as exc:
            rep.add(Check(name, False, -np.inf, detail={"error": str(exc)}))

    if plant is not None:
        guarded(lambda: trajectory_identity_check(plant, result, x0s, steps, h, r_signals), "trajectory_identity")
    if isinstance(cert, (LyapunovP, DiagonalD)):
        local = result.objective == "linearized_stabilization"
        rep.add(lyapunov_decrease_check(cl, cert, int(sim.get("samples", 10_000)), float(sim.get("radius", 1.0)),
                                        seed, local=local))
    if isinstance(cert, PassivityPair):
        guarded(lambda: passivity_trajectory_check(cl, cert, r_signals, x0s, h, steps, float(sim.get("tol", 1e-6))),
                "dissipation")
        if result.params.get("storage") == "quadratic":
            worst = max(abs(storage_eval(data.library, cert.M, x) - 0.5 * x @ cert.M @ x) for x in x0s.T)
            rep.add(Check("storage_quadratic", worst <= 1e-10, 1e-10 - worst, runs))
    if isinstance(cert, ExactMatch) and cert.target is not None:
        Bt = cert.target_r if cert.target_r is not None else np.zeros((n, 0))
        rs = r_signals or [None]
        guarded(lambda: reference_tracking_check(cl, cert.target, Bt, data.s, x0s, steps, rs, h), "reference_tracking")

    # archive one trajectory
    traj = {}
    try:
        r0 = r_signals[0] if r_signals else None
        X = simulate_closed_loop(cl, x0s[:, 0], steps, h, r0)
        dt = 1.0 if h is None else h
        t = np.arange(steps + 1) * dt
        R = None
        if cl.m_r:
            R = np.array([np.atleast_1d(r0(tk)) if callable(r0) else r0[min(k, len(r0) - 1)]
                          for k, tk in enumerate(t)]).T
        Z = evaluate(data.library, X)
        U = result.K @ Z + (result.K_r @ R if R is not None else 0.0)
        Y = cert.N_out @ Z if isinstance(cert, PassivityPair) else None
        traj = {"t": t, "X": X, "U": U, "R": R, "Y": Y}
    except DivergenceError:
        pass
    return rep, traj


def cmd_verify(args) -> int:
    result = io.load_controller(args.controller)
    data = io.load_data(args.data)
    plant = io.load_plant(args.plant) if args.plant else None
    sim = io.read_json(args.sim) if args.sim else {}
    seed = int(sim.get("seed", args.seed))
    gates = Gates(args.eq_tol, args.eig_tol, args.epsilon)
    rep, traj = run_verification(result, data, sim, seed, gates, plant)
    out = rep.to_dict()
    out["seed"] = seed
    out["tolerances"] = _tolerances(args)
    io.write_json(args.out, out)
    if args.trajectory and traj:
        io.write_trajectory(args.trajectory, traj["t"], traj["X"], traj["U"], traj["R"], traj["Y"])
    for c in rep.checks:
        print(f"{'PASS' if c.passed else 'FAIL'}  {c.name}  margin={c.margin:.3e}  samples={c.samples}")
    return EXIT_OK if rep.passed else EXIT_CHECK


COMMANDS = {"collect": cmd_collect, "check": cmd_check, "synth": cmd_synth, "verify": cmd_verify}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except Infeasible as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        for k, v in sorted(exc.residuals.items()):
            print(f"  {k}: {v}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except NotAttainable as exc:
        print(f"not attainable: {exc}", file=sys.stderr)
        return EXIT_NOT_ATTAINABLE
    except PreconditionError as exc:
        print(f"precondition violated: {exc}", file=sys.stderr)
        return EXIT_PRECONDITION
    except SynthesisError as exc:
        # a post-solve certificate check rejected the recovered controller
        print(f"synthesis failed: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except DDSynthError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
