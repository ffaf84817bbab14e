"""On-disk formats: plant/experiment/objective/controller JSON and data CSV.

Matrices are written as ``{"shape": [rows, cols], "data": [...]}`` with the
data in row-major order. On input, nested lists and bare scalars are accepted
as well.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .basis import FunctionLibrary, parse_library
from .data import DataSet, Experiment, InputSignal, PlantModel, Run
from .exceptions import ModelError
from .results import SynthesisResult, certificate_from_payload
from .synthesis import objective_from_dict


class ConfigError(ModelError):
    """A configuration file is missing, unreadable or malformed."""


def read_json(path) -> dict:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"file not found: {p}")
    try:
        return json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{p}: invalid JSON ({exc})") from None


def write_json(path, obj) -> None:
    """Deterministic JSON: sorted keys, shortest round-trip float repr."""
    Path(path).write_text(json.dumps(to_jsonable(obj), indent=2, sort_keys=True) + "\n")


def encode_matrix(M) -> dict:
    M = np.atleast_2d(np.asarray(M, dtype=float))
    return {"shape": list(M.shape), "data": [float(v) for v in M.reshape(-1)]}


def decode_matrix(obj, name: str = "matrix") -> np.ndarray:
    if isinstance(obj, dict):
        try:
            shape = tuple(int(v) for v in obj["shape"])
            data = np.asarray(obj["data"], dtype=float)
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"{name}: bad matrix object ({exc})") from None
        if len(shape) != 2 or data.size != shape[0] * shape[1]:
            raise ConfigError(f"{name}: data length {data.size} does not match shape {shape}")
        return data.reshape(shape)
    try:
        arr = np.asarray(obj, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{name}: not a numeric matrix ({exc})") from None
    if arr.ndim > 2:
        raise ConfigError(f"{name}: expected a matrix, got {arr.ndim} dimensions")
    return np.atleast_2d(arr)


def to_jsonable(obj):
    if isinstance(obj, np.ndarray):
        return encode_matrix(obj)
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _require(cfg: dict, keys, where: str):
    missing = [k for k in keys if k not in cfg]
    if missing:
        raise ConfigError(f"{where}: missing keys {missing}")


def _library(cfg: dict, where: str) -> FunctionLibrary:
    _require(cfg, ["n", "library"], where)
    return parse_library(cfg["library"], int(cfg["n"]))


# -- plant and experiment ----------------------------------------------------

def plant_from_dict(cfg: dict) -> PlantModel:
    _require(cfg, ["n", "m", "mode", "library", "A", "B"], "plant")
    lib = _library(cfg, "plant")
    B = decode_matrix(cfg["B"], "B")
    if B.shape == (1, int(cfg["n"])) and int(cfg["m"]) == 1 and int(cfg["n"]) > 1:
        B = B.T
    plant = PlantModel(lib, decode_matrix(cfg["A"], "A"), B, cfg["mode"])
    if plant.m != int(cfg["m"]):
        raise ConfigError(f"plant: B has {plant.m} columns but m={cfg['m']}")
    return plant


def load_plant(path) -> PlantModel:
    return plant_from_dict(read_json(path))


def plant_to_dict(plant: PlantModel) -> dict:
    return {"n": plant.n, "m": plant.m, "mode": plant.mode, "library": plant.library.canonical(),
            "A": plant.A, "B": plant.B}


def experiment_from_dict(cfg: dict) -> Experiment:
    _require(cfg, ["runs"], "experiment")
    runs = []
    for i, r in enumerate(cfg["runs"]):
        _require(r, ["x0", "samples"], f"experiment run {i}")
        spec = dict(r.get("input", {"kind": "constant"}))
        kind = spec.pop("kind", "constant")
        try:
            signal = InputSignal(kind, **spec)
        except TypeError as exc:
            raise ConfigError(f"experiment run {i}: bad input spec ({exc})") from None
        runs.append(Run(tuple(float(v) for v in np.atleast_1d(r["x0"])), signal, int(r["samples"])))
    h = cfg.get("h")
    return Experiment(tuple(runs), None if h is None else float(h))


def load_experiment(path) -> Experiment:
    return experiment_from_dict(read_json(path))


# -- data CSV + sidecar --------------------------------------------------------

def sidecar_path(csv_path) -> Path:
    p = Path(csv_path)
    return p.with_name(p.stem + ".meta.json")


def write_data(data: DataSet, csv_path) -> Path:
    n, m = data.n, data.m
    header = ["k"] + [f"x{i + 1}" for i in range(n)] + [f"u{i + 1}" for i in range(m)] + [f"x{i + 1}p" for i in range(n)]
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for k in range(data.N):
            row = [k] + [repr(float(v)) for v in data.X0[:, k]] + [repr(float(v)) for v in data.U0[:, k]] + \
                  [repr(float(v)) for v in data.X1[:, k]]
            w.writerow(row)
    meta = {"n": n, "m": m, "mode": data.mode, "library": data.library.canonical(), "N": data.N,
            "fingerprint": data.fingerprint}
    side = sidecar_path(csv_path)
    write_json(side, meta)
    return side


def load_data(csv_path, meta_path=None) -> DataSet:
    csv_path = Path(csv_path)
    if not csv_path.is_file():
        raise ConfigError(f"file not found: {csv_path}")
    meta = read_json(meta_path or sidecar_path(csv_path))
    _require(meta, ["n", "m", "mode", "library"], "data sidecar")
    lib = _library(meta, "data sidecar")
    n, m = int(meta["n"]), int(meta["m"])
    with open(csv_path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ConfigError(f"{csv_path}: empty file")
    header = [h.strip() for h in rows[0]]
    expected = ["k"] + [f"x{i + 1}" for i in range(n)] + [f"u{i + 1}" for i in range(m)] + [f"x{i + 1}p" for i in range(n)]
    if header != expected:
        raise ConfigError(f"{csv_path}: header {header} does not match expected {expected}")
    try:
        body = np.array([[float(v) for v in r] for r in rows[1:] if r], dtype=float)
    except ValueError as exc:
        raise ConfigError(f"{csv_path}: non-numeric entry ({exc})") from None
    if body.size == 0:
        raise ConfigError(f"{csv_path}: no samples")
    body = body.reshape(-1, len(expected))
    if "N" in meta and int(meta["N"]) != len(body):
        raise ConfigError(f"{csv_path}: sidecar says N={meta['N']} but the file has {len(body)} rows")
    X0 = body[:, 1:1 + n].T
    U0 = body[:, 1 + n:1 + n + m].T
    X1 = body[:, 1 + n + m:].T
    return DataSet.from_samples(lib, X0, U0, X1, meta["mode"])


# -- objectives and controllers --------------------------------------------------

def objective_from_config(cfg: dict):
    cfg = dict(cfg)
    for key in ("A_bar", "B_bar", "input_map"):
        if cfg.get(key) is not None:
            cfg[key] = decode_matrix(cfg[key], key)
    if "M" in cfg:
        M = cfg["M"]
        if isinstance(M, list) and M and (isinstance(M[0], dict) or np.ndim(M) == 3):
            cfg["M"] = np.stack([decode_matrix(c, "M") for c in M])
        else:
            cfg["M"] = decode_matrix(M, "M")
    try:
        return objective_from_dict(cfg)
    except TypeError as exc:
        raise ConfigError(f"objective: {exc}") from None


def load_objective(path):
    return objective_from_config(read_json(path))


def controller_to_dict(result: SynthesisResult, data: DataSet, tolerances: dict) -> dict:
    out = {
        "objective": result.objective,
        "K": result.K,
        "G": result.G,
        "F_star": result.F_star,
        "certificate": {"kind": result.certificate.kind, "payload": result.certificate.payload()},
        "residuals": result.residuals,
        "params": result.params,
        "library": data.library.canonical(),
        "n": data.n,
        "m": data.m,
        "mode": data.mode,
        "fingerprint": data.fingerprint,
        "tolerances": tolerances,
    }
    for key in ("K_r", "G_r", "F_r_star"):
        val = getattr(result, key)
        if val is not None:
            out[key] = val
    return out


def _decode_payload(payload: dict) -> dict:
    out = {}
    for k, v in payload.items():
        out[k] = decode_matrix(v, k) if isinstance(v, (dict, list)) else v
    return out


def controller_from_dict(cfg: dict) -> SynthesisResult:
    _require(cfg, ["objective", "K", "G", "F_star", "certificate"], "controller")
    cert = cfg["certificate"]
    _require(cert, ["kind", "payload"], "controller certificate")
    try:
        certificate = certificate_from_payload(cert["kind"], _decode_payload(cert["payload"]))
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"controller certificate: {exc}") from None
    params = {}
    for k, v in cfg.get("params", {}).items():
        params[k] = decode_matrix(v, k) if isinstance(v, dict) and "shape" in v else v
    result = SynthesisResult(cfg["objective"], decode_matrix(cfg["K"], "K"), decode_matrix(cfg["G"], "G"),
                             decode_matrix(cfg["F_star"], "F_star"), certificate, params=params,
                             residuals=cfg.get("residuals", {}))
    for key in ("K_r", "G_r", "F_r_star"):
        if cfg.get(key) is not None:
            setattr(result, key, decode_matrix(cfg[key], key))
    return result


def load_controller(path) -> SynthesisResult:
    return controller_from_dict(read_json(path))


def write_trajectory(path, t, X, U=None, R=None, Y=None) -> None:
    """Plot-ready CSV ``t, x1..xn, u1..um[, r1.., y1..]``; arrays are (dim, T)."""
    cols = [("t", np.atleast_2d(t))]
    for prefix, arr in (("x", X), ("u", U), ("r", R), ("y", Y)):
        if arr is not None and np.size(arr):
            arr = np.atleast_2d(arr)
            cols.append((prefix, arr))
    T = np.atleast_2d(t).shape[1]
    header, body = [], []
    for prefix, arr in cols:
        if prefix == "t":
            header.append("t")
        else:
            header += [f"{prefix}{i + 1}" for i in range(arr.shape[0])]
        body.append(arr[:, :T])
    table = np.vstack(body).T
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in table:
            w.writerow([repr(float(v)) for v in row])
