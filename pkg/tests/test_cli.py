import json
import subprocess
import sys

import numpy as np
import pytest

from ddsynth import cli, io
from ddsynth.data import DataSet
from ddsynth.basis import linear_library

SCALAR_PLANT = {"n": 1, "m": 1, "mode": "discrete", "library": "x1", "A": [[2.0]], "B": [[1.0]]}
SCALAR_EXPERIMENT = {"runs": [{"x0": [1.0], "samples": 1, "input": {"kind": "constant", "value": [0.0]}},
                              {"x0": [2.0], "samples": 1, "input": {"kind": "constant", "value": [1.0]}}]}


def write(path, obj):
    path.write_text(json.dumps(obj))
    return str(path)


@pytest.fixture
def scalar(tmp_path):
    plant = write(tmp_path / "plant.json", SCALAR_PLANT)
    exp = write(tmp_path / "experiment.json", SCALAR_EXPERIMENT)
    data = str(tmp_path / "data.csv")
    assert cli.main(["collect", "--plant", plant, "--experiment", exp, "--out", data]) == 0
    return tmp_path, plant, data


def save_data(tmp_path, name, U0, X0, X1, mode="discrete"):
    ds = DataSet(np.atleast_2d(U0), np.atleast_2d(X0), np.atleast_2d(X0), np.atleast_2d(X1), mode, linear_library(1))
    path = tmp_path / name
    io.write_data(ds, path)
    return str(path)


# -- collect ----------------------------------------------------------------------

def test_collect_writes_csv_and_sidecar(scalar, capsys):
    tmp_path, _, data = scalar
    lines = (tmp_path / "data.csv").read_text().splitlines()
    assert lines[0] == "k,x1,u1,x1p"
    assert len(lines) == 3
    meta = json.loads((tmp_path / "data.meta.json").read_text())
    assert meta["N"] == 2 and meta["library"] == "x1"
    ds = io.load_data(data)
    np.testing.assert_array_equal(ds.X1, [[2.0, 5.0]])


def test_collect_missing_plant(tmp_path):
    exp = write(tmp_path / "experiment.json", SCALAR_EXPERIMENT)
    assert cli.main(["collect", "--plant", str(tmp_path / "nope.json"), "--experiment", exp,
                     "--out", str(tmp_path / "d.csv")]) == cli.EXIT_CONFIG


def test_collect_zero_samples(tmp_path):
    plant = write(tmp_path / "plant.json", SCALAR_PLANT)
    exp = write(tmp_path / "experiment.json", {"runs": [{"x0": [1.0], "samples": 0}]})
    assert cli.main(["collect", "--plant", plant, "--experiment", exp,
                     "--out", str(tmp_path / "d.csv")]) == cli.EXIT_CONFIG


def test_collect_bad_library(tmp_path):
    plant = write(tmp_path / "plant.json", dict(SCALAR_PLANT, library="x1 +"))
    exp = write(tmp_path / "experiment.json", SCALAR_EXPERIMENT)
    assert cli.main(["collect", "--plant", plant, "--experiment", exp,
                     "--out", str(tmp_path / "d.csv")]) == cli.EXIT_CONFIG


def test_collect_divergence(tmp_path):
    plant = write(tmp_path / "plant.json", dict(SCALAR_PLANT, A=[[10.0]]))
    exp = write(tmp_path / "experiment.json", {"runs": [{"x0": [1.0], "samples": 20}]})
    assert cli.main(["collect", "--plant", plant, "--experiment", exp,
                     "--out", str(tmp_path / "d.csv")]) == cli.EXIT_DIVERGENCE


# -- check --------------------------------------------------------------------------

def test_check_full_rank(scalar, capsys):
    _, _, data = scalar
    assert cli.main(["check", "--data", data]) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["attainable_set_nonempty"] and report["data_equals_model_attainable"]


def test_check_zero_Z0(tmp_path):
    data = save_data(tmp_path, "zero.csv", [[0.0, 1.0]], [[0.0, 0.0]], [[0.0, 1.0]])
    assert cli.main(["check", "--data", data]) == cli.EXIT_CHECK


def test_check_deficient_stack_warns(tmp_path, capsys):
    data = save_data(tmp_path, "dup.csv", [[1.0, 2.0]], [[1.0, 2.0]], [[3.0, 6.0]])
    assert cli.main(["check", "--data", data]) == 0
    assert "rank deficient" in capsys.readouterr().err


def test_check_missing_sidecar(tmp_path):
    (tmp_path / "orphan.csv").write_text("k,x1,u1,x1p\n0,1,0,2\n")
    assert cli.main(["check", "--data", str(tmp_path / "orphan.csv")]) == cli.EXIT_CONFIG


# -- synth --------------------------------------------------------------------------

def test_synth_model_reference(scalar, capsys):
    tmp_path, _, data = scalar
    obj = write(tmp_path / "obj.json", {"kind": "model_reference", "A_bar": [[0.5]], "B_bar": [[1.0]]})
    out = tmp_path / "controller.json"
    assert cli.main(["synth", "--objective", obj, "--data", data, "--out", str(out)]) == 0
    ctrl = io.load_controller(out)
    assert ctrl.K[0, 0] == pytest.approx(-1.5, abs=1e-10)
    assert ctrl.K_r[0, 0] == pytest.approx(1.0, abs=1e-10)
    doc = json.loads(out.read_text())
    assert doc["K"]["shape"] == [1, 1]
    assert doc["certificate"]["kind"] == "exact_match"


def test_synth_oscillator_reports_mu(tmp_path, capsys):
    plant = write(tmp_path / "plant.json", {
        "n": 2, "m": 1, "mode": "discrete", "library": "x1; x2; x2^3; sin(x1); x1*x2",
        "A": [[1.0, 1.0, 0, 0, 0], [0.3, 0.5, -0.2, 0.7, -0.4]], "B": [[0.0], [1.0]]})
    exp = write(tmp_path / "exp.json", {"runs": [{"x0": [0.1 * k, -0.2 + 0.15 * k], "samples": 2,
                                                  "input": {"kind": "random", "seed": k}} for k in range(4)]})
    data = str(tmp_path / "d.csv")
    assert cli.main(["collect", "--plant", plant, "--experiment", exp, "--out", data]) == 0
    obj = write(tmp_path / "obj.json", {"kind": "oscillator", "mu_lo": 0.5, "mu_hi": 2.0})
    assert cli.main(["synth", "--objective", obj, "--data", data, "--out", str(tmp_path / "c.json")]) == 0
    assert "mu = " in capsys.readouterr().out


def test_synth_infeasible(tmp_path, capsys):
    plant = write(tmp_path / "plant.json", {"n": 1, "m": 1, "mode": "discrete", "library": "x1; x1^2; x1^3",
                                            "A": [[0.5, 1.0, 1.0]], "B": [[1.0]]})
    exp = write(tmp_path / "exp.json", {"runs": [{"x0": [0.3], "samples": 2, "input": {"kind": "random"}}]})
    data = str(tmp_path / "d.csv")
    cli.main(["collect", "--plant", plant, "--experiment", exp, "--out", data])
    obj = write(tmp_path / "obj.json", {"kind": "nonlinearity_cancellation"})
    assert cli.main(["synth", "--objective", obj, "--data", data, "--out", str(tmp_path / "c.json")]) == cli.EXIT_INFEASIBLE
    assert "infeasible" in capsys.readouterr().err
    assert not (tmp_path / "c.json").exists()


def test_synth_not_attainable(tmp_path):
    data = save_data(tmp_path, "dup.csv", [[1.0, 1.0]], [[1.0, 1.0]], [[3.0, 3.0]])
    obj = write(tmp_path / "obj.json", {"kind": "model_reference", "A_bar": [[0.5]], "B_bar": [[1.0]]})
    assert cli.main(["synth", "--objective", obj, "--data", data,
                     "--out", str(tmp_path / "c.json")]) == cli.EXIT_NOT_ATTAINABLE


def test_synth_precondition(scalar):
    tmp_path, _, data = scalar
    obj = write(tmp_path / "obj.json", {"kind": "diagonal_stabilization"})
    assert cli.main(["synth", "--objective", obj, "--data", data,
                     "--out", str(tmp_path / "c.json")]) == cli.EXIT_PRECONDITION


def test_synth_bad_objective(scalar):
    tmp_path, _, data = scalar
    obj = write(tmp_path / "obj.json", {"kind": "telepathy"})
    assert cli.main(["synth", "--objective", obj, "--data", data,
                     "--out", str(tmp_path / "c.json")]) == cli.EXIT_CONFIG


def test_synth_recheck_failure_blocks_output(scalar, monkeypatch):
    from ddsynth.verification import Check, VerificationReport

    tmp_path, _, data = scalar
    monkeypatch.setattr(cli, "recheck_certificate", lambda *a, **k: VerificationReport([Check("forced", False, -1.0)]))
    obj = write(tmp_path / "obj.json", {"kind": "model_reference", "A_bar": [[0.5]], "B_bar": [[1.0]]})
    assert cli.main(["synth", "--objective", obj, "--data", data,
                     "--out", str(tmp_path / "c.json")]) == cli.EXIT_CHECK
    assert not (tmp_path / "c.json").exists()


def test_dump_lmi_flag(scalar):
    tmp_path, _, data = scalar
    obj = write(tmp_path / "obj.json", {"kind": "nonlinearity_cancellation"})
    dump = tmp_path / "lmi.json"
    assert cli.main(["synth", "--dump-lmi", str(dump), "--objective", obj, "--data", data,
                     "--out", str(tmp_path / "c.json")]) == 0
    assert json.loads(dump.read_text())["variables"]


# -- verify --------------------------------------------------------------------------

def synth_deadbeat(tmp_path, data):
    obj = write(tmp_path / "obj.json", {"kind": "model_reference", "A_bar": [[0.0]], "B_bar": [[1.0]]})
    ctrl = tmp_path / "c.json"
    assert cli.main(["synth", "--objective", obj, "--data", data, "--out", str(ctrl)]) == 0
    return ctrl


def test_verify_deadbeat_all_pass(scalar):
    tmp_path, plant, data = scalar
    ctrl = synth_deadbeat(tmp_path, data)
    report = tmp_path / "report.json"
    traj = tmp_path / "traj.csv"
    assert cli.main(["verify", "--controller", str(ctrl), "--data", data, "--plant", plant,
                     "--out", str(report), "--trajectory", str(traj)]) == 0
    doc = json.loads(report.read_text())
    assert doc["pass"] and doc["seed"] == 0 and "eq_tol" in doc["tolerances"]
    assert traj.read_text().splitlines()[0] == "t,x1,u1,r1"


def test_verify_corrupted_gain(scalar, capsys):
    tmp_path, plant, data = scalar
    ctrl = synth_deadbeat(tmp_path, data)
    doc = json.loads(ctrl.read_text())
    doc["K"]["data"][0] += 0.01
    ctrl.write_text(json.dumps(doc))
    assert cli.main(["verify", "--controller", str(ctrl), "--data", data,
                     "--out", str(tmp_path / "r.json")]) == cli.EXIT_CHECK
    assert "FAIL  U0G=K" in capsys.readouterr().out


def test_verify_passivation_with_sine_inputs(tmp_path):
    data = save_data(tmp_path, "c.csv", [[0.0, 1.0]], [[1.0, 1.0]], [[1.0, 2.0]], mode="continuous")
    obj = write(tmp_path / "obj.json", {"kind": "passivation", "M": [[1.0]], "m_r": 1})
    ctrl = str(tmp_path / "ctrl.json")
    assert cli.main(["synth", "--objective", obj, "--data", data, "--out", ctrl]) == 0
    sim = write(tmp_path / "sim.json", {"runs": 20, "h": 0.01, "steps": 200, "reference": {"kind": "sine"}})
    report = tmp_path / "r.json"
    assert cli.main(["verify", "--controller", ctrl, "--data", data, "--sim", sim, "--out", str(report)]) == 0
    names = {c["name"]: c for c in json.loads(report.read_text())["checks"]}
    assert names["dissipation"]["pass"] and names["dissipation"]["samples"] == 20


def test_verify_missing_controller(scalar):
    tmp_path, _, data = scalar
    assert cli.main(["verify", "--controller", str(tmp_path / "none.json"), "--data", data,
                     "--out", str(tmp_path / "r.json")]) == cli.EXIT_CONFIG


# -- reproducibility and configuration ---------------------------------------------------

def test_end_to_end_byte_identical(scalar):
    tmp_path, plant, data = scalar
    obj = write(tmp_path / "obj.json", {"kind": "nonlinearity_cancellation"})
    outs = []
    for k in range(2):
        ctrl = tmp_path / f"c{k}.json"
        rep = tmp_path / f"r{k}.json"
        assert cli.main(["synth", "--objective", obj, "--data", data, "--out", str(ctrl)]) == 0
        assert cli.main(["verify", "--controller", str(ctrl), "--data", data, "--plant", plant,
                         "--out", str(rep)]) == 0
        outs.append((ctrl.read_bytes(), rep.read_bytes()))
    assert outs[0] == outs[1]


def test_environment_overrides(monkeypatch):
    monkeypatch.setenv("DDSYNTH_EQ_TOL", "1e-6")
    monkeypatch.setenv("DDSYNTH_SEED", "42")
    args = cli.build_parser().parse_args(["check", "--data", "x.csv"])
    assert args.eq_tol == 1e-6 and args.seed == 42
    args = cli.build_parser().parse_args(["check", "--data", "x.csv", "--seed", "7"])
    assert args.seed == 7


def test_global_flags_before_subcommand():
    args = cli.build_parser().parse_args(["--epsilon", "1e-4", "check", "--data", "x.csv"])
    assert args.epsilon == 1e-4


def test_console_script_entry_point(scalar):
    _, _, data = scalar
    proc = subprocess.run([sys.executable, "-m", "ddsynth.cli", "check", "--data", data],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    assert '"rank_Z0": 1' in proc.stdout
