import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ddsynth.basis import parse_library
from ddsynth.data import (
    DataSet,
    Experiment,
    InputSignal,
    PlantModel,
    Run,
    check_rank,
    collect,
    estimate_derivatives,
    matrix_rank,
    simulate_plant,
)
from ddsynth.exceptions import DivergenceError, ModelError
from ddsynth.synthesis import attainability_membership

from plants import random_data, scalar_discrete_data

LIN1 = parse_library("x1", 1)


def test_continuous_decay_matches_exponential():
    plant = PlantModel(LIN1, [[-1.0]], [[1.0]], "continuous")
    traj = simulate_plant(plant, [1.0], [[0.0]], h=0.1)
    assert traj[0, 1] == pytest.approx(np.exp(-0.1), abs=1e-6)


def test_discrete_iteration():
    plant = PlantModel(LIN1, [[2.0]], [[1.0]])
    np.testing.assert_array_equal(simulate_plant(plant, [1.0], [[0.0], [1.0]])[0], [1.0, 2.0, 5.0])


def test_zero_steps_returns_initial_state():
    plant = PlantModel(LIN1, [[2.0]], [[1.0]])
    np.testing.assert_array_equal(simulate_plant(plant, [3.0], []), [[3.0]])


def test_divergence_guard():
    plant = PlantModel(LIN1, [[10.0]], [[1.0]])
    with pytest.raises(DivergenceError):
        simulate_plant(plant, [1.0], np.zeros((20, 1)))


def test_continuous_needs_positive_step():
    plant = PlantModel(LIN1, [[-1.0]], [[1.0]], "continuous")
    with pytest.raises(ModelError):
        simulate_plant(plant, [1.0], [[0.0]])


@pytest.mark.parametrize("B", [[[0.0]], np.zeros((2, 1)), [[1.0, 2.0], [2.0, 4.0]]])
def test_plant_rejects_rank_deficient_B(B):
    B = np.asarray(B, dtype=float)
    n = B.shape[0]
    lib = parse_library("; ".join(f"x{i + 1}" for i in range(n)), n)
    with pytest.raises(ModelError, match="full column rank"):
        PlantModel(lib, np.eye(n), B)


def test_plant_rejects_wrong_A_width():
    with pytest.raises(ModelError, match="1x1"):
        PlantModel(LIN1, [[1.0, 2.0]], [[1.0]])


def test_collect_scalar_runs():
    plant = PlantModel(LIN1, [[2.0]], [[1.0]])
    exp = Experiment((Run((1.0,), InputSignal("constant", value=(0.0,)), 1),
                      Run((2.0,), InputSignal("constant", value=(1.0,)), 1)))
    data = collect(plant, exp)
    np.testing.assert_array_equal(data.U0, [[0.0, 1.0]])
    np.testing.assert_array_equal(data.Z0, [[1.0, 2.0]])
    np.testing.assert_array_equal(data.X1, [[2.0, 5.0]])


def test_collect_continuous_records_exact_derivative():
    plant = PlantModel(LIN1, [[1.0]], [[1.0]], "continuous")
    exp = Experiment((Run((1.0,), InputSignal("constant", value=(0.0,)), 1),
                      Run((1.0,), InputSignal("constant", value=(1.0,)), 1)), h=0.1)
    np.testing.assert_array_equal(collect(plant, exp).X1, [[1.0, 2.0]])


def test_collect_rejects_empty_experiment():
    plant = PlantModel(LIN1, [[2.0]], [[1.0]])
    with pytest.raises(ModelError):
        collect(plant, Experiment(()))
    with pytest.raises(ModelError):
        collect(plant, Experiment((Run((1.0,), InputSignal("constant"), 0),)))


def test_piecewise_input_too_short():
    with pytest.raises(ModelError):
        InputSignal("piecewise", values=[[1.0]]).sample(3, 1)


def test_random_input_is_seeded():
    a = InputSignal("random", seed=7, amplitude=0.3).sample(5, 2)
    np.testing.assert_array_equal(a, InputSignal("random", seed=7, amplitude=0.3).sample(5, 2))
    assert np.all(np.abs(a) <= 0.3)


def test_dataset_is_immutable_and_validated():
    data = scalar_discrete_data()
    with pytest.raises(ValueError):
        data.X1[0, 0] = 1.0
    with pytest.raises(ModelError):
        DataSet(np.zeros((1, 2)), np.zeros((1, 2)), np.zeros((1, 3)), np.zeros((1, 2)), "discrete", LIN1)


def test_derivatives_exact_for_quadratic():
    h = 0.1
    t = np.arange(11) * h
    est = estimate_derivatives(t[None, :] ** 2, h)
    np.testing.assert_allclose(est[0], 2 * t, atol=1e-10)


def test_derivatives_of_constant_are_zero():
    np.testing.assert_array_equal(estimate_derivatives(np.full((2, 5), 3.0), 0.5), np.zeros((2, 5)))


def test_derivatives_need_three_samples():
    with pytest.raises(ModelError):
        estimate_derivatives(np.zeros((1, 2)), 0.1)


def test_rank_report_full():
    rep = check_rank(scalar_discrete_data())
    assert (rep.rank_Z0, rep.rank_stack) == (1, 2)
    assert rep.attainable_nonempty and rep.data_equals_model


def test_rank_report_zero_Z0():
    data = DataSet([[0.0, 1.0]], [[0.0, 0.0]], [[0.0, 0.0]], [[0.0, 1.0]], "discrete", LIN1)
    assert not check_rank(data).attainable_nonempty


def test_rank_report_duplicated_rows():
    data = DataSet([[1.0, 2.0]], [[1.0, 2.0]], [[1.0, 2.0]], [[3.0, 6.0]], "discrete", LIN1)
    rep = check_rank(data)
    assert rep.attainable_nonempty and not rep.data_equals_model
    assert "strict subset" in rep.note


def test_matrix_rank_threshold():
    M = np.diag([1.0, 1e-12])
    assert matrix_rank(M) == 1
    assert matrix_rank(M, rtol=1e-14) == 2
    assert matrix_rank(np.zeros((2, 3))) == 0


# -- properties ------------------------------------------------------------------

@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1), st.sampled_from(["discrete", "continuous"]))
def test_collect_satisfies_data_equation(seed, mode):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 4))
    m = int(rng.integers(1, n + 1))
    s = int(rng.integers(n, n + 3))
    plant, data = random_data(rng, n, s, m, mode, cancellable=False)
    defect = data.X1 - plant.A @ data.Z0 - plant.B @ data.U0
    assert np.max(np.abs(defect)) <= 1e-10


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_data_attainable_implies_model_attainable(seed):
    # oracle: F = X1 G with Z0 G = I lies in the model set {A + B Theta}.
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 4))
    m = int(rng.integers(1, min(n, 2) + 1))
    s = int(rng.integers(n, 6))
    plant, data = random_data(rng, n, s, m, cancellable=False)
    G0 = np.linalg.pinv(data.Z0)
    N0 = np.eye(data.N) - G0 @ data.Z0
    F = data.X1 @ (G0 + N0 @ rng.standard_normal((data.N, s)))
    # model set: F - A in im B
    Theta = np.linalg.lstsq(plant.B, F - plant.A, rcond=None)[0]
    assert np.max(np.abs(plant.A + plant.B @ Theta - F)) <= 1e-8
    assert attainability_membership(F, data)[1] <= 1e-8
