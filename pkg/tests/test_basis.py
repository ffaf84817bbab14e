import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ddsynth.basis import evaluate, jacobian, linear_library, parse_library
from ddsynth.exceptions import EvaluationError, LibraryError


def test_parse_van_der_pol_prefix():
    lib = parse_library("x1; x2; x2^3", 2)
    assert lib.s == 3
    assert lib.coordinate_prefix


def test_parse_linear_scalar():
    lib = parse_library("x1", 1)
    assert lib.s == 1 and lib.coordinate_prefix


def test_parse_order_mismatch_is_not_prefix():
    assert not parse_library("x2; x1", 2).coordinate_prefix


def test_newline_separator_and_power_spellings():
    lib = parse_library("x1\nx1**2; (x1 + 1)^2 - 1", 1)
    assert lib.s == 3
    np.testing.assert_allclose(evaluate(lib, [3.0]), [3.0, 9.0, 15.0])


@pytest.mark.parametrize("text, fragment", [
    ("x1; x3", "unknown variable"),
    ("x1; foo(x1)", "unsupported function"),
    ("x1; x1 +", "unexpected"),
    ("x1; (x1", "expected '\\)'"),
    ("x1; x1^-1", "non-negative integer"),
    ("x1; x1^1.5", "non-negative integer"),
    ("", "at least one"),
])
def test_parse_errors(text, fragment):
    with pytest.raises(LibraryError, match=fragment):
        parse_library(text, 2)


def test_syntax_error_reports_position():
    with pytest.raises(LibraryError) as info:
        parse_library("x1; x2 $ 3", 2)
    assert info.value.position == 7


def test_evaluate_examples():
    np.testing.assert_array_equal(evaluate(parse_library("x1; x2; x2^3", 2), [2.0, 3.0]), [2.0, 3.0, 27.0])
    np.testing.assert_array_equal(evaluate(parse_library("x1", 1), [0.0]), [0.0])
    np.testing.assert_array_equal(evaluate(parse_library("sin(x1); x1", 1), [0.0]), [0.0, 0.0])


def test_evaluate_batch_matches_pointwise():
    lib = parse_library("x1*x2; exp(x1) - cos(x2); tanh(x2)^2", 2)
    X = np.random.default_rng(0).uniform(-2, 2, (2, 7))
    batch = evaluate(lib, X)
    assert batch.shape == (3, 7)
    for k in range(7):
        np.testing.assert_allclose(batch[:, k], evaluate(lib, X[:, k]), rtol=0, atol=1e-15)


def test_evaluate_overflow_is_an_error():
    with pytest.raises(EvaluationError):
        evaluate(parse_library("exp(x1)", 1), [1000.0])


def test_jacobian_examples():
    np.testing.assert_array_equal(jacobian(parse_library("x1; x2; x2^3", 2), [0.0, 0.0]),
                                  [[1, 0], [0, 1], [0, 0]])
    np.testing.assert_array_equal(jacobian(parse_library("x1", 1), [4.2]), [[1.0]])


def test_jacobian_sin_square_at_zero_against_finite_differences():
    lib = parse_library("sin(x1); x1^2", 1)
    J = jacobian(lib, [0.0])
    h = 1e-6
    fd = (evaluate(lib, [h]) - evaluate(lib, [-h])) / (2 * h)
    np.testing.assert_allclose(J[:, 0], fd, atol=1e-6)
    np.testing.assert_array_equal(J, [[1.0], [0.0]])


def test_linear_library():
    lib = linear_library(3)
    assert lib.s == 3 and lib.coordinate_prefix
    np.testing.assert_array_equal(jacobian(lib, [1.0, 2.0, 3.0]), np.eye(3))


def test_fingerprint_depends_on_canonical_form_only():
    a = parse_library("x1;x1^2", 1)
    b = parse_library("x1 ;  x1 ^ 2", 1)
    assert a.fingerprint() == b.fingerprint()
    assert a.fingerprint() != parse_library("x1^2; x1", 1).fingerprint()


def test_canonical_round_trip():
    lib = parse_library("x1*(x2 - 1); -x1^2; sin(x1 + x2)*exp(-x2)", 2)
    again = parse_library(lib.canonical(), 2)
    X = np.random.default_rng(1).uniform(-1, 1, (2, 20))
    np.testing.assert_allclose(evaluate(again, X), evaluate(lib, X), rtol=1e-14)


# -- properties ------------------------------------------------------------------

ATOMS = ["x1", "x2", "x3", "0.5", "2"]
FUNCS = ["sin", "cos", "tanh", "exp"]


@st.composite
def expressions(draw, depth=3):
    if depth == 0 or draw(st.booleans()):
        return draw(st.sampled_from(ATOMS))
    kind = draw(st.sampled_from(["+", "-", "*", "^", "f", "neg"]))
    a = draw(expressions(depth=depth - 1))
    if kind == "^":
        return f"({a})^{draw(st.integers(0, 3))}"
    if kind == "f":
        return f"{draw(st.sampled_from(FUNCS))}(0.3*({a}))"
    if kind == "neg":
        return f"-({a})"
    b = draw(expressions(depth=depth - 1))
    return f"({a}) {kind} ({b})"


@settings(max_examples=60, deadline=None)
@given(st.lists(expressions(), min_size=1, max_size=4), st.integers(0, 2**31 - 1))
def test_jacobian_matches_central_differences(exprs, seed):
    lib = parse_library("; ".join(exprs), 3)
    rng = np.random.default_rng(seed)
    h = 1e-6
    for _ in range(5):
        x = rng.uniform(-1, 1, 3)
        J = jacobian(lib, x)
        for j in range(3):
            e = np.zeros(3)
            e[j] = h
            fd = (evaluate(lib, x + e) - evaluate(lib, x - e)) / (2 * h)
            np.testing.assert_allclose(J[:, j], fd, atol=1e-5, rtol=1e-6)


@settings(max_examples=40, deadline=None)
@given(st.lists(expressions(), min_size=2, max_size=5), st.randoms(use_true_random=False))
def test_evaluate_respects_basis_order(exprs, rnd):
    perm = list(range(len(exprs)))
    rnd.shuffle(perm)
    lib = parse_library("; ".join(exprs), 3)
    shuffled = parse_library("; ".join(exprs[i] for i in perm), 3)
    x = np.array([0.3, -0.7, 1.1])
    np.testing.assert_array_equal(evaluate(shuffled, x), evaluate(lib, x)[perm])


@settings(max_examples=40, deadline=None)
@given(st.lists(expressions(), max_size=3), st.lists(st.floats(-5, 5), min_size=3, max_size=3))
def test_prefix_flag_reproduces_state(extra, x):
    lib = parse_library("; ".join(["x1", "x2", "x3"] + extra), 3)
    assert lib.coordinate_prefix
    np.testing.assert_array_equal(evaluate(lib, x)[:3], x)
