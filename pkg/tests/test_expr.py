import numpy as np
import pytest
from hypothesis import given, strategies as st

from orliczlab.expr import ExpressionError, compile_expr, evaluate_constant, space_field, spacetime_field


def test_arithmetic_and_functions():
    e = compile_expr("2 + sin(x1)^2 - abs(x2)/4", ("x1", "x2"))
    x1, x2 = np.array([0.3, 1.0]), np.array([-2.0, 4.0])
    assert np.allclose(e(x1=x1, x2=x2), 2 + np.sin(x1) ** 2 - np.abs(x2) / 4)


def test_constants_and_power_spellings():
    assert np.isclose(evaluate_constant("pi/2"), np.pi / 2)
    assert np.isclose(evaluate_constant("2**3"), evaluate_constant("2^3"))
    assert evaluate_constant(1.5) == 1.5


def test_step_is_right_continuous():
    e = compile_expr("step(s)", ("s",))
    assert np.array_equal(e(s=np.array([-1e-9, 0.0, 2.0])), [0.0, 1.0, 1.0])


@pytest.mark.parametrize("src", ["__import__('os')", "x1.real", "[1, 2]", "foo(x1)", "y + 1", "1 if x1 else 2",
                                 "'a'"])
def test_rejects_forbidden_constructs(src):
    with pytest.raises(ExpressionError):
        compile_expr(src, ("x1",))


def test_syntax_error_is_expression_error():
    with pytest.raises(ValueError):
        compile_expr("1 +", ())


def test_constant_detection():
    assert compile_expr("2*pi", ("x1",)).is_constant()
    assert not compile_expr("x1", ("x1",)).is_constant()


def test_fields_broadcast_over_points():
    f = space_field("x1 + 10*x2", 2)
    pts = np.array([[[1.0, 2.0], [0.0, 0.5]]])
    assert f(pts).shape == (1, 2)
    assert np.allclose(f(pts), [[21.0, 5.0]])
    assert f.source == "x1 + 10*x2"
    g = spacetime_field("t*x1", 1)
    out = g(np.array([[0.0], [2.0]]), np.array([[[1.0], [3.0]]])[0])
    assert np.allclose(out, [[0.0, 0.0], [2.0, 6.0]])


@given(st.floats(-50, 50), st.floats(-50, 50))
def test_matches_python_arithmetic(a, b):
    e = compile_expr("a*b - (a + b)/3", ("a", "b"))
    assert np.isclose(e(a=a, b=b), a * b - (a + b) / 3)
