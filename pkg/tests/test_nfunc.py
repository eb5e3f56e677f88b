import numpy as np
import pytest
from hypothesis import given, strategies as st

from orliczlab.errors import DomainError, InputError
from orliczlab.nfunc import (SpatialDomain, anisotropic_paper, check_condition_M, check_delta2,
                             condition_m_pairs, custom, default_sampling_plan, eval_n_function, exponential,
                             power, variable_exponent, verify_n_function_axioms)

RADII = 2.0 ** np.arange(11)


def test_domain_defaults_and_snapping():
    d = SpatialDomain((2.0, 4.0))
    assert d.star_center == (1.0, 2.0) and d.star_radius == 1.0
    assert np.allclose(d.snap([2.0 + 1e-13, -1e-13]), [2.0, 0.0])
    with pytest.raises(DomainError):
        d.snap([2.1, 0.0])


@pytest.mark.parametrize("bad", [dict(lengths=(0.0,)), dict(lengths=(1.0, 1.0, 1.0)),
                                 dict(lengths=(1.0,), star_radius=0.7)])
def test_domain_rejects(bad):
    with pytest.raises(InputError):
        SpatialDomain(**bad)


def test_power_values(unit1):
    nf = power(unit1, 3)
    assert np.isclose(eval_n_function(nf, [0.5], [-2.0]), 8.0)
    assert np.isclose(power(unit1, 2, 0.5)(np.array([0.1]), np.array([3.0])), 4.5)


def test_eval_rejects_non_finite(unit1):
    with pytest.raises(InputError):
        eval_n_function(power(unit1, 2), [0.5], [np.nan])


def test_anisotropic_formula_and_dimension(unit1, unit2):
    nf = anisotropic_paper(unit2, 2.0, 2.0)
    a = np.array([1.0, 1.0])
    assert np.isclose(nf(np.array([0.5, 0.5]), a), np.log(1 + np.sqrt(2)) + np.e - 1)
    assert "ln(|a|+1)" in nf.formula
    with pytest.raises(InputError):
        anisotropic_paper(unit1)


def test_variable_exponent_needs_p_above_one(unit1):
    with pytest.raises(InputError):
        variable_exponent(unit1, "1 + x1/2")


@pytest.mark.parametrize("factory", [lambda d: power(d, 2), lambda d: power(d, 3.5),
                                     lambda d: variable_exponent(d, "2 + sin(x1)"), lambda d: exponential(d, 1.0)])
def test_axioms_pass_for_builtins(unit1, factory):
    rep = verify_n_function_axioms(factory(unit1), default_sampling_plan(unit1))
    assert rep.passed, rep.to_dict()


def test_quadratic_convexity_margin_nonnegative(unit1):
    rep = verify_n_function_axioms(power(unit1, 2), default_sampling_plan(unit1))
    assert rep.margins["convexity"] >= 0.0


def test_axioms_detect_violations(unit1):
    plan = default_sampling_plan(unit1)
    linear = verify_n_function_axioms(custom(unit1, "2*r"), plan)
    assert not linear.verdicts["superlinearity"]
    wavy = verify_n_function_axioms(custom(unit1, "r^2 + sin(3*r)"), plan)
    assert not wavy.verdicts["convexity"]
    shifted = verify_n_function_axioms(custom(unit1, "r^2 + 1"), plan)
    assert not shifted.verdicts["origin"]


def test_anisotropic_axioms_2d(unit2):
    rep = verify_n_function_axioms(anisotropic_paper(unit2), default_sampling_plan(unit2, n_x=4, n_a=20))
    assert rep.passed


@pytest.mark.parametrize("p", [2, 3, 4])
def test_delta2_power(unit1, p):
    rep = check_delta2(power(unit1, p), RADII, unit1.grid_points(5))
    assert rep.passed
    assert np.isclose(rep.c, 2.0 ** p, rtol=0.05)


def test_delta2_exponential_fails(unit1):
    assert not check_delta2(exponential(unit1), RADII, unit1.grid_points(5)).passed


def test_delta2_rejects_bad_radii(unit1):
    with pytest.raises(InputError):
        check_delta2(power(unit1, 2), [2.0, 1.0], unit1.grid_points(3))


def test_condition_m_classifier(unit1):
    pairs = condition_m_pairs(unit1)
    assert check_condition_M(power(unit1, 3), 4.0, pairs).passed
    assert check_condition_M(variable_exponent(unit1, "2 + x1"), 4.0, pairs).passed
    step = check_condition_M(variable_exponent(unit1, "2 + step(x1 - 0.5)"), 4.0, pairs)
    assert not step.passed and step.n_violations > 0


def test_condition_m_rejects_far_pairs(unit1):
    x = np.array([[0.0]])
    with pytest.raises(InputError):
        check_condition_M(power(unit1, 2), 4.0, (x, x + 0.9, np.array([[2.0]])))


@given(st.floats(-20, 20), st.floats(-20, 20), st.floats(0, 1))
def test_power_midpoint_convexity(u, v, x):
    d = SpatialDomain((1.0,))
    nf = power(d, 3)
    X = np.array([x])
    lhs = nf(X, np.array([(u + v) / 2]))
    rhs = 0.5 * (nf(X, np.array([u])) + nf(X, np.array([v])))
    assert lhs <= rhs * (1 + 1e-12) + 1e-12
