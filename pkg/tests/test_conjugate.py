import numpy as np
import pytest
from hypothesis import given, strategies as st

from orliczlab.conjugate import (ConjugateApprox, PowerConjugate, conjugate, conjugate_for, fenchel_young_gap,
                                 legendre_sup)
from orliczlab.errors import InputError
from orliczlab.nfunc import SpatialDomain, anisotropic_paper, exponential, power, variable_exponent


@pytest.mark.parametrize("p", [2.0, 3.0, 4.0, 1.5])
def test_numerical_conjugate_of_power_matches_closed_form(unit1, p):
    cj = ConjugateApprox(power(unit1, p, 1.0 / p))
    b = np.linspace(-4, 4, 81)[:, None]
    q = p / (p - 1)
    assert np.allclose(cj(np.array([0.3]), b), np.abs(b[:, 0]) ** q / q, rtol=1e-8, atol=1e-12)


def test_power_conjugate_agrees_with_numerical(unit2):
    nf = power(unit2, 3.0, 0.7)
    b = np.random.default_rng(1).uniform(-3, 3, size=(50, 2))
    x = np.array([0.2, 0.9])
    assert np.allclose(PowerConjugate(nf)(x, b), ConjugateApprox(nf)(x, b), rtol=1e-8, atol=1e-12)


def test_conjugate_for_dispatch(unit1):
    assert isinstance(conjugate_for(power(unit1, 2)), PowerConjugate)
    assert isinstance(conjugate_for(exponential(unit1)), ConjugateApprox)


def test_exponential_conjugate_closed_form(unit1):
    # (e^s - s - 1)* (b) = (1 + b) ln(1 + b) - b for b >= 0
    cj = ConjugateApprox(exponential(unit1))
    b = np.array([[0.5], [2.0], [10.0]])
    exact = (1 + b[:, 0]) * np.log1p(b[:, 0]) - b[:, 0]
    assert np.allclose(cj(np.array([0.5]), b), exact, rtol=1e-8)


def test_single_point_validation(unit1):
    cj = conjugate_for(power(unit1, 2))
    assert np.isclose(conjugate(cj, [0.5], [2.0]), 1.0)
    with pytest.raises(InputError):
        conjugate(cj, [0.5], [np.inf])
    with pytest.raises(InputError):
        conjugate(cj, [0.5], [1.0, 2.0])


def test_legendre_sup_returns_maximizer(unit1):
    nf = power(unit1, 2, 0.5)
    val, arg = legendre_sup(nf, np.array([[0.5]]), np.array([[3.0]]))
    assert np.isclose(val[0], 4.5) and np.isclose(arg[0, 0], 3.0, atol=1e-6)


def test_biconjugate_recovers_variable_exponent(unit1):
    nf = variable_exponent(unit1, "2 + x1")
    cj = ConjugateApprox(nf)
    a = np.linspace(-2, 2, 9)[:, None]
    x = np.array([0.4])
    assert np.allclose(cj.biconjugate(x, a), nf(x, a), rtol=1e-6, atol=1e-10)


def test_biconjugate_anisotropic_small_grid(unit2):
    nf = anisotropic_paper(unit2)
    cj = ConjugateApprox(nf)
    u = np.linspace(-1, 1, 4)
    a = np.stack(np.meshgrid(u, u, indexing="ij"), -1).reshape(-1, 2)
    x = np.array([0.5, 0.5])
    assert np.allclose(cj.biconjugate(x, a), nf(x, a), rtol=1e-6)


def test_conjugate_midpoint_convexity(unit1):
    cj = ConjugateApprox(variable_exponent(unit1, "3 - x1"))
    b = np.linspace(-3, 3, 41)[:, None]
    v = cj(np.array([0.7]), b)
    assert np.all(v[2:] - 2 * v[1:-1] + v[:-2] >= -1e-9)


@given(st.floats(0, 1), st.floats(-5, 5), st.floats(-5, 5))
def test_fenchel_young_nonnegative(x, a, b):
    d = SpatialDomain((1.0,))
    nf = variable_exponent(d, "2 + sin(x1)")
    gap = fenchel_young_gap(nf, ConjugateApprox(nf), np.array([x]), np.array([a]), np.array([b]))
    assert gap >= -1e-8


def test_fenchel_young_equality_at_gradient(unit1):
    nf = power(unit1, 3, 1 / 3)
    a = np.array([1.7])
    b = np.abs(a) ** 2 * np.sign(a)
    assert abs(fenchel_young_gap(nf, conjugate_for(nf), np.array([0.5]), a, b)) < 1e-12
