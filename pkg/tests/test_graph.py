import numpy as np
import pytest
from hypothesis import given, strategies as st

from orliczlab.conjugate import conjugate_for
from orliczlab.errors import InputError
from orliczlab.graph import (CoercivityParams, GraphSamplePlan, MollifiedSelection, PotentialGraph, RadialGraph,
                             Selection, TabulatedGraph, ValueSet, coercivity_margin, identity_graph,
                             inverse_mollified_selection_eval, mollified_selection_eval, power_potential,
                             sign_jump_graph, verify_graph_axioms)
from orliczlab.nfunc import SpatialDomain, power

X0 = np.array([0.5])


def test_value_set_geometry():
    seg = ValueSet("segment", np.array([-1.0]), np.array([1.0]))
    assert seg.contains([0.3]) and not seg.contains([1.5])
    assert np.isclose(seg.distance([3.0]), 2.0)
    assert np.allclose(seg.min_norm(), [0.0]) and np.allclose(seg.project([-4.0]), [-1.0])
    ball = ValueSet("ball", np.array([0.0, 0.0]), radius=2.0)
    assert np.allclose(ball.project([3.0, 4.0]), [1.2, 1.6])
    assert np.isinf(ValueSet("empty").distance([0.0]))
    with pytest.raises(InputError):
        ValueSet("empty").min_norm()


def test_sign_jump_value_sets_and_rules():
    g = sign_jump_graph(1, base_slope=2.0, jump=1.0)
    vs = g.value_set(0.0, X0, [0.0])
    assert vs.contains([0.9]) and vs.contains([-1.0]) and not vs.contains([1.1])
    assert np.allclose(g.select(0.0, X0, np.array([[0.5], [-0.5], [0.0]])), [[2.0], [-2.0], [0.0]])
    assert np.allclose(g.inverse_select(0.0, X0, np.array([[0.5], [3.0]])), [[0.0], [1.0]])


def test_radial_jump_segment_2d():
    g = RadialGraph(2, "s + step(s - 1)", [(1.0, 1.0, 2.0)])
    vs = g.value_set(0.0, np.array([0.5, 0.5]), [0.0, 1.0])
    assert vs.kind == "segment"
    assert vs.contains([0.0, 1.5]) and not vs.contains([1.5, 0.0])


def test_radial_rejects_inconsistent_jumps_and_decreasing_profiles():
    with pytest.raises(InputError):
        RadialGraph(1, "s", [(1.0, 1.0, 2.0)])
    with pytest.raises(InputError):
        RadialGraph(1, "2 - s", [])


def test_tabulated_graph_and_inverse():
    g = TabulatedGraph([[(-1.0, -2.0), (0.0, -1.0), (0.0, 1.0), (1.0, 2.0)]])
    assert g.value_set(0.0, X0, [0.0]).contains([0.2])
    assert np.allclose(g.select(0.0, X0, np.array([[0.5], [-2.0]])), [[1.5], [-3.0]])
    inv = g.inverse_graph()
    assert np.allclose(inv.select(0.0, X0, np.array([[1.5]])), [[0.5]])
    with pytest.raises(InputError):
        TabulatedGraph([[(0.0, 1.0), (1.0, 0.0)]])


def test_gamma_scales_values():
    g = identity_graph(1, gamma="1 + t")
    assert np.allclose(g.select(np.array([1.0]), np.array([[0.2]]), np.array([[3.0]])), [[6.0]])
    with pytest.raises(InputError):
        identity_graph(1, gamma=-1.0)


def test_potential_graph_numeric_gradient_and_inverse():
    g = PotentialGraph(1, lambda xi: np.sum(xi ** 4, -1) / 4)
    assert np.allclose(g.select(0.0, X0, np.array([[2.0]])), [[8.0]], rtol=1e-6)
    assert np.allclose(g.inverse_select(0.0, X0, np.array([[8.0]])), [[2.0]], rtol=1e-6)


def _plan():
    return GraphSamplePlan.default(1, (1.0,))


def test_identity_graph_axioms_pass(unit1):
    nf = power(unit1, 2, 0.5)
    rep = verify_graph_axioms(identity_graph(1), CoercivityParams(1.0, 0.0, nf), conjugate_for(nf), _plan())
    assert rep.passed
    assert "no maximality violation found" in rep.notes


def test_non_maximal_relation_is_flagged(unit1):
    nf = power(unit1, 2, 0.5)
    g = TabulatedGraph([[(-5, -5), (-1, -1)], [(1, 1), (5, 5)]])
    rep = verify_graph_axioms(g, CoercivityParams(1.0, 0.0, nf), conjugate_for(nf), _plan())
    assert not rep.verdicts["maximality"]
    assert "maximality violation detected" in rep.notes


def test_non_monotone_potential_fails(unit1):
    nf = power(unit1, 2, 0.5)
    g = PotentialGraph(1, lambda xi: -np.sum(xi ** 2, -1))
    rep = verify_graph_axioms(g, CoercivityParams(1.0, 0.0, nf), conjugate_for(nf), _plan())
    assert not rep.verdicts["monotonicity"]


def test_coercivity_needs_k_for_sign_jump(unit1):
    nf = power(unit1, 2, 0.5)
    cj = conjugate_for(nf)
    g = sign_jump_graph(1)
    ok = verify_graph_axioms(g, CoercivityParams(0.5, 1.0, nf), cj, _plan())
    assert ok.passed
    cubic = verify_graph_axioms(power_potential(1, 4.0), CoercivityParams(1.0, 0.0, nf), cj, _plan())
    assert not cubic.verdicts["coercivity"]


def test_mollified_identity_is_exact():
    ms = MollifiedSelection(Selection(identity_graph(1)), 0.3)
    xi = np.linspace(-4, 4, 101)[:, None]
    assert np.allclose(mollified_selection_eval(ms, 0.0, X0, xi), xi, atol=1e-12)
    ms2 = MollifiedSelection(Selection(identity_graph(2)), 0.2)
    xi2 = np.random.default_rng(0).uniform(-2, 2, size=(20, 2))
    assert np.allclose(ms2(0.0, np.array([0.5, 0.5]), xi2), xi2, atol=1e-12)


def test_inverse_route_identity():
    ms = MollifiedSelection(Selection(identity_graph(1), inverse=True), 0.5, route="inverse")
    xi = np.linspace(-3, 3, 31)[:, None]
    assert np.allclose(inverse_mollified_selection_eval(ms, 0.0, X0, xi), xi / 1.5, atol=1e-10)


def test_route_mismatch_is_rejected():
    with pytest.raises(InputError):
        MollifiedSelection(Selection(identity_graph(1)), 0.1, route="inverse")
    ms = MollifiedSelection(Selection(identity_graph(1)), 0.1)
    with pytest.raises(InputError):
        inverse_mollified_selection_eval(ms, 0.0, X0, np.zeros((1, 1)))
    with pytest.raises(InputError):
        MollifiedSelection(Selection(identity_graph(1)), 0.0)


def test_mollified_sign_jump_is_continuous_and_odd():
    ms = MollifiedSelection(Selection(sign_jump_graph(1)), 0.2)
    xi = np.linspace(-1, 1, 2001)[:, None]
    A = ms(0.0, X0, xi)[:, 0]
    assert np.max(np.abs(np.diff(A))) < 0.02
    assert np.allclose(A, -A[::-1], atol=1e-12)
    assert abs(A[1000]) < 1e-12


@pytest.mark.parametrize("route", ["direct", "inverse"])
def test_mollified_monotone_on_random_pairs(route):
    sel = Selection(sign_jump_graph(1), inverse=route == "inverse")
    ms = MollifiedSelection(sel, 0.1, route=route)
    P = np.random.default_rng(3).uniform(-3, 3, size=(2, 500, 1))
    A1, A2 = ms(0.0, X0, P[0]), ms(0.0, X0, P[1])
    assert np.min(np.sum((A1 - A2) * (P[0] - P[1]), -1)) >= -1e-10


def test_mollified_monotone_2d_direct():
    ms = MollifiedSelection(Selection(RadialGraph(2, "s + 1")), 0.2)
    P = np.random.default_rng(4).uniform(-2, 2, size=(2, 200, 2))
    x = np.array([0.5, 0.5])
    assert np.min(np.sum((ms(0.0, x, P[0]) - ms(0.0, x, P[1])) * (P[0] - P[1]), -1)) >= -1e-10


def test_coercivity_margin_reports_location(unit1):
    nf = power(unit1, 2, 0.5)
    m, where = coercivity_margin(Selection(identity_graph(1)), CoercivityParams(1.0, 0.0, nf), conjugate_for(nf),
                                 np.linspace(-2, 2, 9)[:, None], [(0.0, X0)])
    assert abs(m) < 1e-12 and set(where) == {"t", "x", "xi", "A"}


@given(st.floats(-3, 3), st.floats(-3, 3), st.sampled_from([0.05, 0.1, 0.3]))
def test_direct_route_monotone_property(a, b, eps):
    ms = MollifiedSelection(Selection(sign_jump_graph(1, 0.5, 2.0)), eps)
    A = ms(0.0, X0, np.array([[a], [b]]))[:, 0]
    assert (A[0] - A[1]) * (a - b) >= -1e-10
