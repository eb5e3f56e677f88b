import numpy as np
import pytest
from hypothesis import given, strategies as st

from orliczlab.conjugate import conjugate_for
from orliczlab.errors import InputError
from orliczlab.modular import (ScalarField, SpaceTimeGrid, VectorField, field_from_csv, field_to_csv,
                               holder_pairing_check, luxemburg_norm, modular, modular_convergence,
                               simple_approximation, tail_mass_table)
from orliczlab.nfunc import SpatialDomain, exponential, power


@pytest.fixture
def grid(unit1):
    return SpaceTimeGrid(unit1, 1.0, 4, (16,))


def const(grid, c):
    return grid.vector(lambda t, x: np.full(np.broadcast_shapes(t.shape, x.shape[:-1]) + (grid.dim,), c))


def test_grid_geometry(unit2):
    g = SpaceTimeGrid(unit2, 2.0, 5, (4, 8))
    assert g.shape == (5, 4, 8)
    assert np.isclose(g.dt, 0.4)
    assert np.allclose(g.h, [0.25, 0.125])
    assert np.isclose(g.integrate(np.ones(g.shape)), 2.0)


def test_grid_rejects_single_time_cell(unit1):
    with pytest.raises(InputError):
        SpaceTimeGrid(unit1, 1.0, 1, (8,))


def test_modular_of_constant(grid, unit1):
    assert np.isclose(modular(power(unit1, 2), const(grid, 2.0)), 4.0)


def test_luxemburg_norm_of_constant(grid, unit1):
    # rho(3/lam) = 9/lam^2 = 1 at lam = 3
    assert np.isclose(luxemburg_norm(power(unit1, 2), const(grid, 3.0)), 3.0, rtol=1e-9)
    assert luxemburg_norm(power(unit1, 2), const(grid, 0.0)) == 0.0


def test_modular_domain_mismatch(grid):
    with pytest.raises(InputError):
        modular(power(SpatialDomain((2.0,)), 2), const(grid, 1.0))


def test_field_validation(grid):
    with pytest.raises(InputError):
        VectorField(grid, np.zeros((4, 16)))
    with pytest.raises(InputError):
        ScalarField(grid, np.full(grid.shape, np.nan))


def test_holder_pairing(grid, unit1):
    nf = power(unit1, 2)
    xi = grid.vector(lambda t, x: np.sin(3 * x) + t[..., None])
    eta = grid.vector(lambda t, x: np.cos(x) * (1 + 0 * t[..., None]))
    rep = holder_pairing_check(nf, conjugate_for(nf), xi, eta)
    assert rep.bound_holds and rep.ratio <= 2.0


def test_modular_convergence_of_shrinking_perturbations(grid, unit1):
    z = grid.vector(lambda t, x: np.sin(np.pi * x) * (1 + 0 * t[..., None]))
    seq = [VectorField(grid, z.values + 2.0 ** -k) for k in range(1, 8)]
    rep = modular_convergence(power(unit1, 2), seq, z, lam=1.0)
    assert rep.passed
    assert np.all(np.diff(rep.modulars) < 0)


def test_tail_mass_is_monotone_in_cutoff(grid, unit1):
    fields = [const(grid, 1.0), grid.vector(lambda t, x: 5 * x * (1 + 0 * t[..., None]))]
    tails = tail_mass_table(exponential(unit1), fields, [0.1, 1.0, 10.0, 100.0])
    assert np.all(np.diff(tails) <= 0)


def test_simple_approximation_improves(grid, unit1):
    xi = grid.vector(lambda t, x: np.sin(2 * np.pi * x) * (1 + t[..., None]))
    errs = [e for _, e in simple_approximation(power(unit1, 2), xi, [1, 2, 4])]
    assert errs[0] > errs[1] > errs[2]


def test_csv_round_trip(tmp_path, grid):
    xi = grid.vector(lambda t, x: np.exp(x) * (t[..., None] + 1 / 3))
    path = tmp_path / "f.csv"
    field_to_csv(xi, path)
    back = field_from_csv(path, grid)
    assert np.array_equal(back.values, xi.values)
    u = ScalarField(grid, np.pi * xi.values[..., 0])
    field_to_csv(u, tmp_path / "u.csv")
    assert np.array_equal(field_from_csv(tmp_path / "u.csv", grid).values, u.values)


@given(st.floats(-3, 3), st.floats(-3, 3), st.sampled_from([0.25, 0.5, 0.75]))
def test_modular_convexity_in_the_field(a, b, theta):
    d = SpatialDomain((1.0,))
    g = SpaceTimeGrid(d, 1.0, 2, (8,))
    nf = power(d, 3)
    xi = g.vector(lambda t, x: a * x * (1 + 0 * t[..., None]))
    eta = g.vector(lambda t, x: b * (1 - x) * (1 + 0 * t[..., None]))
    mix = VectorField(g, theta * xi.values + (1 - theta) * eta.values)
    assert modular(nf, mix) <= theta * modular(nf, xi) + (1 - theta) * modular(nf, eta) + 1e-12
