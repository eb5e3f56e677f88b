"""Modulars, Luxemburg norms and modular-convergence diagnostics on space-time grids.

Every integral over ``Q = (0, T) x Omega`` uses the same midpoint rule on
cell centers, so identities between quantities computed in different
modules are consistent to round-off.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import InputError
from .nfunc import SpatialDomain

__all__ = [
    "SpaceTimeGrid",
    "ScalarField",
    "VectorField",
    "SimpleField",
    "modular",
    "luxemburg_norm",
    "holder_pairing_check",
    "HolderReport",
    "ModularConvergenceReport",
    "modular_convergence",
    "simple_approximation",
    "field_to_csv",
    "field_from_csv",
    "DEFAULT_LAMBDAS",
    "TAU_GRID",
]

DEFAULT_LAMBDAS = (4.0, 2.0, 1.0, 0.5, 0.25)
TAU_GRID = (1e-1, 1e-2, 1e-3)


@dataclass(frozen=True)
class SpaceTimeGrid:
    domain: SpatialDomain
    T: float
    nt: int
    nx: tuple

    def __post_init__(self):
        nx = tuple(int(v) for v in np.atleast_1d(self.nx))
        if len(nx) != self.domain.dim:
            raise InputError(f"need {self.domain.dim} spatial resolutions, got {nx}")
        if self.T <= 0:
            raise InputError("horizon T must be positive")
        if self.nt < 2 or min(nx) < 2:
            raise InputError("all resolutions must be >= 2")
        object.__setattr__(self, "nx", nx)
        object.__setattr__(self, "T", float(self.T))
        object.__setattr__(self, "nt", int(self.nt))

    @property
    def dim(self):
        return self.domain.dim

    @property
    def dt(self):
        return self.T / self.nt

    @property
    def h(self):
        return tuple(L / n for L, n in zip(self.domain.lengths, self.nx))

    @property
    def space_measure(self) -> float:
        return float(np.prod(self.h))

    @property
    def cell_measure(self) -> float:
        return self.dt * self.space_measure

    @property
    def shape(self):
        return (self.nt,) + self.nx

    @property
    def t_centers(self):
        return (np.arange(self.nt) + 0.5) * self.dt

    def axis_centers(self, i):
        return (np.arange(self.nx[i]) + 0.5) * self.h[i]

    @property
    def x_centers(self) -> np.ndarray:
        """Spatial cell centers, shape ``nx + (d,)``."""
        axes = [self.axis_centers(i) for i in range(self.dim)]
        return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)

    def scalar(self, fn) -> "ScalarField":
        """Sample ``fn(t, x)`` at cell centers."""
        t = self.t_centers.reshape((-1,) + (1,) * self.dim)
        return ScalarField(self, np.broadcast_to(fn(t, self.x_centers[None]), self.shape).astype(float))

    def vector(self, fn) -> "VectorField":
        """Sample ``fn(t, x)`` returning (..., d) at cell centers."""
        t = self.t_centers.reshape((-1,) + (1,) * self.dim)
        vals = fn(t, self.x_centers[None])
        return VectorField(self, np.broadcast_to(vals, self.shape + (self.dim,)).astype(float))

    def integrate(self, values) -> float:
        return float(np.sum(values) * self.cell_measure)


@dataclass(frozen=True)
class ScalarField:
    grid: SpaceTimeGrid
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != self.grid.shape:
            raise InputError(f"scalar field shape {v.shape} != grid {self.grid.shape}")
        if not np.all(np.isfinite(v)):
            raise InputError("scalar field has non-finite entries")
        object.__setattr__(self, "values", v)


@dataclass(frozen=True)
class VectorField:
    grid: SpaceTimeGrid
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != self.grid.shape + (self.grid.dim,):
            raise InputError(f"vector field shape {v.shape} != grid {self.grid.shape + (self.grid.dim,)}")
        if not np.all(np.isfinite(v)):
            raise InputError("vector field has non-finite entries")
        object.__setattr__(self, "values", v)

    def __sub__(self, other):
        return VectorField(self.grid, self.values - other.values)

    def scaled(self, c):
        return VectorField(self.grid, self.values * c)


@dataclass(frozen=True)
class SimpleField:
    """Piecewise-constant field: ``labels`` assigns every grid cell to a block G_j."""

    grid: SpaceTimeGrid
    labels: np.ndarray         # int array of grid.shape
    levels: np.ndarray         # (n_blocks, d)

    def __post_init__(self):
        if self.labels.shape != self.grid.shape:
            raise InputError("labels must cover every grid cell")
        if len(self.levels) < 1 or self.labels.min() < 0 or self.labels.max() >= len(self.levels):
            raise InputError("labels must index the levels array")

    @property
    def n_blocks(self):
        return len(self.levels)

    def to_vector(self) -> VectorField:
        return VectorField(self.grid, self.levels[self.labels])


def _spatial_points(grid):
    return grid.x_centers[None]


def _integrand(nf, fld: VectorField):
    return nf(_spatial_points(fld.grid), fld.values)


def modular(nf, xi: VectorField) -> float:
    """``rho(xi) = int_Q M(x, xi)`` by the midpoint rule."""
    if tuple(nf.domain.lengths) != tuple(xi.grid.domain.lengths):
        raise InputError("N-function domain does not match the field's grid")
    return xi.grid.integrate(_integrand(nf, xi))


def luxemburg_norm(nf, xi: VectorField, tol=1e-10, bracket=(1e-8, 1e8)) -> float:
    """``inf{lam > 0 : rho(xi / lam) <= 1}`` by geometric bisection."""
    if not np.any(xi.values):
        return 0.0

    def rho(lam):
        return modular(nf, xi.scaled(1.0 / lam))

    lo, hi = bracket
    for _ in range(60):
        if rho(hi) <= 1.0:
            break
        hi *= 1e4
    else:
        raise OverflowError("modular stays above 1 for every probed lambda")
    for _ in range(60):
        if rho(lo) > 1.0:
            break
        lo *= 1e-4
    else:
        return 0.0
    while hi / lo - 1.0 > tol:
        mid = np.sqrt(lo * hi)
        if rho(mid) <= 1.0:
            hi = mid
        else:
            lo = mid
    return float(hi)


@dataclass
class HolderReport:
    pairing: float
    norm_xi: float
    dual_norm_eta: float
    ratio: float
    bound_holds: bool


def holder_pairing_check(nf, cj, xi: VectorField, eta: VectorField, factor=2.0, tol=1e-6) -> HolderReport:
    """Compare ``int xi.eta`` with ``factor * ||xi||_M ||eta||_M*`` (Luxemburg norms)."""
    if xi.grid != eta.grid:
        raise InputError("fields must share a grid")
    pairing = xi.grid.integrate(np.sum(xi.values * eta.values, axis=-1))
    n1 = luxemburg_norm(nf, xi)
    n2 = luxemburg_norm(cj, eta)
    denom = n1 * n2
    ratio = abs(pairing) / denom if denom > 0 else 0.0
    return HolderReport(pairing, n1, n2, ratio, bool(abs(pairing) <= factor * denom + tol))


@dataclass
class ModularConvergenceReport:
    lam: float
    modulars: np.ndarray
    tau_grid: tuple
    exceedance: np.ndarray              # (n_seq, n_tau) measure of {|z_j - z| > tau}
    cutoffs: np.ndarray
    tail_mass: np.ndarray               # sup_j int_{M >= R} M, per cutoff
    passed: bool
    notes: list = field(default_factory=list)

    def to_dict(self):
        return {
            "lambda": self.lam,
            "modulars": self.modulars.tolist(),
            "tau_grid": list(self.tau_grid),
            "exceedance": self.exceedance.tolist(),
            "cutoffs": self.cutoffs.tolist(),
            "tail_mass": self.tail_mass.tolist(),
            "passed": self.passed,
        }


def tail_mass_table(nf, fields, cutoffs, lam=1.0):
    """``sup_j int_{M(x, z_j/lam) >= R} M(x, z_j/lam)`` for each cutoff ``R``."""
    cutoffs = np.asarray(cutoffs, dtype=float)
    out = np.zeros(len(cutoffs))
    for f in fields:
        m = _integrand(nf, f.scaled(1.0 / lam))
        for i, R in enumerate(cutoffs):
            out[i] = max(out[i], f.grid.integrate(np.where(m >= R, m, 0.0)))
    return out


def modular_convergence(nf, sequence, z: VectorField, lam: float, tol=1e-2,
                        cutoffs=(1.0, 10.0, 100.0, 1e3, 1e4)) -> ModularConvergenceReport:
    """Diagnostics for ``rho((z_j - z) / lam) -> 0``.

    Verdict: the last modular is below ``tol`` and no larger than the first.
    """
    if lam <= 0:
        raise InputError("lambda must be positive")
    for s in sequence:
        if s.grid != z.grid:
            raise InputError("all fields must share one grid")
    diffs = [s - z for s in sequence]
    mods = np.array([modular(nf, d.scaled(1.0 / lam)) for d in diffs])
    w = z.grid.cell_measure
    exceed = np.array([[np.sum(np.sqrt(np.sum(d.values ** 2, axis=-1)) > tau) * w for tau in TAU_GRID]
                       for d in diffs])
    tails = tail_mass_table(nf, diffs, cutoffs, lam)
    passed = bool(len(mods) > 0 and np.isfinite(mods[-1]) and mods[-1] < tol and mods[-1] <= mods[0])
    return ModularConvergenceReport(lam, mods, TAU_GRID, exceed, np.asarray(cutoffs, float), tails, passed)


def _block_labels(n_cells, blocks):
    """Map cell index -> block index for ``blocks`` near-equal contiguous blocks."""
    edges = np.linspace(0, n_cells, blocks + 1).round().astype(int)
    return np.searchsorted(edges, np.arange(n_cells), side="right") - 1


def simple_approximation(nf, xi: VectorField, levels, lam=1.0):
    """Cell-average approximations on ``n`` blocks per axis (time and space).

    Returns ``[(SimpleField, rho((xi - xi_n) / lam)), ...]`` in the order of
    ``levels``.
    """
    levels = list(levels)
    if any(b >= a for a, b in zip(levels[1:], levels[:-1])):
        raise InputError("levels must be increasing")
    g = xi.grid
    out = []
    for n in levels:
        if n < 1 or n > min(g.shape):
            raise InputError(f"cannot coarsen {g.shape} into {n} blocks per axis")
        per_axis = [_block_labels(s, n) for s in g.shape]
        mesh = np.meshgrid(*per_axis, indexing="ij")
        labels = np.ravel_multi_index(mesh, (n,) * len(g.shape))
        flat = labels.reshape(-1)
        vals = xi.values.reshape(-1, g.dim)
        counts = np.bincount(flat, minlength=n ** len(g.shape)).astype(float)
        sums = np.stack([np.bincount(flat, vals[:, k], minlength=len(counts)) for k in range(g.dim)], -1)
        means = sums / np.maximum(counts, 1.0)[:, None]
        sf = SimpleField(g, labels, means)
        err = modular(nf, (xi - sf.to_vector()).scaled(1.0 / lam))
        out.append((sf, err))
    return out


# ---------------------------------------------------------------------------
# CSV round trip


def _fmt(v):
    return format(float(v), ".17g")


def field_to_csv(fld, path):
    """One row per cell: ``t, x1[, x2]`` then ``c1[, c2]`` (vector) or ``u`` (scalar),
    written with 17 significant digits."""
    g = fld.grid
    vector = isinstance(fld, VectorField)
    vals = fld.values if vector else fld.values[..., None]
    ncomp = vals.shape[-1]
    names = [f"c{i + 1}" for i in range(ncomp)] if vector else ["u"]
    t = g.t_centers
    X = g.x_centers.reshape(-1, g.dim)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t"] + [f"x{i + 1}" for i in range(g.dim)] + names)
        flat = vals.reshape(g.nt, -1, ncomp)
        for m in range(g.nt):
            for j in range(len(X)):
                w.writerow([_fmt(t[m])] + [_fmt(v) for v in X[j]] + [_fmt(v) for v in flat[m, j]])


def field_from_csv(path, grid: SpaceTimeGrid):
    """Load a field written by :func:`field_to_csv` onto ``grid``."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    ncomp = len(header) - 1 - grid.dim
    data = np.array(body, dtype=float)
    if len(data) != grid.nt * int(np.prod(grid.nx)):
        raise InputError("row count does not match the grid")
    coords = data[:, : 1 + grid.dim]
    X = grid.x_centers.reshape(-1, grid.dim)
    expect = np.concatenate([np.repeat(grid.t_centers, len(X))[:, None], np.tile(X, (grid.nt, 1))], 1)
    if not np.allclose(coords, expect, rtol=1e-14, atol=1e-14):
        raise InputError("cell coordinates do not match the grid")
    vals = data[:, 1 + grid.dim:].reshape(grid.shape + (ncomp,))
    if header[-1] == "u":
        return ScalarField(grid, vals[..., 0])
    return VectorField(grid, vals)
