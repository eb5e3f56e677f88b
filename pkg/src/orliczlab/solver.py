"""Galerkin solver for ``u_t - div A = f`` with a mollified graph selection.

Space: the first ``n`` Dirichlet-Laplacian eigenfunctions of the box
(products of sines), sampled at cell centers, where they are exactly
orthonormal under the midpoint rule.  Time: implicit Euler, each step
solved by a damped fixed-point iteration preconditioned with the Galerkin
tangent ``I + dt J``.

Fields reconstructed from a trajectory are piecewise constant in time:
time cell ``m`` carries ``u^{m+1}`` and ``A^{m+1}``, matching the scheme.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .conjugate import conjugate_for
from .errors import ConvergenceError, InputError, OrliczLabError, ParameterError
from .expr import space_field, spacetime_field
from .graph import CoercivityParams, MollifiedSelection, Selection, _element_samples
from .modular import ScalarField, SpaceTimeGrid, VectorField, luxemburg_norm
from .mollify import Kernel, _smoothstep, time_mollify
from .nfunc import SpatialDomain

__all__ = [
    "ProblemSpec",
    "GalerkinBasis",
    "GalerkinSystem",
    "Trajectory",
    "EnergyReport",
    "InclusionReport",
    "TestFunction",
    "RefinementReport",
    "assemble_galerkin",
    "integrate",
    "energy_report",
    "weak_residual",
    "builtin_test_functions",
    "minty_inclusion_check",
    "refinement_study",
]


def _as_spacetime(f, dim):
    if callable(f):
        return f
    if isinstance(f, str):
        return spacetime_field(f, dim)
    c = float(f)
    return lambda t, x, c=c: np.full(np.broadcast_shapes(np.shape(t), np.shape(x)[:-1]), c)


@dataclass
class ProblemSpec:
    """Data of one initial-boundary value problem on a box."""

    domain: SpatialDomain
    nx: tuple
    T: float
    u0: object
    f: object
    selection: Selection
    nf: object
    cp: CoercivityParams = None

    def __post_init__(self):
        d = self.domain.dim
        self.nx = tuple(int(v) for v in np.atleast_1d(self.nx))
        if len(self.nx) != d:
            raise InputError("nx must give one resolution per axis")
        if self.selection.dim != d:
            raise InputError("graph dimension does not match the domain")
        probe = SpaceTimeGrid(self.domain, self.T, 2, self.nx)
        x = probe.x_centers
        u0 = self.u0
        if isinstance(u0, str):
            vals = space_field(u0, d)(x)
        elif callable(u0):
            vals = np.asarray(u0(x), dtype=float)
        else:
            vals = np.asarray(u0, dtype=float)
        if vals.ndim == 0:
            vals = np.full(self.nx, float(vals))
        if vals.shape != self.nx:
            raise InputError(f"u0 samples must have shape {self.nx}")
        if not np.all(np.isfinite(vals)):
            raise InputError("u0 is not finite on the grid")
        self.u0_values = np.broadcast_to(vals, self.nx).astype(float)
        self.f_fn = _as_spacetime(self.f, d)
        tt = np.linspace(0.0, self.T, 33).reshape((-1,) + (1,) * d)
        fv = np.asarray(self.f_fn(tt, x[None]), dtype=float)
        if not np.all(np.isfinite(fv)):
            raise InputError("source f is not finite on the grid")
        self.f_sup = float(np.max(np.abs(fv)))

    @property
    def dim(self):
        return self.domain.dim

    @property
    def graph(self):
        return self.selection.graph

    def grid(self, nt) -> SpaceTimeGrid:
        return SpaceTimeGrid(self.domain, self.T, nt, self.nx)


class GalerkinBasis:
    """Dirichlet eigenfunctions ``omega_i`` on the box, lowest eigenvalues first."""

    def __init__(self, domain: SpatialDomain, nx, n: int):
        nx = tuple(int(v) for v in np.atleast_1d(nx))
        if n < 1:
            raise ParameterError("basis size n must be >= 1")
        L = domain.lengths
        ranges = [range(1, m // 2 + 1) for m in nx]
        modes = [(i,) for i in ranges[0]] if domain.dim == 1 else [(i, j) for i in ranges[0] for j in ranges[1]]
        lam = lambda k: sum((ki * math.pi / Li) ** 2 for ki, Li in zip(k, L))  # noqa: E731
        modes.sort(key=lambda k: (lam(k), k))
        if n > len(modes):
            raise ParameterError(f"n = {n} exceeds the alias-free bound N_x/2 per axis for grid {nx}")
        self.domain = domain
        self.nx = nx
        self.n = n
        self.modes = modes[:n]
        self.eigenvalues = np.array([lam(k) for k in self.modes])
        grid = SpaceTimeGrid(domain, 1.0, 2, nx)
        self.h = grid.h
        self.cell = grid.space_measure
        x = grid.x_centers
        norm = math.sqrt(np.prod([2.0 / Li for Li in L]))
        phi = np.empty((n,) + nx)
        grad = np.empty((n,) + nx + (domain.dim,))
        for m, k in enumerate(self.modes):
            s = [np.sin(ki * math.pi * x[..., a] / L[a]) for a, ki in enumerate(k)]
            c = [ki * math.pi / L[a] * np.cos(ki * math.pi * x[..., a] / L[a]) for a, ki in enumerate(k)]
            phi[m] = norm * np.prod(s, axis=0)
            for a in range(domain.dim):
                others = [s[b] for b in range(domain.dim) if b != a]
                grad[m, ..., a] = norm * c[a] * (np.prod(others, axis=0) if others else 1.0)
        self.phi = phi
        self.grad = grad

    def gram(self):
        P = self.phi.reshape(self.n, -1)
        return P @ P.T * self.cell

    def stiffness(self):
        G = self.grad.reshape(self.n, -1)
        return G @ G.T * self.cell

    def project(self, values):
        """Coefficients of the grid-quadrature projection; leading axes allowed."""
        values = np.asarray(values, dtype=float)
        axes = tuple(range(values.ndim - len(self.nx), values.ndim))
        return np.tensordot(values, self.phi, axes=(axes, tuple(range(1, 1 + len(self.nx))))) * self.cell

    def reconstruct(self, c):
        return np.tensordot(np.asarray(c, dtype=float), self.phi, axes=(-1, 0))

    def gradient(self, c):
        return np.tensordot(np.asarray(c, dtype=float), self.grad, axes=(-1, 0))

    def weak_divergence(self, A):
        """``(int A . grad omega_j)_j`` for fluxes ``A`` of shape ``(..., nx..., d)``."""
        d = len(self.nx)
        axes = tuple(range(A.ndim - d - 1, A.ndim))
        return np.tensordot(A, self.grad, axes=(axes, tuple(range(1, d + 2)))) * self.cell


class GalerkinSystem:
    """Galerkin ODE system ``c' = load(t) - N(t, c)`` with ``A^eps`` wired in."""

    def __init__(self, problem: ProblemSpec, basis: GalerkinBasis, eps: float, flux):
        self.problem = problem
        self.basis = basis
        self.eps = eps
        self.flux_map = flux
        self.x = SpaceTimeGrid(problem.domain, problem.T, 2, problem.nx).x_centers
        self.c0 = basis.project(problem.u0_values)

    @property
    def n(self):
        return self.basis.n

    def load(self, t):
        return self.basis.project(self.problem.f_fn(np.asarray(t, float), self.x))

    def flux(self, t, c):
        return self.flux_map(t, self.x, self.basis.gradient(c))

    def nonlinearity(self, t, c):
        return self.basis.weak_divergence(self.flux(t, c))

    def tangent(self, t, c):
        """``J_ij = int grad omega_i . D(x) grad omega_j`` with ``D = dA/dxi`` at the cells."""
        xi = self.basis.gradient(c)
        D = _slopes(self.flux_map, t, self.x, xi, self.eps)
        d = xi.shape[-1]
        G = self.basis.grad.reshape(self.n, -1, d)
        return np.einsum("ipa,pab,jpb->ij", G, D.reshape(-1, d, d), G, optimize=True) * self.basis.cell


def _slopes(fn, t, x, xi, eps):
    d = xi.shape[-1]
    h = 1e-4 * max(eps, 1e-3)
    out = np.empty(xi.shape + (d,))
    for k in range(d):
        e = np.zeros(d)
        e[k] = h
        out[..., :, k] = (fn(t, x, xi + e) - fn(t, x, xi - e)) / (2 * h)
    return out


def assemble_galerkin(p: ProblemSpec, n: int, eps: float, route="direct", kernel=None,
                      resolution=33) -> GalerkinSystem:
    """Basis, load, projection of ``u0`` and the mollified flux ``A^eps``."""
    if not eps > 0:
        raise ParameterError("eps must be positive")
    basis = GalerkinBasis(p.domain, p.nx, n)
    sel = p.selection
    if route == "inverse" and not sel.inverse:
        sel = Selection(sel.graph, sel.rule, inverse=True)
    ms = MollifiedSelection(sel, eps, kernel or Kernel(p.dim), route, resolution)
    return GalerkinSystem(p, basis, eps, ms)


# ---------------------------------------------------------------------------
# time stepping


@dataclass
class Trajectory:
    system: GalerkinSystem
    dt: float
    coeffs: np.ndarray
    iterations: np.ndarray
    residuals: np.ndarray
    _flux: np.ndarray = field(default=None, repr=False)

    @property
    def nsteps(self):
        return len(self.coeffs) - 1

    @property
    def times(self):
        return np.arange(self.nsteps + 1) * self.dt

    @property
    def grid(self) -> SpaceTimeGrid:
        return self.system.problem.grid(self.nsteps)

    def u_nodes(self):
        return self.system.basis.reconstruct(self.coeffs)

    def u_field(self) -> ScalarField:
        return ScalarField(self.grid, self.system.basis.reconstruct(self.coeffs[1:]))

    def grad_field(self) -> VectorField:
        return VectorField(self.grid, self.system.basis.gradient(self.coeffs[1:]))

    def flux_values(self):
        if self._flux is None:
            xi = self.system.basis.gradient(self.coeffs[1:])
            t = self.times[1:].reshape((-1,) + (1,) * self.system.problem.dim)
            out = np.empty_like(xi)
            step = max(1, 2 ** 16 // int(np.prod(self.system.problem.nx)))
            for s in range(0, self.nsteps, step):
                out[s:s + step] = self.system.flux_map(t[s:s + step], self.system.x[None], xi[s:s + step])
            self._flux = out
        return self._flux

    def flux_field(self) -> VectorField:
        return VectorField(self.grid, self.flux_values())

    def with_flux(self, values) -> "Trajectory":
        """Copy with the flux replaced (used to probe the inclusion diagnostics)."""
        return replace(self, _flux=np.asarray(values, dtype=float))

    def to_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(["t"] + [f"c{i + 1}" for i in range(self.system.n)])
            for t, c in zip(self.times, self.coeffs):
                wr.writerow([format(float(t), ".17g")] + [format(float(v), ".17g") for v in c])


def _steps(T, dt):
    if not dt > 0:
        raise ParameterError("dt must be positive")
    n = int(round(T / dt))
    if n < 1 or abs(n * dt - T) > 1e-9 * T:
        raise ParameterError(f"dt = {dt:g} does not divide T = {T:g}")
    return n


def integrate(sys: GalerkinSystem, dt: float, tol=1e-12, max_iter=200, damping=0.5) -> Trajectory:
    """Implicit Euler with a damped, tangent-preconditioned fixed-point solve per step.

    The damping starts at ``damping``, is halved whenever a trial step
    increases the residual and doubled (up to 1) after an accepted step.
    """
    T = sys.problem.T
    N = _steps(T, dt)
    dt = T / N
    n = sys.n
    C = np.empty((N + 1, n))
    C[0] = sys.c0
    iters = np.zeros(N, dtype=int)
    res = np.zeros(N)
    eye = np.eye(n)
    for m in range(N):
        t1 = (m + 1) * dt
        b = sys.load(t1)
        c = C[m].copy()

        def G(v):
            return v - C[m] - dt * (b - sys.nonlinearity(t1, v))

        g = G(c)
        r = float(np.linalg.norm(g))
        scale = 1.0 + float(np.linalg.norm(C[m])) + dt * float(np.linalg.norm(b))
        omega = damping
        history = [r]
        it = 0
        while r > tol * scale:
            if it >= max_iter or omega < 1e-10:
                raise ConvergenceError(f"step {m + 1} did not converge",
                                       {"step": m + 1, "t": t1, "residuals": history, "damping": omega})
            P = eye + dt * sys.tangent(t1, c)
            try:
                d = np.linalg.solve(P, g)
            except np.linalg.LinAlgError:
                d = g
            trial = c - omega * d
            gt = G(trial)
            rt = float(np.linalg.norm(gt))
            if rt < r:
                c, g, r = trial, gt, rt
                omega = min(1.0, 2.0 * omega)
            else:
                omega *= 0.5
            history.append(r)
            it += 1
        C[m + 1] = c
        iters[m] = it
        res[m] = r
    return Trajectory(sys, dt, C, iters, res)


# ---------------------------------------------------------------------------
# energy


@dataclass
class EnergyReport:
    times: np.ndarray
    energy: np.ndarray              # ||u^m||^2 / 2 at nodes
    dissipation: np.ndarray         # dt <A, grad u> per step
    work: np.ndarray                # dt <f, u> per step
    mm_integral: np.ndarray         # dt int (M + M*) per step
    k_integral: np.ndarray          # dt int k per step
    margins: np.ndarray             # per-step energy inequality margin
    coercivity_margins: np.ndarray  # per-step <A, grad u> + int k - c* int (M + M*)
    balance_gap: float
    lhs: float
    data_norm: float
    ratio: float
    equicontinuity: dict
    mollified_energy_gap: float
    notes: list = field(default_factory=list)

    def passed(self, tol=1e-8) -> bool:
        return bool(len(self.margins) == 0 or self.margins.min() >= -tol)

    def energy_monotone(self, tol=1e-12) -> bool:
        return bool(np.all(np.diff(self.energy) <= tol * (1 + self.energy[:-1])))

    def to_dict(self):
        return {
            "min_margin": float(self.margins.min()) if len(self.margins) else 0.0,
            "min_coercivity_margin": float(self.coercivity_margins.min()) if len(self.margins) else 0.0,
            "balance_gap": self.balance_gap, "lhs": self.lhs, "data_norm": self.data_norm,
            "ratio": self.ratio, "dissipation_total": float(self.dissipation.sum()),
            "mm_total": float(self.mm_integral.sum()), "work_total": float(self.work.sum()),
            "equicontinuity": {k: [list(map(float, r)) for r in v] for k, v in self.equicontinuity.items()},
            "mollified_energy_gap": self.mollified_energy_gap, "notes": self.notes,
        }

    def to_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(["t", "energy", "dissipation", "work", "mm_integral", "k_integral", "margin",
                         "coercivity_margin"])
            for m in range(len(self.margins)):
                row = [self.times[m + 1], self.energy[m + 1], self.dissipation[m], self.work[m],
                       self.mm_integral[m], self.k_integral[m], self.margins[m], self.coercivity_margins[m]]
                wr.writerow([format(float(v), ".17g") for v in row])


def _modulus(values, dt, reduce):
    """Cumulative-max modulus over dyadic lags: rows ``(lag, L(lag))``."""
    N = len(values) - 1
    rows, best = [], 0.0
    k = 1
    while k <= max(1, N // 2) and k <= N:
        best = max(best, reduce(values[k:], values[:-k]))
        rows.append((k * dt, best))
        k *= 2
    return rows


def energy_report(traj: Trajectory, p: ProblemSpec = None, cj=None, eps_t=None) -> EnergyReport:
    """Discrete energy balance, coercivity propagation and equicontinuity moduli."""
    sys = traj.system
    p = p or sys.problem
    cj = cj or conjugate_for(p.nf)
    dt = traj.dt
    C = traj.coeffs
    N = traj.nsteps
    grid = traj.grid
    d = p.dim
    energy = 0.5 * np.sum(C * C, axis=1)
    A = traj.flux_values()
    xi = sys.basis.gradient(C[1:])
    Nc = sys.basis.weak_divergence(A)
    dissipation = dt * np.sum(Nc * C[1:], axis=1)
    loads = np.stack([sys.load((m + 1) * dt) for m in range(N)]) if N else np.zeros((0, sys.n))
    work = dt * np.sum(loads * C[1:], axis=1)
    X = sys.x[None]
    cell = sys.basis.cell
    spatial_axes = tuple(range(1, 1 + d))
    mm = dt * cell * np.sum(p.nf(X, xi) + cj(X, A), axis=spatial_axes)
    tt = traj.times[1:].reshape((-1,) + (1,) * d)
    if p.cp is not None:
        kint = dt * cell * np.sum(np.broadcast_to(p.cp.k_at(tt, X), (N,) + p.nx), axis=spatial_axes)
        c_star = p.cp.c_star
    else:
        kint = np.zeros(N)
        c_star = 1.0
    margins = work - (energy[1:] - energy[:-1] + dissipation)
    coercivity = dissipation + kint - c_star * mm
    balance_gap = float(energy[-1] - energy[0] + dissipation.sum() - work.sum())
    u0_norm2 = float(np.sum(p.u0_values ** 2) * cell)
    data = u0_norm2 + p.f_sup + float(kint.sum())
    lhs = float(2.0 * energy.max() + c_star * mm.sum())
    ratio = lhs / data if data > 0 else float("nan")
    equi = {
        "coefficients": _modulus(C, dt, lambda a, b: float(np.max(np.linalg.norm(a - b, axis=1)))),
        "flux_l1": _modulus(A, dt, lambda a, b: float(dt * cell * np.sum(np.sqrt(np.sum((a - b) ** 2, -1))))),
    }
    notes = []
    gap = float("nan")
    if N >= 8:
        eps_t = eps_t if eps_t is not None else max(2.0 * dt, p.T / 16)
        if eps_t < p.T / 4:
            e_cells = ScalarField(grid, np.broadcast_to(energy[1:].reshape((-1,) + (1,) * d), grid.shape))
            sm, valid = time_mollify(e_cells, eps_t)
            sl = (slice(None),) + (0,) * d
            gap = float(np.max(np.abs(sm.values[sl] - e_cells.values[sl])[valid])) if valid.any() else float("nan")
        else:
            notes.append("horizon too short for the time-mollified cross-check")
    return EnergyReport(traj.times, energy, dissipation, work, mm, kint, margins, coercivity, balance_gap,
                        lhs, data, ratio, equi, gap, notes)


# ---------------------------------------------------------------------------
# weak form


@dataclass(frozen=True)
class TestFunction:
    """``phi(t, x) = theta(t) psi(x)`` with ``psi`` a sine mode.

    ``kind="cutoff"``: theta = 1 up to ``a``, smooth decay to 0 at ``b``.
    ``kind="bump"``: theta is a smooth bump supported in ``(a, b)``.
    """

    __test__ = False

    mode: tuple
    kind: str = "cutoff"
    a: float = 0.25
    b: float = 0.75

    @property
    def name(self):
        return f"{self.kind}[{self.a:g},{self.b:g}]x" + "sin" + "".join(map(str, self.mode))

    def theta(self, t):
        t = np.asarray(t, dtype=float)
        if self.kind == "cutoff":
            tau = (t - self.a) / (self.b - self.a)
            return 1.0 - _smoothstep(tau), -_dsmooth(tau) / (self.b - self.a)
        s = (2.0 * t - self.a - self.b) / (self.b - self.a)
        inside = np.abs(s) < 1
        q = np.where(inside, 1.0 - s * s, 1.0)
        val = np.where(inside, np.exp(1.0 - 1.0 / q), 0.0)
        dval = np.where(inside, val * (-2.0 * s / (q * q)) * 2.0 / (self.b - self.a), 0.0)
        return val, dval


def _dsmooth(tau):
    tau = np.asarray(tau, dtype=float)
    inside = (tau > 0) & (tau < 1)
    ts = np.where(inside, tau, 0.5)
    f = np.exp(-1.0 / ts)
    g = np.exp(-1.0 / (1.0 - ts))
    val = f * g * (1.0 / ts ** 2 + 1.0 / (1.0 - ts) ** 2) / (f + g) ** 2
    return np.where(inside, val, 0.0)


def builtin_test_functions(T, dim):
    modes = [(1,), (2,), (3,)] if dim == 1 else [(1, 1), (2, 1), (1, 2)]
    out = []
    for k in modes:
        out.append(TestFunction(k, "cutoff", 0.25 * T, 0.75 * T))
        out.append(TestFunction(k, "bump", 0.2 * T, 0.8 * T))
    return out


_GAUSS_X, _GAUSS_W = np.polynomial.legendre.leggauss(3)


def weak_residual(traj: Trajectory, p: ProblemSpec = None, test_fns=None):
    """Residual ``int_Q (-u phi_t + A.grad phi - f phi) - int u0 phi(0)`` per test function.

    ``u`` is piecewise linear in time between nodes, ``A`` piecewise
    constant per time cell; time integrals use 3-point Gauss-Legendre per
    cell and space integrals the midpoint rule with analytic gradients.
    Returns a list of dicts with ``name``, ``residual`` and ``scale``.
    """
    sys = traj.system
    p = p or sys.problem
    T = p.T
    d = p.dim
    test_fns = builtin_test_functions(T, d) if test_fns is None else list(test_fns)
    dt, N = traj.dt, traj.nsteps
    L = p.domain.lengths
    x = sys.x
    cell = sys.basis.cell
    U = traj.u_nodes()
    A = traj.flux_values()
    tq = (np.arange(N)[:, None] + 0.5 * (1 + _GAUSS_X)[None]) * dt  # (N, 3)
    sq = 0.5 * (1 + _GAUSS_X)
    wq = 0.5 * _GAUSS_W * dt
    tshape = (-1,) + (1,) * d
    fq = np.asarray(p.f_fn(tq.reshape(tshape), x[None]), dtype=float).reshape((N, 3) + p.nx) if N else None
    rows = []
    for phi in test_fns:
        if len(phi.mode) != d or any(k < 1 or k > m // 2 for k, m in zip(phi.mode, p.nx)):
            raise InputError(f"test mode {phi.mode} is not resolved on grid {p.nx}")
        if phi.b >= T or phi.a >= phi.b:
            raise InputError(f"test function {phi.name} is not compactly supported in (-inf, T)")
        s = [np.sin(k * math.pi * x[..., a] / L[a]) for a, k in enumerate(phi.mode)]
        c = [k * math.pi / L[a] * np.cos(k * math.pi * x[..., a] / L[a]) for a, k in enumerate(phi.mode)]
        psi = np.prod(s, axis=0)
        gpsi = np.stack([c[a] * np.prod([s[b] for b in range(d) if b != a] or [1.0], axis=0) for a in range(d)], -1)
        th, dth = phi.theta(tq)
        th0, _ = phi.theta(np.array(0.0))
        a_nodes = np.sum(U * psi, axis=tuple(range(1, 1 + d))) * cell
        g_cells = np.sum(A * gpsi, axis=tuple(range(1, 2 + d))) * cell
        u_q = a_nodes[:-1, None] * (1 - sq) + a_nodes[1:, None] * sq
        term_t = -np.sum(u_q * dth * wq)
        term_a = np.sum(g_cells[:, None] * th * wq)
        term_0 = float(th0) * float(np.sum(p.u0_values * psi) * cell)
        f_psi = np.sum(fq * psi, axis=tuple(range(2, 2 + d))) * cell if N else np.zeros((0, 3))
        term_f = np.sum(f_psi * th * wq)
        res = term_t + term_a - term_0 - term_f
        scale = float(np.sum(np.abs(dth) * wq) * np.sum(np.abs(psi)) * cell
                      + np.sum(np.abs(th) * wq) * np.sum(np.linalg.norm(gpsi, axis=-1)) * cell)
        rows.append({"name": phi.name, "residual": float(res), "scale": scale})
    return rows


# ---------------------------------------------------------------------------
# inclusion


@dataclass
class InclusionReport:
    min_margin: float
    location: dict
    negative_fraction: float
    membership_max: float
    membership_mean: float
    pairing: float
    tol: float
    verdict: bool
    notes: list = field(default_factory=list)

    def to_dict(self):
        return {k: getattr(self, k) for k in ("min_margin", "location", "negative_fraction", "membership_max",
                                              "membership_mean", "pairing", "tol")} | {
            "verdict": "pass" if self.verdict else "fail", "notes": self.notes}


def minty_inclusion_check(traj: Trajectory, p: ProblemSpec = None, cj=None, xi_points=None, tol=0.0,
                          chunk=2 ** 21) -> InclusionReport:
    """Monotonicity margins of ``(grad u, A)`` against sampled graph elements, per cell.

    Also reports the distance of ``A`` to the value set at ``grad u``; this
    membership test catches corruptions that the margins alone can miss.
    """
    sys = traj.system
    p = p or sys.problem
    g = p.graph
    d = p.dim
    xi = traj.grad_field().values
    A = traj.flux_values()
    if xi_points is None:
        R = 1.1 * float(np.max(np.abs(xi))) + 1.0
        if d == 1:
            xi_points = np.linspace(-R, R, 81)[:, None]
        else:
            u = np.linspace(-R, R, 21)
            xi_points = np.stack(np.meshgrid(u, u, indexing="ij"), -1).reshape(-1, 2)
    base = g.gamma
    g.gamma = None
    try:
        E_xi, E_A = _element_samples(g, 0.0, np.zeros(d), xi_points)
    finally:
        g.gamma = base
    t = traj.times[1:].reshape((-1,) + (1,) * d)
    X = sys.x[None]
    gam = g._g(t, X, A.shape[:-1]) if g.gamma is not None else None
    flat_xi = xi.reshape(-1, d)
    flat_A = A.reshape(-1, d)
    flat_g = None if gam is None else np.broadcast_to(gam, A.shape[:-1]).reshape(-1)
    per = max(1, chunk // max(1, len(E_xi)))
    worst = np.empty(len(flat_xi))
    for s in range(0, len(flat_xi), per):
        sl = slice(s, s + per)
        EA = E_A[None] if flat_g is None else flat_g[sl, None, None] * E_A[None]
        m = np.sum((flat_A[sl, None] - EA) * (flat_xi[sl, None] - E_xi[None]), axis=-1)
        worst[sl] = m.min(axis=1)
    k = int(np.argmin(worst))
    idx = np.unravel_index(k, A.shape[:-1])
    loc = {"t": float(traj.times[1 + idx[0]]), "x": sys.x[idx[1:]].tolist(),
           "grad_u": flat_xi[k].tolist(), "A": flat_A[k].tolist()}
    member = g.membership_distance(t, X, xi, A)
    pairing = float(np.sum(A * xi) * traj.grid.cell_measure)
    min_margin = float(worst[k])
    return InclusionReport(min_margin, loc, float(np.mean(worst < -tol)), float(np.max(member)),
                           float(np.mean(member)), pairing, float(tol), bool(min_margin >= -tol))


# ---------------------------------------------------------------------------
# refinement


@dataclass
class RefinementReport:
    params: list                   # [(n, eps, dt)] in run order
    status: dict                   # param -> "ok" or failure message
    axis_differences: dict         # axis -> list of L2(Q) differences
    axis_ratios: dict
    grad_norms: dict               # param -> Luxemburg norm of grad u
    flux_norms: dict               # param -> Luxemburg norm of A (conjugate modular)
    pairings: dict
    energy_ratios: dict
    min_energy_margins: dict
    inclusion: dict                # param -> InclusionReport
    verdict: bool
    notes: list = field(default_factory=list)

    def to_rows(self):
        for prm in self.params:
            yield {"n": prm[0], "eps": prm[1], "dt": prm[2], "status": self.status[prm],
                   "grad_norm": self.grad_norms.get(prm, float("nan")),
                   "flux_norm": self.flux_norms.get(prm, float("nan")),
                   "pairing": self.pairings.get(prm, float("nan")),
                   "energy_ratio": self.energy_ratios.get(prm, float("nan")),
                   "min_energy_margin": self.min_energy_margins.get(prm, float("nan")),
                   "min_inclusion_margin": (self.inclusion[prm].min_margin if prm in self.inclusion
                                            else float("nan"))}

    def to_dict(self):
        return {"rows": list(self.to_rows()), "axis_differences": self.axis_differences,
                "axis_ratios": self.axis_ratios, "verdict": "pass" if self.verdict else "fail",
                "notes": self.notes}


def _l2q(ua, ub, dt, cell):
    diff = ua - ub
    return float(math.sqrt(dt * cell * np.sum(diff[1:] ** 2)))


def refinement_study(p: ProblemSpec, n_list, eps_list, dt_list, cj=None, route="direct",
                     ratio_bound=0.7, uniform_factor=2.0, inclusion_factor=None, tol=1e-12,
                     resolution=33) -> RefinementReport:
    """Product study over ``(n, eps, dt)`` with Cauchy-type and uniform-bound diagnostics.

    For each parameter axis the other two are held at their finest values;
    successive ``L2(Q)`` differences of ``u`` (compared at the nodes of the
    coarsest time step) must shrink by at least ``ratio_bound``.  With
    ``inclusion_factor`` set, every run also gets a Minty check at tolerance
    ``inclusion_factor * eps``.
    """
    n_list, eps_list, dt_list = list(n_list), list(eps_list), list(dt_list)
    if not (n_list and eps_list and dt_list):
        raise InputError("refinement lists must be non-empty")
    if n_list != sorted(n_list) or eps_list != sorted(eps_list, reverse=True) or dt_list != sorted(dt_list, reverse=True):
        raise InputError("lists must be sorted toward refinement (n up, eps and dt down)")
    dtc = dt_list[0]
    strides = {}
    for dt in dt_list:
        s = int(round(dtc / dt))
        if abs(s * dt - dtc) > 1e-9 * dtc:
            raise InputError("every dt must divide the coarsest dt")
        strides[dt] = s
    cj = cj or conjugate_for(p.nf)
    nmax = max(n_list)
    params, status, samples = [], {}, {}
    gnorm, fnorm, pair, eratio, emargin, incl = {}, {}, {}, {}, {}, {}
    notes = []
    for n in n_list:
        for eps in eps_list:
            for dt in dt_list:
                prm = (n, eps, dt)
                params.append(prm)
                try:
                    sys = assemble_galerkin(p, n, eps, route, resolution=resolution)
                    traj = integrate(sys, dt, tol=tol)
                    coeffs = np.zeros((traj.nsteps + 1, nmax))
                    coeffs[:, :n] = traj.coeffs
                    samples[prm] = sys.basis.reconstruct(traj.coeffs[::strides[dt]])
                    gfield = traj.grad_field()
                    gnorm[prm] = luxemburg_norm(p.nf, gfield)
                    fnorm[prm] = luxemburg_norm(cj, traj.flux_field())
                    pair[prm] = float(np.sum(traj.flux_values() * gfield.values) * traj.grid.cell_measure)
                    er = energy_report(traj, p, cj)
                    eratio[prm] = er.ratio
                    emargin[prm] = float(er.margins.min()) if len(er.margins) else 0.0
                    if inclusion_factor is not None:
                        incl[prm] = minty_inclusion_check(traj, p, cj, tol=inclusion_factor * eps)
                    status[prm] = "ok"
                except OrliczLabError as exc:
                    status[prm] = f"failed: {exc}"
    cell = GalerkinBasis(p.domain, p.nx, 1).cell
    finest = (n_list[-1], eps_list[-1], dt_list[-1])
    axes = {"n": (0, n_list), "eps": (1, eps_list), "dt": (2, dt_list)}
    diffs, ratios = {}, {}
    ok = all(v == "ok" for v in status.values())
    if not ok:
        notes.append("some runs failed; see status")
    for name, (pos, values) in axes.items():
        seq = []
        for v in values:
            prm = list(finest)
            prm[pos] = v
            seq.append(tuple(prm))
        if any(status.get(s) != "ok" for s in seq):
            continue
        dl = [_l2q(samples[a], samples[b], dtc, cell) for a, b in zip(seq[:-1], seq[1:])]
        diffs[name] = dl
        rl = [b / a if a > 0 else (0.0 if b == 0 else float("inf")) for a, b in zip(dl[:-1], dl[1:])]
        ratios[name] = rl
        if any(r > ratio_bound for r in rl):
            ok = False
    for table, label in ((gnorm, "gradient"), (fnorm, "flux")):
        vals = [v for v in table.values() if v > 0]
        if vals and max(vals) > uniform_factor * min(vals):
            ok = False
            notes.append(f"{label} norms not uniform within factor {uniform_factor:g}")
    if incl and not all(r.verdict for r in incl.values()):
        ok = False
        notes.append("inclusion margins below tolerance")
    return RefinementReport(params, status, diffs, ratios, gnorm, fnorm, pair, eratio, emargin, incl, ok, notes)
