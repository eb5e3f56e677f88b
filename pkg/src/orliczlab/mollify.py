"""Truncation, scale-and-mollify, time mollification and the density experiment.

``S_delta`` dilates a field toward the star center of the domain by the
factor ``kappa = 1 - delta/R`` and convolves the result with a bump of
radius ``delta``:

    S_delta z(x) = kappa^-1 * sum_k w_k z(c + kappa (x - k h - c))

Off-grid reads use linear (d=1) or bilinear (d=2) interpolation between
cell centers, holding the edge value up to the boundary and extending by
zero outside the box.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import InputError, ParameterError
from .modular import ScalarField, SpaceTimeGrid, VectorField, modular

__all__ = [
    "Kernel",
    "MollifyParams",
    "truncate",
    "truncated_gradient",
    "discrete_gradient",
    "boundary_taper",
    "scale_mollify",
    "support_bounds",
    "ContinuityTable",
    "modular_continuity_constant",
    "time_convolve",
    "time_mollify",
    "DensityReport",
    "density_experiment",
]

REFERENCE_RESOLUTION = 33


def _bump(r2):
    with np.errstate(divide="ignore", over="ignore"):
        return np.where(r2 < 1.0, np.exp(-1.0 / (1.0 - np.minimum(r2, 1.0 - 1e-300))), 0.0)


class Kernel:
    """Smooth even bump ``C exp(-1/(1-|y|^2))`` supported in the unit ball.

    ``C`` makes the tensor midpoint stencil at the reference resolution sum
    to one; every discrete stencil is additionally renormalized so its
    weights sum to one exactly.
    """

    def __init__(self, dim=1):
        if dim not in (1, 2):
            raise InputError("kernel dimension must be 1 or 2")
        self.dim = dim
        pts, raw = self._tensor_points(REFERENCE_RESOLUTION)
        cell = (2.0 / REFERENCE_RESOLUTION) ** dim
        self.C = 1.0 / (raw.sum() * cell)

    def profile(self, y):
        y = np.asarray(y, dtype=float)
        return _bump(np.sum(y * y, axis=-1))

    def __call__(self, y):
        return self.C * self.profile(y)

    def _tensor_points(self, n):
        half = (n - 1) // 2
        u = (np.arange(n) - half) * (2.0 / n) if n % 2 else (np.arange(n) - (n - 1) / 2) * (2.0 / n)
        pts = np.stack(np.meshgrid(*([u] * self.dim), indexing="ij"), -1).reshape(-1, self.dim)
        return pts, self.profile(pts)

    def unit_stencil(self, resolution=REFERENCE_RESOLUTION):
        """Midpoint nodes in the unit ball and weights summing to one."""
        pts, w = self._tensor_points(int(resolution))
        keep = w > 0
        pts, w = pts[keep], w[keep]
        return pts, w / w.sum()

    def grid_stencil(self, h, radius):
        """Integer offsets ``k`` with ``|k h| < radius`` and normalized weights."""
        h = np.broadcast_to(np.asarray(h, dtype=float), (self.dim,))
        m = np.floor(radius / h).astype(int)
        axes = [np.arange(-mi, mi + 1) for mi in m]
        k = np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, self.dim)
        w = self.profile(k * h / radius)
        keep = w > 0
        if not keep.any():
            return np.zeros((1, self.dim), dtype=int), np.ones(1)
        return k[keep], w[keep] / w[keep].sum()


@dataclass(frozen=True)
class MollifyParams:
    delta: float
    R: float
    eps_t: float = None

    def __post_init__(self):
        if not self.delta > 0:
            raise ParameterError("delta must be positive")
        if self.delta >= self.R:
            raise ParameterError(f"delta = {self.delta:g} must be smaller than the star radius R = {self.R:g}")
        if self.eps_t is not None and not self.eps_t > 0:
            raise ParameterError("eps_t must be positive")

    @property
    def kappa(self):
        return 1.0 - self.delta / self.R


# ---------------------------------------------------------------------------
# truncation and gradients


def truncate(u: ScalarField, ell: float) -> ScalarField:
    if not ell > 0:
        raise ParameterError("truncation level must be positive")
    return ScalarField(u.grid, np.clip(u.values, -ell, ell))


def discrete_gradient(u: ScalarField) -> VectorField:
    """Centered differences inside, one-sided on the boundary layer."""
    g = u.grid
    comps = [np.gradient(u.values, g.h[i], axis=1 + i) for i in range(g.dim)]
    return VectorField(g, np.stack(comps, -1))


def truncated_gradient(u: ScalarField, ell: float) -> VectorField:
    """Gradient of ``T_ell u``, set to zero on cells where ``|u| > ell``."""
    grad = discrete_gradient(truncate(u, ell)).values
    grad = np.where((np.abs(u.values) > ell)[..., None], 0.0, grad)
    return VectorField(u.grid, grad)


def _smoothstep(tau):
    tau = np.clip(tau, 0.0, 1.0)
    with np.errstate(divide="ignore", over="ignore"):
        f = np.where(tau > 0, np.exp(-1.0 / np.where(tau > 0, tau, 1.0)), 0.0)
        g = np.where(tau < 1, np.exp(-1.0 / np.where(tau < 1, 1.0 - tau, 1.0)), 0.0)
    return f / (f + g)


def boundary_taper(grid: SpaceTimeGrid, zero_cells=1, ramp_cells=2):
    """Smooth cutoff on cell centers confined to the boundary layer.

    Zero within ``zero_cells`` cells of the boundary, one beyond
    ``ramp_cells`` cells, smooth in between.
    """
    if not 0 <= zero_cells < ramp_cells:
        raise ParameterError("need 0 <= zero_cells < ramp_cells")
    x = grid.x_centers
    out = np.ones(grid.nx)
    for i in range(grid.dim):
        L, h = grid.domain.lengths[i], grid.h[i]
        a, b = zero_cells * h, ramp_cells * h
        dist = np.minimum(x[..., i], L - x[..., i])
        out = out * _smoothstep((dist - a) / (b - a))
    return out


# ---------------------------------------------------------------------------
# scale and mollify


def _interp_setup(q, h, n):
    """Indices/weights for linear interpolation at positions ``q`` between centers."""
    s = q / h - 0.5
    i0 = np.floor(s).astype(int)
    f = s - i0
    lo = np.clip(i0, 0, n - 1)
    hi = np.clip(i0 + 1, 0, n - 1)
    f = np.where(i0 < 0, 0.0, np.where(i0 >= n - 1, 0.0, f))
    return lo, hi, f


def scale_mollify(z, p: MollifyParams, K: Kernel = None):
    """Apply ``S_delta`` slice by slice in time to a scalar or vector field."""
    grid = z.grid
    d = grid.dim
    K = K or Kernel(d)
    if K.dim != d:
        raise InputError("kernel dimension does not match the grid")
    if p.delta >= grid.domain.star_radius:
        raise ParameterError("delta must be smaller than the star radius of the domain")
    kappa = p.kappa
    c = np.asarray(grid.domain.star_center)
    L = np.asarray(grid.domain.lengths)
    offs, w = K.grid_stencil(grid.h, p.delta)
    vals = z.values
    vector = isinstance(z, VectorField)
    out = np.zeros_like(vals)
    x = grid.x_centers
    for k, wk in zip(offs, w):
        q = c + kappa * (x - k * np.asarray(grid.h) - c)
        inside = np.all((q >= -1e-12 * L) & (q <= L * (1 + 1e-12)), axis=-1)
        if d == 1:
            lo, hi, f = _interp_setup(q[..., 0], grid.h[0], grid.nx[0])
            if vector:
                read = vals[:, lo] * (1 - f)[None, :, None] + vals[:, hi] * f[None, :, None]
            else:
                read = vals[:, lo] * (1 - f) + vals[:, hi] * f
        else:
            l0, h0, f0 = _interp_setup(q[..., 0], grid.h[0], grid.nx[0])
            l1, h1, f1 = _interp_setup(q[..., 1], grid.h[1], grid.nx[1])
            if vector:
                f0e, f1e = f0[None, ..., None], f1[None, ..., None]
            else:
                f0e, f1e = f0[None], f1[None]
            read = ((1 - f0e) * (1 - f1e) * vals[:, l0, l1] + f0e * (1 - f1e) * vals[:, h0, l1]
                    + (1 - f0e) * f1e * vals[:, l0, h1] + f0e * f1e * vals[:, h0, h1])
        mask = inside[None, ..., None] if vector else inside[None]
        out += wk * np.where(mask, read, 0.0)
    out /= kappa
    return type(z)(grid, out)


def support_bounds(grid: SpaceTimeGrid, p: MollifyParams, inner):
    """Per-axis interval containing ``supp S_delta z`` when ``supp z`` lies in ``inner``.

    ``inner`` is a list of ``(lo, hi)`` per axis; the result accounts for the
    dilation, the stencil radius and one cell of interpolation spread.
    """
    c = grid.domain.star_center
    out = []
    for i, (lo, hi) in enumerate(inner):
        h = grid.h[i]
        a = c[i] + (lo - h - c[i]) / p.kappa - p.delta
        b = c[i] + (hi + h - c[i]) / p.kappa + p.delta
        out.append((a, b))
    return out


@dataclass
class ContinuityTable:
    deltas: list
    ratios: np.ndarray          # (n_fields, n_deltas); NaN for skipped fields
    c: np.ndarray               # max over fields per delta
    notes: list = field(default_factory=list)

    @property
    def spread(self) -> float:
        return float(np.max(self.c) / np.min(self.c))

    def to_dict(self):
        return {"deltas": list(map(float, self.deltas)), "c": self.c.tolist(),
                "ratios": np.where(np.isnan(self.ratios), None, self.ratios).tolist(), "notes": self.notes}


def modular_continuity_constant(nf, fields, deltas, K: Kernel = None) -> ContinuityTable:
    """Measured ``rho(S_delta z) / rho(z)`` per field and delta, with the max per delta."""
    if len(fields) == 0 or len(deltas) == 0:
        raise InputError("need at least one field and one delta")
    grid = fields[0].grid
    R = grid.domain.star_radius
    ratios = np.full((len(fields), len(deltas)), np.nan)
    notes = []
    for i, z in enumerate(fields):
        base = modular(nf, z)
        if base <= 0:
            notes.append(f"field {i} has zero modular and was skipped")
            continue
        for j, dl in enumerate(deltas):
            ratios[i, j] = modular(nf, scale_mollify(z, MollifyParams(dl, R), K)) / base
    if np.all(np.isnan(ratios)):
        raise InputError("every field has zero modular")
    return ContinuityTable(list(deltas), ratios, np.nanmax(ratios, axis=0), notes)


# ---------------------------------------------------------------------------
# time mollification


def time_convolve(values, weights):
    """Centered convolution along axis 0 with edge padding (zero-order hold)."""
    values = np.asarray(values, dtype=float)
    weights = np.asarray(weights, dtype=float)
    m = (len(weights) - 1) // 2
    if len(weights) % 2 != 1:
        raise InputError("time weights must have odd length")
    nt = values.shape[0]
    pad = np.concatenate([np.repeat(values[:1], m, 0), values, np.repeat(values[-1:], m, 0)])
    out = np.zeros_like(values)
    for j, wj in enumerate(weights):
        out += wj * pad[j:j + nt]
    return out


def time_weights(K1: Kernel, dt, eps_t):
    _, w = K1.grid_stencil(dt, eps_t)
    return w


def time_mollify(z, eps_t, K1: Kernel = None):
    """``K^eps * z`` in time; returns ``(field, valid)`` with ``valid`` marking ``[eps_t, T - eps_t]``."""
    grid = z.grid
    K1 = K1 or Kernel(1)
    if K1.dim != 1:
        raise InputError("time mollification needs a 1-d kernel")
    if not 0 < eps_t < grid.T / 4:
        raise ParameterError(f"eps_t = {eps_t:g} must lie in (0, T/4)")
    w = time_weights(K1, grid.dt, eps_t)
    tc = grid.t_centers
    valid = (tc >= eps_t - 1e-12) & (tc <= grid.T - eps_t + 1e-12)
    return type(z)(grid, time_convolve(z.values, w)), valid


# ---------------------------------------------------------------------------
# density experiment


@dataclass
class DensityReport:
    schedule: list
    lam: float
    errors: list
    c_measured: dict
    verdict: bool
    tol: float
    notes: list = field(default_factory=list)

    def rows(self):
        for (ell, dl), err in zip(self.schedule, self.errors):
            yield ell, dl, self.lam, err, self.c_measured.get(dl, float("nan"))

    def to_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(["ell", "delta", "lambda", "modular_error", "c_measured"])
            for row in self.rows():
                wr.writerow([format(float(v), ".17g") for v in row])

    def to_dict(self):
        return {"schedule": [list(map(float, s)) for s in self.schedule], "lambda": self.lam,
                "errors": list(map(float, self.errors)),
                "c_measured": {format(k, ".17g"): float(v) for k, v in self.c_measured.items()},
                "verdict": "pass" if self.verdict else "fail", "tol": self.tol, "notes": self.notes}

    def to_json(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)


def density_experiment(u: ScalarField, nf, schedule, lam=1.0, K: Kernel = None, tol=1e-2,
                       grad=None) -> DensityReport:
    """Modular errors ``rho((grad u - grad S_delta T_ell u)/lam)`` along a schedule of ``(ell, delta)``.

    ``grad`` defaults to :func:`discrete_gradient` of ``u`` so both sides use
    the same stencil.  The verdict needs the last error below ``tol`` and a
    non-increasing second half of the schedule.
    """
    schedule = [(float(a), float(b)) for a, b in schedule]
    if not schedule:
        raise InputError("density schedule is empty")
    if not lam > 0:
        raise ParameterError("lambda must be positive")
    R = u.grid.domain.star_radius
    params = [MollifyParams(dl, R) for _, dl in schedule]
    gu = grad if grad is not None else discrete_gradient(u)
    errors = []
    for (ell, _), p in zip(schedule, params):
        approx = scale_mollify(truncate(u, ell), p, K)
        diff = (gu - discrete_gradient(approx)).scaled(1.0 / lam)
        errors.append(modular(nf, diff))
    c_measured = {}
    notes = []
    if modular(nf, gu) > 0:
        table = modular_continuity_constant(nf, [gu], sorted({dl for _, dl in schedule}, reverse=True), K)
        c_measured = {dl: float(c) for dl, c in zip(table.deltas, table.c)}
    else:
        notes.append("zero gradient: continuity constants not measured")
    tail = errors[len(errors) // 2:]
    monotone = all(b <= a * (1 + 1e-12) + 1e-300 for a, b in zip(tail[:-1], tail[1:]))
    verdict = bool(errors[-1] < tol and monotone)
    return DensityReport(schedule, float(lam), errors, c_measured, verdict, tol, notes)
