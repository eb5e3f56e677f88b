"""x-dependent anisotropic N-functions and checks of their structural conditions.

An :class:`NFunction` is a callable ``M(x, a)`` that broadcasts over leading
axes: ``x`` has shape ``(..., d)`` (points of the spatial box) and ``a`` has
shape ``(..., d)``.  The checks in this module work on finite samples and
return report objects with worst-case margins instead of booleans alone.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import DomainError, InputError
from .expr import compile_expr, space_field

__all__ = [
    "SpatialDomain",
    "NFunction",
    "power",
    "variable_exponent",
    "anisotropic_paper",
    "exponential",
    "custom",
    "eval_n_function",
    "SamplingPlan",
    "AxiomReport",
    "default_sampling_plan",
    "verify_n_function_axioms",
    "Delta2Report",
    "check_delta2",
    "ConditionMReport",
    "condition_m_pairs",
    "check_condition_M",
]

SNAP_TOL = 1e-12
DELTA2_FLOOR = 1e-30


@dataclass(frozen=True)
class SpatialDomain:
    """Axis-aligned box ``[0, L_1] x ... x [0, L_d]`` with an inscribed star ball."""

    lengths: tuple
    star_center: tuple = None
    star_radius: float = None

    def __post_init__(self):
        lengths = tuple(float(v) for v in np.atleast_1d(self.lengths))
        if len(lengths) not in (1, 2):
            raise InputError(f"dimension must be 1 or 2, got {len(lengths)}")
        if any(not np.isfinite(v) or v <= 0 for v in lengths):
            raise InputError(f"box lengths must be positive, got {lengths}")
        center = self.star_center
        center = tuple(v / 2 for v in lengths) if center is None else tuple(float(v) for v in center)
        radius = min(lengths) / 2 if self.star_radius is None else float(self.star_radius)
        if len(center) != len(lengths):
            raise InputError("star_center dimension does not match the box")
        if radius <= 0 or radius > min(lengths) / 2 * (1 + 1e-12):
            raise InputError(f"star_radius must lie in (0, min(L)/2], got {radius}")
        for c, L in zip(center, lengths):
            if c - radius < -SNAP_TOL * L or c + radius > L * (1 + SNAP_TOL):
                raise InputError("star ball is not contained in the box")
        object.__setattr__(self, "lengths", lengths)
        object.__setattr__(self, "star_center", center)
        object.__setattr__(self, "star_radius", radius)

    @property
    def dim(self) -> int:
        return len(self.lengths)

    @property
    def volume(self) -> float:
        return float(np.prod(self.lengths))

    def contains(self, x, tol=SNAP_TOL) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        L = np.asarray(self.lengths)
        return np.all((x >= -tol * L) & (x <= L * (1 + tol)), axis=-1)

    def snap(self, x) -> np.ndarray:
        """Clip ``x`` into the box; raise :class:`DomainError` if it is farther than the tolerance."""
        x = np.asarray(x, dtype=float)
        if x.shape[-1:] != (self.dim,):
            raise InputError(f"point must have trailing dimension {self.dim}, got {x.shape}")
        if not np.all(np.isfinite(x)):
            raise InputError("non-finite point")
        if not np.all(self.contains(x)):
            raise DomainError(f"point {x.tolist()} outside domain box {self.lengths}")
        return np.clip(x, 0.0, np.asarray(self.lengths))

    def grid_points(self, n) -> np.ndarray:
        """Tensor grid including box corners, shape (n**d, d)."""
        axes = [np.linspace(0.0, L, n) for L in self.lengths]
        return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, self.dim)


def _norm(a):
    return np.sqrt(np.sum(np.square(a), axis=-1))


class NFunction:
    """A convex integrand ``M(x, a)`` with metadata used by the checks.

    Instances are immutable after construction and evaluation is pure.
    Use the factory functions (:func:`power`, :func:`exponential`, ...)
    rather than calling the constructor directly.
    """

    def __init__(self, domain, kind, fn, params=None, formula="", growth_hint=None,
                 radius_hint=None):
        self.domain = domain
        self.kind = kind
        self._fn = fn
        self.params = dict(params or {})
        self.formula = formula
        self.growth_hint = growth_hint
        self._radius_hint = radius_hint

    @property
    def dim(self):
        return self.domain.dim

    def __call__(self, x, a):
        with np.errstate(over="ignore", invalid="ignore"):
            return self._fn(np.asarray(x, dtype=float), np.asarray(a, dtype=float))

    def evaluate(self, x, a) -> float:
        return eval_n_function(self, x, a)

    def search_radius(self, bnorm):
        """Radius beyond which ``M(x, a) >= |b| |a|``; seeds the conjugate search box."""
        bnorm = np.asarray(bnorm, dtype=float)
        if self._radius_hint is not None:
            r = self._radius_hint(bnorm)
        elif self.growth_hint is not None and self.growth_hint[0] > 1:
            r = np.maximum(bnorm, 1.0) ** (1.0 / (self.growth_hint[0] - 1.0))
        else:
            r = 1.0 + bnorm
        return np.maximum(1.5 * r, 1e-3)

    def __repr__(self):
        return f"NFunction({self.kind}, {self.formula!r})"


def _as_space_fn(p, dim):
    if callable(p):
        return p, getattr(p, "source", "p(x)")
    if isinstance(p, str):
        f = space_field(p, dim)
        return f, p
    const = float(p)
    return (lambda x, c=const: np.full(np.shape(x)[:-1], c)), repr(const)


def power(domain, p, scale=1.0) -> NFunction:
    """``scale * |a|**p`` with ``p > 1``."""
    p = float(p)
    scale = float(scale)
    if p <= 1 or scale <= 0:
        raise InputError("power N-function needs p > 1 and scale > 0")

    def fn(x, a):
        return scale * _norm(a) ** p * np.ones(np.shape(x)[:-1])

    def radius(bnorm):
        return (np.maximum(bnorm, 1e-12) / scale) ** (1.0 / (p - 1.0))

    prefix = "" if scale == 1.0 else f"{scale:g}*"
    return NFunction(domain, "power", fn, {"p": p, "scale": scale}, f"{prefix}|a|^{p:g}",
                     growth_hint=(p, p), radius_hint=radius)


def variable_exponent(domain, p, growth_hint=None) -> NFunction:
    """``|a|**p(x)``; ``p`` is a callable of x (shape (..., d)) or an expression string."""
    pfn, src = _as_space_fn(p, domain.dim)

    def fn(x, a):
        return _norm(a) ** pfn(x)

    if growth_hint is None:
        probe = pfn(domain.grid_points(65 if domain.dim == 1 else 17))
        growth_hint = (float(np.min(probe)), float(np.max(probe)))
        if growth_hint[0] <= 1:
            raise InputError(f"variable exponent must exceed 1, min found {growth_hint[0]}")
    return NFunction(domain, "variable_exponent", fn, {"p": src}, f"|a|^({src})",
                     growth_hint=growth_hint)


def anisotropic_paper(domain, p1=2.0, p2=2.0) -> NFunction:
    """``|a_1|**p1(x) * ln(|a|+1) + exp(|a_2|**p2(x)) - 1`` on a 2-d box."""
    if domain.dim != 2:
        raise InputError("anisotropic_paper is defined for d = 2")
    f1, s1 = _as_space_fn(p1, 2)
    f2, s2 = _as_space_fn(p2, 2)

    def fn(x, a):
        a1 = np.abs(a[..., 0])
        a2 = np.abs(a[..., 1])
        return a1 ** f1(x) * np.log1p(_norm(a)) + np.expm1(a2 ** f2(x))

    formula = f"|a1|^({s1})*ln(|a|+1) + exp(|a2|^({s2})) - 1"
    return NFunction(domain, "anisotropic_paper", fn, {"p1": s1, "p2": s2}, formula)


def exponential(domain, beta=1.0) -> NFunction:
    """``exp(beta|a|) - beta|a| - 1``; fails the doubling condition."""
    beta = float(beta)
    if beta <= 0:
        raise InputError("beta must be positive")

    def fn(x, a):
        r = beta * _norm(a)
        return (np.expm1(r) - r) * np.ones(np.shape(x)[:-1])

    def radius(bnorm):
        return np.log1p(bnorm / beta) / beta + 1.0

    return NFunction(domain, "exponential", fn, {"beta": beta},
                     f"exp({beta:g}|a|) - {beta:g}|a| - 1", radius_hint=radius)


def custom(domain, fn: Callable, formula="custom", growth_hint=None) -> NFunction:
    """Wrap a broadcasting callable ``fn(x, a)``; string ``fn`` is an expression in
    ``a1, a2, r (= |a|), x1, x2``."""
    if isinstance(fn, str):
        d = domain.dim
        names = ("a1", "a2")[:d] + ("r",) + ("x1", "x2")[:d]
        expr = compile_expr(fn, names)
        formula = fn

        def fn(x, a, expr=expr):
            env = {f"a{i + 1}": a[..., i] for i in range(d)}
            env.update({f"x{i + 1}": x[..., i] for i in range(d)})
            env["r"] = _norm(a)
            shape = np.broadcast_shapes(np.shape(a)[:-1], np.shape(x)[:-1])
            return np.broadcast_to(expr(**env), shape)

    return NFunction(domain, "custom", fn, {"expr": formula}, formula, growth_hint=growth_hint)


def eval_n_function(nf: NFunction, x, a) -> float:
    """Validated single-point evaluation of ``M(x, a)``."""
    a = np.asarray(a, dtype=float).reshape(-1)
    if a.shape != (nf.dim,):
        raise InputError(f"a must have {nf.dim} components")
    if not np.all(np.isfinite(a)):
        raise InputError("non-finite argument a")
    x = nf.domain.snap(np.asarray(x, dtype=float).reshape(-1))
    return float(nf(x, a))


# ---------------------------------------------------------------------------
# axioms


@dataclass
class AxiomReport:
    """Per-axiom verdicts with worst margins (negative means violated)."""

    verdicts: dict
    margins: dict
    locations: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(self.verdicts.values())

    def to_dict(self):
        return {
            "passed": self.passed,
            "verdicts": dict(self.verdicts),
            "margins": {k: float(v) for k, v in self.margins.items()},
            "locations": {k: np.asarray(v).tolist() for k, v in self.locations.items()},
            "notes": list(self.notes),
        }


@dataclass
class SamplingPlan:
    x_points: np.ndarray      # (m, d)
    a_points: np.ndarray      # (k, d)
    ray_radii: np.ndarray     # increasing
    directions: np.ndarray    # (q, d) unit vectors
    tol: float = 1e-10


def _directions(dim, count=8):
    if dim == 1:
        return np.array([[1.0], [-1.0]])
    th = np.linspace(0, 2 * np.pi, count, endpoint=False)
    return np.stack([np.cos(th), np.sin(th)], axis=-1)


def default_sampling_plan(domain, seed=0, n_x=9, n_a=40) -> SamplingPlan:
    rng = np.random.default_rng(seed)
    d = domain.dim
    a = rng.uniform(-3, 3, size=(n_a, d))
    return SamplingPlan(
        x_points=domain.grid_points(n_x),
        a_points=a,
        ray_radii=np.geomspace(1.0, 2.0 ** 9, 10),
        directions=_directions(d),
    )


def verify_n_function_axioms(nf: NFunction, plan: SamplingPlan) -> AxiomReport:
    """Origin, positivity, midpoint convexity and superlinearity on samples.

    Superlinearity is judged along each ray: ``s(r) = inf_x M(x, r e) / r``
    must increase strictly over the upper half of the radii and grow by at
    least 50% across that half.
    """
    X = np.asarray(plan.x_points, dtype=float)
    A = np.asarray(plan.a_points, dtype=float)
    radii = np.asarray(plan.ray_radii, dtype=float)
    if X.size == 0 or A.size == 0 or radii.size == 0 or len(plan.directions) == 0:
        raise InputError("empty sampling plan")
    tol = plan.tol
    d = nf.dim
    verdicts, margins, locs = {}, {}, {}

    m0 = nf(X, np.zeros_like(X))
    i = int(np.argmax(np.abs(m0)))
    margins["origin"] = -float(np.abs(m0[i]))
    locs["origin"] = X[i]

    nz = A[_norm(A) > 0]
    vals = nf(X[:, None, :], nz[None, :, :])
    vals = np.where(np.isnan(vals), -np.inf, vals)
    i, j = np.unravel_index(int(np.argmin(vals)), vals.shape)
    margins["positivity"] = float(vals[i, j])
    locs["positivity"] = np.concatenate([X[i], nz[j]])
    verdicts["positivity"] = bool(vals[i, j] > 0)

    iu, ju = np.triu_indices(len(A), k=1)
    u, v = A[iu], A[ju]
    mid = 0.5 * (u + v)
    Xb = X[:, None, :]
    gap = 0.5 * (nf(Xb, u[None]) + nf(Xb, v[None])) - nf(Xb, mid[None])
    gap = np.where(np.isnan(gap), -np.inf, gap)
    k = np.unravel_index(int(np.argmin(gap)), gap.shape)
    margins["convexity"] = float(gap[k])
    locs["convexity"] = np.concatenate([X[k[0]], u[k[1]], v[k[1]]])

    dirs = np.asarray(plan.directions, dtype=float)
    pts = radii[:, None, None] * dirs[None, :, :]                       # (R, q, d)
    ratio = nf(X[:, None, None, :], pts[None]) / radii[None, :, None]    # (m, R, q)
    s = np.min(ratio, axis=0)                                           # (R, q)
    tail = s[len(radii) // 2:]
    sl_margin = np.empty(len(dirs))
    for q in range(len(dirs)):
        col = tail[:, q]
        if np.any(np.isnan(col)):
            sl_margin[q] = -np.inf
            continue
        fin = col[np.isfinite(col)]
        incr = np.min(np.diff(fin) / np.abs(fin[:-1])) if len(fin) > 1 else np.inf
        # an overflow to +inf along the ray counts as unbounded growth
        growth = np.inf if len(fin) < len(col) else fin[-1] / fin[0] - 1.5
        sl_margin[q] = min(incr, growth)
    q = int(np.argmin(sl_margin))
    margins["superlinearity"] = float(sl_margin[q])
    locs["superlinearity"] = dirs[q]
    # strict increase is required, so a zero increment fails regardless of tol
    verdicts["superlinearity"] = bool(sl_margin[q] > 0)

    scale = 1.0 + float(np.max(np.abs(np.where(np.isfinite(vals), vals, 0.0))))
    verdicts["origin"] = margins["origin"] >= -tol
    verdicts["convexity"] = margins["convexity"] >= -tol * scale
    report = AxiomReport(verdicts, margins, locs)
    report.notes.append(f"{len(X)} x-points, {len(A)} a-points, {len(iu)} midpoint pairs, {len(dirs)} rays, d={d}")
    return report


# ---------------------------------------------------------------------------
# Delta_2


@dataclass
class Delta2Report:
    passed: bool
    c: float
    h_offset: float
    ratios: np.ndarray         # sup ratio per radius
    radii: np.ndarray
    worst_x: np.ndarray
    worst_a: np.ndarray
    notes: list = field(default_factory=list)

    def to_dict(self):
        return {
            "passed": self.passed, "c": float(self.c), "h_offset": self.h_offset,
            "ratios": [float(r) for r in self.ratios], "radii": [float(r) for r in self.radii],
            "worst_x": np.asarray(self.worst_x).tolist(), "worst_a": np.asarray(self.worst_a).tolist(),
            "notes": list(self.notes),
        }


def check_delta2(nf: NFunction, radii, x_grid, directions=None, stabilization=0.05) -> Delta2Report:
    """Measure ``sup M(x, 2a) / M(x, a)`` per radius and classify.

    Pass iff the ratios at the three largest radii are finite and differ by
    less than ``stabilization`` (relative).  The offset ``h`` is taken as a
    constant absorbed into the denominator floor.
    """
    radii = np.asarray(radii, dtype=float)
    if radii.size == 0 or np.any(np.diff(radii) <= 0) or np.any(radii <= 0):
        raise InputError("radii must be nonempty, positive and increasing")
    X = np.asarray(x_grid, dtype=float).reshape(-1, nf.dim)
    dirs = _directions(nf.dim) if directions is None else np.asarray(directions, dtype=float)
    pts = radii[:, None, None] * dirs[None]                       # (R, q, d)
    num = nf(X[:, None, None, :], 2 * pts[None])
    den = np.maximum(nf(X[:, None, None, :], pts[None]), DELTA2_FLOOR)
    with np.errstate(over="ignore", invalid="ignore"):
        ratio = num / den                                         # (m, R, q)
    ratio = np.where(np.isnan(ratio), np.inf, ratio)
    per_radius = ratio.max(axis=(0, 2))
    idx = np.unravel_index(int(np.argmax(ratio)), ratio.shape)
    last = per_radius[-3:]
    stable = bool(np.all(np.isfinite(last)) and (last.max() - last.min()) < stabilization * last.min())
    rep = Delta2Report(
        passed=stable,
        c=float(per_radius.max()),
        h_offset=DELTA2_FLOOR,
        ratios=per_radius,
        radii=radii,
        worst_x=X[idx[0]],
        worst_a=pts[idx[1], idx[2]],
    )
    rep.notes.append("h taken constant; stabilization proxy over the 3 largest radii")
    return rep


# ---------------------------------------------------------------------------
# condition (M)


@dataclass
class ConditionMReport:
    passed: bool
    H: float
    worst_excess: float        # max of log(ratio) - log(bound); > 0 means violation
    worst_pair: tuple          # (x, y, xi)
    n_pairs: int
    n_violations: int
    integrability_ok: bool

    def to_dict(self):
        return {
            "passed": self.passed, "H": self.H, "worst_excess": float(self.worst_excess),
            "worst_pair": [np.asarray(v).tolist() for v in self.worst_pair],
            "n_pairs": self.n_pairs, "n_violations": self.n_violations,
            "integrability_ok": self.integrability_ok,
        }


def condition_m_pairs(domain, seed=0, n_x=65, n_offsets=40, xi_norms=(1.0, np.e, 10.0, 100.0, 1000.0)):
    """Deterministic pair plan: grid points, dyadic offsets 2**-1 .. 2**-n_offsets, both
    orientations, plus random pairs; xi of the listed norms along axis and random directions."""
    rng = np.random.default_rng(seed)
    d = domain.dim
    X = domain.grid_points(n_x if d == 1 else 17)
    offsets = 2.0 ** -np.arange(1, n_offsets + 1)
    dirs = _directions(d, 4)
    xs, ys = [], []
    for e in dirs:
        Y = X[:, None, :] + offsets[None, :, None] * e[None, None, :]
        XX = np.broadcast_to(X[:, None, :], Y.shape)
        keep = domain.contains(Y, tol=0)
        xs.append(XX[keep])
        ys.append(Y[keep])
    xr = rng.uniform(0, 1, size=(200, d)) * np.asarray(domain.lengths)
    step = rng.uniform(-0.5, 0.5, size=(200, d)) / np.sqrt(d)
    yr = xr + step
    keep = domain.contains(yr, tol=0)
    xs.append(xr[keep])
    ys.append(yr[keep])
    xs = np.concatenate(xs)
    ys = np.concatenate(ys)
    xi_dirs = np.concatenate([_directions(d, 4), rng.normal(size=(3, d))])
    xi_dirs = xi_dirs / _norm(xi_dirs)[:, None]
    xis = (np.asarray(xi_norms)[:, None, None] * xi_dirs[None]).reshape(-1, d)
    P = len(xs)
    K = len(xis)
    return (np.repeat(xs, K, axis=0), np.repeat(ys, K, axis=0), np.tile(xis, (P, 1)))


def check_condition_M(nf: NFunction, H: float, pairs, z_samples=None, quad_points=33) -> ConditionMReport:
    """Check ``M(x, xi) / M(y, xi) <= |xi| ** (H / log(1/|x-y|))`` on sampled pairs,
    plus finiteness of ``int_Omega M(x, z)`` for constant ``z`` (midpoint rule)."""
    if H <= 0:
        raise InputError("H must be positive")
    x, y, xi = (np.asarray(v, dtype=float).reshape(-1, nf.dim) for v in pairs)
    dist = _norm(x - y)
    xin = _norm(xi)
    if np.any(dist > 0.5 + 1e-12):
        raise InputError("condition (M) pairs need |x - y| <= 1/2")
    if np.any(xin < 1 - 1e-12):
        raise InputError("condition (M) samples need |xi| >= 1")
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        log_ratio = np.log(nf(x, xi)) - np.log(nf(y, xi))
        expo = np.where(dist > 0, H / np.log(1.0 / np.where(dist > 0, dist, 0.5)), 0.0)
        log_bound = expo * np.log(xin)
    excess = log_ratio - log_bound
    excess = np.where(np.isnan(excess), np.inf, excess)
    bad = excess > 1e-12
    k = int(np.argmax(excess))

    if z_samples is None:
        z_samples = np.concatenate([np.zeros((1, nf.dim)), _directions(nf.dim, 4) * 10.0])
    L = np.asarray(nf.domain.lengths)
    axes = [(np.arange(quad_points) + 0.5) * Li / quad_points for Li in L]
    G = np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, nf.dim)
    integrals = nf(G[:, None, :], np.asarray(z_samples)[None]).mean(axis=0) * np.prod(L)
    integrable = bool(np.all(np.isfinite(integrals)))

    return ConditionMReport(
        passed=bool(not bad.any() and integrable),
        H=float(H),
        worst_excess=float(excess[k]),
        worst_pair=(x[k], y[k], xi[k]),
        n_pairs=len(x),
        n_violations=int(bad.sum()),
        integrability_ok=integrable,
    )
