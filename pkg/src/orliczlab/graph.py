"""Maximal monotone graphs, their selections and mollified selections.

A graph ``G(t, x)`` relates gradients ``xi`` to fluxes ``A``.  Three
representations are supported: subdifferentials of convex potentials,
radial graphs ``A = a(|xi|) xi/|xi|`` with jumps, and tabulated monotone
relations in one dimension.  A positive scaling field ``gamma(t, x)``
multiplies every output.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .conjugate import legendre_sup
from .errors import ConvergenceError, DependencyError, InputError
from .expr import compile_expr, spacetime_field
from .mollify import Kernel
from .nfunc import AxiomReport

__all__ = [
    "ValueSet",
    "MonotoneGraph",
    "PotentialGraph",
    "RadialGraph",
    "TabulatedGraph",
    "identity_graph",
    "power_potential",
    "sign_jump_graph",
    "Selection",
    "MollifiedSelection",
    "CoercivityParams",
    "GraphSamplePlan",
    "graph_elements",
    "verify_graph_axioms",
    "mollified_selection_eval",
    "inverse_mollified_selection_eval",
    "coercivity_margin",
]

ZERO_TOL = 1e-14


def _norm(v):
    return np.sqrt(np.sum(np.square(v), axis=-1))


@dataclass(frozen=True)
class ValueSet:
    """Set of admissible ``A`` at one ``xi``: a point, a segment, a ball, or empty."""

    kind: str
    p0: np.ndarray = None
    p1: np.ndarray = None
    radius: float = 0.0

    def contains(self, A, tol=1e-9) -> bool:
        return bool(self.distance(A) <= tol)

    def distance(self, A) -> float:
        A = np.asarray(A, dtype=float)
        if self.kind == "empty":
            return np.inf
        if self.kind == "point":
            return float(_norm(A - self.p0))
        if self.kind == "ball":
            return float(max(0.0, _norm(A - self.p0) - self.radius))
        seg = self.p1 - self.p0
        L2 = float(np.dot(seg, seg))
        s = 0.0 if L2 == 0 else float(np.clip(np.dot(A - self.p0, seg) / L2, 0.0, 1.0))
        return float(_norm(A - (self.p0 + s * seg)))

    def project(self, A):
        """Nearest element of the set to ``A``."""
        A = np.asarray(A, dtype=float)
        if self.kind == "empty":
            raise InputError("empty value set has no elements")
        if self.kind == "point":
            return self.p0
        if self.kind == "ball":
            r = float(_norm(A - self.p0))
            return A if r <= self.radius else self.p0 + (A - self.p0) * (self.radius / r)
        seg = self.p1 - self.p0
        L2 = float(np.dot(seg, seg))
        s = 0.0 if L2 == 0 else float(np.clip(np.dot(A - self.p0, seg) / L2, 0.0, 1.0))
        return self.p0 + s * seg

    def min_norm(self):
        if self.kind == "empty":
            raise InputError("empty value set has no elements")
        if self.kind in ("point",):
            return self.p0
        if self.kind == "ball":
            r = _norm(self.p0)
            return np.zeros_like(self.p0) if r <= self.radius else self.p0 * (1 - self.radius / r)
        seg = self.p1 - self.p0
        L2 = float(np.dot(seg, seg))
        s = 0.0 if L2 == 0 else float(np.clip(-np.dot(self.p0, seg) / L2, 0.0, 1.0))
        return self.p0 + s * seg

    def midpoint(self):
        if self.kind == "segment":
            return 0.5 * (self.p0 + self.p1)
        return self.min_norm() if self.kind == "point" else self.p0

    def samples(self, n_dirs=8):
        """A few elements spanning the set (endpoints, midpoint, ball rim)."""
        if self.kind == "empty":
            return np.zeros((0, 0))
        if self.kind == "point":
            return self.p0[None]
        if self.kind == "segment":
            return np.stack([self.p0, 0.5 * (self.p0 + self.p1), self.p1])
        d = len(self.p0)
        if d == 1:
            dirs = np.array([[1.0], [-1.0]])
        else:
            th = np.linspace(0, 2 * np.pi, n_dirs, endpoint=False)
            dirs = np.stack([np.cos(th), np.sin(th)], -1)
        return np.concatenate([self.p0[None], self.p0 + self.radius * dirs, self.p0 + 0.5 * self.radius * dirs])

    def scaled(self, g):
        if self.kind == "empty":
            return self
        return ValueSet(self.kind, self.p0 * g, None if self.p1 is None else self.p1 * g, self.radius * g)


def _gamma_fn(gamma, dim):
    if gamma is None:
        return None
    if callable(gamma):
        return gamma
    if isinstance(gamma, str):
        expr = compile_expr(gamma, ("t",) + ("x1", "x2")[:dim])
        if expr.is_constant():
            gamma = float(expr())
        else:
            return spacetime_field(gamma, dim)
    c = float(gamma)
    if c <= 0:
        raise InputError("gamma must be positive")
    return None if c == 1.0 else (lambda t, x, c=c: np.full(np.broadcast_shapes(np.shape(t), np.shape(x)[:-1]), c))


class MonotoneGraph:
    """Common interface; subclasses implement the base (gamma-free) relation."""

    kind = "abstract"

    def __init__(self, dim, gamma=None, formula=""):
        if dim not in (1, 2):
            raise InputError("graph dimension must be 1 or 2")
        self.dim = dim
        self.gamma = _gamma_fn(gamma, dim)
        self.formula = formula

    def _g(self, t, x, shape):
        if self.gamma is None:
            return np.ones(shape)
        return np.broadcast_to(self.gamma(np.asarray(t, float), np.asarray(x, float)), shape)

    # base relation, to be provided by subclasses
    def _value_set(self, xi) -> ValueSet:
        raise NotImplementedError

    def _select(self, xi, rule):
        raise NotImplementedError

    def _inverse_select(self, A, rule):
        raise NotImplementedError

    def _membership(self, xi, A):
        raise NotImplementedError

    def landmarks(self):
        """``xi`` points where the relation is multi-valued or has gaps."""
        return np.zeros((1, self.dim))

    def membership_distance(self, t, x, xi, A):
        """Batched distance from ``A`` to the value set at ``xi`` (``inf`` where empty)."""
        xi = np.asarray(xi, dtype=float)
        A = np.asarray(A, dtype=float)
        if self.gamma is None:
            return self._membership(xi, A)
        shape = np.broadcast_shapes(np.shape(t), np.shape(x)[:-1], xi.shape[:-1], A.shape[:-1])
        g = self._g(t, x, shape)
        return g * self._membership(xi, A / g[..., None])

    def slope_bound(self):
        """Rough Lipschitz estimate of the single-valued part (for diagnostics)."""
        return None

    def value_set(self, t, x, xi) -> ValueSet:
        xi = np.asarray(xi, dtype=float).reshape(self.dim)
        vs = self._value_set(xi)
        g = float(self._g(t, np.asarray(x, float), ()))
        return vs.scaled(g) if g != 1.0 else vs

    def select(self, t, x, xi, rule="minimal_norm"):
        xi = np.asarray(xi, dtype=float)
        out = self._select(xi, rule)
        shape = np.broadcast_shapes(np.shape(t), np.shape(x)[:-1], xi.shape[:-1])
        return out * self._g(t, x, shape)[..., None] if self.gamma is not None else out

    def inverse_select(self, t, x, A, rule="minimal_norm"):
        A = np.asarray(A, dtype=float)
        if self.gamma is not None:
            shape = np.broadcast_shapes(np.shape(t), np.shape(x)[:-1], A.shape[:-1])
            A = A / self._g(t, x, shape)[..., None]
        return self._inverse_select(A, rule)


class PotentialGraph(MonotoneGraph):
    """``A = grad Phi(xi)`` for a convex, differentiable potential."""

    kind = "potential"

    def __init__(self, dim, phi, grad=None, inverse=None, gamma=None, formula="", slope=None):
        super().__init__(dim, gamma, formula)
        self.phi = phi
        self._grad = grad
        self._inverse = inverse
        self._slope = slope

    def _gradient(self, xi):
        if self._grad is not None:
            return self._grad(xi)
        h = 1e-6 * (1.0 + np.abs(xi))
        out = np.empty_like(xi)
        for k in range(self.dim):
            e = np.zeros(self.dim)
            e[k] = 1.0
            out[..., k] = (self.phi(xi + h[..., k:k + 1] * e) - self.phi(xi - h[..., k:k + 1] * e)) / (2 * h[..., k])
        return out

    def _value_set(self, xi):
        return ValueSet("point", self._gradient(xi[None])[0])

    def _select(self, xi, rule):
        return self._gradient(xi)

    def _membership(self, xi, A):
        return _norm(A - self._gradient(xi))

    def _inverse_select(self, A, rule):
        if self._inverse is not None:
            return self._inverse(A)
        shape = A.shape
        flat = A.reshape(-1, self.dim)
        fun = lambda x, z: self.phi(z)  # noqa: E731
        _, arg = legendre_sup(fun, np.zeros_like(flat), flat, radius=1.0 + _norm(flat), grid_points=32)
        return arg.reshape(shape)

    def slope_bound(self):
        return self._slope


def power_potential(dim, q=2.0, gamma=None) -> PotentialGraph:
    """``Phi = |xi|^q / q``, so ``A = |xi|^(q-2) xi``; ``q = 2`` is the identity graph."""
    q = float(q)
    if q <= 1:
        raise InputError("q must exceed 1")
    qq = q / (q - 1.0)

    def phi(xi):
        return _norm(xi) ** q / q

    def grad(xi):
        r = _norm(xi)[..., None]
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(r > 0, r ** (q - 2.0) * xi, 0.0) if q != 2.0 else np.array(xi, dtype=float)

    def inverse(A):
        r = _norm(A)[..., None]
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(r > 0, r ** (qq - 2.0) * A, 0.0) if q != 2.0 else np.array(A, dtype=float)

    g = PotentialGraph(dim, phi, grad, inverse, gamma, f"|xi|^{q:g}/{q:g}", slope=1.0 if q == 2 else None)
    g.kind = "identity" if q == 2.0 else "power_potential"
    g.q = q
    return g


def identity_graph(dim, gamma=None) -> PotentialGraph:
    return power_potential(dim, 2.0, gamma)


class RadialGraph(MonotoneGraph):
    """``A = a(|xi|) xi / |xi|``, ``A in ball(0, a(0+))`` at ``xi = 0``, segments at jumps.

    ``a`` is a nondecreasing function of ``s >= 0`` (callable or an
    expression in ``s``); ``a(0)`` is read as the right limit ``a(0+)``.
    ``jumps`` lists ``(s_k, lo, hi)`` with ``s_k > 0``.
    """

    kind = "radial_with_jumps"

    def __init__(self, dim, a, jumps=(), gamma=None, formula=None, a_inverse=None):
        self.a_inverse = a_inverse
        if isinstance(a, str):
            expr = compile_expr(a, ("s",))
            formula = formula or a
            a = lambda s, expr=expr: np.asarray(expr(s=s), dtype=float) * np.ones(np.shape(s))  # noqa: E731
        super().__init__(dim, gamma, formula or "a(s)")
        self.a = a
        self.jumps = [(float(s), float(lo), float(hi)) for s, lo, hi in jumps]
        for s, lo, hi in self.jumps:
            if s <= 0 or lo > hi:
                raise InputError("jumps need s_k > 0 and lo <= hi")
        self.a0 = float(self.a(np.array(0.0)))
        probe = np.concatenate([[0.0], np.geomspace(1e-6, 1e3, 400)])
        vals = self.a(probe)
        if self.a0 < 0 or np.any(np.diff(vals) < -1e-12 * np.maximum(1, np.abs(vals[1:]))):
            raise InputError("radial profile a(s) must be nonnegative and nondecreasing")
        for s, lo, hi in self.jumps:
            left, right = self.a(np.array([s * (1 - 1e-9), s * (1 + 1e-9)]))
            if left > lo + 1e-6 * (1 + abs(lo)) or hi > right + 1e-6 * (1 + abs(hi)):
                raise InputError(f"jump at s = {s:g} must satisfy a(s-) <= lo <= hi <= a(s+)")

    def _jump_at(self, s):
        for sk, lo, hi in self.jumps:
            if s == sk:
                return lo, hi
        return None

    def _value_set(self, xi):
        s = float(_norm(xi))
        if s <= ZERO_TOL:
            if self.dim == 1:
                return ValueSet("segment", np.array([-self.a0]), np.array([self.a0]))
            return ValueSet("ball", np.zeros(self.dim), radius=self.a0)
        e = xi / s
        j = self._jump_at(s)
        if j is not None:
            return ValueSet("segment", j[0] * e, j[1] * e)
        return ValueSet("point", float(self.a(np.array(s))) * e)

    def _select(self, xi, rule):
        s = _norm(xi)
        amp = np.asarray(self.a(s), dtype=float)
        for sk, lo, hi in self.jumps:
            amp = np.where(s == sk, lo if rule == "minimal_norm" else 0.5 * (lo + hi), amp)
        with np.errstate(invalid="ignore", divide="ignore"):
            out = np.where(s[..., None] > ZERO_TOL, (amp / np.where(s > 0, s, 1.0))[..., None] * xi, 0.0)
        return out

    def _membership(self, xi, A):
        s = _norm(xi)
        amp = np.asarray(self.a(s), dtype=float)
        with np.errstate(invalid="ignore", divide="ignore"):
            e = np.where(s[..., None] > ZERO_TOL, xi / np.where(s > 0, s, 1.0)[..., None], 0.0)
        dist = _norm(A - amp[..., None] * e)
        for sk, lo, hi in self.jumps:
            proj = np.clip(np.sum(A * e, -1), lo, hi)
            dseg = _norm(A - proj[..., None] * e)
            dist = np.where(s == sk, dseg, dist)
        return np.where(s <= ZERO_TOL, np.maximum(0.0, _norm(A) - self.a0), dist)

    def _inverse_select(self, A, rule):
        alpha = _norm(A)
        shape = alpha.shape
        al = alpha.reshape(-1)
        s = np.zeros_like(al)
        need = al > self.a0
        if self.a_inverse is not None:
            s = np.where(need, self.a_inverse(np.where(need, al, self.a0)), 0.0)
        elif need.any():
            target = al[need]
            lo = np.zeros_like(target)
            hi = np.ones_like(target)
            for _ in range(200):
                short = self.a(hi) < target
                if not short.any():
                    break
                hi = np.where(short, 2 * hi, hi)
            for _ in range(200):
                mid = 0.5 * (lo + hi)
                up = self.a(mid) >= target
                hi = np.where(up, mid, hi)
                lo = np.where(up, lo, mid)
                if np.all(hi - lo <= 1e-15 * np.maximum(1.0, hi)):
                    break
            s[need] = 0.5 * (lo + hi)
        s = s.reshape(shape)
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(alpha[..., None] > 0, (s / np.where(alpha > 0, alpha, 1.0))[..., None] * A, 0.0)

    def landmarks(self):
        pts = [np.zeros(self.dim)]
        dirs = [np.array([1.0]), np.array([-1.0])] if self.dim == 1 else [
            np.array([np.cos(t), np.sin(t)]) for t in np.linspace(0, 2 * np.pi, 8, endpoint=False)]
        for sk, _, _ in self.jumps:
            pts.extend(sk * e for e in dirs)
        return np.array(pts)


def sign_jump_graph(dim=1, base_slope=1.0, jump=1.0, gamma=None) -> RadialGraph:
    """``A = base_slope * xi + jump * xi/|xi|`` with ``A in ball(0, jump)`` at 0."""
    a = lambda s: base_slope * np.asarray(s, dtype=float) + jump  # noqa: E731
    inv = (lambda al: (al - jump) / base_slope) if base_slope > 0 else None
    return RadialGraph(dim, a, (), gamma, formula=f"{base_slope:g}*s + {jump:g}", a_inverse=inv)


class TabulatedGraph(MonotoneGraph):
    """Monotone relation on R given by polylines (``pieces``) through sorted points.

    Consecutive points with equal ``xi`` form vertical segments.  The first
    and last segments of the whole table are extended linearly; gaps between
    pieces leave the relation undefined there.
    """

    kind = "tabulated"

    def __init__(self, pieces, gamma=None, extend=True, formula="tabulated"):
        super().__init__(1, gamma, formula)
        self.pieces = []
        for pc in pieces:
            arr = np.asarray(pc, dtype=float).reshape(-1, 2)
            if len(arr) < 2:
                raise InputError("each piece needs at least two points")
            if np.any(np.diff(arr[:, 0]) < 0) or np.any(np.diff(arr[:, 1]) < 0):
                raise InputError("tabulated points must be nondecreasing in both coordinates")
            self.pieces.append(arr)
        self.pieces.sort(key=lambda a: a[0, 0])
        for p, q in zip(self.pieces[:-1], self.pieces[1:]):
            if q[0, 0] <= p[-1, 0] or q[0, 1] < p[-1, 1]:
                raise InputError("pieces must be separated and monotone across gaps")
        self.extend = extend
        if extend:
            for arr in (self.pieces[0][:2], self.pieces[-1][-2:]):
                if arr[1, 0] == arr[0, 0]:
                    raise InputError("end segments must not be vertical when extending")

    def _bounds(self, xi):
        """Lower/upper envelope of the value set at each xi; NaN where undefined."""
        xi = np.asarray(xi, dtype=float)
        lo = np.full(xi.shape, np.nan)
        hi = np.full(xi.shape, np.nan)
        first, last = self.pieces[0], self.pieces[-1]
        for k, arr in enumerate(self.pieces):
            xs, As = arr[:, 0], arr[:, 1]
            left_end = -np.inf if (self.extend and k == 0) else xs[0]
            right_end = np.inf if (self.extend and k == len(self.pieces) - 1) else xs[-1]
            inside = (xi >= left_end) & (xi <= right_end)
            il = np.clip(np.searchsorted(xs, xi, "left"), 1, len(xs) - 1)
            ir = np.clip(np.searchsorted(xs, xi, "right"), 1, len(xs) - 1)

            def interp(i):
                x0, x1, a0, a1 = xs[i - 1], xs[i], As[i - 1], As[i]
                with np.errstate(divide="ignore", invalid="ignore"):
                    w = np.where(x1 > x0, (xi - x0) / np.where(x1 > x0, x1 - x0, 1.0), 0.0)
                return a0 + w * (a1 - a0)

            lo_k = interp(il)
            hi_k = interp(ir)
            exact_l = np.isin(xi, xs)
            if exact_l.any():
                first_idx = np.searchsorted(xs, xi, "left").clip(0, len(xs) - 1)
                last_idx = (np.searchsorted(xs, xi, "right") - 1).clip(0, len(xs) - 1)
                lo_k = np.where(exact_l, As[first_idx], lo_k)
                hi_k = np.where(exact_l, As[last_idx], hi_k)
            lo = np.where(inside, lo_k, lo)
            hi = np.where(inside, hi_k, hi)
        return lo, hi

    def _value_set(self, xi):
        lo, hi = self._bounds(xi[..., 0])
        lo, hi = float(lo), float(hi)
        if np.isnan(lo):
            return ValueSet("empty")
        if lo == hi:
            return ValueSet("point", np.array([lo]))
        return ValueSet("segment", np.array([lo]), np.array([hi]))

    def _select(self, xi, rule):
        lo, hi = self._bounds(xi[..., 0])
        if np.any(np.isnan(lo)):
            raise InputError("selection requested where the tabulated relation is undefined")
        val = np.clip(0.0, lo, hi) if rule == "minimal_norm" else 0.5 * (lo + hi)
        return val[..., None]

    def _membership(self, xi, A):
        lo, hi = self._bounds(xi[..., 0])
        d = np.maximum(np.maximum(lo - A[..., 0], A[..., 0] - hi), 0.0)
        return np.where(np.isnan(lo), np.inf, d)

    def inverse_graph(self) -> "TabulatedGraph":
        return TabulatedGraph([arr[:, ::-1] for arr in self.pieces], None, self.extend, f"inverse of {self.formula}")

    def _inverse_select(self, A, rule):
        return self.inverse_graph()._select(A, rule)

    def landmarks(self):
        xs = np.unique(np.concatenate([arr[:, 0] for arr in self.pieces]))
        return np.concatenate([[0.0], xs])[:, None]


# ---------------------------------------------------------------------------
# selections


class Selection:
    """Single-valued selection ``xi -> A`` (or ``A -> xi`` when ``inverse``)."""

    def __init__(self, graph: MonotoneGraph, rule="minimal_norm", inverse=False):
        if not (callable(rule) or rule in ("minimal_norm", "midpoint")):
            raise InputError(f"unknown selection rule {rule!r}")
        self.graph = graph
        self.rule = rule
        self.inverse = inverse

    @property
    def dim(self):
        return self.graph.dim

    @property
    def rule_name(self):
        return self.rule if isinstance(self.rule, str) else "custom"

    def __call__(self, t, x, v):
        if callable(self.rule):
            return self.rule(t, x, v)
        if self.inverse:
            return self.graph.inverse_select(t, x, v, self.rule)
        return self.graph.select(t, x, v, self.rule)


class MollifiedSelection:
    """``A^eps`` built from a selection by convolution in the gradient variable.

    ``route="direct"``: ``A^eps = A~ * S_eps``.  ``route="inverse"``:
    ``A^eps = (xi~ * S_eps + eps Id)^(-1)`` with ``base`` an inverse selection.
    """

    def __init__(self, base: Selection, eps: float, kernel: Kernel = None, route="direct",
                 resolution=33, tol_inv=1e-13):
        if eps <= 0:
            raise InputError("eps must be positive")
        if route not in ("direct", "inverse"):
            raise InputError("route must be 'direct' or 'inverse'")
        if route == "inverse" and not base.inverse:
            raise InputError("the inverse route needs an inverse (A -> xi) selection")
        if route == "direct" and base.inverse:
            raise InputError("the direct route needs a forward (xi -> A) selection")
        self.base = base
        self.eps = float(eps)
        self.kernel = kernel or Kernel(base.dim)
        self.route = route
        self.resolution = resolution
        self.tol_inv = tol_inv
        self.h = 2.0 * self.eps / int(resolution)
        half = int(np.ceil(self.eps / self.h)) + 1
        ax = np.arange(-half, half + 1)
        self._offsets = np.stack(np.meshgrid(*([ax] * base.dim), indexing="ij"), -1).reshape(-1, base.dim)

    @property
    def dim(self):
        return self.base.dim

    @property
    def graph(self):
        return self.base.graph

    def weights(self, v):
        """Lattice nodes ``zeta_j = j h`` near ``v`` and their quadrature weights.

        Weights are ``S_eps(v - zeta_j) (1 + beta.(zeta_j - v))``, normalized,
        with ``beta`` chosen so the first moment about ``v`` vanishes.  The
        nodes are fixed in space, so the weights (and ``A^eps``) vary
        smoothly with ``v`` even when the base selection jumps.
        """
        v = np.asarray(v, dtype=float)
        base = np.round(v / self.h)
        zeta = (base[..., None, :] + self._offsets) * self.h
        r = zeta - v[..., None, :]
        S = self.kernel.profile(r / self.eps)
        m1 = np.einsum("...q,...qd->...d", S, r)
        M2 = np.einsum("...q,...qd,...qe->...de", S, r, r)
        beta = -np.linalg.solve(M2, m1[..., None])[..., 0]
        w = S * (1.0 + np.einsum("...d,...qd->...q", beta, r))
        w = w / np.sum(w, axis=-1, keepdims=True)
        return zeta, w

    def _convolve(self, t, x, v):
        """``sum_j w_j base(zeta_j)``: quadrature of ``base * S_eps`` at ``v``."""
        zeta, w = self.weights(v)
        tt = np.asarray(t, dtype=float)[..., None]
        xx = np.asarray(x, dtype=float)[..., None, :]
        vals = self.base(tt, xx, zeta)
        return np.einsum("...qd,...q->...d", vals, w)

    def __call__(self, t, x, xi):
        if self.route == "direct":
            return self._convolve(t, x, xi)
        return self._invert(t, x, xi)

    def forward_inverse_map(self, t, x, A):
        """``xi^eps(A) = (xi~ * S_eps)(A) + eps A``."""
        return self._convolve(t, x, A) + self.eps * np.asarray(A, dtype=float)

    def _invert(self, t, x, xi):
        xi = np.asarray(xi, dtype=float)
        shape = np.broadcast_shapes(np.shape(t), np.shape(x)[:-1], xi.shape[:-1])
        t = np.broadcast_to(np.asarray(t, float), shape).reshape(-1)
        x = np.broadcast_to(np.asarray(x, float), shape + (self.dim,)).reshape(-1, self.dim)
        xi = np.broadcast_to(xi, shape + (self.dim,)).reshape(-1, self.dim)
        if self.dim == 1 or isinstance(self.graph, RadialGraph) and self.graph.gamma is None:
            A = self._invert_radial(t, x, xi)
        else:
            A = self._invert_newton(t, x, xi)
        return A.reshape(shape + (self.dim,))

    def _invert_radial(self, t, x, xi):
        """Scalar root finding along the direction of xi (exact for d = 1 and radial graphs)."""
        r = _norm(xi)
        e = np.where(r[:, None] > 0, xi / np.where(r > 0, r, 1.0)[:, None], 0.0)
        if self.dim == 1:
            e = np.ones_like(xi)
            r = xi[:, 0]
        bound = np.abs(r) / self.eps + 2.0 * self.eps + 1.0

        def g(alpha):
            return np.sum(self.forward_inverse_map(t, x, alpha[:, None] * e) * e, axis=1)

        lo = -bound if self.dim == 1 else np.zeros_like(r)
        hi = bound.copy()
        glo, ghi = g(lo) - r, g(hi) - r
        for _ in range(60):
            bad_hi, bad_lo = ghi < 0, glo > 0
            if not (bad_hi.any() or bad_lo.any()):
                break
            hi = np.where(bad_hi, 2 * hi, hi)
            lo = np.where(bad_lo, 2 * lo, lo)
            ghi = np.where(bad_hi, g(hi) - r, ghi)
            glo = np.where(bad_lo, g(lo) - r, glo)
        else:
            raise ConvergenceError("inverse mollified selection failed to bracket the root",
                                   {"max_bound": float(np.max(np.abs(hi)))})
        # Illinois regula falsi, vectorized
        side = np.zeros_like(r)
        alpha = 0.5 * (lo + hi)
        scale = 1.0 + np.abs(r)
        for _ in range(200):
            denom = ghi - glo
            alpha = np.where(denom > 0, hi - ghi * (hi - lo) / np.where(denom > 0, denom, 1.0), 0.5 * (lo + hi))
            alpha = np.clip(alpha, lo, hi)
            ga = g(alpha) - r
            done = (np.abs(ga) <= self.tol_inv * scale) | (hi - lo <= 1e-15 * np.maximum(1.0, np.abs(hi)))
            if np.all(done):
                break
            up = ga > 0
            hi = np.where(up, alpha, hi)
            lo = np.where(up, lo, alpha)
            ghi_new = np.where(up, ga, np.where(side == -1, 0.5 * ghi, ghi))
            glo_new = np.where(up, np.where(side == 1, 0.5 * glo, glo), ga)
            ghi, glo = ghi_new, glo_new
            side = np.where(up, 1, -1)
        return alpha[:, None] * e

    def _invert_newton(self, t, x, xi):
        n, d = xi.shape
        A = xi / (1.0 + self.eps)
        F = self.forward_inverse_map(t, x, A) - xi
        res = _norm(F)
        eye = np.eye(d)
        for it in range(100):
            if np.all(res <= self.tol_inv * (1.0 + _norm(xi))):
                return A
            h = 1e-7 * (1.0 + np.max(np.abs(A), axis=1))
            J = np.empty((n, d, d))
            for k in range(d):
                Fk = self.forward_inverse_map(t, x, A + h[:, None] * eye[k]) - xi
                J[:, :, k] = (Fk - F) / h[:, None]
            step = np.linalg.solve(J, -F[..., None])[..., 0]
            lam = np.ones(n)
            for _ls in range(40):
                trial = A + lam[:, None] * step
                Ft = self.forward_inverse_map(t, x, trial) - xi
                rt = _norm(Ft)
                ok = rt < res
                A = np.where(ok[:, None], trial, A)
                F = np.where(ok[:, None], Ft, F)
                res = np.where(ok, rt, res)
                lam = np.where(ok, 0.0, 0.5 * lam)
                if np.all((lam == 0.0) | (lam < 1e-12)):
                    break
        if np.all(res <= 1e3 * self.tol_inv * (1.0 + _norm(xi))):
            return A
        raise ConvergenceError("inverse mollified selection did not converge",
                               {"max_residual": float(res.max())})

    def slope_estimate(self, t, x, xi, h=None):
        """Central finite-difference tangent ``dA/dxi``, shape ``(..., d, d)``."""
        xi = np.asarray(xi, dtype=float)
        d = self.dim
        h = h if h is not None else 1e-3 * self.eps
        out = np.empty(xi.shape + (d,))
        for k in range(d):
            e = np.zeros(d)
            e[k] = h
            out[..., :, k] = (self(t, x, xi + e) - self(t, x, xi - e)) / (2 * h)
        return out


# ---------------------------------------------------------------------------
# coercivity and axioms


@dataclass
class CoercivityParams:
    """``A.xi >= -k(t, x) + c_star (M(x, xi) + M*(x, A))``."""

    c_star: float
    k: object
    nf: object

    def __post_init__(self):
        if self.c_star <= 0:
            raise InputError("c_star must be positive")
        k = self.k
        d = self.nf.dim
        if isinstance(k, str):
            self.k_source = k
            k = spacetime_field(k, d)
        elif not callable(k):
            c = float(k)
            if c < 0:
                raise InputError("k must be nonnegative")
            self.k_source = repr(c)
            k = lambda t, x, c=c: np.full(np.broadcast_shapes(np.shape(t), np.shape(x)[:-1]), c)  # noqa: E731
        else:
            self.k_source = getattr(k, "source", "k(t,x)")
        self.k_fn = k

    def k_at(self, t, x):
        return np.asarray(self.k_fn(np.asarray(t, float), np.asarray(x, float)), dtype=float)


@dataclass
class GraphSamplePlan:
    xi_points: np.ndarray                  # (m, d)
    tx_points: list                        # [(t, x), ...]
    probes: np.ndarray = None              # (p, 2, d): rows (xi2, A2)
    tol: float = 1e-9
    notes: list = field(default_factory=list)

    @classmethod
    def default(cls, dim, domain_lengths=None, radius=3.0, n=41, seed=0):
        rng = np.random.default_rng(seed)
        if dim == 1:
            xi = np.linspace(-radius, radius, n)[:, None]
        else:
            g = np.linspace(-radius, radius, 15)
            xi = np.stack(np.meshgrid(g, g, indexing="ij"), -1).reshape(-1, 2)
        L = np.ones(dim) if domain_lengths is None else np.asarray(domain_lengths, float)
        tx = [(0.5, 0.5 * L)] + [(float(rng.uniform()), rng.uniform(size=dim) * L) for _ in range(2)]
        probes = rng.uniform(-radius, radius, size=(30, 2, dim))
        probes = np.concatenate([np.zeros((1, 2, dim)), probes])
        return cls(xi, tx, probes)


def graph_elements(g: MonotoneGraph, t, x, xi) -> ValueSet:
    """Exact value set of ``g(t, x)`` at ``xi``."""
    return g.value_set(t, x, xi)


def _element_samples(g, t, x, xi_points, landmarks=True):
    xs, As = [], []
    pts = np.asarray(xi_points, float).reshape(-1, g.dim)
    if landmarks:
        pts = np.concatenate([pts, g.landmarks()])
    for xi in pts:
        vs = g.value_set(t, x, xi)
        if vs.kind == "empty":
            continue
        S = vs.samples()
        xs.append(np.repeat(xi[None], len(S), 0))
        As.append(S)
    if not xs:
        return np.zeros((0, g.dim)), np.zeros((0, g.dim))
    return np.concatenate(xs), np.concatenate(As)


def _witness_candidates(g, t, x, xi2, A2):
    """Elements near ``xi2`` along ``A2 - proj(A2)``, where a monotonicity witness must sit."""
    vs = g.value_set(t, x, xi2)
    if vs.kind == "empty":
        dirs = np.concatenate([np.eye(g.dim), -np.eye(g.dim)])
    else:
        v = A2 - vs.project(A2)
        nv = float(_norm(v))
        dirs = (v / nv)[None] if nv > 0 else np.zeros((0, g.dim))
    steps = np.geomspace(1e-6, 10.0, 30)
    pts = (xi2[None, None] + steps[None, :, None] * dirs[:, None]).reshape(-1, g.dim)
    if len(pts) == 0:
        return np.zeros((0, g.dim)), np.zeros((0, g.dim))
    return _element_samples(g, t, x, pts, landmarks=False)


def verify_graph_axioms(g: MonotoneGraph, cp: CoercivityParams, cj, samples: GraphSamplePlan) -> AxiomReport:
    """Sampled checks of (A1) origin, (A2) monotonicity, (A3) maximality proxy, (A4) M-graph."""
    if cj is None:
        raise DependencyError("verify_graph_axioms needs a ConjugateApprox for the M-graph check")
    tol = samples.tol
    verdicts, margins, locs, notes = {}, {}, {}, []
    worst = {"monotonicity": np.inf, "coercivity": np.inf}
    a1_ok = True
    maximal_violations = 0
    for t, x in samples.tx_points:
        x = np.asarray(x, float)
        vs0 = g.value_set(t, x, np.zeros(g.dim))
        a1_ok &= vs0.contains(np.zeros(g.dim), tol)
        E_xi, E_A = _element_samples(g, t, x, samples.xi_points)
        mono = np.einsum("ijd,ijd->ij", E_A[:, None] - E_A[None], E_xi[:, None] - E_xi[None])
        i, j = np.unravel_index(int(np.argmin(mono)), mono.shape)
        if mono[i, j] < worst["monotonicity"]:
            worst["monotonicity"] = float(mono[i, j])
            locs["monotonicity"] = np.concatenate([E_xi[i], E_A[i], E_xi[j], E_A[j]])
        if samples.probes is not None:
            for xi2, A2 in samples.probes:
                if g.value_set(t, x, xi2).contains(A2, tol):
                    continue
                wx, wa = _witness_candidates(g, t, x, xi2, A2)
                cand_xi = np.concatenate([E_xi, wx])
                cand_A = np.concatenate([E_A, wa])
                wit = np.min(np.sum((cand_A - A2) * (cand_xi - xi2), axis=-1))
                if wit >= -tol:
                    maximal_violations += 1
                    locs.setdefault("maximality", np.concatenate([xi2, A2]))
        xx = np.broadcast_to(x, E_xi.shape)
        coer = (np.sum(E_A * E_xi, axis=-1) + cp.k_at(np.full(len(E_xi), t), xx)
                - cp.c_star * (cp.nf(xx, E_xi) + cj(xx, E_A)))
        k = int(np.argmin(coer))
        if coer[k] < worst["coercivity"]:
            worst["coercivity"] = float(coer[k])
            locs["coercivity"] = np.concatenate([[t], x, E_xi[k], E_A[k]])
    verdicts["origin"] = bool(a1_ok)
    margins["origin"] = 0.0 if a1_ok else -1.0
    margins["monotonicity"] = worst["monotonicity"]
    verdicts["monotonicity"] = worst["monotonicity"] >= -tol
    margins["maximality"] = -float(maximal_violations)
    verdicts["maximality"] = maximal_violations == 0
    notes.append("maximality violation detected" if maximal_violations else "no maximality violation found")
    margins["coercivity"] = worst["coercivity"]
    verdicts["coercivity"] = worst["coercivity"] >= -tol * 10
    return AxiomReport(verdicts, margins, locs, notes)


def mollified_selection_eval(ms: MollifiedSelection, t, x, xi):
    if ms.route != "direct":
        raise InputError("mollified_selection_eval needs the direct route")
    return ms(t, x, xi)


def inverse_mollified_selection_eval(ms: MollifiedSelection, t, x, xi):
    if ms.route != "inverse":
        raise InputError("inverse_mollified_selection_eval needs the inverse route")
    return ms(t, x, xi)


def coercivity_margin(sel, cp: CoercivityParams, cj, xi_points, tx_points):
    """Worst ``A.xi + k - c_star (M + M*)`` over samples; returns ``(margin, location)``."""
    if cj is None:
        raise DependencyError("coercivity_margin needs a ConjugateApprox")
    xi = np.asarray(xi_points, float).reshape(-1, sel.dim)
    worst, where = np.inf, None
    for t, x in tx_points:
        xx = np.broadcast_to(np.asarray(x, float), xi.shape)
        tt = np.full(len(xi), float(t))
        A = sel(tt, xx, xi)
        m = np.sum(A * xi, -1) + cp.k_at(tt, xx) - cp.c_star * (cp.nf(xx, xi) + cj(xx, A))
        k = int(np.argmin(m))
        if m[k] < worst:
            worst, where = float(m[k]), {"t": float(t), "x": np.asarray(x).tolist(), "xi": xi[k].tolist(), "A": A[k].tolist()}
    return worst, where
