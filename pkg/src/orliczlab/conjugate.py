"""Numerical Legendre-Fenchel conjugation of N-functions.

``M*(x, b) = sup_a (b.a - M(x, a))`` is computed for a whole batch of
``(x, b)`` pairs at once: a coarse tensor grid over a box of radius ``r``
(doubled while the best grid point sits on the box boundary) followed by
cyclic coordinate-wise golden-section refinement of the concave objective.
"""
from __future__ import annotations

import math

import numpy as np

from .errors import InputError, RadiusError

__all__ = ["legendre_sup", "ConjugateApprox", "PowerConjugate", "conjugate_for", "conjugate",
           "fenchel_young_gap"]

_INVPHI = (math.sqrt(5.0) - 1.0) / 2.0


def _objective(fun, x, b, a):
    with np.errstate(over="ignore", invalid="ignore"):
        v = np.sum(b * a, axis=-1) - fun(x, a)
    return np.where(np.isnan(v), -np.inf, v)


def _grid_stage(fun, x, b, radius, grid_points, max_doublings):
    n, d = b.shape
    u = np.linspace(-1.0, 1.0, grid_points)
    unit = np.stack(np.meshgrid(*([u] * d), indexing="ij"), -1).reshape(-1, d)
    edge = np.any((np.abs(unit) == 1.0), axis=-1)
    r = radius.copy()
    best_a = np.zeros((n, d))
    best_f = np.full(n, -np.inf)
    todo = np.arange(n)
    for _ in range(max_doublings + 1):
        cand = r[todo, None, None] * unit[None]
        vals = _objective(fun, x[todo, None, :], b[todo, None, :], cand)
        k = np.argmax(vals, axis=1)
        best_a[todo] = cand[np.arange(len(todo)), k]
        best_f[todo] = vals[np.arange(len(todo)), k]
        on_edge = edge[k]
        if not on_edge.any():
            return best_a, best_f, r
        todo = todo[on_edge]
        r[todo] *= 2.0
    raise RadiusError(
        f"maximizer stayed on the search-box boundary after {max_doublings} doublings "
        f"(radius {float(r[todo].max()):.3g})"
    )


def _golden(fun, x, b, a, k, lo, hi, xtol):
    """Maximize along coordinate ``k`` on ``[lo, hi]`` for every row at once."""
    width = float(np.max(hi - lo))
    n_iter = max(1, int(math.ceil(math.log(max(width, xtol) / xtol) / -math.log(_INVPHI))))

    def phi(t):
        at = a.copy()
        at[:, k] = t
        return _objective(fun, x, b, at)

    c = hi - _INVPHI * (hi - lo)
    e = lo + _INVPHI * (hi - lo)
    fc, fe = phi(c), phi(e)
    for _ in range(n_iter):
        left = fc >= fe
        hi = np.where(left, e, hi)
        lo = np.where(left, lo, c)
        t_new = np.where(left, hi - _INVPHI * (hi - lo), lo + _INVPHI * (hi - lo))
        f_new = phi(t_new)
        e, fe, c, fc = (
            np.where(left, c, t_new), np.where(left, fc, f_new),
            np.where(left, t_new, e), np.where(left, f_new, fe),
        )
    t = np.where(fc >= fe, c, e)
    return t, np.maximum(fc, fe)


def legendre_sup(fun, x, b, radius=None, grid_points=64, tol=1e-8, max_doublings=30,
                 start=None, width=None, max_sweeps=200):
    """Batched ``sup_a (b.a - fun(x, a))``.

    ``x`` and ``b`` have shape ``(n, d)``; ``fun`` must broadcast over
    leading axes.  With ``start`` given the grid stage is skipped and the
    coordinate search begins there with half-width ``width``.  Returns
    ``(values, argmax)``.
    """
    x = np.asarray(x, dtype=float)
    b = np.asarray(b, dtype=float)
    n, d = b.shape
    if start is None:
        if radius is None:
            radius = 1.0 + np.sqrt(np.sum(b * b, axis=-1))
        radius = np.broadcast_to(np.asarray(radius, dtype=float), (n,)).copy()
        a, f, r = _grid_stage(fun, x, b, radius, grid_points, max_doublings)
        w = np.repeat((2.0 * r / (grid_points - 1))[:, None], d, axis=1)
        scale = r
    else:
        a = np.array(start, dtype=float, copy=True).reshape(n, d)
        f = _objective(fun, x, b, a)
        w = np.broadcast_to(np.asarray(width, dtype=float).reshape(-1, 1), (n, d)).copy()
        scale = np.maximum(np.max(np.abs(a), axis=1), np.max(w, axis=1))
    # origin is always feasible with value -M(x, 0) = 0
    f0 = _objective(fun, x, b, np.zeros_like(b))
    use0 = f0 > f
    a[use0] = 0.0
    f[use0] = f0[use0]

    xtol = 1e-10 * np.maximum(scale, 1.0)
    active = np.arange(n)
    for sweep in range(max_sweeps):
        if active.size == 0:
            break
        xa, ba, aa, fa, wa = x[active], b[active], a[active], f[active], w[active]
        f_prev = fa.copy()
        step = np.zeros_like(aa)
        hit = np.zeros_like(aa, dtype=bool)
        for k in range(d):
            lo = aa[:, k] - wa[:, k]
            hi = aa[:, k] + wa[:, k]
            t, ft = _golden(fun, xa, ba, aa, k, lo, hi, float(np.min(xtol[active])))
            better = ft > fa
            step[:, k] = np.where(better, np.abs(t - aa[:, k]), 0.0)
            aa[better, k] = t[better]
            fa = np.where(better, ft, fa)
            margin = 0.02 * (hi - lo)
            hit[:, k] = (t - lo < margin) | (hi - t < margin)
        a[active], f[active] = aa, fa
        big = np.max(step, axis=1, keepdims=True)
        floor = 1e3 * xtol[active, None]
        w_new = np.clip(4.0 * big, floor, wa)
        w_new = np.where(hit, 2.0 * wa, w_new)
        w[active] = w_new
        improved = fa - f_prev
        done = (improved <= 0.05 * tol * np.maximum(1.0, np.abs(fa))) & ~hit.any(axis=1)
        if d == 1:
            done |= ~hit[:, 0]
        if sweep == 0 and d > 1:
            done[:] = False
        active = active[~done]
    return f, a


class ConjugateApprox:
    """Numerical conjugate of an :class:`~orliczlab.nfunc.NFunction`.

    The object is itself callable like an N-function, ``cj(x, b)``, so it
    can be passed anywhere an integrand is expected (modulars, norms).
    An optional pre-computed table (see :meth:`tabulate`) is immutable and
    therefore safe to share between threads.
    """

    def __init__(self, nf, search_radius=None, tol=1e-8, grid_points=64, max_doublings=30,
                 chunk=2 ** 22):
        self.source = nf
        self.search_radius = search_radius
        self.tol = float(tol)
        self.grid_points = int(grid_points)
        self.max_doublings = max_doublings
        self.chunk = chunk
        self.table = None

    @property
    def domain(self):
        return self.source.domain

    @property
    def dim(self):
        return self.source.dim

    def _radius(self, bnorm):
        if self.search_radius is not None:
            return np.full_like(bnorm, float(self.search_radius))
        return self.source.search_radius(bnorm)

    def solve(self, x, b, grid_points=None):
        """Return ``(values, argmax)`` with the batch shape of ``broadcast(x, b)``."""
        d = self.dim
        x = np.asarray(x, dtype=float)
        b = np.asarray(b, dtype=float)
        shape = np.broadcast_shapes(x.shape[:-1], b.shape[:-1])
        X = np.broadcast_to(x, shape + (d,)).reshape(-1, d)
        B = np.broadcast_to(b, shape + (d,)).reshape(-1, d)
        G = grid_points or self.grid_points
        per = max(1, self.chunk // (G ** d))
        vals = np.empty(len(B))
        args = np.empty((len(B), d))
        for s in range(0, len(B), per):
            sl = slice(s, s + per)
            r = self._radius(np.sqrt(np.sum(B[sl] ** 2, axis=-1)))
            vals[sl], args[sl] = legendre_sup(self.source, X[sl], B[sl], r, G, self.tol,
                                              self.max_doublings)
        return vals.reshape(shape), args.reshape(shape + (d,))

    def __call__(self, x, b):
        return self.solve(x, b)[0]

    def value(self, x, b) -> float:
        """Validated single-point conjugate (the ``conjugate`` operation)."""
        return conjugate(self, x, b)

    def tabulate(self, x_points, b_points):
        """Precompute ``M*`` on the product of ``x_points`` and ``b_points``."""
        X = np.asarray(x_points, dtype=float)
        B = np.asarray(b_points, dtype=float)
        vals = self(X[:, None, :], B[None, :, :])
        vals.setflags(write=False)
        self.table = (X.copy(), B.copy(), vals)
        return vals

    def biconjugate(self, x, a, outer_radius=None, max_iter=60):
        """``M**(x, a) = sup_b (a.b - M*(x, b))`` with both transforms numerical.

        The inner transform is the grid-and-golden routine above.  The outer
        supremum is driven by the envelope identity ``grad M*(b) = a*(b)``
        (the inner argmax): damped Newton steps on ``a*(b) = a`` with a
        finite-difference Jacobian and backtracking on the outer objective.
        """
        d = self.dim
        x = np.asarray(x, dtype=float)
        a = np.asarray(a, dtype=float)
        shape = np.broadcast_shapes(x.shape[:-1], a.shape[:-1])
        X = np.broadcast_to(x, shape + (d,)).reshape(-1, d).copy()
        A = np.broadcast_to(a, shape + (d,)).reshape(-1, d).copy()
        n = len(A)
        src = self.source

        def inner(b, start):
            w = 1e-2 * (1.0 + np.max(np.abs(start), axis=1))
            return legendre_sup(src, X, b, start=start, width=w, tol=self.tol * 1e-2)

        b = np.zeros((n, d))
        ms, astar = self.solve(X, b, grid_points=16)
        obj = np.sum(A * b, axis=1) - ms
        eye = np.eye(d)
        for _ in range(max_iter):
            g = A - astar
            if np.all(np.max(np.abs(g), axis=1) <= 1e-11 * (1 + np.max(np.abs(A), axis=1))):
                break
            h = 1e-5 * (1.0 + np.max(np.abs(b), axis=1))
            J = np.empty((n, d, d))
            for k in range(d):
                bk = b + h[:, None] * eye[k]
                _, ak = inner(bk, astar)
                J[:, :, k] = (ak - astar) / h[:, None]
            J = 0.5 * (J + np.swapaxes(J, 1, 2)) + 1e-12 * eye
            try:
                step = np.linalg.solve(J, g[..., None])[..., 0]
            except np.linalg.LinAlgError:
                step = g
            bad = ~np.all(np.isfinite(step), axis=1)
            step[bad] = g[bad]
            t = np.ones(n)
            accepted = np.zeros(n, dtype=bool)
            for _ls in range(30):
                trial = b + t[:, None] * step
                mt, at = inner(trial, astar)
                ot = np.sum(A * trial, axis=1) - mt
                ok = (ot >= obj - 1e-14 * np.maximum(1.0, np.abs(obj))) & ~accepted
                b[ok], ms[ok], astar[ok], obj[ok] = trial[ok], mt[ok], at[ok], ot[ok]
                accepted |= ok
                if accepted.all():
                    break
                t = np.where(accepted, t, 0.5 * t)
            if not accepted.any():
                break
        return obj.reshape(shape)


class PowerConjugate:
    """Closed-form conjugate of ``s|a|^p``: ``(p-1) s (|b|/(s p))^(p/(p-1))``.

    Same calling convention as :class:`ConjugateApprox`; used by the solver
    diagnostics where millions of evaluations are needed.
    """

    def __init__(self, nf):
        if nf.kind != "power":
            raise InputError("PowerConjugate needs a power N-function")
        self.source = nf
        self.p = float(nf.params["p"])
        self.scale = float(nf.params["scale"])

    @property
    def domain(self):
        return self.source.domain

    @property
    def dim(self):
        return self.source.dim

    def __call__(self, x, b):
        b = np.asarray(b, dtype=float)
        r = np.sqrt(np.sum(b * b, axis=-1))
        p, s = self.p, self.scale
        val = (p - 1.0) * s * (r / (s * p)) ** (p / (p - 1.0))
        return val * np.ones(np.shape(x)[:-1])

    def value(self, x, b) -> float:
        return conjugate(self, x, b)


def conjugate_for(nf, **kw):
    """Closed form for power N-functions, numerical conjugate otherwise."""
    if getattr(nf, "kind", None) == "power":
        return PowerConjugate(nf)
    return ConjugateApprox(nf, **kw)


def _check_point(cj, x, v, name):
    v = np.asarray(v, dtype=float).reshape(-1)
    if v.shape != (cj.dim,):
        raise InputError(f"{name} must have {cj.dim} components")
    if not np.all(np.isfinite(v)):
        raise InputError(f"non-finite {name}")
    return cj.domain.snap(np.asarray(x, dtype=float).reshape(-1)), v


def conjugate(cj: ConjugateApprox, x, b) -> float:
    x, b = _check_point(cj, x, b, "b")
    return float(cj(x, b))


def fenchel_young_gap(nf, cj: ConjugateApprox, x, a, b):
    """``M(x, a) + M*(x, b) - a.b``; nonnegative up to the conjugate tolerance.

    Accepts single points or broadcastable batches.
    """
    x = np.asarray(x, dtype=float)
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return nf(x, a) + cj(x, b) - np.sum(a * b, axis=-1)
