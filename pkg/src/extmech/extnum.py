"""Extended-complex numbers x*k + y.

Each number carries two complex parts: the extended part ``x`` (coefficient of
the unit ``k``) and the complex part ``y``.  The standard product is fixed by
``k*k = z0*k + w0``; the conjugated product and the bullet map depend on
per-number map coefficients ``k* = z1 k + w1`` and ``k^bullet = z2 k + w2``.

The arithmetic helpers only use ``+``, ``-`` and ``*`` on the parts, so exact
rings (for example sympy's Gaussian rationals) can be used for the standard
operations.  Anything involving conjugation, maps or solvers uses floats.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np


class ExtNumError(Exception):
    """Base class for extended-number errors."""


class MapsMissing(ExtNumError):
    pass


class Degenerate(ExtNumError):
    pass


class NoConvergence(ExtNumError):
    def __init__(self, message, best_residual=float("inf")):
        super().__init__(message)
        self.best_residual = best_residual


class DivisionByZero(ExtNumError):
    pass


def _finite(z):
    try:
        return math.isfinite(complex(z).real) and math.isfinite(complex(z).imag)
    except TypeError:
        # exact ring elements are always finite
        return True


@dataclass(frozen=True)
class ExtNumber:
    x: complex = 0j
    y: complex = 0j

    def __post_init__(self):
        if not (_finite(self.x) and _finite(self.y)):
            raise ValueError("ExtNumber parts must be finite")

    def __add__(self, other):
        return std_add(self, _coerce(other))

    def __radd__(self, other):
        return std_add(_coerce(other), self)

    def __sub__(self, other):
        other = _coerce(other)
        return ExtNumber(self.x - other.x, self.y - other.y)

    def __neg__(self):
        return ExtNumber(-self.x, -self.y)

    def scale(self, c):
        """Multiply by a complex scalar c (the standard product with c)."""
        return ExtNumber(c * self.x, c * self.y)

    @property
    def is_zero(self):
        return self.x == 0 and self.y == 0

    @property
    def is_pure_complex(self):
        return self.x == 0

    @property
    def is_pure_extended(self):
        return self.y == 0 and self.x != 0

    @property
    def phi(self):
        if self.x == 0 or self.y == 0:
            raise Degenerate("phi needs both parts nonzero")
        return abs(self.x) / abs(self.y)

    @property
    def theta(self):
        if self.x == 0 or self.y == 0:
            raise Degenerate("theta needs both parts nonzero")
        return float(np.angle(self.x) - np.angle(self.y))

    def to_json(self):
        x, y = complex(self.x), complex(self.y)
        return {"x": {"re": x.real, "im": x.imag}, "y": {"re": y.real, "im": y.imag}}

    @classmethod
    def from_json(cls, d):
        return cls(complex(d["x"]["re"], d["x"]["im"]), complex(d["y"]["re"], d["y"]["im"]))

    def close_to(self, other, tol=1e-10):
        return abs(complex(self.x - other.x)) <= tol and abs(complex(self.y - other.y)) <= tol

    def __repr__(self):
        return f"ExtNumber(x={self.x!r}, y={self.y!r})"


K = ExtNumber(1 + 0j, 0j)
ONE = ExtNumber(0j, 1 + 0j)
ZERO = ExtNumber(0j, 0j)


def _coerce(v):
    if isinstance(v, ExtNumber):
        return v
    return ExtNumber(0j, complex(v))


@dataclass(frozen=True)
class MapCoefficients:
    z1: complex
    w1: complex
    z2: complex
    w2: complex
    residual: float = 0.0

    def to_json(self):
        def c(z):
            z = complex(z)
            return {"re": z.real, "im": z.imag}

        return {"z1": c(self.z1), "w1": c(self.w1), "z2": c(self.z2), "w2": c(self.w2),
                "residual": float(self.residual)}

    @classmethod
    def from_json(cls, d):
        def c(v):
            return complex(v["re"], v["im"])

        return cls(c(d["z1"]), c(d["w1"]), c(d["z2"]), c(d["w2"]), float(d.get("residual", 0.0)))

    def as_vector(self):
        return np.array([self.z1, self.w1, self.z2, self.w2], dtype=complex)


@dataclass(frozen=True)
class AlgebraContext:
    """Global algebra parameters.  z0 and w0 have no defaults on purpose."""

    z0: complex
    w0: complex
    R: float = 2.0
    solver_tol: float = 1e-10
    solver_max_iter: int = 80
    multistart_seeds: int = 48
    # "bullet_conj": (k^bullet)* k^bullet = -i, the pair used by the printed system.
    # "conj_bullet": (k*)^bullet k^bullet = -i.
    unit_pair: str = "bullet_conj"
    seed: int = 0

    def __post_init__(self):
        if self.R < 0:
            raise ValueError("R must be non-negative")
        if self.solver_tol <= 0:
            raise ValueError("solver_tol must be positive")
        if self.unit_pair not in ("bullet_conj", "conj_bullet"):
            raise ValueError(f"unknown unit_pair {self.unit_pair!r}")
        if not (_finite(self.z0) and _finite(self.w0)):
            raise ValueError("z0, w0 must be finite")


# ---------------------------------------------------------------------------
# raw part-level kernels (work on scalars and numpy arrays alike)

def _k_std_mul(z0, w0, xa, ya, xb, yb):
    return xa * xb * z0 + xa * yb + ya * xb, xa * xb * w0 + ya * yb


def _k_conj_mul(xa, ya, xb, yb, z1, w1):
    cxa, cya = np.conj(xa), np.conj(ya)
    return cxa * yb * z1 + xb * cya, 1j * cxa * xb + cxa * yb * w1 + cya * yb


def _k_star(x, y, z1, w1):
    cx = np.conj(x)
    return cx * z1, cx * w1 + np.conj(y)


def _k_bullet(x, y, z2, w2):
    return x * z2, x * w2 + y


# ---------------------------------------------------------------------------
# basic operations

def std_add(a, b):
    return ExtNumber(a.x + b.x, a.y + b.y)


def std_mul(ctx, a, b):
    x, y = _k_std_mul(ctx.z0, ctx.w0, a.x, a.y, b.x, b.y)
    return ExtNumber(x, y)


def apply_map(a, m, which):
    if which == "star":
        if a.x == 0:
            return ExtNumber(0j, np.conj(a.y))
        if m is None:
            raise MapsMissing("star map needs z1, w1 for an extended operand")
        return ExtNumber(*_k_star(a.x, a.y, m.z1, m.w1))
    if which == "bullet":
        if a.x == 0:
            return a
        if m is None:
            raise MapsMissing("bullet map needs z2, w2 for an extended operand")
        return ExtNumber(*_k_bullet(a.x, a.y, m.z2, m.w2))
    raise ValueError(f"unknown map {which!r}")


def conj_mul(a, b, m_a=None):
    """a (.) b = a* b with the complex map of the left operand."""
    if a.x != 0 and b.y != 0 and m_a is None:
        raise MapsMissing("conj_mul needs the left operand's map")
    z1, w1 = (m_a.z1, m_a.w1) if m_a is not None else (0j, 0j)
    return ExtNumber(*_k_conj_mul(a.x, a.y, b.x, b.y, z1, w1))


def conj_add(a, b, m_a=None):
    """a (+) b = a* + b."""
    if a.x != 0 and m_a is None:
        raise MapsMissing("conj_add needs the left operand's map")
    if a.x == 0:
        return ExtNumber(b.x, np.conj(a.y) + b.y)
    s = apply_map(a, m_a, "star")
    return ExtNumber(s.x + b.x, s.y + b.y)


def abs4(ctx, a):
    ax2 = abs(a.x) ** 2
    ay2 = abs(a.y) ** 2
    return float(ax2 * ax2 + ay2 * ay2 + ctx.R * ax2 * ay2)


def ext_abs(ctx, a):
    return abs4(ctx, a) ** 0.25


def bullet_conj_mul(a, b, m_a=None, m_b=None):
    """a^bullet (.) b^bullet, with a^bullet sharing a's complex map.

    For two pure-extended operands the unit rule k^bullet (.) k^bullet = -i is
    used directly, so no maps are needed.
    """
    if a.y == 0 and b.y == 0 and (m_a is None or m_b is None):
        return ExtNumber(0j, -1j * np.conj(a.x) * b.x)
    ab = apply_map(a, m_a, "bullet")
    bb = apply_map(b, m_b, "bullet")
    return conj_mul(ab, bb, m_a)


# ---------------------------------------------------------------------------
# map system

def map_equations(z1, w1, z2, w2, phi, eith, z0, w0, R, unit_pair="bullet_conj"):
    """Residuals of the four complex map equations.

    ``eith`` is exp(i*theta).  All arguments may be numpy arrays.
    """
    c = np.conj
    i = 1j
    ep, em = eith, c(eith)
    ip = 1.0 / phi
    if unit_pair == "bullet_conj":
        e1 = z1 * c(z2) * w2 + z2 * c(w2)
        e2 = i * z2 * c(z2) + c(z2) * w1 * w2 + w2 * c(w2) + i
    else:
        e1 = z1 * z2 * z2 * z0 + 2 * z1 * z2 * w2 + w1 * z2
        e2 = z1 * z2 * z2 * w0 + z1 * w2 * w2 + w1 * w2 + i
    e3 = (c(z2) * w1 + c(w2) + z1 * w2 + z0 * z1 * c(z2) + z0 * z1 * z2 + z2 * w1
          + phi * em * (i * z1 * c(z2) - i * z1)
          + phi * ep * (i * z2 - i)
          + ip * em * (z1 * c(z2) + z1)
          + ip * ep * (z2 + 1)
          + ep * ep * (z0 * z2 + w2)
          + em * em * (z0 * z1 * z1 * c(z2) + 2 * z1 * c(z2) * w1 + z1 * c(w2)))
    e4 = (z1 * c(z2) * w0 + z1 * z2 * w0 + w1 * w2
          + phi * em * (i * c(z2) * w1 + i * c(w2) - i * w1)
          + phi * ep * (i * w2)
          + ip * ep * w2
          + ip * em * (c(z2) * w1 + c(w2) + w1)
          + em * em * (c(z2) * w1 * w1 + w1 * c(w2) + z1 * z1 * c(z2) * w0)
          + ep * ep * (z2 * w0)
          - R)
    return e1, e2, e3, e4


def _phase_params(x, y):
    ax, ay = np.abs(x), np.abs(y)
    return ax / ay, (x * np.conj(y)) / (ax * ay)


def map_residual(ctx, a, m):
    phi, eith = _phase_params(a.x, a.y)
    es = map_equations(m.z1, m.w1, m.z2, m.w2, phi, eith, ctx.z0, ctx.w0, ctx.R, ctx.unit_pair)
    return float(max(abs(e) for e in es))


def _lm_solve(fun, v0, max_iter, tol):
    """Batched Levenberg-Marquardt (damped Newton) on real systems.

    ``fun`` maps an (m, S) array to an (m, S) residual array, column by column.
    Returns the final iterate and per-column max-norm residuals.
    """
    v = np.array(v0, dtype=float)
    m, S = v.shape
    mu = np.full(S, 1e-3)
    F = fun(v)
    nrm = np.sqrt(np.sum(F * F, axis=0))
    h = 1e-7
    eye = np.eye(m)
    for _ in range(max_iter):
        active = np.max(np.abs(F), axis=0) > tol * 1e-3
        # columns whose damping blew up are stuck; stop touching them
        active &= np.isfinite(nrm) & (mu < 1e12)
        if not active.any():
            break
        idx = np.nonzero(active)[0]
        va = v[:, idx]
        # central-difference Jacobian for all active columns at once
        pert = np.repeat(va[:, :, None], 2 * m, axis=2)
        for j in range(m):
            pert[j, :, 2 * j] += h
            pert[j, :, 2 * j + 1] -= h
        Fp = fun(pert.reshape(m, -1)).reshape(F.shape[0], len(idx), 2 * m)
        J = (Fp[:, :, 0::2] - Fp[:, :, 1::2]) / (2 * h)  # (n_eq, S_a, m)
        J = np.transpose(J, (1, 0, 2))
        Fa = F[:, idx].T
        JT = np.transpose(J, (0, 2, 1))
        A = JT @ J + mu[idx, None, None] * eye
        g = np.einsum("sij,sj->si", JT, Fa)
        try:
            step = -np.linalg.solve(A, g[:, :, None])[:, :, 0]
        except np.linalg.LinAlgError:
            step = -np.einsum("sij,sj->si", np.linalg.pinv(A), g)
        vt = va + step.T
        Ft = fun(vt)
        nt = np.sqrt(np.sum(Ft * Ft, axis=0))
        better = np.isfinite(nt) & (nt < nrm[idx])
        bi = idx[better]
        v[:, bi] = vt[:, better]
        F[:, bi] = Ft[:, better]
        nrm[bi] = nt[better]
        mu[bi] = np.maximum(mu[bi] / 5.0, 1e-15)
        wi = idx[~better]
        mu[wi] = mu[wi] * 8.0
    res = np.max(np.abs(F), axis=0)
    res[~np.isfinite(res)] = np.inf
    return v, res


def _c(v, k):
    return v[2 * k] + 1j * v[2 * k + 1]


def _split(*zs):
    out = []
    for z in zs:
        out.append(np.real(z))
        out.append(np.imag(z))
    return np.array(out)


def _dedup(vectors, scale_tol=1e-6):
    kept = []
    for v in vectors:
        if all(np.max(np.abs(v - k)) > scale_tol * (1 + np.max(np.abs(k))) for k in kept):
            kept.append(v)
    return kept


def solve_maps_all(ctx, a, n_starts=None, seed=None):
    """Every distinct map solution found by multistart damped Newton, best first."""
    if a.x == 0 or a.y == 0:
        raise Degenerate("maps are undetermined for pure complex or pure extended numbers")
    phi, eith = _phase_params(complex(a.x), complex(a.y))
    n_starts = n_starts or ctx.multistart_seeds
    rng = np.random.default_rng(ctx.seed if seed is None else seed)
    v0 = rng.normal(scale=1.5, size=(8, n_starts))

    def fun(v):
        es = map_equations(_c(v, 0), _c(v, 1), _c(v, 2), _c(v, 3), phi, eith,
                           ctx.z0, ctx.w0, ctx.R, ctx.unit_pair)
        return _split(*es)

    v, res = _lm_solve(fun, v0, ctx.solver_max_iter, ctx.solver_tol)
    ok = np.nonzero(res <= ctx.solver_tol)[0]
    if len(ok) == 0:
        raise NoConvergence("no multistart converged for the map system", float(np.min(res)))
    order = ok[np.argsort(res[ok], kind="stable")]
    sols = _dedup([v[:, j] for j in order])
    out = []
    for s in sols:
        m = MapCoefficients(_c(s, 0), _c(s, 1), _c(s, 2), _c(s, 3), 0.0)
        out.append(MapCoefficients(m.z1, m.w1, m.z2, m.w2, map_residual(ctx, a, m)))
    out.sort(key=lambda m: m.residual)
    return out


def solve_maps(ctx, a, n_starts=None, seed=None):
    return solve_maps_all(ctx, a, n_starts, seed)[0]


def map_grid_statistics(ctx_factory, phis, thetas, z0s, w0s, n_starts=None):
    """Convergence statistics for the map solver over a parameter grid.

    ``ctx_factory(z0, w0)`` builds a context.  Failures are listed, not hidden.
    """
    rows = []
    for z0, w0 in itertools.product(z0s, w0s):
        ctx = ctx_factory(z0, w0)
        for phi, th in itertools.product(phis, thetas):
            a = ExtNumber(phi * np.exp(1j * th), 1.0 + 0j)
            try:
                sols = solve_maps_all(ctx, a, n_starts)
                rows.append({"phi": phi, "theta": th, "z0": z0, "w0": w0, "converged": True,
                             "n_roots": len(sols), "max_residual": max(m.residual for m in sols)})
            except NoConvergence as e:
                rows.append({"phi": phi, "theta": th, "z0": z0, "w0": w0, "converged": False,
                             "n_roots": 0, "max_residual": e.best_residual})
    n_ok = sum(r["converged"] for r in rows)
    return {"cells": len(rows), "converged": n_ok, "failed": len(rows) - n_ok, "rows": rows}


def unit_pair_residual(m, ctx=None):
    """Extended and complex residuals of the unit constraint pair for given maps."""
    kb = ExtNumber(m.z2, m.w2)
    if ctx is None or ctx.unit_pair == "bullet_conj":
        p = conj_mul(kb, kb, m)
    else:
        ks_b = ExtNumber(m.z1 * m.z2, m.z1 * m.w2 + m.w1)
        p = std_mul(ctx, ks_b, kb)
    return abs(p.x), abs(p.y + 1j)


def map_consistency_diagnostic(ctx, a, m=None):
    """How far a^bullet is from inheriting a's complex map.

    Solves the map system for a^bullet itself and reports the distance of its
    (z1, w1) to a's.  Returns None when a^bullet is degenerate.
    """
    m = m or solve_maps(ctx, a)
    ab = apply_map(a, m, "bullet")
    if ab.x == 0 or ab.y == 0:
        return None
    sols = solve_maps_all(ctx, ab)
    d = min(abs(s.z1 - m.z1) + abs(s.w1 - m.w1) for s in sols)
    return float(d)


# ---------------------------------------------------------------------------
# inner product and defects

def _maps_for(ctx, a, m):
    if m is not None or a.x == 0:
        return m
    if a.y == 0:
        return None
    return solve_maps(ctx, a)


def inner4(ctx, a, b, c, d, maps=(None, None, None, None)):
    """<a,b,c,d> = (a^bullet (.) b^bullet) * (c (.) d)."""
    m_a, m_b, m_c, _ = maps
    m_a = _maps_for(ctx, a, m_a)
    m_b = _maps_for(ctx, b, m_b)
    m_c = _maps_for(ctx, c, m_c)
    top = bullet_conj_mul(a, b, m_a, m_b)
    bottom = conj_mul(c, d, m_c)
    return std_mul(ctx, top, bottom)


def d_defect(g1, g2, g3, m1, m2, m12):
    """Distributivity defect of the conjugated product on the left factor."""
    sx = np.conj(g1.x) + np.conj(g2.x)
    y3 = g3.y
    e = sx * y3 * m12.z1 - (np.conj(g1.x) * m1.z1 + np.conj(g2.x) * m2.z1) * y3
    c = sx * y3 * m12.w1 - (np.conj(g1.x) * m1.w1 + np.conj(g2.x) * m2.w1) * y3
    return ExtNumber(e, c)


def f_defect(ctx, a1, a2, b1, b2, maps):
    """Defect of (a1 a2)^bullet (.) (b1 b2)^bullet against the split product.

    ``maps`` holds MapCoefficients under keys a1, a2, b1, b2, a1a2, b1b2.
    """
    p_a = std_mul(ctx, a1, a2)
    p_b = std_mul(ctx, b1, b2)
    Phi = apply_map(p_a, maps.get("a1a2"), "bullet")
    Psi = apply_map(p_b, maps.get("b1b2"), "bullet")
    Th = bullet_conj_mul(a1, b1, maps.get("a1"), maps.get("b1"))
    Ga = bullet_conj_mul(a2, b2, maps.get("a2"), maps.get("b2"))
    mp = maps.get("a1a2")
    z1p, w1p = (mp.z1, mp.w1) if mp is not None else (0j, 0j)
    cPe, cPi = np.conj(Phi.x), np.conj(Phi.y)
    fe = (cPe * Psi.y * z1p + cPi * Psi.x - Th.x * Ga.x * ctx.z0 - Th.x * Ga.y - Th.y * Ga.x)
    fi = (1j * cPe * Psi.x + cPe * Psi.y * w1p + cPi * Psi.y - Th.x * Ga.x * ctx.w0 - Th.y * Ga.y)
    return ExtNumber(fe, fi)


def g_defect(a, b, da, db, map_a, map_rate, map_da=None):
    """Correction term in d(a (.) b)/dt = da (.) b + a (.) db + G(a, b).

    ``map_rate`` holds the time derivatives of a's (z1, w1) in its z1, w1 slots;
    ``map_da`` is the complex map of the rate da (defaults to a's map).
    """
    map_da = map_da or map_a
    cda, ca = np.conj(da.x), np.conj(a.x)
    e = cda * b.y * (map_a.z1 - map_da.z1) + ca * b.y * map_rate.z1
    c = cda * b.y * (map_a.w1 - map_da.w1) + ca * b.y * map_rate.w1
    return ExtNumber(e, c)


# ---------------------------------------------------------------------------
# roots and division

def _orbit(beta):
    return [beta.scale(u) for u in (1, -1, 1j, -1j)]


def _sqrt_c(z):
    return complex(np.sqrt(complex(z)))


def std_sqrt(ctx, a):
    """All beta with beta*beta = a under the standard product."""
    x, y = complex(a.x), complex(a.y)
    z0, w0 = complex(ctx.z0), complex(ctx.w0)
    # eliminate v:  (z0^2 + 4 w0) U^2 - (4 y + 2 x z0) U + x^2 = 0 with U = u^2
    coeffs = [z0 * z0 + 4 * w0, -(4 * y + 2 * x * z0), x * x]
    while coeffs and abs(coeffs[0]) < 1e-300:
        coeffs = coeffs[1:]
    Us = list(np.roots(coeffs)) if len(coeffs) > 1 else []
    if abs(x) == 0:
        Us.append(0j)
    out = []
    for U in Us:
        u = _sqrt_c(U)
        if abs(u) > 1e-14:
            v = (x - U * z0) / (2 * u)
            cands = [(u, v), (-u, -v)]
        else:
            r = _sqrt_c(y)
            cands = [(0j, r), (0j, -r)]
        for uu, vv in cands:
            b = ExtNumber(complex(uu), complex(vv))
            # polish with a couple of complex Newton steps
            for _ in range(3):
                p = std_mul(ctx, b, b)
                fx, fy = p.x - x, p.y - y
                J = np.array([[2 * b.x * z0 + 2 * b.y, 2 * b.x], [2 * b.x * w0, 2 * b.y]])
                try:
                    dx, dy = np.linalg.solve(J, [-fx, -fy])
                except np.linalg.LinAlgError:
                    break
                b = ExtNumber(b.x + dx, b.y + dy)
            p = std_mul(ctx, b, b)
            if abs(p.x - x) + abs(p.y - y) <= 1e-9 * (1 + abs(x) + abs(y)):
                if all(not b.close_to(o, 1e-8) for o in out):
                    out.append(b)
    if not out:
        raise NoConvergence("std_sqrt found no root")
    return out


@dataclass(frozen=True)
class Root:
    """A root together with the maps it was solved with (None if not needed)."""

    value: ExtNumber
    maps: MapCoefficients | None
    residual: float = 0.0

    def orbit(self):
        return [Root(b, self.maps, self.residual) for b in _orbit(self.value)]


def _root_system(ctx, target_x, target_y, ext):
    """Residual function for (u, v, z1, w1, z2, w2) solving beta (.) beta = target."""
    tx, ty = complex(target_x), complex(target_y)

    # beta (.) beta is invariant under beta -> exp(i psi) beta, so fix the gauge
    # with a real, non-negative complex part: 11 real unknowns
    def fun(v):
        u, w = v[0] + 1j * v[1], v[2] + 0j
        z1, w1, z2, w2 = (v[3] + 1j * v[4], v[5] + 1j * v[6], v[7] + 1j * v[8],
                          v[9] + 1j * v[10])
        if ext:
            bx, by = _k_bullet(u, w, z2, w2)
        else:
            bx, by = u, w
        px, py = _k_conj_mul(bx, by, bx, by, z1, w1)
        with np.errstate(divide="ignore", invalid="ignore"):
            phi, eith = _phase_params(u, w)
            es = map_equations(z1, w1, z2, w2, phi, eith, ctx.z0, ctx.w0, ctx.R, ctx.unit_pair)
        return _split(px - tx, py - ty, *es)

    return fun


def _trivial_root(a, ext):
    """Closed-form roots that need no maps, or None."""
    x, y = complex(a.x), complex(a.y)
    if x == 0 and y.imag == 0 and y.real >= 0:
        return ExtNumber(0j, complex(math.sqrt(y.real)))
    if y == 0 and x == 0:
        return ZERO
    # (r k) (.) (r k) = i r^2 and (r k)^bullet (.) (r k)^bullet = -i r^2
    if x == 0 and y.real == 0:
        s = y.imag if not ext else -y.imag
        if s > 0:
            return ExtNumber(complex(math.sqrt(s)), 0j)
    return None


def _conj_root_general(ctx, a, ext, n_starts=None, seed=None):
    trivial = _trivial_root(a, ext)
    if trivial is not None:
        return [Root(trivial, None, 0.0)]
    fun = _root_system(ctx, a.x, a.y, ext)
    n_starts = n_starts or ctx.multistart_seeds
    base_seed = ctx.seed if seed is None else seed
    scale = math.sqrt(abs(complex(a.x)) + abs(complex(a.y)))
    tol = ctx.solver_tol * max(1.0, abs(complex(a.x)) + abs(complex(a.y)))
    best = float("inf")
    # a fresh, larger batch on the second attempt
    for attempt in range(2):
        S = n_starts * (1 + 2 * attempt)
        rng = np.random.default_rng([base_seed, attempt])
        v0 = rng.normal(scale=1.0, size=(11, S))
        v0[:3] *= scale
        v0[2] = np.abs(v0[2])
        v, res = _lm_solve(fun, v0, 3 * ctx.solver_max_iter, tol)
        v = np.vstack([v[:3], np.zeros((1, S)), v[3:]])
        best = min(best, float(np.min(res)))
        ok = np.nonzero(res <= tol)[0]
        ok = [j for j in ok if abs(_c(v[:, j], 0)) > 1e-9 and abs(_c(v[:, j], 1)) > 1e-9]
        if ok:
            break
    else:
        raise NoConvergence("root search did not converge", best)
    ok.sort(key=lambda j: res[j])
    roots = []
    for j in ok:
        s = v[:, j]
        beta = ExtNumber(complex(_c(s, 0)), complex(_c(s, 1)))
        m = MapCoefficients(complex(_c(s, 2)), complex(_c(s, 3)), complex(_c(s, 4)),
                            complex(_c(s, 5)), 0.0)
        m = MapCoefficients(m.z1, m.w1, m.z2, m.w2, map_residual(ctx, beta, m))
        if all(not beta.close_to(r.value.scale(u), 1e-6) for r in roots for u in (1, -1, 1j, -1j)):
            roots.append(Root(beta, m, float(res[j])))
    return roots


def conj_root(ctx, a, n_starts=None, seed=None):
    """Roots of beta (.) beta = a, each expanded to its {+-1, +-i} orbit."""
    out = []
    for r in _conj_root_general(ctx, a, False, n_starts, seed):
        out.extend(r.orbit())
    return out


def ext_conj_root(ctx, a, n_starts=None, seed=None):
    """Roots of beta^bullet (.) beta^bullet = a, with orbits."""
    out = []
    for r in _conj_root_general(ctx, a, True, n_starts, seed):
        out.extend(r.orbit())
    return out


def roots(ctx, a, kind="conj_root", n_starts=None, seed=None):
    if kind == "std_sqrt":
        return std_sqrt(ctx, a)
    if kind == "conj_root":
        return [r.value for r in conj_root(ctx, a, n_starts, seed)]
    if kind == "ext_conj_root":
        return [r.value for r in ext_conj_root(ctx, a, n_starts, seed)]
    raise ValueError(f"unknown root kind {kind!r}")


def _bullet_square(beta, m):
    """beta^bullet (.) beta^bullet."""
    return bullet_conj_mul(beta, beta, m, m)


def _conj_square(beta, m):
    return conj_mul(beta, beta, m)


def reciprocal(ctx, a, method="conj_root", n_starts=None, seed=None):
    if a.is_zero:
        raise DivisionByZero("division by the zero extended number")
    if a.x == 0:
        return ExtNumber(0j, 1.0 / complex(a.y))
    if method == "conj_root":
        r = _conj_root_general(ctx, a, False, n_starts, seed)[0]
        top = _bullet_square(r.value, r.maps)
    elif method == "ext_conj_root":
        r = _conj_root_general(ctx, a, True, n_starts, seed)[0]
        top = _conj_square(r.value, r.maps)
    else:
        raise ValueError(f"unknown division method {method!r}")
    n4 = abs4(ctx, r.value)
    return ExtNumber(top.x / n4, top.y / n4)


def divide(ctx, num, den, method="conj_root", n_starts=None, seed=None):
    """num / den through the conjugated root of den."""
    return std_mul(ctx, num, reciprocal(ctx, den, method, n_starts, seed))


def inverse(ctx, a, method="conj_root"):
    return reciprocal(ctx, a, method)


# ---------------------------------------------------------------------------
# law checkers

def inner_commutation_check(ctx, g1, d1, g2, d2, m_g1, m_g2, tol=1e-10):
    """Compare (g1 (.) d1)(g2 (.) d2) with (g2 (.) d1)(g1 (.) d2).

    The difference factors as -(d1_E d2_I - d1_I d2_E) * (C_E k + C_I); the
    two condition expressions returned are the full products.
    """
    lhs = std_mul(ctx, conj_mul(g1, d1, m_g1), conj_mul(g2, d2, m_g2))
    rhs = std_mul(ctx, conj_mul(g2, d1, m_g2), conj_mul(g1, d2, m_g1))
    pref = d1.x * d2.y - d1.y * d2.x
    c1e, c1i = np.conj(g1.x), np.conj(g1.y)
    c2e, c2i = np.conj(g2.x), np.conj(g2.y)
    z1a, w1a = (m_g1.z1, m_g1.w1) if m_g1 is not None else (0j, 0j)
    z1b, w1b = (m_g2.z1, m_g2.w1) if m_g2 is not None else (0j, 0j)
    br_e = (c1e * c2i * (w1a + ctx.z0 * z1a) - c1i * c2e * (w1b + ctx.z0 * z1b)
            + 1j * c1e * c2e * (z1a - z1b))
    br_i = (c1e * c2i * (ctx.w0 * z1a - 1j) - c1i * c2e * (ctx.w0 * z1b - 1j)
            + 1j * c1e * c2e * (w1a - w1b))
    cond = (complex(pref * br_e), complex(pref * br_i))
    diff = lhs - rhs
    residual = max(abs(complex(diff.x)), abs(complex(diff.y)))
    return {
        "holds": residual <= tol,
        "lhs": lhs,
        "rhs": rhs,
        "residual": residual,
        "conditions": cond,
        "conditions_vanish": max(abs(cond[0]), abs(cond[1])) <= tol,
    }


def conj_symmetry_check(ctx, a, b, m_a=None, m_b=None, tol=1e-8):
    """Evaluate the two root expansions of P = <a, b, a, b>."""
    P = inner4(ctx, a, b, a, b, (m_a, m_b, m_a, None))
    # prefer the root with the smallest extended part (pure complex when P is)
    sp = min(std_sqrt(ctx, P), key=lambda r: abs(complex(r.x)))
    g = _conj_root_general(ctx, sp, True)[0]
    d = _conj_root_general(ctx, sp, False)[0]
    gam, dlt = g.value, d.value
    e1 = std_mul(ctx, _bullet_square(gam, g.maps), _conj_square(dlt, d.maps))
    e2 = std_mul(ctx, _conj_square(gam, g.maps), _bullet_square(dlt, d.maps))
    res = max(abs(complex(e1.x - e2.x)), abs(complex(e1.y - e2.y)))
    out = {"P": P, "gamma": gam, "delta": dlt, "lhs": e1, "rhs": e2, "residual": res,
           "holds": res <= tol * max(1.0, abs(complex(P.y)) + abs(complex(P.x)))}
    if gam.x == 0 and dlt.x == 0:
        out["pure_reduction"] = abs(complex(gam.y)) ** 2 * abs(complex(dlt.y)) ** 2
    return out


def zero_divisor_check(ctx, b, tol=1e-12):
    """A nonzero a with a*b = 0 when b lies on the zero-divisor conic, else None."""
    u, v = b.x, b.y
    if u == 0 and v == 0:
        return None
    det = v * v + u * v * ctx.z0 - u * u * ctx.w0
    scale = abs(u) ** 2 + abs(v) ** 2
    if abs(det) > tol * max(scale, 1.0):
        return None
    if u != 0 or (u * ctx.z0 + v) != 0:
        return ExtNumber(u, -(u * ctx.z0 + v))
    # first row vanishes: u = 0 and v = 0 already excluded
    return ExtNumber(v, -u * ctx.w0)


# ---------------------------------------------------------------------------
# isotropy of the quartic norm

def _to_ints(vals):
    fr = [Fraction(v) for v in vals]
    den = 1
    for f in fr:
        den = den * f.denominator // math.gcd(den, f.denominator)
    return [int(f * den) for f in fr], den


def isotropy_orbit(a, b, c, d):
    """All 384 signed permutations of (a, b, c, d)."""
    out = []
    for perm in itertools.permutations((a, b, c, d)):
        for signs in itertools.product((1, -1), repeat=4):
            out.append(tuple(s * p for s, p in zip(signs, perm)))
    return out


def isotropy_scan(a, b, c, d, R_values=(2,)):
    """Spread of |alpha|^4 over the orbit of x = a i + b, y = c i + d.

    Computed exactly in integers after clearing the common dyadic denominator.
    """
    ints, den = _to_ints((a, b, c, d))
    orbit = isotropy_orbit(*ints)
    reports = {}
    for R in R_values:
        Rf = Fraction(R)
        rn, rd = Rf.numerator, Rf.denominator
        best = worst = None
        for t in orbit:
            px = t[0] * t[0] + t[1] * t[1]
            py = t[2] * t[2] + t[3] * t[3]
            val = rd * (px * px + py * py) + rn * px * py
            if best is None or val > best[0]:
                best = (val, t)
            if worst is None or val < worst[0]:
                worst = (val, t)
        scale = Fraction(1, rd * den ** 4)
        spread = (best[0] - worst[0]) * scale
        rep = {"R": R, "orbit_size": len(orbit), "spread": float(spread), "exact_zero": spread == 0}
        if spread != 0:
            rep["violation"] = {
                "high": {"tuple": [Fraction(v, den) for v in best[1]], "value": float(best[0] * scale)},
                "low": {"tuple": [Fraction(v, den) for v in worst[1]], "value": float(worst[0] * scale)},
            }
        reports[R] = rep
    return reports
