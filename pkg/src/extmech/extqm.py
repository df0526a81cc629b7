"""Finite-dimensional layer of the extended quantum mechanics.

States carry two components.  A ket is stored through its expansion
coefficients over a labelled basis: index ``i`` has the label pair
``(a_i, b_i)`` and the coefficient scalar ``c_top[i] (.) c_bottom[i]``.
Labels related by a common factor in {+-1, +-i} describe the same state.

Operators are pairs of matrices acting on the top and bottom coefficient
vectors; matrices act on the extended and complex parts separately.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import extnum as en
from .extnum import ExtNumber, MapCoefficients


class QMError(Exception):
    pass


class BasisMismatch(QMError):
    pass


class UnderdeterminedFactorization(QMError):
    pass


class GridTooCoarse(QMError):
    pass


class NonUnitary(QMError):
    pass


class SingularGFunction(QMError):
    """The linear system for the generator's extended part has no unique solution."""


@dataclass(frozen=True)
class QMConstants:
    a0: complex = 1.0
    b0: complex = 1.0
    hbar1: float = 1.0
    hbar2: float = 1.0
    hbar3: float = 1.0
    hbar4: float = 1.0
    hslash1: float = 1.0
    hslash2: float = 1.0

    def __post_init__(self):
        if self.a0 == 0 or self.b0 == 0:
            raise ValueError("a0 and b0 must be nonzero")


PURITY_TOL = 1e-10
_UNITS = (1, 1j, -1, -1j)


# ---------------------------------------------------------------------------
# labels

def _label(lab):
    lab = tuple(lab)
    if len(lab) < 2:
        raise ValueError("a label needs at least the pair (a', b')")
    return (complex(lab[0]), complex(lab[1])) + lab[2:]


def canonical_label(lab, ndigits=12):
    """Representative of the {+-1, +-i} class with the smallest argument in [0, 2pi)."""
    lab = _label(lab)
    a, b = lab[0], lab[1]
    lead = a if a != 0 else b
    if lead == 0:
        return (0j, 0j) + lab[2:]
    best = None
    for u in _UNITS:
        arg = float(np.angle(u * lead)) % (2 * math.pi)
        # treat 2pi - tiny as 0
        if arg > 2 * math.pi - 1e-12:
            arg = 0.0
        if best is None or arg < best[0]:
            best = (arg, u)
    u = best[1]
    ca = complex(round((u * a).real, ndigits), round((u * a).imag, ndigits)) + 0j
    cb = complex(round((u * b).real, ndigits), round((u * b).imag, ndigits)) + 0j
    return (ca, cb) + lab[2:]


def labels_equivalent(l1, l2, tol=1e-12):
    l1, l2 = _label(l1), _label(l2)
    if l1[2:] != l2[2:]:
        return False
    scale = max(1.0, abs(l1[0]), abs(l1[1]))
    for u in _UNITS:
        if abs(u * l1[0] - l2[0]) <= tol * scale and abs(u * l1[1] - l2[1]) <= tol * scale:
            return True
    return False


# ---------------------------------------------------------------------------
# scalars, kets and operators

@dataclass(frozen=True)
class ExtScalar:
    """top (.) bottom, with the bottom factor as the extended component."""

    top: ExtNumber
    bottom: ExtNumber
    map_top: MapCoefficients | None = None

    @property
    def value(self):
        return en.conj_mul(self.top, self.bottom, self.map_top)

    @property
    def label(self):
        """Eigen-label pair (complex parts of both factors)."""
        return (complex(self.top.y), complex(self.bottom.y))


def _as_ext(v):
    if isinstance(v, ExtNumber):
        return v
    if isinstance(v, dict):
        return ExtNumber.from_json(v)
    return ExtNumber(0j, complex(v))


def _map_or_none(d):
    if d is None or isinstance(d, MapCoefficients):
        return d
    return MapCoefficients.from_json(d)


@dataclass(frozen=True)
class ExtKet:
    labels: tuple
    coeff_top: tuple
    coeff_bottom: tuple
    maps_top: tuple | None = None
    maps_bottom: tuple | None = None
    basis: str = "default"
    is_bra: bool = False

    def __post_init__(self):
        labs = tuple(_label(lab) for lab in self.labels)
        top = tuple(_as_ext(c) for c in self.coeff_top)
        bot = tuple(_as_ext(c) for c in self.coeff_bottom)
        n = len(labs)
        if len(top) != n or len(bot) != n:
            raise ValueError("labels and coefficient arrays must have equal length")
        canon = [canonical_label(lab) for lab in labs]
        if len(set(canon)) != n:
            raise ValueError("two labels describe the same state")
        mt = tuple(_map_or_none(m) for m in self.maps_top) if self.maps_top else (None,) * n
        mb = tuple(_map_or_none(m) for m in self.maps_bottom) if self.maps_bottom else (None,) * n
        if len(mt) != n or len(mb) != n:
            raise ValueError("map arrays must match the number of labels")
        object.__setattr__(self, "labels", labs)
        object.__setattr__(self, "coeff_top", top)
        object.__setattr__(self, "coeff_bottom", bot)
        object.__setattr__(self, "maps_top", mt)
        object.__setattr__(self, "maps_bottom", mb)

    @property
    def dim(self):
        return len(self.labels)

    @classmethod
    def from_arrays(cls, labels, top, bottom, **kw):
        top = [ExtNumber(0j, complex(c)) for c in np.asarray(top, dtype=complex)]
        bottom = [ExtNumber(0j, complex(c)) for c in np.asarray(bottom, dtype=complex)]
        return cls(tuple(labels), tuple(top), tuple(bottom), **kw)

    def parts(self, which):
        cs = self.coeff_top if which == "top" else self.coeff_bottom
        return (np.array([complex(c.x) for c in cs]), np.array([complex(c.y) for c in cs]))

    def dual(self):
        return ExtKet(self.labels, self.coeff_top, self.coeff_bottom, self.maps_top,
                      self.maps_bottom, self.basis, not self.is_bra)

    def inverted(self):
        """Swap the top and bottom components (labels swap too)."""
        labs = tuple((lab[1], lab[0]) + lab[2:] for lab in self.labels)
        return ExtKet(labs, self.coeff_bottom, self.coeff_top, self.maps_bottom,
                      self.maps_top, self.basis, self.is_bra)

    def scalars(self):
        return [ExtScalar(t, b, m) for t, b, m in zip(self.coeff_top, self.coeff_bottom,
                                                      self.maps_top)]

    def ket_coefficients(self):
        """S_i = c_top_i (.) c_bottom_i."""
        return [en.conj_mul(t, b, m) for t, b, m in
                zip(self.coeff_top, self.coeff_bottom, self.maps_top)]

    def bra_coefficients(self):
        """B_i = c_top_i^bullet (.) c_bottom_i^bullet."""
        return [en.bullet_conj_mul(t, b, mt, mb) for t, b, mt, mb in
                zip(self.coeff_top, self.coeff_bottom, self.maps_top, self.maps_bottom)]

    def to_json(self):
        def lab(l):
            return [[l[0].real, l[0].imag], [l[1].real, l[1].imag]] + list(l[2:])
        return {
            "basis": self.basis,
            "bra": self.is_bra,
            "labels": [lab(l) for l in self.labels],
            "coeff_top": [c.to_json() for c in self.coeff_top],
            "coeff_bottom": [c.to_json() for c in self.coeff_bottom],
            "maps_top": [m.to_json() if m else None for m in self.maps_top],
            "maps_bottom": [m.to_json() if m else None for m in self.maps_bottom],
        }

    @classmethod
    def from_json(cls, d):
        if isinstance(d, str):
            d = json.loads(d)
        labels = [(complex(*l[0]), complex(*l[1]), *l[2:]) for l in d["labels"]]
        return cls(tuple(labels), tuple(d["coeff_top"]), tuple(d["coeff_bottom"]),
                   tuple(d.get("maps_top") or ()) or None,
                   tuple(d.get("maps_bottom") or ()) or None,
                   d.get("basis", "default"), bool(d.get("bra", False)))


ExtBra = ExtKet  # a bra is an ExtKet with is_bra=True; see ExtKet.dual


def basis_ket(labels, k, basis="default"):
    """Normalized basis ket k: coefficients 1/sqrt(2) in both components."""
    n = len(labels)
    e = np.zeros(n, dtype=complex)
    e[k] = 1 / math.sqrt(2)
    return ExtKet.from_arrays(labels, e, e, basis=basis)


@dataclass(frozen=True)
class ExtOperator:
    top: np.ndarray
    bottom: np.ndarray

    def __post_init__(self):
        t = np.array(self.top, dtype=complex)
        b = np.array(self.bottom, dtype=complex)
        if t.ndim != 2 or t.shape[0] != t.shape[1] or b.shape != t.shape:
            raise ValueError("operator components must be square matrices of equal size")
        t.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "top", t)
        object.__setattr__(self, "bottom", b)

    @property
    def dim(self):
        return self.top.shape[0]

    def is_hermitian(self, tol=1e-12):
        return (np.allclose(self.top, self.top.conj().T, atol=tol)
                and np.allclose(self.bottom, self.bottom.conj().T, atol=tol))

    def apply(self, ket):
        if ket.dim != self.dim:
            raise BasisMismatch("operator and ket dimensions differ")
        return _replace_parts(ket, _mat_parts(self.top, ket, "top"),
                              _mat_parts(self.bottom, ket, "bottom"))

    def to_json(self):
        def m(a):
            return {"re": a.real.tolist(), "im": a.imag.tolist()}
        return {"top": m(self.top), "bottom": m(self.bottom)}

    @classmethod
    def from_json(cls, d):
        if isinstance(d, str):
            d = json.loads(d)
        def m(x):
            return np.array(x["re"]) + 1j * np.array(x["im"])
        return cls(m(d["top"]), m(d["bottom"]))


def _mat_parts(M, ket, which):
    x, y = ket.parts(which)
    return M @ x, M @ y


def _replace_parts(ket, top, bottom):
    tt = tuple(ExtNumber(complex(a), complex(b)) for a, b in zip(*top))
    bb = tuple(ExtNumber(complex(a), complex(b)) for a, b in zip(*bottom))
    return ExtKet(ket.labels, tt, bb, ket.maps_top, ket.maps_bottom, ket.basis, ket.is_bra)


# ---------------------------------------------------------------------------
# inner product and normalization

def inner_ext(bra, ket, ctx=None):
    """<<bra|ket>> = sum over label-equivalent pairs of 4 B_i S_j.

    The factor 4 counts both members (a', b') and (i a', i b') of each label
    class on each side, so a basis ket has unit norm.
    """
    if bra.basis != ket.basis:
        raise BasisMismatch(f"bases differ: {bra.basis!r} vs {ket.basis!r}")
    ctx = ctx or en.AlgebraContext(0j, 0j)
    B = bra.bra_coefficients()
    S = ket.ket_coefficients()
    canon_k = {canonical_label(l): j for j, l in enumerate(ket.labels)}
    tot = en.ZERO
    for i, lab in enumerate(bra.labels):
        j = canon_k.get(canonical_label(lab))
        if j is None:
            continue
        tot = tot + en.std_mul(ctx, B[i], S[j]).scale(4)
    return tot


def self_inner(ket, ctx=None):
    return inner_ext(ket.dual(), ket, ctx)


def normalize_check(z, ctx=None, tol=1e-10):
    """Both normalization conditions on z = <<ab|ab>>.

    Accepts a ket, an ExtNumber or a complex value.
    """
    if isinstance(z, ExtKet):
        z = self_inner(z, ctx)
    extended = 0.0
    if isinstance(z, ExtNumber):
        extended = abs(complex(z.x))
        z = complex(z.y)
    z = complex(z)
    q1 = abs(z) ** 2
    q2 = z.real
    return {
        "z": z,
        "abs2": q1,
        "re": q2,
        "cond1": abs(q1 - 1) <= tol and extended <= tol,
        "cond2": abs(q2 - 1) <= tol and extended <= tol,
        "extended_part": extended,
    }


def coefficient_norm_sums(pairs_bra, pairs_ket, ctx=None):
    """Normalization sums written with the expansion coefficients.

    Each label class is counted with both of its members, so every class
    contributes 2 B S to the half-sum.  Returns (|z|^2, Re z).
    """
    ctx = ctx or en.AlgebraContext(0j, 0j)
    terms = [en.std_mul(ctx, _as_ext(b), _as_ext(s)) for b, s in zip(pairs_bra, pairs_ket)]
    half = sum((complex(t.y) for t in terms), 0j) * 2
    sum1 = 4 * abs(half) ** 2
    sum2 = sum(4 * complex(t.y).real for t in terms)
    return float(sum1), float(sum2)


def inverted_norm_check(ket, ctx=None, tol=1e-10):
    """<<ba|ba>> against <<ab|ab>>^*, with the inner-commutation conditions."""
    ctx = ctx or en.AlgebraContext(0j, 0j)
    z = self_inner(ket, ctx)
    zi = self_inner(ket.inverted(), ctx)
    conds = []
    for t, b, mt, mb in zip(ket.coeff_top, ket.coeff_bottom, ket.maps_top, ket.maps_bottom):
        conds.append(en.inner_commutation_check(ctx, t, b, b, t, mt, mb, tol))
    res = max(abs(complex(zi.y) - complex(z.y).conjugate()), abs(complex(zi.x)) + abs(complex(z.x)))
    return {
        "z": z,
        "z_inverted": zi,
        "residual": res,
        "holds": res <= tol,
        "conditions_vanish": all(c["conditions_vanish"] for c in conds),
    }


def is_pure(z, tol=PURITY_TOL):
    return abs(complex(z.x)) <= tol * (1 + abs(complex(z.y)))


# ---------------------------------------------------------------------------
# eigen-structure

def eigen_check(op, ket, scalar, ctx=None, other=None, tol=1e-10):
    """Check a claimed eigen-pair and the labelling rules.

    ``other`` may be a second (ket, scalar) pair in the same basis; the inner
    product between the two may be nonzero only for equivalent labels.
    """
    ctx = ctx or en.AlgebraContext(0j, 0j)
    out = {}
    for which, M, lam in (("top", op.top, scalar.top), ("bottom", op.bottom, scalar.bottom)):
        x, y = ket.parts(which)
        lx, ly = M @ x, M @ y
        rx, ry = en._k_std_mul(ctx.z0, ctx.w0, lam.x, lam.y, x, y)
        err = float(max(np.max(np.abs(lx - rx), initial=0), np.max(np.abs(ly - ry), initial=0)))
        out[f"{which}_residual"] = err
    out["eigen_ok"] = max(out["top_residual"], out["bottom_residual"]) <= tol * (
        1 + np.abs(op.top).max() + np.abs(op.bottom).max())
    viol = [w for w, lam in (("top", scalar.top), ("bottom", scalar.bottom)) if not is_pure(lam)]
    out["purity_violations"] = viol
    out["pure"] = not viol
    out["hermitian"] = op.is_hermitian()
    out["label_rule_ok"] = True
    if other is not None:
        ket2, scalar2 = other
        z = inner_ext(ket.dual(), ket2, ctx)
        nonzero = abs(complex(z.x)) + abs(complex(z.y)) > tol
        allowed = labels_equivalent(scalar.label, scalar2.label)
        out["inner"] = z
        out["inner_nonzero"] = nonzero
        out["labels_equivalent"] = allowed
        out["label_rule_ok"] = (not nonzero) or allowed
    out["ok"] = out["eigen_ok"] and out["pure"] and out["label_rule_ok"]
    return out


@dataclass(frozen=True)
class Eigenbasis:
    kets: tuple
    scalars: tuple
    U_top: np.ndarray
    U_bottom: np.ndarray
    diagonal: ExtOperator

    @property
    def labels(self):
        return tuple(k.labels[i] for i, k in enumerate(self.kets))


def eigenbasis(op, basis="eigen"):
    """Eigenkets of a Hermitian operator, expressed in their own basis.

    The k-th top and bottom eigenvalues (ascending) are paired; repeated pairs
    get a degeneracy index as a third label entry.
    """
    if not op.is_hermitian(1e-10):
        raise ValueError("eigenbasis needs Hermitian components")
    at, ut = np.linalg.eigh(op.top)
    ab, ub = np.linalg.eigh(op.bottom)
    labels, seen = [], {}
    for a, b in zip(at, ab):
        lab = (complex(a), complex(b))
        key = canonical_label(lab, ndigits=9)
        n = seen.get(key, 0)
        seen[key] = n + 1
        labels.append(lab + (n,))
    kets = tuple(basis_ket(labels, k, basis) for k in range(len(labels)))
    scalars = tuple(ExtScalar(ExtNumber(0j, complex(a)), ExtNumber(0j, complex(b)))
                    for a, b in zip(at, ab))
    diag = ExtOperator(ut.conj().T @ op.top @ ut, ub.conj().T @ op.bottom @ ub)
    return Eigenbasis(kets, scalars, ut, ub, diag)


# ---------------------------------------------------------------------------
# series expansion

def expand_coefficients(ket, basis_kets=None, ctx=None, factorize=False, tol=1e-10):
    """Coefficient products c_a (.) c_b = <<a b|ket>> / 2 for every basis ket.

    With ``factorize`` the per-component coefficients are returned too.  For
    pure-complex data only the product conj(c_a) c_b is fixed; the returned
    factorization uses the gauge c_a = sqrt|product| (real, non-negative).
    """
    ctx = ctx or en.AlgebraContext(0j, 0j)
    if basis_kets is None:
        basis_kets = [basis_ket(ket.labels, k, ket.basis) for k in range(ket.dim)]
    pairs, bra_pairs = [], []
    for b in basis_kets:
        z = inner_ext(b.dual(), ket, ctx)
        pairs.append(ExtNumber(z.x / 2, z.y / 2))
        zb = inner_ext(ket.dual(), b, ctx)
        bra_pairs.append(ExtNumber(zb.x / 2, zb.y / 2))
    s1, s2 = coefficient_norm_sums(bra_pairs, pairs, ctx)
    norm = normalize_check(self_inner(ket, ctx), ctx, tol)
    out = {
        "pairs": pairs,
        "bra_pairs": bra_pairs,
        "norm_sum1": s1,
        "norm_sum2": s2,
        "norm_sums_ok": abs(s1 - 1) <= tol and abs(s2 - 1) <= tol,
        "sums_match_inner": abs(s1 - norm["abs2"]) <= tol and abs(s2 - norm["re"]) <= tol,
    }
    if factorize:
        if not all(p.is_pure_complex for p in pairs):
            raise UnderdeterminedFactorization(
                "extended products do not fix the component coefficients")
        tops, bots = [], []
        for p in pairs:
            r = math.sqrt(abs(complex(p.y)))
            tops.append(ExtNumber(0j, complex(r)))
            bots.append(ExtNumber(0j, complex(p.y) / r if r > 0 else 0j))
        out["coeff_top"] = tops
        out["coeff_bottom"] = bots
        out["gauge_fixed"] = True
    return out


# ---------------------------------------------------------------------------
# operator representations on sampled coefficients

_C4 = np.array([1, -8, 0, 8, -1]) / 12.0
_FWD4 = np.array([-25, 48, -36, 16, -3]) / 12.0
_FWD4_1 = np.array([-3, -10, 18, -6, 1]) / 12.0


def derivative4(c, grid):
    """Fourth-order derivative of samples on a uniform grid."""
    c = np.asarray(c)
    x = np.asarray(grid, dtype=float)
    if x.ndim != 1 or len(x) != len(c):
        raise ValueError("grid and samples must be 1-D of equal length")
    if len(x) < 5:
        raise GridTooCoarse("the fourth-order stencil needs at least 5 points")
    h = np.diff(x)
    if np.any(h <= 0) or np.ptp(h) > 1e-9 * abs(h[0]):
        raise ValueError("grid must be uniform and increasing")
    h = h.mean()
    d = np.empty_like(c, dtype=np.result_type(c, float))
    d[2:-2] = (c[:-4] * _C4[0] + c[1:-3] * _C4[1] + c[3:-1] * _C4[3] + c[4:] * _C4[4])
    d[0] = _FWD4 @ c[:5]
    d[1] = _FWD4_1 @ c[:5]
    d[-1] = -(_FWD4 @ c[::-1][:5])
    d[-2] = -(_FWD4_1 @ c[::-1][:5])
    return d / h


@dataclass(frozen=True)
class ScalarField:
    x: np.ndarray
    y: np.ndarray
    g_prime: tuple | None = None

    def at(self, i):
        return ExtNumber(complex(self.x[i]), complex(self.y[i]))


_KINDS = {
    # kind: (component, sign/constant selector)
    "p_u": "top", "l_u": "top", "s_u": "top", "b_u": "top",
    "p_d": "bottom", "l_d": "bottom", "s_d": "bottom", "b_d": "bottom",
}


def g_function(c_x, c_y, dc_x, maps, ctx, sign):
    """First-order G term for a top-component generator.

    All three numbers N, N1, N2 share the map (z1, w1).  The extended part u_E
    of the generator solves u_E + K conj(u_E) = sign * dc_E.
    """
    z1, w1 = complex(maps.z1), complex(maps.w1)
    if z1 == 0:
        raise SingularGFunction("z1 = 0")
    z0, w0 = complex(ctx.z0), complex(ctx.w0)
    BE = z1 * z1 * z0 + w1 + w1 * z1 + np.conj(z0) * z1
    BI = z1 * z1 * w0 + w1 + w1 * w1 - np.conj(z0) * w1 + np.conj(w0)
    K = np.conj(c_x) * BE / z1
    Kr, Ki = K.real, K.imag
    det = 1 - np.abs(K) ** 2
    if np.any(np.abs(det) < 1e-12):
        raise SingularGFunction("|K| = 1: generator extended part not unique")
    r = sign * dc_x
    a = ((1 - Kr) * r.real - Ki * r.imag) / det
    b = ((1 + Kr) * r.imag - Ki * r.real) / det
    uE = a + 1j * b
    GE = np.conj(uE) * K
    GI = -w1 * np.conj(GE) + np.conj(uE) * np.conj(c_x) * BI
    return GE, GI


def op_apply(kind, c, grid, constants=None, maps=None, ctx=None):
    """Scalar field of an operator acting on sampled coefficients.

    ``c`` is a complex array (pure-complex coefficients) or a pair of arrays
    (extended part, complex part).  Top kinds with extended coefficients need
    the shared map ``maps``.
    """
    if kind not in _KINDS:
        raise ValueError(f"unknown operator kind {kind!r}")
    k = constants or QMConstants()
    if isinstance(c, tuple):
        cx, cy = (np.asarray(v, dtype=complex) for v in c)
    else:
        cy = np.asarray(c, dtype=complex)
        cx = np.zeros_like(cy)
    dx = derivative4(cx, grid)
    dy = derivative4(cy, grid)
    if kind == "p_d":
        f = -k.hbar1 / k.b0
    elif kind == "l_d":
        f = -k.hbar2 / k.b0
    elif kind in ("s_d", "b_d"):
        f = k.b0 * k.hslash2
    if _KINDS[kind] == "bottom":
        return ScalarField(f * dx, f * dy)

    ca0 = np.conj(k.a0)
    if kind in ("p_u", "l_u"):
        sign, pref = -1, -(k.hbar1 if kind == "p_u" else k.hbar2) / ca0
    else:
        sign, pref = 1, k.hslash1 / ca0
    if np.all(cx == 0):
        GE = np.zeros_like(dx)
        GI = np.zeros_like(dy)
    else:
        if maps is None:
            raise en.MapsMissing("top-component kinds need the coefficient map for extended data")
        ctx = ctx or en.AlgebraContext(0j, 0j)
        GE, GI = g_function(cx, cy, dx, maps, ctx, sign)
    if sign < 0:
        out = ScalarField(pref * (dx + GE), pref * (dy + GI), (GE, GI))
    else:
        out = ScalarField(pref * (dx - GE), pref * (dy - GI), (GE, GI))
    return out


# ---------------------------------------------------------------------------
# time evolution

def _step_matrices(Omega_T, Omega_R, dtau, k):
    n = Omega_T.shape[0]
    I = np.eye(n)
    UT = (I + np.conj(k.a0) / k.hbar3 * Omega_T * dtau).conj().T
    UR = I + k.b0 / k.hbar4 * Omega_R * dtau
    return UT, UR


@dataclass(frozen=True)
class EvolveResult:
    ket: ExtKet
    composition_error: tuple
    schrodinger_residual: float
    norm_before: dict
    norm_after: dict


def evolve_step(ket, Omega_T, Omega_R, dtau, constants=None, ctx=None):
    """One infinitesimal step of both components.

    The top component gets (1 + a0* Omega_T dtau / hbar3)^dagger, the bottom
    (1 + b0 Omega_R dtau / hbar4).  The composition error compares two steps
    of dtau with one of 2 dtau (per component, operator norm).
    """
    k = constants or QMConstants()
    OT = np.asarray(Omega_T, dtype=complex)
    OR = np.asarray(Omega_R, dtype=complex)
    UT, UR = _step_matrices(OT, OR, dtau, k)
    UT2, UR2 = _step_matrices(OT, OR, 2 * dtau, k)
    new = _replace_parts(ket, (UT @ ket.parts("top")[0], UT @ ket.parts("top")[1]),
                         (UR @ ket.parts("bottom")[0], UR @ ket.parts("bottom")[1]))
    comp = (float(np.linalg.norm(UT @ UT - UT2, 2)), float(np.linalg.norm(UR @ UR - UR2, 2)))
    # residual of the finite-difference Schrodinger equation over two steps
    gT = np.conj(np.conj(k.a0) / k.hbar3) * OT.conj().T
    gR = k.b0 / k.hbar4 * OR
    res = 0.0
    for U, g, which in ((UT, gT, "top"), (UR, gR, "bottom")):
        for v in ket.parts(which):
            lhs = (U @ U @ v - v) / (2 * dtau)
            res = max(res, float(np.max(np.abs(lhs - g @ v), initial=0)))
    return EvolveResult(new, comp, res, normalize_check(ket, ctx), normalize_check(new, ctx))


def evolve_trace(ket, Omega_T, Omega_R, dtau, n_steps, constants=None, ctx=None):
    rows = []
    cur = ket
    for n in range(n_steps + 1):
        nc = normalize_check(cur, ctx)
        rows.append({"step": n, "tau": n * dtau, "z_re": nc["z"].real, "z_im": nc["z"].imag,
                     "abs2": nc["abs2"], "re": nc["re"]})
        if n < n_steps:
            cur = evolve_step(cur, Omega_T, Omega_R, dtau, constants, ctx).ket
    return rows


def trace_to_csv(rows):
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=["step", "tau", "z_re", "z_im", "abs2", "re"],
                       lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
    return buf.getvalue()


def composition_slope(Omega_T, Omega_R, dtaus=(1e-3, 5e-4), constants=None):
    """Log-log slope of the composition error between two step sizes."""
    k = constants or QMConstants()
    errs = []
    for dt in dtaus:
        UT, UR = _step_matrices(Omega_T, Omega_R, dt, k)
        UT2, UR2 = _step_matrices(Omega_T, Omega_R, 2 * dt, k)
        errs.append((np.linalg.norm(UT @ UT - UT2, 2), np.linalg.norm(UR @ UR - UR2, 2)))
    errs = np.array(errs)
    ratio = math.log(dtaus[0] / dtaus[1])
    return {"errors": errs.tolist(),
            "slope_top": float(math.log(errs[0, 0] / errs[1, 0]) / ratio),
            "slope_bottom": float(math.log(errs[0, 1] / errs[1, 1]) / ratio)}


# ---------------------------------------------------------------------------
# picture change

def _check_unitary(U, tol):
    U = np.asarray(U, dtype=complex)
    err = float(np.linalg.norm(U.conj().T @ U - np.eye(U.shape[0]), 2))
    if err > tol:
        raise NonUnitary(f"||U^dagger U - I|| = {err:.3e}")
    return U


def heisenberg_transform(op, U_T, U_R, tol=1e-10):
    UT = _check_unitary(U_T, tol)
    UR = _check_unitary(U_R, tol)
    return ExtOperator(UT.conj().T @ op.top @ UT, UR.conj().T @ op.bottom @ UR)


def propagators(Omega_T, Omega_R, tau, constants=None):
    """Exact finite-time propagators exp(a0 tau Omega_T / hbar3), exp(b0 tau Omega_R / hbar4).

    Unitary for Hermitian generators when a0 and b0 are purely imaginary.
    """
    from scipy.linalg import expm

    k = constants or QMConstants()
    return (expm(k.a0 / k.hbar3 * tau * np.asarray(Omega_T, dtype=complex)),
            expm(k.b0 / k.hbar4 * tau * np.asarray(Omega_R, dtype=complex)))


def derivative_defect(ctx, a, b, da, db, map_a=None, map_rate=None, map_da=None):
    """The G correction of d(a (.) b)/dt and its conjugated root.

    Pure-complex a and da give G = 0 without any maps.
    """
    if a.x == 0 and da.x == 0:
        return {"G": en.ZERO, "root": en.ZERO}
    if map_a is None or map_rate is None:
        raise en.MapsMissing("extended entries need their map and its rate")
    G = en.g_defect(a, b, da, db, map_a, map_rate, map_da)
    if abs(complex(G.x)) + abs(complex(G.y)) == 0:
        return {"G": G, "root": en.ZERO}
    root = en.conj_root(ctx, G)[0].value
    return {"G": G, "root": root}
