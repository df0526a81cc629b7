import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, strategies as st

from extmech import extnum as en
from extmech.extnum import (
    K, ONE, ZERO, AlgebraContext, ExtNumber, MapCoefficients,
)

# values below 1e-6 snap to zero so quartic norms never underflow
finite = st.floats(-50, 50, allow_nan=False, allow_infinity=False).map(
    lambda v: 0.0 if abs(v) < 1e-6 else v)
cplx = st.builds(complex, finite, finite)
ext = st.builds(ExtNumber, cplx, cplx)
maps_st = st.builds(MapCoefficients, cplx, cplx, cplx, cplx)
small_int = st.integers(-30, 30)
frac = st.builds(Fraction, small_int, st.integers(1, 12))


def close(a, b, tol=1e-9):
    return abs(complex(a.x) - complex(b.x)) <= tol and abs(complex(a.y) - complex(b.y)) <= tol


def scaled_close(a, b, tol=1e-9):
    s = 1 + max(abs(complex(v)) for v in (a.x, a.y, b.x, b.y))
    return close(a, b, tol * s)


# --- construction and addition ----------------------------------------------

def test_rejects_non_finite():
    with pytest.raises(ValueError):
        ExtNumber(float("nan"), 0)


def test_context_validation():
    with pytest.raises(ValueError):
        AlgebraContext(0, 1, R=-1)
    with pytest.raises(ValueError):
        AlgebraContext(0, 1, solver_tol=0)
    with pytest.raises(ValueError):
        AlgebraContext(0, 1, unit_pair="nope")
    c = AlgebraContext(0, 1)
    with pytest.raises(Exception):
        c.R = 3


def test_add_examples():
    assert ExtNumber(1, 1) + ExtNumber(2, 3) == ExtNumber(3, 4)
    a = ExtNumber(1 + 2j, -3j)
    assert a + ZERO == a
    assert a + (-a) == ZERO


def test_json_roundtrip():
    a = ExtNumber(1 + 2j, -0.5j)
    assert ExtNumber.from_json(a.to_json()) == a
    m = MapCoefficients(1j, 2, 3 - 1j, 0.5, 1e-12)
    assert MapCoefficients.from_json(m.to_json()) == m


# --- standard product ---------------------------------------------------------

def test_k_squared(ctx):
    assert en.std_mul(ctx, K, K) == ExtNumber(ctx.z0, ctx.w0)


def test_mul_identity(ctx):
    a = ExtNumber(1.5 - 2j, 0.25j)
    assert en.std_mul(ctx, a, ONE) == a


def test_k_times_k_plus_one():
    # hand expansion: k(k+1) = k^2 + k = (z0 + 1) k + w0
    c = AlgebraContext(Fraction(3, 7), Fraction(-2, 5))
    kq = ExtNumber(Fraction(1), Fraction(0))
    assert en.std_mul(c, kq, ExtNumber(Fraction(1), Fraction(1))) == ExtNumber(Fraction(10, 7), Fraction(-2, 5))


@given(frac, frac, frac, frac, frac, frac)
def test_ring_laws_exact(a, b, c, d, e, f):
    ex = AlgebraContext(Fraction(1, 3), Fraction(-5, 2))
    x, y, z = ExtNumber(a, b), ExtNumber(c, d), ExtNumber(e, f)
    m = lambda u, v: en.std_mul(ex, u, v)
    assert m(m(x, y), z) == m(x, m(y, z))
    assert m(x, y) == m(y, x)
    assert m(x, y + z) == m(x, y) + m(x, z)
    assert (x + y) + z == x + (y + z)


# --- maps ------------------------------------------------------------------

def test_apply_map_pure_complex():
    a = ExtNumber(0, 2 + 3j)
    assert en.apply_map(a, None, "star") == ExtNumber(0, 2 - 3j)
    assert en.apply_map(a, None, "bullet") == a
    with pytest.raises(en.MapsMissing):
        en.apply_map(K, None, "star")
    with pytest.raises(ValueError):
        en.apply_map(a, None, "other")


@given(cplx, ext, maps_st)
def test_star_of_scaled(c, a, m):
    # (c a)* = c* a* with shared maps
    lhs = en.apply_map(a.scale(c), m, "star")
    rhs = en.apply_map(a, m, "star").scale(np.conj(c))
    assert scaled_close(lhs, rhs, 1e-9 * (1 + abs(c)))


# --- conjugated product and sum ----------------------------------------------

def test_conj_mul_examples():
    assert en.conj_mul(K, K) == ExtNumber(0, 1j)
    assert en.conj_mul(ExtNumber(2, 0), ExtNumber(2, 0)) == ExtNumber(0, 4j)
    i = ExtNumber(0, 1j)
    assert en.conj_mul(i, i) == ONE
    with pytest.raises(en.MapsMissing):
        en.conj_mul(ExtNumber(1, 1), ExtNumber(1, 1))


@given(ext, ext, ext, maps_st)
def test_conj_mul_right_distributive(a, b, c, m):
    lhs = en.conj_mul(a, b + c, m)
    rhs = en.conj_mul(a, b, m) + en.conj_mul(a, c, m)
    assert scaled_close(lhs, rhs, 1e-9 * 1e4)


def test_conj_add_examples():
    a = ExtNumber(1 + 1j, 2 - 1j)
    m = MapCoefficients(0.3j, 1 + 0.5j, -0.2, 0.7j)
    assert en.conj_add(ZERO, a) == a
    p, q = ExtNumber(0, 1 + 2j), ExtNumber(0, 3 - 1j)
    assert en.conj_add(p, q) == ExtNumber(0, (1 - 2j) + (3 - 1j))
    b = ExtNumber(-0.5, 1j)
    mb = MapCoefficients(1.1, 0.2j, 0.4, -1)
    # witness of non-commutativity, expanded by hand
    ab = ExtNumber(np.conj(a.x) * m.z1 + b.x, np.conj(a.x) * m.w1 + np.conj(a.y) + b.y)
    ba = ExtNumber(np.conj(b.x) * mb.z1 + a.x, np.conj(b.x) * mb.w1 + np.conj(b.y) + a.y)
    assert en.conj_add(a, b, m) == ab
    assert en.conj_add(b, a, mb) == ba
    assert not ab.close_to(ba)
    # no right identity in general
    assert not en.conj_add(a, ZERO, m).close_to(a)


# --- absolute value ----------------------------------------------------------

def test_abs4_examples(ctx):
    assert en.abs4(ctx, K) == 1
    assert en.abs4(ctx, ONE) == 1
    assert en.abs4(ctx, ExtNumber(1 + 1j, 1 + 1j)) == pytest.approx(16)
    assert en.ext_abs(ctx, ExtNumber(1 + 1j, 1 + 1j)) == pytest.approx(2)


@given(ext)
def test_abs4_nonnegative_and_definite(a):
    c = AlgebraContext(0.3, -1)
    v = en.abs4(c, a)
    assert v >= 0
    assert (v == 0) == a.is_zero


@given(ext, cplx)
def test_abs_homogeneous(a, c):
    ctx = AlgebraContext(0.3, -1)
    lhs = en.ext_abs(ctx, a.scale(c))
    rhs = abs(c) * en.ext_abs(ctx, a)
    assert lhs == pytest.approx(rhs, rel=1e-12, abs=1e-300)


@given(st.builds(complex, st.floats(0.1, 5), st.floats(-5, 5)),
       st.builds(complex, st.floats(0.1, 5), st.floats(-5, 5)),
       st.builds(complex, st.floats(0.1, 5), st.floats(-5, 5)))
def test_phases_invariant_under_scaling(x, y, c):
    a = ExtNumber(x, y)
    b = a.scale(c)
    assert b.phi == pytest.approx(a.phi, rel=1e-12)
    assert abs(np.exp(1j * b.theta) - np.exp(1j * a.theta)) < 1e-12


# --- map solver ----------------------------------------------------------------

def test_solve_maps_degenerate(ctx):
    with pytest.raises(en.Degenerate):
        en.solve_maps(ctx, ExtNumber(0, 1 + 1j))
    with pytest.raises(en.Degenerate):
        en.solve_maps(ctx, ExtNumber(2, 0))


def test_solve_maps_residuals(ctx):
    a = ExtNumber(0.8 * np.exp(0.4j), 1.3 - 0.2j)
    sols = en.solve_maps_all(ctx, a)
    assert sols
    phi, eith = abs(a.x) / abs(a.y), a.x * np.conj(a.y) / abs(a.x * a.y)
    for m in sols:
        es = en.map_equations(m.z1, m.w1, m.z2, m.w2, phi, eith, ctx.z0, ctx.w0, ctx.R)
        assert max(abs(e) for e in es) < 1e-10
        # context-free pair written out directly
        z2, w1, w2 = m.z2, m.w1, m.w2
        pair = 1j * abs(z2) ** 2 + np.conj(z2) * w1 * w2 + abs(w2) ** 2
        assert abs(pair + 1j) < 1e-10
        ext_res, cpx_res = en.unit_pair_residual(m, ctx)
        assert max(ext_res, cpx_res) < 1e-10


def test_map_grid_reports_failures():
    stats = en.map_grid_statistics(lambda z0, w0: AlgebraContext(z0, w0),
                                   (1.0,), (0.0, 1.0), (0.3 + 0.2j,), (-0.7 + 0.1j,))
    assert stats["cells"] == 2
    assert stats["converged"] + stats["failed"] == 2
    for row in stats["rows"]:
        if row["converged"]:
            assert row["max_residual"] <= 1e-10
        else:
            assert "max_residual" in row


# --- inner product -----------------------------------------------------------

def test_inner4_examples(ctx):
    assert en.inner4(ctx, ONE, ONE, ONE, ONE) == ONE
    assert en.inner4(ctx, K, K, K, K).close_to(ONE, 1e-15)


def test_inner4_matches_abs4(ctx):
    rng = np.random.default_rng(3)
    for _ in range(3):
        a = ExtNumber(complex(rng.normal(), rng.normal()), complex(rng.normal(), rng.normal()))
        m = en.solve_maps(ctx, a)
        v = en.inner4(ctx, a, a, a, a, (m, m, m, m))
        assert abs(complex(v.x)) < 1e-8
        assert complex(v.y) == pytest.approx(en.abs4(ctx, a), rel=1e-8)


# --- defects -------------------------------------------------------------------

@given(ext, ext, ext, maps_st, maps_st, maps_st)
def test_d_defect_identity(g1, g2, g3, m1, m2, m12):
    lhs = en.conj_mul(g1 + g2, g3, m12)
    rhs = en.conj_mul(g1, g3, m1) + en.conj_mul(g2, g3, m2) + en.d_defect(g1, g2, g3, m1, m2, m12)
    assert scaled_close(lhs, rhs, 1e-12 * 1e5)


@given(ext, ext, ext, ext, maps_st, maps_st, maps_st)
def test_d_defect_additive(g1, g2, g3, g4, m1, m2, m12):
    s = en.d_defect(g1, g2, g3, m1, m2, m12) + en.d_defect(g1, g2, g4, m1, m2, m12)
    assert scaled_close(s, en.d_defect(g1, g2, g3 + g4, m1, m2, m12), 1e-12 * 1e4)


def test_d_defect_degenerate_cases():
    m1 = MapCoefficients(1j, 2, 0.5, -1)
    m2 = MapCoefficients(0.3, -1j, 1, 1)
    m12 = MapCoefficients(-0.4, 0.9j, 2, 0)
    g3 = ExtNumber(1 + 1j, 2 - 1j)
    assert en.d_defect(ExtNumber(0, 1), ExtNumber(0, 2j), g3, m1, m2, m12).is_zero
    assert en.d_defect(ExtNumber(1, 1), ExtNumber(2j, 3), ExtNumber(4, 0), m1, m2, m12).is_zero
    d = en.d_defect(ExtNumber(1, 1), ExtNumber(2j, 3), g3, m1, m1, m1)
    assert abs(d.x) + abs(d.y) < 1e-15


def test_f_defect_identity(ctx):
    rng = np.random.default_rng(7)
    r = lambda: complex(rng.normal(), rng.normal())
    for _ in range(50):
        a1, a2, b1, b2 = (ExtNumber(r(), r()) for _ in range(4))
        maps = {k: MapCoefficients(r(), r(), r(), r()) for k in ("a1", "a2", "b1", "b2", "a1a2", "b1b2")}
        lhs = en.bullet_conj_mul(en.std_mul(ctx, a1, a2), en.std_mul(ctx, b1, b2),
                                 maps["a1a2"], maps["b1b2"])
        rhs = en.std_mul(ctx, en.bullet_conj_mul(a1, b1, maps["a1"], maps["b1"]),
                         en.bullet_conj_mul(a2, b2, maps["a2"], maps["b2"]))
        assert scaled_close(lhs, rhs + en.f_defect(ctx, a1, a2, b1, b2, maps), 1e-12 * 1e3)


def test_f_defect_pure_complex(ctx):
    ps = [ExtNumber(0, v) for v in (1 + 1j, -2, 0.5j, 3 - 1j)]
    assert en.f_defect(ctx, *ps, {}).is_zero


def test_f_defect_complex_scalars(ctx):
    # (c a)^bullet (.) (d b)^bullet = (c (.) d)(a^bullet (.) b^bullet)
    c, d = ExtNumber(0, 1 - 2j), ExtNumber(0, 0.5 + 1j)
    a, b = ExtNumber(1 + 1j, -0.3), ExtNumber(-2j, 1 + 0.1j)
    ma, mb = MapCoefficients(0.2, 1j, 0.7, -0.4j), MapCoefficients(-1, 0.5, 1j, 2)
    maps = {"a2": ma, "b2": mb, "a1a2": ma, "b1b2": mb}
    f = en.f_defect(ctx, c, a, d, b, maps)
    assert abs(f.x) + abs(f.y) < 1e-13


def test_g_defect_trivial_cases():
    m = MapCoefficients(1j, 2, 0.5, -1)
    a, b = ExtNumber(1 + 1j, 2), ExtNumber(-1, 3j)
    zero_rate = MapCoefficients(0, 0, 0, 0)
    assert en.g_defect(a, b, ZERO, ZERO, m, zero_rate).is_zero
    assert en.g_defect(ExtNumber(0, 2j), b, ExtNumber(0, 1), b, m, MapCoefficients(1, 1, 0, 0), m).is_zero


def test_g_defect_finite_difference():
    # a(t), b(t) and maps (z1, w1)(t) along a smooth path
    a_t = lambda t: ExtNumber(np.exp(1j * t) + 0.3, 1 + 0.5 * t * t)
    da_t = lambda t: ExtNumber(1j * np.exp(1j * t), t)
    b_t = lambda t: ExtNumber(np.cos(t) + 1j, 2 - 1j * t)
    db_t = lambda t: ExtNumber(-np.sin(t), -1j)
    m_t = lambda t: MapCoefficients(0.5 + 0.2j * t, 1 - t * t, 0, 0)
    rate = lambda t: MapCoefficients(0.2j, -2 * t, 0, 0)
    t, h = 0.7, 1e-4
    f = lambda s: en.conj_mul(a_t(s), b_t(s), m_t(s))
    fd = (f(t + h) - f(t - h)).scale(1 / (2 * h))
    rhs = (en.conj_mul(da_t(t), b_t(t), m_t(t)) + en.conj_mul(a_t(t), db_t(t), m_t(t))
           + en.g_defect(a_t(t), b_t(t), da_t(t), db_t(t), m_t(t), rate(t)))
    assert close(fd, rhs, 1e-7)


# --- roots and division --------------------------------------------------------

def test_conj_root_of_i_contains_k(ctx):
    rs = en.roots(ctx, ExtNumber(0, 1j), "conj_root")
    assert any(r.close_to(K) for r in rs)


def test_conj_root_positive_real(ctx):
    rs = en.roots(ctx, ExtNumber(0, 4), "conj_root")
    assert any(r.close_to(ExtNumber(0, 2)) for r in rs)


def conj_square(ctx, beta):
    return en.conj_mul(beta, beta, en.solve_maps(ctx, beta))


def test_root_orbit_closure(ctx):
    target = conj_square(ctx, ExtNumber(0.4 - 0.3j, 1.2 + 0.5j))
    rs = en.conj_root(ctx, target)
    assert len(rs) % 4 == 0
    for r in rs:
        assert en.conj_mul(r.value, r.value, r.maps).close_to(target, 1e-9)


def test_std_sqrt(ctx):
    a = ExtNumber(0.7 + 0.1j, -1.3 + 2j)
    rs = en.std_sqrt(ctx, a)
    assert rs
    for b in rs:
        assert en.std_mul(ctx, b, b).close_to(a, 1e-9)


def test_divide_examples(ctx):
    lam = ExtNumber(1 - 1j, 0.5 + 2j)
    assert en.divide(ctx, lam, ONE) == lam
    alpha = conj_square(ctx, ExtNumber(0.6 + 0.4j, -1.1 + 0.3j))
    q = en.divide(ctx, lam, alpha)
    assert en.std_mul(ctx, q, alpha).close_to(lam, 1e-10)
    with pytest.raises(en.DivisionByZero):
        en.divide(ctx, lam, ZERO)


def test_inverse_k():
    c = AlgebraContext(1, 0.5)
    kinv = en.inverse(c, K)
    assert en.std_mul(c, K, kinv).close_to(ONE, 1e-10)


# --- law checkers ------------------------------------------------------------

def test_inner_commutation_examples(ctx):
    m1 = MapCoefficients(1j, 2, 0.5, -1)
    m2 = MapCoefficients(0.3, -1j, 1, 1)
    g1, g2 = ExtNumber(1 + 1j, 2), ExtNumber(-1, 0.5j)
    d1, d2 = ExtNumber(0.3, 1), ExtNumber(0, 2 - 1j)
    # both second factors pure complex: the prefactor vanishes
    rep = en.inner_commutation_check(ctx, g1, ExtNumber(0, 1j), g2, d2, m1, m2)
    assert rep["holds"] and rep["conditions_vanish"]
    # only d2 pure complex is not enough in general; the verdict follows the conditions
    rep = en.inner_commutation_check(ctx, g1, d1, g2, d2, m1, m2)
    assert rep["holds"] == rep["conditions_vanish"]
    assert not rep["holds"]
    rep = en.inner_commutation_check(ctx, g1, d1, g1, d2, m1, m1)
    assert rep["holds"]


@given(ext, ext, ext, ext, maps_st, maps_st)
def test_inner_commutation_iff_conditions(g1, d1, g2, d2, m1, m2):
    ctx = AlgebraContext(0.3 + 0.2j, -0.7 + 0.1j)
    rep = en.inner_commutation_check(ctx, g1, d1, g2, d2, m1, m2)
    diff = rep["lhs"] - rep["rhs"]
    scale = 1 + sum(abs(complex(v)) for v in (rep["lhs"].x, rep["lhs"].y, rep["rhs"].x, rep["rhs"].y))
    cond = rep["conditions"]
    # swap difference equals minus the condition pair
    assert abs(complex(diff.x) + cond[0]) <= 1e-9 * scale
    assert abs(complex(diff.y) + cond[1]) <= 1e-9 * scale


def test_conj_symmetry_equal_args(ctx):
    a = ExtNumber(0.9 - 0.2j, 0.4 + 1.1j)
    m = en.solve_maps(ctx, a)
    P = en.inner4(ctx, a, a, a, a, (m, m, m, m))
    assert abs(complex(P.y).imag) < 1e-8 and abs(complex(P.x)) < 1e-8


def test_conj_symmetry_pure_reduction(ctx):
    rep = en.conj_symmetry_check(ctx, ExtNumber(0, 1.5), ExtNumber(0, 0.5))
    assert rep["holds"]
    if "pure_reduction" in rep:
        assert complex(rep["lhs"].y) == pytest.approx(rep["pure_reduction"])


def test_zero_divisor_examples():
    c = AlgebraContext(0.3 + 0.2j, -0.7 + 0.1j)
    assert en.zero_divisor_check(c, ExtNumber(0, 2)) is None
    assert en.zero_divisor_check(c, ONE) is None
    u = 1.3 - 0.4j
    # v^2 + u z0 v - u^2 w0 = 0
    v = (-u * c.z0 + np.sqrt((u * c.z0) ** 2 + 4 * u * u * c.w0)) / 2
    b = ExtNumber(u, v)
    a = en.zero_divisor_check(c, b)
    assert a is not None and not a.is_zero
    p = en.std_mul(c, a, b)
    assert abs(p.x) + abs(p.y) < 1e-13


def test_zero_divisor_exact():
    c = AlgebraContext(Fraction(1), Fraction(2))
    # v^2 + u v - 2 u^2 = (v - u)(v + 2u), so v = u lies on the conic
    b = ExtNumber(Fraction(3), Fraction(3))
    a = en.zero_divisor_check(c, b)
    assert en.std_mul(c, a, b) == ExtNumber(0, 0)


# --- isotropy ------------------------------------------------------------------

def test_isotropy_examples():
    assert en.isotropy_scan(1, 2, 3, 4, (2,))[2]["exact_zero"]
    for R in (0, 1, 3, 4, 2.5):
        assert en.isotropy_scan(5, 0, 0, 0, (R,))[R]["spread"] == 0
    rep = en.isotropy_scan(1, 0, 1, 0, (3,))[3]
    assert len(en.isotropy_orbit(1, 0, 1, 0)) == 384
    assert rep["violation"]["high"]["value"] == 5
    assert rep["violation"]["low"]["value"] == 4


@given(frac, frac, frac, frac)
def test_isotropy_R2_always_zero(a, b, c, d):
    assert en.isotropy_scan(a, b, c, d, (2,))[2]["exact_zero"]
