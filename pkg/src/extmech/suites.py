"""Property suites shared by the ``run`` command and the acceptance tests.

Every suite takes an AlgebraContext, an integer seed and optional sizes, and
returns a report ``{op, inputs, outputs, residuals, pass}``.  Wall-clock
times are kept under ``_timing`` so serialized reports stay deterministic.
"""

from __future__ import annotations

import math
import time
from fractions import Fraction

import numpy as np

from . import extnum as en
from . import extqm as qm
from . import nvmvf as nv
from . import varcalc as vc
from .extnum import ExtNumber, MapCoefficients


def _report(op, inputs, outputs, residuals, passed, timing=None):
    rep = {"op": op, "inputs": inputs, "outputs": outputs, "residuals": residuals,
           "pass": bool(passed)}
    if timing is not None:
        rep["_timing"] = timing
    return rep


def _cplx(rng, size=None, scale=1.0):
    return scale * (rng.normal(size=size) + 1j * rng.normal(size=size))


def _ext(rng, scale=1.0):
    return ExtNumber(complex(_cplx(rng, scale=scale)), complex(_cplx(rng, scale=scale)))


def _rand_maps(rng):
    return MapCoefficients(*(complex(_cplx(rng)) for _ in range(4)))


def _frac(v):
    return str(v) if isinstance(v, Fraction) else v


# ---------------------------------------------------------------------------
# algebra

def isotropy(ctx, seed=0, n=100, R_values=(0, 1, 2, 3, 4)):
    """Orbit scans of |alpha|^4; passes when the context's R is isotropic."""
    rng = np.random.default_rng(seed)
    Rs = sorted(set(R_values) | {ctx.R})
    tuples = [tuple(Fraction(int(v), 4) for v in rng.integers(-40, 41, size=4)) for _ in range(n)]
    t0 = time.perf_counter()
    per_R = {R: {"zero": 0, "violation": None, "max_spread": 0.0} for R in Rs}
    for tp in tuples:
        scan = en.isotropy_scan(*tp, R_values=Rs)
        for R, rep in scan.items():
            s = per_R[R]
            s["max_spread"] = max(s["max_spread"], rep["spread"])
            if rep["exact_zero"]:
                s["zero"] += 1
            elif s["violation"] is None:
                v = rep["violation"]
                s["violation"] = {"input": [str(c) for c in tp],
                                  "high": {"tuple": [_frac(c) for c in v["high"]["tuple"]],
                                           "value": v["high"]["value"]},
                                  "low": {"tuple": [_frac(c) for c in v["low"]["tuple"]],
                                          "value": v["low"]["value"]}}
    elapsed = time.perf_counter() - t0
    outputs = {str(R): {"orbit_size": 384, "all_zero": per_R[R]["zero"] == n,
                        "max_spread": per_R[R]["max_spread"], "violation": per_R[R]["violation"]}
               for R in Rs}
    passed = per_R[ctx.R]["zero"] == n
    return _report("isotropy", {"n_tuples": n, "R_values": Rs, "seed": seed}, outputs,
                   {"spread_at_R": per_R[ctx.R]["max_spread"]}, passed, {"seconds": elapsed})


def norm(ctx, seed=0, n=10_000, tol=1e-12):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n):
        a = _ext(rng, scale=float(np.exp(rng.normal())))
        c = complex(_cplx(rng, scale=float(np.exp(rng.normal()))))
        lhs = en.ext_abs(ctx, a.scale(c))
        rhs = abs(c) * en.ext_abs(ctx, a)
        worst = max(worst, abs(lhs - rhs) / max(1.0, rhs))
    return _report("norm", {"n": n, "seed": seed}, {}, {"max_scaled_error": worst}, worst <= tol)


def _gauss(rng):
    from sympy.polys.domains import QQ, QQ_I

    a, b = rng.integers(-60, 61, size=2)
    d1, d2 = rng.integers(1, 25, size=2)
    return QQ_I(QQ(int(a), int(d1)), QQ(int(b), int(d2)))


def _exact_ctx(ctx):
    from sympy.polys.domains import QQ, QQ_I

    def q(z):
        z = complex(z)
        fr, fi = Fraction(z.real), Fraction(z.imag)
        return QQ_I(QQ(fr.numerator, fr.denominator), QQ(fi.numerator, fi.denominator))

    class _Exact:
        z0, w0 = q(ctx.z0), q(ctx.w0)

    return _Exact()


def ring(ctx, seed=0, n=10_000):
    """Ring laws for (+, *) in exact Gaussian-rational arithmetic."""
    from sympy.polys.domains import QQ_I

    rng = np.random.default_rng(seed)
    ex = _exact_ctx(ctx)
    zero = ExtNumber(QQ_I(0, 0), QQ_I(0, 0))
    one = ExtNumber(QQ_I(0, 0), QQ_I(1, 0))
    fails = {k: 0 for k in ("add_assoc", "add_comm", "mul_assoc", "mul_comm", "distrib",
                            "add_identity", "add_inverse", "mul_identity")}
    for _ in range(n):
        a, b, c = (ExtNumber(_gauss(rng), _gauss(rng)) for _ in range(3))
        m = lambda u, v: en.std_mul(ex, u, v)
        fails["add_assoc"] += (a + b) + c != a + (b + c)
        fails["add_comm"] += a + b != b + a
        fails["mul_assoc"] += m(m(a, b), c) != m(a, m(b, c))
        fails["mul_comm"] += m(a, b) != m(b, a)
        fails["distrib"] += m(a, b + c) != m(a, b) + m(a, c)
        fails["add_identity"] += a + zero != a
        fails["add_inverse"] += a + (-a) != zero
        fails["mul_identity"] += m(a, one) != a
    return _report("ring", {"n": n, "seed": seed}, {"failures": fails}, {},
                   not any(fails.values()))


def defects(ctx, seed=0, n=1000, tol=1e-12):
    """Distributivity and pair-product defect identities."""
    rng = np.random.default_rng(seed)
    worst_d = worst_f = 0.0
    for _ in range(n):
        g1, g2, g3 = _ext(rng), _ext(rng), _ext(rng)
        m1, m2, m12 = _rand_maps(rng), _rand_maps(rng), _rand_maps(rng)
        lhs = en.conj_mul(g1 + g2, g3, m12)
        rhs = en.conj_mul(g1, g3, m1) + en.conj_mul(g2, g3, m2) + en.d_defect(g1, g2, g3, m1, m2, m12)
        worst_d = max(worst_d, _dist(lhs, rhs))

        a1, a2, b1, b2 = (_ext(rng) for _ in range(4))
        maps = {k: _rand_maps(rng) for k in ("a1", "a2", "b1", "b2", "a1a2", "b1b2")}
        lhs = en.bullet_conj_mul(en.std_mul(ctx, a1, a2), en.std_mul(ctx, b1, b2),
                                 maps["a1a2"], maps["b1b2"])
        prod = en.std_mul(ctx, en.bullet_conj_mul(a1, b1, maps["a1"], maps["b1"]),
                          en.bullet_conj_mul(a2, b2, maps["a2"], maps["b2"]))
        rhs = prod + en.f_defect(ctx, a1, a2, b1, b2, maps)
        scale = max(1.0, _mag(lhs))
        worst_f = max(worst_f, _dist(lhs, rhs) / scale)

    # degenerate cases with vanishing D
    g1, g2, g3 = _ext(rng), _ext(rng), _ext(rng)
    m1, m2, m12 = _rand_maps(rng), _rand_maps(rng), _rand_maps(rng)
    pc1, pc2 = ExtNumber(0j, g1.y), ExtNumber(0j, g2.y)
    cases = {
        "g1_g2_pure_complex": en.d_defect(pc1, pc2, g3, m1, m2, m12),
        "g3_complex_part_zero": en.d_defect(g1, g2, ExtNumber(g3.x, 0j), m1, m2, m12),
        "equal_maps": en.d_defect(g1, g2, g3, m1, m1, m1),
    }
    case_vals = {k: _mag(v) for k, v in cases.items()}
    passed = worst_d <= tol and worst_f <= tol and all(v <= tol for v in case_vals.values())
    return _report("defects", {"n": n, "seed": seed, "maps": "random"},
                   {"degenerate_cases": case_vals},
                   {"max_D_identity": worst_d, "max_F_identity": worst_f}, passed)


def _mag(a):
    return max(abs(complex(a.x)), abs(complex(a.y)))


def _dist(a, b):
    return _mag(a - b)


def maps(ctx, seed=0, phis=(0.25, 1.0, 4.0), thetas=(0.0, 1.0, 2.5, -2.0),
         z0s=(0.3 + 0.2j, -0.5 + 0.0j), w0s=(-0.7 + 0.1j, 1.0 + 0.5j), tol=1e-10):
    """Map-solver convergence statistics; converged cells must meet tol."""
    from dataclasses import replace

    def factory(z0, w0):
        return replace(ctx, z0=z0, w0=w0, seed=seed)

    stats = en.map_grid_statistics(factory, phis, thetas, z0s, w0s)
    worst = max((r["max_residual"] for r in stats["rows"] if r["converged"]), default=float("inf"))
    rows = [{**r, "z0": [complex(r["z0"]).real, complex(r["z0"]).imag],
             "w0": [complex(r["w0"]).real, complex(r["w0"]).imag]} for r in stats["rows"]]
    failed = [r for r in rows if not r["converged"]]
    return _report("maps", {"phis": list(phis), "thetas": list(thetas), "seed": seed},
                   {"cells": stats["cells"], "converged": stats["converged"],
                    "failed": stats["failed"], "failures": failed, "rows": rows},
                   {"max_converged_residual": worst},
                   stats["converged"] > 0 and worst <= tol)


def division(ctx, seed=0, n=1000, tol=1e-10, min_converged=0.9):
    """(lambda / alpha) * alpha = lambda, alpha built as a conjugated square."""
    rng = np.random.default_rng(seed)
    worst, conv, skipped = 0.0, 0, 0
    for j in range(n):
        beta, lam = _ext(rng), _ext(rng)
        try:
            m = en.solve_maps(ctx, beta, seed=seed + j)
        except en.NoConvergence:
            skipped += 1
            continue
        alpha = en.conj_mul(beta, beta, m)
        try:
            q = en.divide(ctx, lam, alpha, seed=seed + j)
        except en.NoConvergence:
            continue
        conv += 1
        p = en.std_mul(ctx, q, alpha)
        worst = max(worst, _dist(p, lam) / max(1.0, _mag(lam)))
    attempted = n - skipped
    passed = conv > 0 and worst <= tol and conv >= min_converged * attempted
    return _report("division", {"n": n, "seed": seed},
                   {"attempted": attempted, "converged": conv, "map_failures": skipped},
                   {"max_product_error": worst}, passed)


# ---------------------------------------------------------------------------
# mechanics

def _pu_solution():
    r2 = math.sqrt(2.0)
    return [lambda t: np.sin(t) + 0.3 * np.cos(r2 * t),
            lambda t: np.cos(t) - 0.3 * r2 * np.sin(r2 * t),
            lambda t: -np.sin(t) - 0.6 * np.cos(r2 * t),
            lambda t: -np.cos(t) + 0.6 * r2 * np.sin(r2 * t),
            lambda t: np.sin(t) + 1.2 * np.cos(r2 * t)]


def mechanics(ctx=None, seed=0, dt=1e-3, T=10.0):
    """Pais-Uhlenbeck against the closed form and the Ostrogradsky flow."""
    t0 = time.perf_counter()
    L = vc.pais_uhlenbeck(1.0, math.sqrt(2.0))
    d = _pu_solution()
    st = vc.PathState.of(0.0, d[0](0.0), d[1](0.0), d[2](0.0), d[3](0.0))
    tr = vc.integrate_el(L, st, (0.0, T), dt)
    err = float(np.max(np.abs(tr.q[:, 0] - d[0](tr.t))))
    drift = float(np.ptp(tr.h))
    O = vc.ostrogradsky(L)
    _, ys = O.integrate(O.from_state(st), (0.0, T), dt)
    agree = float(np.max(np.abs(ys[:, 0] - tr.q[:, 0])))
    elapsed = time.perf_counter() - t0
    passed = err <= 1e-6 and agree <= 1e-6 and drift <= 1e-8
    return _report("mechanics", {"w1": 1.0, "w2": math.sqrt(2.0), "dt": dt, "T": T},
                   {"steps": len(tr.t) - 1},
                   {"sup_error": err, "ostrogradsky_agreement": agree, "energy_drift": drift},
                   passed, {"seconds": elapsed})


def _action_cases():
    import sympy as sp

    t = sp.Symbol("t", real=True)
    T = 2.0
    R = sp.Rational
    bump = (t * (T - t)) ** 4
    cases = [
        ("pais_uhlenbeck", vc.pais_uhlenbeck(), [sp.sin(1.3 * t) + t ** 2 / 5],
         [bump * (1 + sp.sin(t) / 3)]),
        ("nonlinear_1d",
         vc.SecondOrderLagrangian.symbolic(
             lambda J: R(1, 2) * J.qdd[0] ** 2 * (1 + J.q[0] ** 2 / 4)
             + J.qd[0] ** 2 * sp.cos(J.q[0]) / 2 - J.q[0] ** 4 / 4 + J.q[0] * J.qd[0] * J.qdd[0], 1),
         [sp.cos(t) + t / 3], [bump * (1 + sp.sin(t) / 3)]),
        ("coupled_2d",
         vc.SecondOrderLagrangian.symbolic(
             lambda J: R(1, 2) * (J.qdd[0] ** 2 + J.qdd[1] ** 2) + sp.sin(J.t) * J.qd[0] * J.qd[1]
             - R(1, 2) * (J.q[0] ** 2 + J.q[1] ** 2) * (1 + J.t / 10) + J.q[0] * J.qdd[1], 2),
         [sp.sin(t) + t ** 2 / 5, sp.cos(0.7 * t) * t], [bump * (1 + sp.sin(t) / 3), bump * sp.cos(t)]),
    ]
    return t, T, cases


def action(ctx=None, seed=0, grids=(100, 200), tol=1e-6, min_order=2.0):
    """Euler-Lagrange residual against the discrete action gradient."""
    t, T, cases = _action_cases()
    out, worst, order = {}, 0.0, float("inf")
    for name, L, path, eta in cases:
        r = vc.action_gradient_check(L, vc.FunctionPath.from_sympy(path, t),
                                     vc.FunctionPath.from_sympy(eta, t), T, grids)
        out[name] = {"rel_error": r["rel_error"], "order": r["order"]}
        worst = max(worst, r["rel_error"])
        order = min(order, r["order"])
    return _report("action", {"grids": list(grids), "T": T}, out,
                   {"max_rel_error": worst, "min_order": order},
                   worst <= tol and order >= min_order)


def constraints(ctx=None, seed=0):
    """Zero modes and gauge identities of a degenerate Lagrangian; empty PU scan."""
    import sympy as sp

    L = vc.SecondOrderLagrangian.symbolic(
        lambda J: sp.Rational(1, 2) * (J.qdd[0] - J.qdd[1]) ** 2, 2)
    r = vc.constraint_scan_lagrangian(L, seed=seed)
    modes = [m for lv in r["levels"] for m in lv["zero_modes"]]
    one_mode = len(modes) == 1
    along = one_mode and abs(abs(float(modes[0] @ np.array([1, 1]) / math.sqrt(2))) - 1) <= 1e-12
    E = L.sym["E"]
    gauge_ok = (len(r["gauge_identities"]) == 1 and not r["genuine_constraints"]
                and sp.simplify(E[0] + E[1]) == 0)
    pu = vc.constraint_scan_lagrangian(vc.pais_uhlenbeck(), seed=seed)
    passed = one_mode and along and gauge_ok and pu["empty"]
    return _report("constraints", {"lagrangian": "1/2 (qdd0 - qdd1)^2"},
                   {"zero_modes": [m.tolist() for m in modes],
                    "gauge_identities": [str(g) for g in r["gauge_identities"]],
                    "genuine_constraints": [str(g) for g in r["genuine_constraints"]],
                    "pu_empty": pu["empty"]}, {}, passed)


def generators(ctx=None, seed=0, dim=3):
    """P, S and time generator tables, compared element by element."""
    rng = np.random.default_rng(seed)
    dy = lambda size: rng.integers(-64, 65, size=size) / 16.0
    q, p, s, f = dy(dim), dy(dim), dy(dim), dy(dim)
    point = vc.PhasePoint.of(q, p, s, f)
    fam = vc.CorrelationFamily(lambda v: v + 0.1 * v ** 3)
    eps = 2.0 ** -10
    rates = {k: dy(dim) for k in ("qd", "pd", "sd", "fd")}
    table = {}
    ok = True
    for i in range(dim):
        e = np.zeros(dim)
        e[i] = 1.0
        P = vc.generator_apply("P", eps, point, fam, i)
        S = vc.generator_apply("S", eps, point, fam, i)
        back = vc.generator_apply("P", -eps, P, fam, i)
        rowP = (np.array_equal(P.q - q, eps * e) and np.array_equal(P.p, p)
                and np.array_equal(P.s, s) and np.array_equal(P.f, f))
        rowS = (np.array_equal(S.f - f, -eps * e) and np.array_equal(S.q, q)
                and np.array_equal(S.p, p) and np.array_equal(S.s, s))
        inv = all(np.array_equal(u, v) for u, v in ((back.q, q), (back.p, p), (back.s, s), (back.f, f)))
        table[f"P{i}"], table[f"S{i}"], table[f"P{i}_inverse"] = rowP, rowS, inv
        ok &= rowP and rowS and inv
    T = vc.generator_apply("time", eps, point, fam, rates=rates)
    rowT = (np.array_equal(T.q - q, eps * rates["qd"]) and np.array_equal(T.p - p, eps * rates["pd"])
            and np.array_equal(T.s - s, eps * rates["sd"]) and np.array_equal(T.f - f, -eps * rates["fd"]))
    I = vc.generator_apply("identity", eps, point, fam)
    rowI = all(np.array_equal(u, v) for u, v in ((I.q, q), (I.p, p), (I.s, s), (I.f, f)))
    table["time"], table["identity"] = rowT, rowI
    return _report("generators", {"eps": eps, "dim": dim, "seed": seed}, {"table": table}, {},
                   ok and rowT and rowI)


# ---------------------------------------------------------------------------
# n-VMVF and QM

def nvmvf(ctx=None, seed=0, n=200, R=1.7):
    rng = np.random.default_rng(seed)
    xi = np.stack([rng.uniform(0.2, math.pi - 0.2, n), rng.uniform(0.2, math.pi - 0.2, n),
                   rng.uniform(-math.pi + 0.1, math.pi - 0.1, n)], axis=1)
    x = nv.lorentz_from_angular(xi, R)
    back = nv.angular_from_lorentz(x, R)
    x2 = nv.lorentz_from_angular(back, R)
    rt = float(max(np.max(np.abs(back - xi)), np.max(np.abs(x2 - x))))
    d_fd = ident = 0.0
    for k in range(n):
        dm = nv.d_matrices(x[k], R)
        d_fd = max(d_fd, float(np.max(np.abs(dm.D - nv.d_rows_fd(xi[k], R)))))
        ident = max(ident, float(np.max(np.abs(dm.identity3() - np.eye(3)))))
    expect = {("diag", 2): True, ("diag", 3): True, ("diag", 7): True,
              ("central_distinct", 3): True, ("central_equal", 9): True,
              ("central_distinct", 4): False, ("central_equal", 8): False}
    audits = {f"{s}:{m}": nv.dof_audit(s, m)["solvable"] for s, m in expect}
    audit_ok = all(audits[f"{s}:{m}"] == v for (s, m), v in expect.items())
    passed = rt <= 1e-12 and d_fd <= 1e-8 and ident <= 1e-12 and audit_ok
    return _report("nvmvf", {"n": n, "R": R, "seed": seed}, {"audits": audits},
                   {"roundtrip": rt, "d_vs_fd": d_fd, "identity3": ident}, passed)


def _hermitian(rng, n):
    A = _cplx(rng, (n, n))
    return (A + A.conj().T) / 2


def quantum(ctx=None, seed=0, dim=4, kappa=3.0):
    rng = np.random.default_rng(seed)
    op = qm.ExtOperator(_hermitian(rng, dim), _hermitian(rng, dim))
    eb = qm.eigenbasis(op)
    norms = [qm.normalize_check(k) for k in eb.kets]
    norm_ok = all(r["cond1"] and r["cond2"] for r in norms)
    ortho = 0.0
    for i, ki in enumerate(eb.kets):
        for j, kj in enumerate(eb.kets):
            z = qm.inner_ext(ki.dual(), kj)
            ortho = max(ortho, abs(complex(z.y) - (i == j)), abs(complex(z.x)))
    eig = [qm.eigen_check(eb.diagonal, k, s, other=(eb.kets[0], eb.scalars[0]))
           for k, s in zip(eb.kets, eb.scalars)]
    eig_ok = all(e["ok"] for e in eig)
    # a ket labelled (i a', i b') is the same state
    lab = eb.kets[0].labels[0]
    rot = tuple((1j * l[0], 1j * l[1]) + l[2:] if k == 0 else l
                for k, l in enumerate(eb.kets[0].labels))
    krot = qm.ExtKet(rot, eb.kets[0].coeff_top, eb.kets[0].coeff_bottom, basis=eb.kets[0].basis)
    same = qm.inner_ext(eb.kets[0].dual(), krot)
    rot_ok = abs(complex(same.y) - 1) <= 1e-12 and qm.labels_equivalent(lab, rot[0])

    consts = qm.QMConstants(a0=1j, b0=1j)
    OT, OR = _hermitian(rng, dim), _hermitian(rng, dim)
    errs = []
    for dt in (1e-3, 5e-4):
        r = qm.evolve_step(eb.kets[0], OT, OR, dt, consts)
        errs.append(max(r.composition_error))
    slope = math.log(errs[0] / errs[1]) / math.log(2.0)

    x = np.linspace(0.0, 2 * math.pi, 2001)
    c = np.exp(1j * kappa * x)
    k = qm.QMConstants(b0=0.7 - 0.2j, hbar1=1.3)
    pd = qm.op_apply("p_d", c, x, k)
    pd_err = float(np.max(np.abs(pd.y - (-k.hbar1 / k.b0) * (1j * kappa) * c)))
    passed = (norm_ok and ortho <= 1e-12 and eig_ok and rot_ok and abs(slope - 2) <= 0.1
              and pd_err <= 1e-6)
    return _report("qm", {"dim": dim, "seed": seed, "kappa": kappa},
                   {"normalization_ok": norm_ok, "eigen_ok": eig_ok, "rotated_label_ok": rot_ok,
                    "composition_errors": errs, "slope": slope},
                   {"orthonormality": ortho, "p_d_error": pd_err}, passed)


SUITES = {
    "isotropy": isotropy,
    "norm": norm,
    "ring": ring,
    "defects": defects,
    "maps": maps,
    "division": division,
    "mechanics": mechanics,
    "action": action,
    "constraints": constraints,
    "generators": generators,
    "nvmvf": nvmvf,
    "qm": quantum,
}


def run_suite(name, ctx, seed=0, **opts):
    if name not in SUITES:
        raise KeyError(name)
    return SUITES[name](ctx, seed, **opts)
