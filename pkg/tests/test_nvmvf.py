import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from extmech import nvmvf as nv
from extmech.nvmvf import MassFieldApprox, Multipliers, ParticleKinematics

G = np.array([1.0, -1.0, -1.0, -1.0])
interior = st.tuples(st.floats(0.2, 2.9), st.floats(0.2, 2.9), st.floats(-3.0, 3.0))


def random_system(rng, n, scheme="diag", R=1.7):
    xi = np.column_stack([rng.uniform(0.3, 2.8, n), rng.uniform(0.3, 2.8, n), rng.uniform(-3, 3, n)])
    x = nv.lorentz_from_angular(xi, R)
    kin = ParticleKinematics(x, rng.normal(size=(n, 4)), rng.normal(size=(n, 4)), R)
    dA_dx = np.zeros((n, 4, 4))
    if scheme == "diag":
        for k in range(n):
            dA_dx[k] = np.diag(rng.normal(size=4))
    else:
        dA_dx = rng.normal(size=(n, 4, 4))
    dA_dv = np.zeros((n, 4, 4))
    for k in range(n):
        dA_dv[k] = np.diag(np.r_[0.0, rng.normal(size=3)])
    mf = MassFieldApprox(rng.uniform(0.5, 2, n), rng.normal(size=(n, 4)), rng.normal(size=4),
                         dA_dx, dA_dv, rng.normal(size=(n, 4, 4)), scheme)
    return kin, mf


# --- coordinates -----------------------------------------------------------------

def test_forward_example():
    x = nv.lorentz_from_angular([np.pi / 2] * 3, 1.0)[0]
    assert np.allclose(x, [0, 1, 0, 0], atol=1e-15)


def test_pole():
    x = nv.lorentz_from_angular([0.0, 1.0, 1.0], 2.0)[0]
    assert np.allclose(x, [2, 0, 0, 0])
    with pytest.raises(nv.PoleDegenerate):
        nv.angular_from_lorentz(x, 2.0)
    with pytest.raises(nv.PoleDegenerate):
        nv.d_matrices(x, 2.0)
    with pytest.raises(ValueError):
        nv.lorentz_from_angular([1, 1, 1], 0)


@given(interior, st.floats(0.1, 10))
def test_roundtrip(xi, R):
    back = nv.angular_from_lorentz(nv.lorentz_from_angular(xi, R), R)[0]
    assert np.allclose(back, xi, atol=1e-12, rtol=0)


@given(interior, st.floats(0.5, 5))
def test_d_rows_match_jacobian(xi, R):
    dm = nv.d_matrices(xi=xi, R=R)
    assert np.max(np.abs(dm.D - nv.d_rows_fd(xi, R))) <= 1e-8 * max(1.0, R)


@given(interior, st.floats(0.5, 5))
def test_d_identities(xi, R):
    x = nv.lorentz_from_angular(xi, R)[0]
    dm = nv.d_matrices(x, R)
    assert np.max(np.abs(dm.identity3() - np.eye(3))) <= 1e-12
    S = dm.sum_over_rows()
    assert np.max(np.abs(S - nv.tangent_projector(x, R))) <= 1e-12
    # radial direction is missing from the sum, so it is not the 4x4 identity
    assert np.max(np.abs(S - np.eye(4))) > 1e-3


def test_d_third_row():
    x = nv.lorentz_from_angular([1.0, 1.2, 0.4], 1.5)[0]
    D = nv.d_matrices(x, 1.5).D
    assert np.allclose(D[2], [0, x[2], -x[1], 0])


def test_g_tensor_matches_finite_difference():
    R = 1.5
    x = nv.lorentz_from_angular([1.0, 1.2, 0.4], R)[0]
    dm = nv.d_matrices(x, R)
    h = 1e-6
    for g in range(4):
        e = np.zeros(4)
        e[g] = h
        fd = (nv._d_rows(x + e, R) - nv._d_rows(x - e, R)) / (2 * h)
        assert np.allclose(dm.G[:, :, g], fd, atol=1e-7)


def test_d_matrix_report_keys():
    x = nv.lorentz_from_angular([1.0, 1.2, 0.4], 1.5)[0]
    rep = nv.d_matrix_report(x, 1.5)
    assert isinstance(rep, dict) and rep


# --- Lagrangian and constraints ------------------------------------------------------

def test_lagrangian_sp_examples():
    xd = np.array([2.0, 0.5, -1.0, 0.3])
    kin = ParticleKinematics([[1, 0, 0, 0]], [xd], [[0, 0, 0, 0]])
    z = np.zeros((1, 4, 4))
    mf = MassFieldApprox([1.5], [[0] * 4], [0] * 4, z, z)
    sq = xd[0] ** 2 - xd[1:] @ xd[1:]
    assert nv.lagrangian_sp(kin, mf) == pytest.approx(0.75 * sq)
    A = np.array([0.2, -0.1, 0.4, 1.0])
    mf = MassFieldApprox([1.5], [[0] * 4], A, z, z)
    assert nv.lagrangian_sp(kin, mf) == pytest.approx(0.75 * sq - (A[0] * xd[0] - A[1:] @ xd[1:]))


def test_lagrangian_sp_term_by_term():
    rng = np.random.default_rng(2)
    kin, mf = random_system(rng, 2)
    total = 0.0
    A = mf.A0.copy()
    for k in range(2):
        for v in range(4):
            for mu in range(4):
                A[v] += mf.dA_dx[k, v, mu] * kin.x[k, mu] + mf.dA_dv[k, v, mu] * kin.xd[k, mu]
    for k in range(2):
        m = mf.m0[k] + sum(mf.dm_dx[k, mu] * kin.x[k, mu] for mu in range(4))
        v = kin.xd[k]
        total += 0.5 * m * sum(G[mu] * v[mu] ** 2 for mu in range(4))
        total -= sum(G[mu] * A[mu] * v[mu] for mu in range(4))
    assert nv.lagrangian_sp(kin, mf) == pytest.approx(total, rel=1e-12)


def test_constraints_zero_motion():
    rng = np.random.default_rng(3)
    kin, mf = random_system(rng, 3)
    still = ParticleKinematics(kin.x, np.zeros((3, 4)), np.zeros((3, 4)), kin.R_sphere)
    for n in range(3):
        Phi, Psi = nv.constraints_phi_psi(still, mf, n)
        assert np.all(Phi == 0) and np.all(Psi == 0)


def test_constraints_constant_mass_zero_field():
    rng = np.random.default_rng(4)
    kin, _ = random_system(rng, 3)
    z = np.zeros((3, 4, 4))
    m0 = np.array([1.0, 2.0, 0.5])
    mf = MassFieldApprox(m0, np.zeros((3, 4)), np.zeros(4), z, z)
    for n in range(3):
        Phi, Psi = nv.constraints_phi_psi(kin, mf, n)
        expect = sum(m0[k] * G * kin.xdd[k] for k in range(3) if k != n)
        assert np.allclose(Phi, expect, atol=1e-14)
        # Psi is the D-contraction of the same mass rows
        exp_psi = sum(nv.d_matrices(kin.x[k], kin.R_sphere).D @ (m0[k] * G * kin.xdd[k])
                      for k in range(3) if k != n)
        assert np.allclose(Psi, exp_psi, atol=1e-13)


@given(st.floats(-4, 4), st.integers(0, 2))
def test_constraints_linear_in_acceleration(c, n):
    rng = np.random.default_rng(5)
    kin, mf = random_system(rng, 3, scheme="central_distinct")
    P0, S0 = nv.constraints_phi_psi(kin.with_xdd(np.zeros((3, 4))), mf, n)
    P1, S1 = nv.constraints_phi_psi(kin, mf, n)
    Pc, Sc = nv.constraints_phi_psi(kin.with_xdd(c * kin.xdd), mf, n)
    assert np.allclose(Pc - P0, c * (P1 - P0), atol=1e-11)
    assert np.allclose(Sc - S0, c * (S1 - S0), atol=1e-11)


def test_lt_lr_collapse_and_linearity():
    rng = np.random.default_rng(6)
    kin, mf = random_system(rng, 2)
    L0 = nv.lagrangian_sp(kin, mf)
    LT, LR = nv.lagrangians_LT_LR(kin, mf, Multipliers.zeros(2))
    assert LT == L0 and LR == L0
    lam, beta = rng.normal(size=(2, 4)), rng.normal(size=(2, 3))
    LT1, LR1 = nv.lagrangians_LT_LR(kin, mf, Multipliers(lam, beta))
    LT2, LR2 = nv.lagrangians_LT_LR(kin, mf, Multipliers(2.5 * lam, -0.5 * beta))
    assert LT2 - L0 == pytest.approx(2.5 * (LT1 - L0), rel=1e-10)
    assert LR2 - L0 == pytest.approx(-0.5 * (LR1 - L0), rel=1e-10)


def test_lt_independent_expansion():
    # translational part written out from the assembled bracket
    rng = np.random.default_rng(7)
    kin, mf = random_system(rng, 2)
    lam = rng.normal(size=(2, 4))
    m = mf.mass(kin.x)
    L = nv.lagrangian_sp(kin, mf)
    for n in range(2):
        k = 1 - n
        v, a = G * kin.xd[k], G * kin.xdd[k]
        vv = kin.xd[k] @ (G * kin.xd[k])
        for mu in range(4):
            term = (m[k] * a[mu] + (mf.dm_dx[k] @ kin.xd[k]) * v[mu]
                    - mf.dA_dv[k][:, mu] @ a - mf.rate[k][:, mu] @ v
                    - 0.5 * mf.dm_dx[k][mu] * vv + mf.dA_dx[k][:, mu] @ v
                    + mf.rate[n][:, mu] @ v + mf.dA_dv[n][:, mu] @ a - mf.dA_dx[n][:, mu] @ v)
            L += lam[n, mu] * term
    LT, _ = nv.lagrangians_LT_LR(kin, mf, Multipliers(lam, np.zeros((2, 3))))
    assert LT == pytest.approx(L, rel=1e-12)


def test_mass_x0_examples():
    xd = np.array([1.0, 0.5, 0.0, 0.0])
    xdd = np.array([0.0, 0.0, 1.0, 0.0])  # orthogonal to xd
    z = np.zeros((1, 4, 4))
    kin = ParticleKinematics([[1, 0, 0, 0]], [xd], [xdd])
    mf = MassFieldApprox([2.0], [[0, 0.3, 0, 0]], [0] * 4, z, z)
    assert nv.mass_x0_constraint(kin, mf, 0) == 0
    xdd = np.array([0.5, 1.0, 0.0, 0.0])
    kin = kin.with_xdd([xdd])
    mf = MassFieldApprox([2.0], [[0] * 4], [0] * 4, z, z)
    assert nv.mass_x0_constraint(kin, mf, 0) == pytest.approx(2.0 * (0.5 - 0.5))
    mf = MassFieldApprox([2.0], [[0.7, 0.1, 0, 0]], [0] * 4, z, z)
    m = 2.0 + 0.7 + 0.0
    vv = 1.0 - 0.25
    assert nv.mass_x0_constraint(kin, mf, 0) == pytest.approx(0.5 * 0.7 * 1.0 * vv + m * (0.5 - 0.5))


def test_weak_residuals():
    rng = np.random.default_rng(8)
    kin, mf = random_system(rng, 3)
    w = nv.weak_constraints_residual(kin, mf)
    assert np.allclose(w["sphere"], 0, atol=1e-12)
    assert np.allclose(w["gauge"], [np.trace(t) for t in mf.dA_dx])
    tl = mf.dA_dx - np.einsum("n,ij->nij", np.einsum("nii->n", mf.dA_dx) / 4, np.eye(4))
    mf2 = MassFieldApprox(mf.m0, mf.dm_dx, mf.A0, tl, mf.dA_dv, scheme="diag")
    assert np.allclose(nv.weak_constraints_residual(kin, mf2)["gauge"], 0, atol=1e-14)


def test_scheme_enforcement():
    z = np.zeros((1, 4, 4))
    bad_v = z.copy()
    bad_v[0, 0, 0] = 1
    with pytest.raises(nv.SchemeViolation):
        MassFieldApprox([1], [[0] * 4], [0] * 4, z, bad_v)
    bad_x = z.copy()
    bad_x[0, 1, 2] = 1
    with pytest.raises(nv.SchemeViolation):
        MassFieldApprox([1], [[0] * 4], [0] * 4, bad_x, z, scheme="diag")
    MassFieldApprox([1], [[0] * 4], [0] * 4, bad_x, z, scheme="central_distinct")


# --- degrees of freedom ----------------------------------------------------------------

@pytest.mark.parametrize("n", range(2, 13))
def test_dof_audit_table(n):
    assert nv.dof_audit("diag", n)["solvable"]
    assert nv.dof_audit("central_distinct", n)["solvable"] == (n == 3)
    assert nv.dof_audit("central_equal", n)["solvable"] == (n == 9)


def test_dof_audit_arithmetic():
    rep = nv.dof_audit("central_distinct", 3)
    assert rep["breakdown"]["field_position"] == 4 * 3 - 3 == 3 * 3
    with pytest.raises(nv.TooFewParticles):
        nv.dof_audit("diag", 1)
    with pytest.raises(ValueError):
        nv.dof_audit("other", 3)


# --- scenes -----------------------------------------------------------------------------

def test_scene_roundtrip():
    scene = {
        "R": 1.5, "scheme": "central_distinct",
        "particles": [{"xi": [1.0, 1.2, 0.4], "xd": [1, 0, 0, 0], "xdd": [0, 1, 0, 0], "m0": 1.0},
                      {"xi": [2.0, 0.7, -1.0], "xd": [0, 1, 0, 0], "xdd": [0, 0, 1, 0], "m0": 2.0},
                      {"xi": [1.4, 2.1, 2.0], "xd": [0, 0, 1, 0], "xdd": [1, 0, 0, 0], "m0": 0.5}],
        "dA_ds": {"0,1": [0.1, 0.2, 0.0, -0.1], "1,2": [0.0, 0.3, 0.1, 0.0]},
        "lambda": [[0.1] * 4] * 3, "beta": [[0.2] * 3] * 3,
    }
    kin, mf, mult = nv.load_scene(json.dumps(scene))
    rep = nv.scene_report(kin, mf, mult)
    assert len(rep["particles"]) == 3
    assert np.allclose(rep["sphere"], 0, atol=1e-12)
    csv = nv.report_csv(rep)
    assert csv.splitlines()[0].startswith("particle")
    assert len(csv.strip().splitlines()) == 4
