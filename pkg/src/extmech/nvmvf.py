"""Variable-mass, variable-field particle systems on a 4-sphere.

Index conventions used throughout (coordinates ordered x0, x1, x2, x3):

* ``dm_dx[n][mu]``        dm_n / dx_n^mu
* ``dA_dx[n][nu][mu]``    dA^nu / dx_n^mu
* ``dA_dv[n][nu][mu]``    dA^nu / dxdot_n^mu
* ``rate[n][nu][mu]``     d/dtau (dA^nu / dxdot_n^mu), a caller-supplied table

Lorentz contractions use diag(1, -1, -1, -1); the sphere condition and the
D-matrix identities are Euclidean.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

METRIC = np.array([1.0, -1.0, -1.0, -1.0])


class NvmvfError(Exception):
    pass


class PoleDegenerate(NvmvfError):
    pass


class TooFewParticles(NvmvfError):
    pass


class SchemeViolation(NvmvfError):
    pass


# ---------------------------------------------------------------------------
# coordinates

def lorentz_from_angular(xi, R):
    """(theta, phi, chi) rows -> (x0, x1, x2, x3) rows on the sphere of radius R."""
    if R <= 0:
        raise ValueError("R must be positive")
    xi = np.atleast_2d(np.asarray(xi, dtype=float))
    th, ph, ch = xi[:, 0], xi[:, 1], xi[:, 2]
    st, sp_ = np.sin(th), np.sin(ph)
    x = np.stack([R * np.cos(th), R * st * sp_ * np.sin(ch), R * st * sp_ * np.cos(ch),
                  R * st * np.cos(ph)], axis=1)
    return x


def _radii(x, R):
    x0 = x[..., 0]
    rho = np.sqrt(np.maximum(R * R - x0 * x0, 0.0))
    sigma = np.hypot(x[..., 1], x[..., 2])
    return rho, sigma


def angular_from_lorentz(x, R, pole_tol=1e-12):
    x = np.atleast_2d(np.asarray(x, dtype=float))
    rho, sigma = _radii(x, R)
    if np.any(rho <= pole_tol * R) or np.any(sigma <= pole_tol * R):
        raise PoleDegenerate("point lies on a chart pole (theta or phi in {0, pi})")
    th = np.arccos(np.clip(x[:, 0] / R, -1.0, 1.0))
    ph = np.arccos(np.clip(x[:, 3] / rho, -1.0, 1.0))
    ch = np.arctan2(x[:, 1], x[:, 2])
    return np.stack([th, ph, ch], axis=1)


def _d_rows(x, R):
    """D[i][nu] = dx^nu / dxi_i written in terms of x (works for complex x)."""
    x0, x1, x2, x3 = x
    rho = np.sqrt(R * R - x0 * x0)
    sigma = np.sqrt(x1 * x1 + x2 * x2)
    z = 0.0 * x0
    return np.array([
        [-rho, x0 * x1 / rho, x0 * x2 / rho, x0 * x3 / rho],
        [z, x1 * x3 / sigma, x2 * x3 / sigma, -sigma],
        [z, x2, -x1, z],
    ])


@dataclass
class DMatrices:
    D: np.ndarray       # 3 x 4
    Dminus: np.ndarray  # 3 x 4, Euclidean dual rows
    G: np.ndarray       # G[i][nu][gamma] = dD[i][nu] / dx^gamma

    def identity3(self):
        return self.Dminus @ self.D.T

    def sum_over_rows(self):
        """sum_i D_i^nu Dminus_i,mu as a 4 x 4 array."""
        return self.D.T @ self.Dminus


def d_matrices(x=None, R=1.0, xi=None, pole_tol=1e-12):
    if x is None:
        if xi is None:
            raise ValueError("give x or xi")
        x = lorentz_from_angular(xi, R)[0]
    x = np.asarray(x, dtype=float).reshape(4)
    rho, sigma = _radii(x, R)
    if rho <= pole_tol * R or sigma <= pole_tol * R:
        raise PoleDegenerate("D is undefined on chart poles")
    D = _d_rows(x, R)
    Dm = D / np.sum(D * D, axis=1, keepdims=True)
    G = np.zeros((3, 4, 4))
    h = 1e-30
    for g in range(4):
        xc = x.astype(complex)
        xc[g] += 1j * h
        G[:, :, g] = np.imag(_d_rows(xc, R)) / h
    return DMatrices(D, Dm, G)


def tangent_projector(x, R):
    x = np.asarray(x, float).reshape(4)
    return np.eye(4) - np.outer(x, x) / (R * R)


def d_matrix_report(x, R):
    dm = d_matrices(x, R)
    S = dm.sum_over_rows()
    return {
        "identity3_residual": float(np.max(np.abs(dm.identity3() - np.eye(3)))),
        "vs_projector": float(np.max(np.abs(S - tangent_projector(x, R)))),
        "vs_identity4": float(np.max(np.abs(S - np.eye(4)))),
    }


def d_rows_fd(xi, R, h=1e-6):
    """Central-difference Jacobian dx/dxi of the forward transform (3 x 4)."""
    xi = np.asarray(xi, float)
    J = np.zeros((3, 4))
    for i in range(3):
        e = np.zeros(3)
        e[i] = h
        J[i] = (lorentz_from_angular(xi + e, R)[0] - lorentz_from_angular(xi - e, R)[0]) / (2 * h)
    return J


# ---------------------------------------------------------------------------
# system description

SCHEMES = ("diag", "central_distinct", "central_equal")


@dataclass
class ParticleKinematics:
    x: np.ndarray
    xd: np.ndarray
    xdd: np.ndarray
    R_sphere: float = 1.0

    def __post_init__(self):
        self.x = np.atleast_2d(np.asarray(self.x, float))
        self.xd = np.atleast_2d(np.asarray(self.xd, float))
        self.xdd = np.atleast_2d(np.asarray(self.xdd, float))
        if not (self.x.shape == self.xd.shape == self.xdd.shape) or self.x.shape[1] != 4:
            raise ValueError("x, xd, xdd must all be (n, 4)")

    @property
    def n(self):
        return self.x.shape[0]

    def with_xdd(self, xdd):
        return ParticleKinematics(self.x, self.xd, xdd, self.R_sphere)


@dataclass
class MassFieldApprox:
    m0: np.ndarray
    dm_dx: np.ndarray
    A0: np.ndarray
    dA_dx: np.ndarray
    dA_dv: np.ndarray
    rate: np.ndarray | None = None
    scheme: str = "diag"

    def __post_init__(self):
        self.m0 = np.asarray(self.m0, float).reshape(-1)
        n = len(self.m0)
        self.dm_dx = np.asarray(self.dm_dx, float).reshape(n, 4)
        self.A0 = np.asarray(self.A0, float).reshape(4)
        self.dA_dx = np.asarray(self.dA_dx, float).reshape(n, 4, 4)
        self.dA_dv = np.asarray(self.dA_dv, float).reshape(n, 4, 4)
        self.rate = np.zeros((n, 4, 4)) if self.rate is None else np.asarray(self.rate, float).reshape(n, 4, 4)
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}")
        off = ~np.eye(4, dtype=bool)
        if np.any(self.dA_dv[:, 0, :] != 0):
            raise SchemeViolation("dA^0/dxdot must vanish")
        if np.any(self.dA_dv[:, off] != 0):
            raise SchemeViolation("dA^nu/dxdot^mu must be diagonal in (nu, mu)")
        if self.scheme == "diag" and np.any(self.dA_dx[:, off] != 0):
            raise SchemeViolation("diag scheme needs dA^nu/dx^mu diagonal")

    @property
    def n(self):
        return len(self.m0)

    def mass(self, x):
        return self.m0 + np.einsum("nm,nm->n", self.dm_dx, x)

    def field(self, x, xd):
        return self.A0 + np.einsum("nvm,nm->v", self.dA_dx, x) + np.einsum("nvm,nm->v", self.dA_dv, xd)


def central_tables(x, dA_ds, scheme):
    """dA_dx built from derivatives with respect to pair distances.

    ``dA_ds`` maps a pair (a, b), a < b, to a 4-vector (central_distinct) or a
    scalar (central_equal).  dA^nu/dx_n^mu = sum_n' dA^nu/ds_nn' * ds_nn'/dx_n^mu.
    """
    x = np.asarray(x, float)
    n = x.shape[0]
    T = np.zeros((n, 4, 4))
    for (a, b), c in dA_ds.items():
        c = np.full(4, float(c)) if scheme == "central_equal" else np.asarray(c, float).reshape(4)
        d = x[a] - x[b]
        s = np.linalg.norm(d)
        T[a] += np.outer(c, d / s)
        T[b] += np.outer(c, -d / s)
    return T


@dataclass
class Multipliers:
    lam: np.ndarray   # (n, 4)
    beta: np.ndarray  # (n, 3)

    def __post_init__(self):
        self.lam = np.atleast_2d(np.asarray(self.lam, float))
        self.beta = np.atleast_2d(np.asarray(self.beta, float))
        if self.lam.shape[1] != 4 or self.beta.shape[1] != 3 or self.lam.shape[0] != self.beta.shape[0]:
            raise ValueError("lam must be (n, 4) and beta (n, 3)")

    @classmethod
    def zeros(cls, n):
        return cls(np.zeros((n, 4)), np.zeros((n, 3)))


# ---------------------------------------------------------------------------
# Lagrangians and constraints

def _lower(v):
    return METRIC * v


def minkowski(a, b):
    return float(np.sum(METRIC * a * b))


def lagrangian_sp(kin, mf):
    """sum_n 1/2 m_n xd.xd - A . xd_n with the linear mass and field series."""
    m = mf.mass(kin.x)
    A = mf.field(kin.x, kin.xd)
    return float(sum(0.5 * m[k] * minkowski(kin.xd[k], kin.xd[k]) - minkowski(A, kin.xd[k])
                     for k in range(kin.n)))


def _mass_row(m_np, xdd_np):
    """Mass part m_n' xdd_n';mu shared by the Phi and Psi acceleration terms."""
    return m_np * _lower(xdd_np)


def constraints_phi_psi(kin, mf, n):
    """Translational (Phi, 4) and rotational (Psi, 3) constraint values for particle n."""
    if kin.n != mf.n:
        raise ValueError("particle counts differ")
    m = mf.mass(kin.x)
    g = METRIC
    Phi = np.zeros(4)
    Psi = np.zeros(3)
    Dn = d_matrices(kin.x[n], kin.R_sphere).D
    for k in range(kin.n):
        if k == n:
            continue
        xd, xdd = kin.xd[k], kin.xdd[k]
        xd_l, xdd_l = _lower(xd), _lower(xdd)
        dmv = float(mf.dm_dx[k] @ xd)
        Dk = d_matrices(kin.x[k], kin.R_sphere).D
        # lowered-index field derivative dA_mu/dx_k;nu contracted with a lowered vector
        dAlow = g[:, None] * g[None, :] * mf.dA_dx[k]  # [mu][nu]
        for mu in range(4):
            vel = (dmv * xd_l[mu] - 0.5 * mf.dm_dx[k][mu] * minkowski(xd, xd)
                   + (mf.rate[n][:, mu] - mf.rate[k][:, mu]) @ xd_l
                   + (mf.dA_dx[k][:, mu] - mf.dA_dx[n][:, mu]) @ xd_l)
            acc = (_mass_row(m[k], xdd)[mu]
                   + (mf.dA_dx[n][:, mu] - mf.dA_dx[k][:, mu]) @ xdd_l
                   + g[mu] * mf.dA_dx[k][mu, :] @ xdd_l)
            Phi[mu] += vel + acc
        for i in range(3):
            tot = 0.0
            for mu in range(4):
                a = (dmv * xd_l[mu] - 0.5 * mf.dm_dx[k][mu] * minkowski(xd, xd)
                     - mf.rate[k][:, mu] @ xd_l - dAlow[mu] @ xd_l + mf.dA_dx[k][:, mu] @ xd_l)
                b = (mf.rate[n][:, mu] @ xd_l + dAlow[mu] @ xd_l - mf.dA_dx[n][:, mu] @ xd_l)
                c = _mass_row(m[k], xdd)[mu] - mf.dA_dx[k][:, mu] @ xdd_l
                d = mf.dA_dx[n][:, mu] @ xdd_l + dAlow[mu] @ xdd_l
                tot += Dk[i, mu] * (a + c) + Dn[i, mu] * (b + d)
            Psi[i] += tot
    return Phi, Psi


def _lt_bracket(kin, mf, m, n, k, mu):
    xd, xdd = kin.xd[k], kin.xdd[k]
    xd_l, xdd_l = _lower(xd), _lower(xdd)
    return (m[k] * xdd_l[mu] + float(mf.dm_dx[k] @ xd) * xd_l[mu]
            - mf.dA_dv[k][:, mu] @ xdd_l - mf.rate[k][:, mu] @ xd_l
            - 0.5 * mf.dm_dx[k][mu] * minkowski(xd, xd) + mf.dA_dx[k][:, mu] @ xd_l
            + mf.rate[n][:, mu] @ xd_l + mf.dA_dv[n][:, mu] @ xdd_l - mf.dA_dx[n][:, mu] @ xd_l)


def lagrangians_LT_LR(kin, mf, mult):
    """Assembled translational and rotational Lagrangians with the linear series."""
    m = mf.mass(kin.x)
    g = METRIC
    L0 = lagrangian_sp(kin, mf)
    LT = L0
    LR = L0
    Ds = [d_matrices(kin.x[k], kin.R_sphere).D for k in range(kin.n)]
    for n in range(kin.n):
        for k in range(kin.n):
            if k == n:
                continue
            for mu in range(4):
                LT += mult.lam[n][mu] * _lt_bracket(kin, mf, m, n, k, mu)
            xd, xdd = kin.xd[k], kin.xdd[k]
            xd_l, xdd_l = _lower(xd), _lower(xdd)
            dmv = float(mf.dm_dx[k] @ xd)
            # dA_mu/dx_k;nu xd_k;nu = g_mumu sum_nu dA^mu/dx_k^nu xd^nu (same for dxdot)
            for i in range(3):
                for mu in range(4):
                    own = (m[k] * xdd_l[mu] + dmv * xd_l[mu] - mf.dA_dv[k][:, mu] @ xdd_l
                           - mf.rate[k][:, mu] @ xd_l - g[mu] * mf.dA_dx[k][mu, :] @ xd
                           - g[mu] * mf.dA_dv[k][mu, :] @ xdd
                           - 0.5 * mf.dm_dx[k][mu] * minkowski(xd, xd) + mf.dA_dx[k][:, mu] @ xd_l)
                    other = (mf.rate[n][:, mu] @ xd_l + mf.dA_dv[n][:, mu] @ xdd_l
                             - mf.dA_dx[n][:, mu] @ xd_l + g[mu] * mf.dA_dx[k][mu, :] @ xd
                             + g[mu] * mf.dA_dv[k][mu, :] @ xdd)
                    LR += mult.beta[n][i] * (Ds[k][i, mu] * own + Ds[n][i, mu] * other)
    return float(LT), float(LR)


def mass_x0_constraint(kin, mf, n):
    m = mf.mass(kin.x)[n]
    xd, xdd = kin.xd[n], kin.xdd[n]
    return float(0.5 * mf.dm_dx[n][0] * xd[0] * minkowski(xd, xd) + m * minkowski(xdd, xd))


def weak_constraints_residual(kin, mf):
    sphere = np.sum(kin.x * kin.x, axis=1) - kin.R_sphere ** 2
    gauge = np.einsum("nvv->n", mf.dA_dx)
    return {"sphere": sphere, "gauge": gauge}


# ---------------------------------------------------------------------------
# degrees of freedom

def dof_audit(scheme, n_particles):
    n = int(n_particles)
    if n < 2:
        raise TooFewParticles("a single variable-mass particle is not admissible")
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}")
    pairs = n * (n - 1) // 2
    gauge = 1 if n == 2 and scheme != "diag" else n
    if scheme == "diag":
        field_x = 4 * n - gauge
    elif scheme == "central_distinct":
        field_x = 4 * pairs - gauge
    else:
        field_x = pairs - gauge
    positions, mass, field_v = 3 * n, 3 * n, 3 * n
    variables = positions + mass + field_v + field_x
    equations = 12 * n
    return {
        "scheme": scheme, "n_particles": n, "equations": equations, "variables": variables,
        "breakdown": {"positions": positions, "mass": mass, "field_velocity": field_v,
                      "field_position": field_x, "gauge_conditions": gauge, "pairs": pairs},
        "solvable": variables == equations,
    }


# ---------------------------------------------------------------------------
# scenes

def load_scene(desc):
    """Kinematics, mass/field tables and multipliers from a JSON scene."""
    if isinstance(desc, str):
        try:
            desc = json.loads(desc)
        except json.JSONDecodeError:
            with open(desc) as fh:
                desc = json.load(fh)
    R = float(desc.get("R", 1.0))
    parts = desc["particles"]
    n = len(parts)
    x = np.array([p["x"] if "x" in p else lorentz_from_angular(p["xi"], R)[0] for p in parts], float)
    kin = ParticleKinematics(x, [p.get("xd", [0] * 4) for p in parts],
                             [p.get("xdd", [0] * 4) for p in parts], R)
    scheme = desc.get("scheme", "diag")
    zeros = np.zeros((n, 4, 4))
    if "dA_ds" in desc:
        dA_ds = {tuple(map(int, k.split(","))): v for k, v in desc["dA_ds"].items()}
        dA_dx = central_tables(x, dA_ds, scheme)
    else:
        dA_dx = np.asarray(desc.get("dA_dx", zeros), float)
    mf = MassFieldApprox([p.get("m0", 1.0) for p in parts], [p.get("dm_dx", [0] * 4) for p in parts],
                         desc.get("A0", [0] * 4), dA_dx, desc.get("dA_dv", zeros),
                         desc.get("rate"), scheme)
    mult = Multipliers(desc.get("lambda", np.zeros((n, 4))), desc.get("beta", np.zeros((n, 3))))
    return kin, mf, mult


def scene_report(kin, mf, mult):
    rows = []
    for n in range(kin.n):
        Phi, Psi = constraints_phi_psi(kin, mf, n)
        rows.append({"particle": n, "Phi": Phi.tolist(), "Psi": Psi.tolist(),
                     "mass_x0": mass_x0_constraint(kin, mf, n)})
    LT, LR = lagrangians_LT_LR(kin, mf, mult)
    weak = weak_constraints_residual(kin, mf)
    return {"L_sp": lagrangian_sp(kin, mf), "L_T": LT, "L_R": LR, "particles": rows,
            "sphere": weak["sphere"].tolist(), "gauge": weak["gauge"].tolist()}


def report_csv(report):
    buf = io.StringIO()
    w = csv.writer(buf)
    w.writerow(["particle"] + [f"Phi{m}" for m in range(4)] + [f"Psi{i}" for i in range(3)]
               + ["mass_x0", "sphere", "gauge"])
    for r in report["particles"]:
        k = r["particle"]
        w.writerow([k] + r["Phi"] + r["Psi"] + [r["mass_x0"], report["sphere"][k], report["gauge"][k]])
    return buf.getvalue()
