"""Second-order variational mechanics.

Lagrangians depend on (t, q, qd, qdd).  Two evaluation modes are supported:

* symbolic: a sympy expression in the jet symbols returned by :func:`jet`.
  All partials and total time derivatives are exact and then lambdified.
* finite-difference: any callable ``L(t, q, qd, qdd)``; partials are central
  differences and total derivatives are taken along the Taylor curve of the
  jet, which carries q3 and q4 exactly.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
import sympy as sp
from scipy.interpolate import make_interp_spline


class VarcalcError(Exception):
    pass


class SingularHessian(VarcalcError):
    def __init__(self, message="W2 is singular here; use constraint_scan_lagrangian", det=0.0):
        super().__init__(message)
        self.det = det


class InsufficientSmoothness(VarcalcError):
    pass


class NoConvergence(VarcalcError):
    pass


class LevelCapExceeded(VarcalcError):
    pass


class MissingFamily(VarcalcError):
    pass


# ---------------------------------------------------------------------------
# jet symbols

@dataclass(frozen=True)
class Jet:
    t: sp.Symbol
    q: tuple
    qd: tuple
    qdd: tuple
    q3: tuple
    q4: tuple
    q5: tuple

    @property
    def orders(self):
        return (self.q, self.qd, self.qdd, self.q3, self.q4, self.q5)

    def local_dict(self):
        d = {"t": self.t}
        for k, name in enumerate(("q", "qd", "qdd")):
            for i, s in enumerate(self.orders[k]):
                d[f"{name}{i}"] = s
            if len(self.q) == 1:
                d[name] = self.orders[k][0]
        return d


def jet(n):
    """Symbols (t, q_i, qd_i, qdd_i, and higher orders) for an n-dimensional system."""
    t = sp.Symbol("t", real=True)

    def row(name):
        return tuple(sp.Symbol(f"{name}{i}", real=True) for i in range(n))

    return Jet(t, row("q"), row("qd"), row("qdd"), row("q3_"), row("q4_"), row("q5_"))


def total_derivative(expr, J):
    """D = d/dt + sum_k sum_i q^{(k+1)}_i d/dq^{(k)}_i on jet space."""
    out = sp.diff(expr, J.t)
    orders = J.orders
    for k in range(len(orders) - 1):
        for s, s_next in zip(orders[k], orders[k + 1]):
            d = sp.diff(expr, s)
            if d != 0:
                out += d * s_next
    if any(sp.diff(expr, s) != 0 for s in orders[-1]):
        raise InsufficientSmoothness("jet order exceeded")
    return out


# ---------------------------------------------------------------------------
# Lagrangian

@dataclass(frozen=True)
class PathState:
    t: float
    q: np.ndarray
    qd: np.ndarray
    qdd: np.ndarray
    q3: np.ndarray

    @classmethod
    def of(cls, t, q, qd, qdd, q3):
        return cls(float(t), np.atleast_1d(np.asarray(q, float)), np.atleast_1d(np.asarray(qd, float)),
                   np.atleast_1d(np.asarray(qdd, float)), np.atleast_1d(np.asarray(q3, float)))


@dataclass(frozen=True)
class PhasePoint:
    q: np.ndarray
    p: np.ndarray
    s: np.ndarray
    f: np.ndarray | None = None

    @classmethod
    def of(cls, q, p, s, f=None):
        a = lambda v: np.atleast_1d(np.asarray(v, float)).copy()
        return cls(a(q), a(p), a(s), None if f is None else a(f))


@dataclass
class HessianReport:
    W1: np.ndarray
    W2: np.ndarray
    rank1: int
    rank2: int
    zero_modes2: np.ndarray  # rows are an orthonormal basis of the left kernel of W2


def _flat(v):
    if isinstance(v, sp.MatrixBase):
        return list(v)
    if isinstance(v, (list, tuple)):
        return list(v)
    return [v]


def _taylor_jet(q0, q1, q2, q3, q4, tau):
    """Value, first and second derivative of the quartic Taylor curve at tau."""
    q = q0 + q1 * tau + q2 * tau ** 2 / 2 + q3 * tau ** 3 / 6 + q4 * tau ** 4 / 24
    qd = q1 + q2 * tau + q3 * tau ** 2 / 2 + q4 * tau ** 3 / 6
    qdd = q2 + q3 * tau + q4 * tau ** 2 / 2
    return q, qd, qdd


class SecondOrderLagrangian:
    """L(t, q, qd, qdd) with its first and second derivative data."""

    def __init__(self, dim, evaluator=None, expr=None, jet_symbols=None, h=1e-5, name=""):
        if (evaluator is None) == (expr is None):
            raise ValueError("give exactly one of evaluator or expr")
        if not 1e-8 <= h <= 1e-3:
            raise ValueError("finite-difference step must lie in [1e-8, 1e-3]")
        self.dim = int(dim)
        self.h = h
        self.name = name
        self.expr = expr
        self._zero = np.zeros(self.dim)
        if expr is not None:
            self.mode = "symbolic"
            self.J = jet_symbols or jet(dim)
            self._build_symbolic()
        else:
            self.mode = "finite-difference"
            self.J = None
            self._L = evaluator

    # -- construction helpers
    @classmethod
    def symbolic(cls, expr_builder, dim, name=""):
        """``expr_builder(J)`` returns a sympy expression in the jet symbols."""
        J = jet(dim)
        return cls(dim, expr=sp.sympify(expr_builder(J)), jet_symbols=J, name=name)

    @classmethod
    def from_string(cls, text, dim, params=None, name=""):
        from sympy.parsing.sympy_parser import parse_expr

        J = jet(dim)
        local = J.local_dict()
        for fn in ("sin", "cos", "tan", "exp", "sqrt", "log", "sinh", "cosh", "pi"):
            local[fn] = getattr(sp, fn)
        for k, v in (params or {}).items():
            local[k] = sp.nsimplify(v) if isinstance(v, int) else sp.Float(v)
        try:
            expr = sp.sympify(parse_expr(text, local_dict=local, evaluate=True))
        except (SyntaxError, TypeError, sp.SympifyError) as e:
            raise ValueError(f"cannot parse Lagrangian {text!r}: {e}") from e
        allowed = {J.t, *J.q, *J.qd, *J.qdd}
        extra = expr.free_symbols - allowed
        if extra:
            raise ValueError(f"unknown symbols in Lagrangian: {sorted(map(str, extra))}")
        return cls(dim, expr=expr, jet_symbols=J, name=name)

    def numeric(self, h=None):
        """Finite-difference twin of a symbolic Lagrangian (for cross-checks)."""
        if self.mode != "symbolic":
            return self
        return SecondOrderLagrangian(self.dim, evaluator=self.value, h=h or self.h, name=self.name)

    def _build_symbolic(self):
        J, L = self.J, self.expr
        args = (J.t, *J.q, *J.qd, *J.qdd, *J.q3, *J.q4)
        self._args = args
        lam = lambda e: sp.lambdify(args, e, modules="numpy")
        Lq = [sp.diff(L, s) for s in J.q]
        p = [sp.diff(L, s) for s in J.qd]
        s_ = [sp.diff(L, s) for s in J.qdd]
        E = [total_derivative(total_derivative(si, J), J) - total_derivative(pi, J) + lqi
             for si, pi, lqi in zip(s_, p, Lq)]
        self.sym = {
            "L": L, "Lq": Lq, "p": p, "s": s_, "E": E,
            "Lt": sp.diff(L, J.t),
            "sdot": [total_derivative(si, J) for si in s_],
        }
        self.sym["W1"] = sp.Matrix([[sp.diff(pi, v) for v in J.qd] for pi in p])
        self.sym["W2"] = sp.Matrix([[sp.diff(si, v) for v in J.qdd] for si in s_])
        self.sym["M"] = sp.Matrix([[sp.diff(pi, v) for v in J.qdd] for pi in p])
        self.sym["K"] = [e.subs({v: 0 for v in J.q4}) for e in E]
        self.sym["h"] = (sum(pi * v for pi, v in zip(p, J.qd)) - sum(a * v for a, v in zip(self.sym["sdot"], J.qd))
                         + sum(si * v for si, v in zip(s_, J.qdd)) - L)
        self._f = {k: lam(_flat(v)) for k, v in self.sym.items()}
        # fused bundles used in the integrators' inner loops
        self._f["W2K"] = lam(_flat(self.sym["W2"]) + _flat(self.sym["K"]))
        self._f["sW2"] = lam(_flat(s_) + _flat(self.sym["W2"]))
        self._f["Lqp"] = lam(_flat(Lq) + _flat(p))

    # -- evaluation
    def _call(self, key, t, q, qd, qdd, q3=None, q4=None):
        z = self._zero
        out = self._f[key](t, *q, *qd, *qdd, *(z if q3 is None else q3), *(z if q4 is None else q4))
        return np.array(out, dtype=float)

    def value(self, t, q, qd, qdd):
        q, qd, qdd = (np.asarray(v, dtype=float) for v in (q, qd, qdd))
        if self.mode == "symbolic":
            return float(self._call("L", t, q, qd, qdd)[0])
        return float(self._L(t, q, qd, qdd))

    def _fd_grad(self, t, q, qd, qdd, which):
        h = self.h
        base = [np.array(q, float), np.array(qd, float), np.array(qdd, float)]
        out = np.zeros(self.dim)
        for i in range(self.dim):
            up = [b.copy() for b in base]
            dn = [b.copy() for b in base]
            up[which][i] += h
            dn[which][i] -= h
            out[i] = (self._L(t, *up) - self._L(t, *dn)) / (2 * h)
        return out

    def partials(self, t, q, qd, qdd):
        """(L_q, p, s) at the point."""
        if self.mode == "symbolic":
            return tuple(np.asarray(self._call(k, t, q, qd, qdd), float).reshape(self.dim)
                         for k in ("Lq", "p", "s"))
        return tuple(self._fd_grad(t, q, qd, qdd, w) for w in range(3))

    def dL_dt(self, t, q, qd, qdd):
        if self.mode == "symbolic":
            return float(self._call("Lt", t, q, qd, qdd)[0])
        h = self.h
        return (self._L(t + h, q, qd, qdd) - self._L(t - h, q, qd, qdd)) / (2 * h)

    def _fd_total(self, fn, t, q0, q1, q2, q3, q4, order):
        """order-th total derivative of fn(t, q, qd, qdd) along the jet, 5-point stencil."""
        tau = 2e-3
        pts = (-2, -1, 0, 1, 2)
        vals = []
        for k in pts:
            qq, qd, qdd = _taylor_jet(q0, q1, q2, q3, q4, k * tau)
            vals.append(np.asarray(fn(t + k * tau, qq, qd, qdd), float))
        v = vals
        if order == 1:
            return (v[0] - 8 * v[1] + 8 * v[3] - v[4]) / (12 * tau)
        return (-v[0] + 16 * v[1] - 30 * v[2] + 16 * v[3] - v[4]) / (12 * tau ** 2)

    def euler_lagrange(self, t, q, qd, qdd, q3, q4):
        """E = D^2 s - D p + L_q at a fourth-order jet."""
        args = [np.atleast_1d(np.asarray(v, float)) for v in (q, qd, qdd, q3, q4)]
        if self.mode == "symbolic":
            return np.asarray(self._call("E", t, *args), float).reshape(self.dim)
        s_fn = lambda tt, a, b, c: self.partials(tt, a, b, c)[2]
        p_fn = lambda tt, a, b, c: self.partials(tt, a, b, c)[1]
        Lq = self.partials(t, *args[:3])[0]
        return (self._fd_total(s_fn, t, *args, 2) - self._fd_total(p_fn, t, *args, 1) + Lq)

    def sdot(self, t, q, qd, qdd, q3):
        args = [np.atleast_1d(np.asarray(v, float)) for v in (q, qd, qdd, q3)]
        if self.mode == "symbolic":
            return np.asarray(self._call("sdot", t, *args), float).reshape(self.dim)
        s_fn = lambda tt, a, b, c: self.partials(tt, a, b, c)[2]
        return self._fd_total(s_fn, t, *args, np.zeros(self.dim), 1)

    def hessian_blocks(self, t, q, qd, qdd):
        """(W1, M, W2) with M = d2L/dqd dqdd."""
        if self.mode == "symbolic":
            return tuple(np.asarray(self._call(k, t, q, qd, qdd), float).reshape(self.dim, self.dim)
                         for k in ("W1", "M", "W2"))
        n, h = self.dim, self.h
        W = np.zeros((2 * n, 2 * n))
        base = np.concatenate([qd, qdd]).astype(float)
        for j in range(2 * n):
            up, dn = base.copy(), base.copy()
            up[j] += h
            dn[j] -= h
            gu = self.partials(t, q, up[:n], up[n:])
            gd = self.partials(t, q, dn[:n], dn[n:])
            W[:, j] = (np.concatenate(gu[1:]) - np.concatenate(gd[1:])) / (2 * h)
        W = 0.5 * (W + W.T)
        return W[:n, :n], W[:n, n:], W[n:, n:]

    def el_split(self, t, q, qd, qdd, q3):
        """(W2, K) with E = W2 q4 + K."""
        if self.mode == "symbolic":
            n = self.dim
            v = self._call("W2K", t, q, qd, qdd, q3)
            return v[:n * n].reshape(n, n), v[n * n:]
        z = np.zeros(self.dim)
        K = self.euler_lagrange(t, q, qd, qdd, q3, z)
        W2 = self.hessian_blocks(t, q, qd, qdd)[2]
        return W2, K


def augmented(L, constraints, multipliers):
    """F* = F + sum_i lambda_i(t) phi_i for second-order constraints phi_i.

    Symbolic mode takes sympy expressions for both (multipliers in t only);
    finite-difference mode takes callables phi(t, q, qd, qdd) and lambda(t).
    """
    if not constraints:
        return L
    if L.mode == "symbolic":
        expr = L.expr + sum(sp.sympify(lam) * phi for lam, phi in zip(multipliers, constraints))
        return SecondOrderLagrangian(L.dim, expr=expr, jet_symbols=L.J, h=L.h, name=L.name + "*")

    def F(t, q, qd, qdd):
        return L.value(t, q, qd, qdd) + sum(lam(t) * phi(t, q, qd, qdd)
                                            for lam, phi in zip(multipliers, constraints))

    return SecondOrderLagrangian(L.dim, evaluator=F, h=L.h, name=L.name + "*")


# ---------------------------------------------------------------------------
# paths

class FunctionPath:
    """Path from callables for q and its first four derivatives."""

    def __init__(self, derivs):
        if len(derivs) < 5:
            raise InsufficientSmoothness("path needs q through its fourth derivative")
        self.derivs = derivs

    @classmethod
    def from_sympy(cls, exprs, t):
        exprs = [sp.sympify(e) for e in exprs]
        fns = []
        for k in range(5):
            dk = [sp.diff(e, t, k) for e in exprs]
            f = sp.lambdify(t, dk, modules="numpy")
            fns.append(lambda tt, f=f: np.array([np.broadcast_to(v, np.shape(tt)) for v in f(tt)], float))
        return cls(fns)

    def jet(self, t):
        return [np.asarray(d(t), float) for d in self.derivs[:5]]


class SplinePath:
    """Quintic interpolating spline through samples (t_k, q_k)."""

    def __init__(self, t, q, k=5):
        if k < 5:
            raise InsufficientSmoothness("spline degree below 5 has no continuous fourth derivative")
        q = np.asarray(q, float)
        if q.ndim == 1:
            q = q[:, None]
        self.spl = make_interp_spline(np.asarray(t, float), q, k=k)

    def jet(self, t):
        return [np.asarray(self.spl(t, nu=k)).T for k in range(5)]


def el_residual(L, path, t, constraints=None, multipliers=None):
    F = augmented(L, constraints or [], multipliers or [])
    q, q1, q2, q3, q4 = (np.atleast_1d(v) for v in path.jet(t))
    return F.euler_lagrange(t, q, q1, q2, q3, q4)


# ---------------------------------------------------------------------------
# momenta, energy, Hessians

def momenta(L, state):
    _, p, s = L.partials(state.t, state.q, state.qd, state.qdd)
    return p, s


def energy_h(L, state):
    """h = p qd - sdot qd + s qdd - L."""
    if L.mode == "symbolic":
        return float(L._call("h", state.t, state.q, state.qd, state.qdd, state.q3)[0])
    _, p, s = L.partials(state.t, state.q, state.qd, state.qdd)
    sd = L.sdot(state.t, state.q, state.qd, state.qdd, state.q3)
    return float(p @ state.qd - sd @ state.qd + s @ state.qdd
                 - L.value(state.t, state.q, state.qd, state.qdd))


def _left_kernel(W, rank_tol):
    U, sv, _ = np.linalg.svd(W)
    smax = sv[0] if sv.size and sv[0] > 0 else 0.0
    rank = int(np.sum(sv > rank_tol * smax)) if smax > 0 else 0
    return rank, U[:, rank:].T.copy()


def hessians(L, state, rank_tol=1e-10):
    W1, _, W2 = L.hessian_blocks(state.t, state.q, state.qd, state.qdd)
    r1, _ = _left_kernel(W1, rank_tol)
    r2, ker = _left_kernel(W2, rank_tol)
    return HessianReport(W1, W2, r1, r2, ker)


# ---------------------------------------------------------------------------
# integrators

def _rk4(rhs, y0, t0, t1, dt):
    n_steps = int(round((t1 - t0) / dt))
    if n_steps <= 0 or not math.isclose(n_steps * dt, t1 - t0, rel_tol=1e-9, abs_tol=1e-12):
        raise ValueError("t_span must be a positive multiple of dt")
    ts = t0 + dt * np.arange(n_steps + 1)
    ys = np.empty((n_steps + 1, len(y0)))
    ys[0] = y = np.asarray(y0, float)
    for k in range(n_steps):
        t = ts[k]
        k1 = rhs(t, y)
        k2 = rhs(t + dt / 2, y + dt / 2 * k1)
        k3 = rhs(t + dt / 2, y + dt / 2 * k2)
        k4 = rhs(t + dt, y + dt * k3)
        y = y + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        ys[k + 1] = y
    return ts, ys


@dataclass
class Trajectory:
    t: np.ndarray
    q: np.ndarray
    qd: np.ndarray
    qdd: np.ndarray
    q3: np.ndarray
    h: np.ndarray | None = None

    def state(self, k):
        return PathState(float(self.t[k]), self.q[k], self.qd[k], self.qdd[k], self.q3[k])

    def to_csv(self):
        n = self.q.shape[1]
        buf = io.StringIO()
        w = csv.writer(buf)
        head = ["t"] + [f"q{i}" for i in range(n)] + [f"qd{i}" for i in range(n)] + \
               [f"qdd{i}" for i in range(n)] + ["h"]
        w.writerow(head)
        hs = self.h if self.h is not None else np.full(len(self.t), np.nan)
        for k in range(len(self.t)):
            w.writerow([repr(float(self.t[k]))] + [repr(float(v)) for v in self.q[k]]
                       + [repr(float(v)) for v in self.qd[k]] + [repr(float(v)) for v in self.qdd[k]]
                       + [repr(float(hs[k]))])
        return buf.getvalue()


def _fourth(L, t, q, qd, qdd, q3, det_tol):
    W2, K = L.el_split(t, q, qd, qdd, q3)
    det = np.linalg.det(W2)
    scale = max(1.0, np.max(np.abs(W2))) ** L.dim
    if abs(det) < det_tol * scale:
        raise SingularHessian(det=float(det))
    return np.linalg.solve(W2, -K)


def integrate_el(L, initial, t_span, dt, det_tol=1e-12, with_energy=True):
    """RK4 on (q, qd, qdd, q3) with W2 q4 = -K solved every stage."""
    n = L.dim

    def rhs(t, y):
        q, qd, qdd, q3 = y[:n], y[n:2 * n], y[2 * n:3 * n], y[3 * n:]
        q4 = _fourth(L, t, q, qd, qdd, q3, det_tol)
        return np.concatenate([qd, qdd, q3, q4])

    y0 = np.concatenate([initial.q, initial.qd, initial.qdd, initial.q3])
    _fourth(L, initial.t, initial.q, initial.qd, initial.qdd, initial.q3, det_tol)
    ts, ys = _rk4(rhs, y0, t_span[0], t_span[1], dt)
    tr = Trajectory(ts, ys[:, :n], ys[:, n:2 * n], ys[:, 2 * n:3 * n], ys[:, 3 * n:])
    if with_energy:
        if L.mode == "symbolic":
            # the lambdified expression broadcasts over the whole trajectory
            hv = L._f["h"](ts, *tr.q.T, *tr.qd.T, *tr.qdd.T, *tr.q3.T, *np.zeros((n, len(ts))))
            tr.h = np.broadcast_to(np.asarray(hv[0], float), ts.shape).copy()
        else:
            tr.h = np.array([energy_h(L, tr.state(k)) for k in range(len(ts))])
    return tr


# ---------------------------------------------------------------------------
# Legendre map and Hamiltonians

def invert_momenta(L, t, q, p, s, guess=None, tol=1e-12, max_iter=50):
    """Solve p = L_qd, s = L_qdd for (qd, qdd) by Newton."""
    n = L.dim
    z = np.zeros(2 * n) if guess is None else np.asarray(guess, float).copy()
    target = np.concatenate([p, s])
    for _ in range(max_iter):
        _, pp, ss = L.partials(t, q, z[:n], z[n:])
        F = np.concatenate([pp, ss]) - target
        if np.max(np.abs(F)) <= tol * max(1.0, np.max(np.abs(target))):
            return z[:n], z[n:]
        W1, M, W2 = L.hessian_blocks(t, q, z[:n], z[n:])
        Jm = np.block([[W1, M], [M.T, W2]])
        try:
            z = z - np.linalg.solve(Jm, F)
        except np.linalg.LinAlgError as e:
            raise NoConvergence("Legendre map is singular") from e
    _, pp, ss = L.partials(t, q, z[:n], z[n:])
    F = np.concatenate([pp, ss]) - target
    if np.max(np.abs(F)) <= 1e3 * tol * max(1.0, np.max(np.abs(target))):
        return z[:n], z[n:]
    raise NoConvergence(f"Legendre inversion failed, residual {np.max(np.abs(F)):.3e}")


def legendre_hamiltonian(L, point, t=0.0, family=None, guess=None, h=1e-5):
    """H = p qd + s qdd - L and its partials.

    The partials are central differences of H itself (each evaluation
    re-inverts the Legendre map), so they independently check the envelope
    identities dH/dp = qd, dH/ds = qdd and dH/dq = -L_q.
    """
    q, p, s = point.q, point.p, point.s
    n = L.dim

    def H_of(tt, qq, pp, ss):
        qd, qdd = invert_momenta(L, tt, qq, pp, ss, guess)
        return float(pp @ qd + ss @ qdd - L.value(tt, qq, qd, qdd))

    qd, qdd = invert_momenta(L, t, q, p, s, guess)
    guess = np.concatenate([qd, qdd])
    H = float(p @ qd + s @ qdd - L.value(t, q, qd, qdd))

    def grad(which):
        out = np.zeros(n)
        for i in range(n):
            args_u = [q.copy(), p.copy(), s.copy()]
            args_d = [q.copy(), p.copy(), s.copy()]
            args_u[which][i] += h
            args_d[which][i] -= h
            out[i] = (H_of(t, *args_u) - H_of(t, *args_d)) / (2 * h)
        return out

    Lq = L.partials(t, q, qd, qdd)[0]
    rep = {
        "H": H, "qd": qd, "qdd": qdd,
        "dH_dq": grad(0), "dH_dp": grad(1), "dH_ds": grad(2),
        "dH_dt": (H_of(t + h, q, p, s) - H_of(t - h, q, p, s)) / (2 * h),
        "minus_L_q": -Lq, "minus_L_t": -L.dL_dt(t, q, qd, qdd),
    }
    if family is not None:
        # the alternative reading dH/ds = fdot, with fdot = dF2/dqd . qdd
        Jf = family.jacobian(qd)
        rep["fdot"] = Jf @ qdd
        rep["dH_ds_vs_fdot"] = float(np.max(np.abs(rep["dH_ds"] - rep["fdot"])))
    return rep


class Ostrogradsky:
    """Canonical pair (Q1, Q2; P1, P2) for a nondegenerate second-order L."""

    def __init__(self, L, det_tol=1e-12):
        self.L = L
        self.det_tol = det_tol

    def _s_W2(self, t, Q1, Q2, A):
        L = self.L
        if L.mode == "symbolic":
            n = L.dim
            v = L._call("sW2", t, Q1, Q2, A)
            return v[:n], v[n:].reshape(n, n)
        return L.partials(t, Q1, Q2, A)[2], L.hessian_blocks(t, Q1, Q2, A)[2]

    def accel(self, t, Q1, Q2, P2, guess=None, tol=1e-13, max_iter=50):
        """A with L_qdd(t, Q1, Q2, A) = P2."""
        A = np.zeros(self.L.dim) if guess is None else np.array(guess, float)
        for _ in range(max_iter):
            s, W2 = self._s_W2(t, Q1, Q2, A)
            det = np.linalg.det(W2)
            if abs(det) < self.det_tol:
                raise SingularHessian(det=float(det))
            dA = np.linalg.solve(W2, s - P2)
            A = A - dA
            if np.max(np.abs(dA)) <= tol * max(1.0, np.max(np.abs(A))):
                return A
        s, _ = self._s_W2(t, Q1, Q2, A)
        if np.max(np.abs(s - P2)) < 1e-9 * max(1.0, np.max(np.abs(P2))):
            return A
        raise NoConvergence("acceleration inversion failed")

    def hamiltonian(self, t, Q1, Q2, P1, P2):
        A = self.accel(t, Q1, Q2, P2)
        return float(P1 @ Q2 + P2 @ A - self.L.value(t, Q1, Q2, A))

    def rhs(self, t, y):
        n = self.L.dim
        Q1, Q2, P1, P2 = y[:n], y[n:2 * n], y[2 * n:3 * n], y[3 * n:]
        A = self.accel(t, Q1, Q2, P2, guess=self._last)
        self._last = A
        if self.L.mode == "symbolic":
            v = self.L._call("Lqp", t, Q1, Q2, A)
            Lq, p = v[:n], v[n:]
        else:
            Lq, p, _ = self.L.partials(t, Q1, Q2, A)
        return np.concatenate([Q2, A, Lq, -P1 + p])

    def from_state(self, state):
        _, p, s = self.L.partials(state.t, state.q, state.qd, state.qdd)
        sd = self.L.sdot(state.t, state.q, state.qd, state.qdd, state.q3)
        return np.concatenate([state.q, state.qd, p - sd, s])

    def integrate(self, y0, t_span, dt):
        self._last = None
        return _rk4(self.rhs, np.asarray(y0, float), t_span[0], t_span[1], dt)


def ostrogradsky(L):
    return Ostrogradsky(L)


# ---------------------------------------------------------------------------
# constraint scan at the Lagrangian level

def _probe_values(J, exprs, points):
    syms = (J.t, *J.q, *J.qd, *J.qdd, *J.q3, *J.q4, *J.q5)
    f = sp.lambdify(syms, list(exprs), modules="numpy")
    return np.array([np.asarray(f(*pt), float) for pt in points])  # (n_probe, n_expr)


def constraint_scan_lagrangian(L, state=None, max_levels=6, n_probes=32, seed=0, tol=1e-9):
    """Zero-mode / gauge-identity analysis of the Euler-Lagrange system.

    Level k works with the stacked system E^(k) = [E; D(phi) for genuine
    constraints found so far].  Left zero modes of its q4-coefficient matrix
    are contracted with E^(k); each contraction is a gauge identity when it
    vanishes at every random off-shell probe (or equals a fixed combination
    of earlier genuine constraints there) and a genuine constraint otherwise.
    """
    if L.mode != "symbolic":
        raise ValueError("constraint scan needs a symbolic Lagrangian")
    J = L.J
    n = L.dim
    rng = np.random.default_rng(seed)
    n_syms = 1 + 6 * n
    base = np.zeros(n_syms)
    if state is not None:
        base[:1 + 4 * n] = np.concatenate([[state.t], state.q, state.qd, state.qdd, state.q3])
    probes = base + rng.normal(size=(n_probes, n_syms))

    rows = list(L.sym["E"])
    genuine = []
    old_modes = []  # numeric (at first probe) padded vectors of accepted modes
    levels = []
    for level in range(max_levels):
        Wk = sp.Matrix([[sp.diff(r, v) for v in J.q4] for r in rows])
        null = Wk.T.nullspace()
        null = [sp.simplify(v) for v in null]
        # keep modes not in the span of earlier (zero-padded) ones
        new = []
        ref = probes[0]
        sub_ref = dict(zip((J.t, *J.q, *J.qd, *J.qdd, *J.q3, *J.q4, *J.q5), ref))
        span = [np.concatenate([m, np.zeros(len(rows) - len(m))]) for m in old_modes]
        for v in null:
            vn = np.array([float(sp.N(c.subs(sub_ref))) for c in v])
            cand = span + [vn]
            if np.linalg.matrix_rank(np.array(cand), tol=1e-9 * max(1.0, np.max(np.abs(vn)))) > len(span):
                new.append((v, vn))
                span.append(vn)
        info = {"level": level, "n_rows": len(rows), "zero_modes": [], "gauge_identities": [],
                "genuine_constraints": []}
        if not new:
            info["terminated"] = "no new zero modes"
            levels.append(info)
            break
        new_genuine = []
        for v, vn in new:
            phi = sp.simplify(sum(c * r for c, r in zip(v, rows)))
            info["zero_modes"].append(vn / np.linalg.norm(vn))
            vals = _probe_values(J, [phi], probes)[:, 0] if phi != 0 else np.zeros(n_probes)
            scale = max(1.0, np.max(np.abs(vals)))
            kind = "genuine"
            if phi == 0 or np.max(np.abs(vals)) <= tol:
                kind = "gauge"
            elif genuine:
                G = _probe_values(J, genuine, probes)
                c, *_ = np.linalg.lstsq(G, vals, rcond=None)
                if np.max(np.abs(G @ c - vals)) <= tol * scale:
                    kind = "gauge"
            if kind == "gauge":
                info["gauge_identities"].append(phi)
            else:
                info["genuine_constraints"].append(phi)
                new_genuine.append(phi)
        old_modes = [np.concatenate([m, np.zeros(len(rows) - len(m))]) for m in old_modes]
        old_modes += [vn for _, vn in new]
        levels.append(info)
        if not new_genuine:
            info["terminated"] = "no new genuine constraints"
            break
        genuine += new_genuine
        rows = rows + [sp.expand(total_derivative(g, J)) for g in new_genuine]
    else:
        raise LevelCapExceeded(f"no termination within {max_levels} levels")
    return {
        "levels": levels,
        "n_levels": len(levels),
        "gauge_identities": [g for lv in levels for g in lv["gauge_identities"]],
        "genuine_constraints": [g for lv in levels for g in lv["genuine_constraints"]],
        "empty": all(not lv["zero_modes"] for lv in levels),
    }


# ---------------------------------------------------------------------------
# phase-space functions and brackets

class PhaseFunction:
    """A(q, p, s, f) with gradient and Hessian access.

    Build from a sympy expression (``from_sympy``) or a callable taking four
    arrays (derivatives then come from central differences).
    """

    def __init__(self, n, fn=None, grad=None, hess=None, h=1e-4):
        self.n = n
        self.fn = fn
        self._grad = grad
        self._hess = hess
        self.h = h

    @staticmethod
    def symbols(n):
        mk = lambda name: sp.symbols(f"{name}0:{n}", real=True)
        return mk("q"), mk("p"), mk("s"), mk("f")

    @classmethod
    def from_sympy(cls, expr, syms):
        flat = [v for group in syms for v in group]
        n = len(syms[0])
        g = [sp.diff(expr, v) for v in flat]
        H = [[sp.diff(gi, v) for v in flat] for gi in g]
        fn = sp.lambdify(flat, expr, modules="numpy")
        gf = sp.lambdify(flat, g, modules="numpy")
        hf = sp.lambdify(flat, H, modules="numpy")
        call = lambda f: (lambda z: f(*z))
        return cls(n, call(fn), lambda z: np.asarray(gf(*z), float),
                   lambda z: np.asarray(hf(*z), float))

    def value(self, z):
        return float(self.fn(np.asarray(z, float)))

    def grad(self, z):
        z = np.asarray(z, float)
        if self._grad is not None:
            return self._grad(z)
        out = np.zeros(len(z))
        for i in range(len(z)):
            e = np.zeros(len(z))
            e[i] = self.h
            out[i] = (self.value(z + e) - self.value(z - e)) / (2 * self.h)
        return out

    def hess(self, z):
        z = np.asarray(z, float)
        if self._hess is not None:
            return self._hess(z)
        m = len(z)
        H = np.zeros((m, m))
        for i in range(m):
            e = np.zeros(m)
            e[i] = self.h
            H[:, i] = (self.grad(z + e) - self.grad(z - e)) / (2 * self.h)
        return 0.5 * (H + H.T)


def _z(point):
    f = point.f if point.f is not None else np.zeros_like(point.q)
    return np.concatenate([point.q, point.p, point.s, f])


def _blocks(v, n):
    return v[:n], v[n:2 * n], v[2 * n:3 * n], v[3 * n:]


def poisson(A, B, point):
    n = len(point.q)
    z = _z(point)
    Aq, Ap, _, _ = _blocks(A.grad(z), n)
    Bq, Bp, _, _ = _blocks(B.grad(z), n)
    return float(Aq @ Bp - Ap @ Bq)


def g_functional(A, point, rates):
    n = len(point.q)
    _, Ap, As, Af = _blocks(A.grad(_z(point)), n)
    return float(Ap @ rates["sdd"] + Af @ rates["fd"] + As @ rates["sd"])


def _hblocks(H, n):
    idx = {"q": slice(0, n), "p": slice(n, 2 * n), "s": slice(2 * n, 3 * n), "f": slice(3 * n, 4 * n)}
    return lambda a, b: H[idx[a], idx[b]]


def psi(A, B, C, point):
    n = len(point.q)
    z = _z(point)
    h = _hblocks(A.hess(z), n)
    Bq, Bp, _, _ = _blocks(B.grad(z), n)
    Cq, Cp, _, _ = _blocks(C.grad(z), n)
    return float(Bp @ h("q", "q") @ Cp + Bq @ h("p", "p") @ Cq - 2 * Bp @ h("q", "p") @ Cq)


def psi_prime(A, B1, B2, C1, C2, point):
    n = len(point.q)
    z = _z(point)
    h = _hblocks(A.hess(z), n)
    b1q, b1p, _, _ = _blocks(B1.grad(z), n)
    b2q, b2p, _, _ = _blocks(B2.grad(z), n)
    c1q, c1p, _, _ = _blocks(C1.grad(z), n)
    c2q, c2p, _, _ = _blocks(C2.grad(z), n)
    return float(b1p @ h("q", "q") @ c2p + b2q @ h("p", "p") @ c1q
                 - b1p @ h("q", "p") @ c2q - b2p @ h("q", "p") @ c1q)


def upsilon(A, B, point, rates):
    n = len(point.q)
    z = _z(point)
    Aq, _, _, _ = _blocks(A.grad(z), n)
    h = _hblocks(A.hess(z), n)
    Bq, Bp, Bs, _ = _blocks(B.grad(z), n)
    sdd, fd, sd = rates["sdd"], rates["fd"], rates["sd"]
    return float(0.5 * Aq @ Bs - Bq @ h("p", "p") @ sdd + Bp @ h("q", "p") @ sdd
                 + Bp @ h("q", "f") @ fd + Bp @ h("q", "s") @ sd
                 - Bq @ h("p", "f") @ fd - Bq @ h("p", "s") @ sd)


def omega(A, point, rates, printed=False):
    """Pure-rate part of the second derivative.

    The default includes the factor 2 on the mixed second-derivative terms and
    the p-f cross term that the chain rule produces; ``printed=True`` gives
    the shorter form without them.
    """
    n = len(point.q)
    z = _z(point)
    _, Ap, As, Af = _blocks(A.grad(z), n)
    h = _hblocks(A.hess(z), n)
    sdd, fd, sd = rates["sdd"], rates["fd"], rates["sd"]
    base = (Ap @ rates["pdd"] + Af @ rates["fdd"] + As @ sdd
            + sdd @ h("p", "p") @ sdd + fd @ h("f", "f") @ fd + sd @ h("s", "s") @ sd)
    if printed:
        return float(base + sdd @ h("p", "s") @ sd + fd @ h("f", "s") @ sd)
    return float(base + 2 * sdd @ h("p", "s") @ sd + 2 * fd @ h("f", "s") @ sd
                 + 2 * sdd @ h("p", "f") @ fd)


def bracket_suite(A, B, C, point, rates, H=None):
    """Every bracket and functional at a phase point.

    ``rates`` holds arrays sd, sdd, fd, pdd, fdd.  When a Hamiltonian H is
    given, the first and second time derivatives of A follow from it.
    """
    out = {
        "bracket": poisson(A, B, point),
        "G": g_functional(A, point, rates),
        "Psi": psi(A, B, C, point),
        "Upsilon": upsilon(A, B, point, rates),
        "Omega": omega(A, point, rates),
        "Omega_printed": omega(A, point, rates, printed=True),
    }
    if H is not None:
        out["phi_dot"] = poisson(A, H, point) + out["G"]
        out["phi_ddot"] = psi(A, H, H, point) + 2 * upsilon(A, H, point, rates) + out["Omega"]
    return out


# ---------------------------------------------------------------------------
# correlation families and generators

@dataclass
class CorrelationFamily:
    """F2(qd) -> R^n, optionally with a G table G(qd) -> n x n."""

    F2: Callable
    G: Callable | None = None
    h: float = 1e-6

    def __call__(self, qd):
        return np.asarray(self.F2(np.asarray(qd, float)), float)

    def jacobian(self, qd):
        qd = np.asarray(qd, float)
        n = len(qd)
        Jm = np.zeros((n, n))
        for j in range(n):
            e = np.zeros(n)
            e[j] = self.h
            Jm[:, j] = (self(qd + e) - self(qd - e)) / (2 * self.h)
        return Jm


def validate_correlation_family(family, qd, f, tol=1e-6, n_witness=8, seed=0):
    qd = np.asarray(qd, float)
    n = len(qd)
    Jm = family.jacobian(qd)
    dev = float(np.max(np.abs(Jm - np.eye(n))))
    rep = {"jacobian_deviation": dev, "derivative_ok": dev <= tol,
           "on_surface_residual": float(np.max(np.abs(family(qd) - np.asarray(f, float))))}
    rep["on_surface"] = rep["on_surface_residual"] <= tol
    # F2 - qd constant means the family is the excluded trivial one
    rng = np.random.default_rng(seed)
    c0 = family(qd) - qd
    spread = 0.0
    for _ in range(n_witness):
        v = qd + rng.normal(size=n)
        spread = max(spread, float(np.max(np.abs(family(v) - v - c0))))
    rep["nonconstancy_witness"] = spread
    rep["nonconstant"] = spread > tol
    if family.G is not None:
        G = np.asarray(family.G(qd), float)
        rep["normalization_deviation"] = float(np.max(np.abs(G @ G - np.eye(n))))
        rep["normalization_ok"] = rep["normalization_deviation"] <= tol
    rep["ok"] = rep["derivative_ok"] and rep["nonconstant"] and rep.get("normalization_ok", True)
    return rep


def generator_apply(kind, eps, point, family=None, index=0, rates=None):
    """Infinitesimal canonical transformation generated by identity, P_i, S_i or time."""
    q, p, s = point.q.copy(), point.p.copy(), point.s.copy()
    f = None if point.f is None else point.f.copy()
    if kind == "identity":
        return PhasePoint(q, p, s, f)
    if kind == "P":
        q[index] += eps
        return PhasePoint(q, p, s, f)
    if kind in ("S", "time") and (family is None or f is None):
        raise MissingFamily(f"generator {kind!r} acts on f and needs a correlation family")
    if kind == "S":
        f[index] -= eps
        return PhasePoint(q, p, s, f)
    if kind == "time":
        if rates is None:
            raise ValueError("time generator needs rates qd, pd, sd, fd")
        return PhasePoint(q + eps * rates["qd"], p + eps * rates["pd"], s + eps * rates["sd"],
                          f - eps * rates["fd"])
    raise ValueError(f"unknown generator {kind!r}")


# ---------------------------------------------------------------------------
# consistency coefficients

def solve_consistency(A2, B2, C2, n_starts=32, seed=0, tol=1e-10):
    """Real solutions a of a A2_k a + B2_k a + C2_k = 0 for every k.

    A2 has shape (m, r, r), B2 (m, r), C2 (m,).  Multistart least squares;
    returns the distinct solutions found (possibly none).
    """
    from scipy.optimize import least_squares

    A2, B2, C2 = np.asarray(A2, float), np.asarray(B2, float), np.asarray(C2, float)
    r = B2.shape[1]
    fun = lambda a: np.einsum("kij,i,j->k", A2, a, a) + B2 @ a + C2
    jac = lambda a: np.einsum("kij,j->ki", A2 + np.transpose(A2, (0, 2, 1)), a) + B2
    rng = np.random.default_rng(seed)
    sols = []
    for _ in range(n_starts):
        res = least_squares(fun, rng.normal(scale=2.0, size=r), jac=jac, xtol=1e-15, ftol=1e-15,
                            gtol=1e-15)
        if np.max(np.abs(fun(res.x))) <= tol and all(np.max(np.abs(res.x - s_)) > 1e-6 for s_ in sols):
            sols.append(res.x)
    return sols


# ---------------------------------------------------------------------------
# DSL

def load_lagrangian(desc):
    """Build a symbolic Lagrangian from a JSON string, dict or file path.

    Format: {"dim": n, "expr": "...", "params": {"w1": 1.0}}.  Symbols are
    t, q<i>, qd<i>, qdd<i> (plain q, qd, qdd when dim is 1).
    """
    if isinstance(desc, str):
        try:
            desc = json.loads(desc)
        except json.JSONDecodeError:
            with open(desc) as fh:
                desc = json.load(fh)
    if "expr" not in desc or "dim" not in desc:
        raise ValueError("Lagrangian desc needs 'dim' and 'expr'")
    return SecondOrderLagrangian.from_string(desc["expr"], int(desc["dim"]), desc.get("params"),
                                             name=desc.get("name", ""))


def pais_uhlenbeck(w1=1.0, w2=math.sqrt(2.0)):
    def build(J):
        q, qd, qdd = J.q[0], J.qd[0], J.qdd[0]
        a = sp.nsimplify(w1 ** 2) if float(w1 ** 2).is_integer() else sp.Float(w1 ** 2)
        b = sp.nsimplify(w2 ** 2) if abs(w2 ** 2 - round(w2 ** 2)) < 1e-12 else sp.Float(w2 ** 2)
        return sp.Rational(1, 2) * (qdd ** 2 - (a + b) * qd ** 2 + a * b * q ** 2)

    return SecondOrderLagrangian.symbolic(build, 1, name="pais-uhlenbeck")


# ---------------------------------------------------------------------------
# discrete action against the Euler-Lagrange residual

def _lagrangian_on_grid(L, ts, q, qd, qdd):
    if L.mode == "symbolic":
        n = L.dim
        z = np.zeros((n, len(ts)))
        v = L._f["L"](ts, *q.T, *qd.T, *qdd.T, *z, *z)[0]
        return np.broadcast_to(np.asarray(v, float), ts.shape)
    return np.array([L.value(t, a, b, c) for t, a, b, c in zip(ts, q, qd, qdd)])


def _jet_on_grid(path, ts):
    out = []
    for d in path.jet(ts):
        d = np.asarray(d, float)
        out.append(d.reshape(d.shape[0], -1).T if d.shape[-1] == len(ts) else d)
    return out


def discrete_action(L, path, eta, ts, eps):
    """Trapezoid action of the varied path q + eps * eta on the grid ts."""
    q = _jet_on_grid(path, ts)
    e = _jet_on_grid(eta, ts)
    vals = _lagrangian_on_grid(L, ts, q[0] + eps * e[0], q[1] + eps * e[1], q[2] + eps * e[2])
    return float(np.trapezoid(vals, ts))


def action_gradient(L, path, eta, ts, eps=1e-3):
    """dS/deps at eps = 0 by a fourth-order central difference."""
    S = lambda e: discrete_action(L, path, eta, ts, e)
    return (-S(2 * eps) + 8 * S(eps) - 8 * S(-eps) + S(-2 * eps)) / (12 * eps)


def el_pairing(L, path, eta, ts):
    """Trapezoid of E . eta on the grid ts."""
    q = _jet_on_grid(path, ts)
    e = _jet_on_grid(eta, ts)[0]
    E = np.array([L.euler_lagrange(t, *(v[k] for v in q)) for k, t in enumerate(ts)])
    return float(np.trapezoid(np.sum(E * e, axis=1), ts))


def action_gradient_check(L, path, eta, T, grids=(200, 400), eps=1e-3):
    """Compare the action gradient with the paired Euler-Lagrange residual.

    ``eta`` must vanish with its first derivative at 0 and T so boundary terms
    drop.  Returns relative errors per grid and the observed order.
    """
    errs, rows = [], []
    for N in grids:
        ts = np.linspace(0.0, T, N + 1)
        g = action_gradient(L, path, eta, ts, eps)
        w = el_pairing(L, path, eta, ts)
        rel = abs(g - w) / max(abs(w), 1e-300)
        errs.append(rel)
        rows.append({"N": N, "action_gradient": g, "el_pairing": w, "rel_error": rel})
    orders = [math.log(errs[k] / errs[k + 1]) / math.log(grids[k + 1] / grids[k])
              if errs[k + 1] > 0 and errs[k] > 0 else float("inf") for k in range(len(grids) - 1)]
    return {"rows": rows, "rel_error": errs[-1], "orders": orders, "order": min(orders)}
