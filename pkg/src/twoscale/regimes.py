"""The four charged-particle regimes: flows, closed-form averaged systems,
and closed-form reconstructions.

Each regime bundles a six-dimensional :class:`TwoScaleSystem` (position (+)
velocity) for the generic engine with the explicit averaged right-hand sides
and oscillatory reconstructions, which serve both as the fast path and as
ground truth for cross-checks.  The strong-field direction is e1 except in
the variable-field regime, where it winds azimuthally around the x3 axis.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .averaging import (FDConfig, QuadratureConfig, StateStack, build_profile,
                        tensor_apply)
from .errors import AxisError, ConfigError, QuadratureError, UnsupportedOrderError
from .fields import EMField
from .model import (TWO_PI, PeriodicDeviation, PeriodicFlow, TwoScaleSystem,
                    projector_P, reduce_phase, rotation_R, rotation_calR)

I3 = np.eye(3)
P3 = projector_P()
E1 = np.array([1.0, 0.0, 0.0])
E3 = np.array([0.0, 0.0, 1.0])
RP = rotation_R(np.pi / 2)     # R(+pi/2)
RM = rotation_R(-np.pi / 2)    # R(-pi/2)

REGIME_KINDS = ("irs_const", "gc_const", "flr_const", "gc_variable")

#: Largest order with a printed averaged system / reconstruction.
MAX_ORDER = {"irs_const": 1, "gc_const": 2, "flr_const": 0, "gc_variable": 1}

#: Largest order whose full trajectory can run on closed forms.  The
#: variable-field order-1 velocity dynamics has no transcribed closed form,
#: so those trajectories always go through the generic engine.
CLOSED_ORDER = {"irs_const": 1, "gc_const": 2, "flr_const": 0, "gc_variable": 0}


def split6(x):
    x = np.asarray(x, dtype=float)
    return x[..., :3], x[..., 3:]


def join6(pos, vel):
    pos, vel = np.broadcast_arrays(pos, vel)
    return np.concatenate([pos, vel], axis=-1)


def _mat_vec(M, v):
    return np.einsum("...ij,...j->...i", M, v)


@dataclass(frozen=True)
class RegimeSpec:
    """Which regime, with which prescribed field, up to which order."""

    kind: str
    field: EMField
    max_order: int

    def __post_init__(self):
        if self.kind not in REGIME_KINDS:
            raise ConfigError(f"unknown regime '{self.kind}'; choose from {REGIME_KINDS}")
        if self.max_order != MAX_ORDER[self.kind]:
            raise ConfigError(f"regime '{self.kind}' supports max_order {MAX_ORDER[self.kind]}")


# ---------------------------------------------------------------------------
# variable-field geometry
# ---------------------------------------------------------------------------

class VariableFieldGeometry:
    """Azimuthal strong-field geometry around the x3 axis.

    M(x) = (-x2, x1, 0)/Omega with Omega = sqrt(x1^2 + x2^2); the velocity
    rotation Zmat(theta, z) is the explicit matrix of the rotation of angle
    -theta about M(z).  Evaluations with Omega < r_min raise AxisError: the
    formulas divide by powers of Omega and are not regularized.
    """

    def __init__(self, r_min: float = 1e-6):
        self.r_min = float(r_min)

    def omega(self, z):
        z = np.asarray(z, dtype=float)
        om = np.hypot(z[..., 0], z[..., 1])
        if np.any(om < self.r_min):
            raise AxisError(f"position within {self.r_min} of the magnetic axis")
        return om

    def M(self, z):
        z = np.asarray(z, dtype=float)
        om = self.omega(z)
        out = np.empty(z.shape)
        out[..., 0] = -z[..., 1] / om
        out[..., 1] = z[..., 0] / om
        out[..., 2] = 0.0
        return out

    def dM(self, z):
        """dM[..., i, j] = d M_i / d z_j."""
        z = np.asarray(z, dtype=float)
        om = self.omega(z)
        om3 = om ** 3
        z1, z2 = z[..., 0], z[..., 1]
        out = np.zeros(z.shape[:-1] + (3, 3))
        out[..., 0, 0] = z1 * z2 / om3
        out[..., 1, 0] = z2 * z2 / om3
        out[..., 0, 1] = -z1 * z1 / om3
        out[..., 1, 1] = -z1 * z2 / om3
        return out

    def Zmat(self, theta, z):
        """The explicit velocity-rotation matrix about M(z) by angle -theta."""
        th = np.asarray(theta, dtype=float)
        z = np.asarray(z, dtype=float)
        om = self.omega(z)
        z1, z2 = z[..., 0], z[..., 1]
        c, s = np.cos(th), np.sin(th)
        shape = np.broadcast_shapes(th.shape, om.shape)
        A = np.zeros(shape + (3, 3))
        om2 = om ** 2
        A[..., 0, 0] = (z2 ** 2 + z1 ** 2 * c) / om2
        A[..., 0, 1] = z1 * z2 * (c - 1.0) / om2
        A[..., 0, 2] = -z1 * s / om
        A[..., 1, 0] = z1 * z2 * (c - 1.0) / om2
        A[..., 1, 1] = (z1 ** 2 + z2 ** 2 * c) / om2
        A[..., 1, 2] = -z2 * s / om
        A[..., 2, 0] = z1 * s / om
        A[..., 2, 1] = z2 * s / om
        A[..., 2, 2] = c
        return A

    def Abar(self, y):
        """Period mean of Zmat: the projector onto span M(y)."""
        y = np.asarray(y, dtype=float)
        om2 = self.omega(y) ** 2
        y1, y2 = y[..., 0], y[..., 1]
        A = np.zeros(y.shape[:-1] + (3, 3))
        A[..., 0, 0] = y2 ** 2 / om2
        A[..., 0, 1] = -y1 * y2 / om2
        A[..., 1, 0] = -y1 * y2 / om2
        A[..., 1, 1] = y1 ** 2 / om2
        return A

    def beta_bar(self, y, u):
        """Mean quadratic drift of the averaged velocity equation."""
        y = np.asarray(y, dtype=float)
        u = np.asarray(u, dtype=float)
        om2 = self.omega(y) ** 2
        y1, y2 = y[..., 0], y[..., 1]
        u1, u2 = u[..., 0], u[..., 1]
        out = np.zeros(np.broadcast_shapes(y.shape, u.shape))
        out[..., 0] = (y2 * u1 - y1 * u2) * u2 / om2
        out[..., 1] = (y1 * u2 - y2 * u1) * u1 / om2
        return out

    def grad_Zmat_vel(self, theta, z, w):
        """B[..., i, j] = d/dz_j of (Zmat(theta, z) w)_i."""
        th = np.asarray(theta, dtype=float)
        z = np.asarray(z, dtype=float)
        w = np.asarray(w, dtype=float)
        c, s = np.cos(th), np.sin(th)
        M = self.M(z)
        dM = self.dM(z)
        Mw = np.einsum("...i,...i->...", M, w)
        shape = np.broadcast_shapes(th.shape, z.shape[:-1], w.shape[:-1])
        B = np.zeros(shape + (3, 3))
        for j in range(2):  # the j = 2 column vanishes (M ignores z3)
            dMj = dM[..., :, j]
            dot = np.einsum("...i,...i->...", dMj, w)
            col = ((1.0 - c)[..., None] * (dot[..., None] * M + Mw[..., None] * dMj)
                   - s[..., None] * np.cross(dMj, w))
            B[..., :, j] = col
        return B


# ---------------------------------------------------------------------------
# flows and systems
# ---------------------------------------------------------------------------

def _zeros6(t, theta, x):
    shape = np.broadcast_shapes(np.shape(np.asarray(theta, dtype=float)),
                                np.shape(np.asarray(x)[..., 0]))
    return np.zeros(shape + (6,))


def _rotation_flow():
    """Flow for the constant-field regimes: positions frozen, velocities rotate."""

    def Z(t, theta, x):
        pos, vel = split6(x)
        return join6(pos, _mat_vec(rotation_R(theta), vel))

    def jac(t, theta, x):
        th = np.asarray(theta, dtype=float)
        shape = np.broadcast_shapes(th.shape, np.shape(np.asarray(x)[..., 0]))
        J = np.zeros(shape + (6, 6))
        J[..., :3, :3] = I3
        J[..., 3:, 3:] = rotation_R(th)
        return J

    def hess(t, theta, x):
        return np.zeros((6, 6, 6))

    return PeriodicFlow(Z=Z, jac_z=jac, dZ_dt=_zeros6, hess_z=hess, vectorized=True)


def _larmor_flow():
    """Flow for the finite-Larmor-radius regime: positions carry the gyroradius."""

    def Z(t, theta, x):
        pos, vel = split6(x)
        return join6(pos + _mat_vec(rotation_calR(theta), vel),
                     _mat_vec(rotation_R(theta), vel))

    def jac(t, theta, x):
        th = np.asarray(theta, dtype=float)
        shape = np.broadcast_shapes(th.shape, np.shape(np.asarray(x)[..., 0]))
        J = np.zeros(shape + (6, 6))
        J[..., :3, :3] = I3
        J[..., :3, 3:] = rotation_calR(th)
        J[..., 3:, 3:] = rotation_R(th)
        return J

    def hess(t, theta, x):
        return np.zeros((6, 6, 6))

    return PeriodicFlow(Z=Z, jac_z=jac, dZ_dt=_zeros6, hess_z=hess, vectorized=True)


def _variable_flow(geom: VariableFieldGeometry):
    def Z(t, theta, x):
        pos, vel = split6(x)
        return join6(pos, _mat_vec(geom.Zmat(theta, pos), vel))

    def jac(t, theta, x):
        pos, vel = split6(x)
        A = geom.Zmat(theta, pos)
        B = geom.grad_Zmat_vel(theta, pos, vel)
        shape = A.shape[:-2]
        J = np.zeros(shape + (6, 6))
        J[..., :3, :3] = I3
        J[..., 3:, :3] = B
        J[..., 3:, 3:] = A
        return J

    return PeriodicFlow(Z=Z, jac_z=jac, dZ_dt=_zeros6, vectorized=True)


def _grad_batch(field: EMField, t, thetas, x, fd: FDConfig):
    """Field gradient on a theta batch at a fixed position."""
    n = np.shape(thetas)
    if field.grad is not None:
        g = np.asarray(field.grad(t, thetas, x), dtype=float)
        if g.shape != n + (3, 3):
            g = np.broadcast_to(g, n + (3, 3))
        return g
    h = fd.step1(x)
    out = np.empty(n + (3, 3))
    for j in range(3):
        e = np.zeros(3)
        e[j] = h
        out[..., :, j] = (np.asarray(field.value(t, thetas, x + e), dtype=float)
                          - np.asarray(field.value(t, thetas, x - e), dtype=float)) / (2 * h)
    return out


def _dt_batch(field: EMField, t, thetas, x, fd: FDConfig):
    n = np.shape(thetas)
    if not field.time_dependent:
        return np.zeros(n + (3,))
    if field.dvalue_dt is not None:
        g = np.asarray(field.dvalue_dt(t, thetas, x), dtype=float)
        if g.shape != n + (3,):
            g = np.broadcast_to(g, n + (3,))
        return g
    h = fd.h1 * (1.0 + abs(t))
    return (np.asarray(field.value(t + h, thetas, x), dtype=float)
            - np.asarray(field.value(t - h, thetas, x), dtype=float)) / (2 * h)


def _grad_at_positions(field: EMField, t, X, fd: FDConfig):
    """Field gradient on a batch of positions (theta-independent fields)."""
    X = np.asarray(X, dtype=float)
    want = X.shape[:-1] + (3, 3)
    if field.grad is not None:
        g = np.asarray(field.grad(t, 0.0, X), dtype=float)
        return g if g.shape == want else np.broadcast_to(g, want)
    h = fd.step1(X)
    out = np.empty(want)
    for j in range(3):
        e = np.zeros(3)
        e[j] = h
        out[..., :, j] = (np.asarray(field.value(t, 0.0, X + e), dtype=float)
                          - np.asarray(field.value(t, 0.0, X - e), dtype=float)) / (2 * h)
    return out


def make_system(kind: str, field: EMField, geom: Optional[VariableFieldGeometry] = None,
                m: int = 3) -> TwoScaleSystem:
    """Assemble the six-dimensional two-scale system of a named regime."""
    fd0 = FDConfig()

    if kind == "irs_const":
        def a(t, theta, x):
            pos, vel = split6(x)
            return join6(vel, np.asarray(field.value(t, theta, pos), dtype=float))

        def b(t, x):
            pos, vel = split6(x)
            return join6(np.zeros_like(pos), np.cross(vel, E1))

        def a0jac(t, theta, y):
            pos, _ = split6(y)
            th = np.atleast_1d(np.asarray(theta, dtype=float))
            G = _grad_batch(field, t, th, pos, fd0)
            J = np.zeros(th.shape + (6, 6))
            J[..., :3, 3:] = rotation_R(th)
            J[..., 3:, :3] = np.einsum("nij,njk->nik", rotation_R(-th), G)
            return J if np.ndim(theta) else J[0]

        return TwoScaleSystem(d=6, a=a, b=b, flow=_rotation_flow(), m=m,
                              linear_flow=True, vectorized=True,
                              alpha0_jac=a0jac, label="irs_const")

    if kind == "gc_const":
        def a(t, theta, x):
            pos, vel = split6(x)
            return join6(vel, np.asarray(field.value(t, 0.0, pos), dtype=float))

        def b(t, x):
            pos, vel = split6(x)
            return join6(np.zeros_like(pos), np.cross(vel, E1))

        def a0jac(t, theta, y):
            pos, _ = split6(y)
            th = np.atleast_1d(np.asarray(theta, dtype=float))
            G = field.gradient(t, 0.0, pos, fd0)
            J = np.zeros(th.shape + (6, 6))
            J[..., :3, 3:] = rotation_R(th)
            J[..., 3:, :3] = np.einsum("nij,jk->nik", rotation_R(-th), G)
            return J if np.ndim(theta) else J[0]

        return TwoScaleSystem(d=6, a=a, b=b, flow=_rotation_flow(), m=m,
                              linear_flow=True, vectorized=True,
                              alpha0_jac=a0jac, label="gc_const")

    if kind == "flr_const":
        def a(t, theta, x):
            pos, vel = split6(x)
            return join6(_mat_vec(P3, vel), np.asarray(field.value(t, 0.0, pos), dtype=float))

        def b(t, x):
            pos, vel = split6(x)
            return join6(vel - _mat_vec(P3, vel), np.cross(vel, E1))

        def a0jac(t, theta, y):
            pos, vel = split6(y)
            th = np.atleast_1d(np.asarray(theta, dtype=float))
            X = pos + _mat_vec(rotation_calR(th), vel)
            G = _grad_at_positions(field, t, X, fd0)
            cRm = rotation_calR(-th)
            Rm = rotation_R(-th)
            cRp = rotation_calR(th)
            J = np.zeros(th.shape + (6, 6))
            J[..., :3, :3] = np.einsum("nij,njk->nik", cRm, G)
            J[..., :3, 3:] = P3 + np.einsum("nij,njk,nkl->nil", cRm, G, cRp)
            J[..., 3:, :3] = np.einsum("nij,njk->nik", Rm, G)
            J[..., 3:, 3:] = np.einsum("nij,njk,nkl->nil", Rm, G, cRp)
            return J if np.ndim(theta) else J[0]

        return TwoScaleSystem(d=6, a=a, b=b, flow=_larmor_flow(), m=m,
                              linear_flow=True, vectorized=True,
                              alpha0_jac=a0jac, label="flr_const")

    if kind == "gc_variable":
        geom = geom if geom is not None else VariableFieldGeometry()

        def a(t, theta, x):
            pos, vel = split6(x)
            acc = np.asarray(field.value(t, 0.0, pos), dtype=float) + np.cross(vel, E3)
            return join6(vel, acc)

        def b(t, x):
            pos, vel = split6(x)
            return join6(np.zeros_like(pos), np.cross(vel, geom.M(pos)))

        return TwoScaleSystem(d=6, a=a, b=b, flow=_variable_flow(geom), m=m,
                              linear_flow=False, vectorized=True, label="gc_variable")

    raise ConfigError(f"unknown regime '{kind}'")


# ---------------------------------------------------------------------------
# closed-form averaged systems and reconstructions
# ---------------------------------------------------------------------------

def _adaptive_mean(build, quad: QuadratureConfig, what: str):
    """Converge the estimate returned by ``build(nodes)`` under node doubling."""
    prev = build(quad.base_nodes)
    if quad.base_nodes == quad.max_nodes:
        return prev
    nodes = quad.base_nodes
    prev_delta = np.inf
    while True:
        cur = build(2 * nodes)
        delta = float(np.max(np.abs(cur - prev))) / max(1.0, float(np.max(np.abs(cur))))
        if delta <= quad.rel_tol or (delta < 1e-6 and delta > 0.35 * prev_delta):
            return cur
        if 4 * nodes > quad.max_nodes:
            raise QuadratureError(f"{what}: period mean did not stabilize within "
                                  f"{quad.max_nodes} nodes", last_estimates=(prev, cur))
        prev, nodes, prev_delta = cur, 2 * nodes, delta


class Regime:
    """A named regime: spec + generic system + closed-form fast paths."""

    def __init__(self, spec: RegimeSpec, r_min: float = 1e-6,
                 quad: Optional[QuadratureConfig] = None,
                 fd: Optional[FDConfig] = None):
        self.spec = spec
        self.geometry = VariableFieldGeometry(r_min) if spec.kind == "gc_variable" else None
        self.system = make_system(spec.kind, spec.field, self.geometry)
        self.quad = quad if quad is not None else QuadratureConfig()
        self.fd = fd if fd is not None else FDConfig()

    @property
    def kind(self):
        return self.spec.kind

    @property
    def field(self):
        return self.spec.field

    @property
    def max_order(self):
        return self.spec.max_order

    @property
    def closed_order(self):
        return CLOSED_ORDER[self.kind]

    # -- sampling box used by cross-checks (documented in reports) --------

    def sample_state(self, rng) -> np.ndarray:
        if self.kind == "gc_variable":
            r = rng.uniform(0.5, 2.0)
            phi = rng.uniform(0.0, TWO_PI)
            pos = np.array([r * np.cos(phi), r * np.sin(phi), rng.uniform(-1.0, 1.0)])
        else:
            pos = rng.uniform(-1.0, 1.0, size=3)
        vel = rng.uniform(-1.0, 1.0, size=3)
        return np.concatenate([pos, vel])

    def sample_stack(self, rng, k, t=None) -> StateStack:
        t = rng.uniform(0.0, 1.0) if t is None else t
        ys = [self.sample_state(rng)]
        ys += [rng.uniform(-1.0, 1.0, size=6) for _ in range(k)]
        return StateStack(t, tuple(ys))

    # -- closed-form averaged right-hand sides ----------------------------

    def rhs(self, k, t, ys) -> np.ndarray:
        """Closed-form rate of the order-k averaged state, given y^0..y^k."""
        ys = [np.asarray(y, dtype=float) for y in np.atleast_2d(ys)]
        if k > self.max_order:
            raise UnsupportedOrderError(f"{self.kind} supports orders <= {self.max_order}")
        if k > self.closed_order:
            raise UnsupportedOrderError(
                f"{self.kind} order {k} trajectories are generic-engine only")
        method = getattr(self, f"_rhs_{self.kind}")
        return method(k, t, ys)

    def _rhs_gc_const(self, k, t, ys):
        y0pos, u0 = split6(ys[0])
        f = self.field
        E0 = np.asarray(f.value(t, 0.0, y0pos), dtype=float)
        if k == 0:
            return np.concatenate([P3 @ u0, P3 @ E0])
        G = f.gradient(t, 0.0, y0pos, self.fd)
        Et = f.dt(t, 0.0, y0pos, self.fd)
        IP = I3 - P3
        u0par = P3 @ u0
        if k == 1:
            y1, u1 = split6(ys[1])
            dy = P3 @ u1 + (RP - P3) @ E0
            # the u0 coefficient is the full period mean of R(-theta) G calR(theta);
            # its parallel row P G (R(pi/2)-P) survives alongside the two trace terms
            du = (P3 @ G @ y1
                  + P3 @ G @ (RP - P3) @ u0
                  + 0.5 * np.trace(IP @ G) * (RM - P3) @ u0
                  + 0.5 * np.trace((RM - P3) @ G) * IP @ u0
                  - (RM - P3) @ G @ u0par
                  - (RM - P3) @ Et)
            return np.concatenate([dy, du])
        # k == 2
        y1, u1 = split6(ys[1])
        y2, u2 = split6(ys[2])
        H = f.hessian(t, 0.0, y0pos, self.fd)
        Gt = f.grad_dt(t, 0.0, y0pos, self.fd)
        Ett = f.dt2(t, 0.0, y0pos, self.fd)
        tr1 = np.trace(IP @ G)
        tr2 = np.trace((RM - P3) @ G)

        dy = (P3 @ u2 + (RP - P3) @ G @ y1
              + IP @ (G @ u0par + Et)
              + (P3 @ G @ IP + (RP - P3) @ G @ (RP - P3)) @ u0
              - 0.5 * tr1 * IP @ u0
              - 0.5 * tr2 * (RP - P3) @ u0)

        # velocity block: period mean of the order-2 slow field assembled from
        # the order-1 deviation blocks; the theta-integrands are degree-2 trig
        # polynomials, so the grid means are exact
        Hu = np.einsum("ijl,l->ij", H, u0par)
        abar1_pos = P3 @ u1 + (RP - P3) @ E0

        def build(nodes):
            thetas = TWO_PI * np.arange(nodes) / nodes
            Rth = rotation_R(thetas)
            Rmth = rotation_R(-thetas)
            cR = rotation_calR(thetas)
            cRm = rotation_calR(-thetas)
            dev = lambda X: PeriodicDeviation(
                np.einsum("nij,jk,nkl->nil", Rmth, X, cR)).grid_values()
            Q, Qv, Qt = dev(G), dev(Hu), dev(Gt)
            A = _mat_vec(cR, u1) + _mat_vec(I3 - Rth, E0)
            drift = (-np.einsum("nij,jk,k->ni", cRm, Hu, y1)
                     - _mat_vec(I3 - Rmth, Hu @ u0par + Gt @ u0par)
                     + _mat_vec(Qv, u0)
                     - np.einsum("nij,jk,k->ni", I3 - Rmth, G @ P3, P3 @ E0)
                     + _mat_vec(Q, P3 @ E0)
                     - np.einsum("nij,jk,k->ni", cRm, G, abar1_pos)
                     - np.einsum("nij,jk,k->ni", cRm, Gt, y1)
                     - _mat_vec(I3 - Rmth, Gt @ u0par + Ett)
                     + _mat_vec(Qt, u0))
            w = y1[None, :] + _mat_vec(cR, u0)
            quad = 0.5 * np.einsum("nij,jkl,nk,nl->ni", Rmth, H, w, w)
            taylor = np.einsum("nij,jk,nk->ni", Rmth, G, y2[None, :] + A)
            return (taylor + quad - drift).mean(axis=0)

        du = _adaptive_mean(build, self.quad, "gc order 2")
        return np.concatenate([dy, du])

    def _rhs_irs_const(self, k, t, ys):
        y0pos, u0 = split6(ys[0])
        f = self.field
        if k == 0:
            def build(nodes):
                thetas = TWO_PI * np.arange(nodes) / nodes
                Eth = np.asarray(f.value(t, thetas, y0pos), dtype=float)
                return _mat_vec(rotation_R(-thetas), Eth).mean(axis=0)

            acc = _adaptive_mean(build, self.quad, "irs order 0")
            return np.concatenate([P3 @ u0, acc])

        y1, u1 = split6(ys[1])
        u0par = P3 @ u0

        def build(nodes):
            thetas = TWO_PI * np.arange(nodes) / nodes
            Rm = rotation_R(-thetas)
            Rp = rotation_R(thetas)
            Eth = np.asarray(f.value(t, thetas, y0pos), dtype=float)
            Gth = _grad_batch(f, t, thetas, y0pos, self.fd)
            Eth_t = _dt_batch(f, t, thetas, y0pos, self.fd)

            G = _mat_vec(Rm, Eth)                       # R(-sigma) E(sigma)
            abar_v = G.mean(axis=0)
            devG = PeriodicDeviation(G).grid_values()
            pos_drive = _mat_vec(Rp, devG).mean(axis=0)

            RG = np.einsum("nij,njk->nik", Rm, Gth)     # R(-theta) gradE
            M1 = RG.mean(axis=0)
            M2 = np.einsum("nij,njk->nik", RG, rotation_calR(thetas)).mean(axis=0)
            M3 = PeriodicDeviation(RG).grid_values().mean(axis=0)
            V4 = PeriodicDeviation(_mat_vec(Rm, Eth_t)).grid_values().mean(axis=0)

            dy = P3 @ u1 + pos_drive - (RP - P3) @ abar_v
            du = M1 @ y1 + M2 @ u0 - M3 @ u0par - V4
            return np.concatenate([dy, du])

        return _adaptive_mean(build, self.quad, "irs order 1")

    def _rhs_flr_const(self, k, t, ys):
        y0pos, u0 = split6(ys[0])
        f = self.field

        def build(nodes):
            thetas = TWO_PI * np.arange(nodes) / nodes
            X = y0pos + _mat_vec(rotation_calR(thetas), u0)
            Eth = np.asarray(f.value(t, 0.0, X), dtype=float)
            dy_osc = _mat_vec(rotation_calR(-thetas), Eth).mean(axis=0)
            du = _mat_vec(rotation_R(-thetas), Eth).mean(axis=0)
            return np.concatenate([dy_osc, du])

        mean = _adaptive_mean(build, self.quad, "flr order 0")
        return np.concatenate([P3 @ u0 + mean[:3], mean[3:]])

    def _rhs_gc_variable(self, k, t, ys):
        geom = self.geometry
        y0pos, u0 = split6(ys[0])
        E0 = np.asarray(self.field.value(t, 0.0, y0pos), dtype=float)
        Abar = geom.Abar(y0pos)
        M = geom.M(y0pos)
        Epar = (E0 @ M) * M
        dy = Abar @ u0
        du = geom.beta_bar(y0pos, u0) + Abar @ Epar + np.cross(u0, Abar @ E3)
        return np.concatenate([dy, du])

    # -- closed-form reconstructions --------------------------------------

    def reconstruct(self, k, t, theta, ys) -> np.ndarray:
        """Closed-form oscillatory profile X^k(t, theta) from y^0..y^k."""
        ys = [np.asarray(y, dtype=float) for y in np.atleast_2d(ys)]
        if k > self.max_order:
            raise UnsupportedOrderError(f"{self.kind} supports orders <= {self.max_order}")
        theta = float(reduce_phase(theta))
        method = getattr(self, f"_rec_{self.kind}")
        return method(k, t, theta, ys)

    def _rec_gc_const(self, k, t, theta, ys):
        y0pos, u0 = split6(ys[0])
        R = rotation_R(theta)
        if k == 0:
            return np.concatenate([y0pos, R @ u0])
        cR = rotation_calR(theta)
        f = self.field
        E0 = np.asarray(f.value(t, 0.0, y0pos), dtype=float)
        if k == 1:
            y1, u1 = split6(ys[1])
            return np.concatenate([y1 + cR @ u0, R @ u1 + cR @ E0])
        y1, u1 = split6(ys[1])
        y2, u2 = split6(ys[2])
        G = f.gradient(t, 0.0, y0pos, self.fd)
        Et = f.dt(t, 0.0, y0pos, self.fd)
        pos = y2 + cR @ u1 + (I3 - R) @ E0
        Rshift = rotation_R(theta - np.pi / 2)
        vel = (R @ u2 + cR @ G @ y1
               - (R - I3) @ (G @ (P3 @ u0) + Et)
               + (P3 @ G @ (I3 - R)
                  + 0.5 * (RP - P3) @ G @ (cR + RP - P3)
                  + 0.5 * (Rshift - P3) @ G @ (RP - P3)) @ u0)
        return np.concatenate([pos, vel])

    def _rec_irs_const(self, k, t, theta, ys):
        y0pos, u0 = split6(ys[0])
        R = rotation_R(theta)
        if k == 0:
            return np.concatenate([y0pos, R @ u0])
        y1, u1 = split6(ys[1])
        nodes = self.quad.base_nodes
        thetas = TWO_PI * np.arange(nodes) / nodes
        Eth = np.asarray(self.field.value(t, thetas, y0pos), dtype=float)
        dev = PeriodicDeviation(_mat_vec(rotation_R(-thetas), Eth))
        return np.concatenate([y1 + rotation_calR(theta) @ u0,
                               R @ (u1 + dev(theta))])

    def _rec_flr_const(self, k, t, theta, ys):
        y0pos, u0 = split6(ys[0])
        return np.concatenate([y0pos + rotation_calR(theta) @ u0,
                               rotation_R(theta) @ u0])

    def _rec_gc_variable(self, k, t, theta, ys):
        y0pos, u0 = split6(ys[0])
        if k == 0:
            return np.concatenate([y0pos, self.geometry.Zmat(theta, y0pos) @ u0])
        raise UnsupportedOrderError(
            "gc_variable order-1 velocity reconstruction has no closed form here; "
            "use the generic engine (variable_X1_position covers the position block)")

    # -- hierarchy dispatch -------------------------------------------------

    def averaged_rates(self, kmax, t, ys, quad=None, fd=None, engine="auto"):
        """Rates (dY^0/dt, ..., dY^kmax/dt); closed forms when available."""
        if engine not in ("auto", "closed", "generic"):
            raise ConfigError(f"unknown engine '{engine}'")
        use_closed = engine == "closed" or (engine == "auto" and kmax <= self.closed_order)
        if use_closed:
            return np.stack([self.rhs(j, t, ys) for j in range(kmax + 1)])
        prof = build_profile(self.system, StateStack(t, tuple(ys)),
                             quad if quad is not None else self.quad,
                             fd if fd is not None else self.fd)
        return np.stack([prof.abar(j) for j in range(kmax + 1)])


def make_regime(kind: str, field: EMField, r_min: float = 1e-6,
                quad: Optional[QuadratureConfig] = None,
                fd: Optional[FDConfig] = None) -> Regime:
    """Build a :class:`Regime` for one of the four named scalings."""
    spec = RegimeSpec(kind=kind, field=field, max_order=MAX_ORDER.get(kind, -1))
    return Regime(spec, r_min=r_min, quad=quad, fd=fd)


# ---------------------------------------------------------------------------
# variable-field printed order-1 formulas (pointwise cross-checks)
# ---------------------------------------------------------------------------

def variable_Y1_position_rhs(t, y0, u0, y1, u1, E, r_min: float = 1e-6) -> np.ndarray:
    """The printed dY^1/dt of the variable-field regime (position block).

    Arguments are the averaged position/velocity pairs and the field value at
    the order-0 position.  Exists as a pointwise cross-check of the generic
    order-1 position rates; the matching velocity dynamics is produced only
    by the generic engine.
    """
    y0 = np.asarray(y0, dtype=float)
    u0 = np.asarray(u0, dtype=float)
    y1 = np.asarray(y1, dtype=float)
    u1 = np.asarray(u1, dtype=float)
    E = np.asarray(E, dtype=float)
    om = float(np.hypot(y0[0], y0[1]))
    if om < r_min:
        raise AxisError("variable-field formulas are singular on the axis")
    o2, o3, o4 = om ** 2, om ** 3, om ** 4
    y01, y02 = y0[0], y0[1]
    u01, u02, u03 = u0
    cross12 = -u01 * y02 + u02 * y01

    d1 = ((-o2 * y02 * u02 + 2 * y01 * y02 * cross12) * y1[0]
          + ((2 * u01 * y02 - u02 * y01) * o2 + 2 * y02 ** 2 * cross12) * y1[1]
          + y02 ** 2 * u1[0] * o2
          - y01 * y02 * o2 * u1[1]
          - o3 * y01 * E[2]
          - y02 * u03 * o3
          - 2 * y02 * u03 * cross12 * om) / o4

    d2 = (((2 * u02 * y01 - u01 * y02) * o2 - 2 * y01 ** 2 * cross12) * y1[0]
          + (-o2 * y01 * u01 - 2 * y01 * y02 * cross12) * y1[1]
          - y01 * y02 * o2 * u1[0]
          + y01 ** 2 * u1[1] * o2
          - o3 * y02 * E[2]
          + o3 * y01 * u03
          + 2 * y01 * u03 * cross12 * om) / o4

    d3 = (o2 * y01 * E[0] + o2 * y02 * E[1]
          + (u02 * y01 + u01 ** 2 - u01 * y02 + u02 ** 2) * o2
          - (y01 * u01 + y02 * u02) ** 2) / o3

    return np.array([d1, d2, d3])


def variable_X1_position(theta, y0, u0, y1, r_min: float = 1e-6) -> np.ndarray:
    """The printed X^1 position components of the variable-field regime."""
    y0 = np.asarray(y0, dtype=float)
    u0 = np.asarray(u0, dtype=float)
    y1 = np.asarray(y1, dtype=float)
    om = float(np.hypot(y0[0], y0[1]))
    if om < r_min:
        raise AxisError("variable-field formulas are singular on the axis")
    c, s = np.cos(theta), np.sin(theta)
    radial = y0[0] * u0[0] + y0[1] * u0[1]
    x1 = (y0[0] * om * (c - 1.0) * u0[2] + y0[0] * radial * s + y1[0] * om ** 2) / om ** 2
    x2 = (y0[1] * om * (c - 1.0) * u0[2] + y0[1] * radial * s + y1[1] * om ** 2) / om ** 2
    x3 = (-radial * (c - 1.0) + y1[2] * om + s * u0[2] * om) / om
    return np.array([x1, x2, x3])
