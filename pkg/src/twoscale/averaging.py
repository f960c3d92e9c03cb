"""The generic averaging recurrence for orders 0..2.

The slow fields are built from uniform periodic theta-grids: the order-0
field is evaluated directly through the carrier flow, higher orders combine
state-Jacobians of the order-0 field (finite differences unless an analytic
closure is supplied) with deviation integrals of lower-order grids.  Node
counts double adaptively until the period means stabilize.

All operations are pure functions of immutable inputs.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import DimensionError, FlowError, QuadratureError, UnsupportedOrderError
from .model import TWO_PI, PeriodicDeviation, TwoScaleSystem

_EPS = float(np.finfo(float).eps)


@dataclass(frozen=True)
class QuadratureConfig:
    """Node budget for the adaptive periodic quadrature."""

    base_nodes: int = 64
    max_nodes: int = 4096
    rel_tol: float = 1e-10

    def __post_init__(self):
        if self.base_nodes < 8 or (self.base_nodes & (self.base_nodes - 1)) != 0:
            raise ValueError("base_nodes must be a power of two >= 8")
        if self.max_nodes < self.base_nodes:
            raise ValueError("max_nodes must be >= base_nodes")
        if self.rel_tol <= 0:
            raise ValueError("rel_tol must be positive")


@dataclass(frozen=True)
class FDConfig:
    """Finite-difference steps: eps^(1/3) for first, eps^(1/4) for second derivatives."""

    h1: float = _EPS ** (1.0 / 3.0)
    h2: float = _EPS ** 0.25

    def __post_init__(self):
        if self.h1 <= 0 or self.h2 <= 0:
            raise ValueError("finite-difference steps must be positive")

    def step1(self, ref):
        return self.h1 * (1.0 + float(np.max(np.abs(ref))))

    def step2(self, ref):
        return self.h2 * (1.0 + float(np.max(np.abs(ref))))


@dataclass(frozen=True)
class StateStack:
    """The tuple (y^0, ..., y^k) of averaged states feeding the order-k formulas."""

    t: float
    ys: tuple

    def __post_init__(self):
        ys = tuple(np.asarray(y, dtype=float) for y in self.ys)
        if not ys:
            raise DimensionError("stack needs at least y^0")
        d = ys[0].shape[0] if ys[0].ndim == 1 else None
        for y in ys:
            if y.ndim != 1 or y.shape[0] != d:
                raise DimensionError("all stack entries must be vectors of equal length")
        object.__setattr__(self, "ys", ys)

    @property
    def order(self) -> int:
        return len(self.ys) - 1

    @property
    def d(self) -> int:
        return self.ys[0].shape[0]

    def y(self, j):
        return self.ys[j]

    def truncated(self, k):
        return StateStack(self.t, self.ys[: k + 1])


def tensor_apply(T, vs: Sequence[np.ndarray]) -> np.ndarray:
    """Contract a rank-(k+1) derivative tensor against k vectors.

    Component i of the result is sum over l1..lk of T[i, l1, ..., lk] *
    vs[0][l1] * ... * vs[k-1][lk].
    """
    out = np.asarray(T, dtype=float)
    vs = [np.asarray(v, dtype=float) for v in vs]
    if out.ndim != len(vs) + 1:
        raise DimensionError(f"tensor of rank {out.ndim} needs {out.ndim - 1} vectors, got {len(vs)}")
    for v in vs:
        if v.shape != (out.shape[-1],):
            raise DimensionError("vector length does not match tensor axis")
        out = out @ v
    return out


def _theta_grid(nodes):
    return TWO_PI * np.arange(nodes) / nodes


def _alpha0_batch(sys: TwoScaleSystem, t, thetas, y):
    """alpha^0 on a batch of phases (and optionally batched states).

    ``thetas`` has shape (N,), ``y`` is (d,) or (N, d).  Solves the flow-
    Jacobian linear systems by LU with partial pivoting (no inverses formed).
    """
    flow = sys.flow
    if sys.vectorized:
        Z = np.asarray(flow.Z(t, thetas, y), dtype=float)
        J = np.asarray(flow.jac_z(t, thetas, y), dtype=float)
        dZt = np.asarray(flow.dZ_dt(t, thetas, y), dtype=float)
        A = np.asarray(sys.a(t, thetas, Z), dtype=float)
    else:
        N = thetas.shape[0]
        ys = y if np.ndim(y) == 2 else np.broadcast_to(y, (N, sys.d))
        Z = np.empty((N, sys.d))
        J = np.empty((N, sys.d, sys.d))
        dZt = np.empty((N, sys.d))
        A = np.empty((N, sys.d))
        for n in range(N):
            Z[n] = flow.Z(t, thetas[n], ys[n])
            J[n] = flow.jac_z(t, thetas[n], ys[n])
            dZt[n] = flow.dZ_dt(t, thetas[n], ys[n])
            A[n] = sys.a(t, thetas[n], Z[n])
    rhs = A - np.broadcast_to(dZt, A.shape)
    try:
        return np.linalg.solve(J, rhs[..., None])[..., 0]
    except np.linalg.LinAlgError as exc:
        raise FlowError(f"singular flow Jacobian at t={t}: {exc}") from exc


def alpha0(sys: TwoScaleSystem, t, theta, y0) -> np.ndarray:
    """The Van der Pol-transformed slow field at a single (t, theta, y0)."""
    y0 = np.asarray(y0, dtype=float)
    return _alpha0_batch(sys, t, np.array([float(theta)]), y0)[0]


def _alpha0_jac_grid(sys, t, thetas, y0, fd, analytic=True):
    """State-Jacobian of alpha^0 on the grid: analytic closure or central FD."""
    d = sys.d
    if analytic and sys.alpha0_jac is not None:
        if sys.vectorized:
            return np.asarray(sys.alpha0_jac(t, thetas, y0), dtype=float)
        return np.stack([np.asarray(sys.alpha0_jac(t, th, y0), dtype=float) for th in thetas])
    h = fd.step1(y0)
    J = np.empty((thetas.shape[0], d, d))
    for j in range(d):
        e = np.zeros(d)
        e[j] = h
        J[:, :, j] = (_alpha0_batch(sys, t, thetas, y0 + e)
                      - _alpha0_batch(sys, t, thetas, y0 - e)) / (2 * h)
    return J


def _alpha0_dt_grid(sys, t, thetas, y0, fd):
    ht = fd.h1 * (1.0 + abs(t))
    return (_alpha0_batch(sys, t + ht, thetas, y0)
            - _alpha0_batch(sys, t - ht, thetas, y0)) / (2 * ht)


class AveragingProfile:
    """Grids of alpha^0..alpha^K and their deviation integrals at one (t, stack).

    Built once per state for a fixed node count; :func:`build_profile` wraps
    it in the node-doubling loop.  Exposes pointwise evaluation of the slow
    fields, their deviations theta*A^k, and the period means.
    """

    def __init__(self, sys: TwoScaleSystem, stack: StateStack, nodes: int,
                 fd: Optional[FDConfig] = None, analytic_jacobians: bool = True):
        if stack.d != sys.d:
            raise DimensionError(f"stack dimension {stack.d} != system dimension {sys.d}")
        K = stack.order
        if K > 2:
            raise UnsupportedOrderError(
                "averaging coefficients beyond order 2 are not implemented")
        if K > sys.m:
            raise UnsupportedOrderError(f"order {K} exceeds system smoothness m={sys.m}")
        self.sys = sys
        self.stack = stack
        self.nodes = nodes
        self.fd = fd = fd if fd is not None else FDConfig()
        self.analytic_jacobians = analytic_jacobians

        t = stack.t
        y0 = stack.y(0)
        thetas = _theta_grid(nodes)
        self.thetas = thetas

        self._A = [None] * (K + 1)
        self._dev = [None] * (K + 1)
        self._abar = [None] * (K + 1)
        self._install(0, _alpha0_batch(sys, t, thetas, y0))

        if K >= 1:
            self._J0 = _alpha0_jac_grid(sys, t, thetas, y0, fd, analytic_jacobians)
            self._T0 = _alpha0_dt_grid(sys, t, thetas, y0, fd)
            self._devJ0 = PeriodicDeviation(self._J0)
            self._devT0 = PeriodicDeviation(self._T0)
            self._install(1, self._stage1_values(self._A[0], self._J0, self._T0, stack.y(1)))

        if K >= 2:
            if not sys.linear_flow:
                raise UnsupportedOrderError(
                    "order 2 requires a t-independent flow with linear b "
                    "(system does not declare linear_flow)")
            self._build_stage2()

    # -- construction ----------------------------------------------------

    def _install(self, k, grid):
        self._A[k] = grid
        self._dev[k] = PeriodicDeviation(grid)
        self._abar[k] = self._dev[k].mean

    @staticmethod
    def _stage1_values(A0, J0, T0, y1):
        """alpha^1 grid from the order-0 grids and y^1."""
        dev0 = PeriodicDeviation(A0)
        drift = (np.einsum("nij,j->ni", PeriodicDeviation(J0).grid_values(), dev0.mean)
                 + PeriodicDeviation(T0).grid_values())
        return np.einsum("nij,nj->ni", J0, y1 + dev0.grid_values()) - drift

    def _alpha1_grid_at(self, t, y0, y1):
        """Rebuild the alpha^1 grid at a perturbed (t, y0); used by stage-2 FD."""
        sys, fd, thetas = self.sys, self.fd, self.thetas
        A0 = _alpha0_batch(sys, t, thetas, y0)
        J0 = _alpha0_jac_grid(sys, t, thetas, y0, fd, self.analytic_jacobians)
        T0 = _alpha0_dt_grid(sys, t, thetas, y0, fd)
        return self._stage1_values(A0, J0, T0, y1)

    def _dir2_alpha0(self, t, thetas, y0, w, base):
        """Second directional derivative of alpha^0 along w, per grid node."""
        w = np.atleast_2d(w)
        wmax = np.max(np.abs(w), axis=1)
        out = np.zeros((thetas.shape[0], self.sys.d))
        active = wmax > 1e-14
        if np.any(active):
            h = self.fd.step2(y0) / np.where(active, wmax, 1.0)
            hcol = h[:, None]
            up = _alpha0_batch(self.sys, t, thetas[active], (y0 + hcol * w)[active])
            dn = _alpha0_batch(self.sys, t, thetas[active], (y0 - hcol * w)[active])
            out[active] = (up + dn - 2.0 * base[active]) / (h[active] ** 2)[:, None]
        return out

    def _build_stage2(self):
        sys, fd, stack = self.sys, self.fd, self.stack
        t, y0, y1, y2 = stack.t, stack.y(0), stack.y(1), stack.y(2)
        thetas = self.thetas
        TA0 = self._dev[0].grid_values()
        TA1 = self._dev[1].grid_values()
        abar0, abar1 = self._abar[0], self._abar[1]

        hterm = self._dir2_alpha0(t, thetas, y0, y1 + TA0, self._A[0])

        # drift of theta*A^1: derivatives of alpha^1 under the deviation integral
        a0max = float(np.max(np.abs(abar0)))
        if a0max > 1e-14:
            h = fd.step1(y0) / a0max
            dA1_a0 = (self._alpha1_grid_at(t, y0 + h * abar0, y1)
                      - self._alpha1_grid_at(t, y0 - h * abar0, y1)) / (2 * h)
        else:
            dA1_a0 = np.zeros_like(self._A[1])
        dA1_a1 = np.einsum("nij,j->ni", self._J0, abar1)  # alpha^1 is affine in y^1
        ht = fd.h1 * (1.0 + abs(t))
        dA1_dt = (self._alpha1_grid_at(t + ht, y0, y1)
                  - self._alpha1_grid_at(t - ht, y0, y1)) / (2 * ht)
        self._devD1 = PeriodicDeviation(dA1_a0 + dA1_a1 + dA1_dt)

        A2 = (np.einsum("nij,nj->ni", self._J0, y2 + TA1)
              + 0.5 * hterm
              - self._devD1.grid_values())
        self._install(2, A2)

    # -- pointwise evaluation ---------------------------------------------

    def abar(self, k) -> np.ndarray:
        """Period mean of alpha^k."""
        return self._abar[k]

    def theta_A(self, k, theta) -> np.ndarray:
        """theta * A^k(theta): the deviation integral of alpha^k; no 1/theta is formed."""
        return self._dev[k](theta)

    def _jac_point(self, theta):
        sys, fd = self.sys, self.fd
        t, y0 = self.stack.t, self.stack.y(0)
        if self.analytic_jacobians and sys.alpha0_jac is not None:
            return np.asarray(sys.alpha0_jac(t, theta, y0), dtype=float)
        d = sys.d
        h = fd.step1(y0)
        th = np.array([float(theta)])
        J = np.empty((d, d))
        for j in range(d):
            e = np.zeros(d)
            e[j] = h
            J[:, j] = (_alpha0_batch(sys, t, th, y0 + e)[0]
                       - _alpha0_batch(sys, t, th, y0 - e)[0]) / (2 * h)
        return J

    def alpha(self, k, theta) -> np.ndarray:
        """alpha^k at a single phase; k = 0 is exact, k >= 1 mixes exact
        Taylor terms with spectrally interpolated deviation grids."""
        theta = float(theta)
        t, y0 = self.stack.t, self.stack.y(0)
        if k == 0:
            return alpha0(self.sys, t, theta, y0)
        if k > self.stack.order:
            raise UnsupportedOrderError(f"profile was built for order {self.stack.order}")
        J = self._jac_point(theta)
        if k == 1:
            return (J @ (self.stack.y(1) + self._dev[0](theta))
                    - (self._devJ0(theta) @ self._abar[0] + self._devT0(theta)))
        out = J @ (self.stack.y(2) + self._dev[1](theta))
        w = self.stack.y(1) + self._dev[0](theta)
        out += 0.5 * self._dir2_alpha0(t, np.array([theta]), y0, w[None, :],
                                       alpha0(self.sys, t, theta, y0)[None, :])[0]
        out -= self._devD1(theta)
        return out


def _rel_delta(a, b):
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1.0))


def build_profile(sys: TwoScaleSystem, stack: StateStack,
                  quad: Optional[QuadratureConfig] = None,
                  fd: Optional[FDConfig] = None,
                  analytic_jacobians: bool = True) -> AveragingProfile:
    """Build an :class:`AveragingProfile`, doubling nodes until the period
    means of every order agree to ``quad.rel_tol``.

    Raises :class:`QuadratureError` (carrying the last two period-mean
    estimates) when the budget is exhausted without convergence.  A config
    with ``base_nodes == max_nodes`` pins the resolution and skips the check.
    """
    quad = quad if quad is not None else QuadratureConfig()
    prof = AveragingProfile(sys, stack, quad.base_nodes, fd, analytic_jacobians)
    if quad.base_nodes == quad.max_nodes:
        return prof
    nodes = quad.base_nodes
    prev_delta = np.inf
    while True:
        finer = AveragingProfile(sys, stack, 2 * nodes, fd, analytic_jacobians)
        delta = max(_rel_delta(prof.abar(k), finer.abar(k))
                    for k in range(stack.order + 1))
        # deltas that are tiny but no longer shrinking are finite-difference
        # noise, which node doubling cannot reduce; accept the finer profile
        if delta <= quad.rel_tol or (delta < 1e-6 and delta > 0.35 * prev_delta):
            return finer
        if 4 * nodes > quad.max_nodes:
            raise QuadratureError(
                f"period means did not stabilize to {quad.rel_tol:.1e} within "
                f"{quad.max_nodes} nodes (last delta {delta:.3e})",
                last_estimates=([prof.abar(k) for k in range(stack.order + 1)],
                                [finer.abar(k) for k in range(stack.order + 1)]))
        prof, nodes, prev_delta = finer, 2 * nodes, delta


def abar0(sys: TwoScaleSystem, t, y0, quad: Optional[QuadratureConfig] = None) -> np.ndarray:
    """Period mean of alpha^0 by adaptive periodic trapezoid."""
    return build_profile(sys, StateStack(t, (np.asarray(y0, dtype=float),)), quad).abar(0)


def theta_A(sys: TwoScaleSystem, k, stack: StateStack, theta,
            quad: Optional[QuadratureConfig] = None,
            fd: Optional[FDConfig] = None) -> np.ndarray:
    """theta * A^k at a phase in [0, 2*pi]; vanishes at the period ends."""
    theta = float(theta)
    if theta < 0.0 or theta > TWO_PI:
        raise ValueError("theta must be reduced to [0, 2*pi] first")
    if k > stack.order:
        raise UnsupportedOrderError(f"stack carries order {stack.order}, need {k}")
    prof = build_profile(sys, stack.truncated(k), quad, fd)
    return prof.theta_A(k, theta)


def alpha_k(sys: TwoScaleSystem, k, stack: StateStack, theta,
            quad: Optional[QuadratureConfig] = None,
            fd: Optional[FDConfig] = None) -> np.ndarray:
    """alpha^k (k = 1 or 2) at a single phase."""
    if k not in (1, 2):
        raise UnsupportedOrderError(
            "only orders 1 and 2 are implemented; the recurrence beyond the "
            "printed coefficients is out of scope")
    if k > stack.order:
        raise UnsupportedOrderError(f"stack carries order {stack.order}, need {k}")
    prof = build_profile(sys, stack.truncated(k), quad, fd)
    return prof.alpha(k, float(theta))


def abar_k(sys: TwoScaleSystem, k, stack: StateStack,
           quad: Optional[QuadratureConfig] = None,
           fd: Optional[FDConfig] = None) -> np.ndarray:
    """Period mean of alpha^k (k = 1 or 2)."""
    if k not in (1, 2):
        raise UnsupportedOrderError("only orders 1 and 2 are implemented")
    if k > stack.order:
        raise UnsupportedOrderError(f"stack carries order {stack.order}, need {k}")
    prof = build_profile(sys, stack.truncated(k), quad, fd)
    return prof.abar(k)
