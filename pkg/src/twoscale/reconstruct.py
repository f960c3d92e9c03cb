"""Rebuild oscillatory trajectories from averaged states.

The order-k profile contracts flow derivatives at the order-0 state against
the averaged corrections and their deviation integrals; summing eps^i
profiles gives the non-stiff approximation of the oscillatory solution.
"""
from __future__ import annotations

import math
from typing import Optional

import numpy as np

from .averaging import (FDConfig, QuadratureConfig, StateStack,
                        build_profile, tensor_apply)
from .errors import UnsupportedOrderError
from .integrate import EngineOptions, TimeGrid, _rk4_path, _cascade_rhs
from .model import TwoScaleSystem, reduce_phase


def _flow_hessian(sys: TwoScaleSystem, t, theta, y0, fd: FDConfig):
    flow = sys.flow
    if flow.hess_z is not None:
        return np.asarray(flow.hess_z(t, theta, y0), dtype=float)
    d = sys.d
    h = fd.step2(y0)
    out = np.empty((d, d, d))
    for l in range(d):
        e = np.zeros(d)
        e[l] = h
        out[:, :, l] = (np.asarray(flow.jac_z(t, theta, y0 + e), dtype=float)
                        - np.asarray(flow.jac_z(t, theta, y0 - e), dtype=float)) / (2 * h)
    return out


def reconstruct_X(sys: TwoScaleSystem, k: int, t, theta, stack: StateStack,
                  quad: Optional[QuadratureConfig] = None,
                  fd: Optional[FDConfig] = None) -> np.ndarray:
    """The order-k oscillatory profile X^k(t, theta) at one phase.

    Order 0 is the carrier flow at the averaged state; higher orders contract
    flow derivatives against y^i + theta*A^(i-1) combinations.  theta is
    reduced modulo 2*pi (the deviation terms vanish at period ends, so the
    profiles are genuinely periodic).
    """
    if k > 2:
        raise UnsupportedOrderError("profiles beyond order 2 are not implemented")
    if k > stack.order:
        raise UnsupportedOrderError(f"stack carries order {stack.order}, need {k}")
    fd = fd if fd is not None else FDConfig()
    theta = float(reduce_phase(theta))
    y0 = stack.y(0)
    if k == 0:
        return np.asarray(sys.flow.Z(t, theta, y0), dtype=float)
    prof = build_profile(sys, stack.truncated(k - 1), quad, fd)
    J = np.asarray(sys.flow.jac_z(t, theta, y0), dtype=float)
    out = J @ (stack.y(k) + prof.theta_A(k - 1, theta))
    if k == 2:
        w = stack.y(1) + prof.theta_A(0, theta)
        H = _flow_hessian(sys, t, theta, y0, fd)
        out = out + 0.5 * tensor_apply(H, [w, w])
    return out


def expansion_sum(sys: TwoScaleSystem, k: int, eps: float, t, s, stack: StateStack,
                  quad: Optional[QuadratureConfig] = None,
                  fd: Optional[FDConfig] = None) -> np.ndarray:
    """Partial sum over orders: sum_{i<=k} eps^i X^i(t, (t-s)/eps)."""
    theta = reduce_phase((t - s) / eps)
    out = np.zeros(stack.d)
    for i in range(k + 1):
        out = out + eps ** i * reconstruct_X(sys, i, t, theta, stack, quad, fd)
    return out


def residual_extract(reference, partial_profiles, k: int, eps: float) -> np.ndarray:
    """The rescaled residual (X_eps - sum_{i<k} eps^i X^i) / eps^k on a grid.

    ``partial_profiles`` holds the per-order profile trajectories X^i
    evaluated on the reference grid; for k = 0 the reference itself returns.
    """
    if eps == 0:
        raise ValueError("eps must be nonzero")
    reference = np.asarray(reference, dtype=float)
    out = reference.copy()
    for i in range(k):
        xi = np.asarray(partial_profiles[i], dtype=float)
        if xi.shape != reference.shape:
            raise ValueError("profile trajectories must share the reference grid")
        out -= eps ** i * xi
    return out / eps ** k


def transported_density(u0, regime, k: int, eps: float, t, s, x,
                        opts: Optional[EngineOptions] = None) -> float:
    """Density transported along backward characteristics, to order k.

    Solves the averaged cascade backward from state ``x`` at time ``t`` down
    to ``s``, reconstructs the oscillatory characteristic foot at phase
    -(t-s)/eps, and evaluates the initial density ``u0`` there.
    """
    opts = opts if opts is not None else EngineOptions()
    x = np.asarray(x, dtype=float)
    if math.isclose(t, s):
        return float(u0(x))
    d = x.shape[0]
    y_init = np.zeros((k + 1, d))
    y_init[0] = x
    f = _cascade_rhs(regime, k, opts)
    times = np.linspace(t, s, 201)
    substeps = max(1, math.ceil(opts.steps / (len(times) - 1)))
    path = _rk4_path(f, y_init.reshape(-1), times, substeps)
    ys = path[-1].reshape(k + 1, d)
    stack = StateStack(s, tuple(ys))
    theta_b = reduce_phase(-(t - s) / eps)

    system = regime.system if hasattr(regime, "system") else regime
    foot = np.zeros(d)
    for i in range(k + 1):
        foot = foot + eps ** i * reconstruct_X(system, i, s, theta_b, stack,
                                               opts.quad, opts.fd)
    return float(u0(foot))
