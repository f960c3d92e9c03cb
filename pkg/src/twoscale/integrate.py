"""Fixed-step explicit integration.

Two solvers share one classical RK4 kernel: the eps-resolved reference
integrator for the full oscillatory system, and the eps-free solver for the
averaged cascade.  Fixed steps keep outputs deterministic and grid-aligned,
which the convergence measurements rely on; accuracy is controlled purely by
step counts.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .averaging import FDConfig, QuadratureConfig, StateStack, build_profile
from .errors import BlowUpError, DimensionError, UnsupportedOrderError
from .model import TwoScaleSystem

TWO_PI = 2.0 * np.pi


@dataclass(frozen=True)
class TimeGrid:
    """Uniform output grid t_i = s + i*T/(samples-1)."""

    s: float
    T: float
    samples: int = 400

    def __post_init__(self):
        if self.T <= 0:
            raise ValueError("horizon T must be positive")
        if self.samples < 2:
            raise ValueError("need at least 2 samples")

    @property
    def times(self):
        return self.s + self.T * np.arange(self.samples) / (self.samples - 1)

    @property
    def dt_sample(self):
        return self.T / (self.samples - 1)


@dataclass(frozen=True)
class EngineOptions:
    """Knobs for the averaged-cascade solver and the generic engine."""

    steps: int = 2000
    engine: str = "auto"  # "auto" | "closed" | "generic"
    quad: QuadratureConfig = field(default_factory=QuadratureConfig)
    fd: FDConfig = field(default_factory=FDConfig)


def _rk4_path(f, x0, times, substeps):
    """RK4 along explicit output times with ``substeps`` stages per interval."""
    x = np.asarray(x0, dtype=float).copy()
    out = np.empty((len(times),) + x.shape)
    out[0] = x
    for i in range(len(times) - 1):
        t0, t1 = times[i], times[i + 1]
        h = (t1 - t0) / substeps
        t = t0
        for _ in range(substeps):
            k1 = f(t, x)
            k2 = f(t + 0.5 * h, x + 0.5 * h * k1)
            k3 = f(t + 0.5 * h, x + 0.5 * h * k2)
            k4 = f(t + h, x + h * k3)
            x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            t += h
            if not np.all(np.isfinite(x)):
                raise BlowUpError(f"integration blew up at t={t:.6g}", t=t)
        out[i + 1] = x
    return out


def rk4_integrate(f, x0, grid: TimeGrid, substeps_per_sample: int = 1):
    """Classical 4th-order Runge-Kutta, recording states at the grid points."""
    if substeps_per_sample < 1:
        raise ValueError("substeps_per_sample must be >= 1")
    return _rk4_path(f, x0, grid.times, substeps_per_sample)


def reference_substeps(grid: TimeGrid, eps: float, osc_resolution: int = 50) -> int:
    """Substeps per output interval: resolve the 2*pi*eps oscillation period
    with ``osc_resolution`` steps, but never step coarser than T/1000."""
    dt = min(grid.T / 1000.0, TWO_PI * eps / osc_resolution)
    return max(1, math.ceil(grid.dt_sample / dt))


def solve_reference(sys: TwoScaleSystem, eps: float, x0, s: float, grid: TimeGrid,
                    osc_resolution: int = 50, substeps: Optional[int] = None):
    """Integrate the stiff oscillatory system dX/dt = a(t, (t-s)/eps, X) + b(t, X)/eps.

    The step follows :func:`reference_substeps` unless ``substeps`` overrides
    it.  The returned reference is only trustworthy when its error is far
    below the expansion error being measured; raise ``osc_resolution``
    accordingly.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    if not math.isclose(grid.s, s):
        raise ValueError("grid must start at the phase anchor s")
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (sys.d,):
        raise DimensionError(f"x0 must have length {sys.d}")

    def f(t, x):
        return (np.asarray(sys.a(t, (t - s) / eps, x), dtype=float)
                + np.asarray(sys.b(t, x), dtype=float) / eps)

    if substeps is None:
        substeps = reference_substeps(grid, eps, osc_resolution)
    return rk4_integrate(f, x0, grid, substeps)


@dataclass(frozen=True)
class AveragedHierarchy:
    """Time-sampled averaged states Y^0..Y^k on a shared grid."""

    order: int
    grid: TimeGrid
    Y: np.ndarray  # shape (order+1, samples, d)

    def stack_at(self, i) -> StateStack:
        return StateStack(float(self.grid.times[i]), tuple(self.Y[:, i]))


@dataclass(frozen=True)
class TrajectoryBundle:
    """Reference trajectory and per-order reconstructions on one grid."""

    grid: TimeGrid
    eps: float
    reference: np.ndarray            # (samples, d)
    reconstruction: dict             # order -> (samples, d)


def _cascade_rhs(source, kmax, opts: EngineOptions):
    """Rate function for the stacked averaged system of ``source``.

    ``source`` is either a regime (which may route to closed forms) or a bare
    :class:`TwoScaleSystem` (always the generic engine).
    """
    if hasattr(source, "averaged_rates"):
        def f(t, ys_flat):
            ys = ys_flat.reshape(kmax + 1, -1)
            return source.averaged_rates(kmax, t, ys, quad=opts.quad, fd=opts.fd,
                                         engine=opts.engine).reshape(-1)
        return f

    sys = source
    if not isinstance(sys, TwoScaleSystem):
        raise TypeError("source must be a TwoScaleSystem or a Regime")

    def f(t, ys_flat):
        ys = ys_flat.reshape(kmax + 1, -1)
        prof = build_profile(sys, StateStack(t, tuple(ys)), opts.quad, opts.fd)
        return np.stack([prof.abar(j) for j in range(kmax + 1)]).reshape(-1)

    return f


def solve_hierarchy(source, k: int, x0, grid: TimeGrid,
                    opts: Optional[EngineOptions] = None) -> AveragedHierarchy:
    """Integrate the averaged cascade dY^j/dt = abar^j(t, Y^0..Y^j), j <= k.

    The cascade is one stacked ODE of dimension (k+1)*d integrated jointly
    (no interpolation between orders); eps never enters.  Initial conditions
    are Y^0(s) = x0 and Y^j(s) = 0 for j >= 1.
    """
    opts = opts if opts is not None else EngineOptions()
    if k < 0:
        raise UnsupportedOrderError("order must be >= 0")
    x0 = np.asarray(x0, dtype=float)
    d = x0.shape[0]
    y_init = np.zeros((k + 1, d))
    y_init[0] = x0
    f = _cascade_rhs(source, k, opts)
    substeps = max(1, math.ceil(opts.steps / (grid.samples - 1)))
    path = rk4_integrate(f, y_init.reshape(-1), grid, substeps)
    Y = path.reshape(grid.samples, k + 1, d).transpose(1, 0, 2)
    return AveragedHierarchy(order=k, grid=grid, Y=Y)
