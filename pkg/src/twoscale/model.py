"""Core domain types and the rotation/projection/deviation primitives.

Everything here is a pure function over immutable inputs; instances are safe
to share across threads.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import DimensionError, FlowError

TWO_PI = 2.0 * np.pi

#: A phase-space state is a plain 1-D float array of length ``system.d``.
PhaseState = np.ndarray


def as_state(x, d=None) -> np.ndarray:
    """Coerce ``x`` to a finite 1-D float array, optionally of length ``d``."""
    arr = np.asarray(x, dtype=float)
    if arr.ndim != 1:
        raise DimensionError(f"state must be 1-D, got shape {arr.shape}")
    if d is not None and arr.shape[0] != d:
        raise DimensionError(f"state has length {arr.shape[0]}, expected {d}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("state contains non-finite entries")
    return arr


def reduce_phase(theta):
    """Reduce a phase to [0, 2*pi)."""
    return np.mod(theta, TWO_PI)


def rotation_R(theta):
    """Rotation of angle -theta about e1.

    Rows are (1,0,0), (0,cos,sin), (0,-sin,cos).  Broadcasts over ``theta``:
    a scalar gives a (3,3) matrix, an array of shape S gives S+(3,3).
    """
    th = np.asarray(theta, dtype=float)
    c, s = np.cos(th), np.sin(th)
    out = np.zeros(th.shape + (3, 3))
    out[..., 0, 0] = 1.0
    out[..., 1, 1] = c
    out[..., 1, 2] = s
    out[..., 2, 1] = -s
    out[..., 2, 2] = c
    return out


def rotation_calR(theta):
    """The accumulated-rotation matrix: rows (0,0,0), (0,sin,1-cos), (0,cos-1,sin).

    Satisfies  integral_0^theta R(sigma) dsigma = theta*P + calR(theta)  and
    calR(theta) = -R(pi/2 + theta) + R(pi/2).  Broadcasts like :func:`rotation_R`.
    """
    th = np.asarray(theta, dtype=float)
    c, s = np.cos(th), np.sin(th)
    out = np.zeros(th.shape + (3, 3))
    out[..., 1, 1] = s
    out[..., 1, 2] = 1.0 - c
    out[..., 2, 1] = c - 1.0
    out[..., 2, 2] = s
    return out


def projector_P():
    """Orthogonal projector onto the strong-field direction e1: diag(1,0,0)."""
    return np.diag([1.0, 0.0, 0.0])


class PeriodicDeviation:
    """Deviation integral of samples on a uniform periodic grid over [0, 2*pi].

    Given samples ``f_j = f(2*pi*j/N)``, represents

        D(theta) = int_0^theta f dsigma - (theta/2*pi) * int_0^{2*pi} f dsigma
                 = int_0^theta (f - mean f) dsigma.

    The full-period integral is the periodic trapezoid rule (the plain sample
    mean).  The partial integral is the antiderivative of the zero-mean part
    of the trigonometric interpolant, so D is smooth, exactly 2*pi-periodic,
    and vanishes at multiples of 2*pi.
    """

    def __init__(self, samples):
        samples = np.asarray(samples, dtype=float)
        if samples.ndim < 1 or samples.shape[0] < 2:
            raise ValueError("need at least 2 samples along the leading axis")
        self.nodes = samples.shape[0]
        self.shape = samples.shape[1:]
        self.mean = samples.mean(axis=0)
        coeffs = np.fft.rfft(samples, axis=0)
        n = np.arange(coeffs.shape[0]).reshape((-1,) + (1,) * (samples.ndim - 1))
        with np.errstate(divide="ignore", invalid="ignore"):
            self._anti = np.where(n > 0, coeffs / (1j * n), 0.0)
        # weights for evaluating the rfft half-spectrum off the grid
        w = np.full(coeffs.shape[0], 2.0)
        w[0] = 1.0
        if self.nodes % 2 == 0:
            w[-1] = 1.0
        self._weights = w.reshape(n.shape)
        self._at_zero = (self._weights * self._anti.real).sum(axis=0) / self.nodes

    def grid_values(self):
        """D evaluated at the sampling nodes, shape (nodes,) + value shape."""
        g = np.fft.irfft(self._anti, n=self.nodes, axis=0)
        return g - g[0]

    def __call__(self, theta):
        """Evaluate D at a scalar phase in [0, 2*pi] (ends map to zero)."""
        n = np.arange(self._anti.shape[0]).reshape(self._weights.shape)
        phase = np.exp(1j * n * float(theta))
        val = (self._weights * (self._anti * phase).real).sum(axis=0) / self.nodes
        return val - self._at_zero

    def derivative(self, theta):
        """d/dtheta of D, i.e. the zero-mean trigonometric interpolant itself."""
        n = np.arange(self._anti.shape[0]).reshape(self._weights.shape)
        phase = np.exp(1j * n * float(theta))
        val = (self._weights * (self._anti * 1j * n * phase).real).sum(axis=0)
        return val / self.nodes


def osc_deviation(f, theta, nodes=256):
    """Oscillatory deviation (int_0^theta - theta/2pi int_0^2pi) of f(sigma).

    ``f`` maps a phase in [0, 2*pi) to a vector or matrix; both integrals are
    discretized on a uniform grid of ``nodes`` points (periodic trapezoid for
    the full-period term, spectral antiderivative for the partial term).
    """
    theta = float(theta)
    if not np.isfinite(theta) or theta < 0.0 or theta > TWO_PI:
        raise ValueError(f"theta must lie in [0, 2*pi], got {theta}; reduce it first")
    if nodes < 8:
        raise ValueError("nodes must be >= 8")
    sigmas = TWO_PI * np.arange(nodes) / nodes
    samples = np.stack([np.asarray(f(s), dtype=float) for s in sigmas])
    return PeriodicDeviation(samples)(theta)


@dataclass(frozen=True)
class PeriodicFlow:
    """The 2*pi-periodic carrier flow Z of the fast oscillation.

    ``Z(t, theta, z)`` solves dZ/dtheta = b(t, Z) with Z(t, 0, z) = z.
    ``jac_z`` and ``dZ_dt`` are analytic and mandatory; ``hess_z`` (the
    d x d x d tensor of second z-derivatives) is optional and replaced by
    central finite differences of ``jac_z`` when absent.

    When ``vectorized`` is true the callables broadcast numpy-style over a
    leading axis in ``theta`` and/or ``z``.
    """

    Z: Callable
    jac_z: Callable
    dZ_dt: Callable
    hess_z: Optional[Callable] = None
    vectorized: bool = False


@dataclass(frozen=True)
class TwoScaleSystem:
    """An oscillatory singularly perturbed system dX/dt = a(t, theta, X) + b(t, X)/eps.

    ``a`` is 2*pi-periodic in theta, ``flow`` carries the periodic solution of
    dZ/dtheta = b(t, Z).  ``m`` bounds the usable expansion order.
    ``linear_flow`` asserts that b is linear in the state and t-independent,
    which is the precondition for the order-2 averaging coefficients.
    ``alpha0_jac``, when given, is the analytic state-Jacobian of the
    Van der Pol-transformed field and replaces finite differences.
    """

    d: int
    a: Callable
    b: Callable
    flow: PeriodicFlow
    m: int = 2
    linear_flow: bool = False
    vectorized: bool = False
    alpha0_jac: Optional[Callable] = None
    label: str = ""


def _default_sampler(rng, d):
    t = rng.uniform(0.0, 1.0)
    theta = rng.uniform(0.0, TWO_PI)
    z = rng.uniform(-1.0, 1.0, size=d)
    return t, theta, z


def validate_system(sys: TwoScaleSystem, rng=None, n_samples=50, rel_tol=1e-5, sampler=None):
    """Sampled checks of the structural invariants of a system.

    Verifies, at ``n_samples`` random points: Z(t,0,z) = z, jac_z(t,0,z) = I,
    2*pi-periodicity of Z and of a, the flow ODE dZ/dtheta = b(t, Z) via
    central differences, and agreement of jac_z/dZ_dt with finite differences
    of Z.  Raises :class:`FlowError` on the first violation and returns the
    worst relative deviations seen otherwise.
    """
    rng = np.random.default_rng(rng)
    flow = sys.flow
    worst = {"flow_ode": 0.0, "jac_fd": 0.0, "dZdt_fd": 0.0, "periodicity": 0.0,
             "a_periodic": 0.0, "anchor": 0.0}
    h = 1e-6
    draw = sampler if sampler is not None else (lambda r: _default_sampler(r, sys.d))
    for _ in range(n_samples):
        t, theta, z = draw(rng)
        scale = 1.0 + float(np.max(np.abs(z)))

        anchor = np.max(np.abs(flow.Z(t, 0.0, z) - z)) / scale
        jac0 = np.max(np.abs(flow.jac_z(t, 0.0, z) - np.eye(sys.d)))
        worst["anchor"] = max(worst["anchor"], anchor, jac0)

        per = np.max(np.abs(flow.Z(t, theta + TWO_PI, z) - flow.Z(t, theta, z)))
        worst["periodicity"] = max(worst["periodicity"], per / scale)

        dz_fd = (flow.Z(t, theta + h, z) - flow.Z(t, theta - h, z)) / (2 * h)
        bz = sys.b(t, flow.Z(t, theta, z))
        den = max(float(np.max(np.abs(bz))), 1.0)
        worst["flow_ode"] = max(worst["flow_ode"], np.max(np.abs(dz_fd - bz)) / den)

        jac = flow.jac_z(t, theta, z)
        jac_fd = np.empty_like(jac)
        hz = h * scale
        for j in range(sys.d):
            e = np.zeros(sys.d)
            e[j] = hz
            jac_fd[:, j] = (flow.Z(t, theta, z + e) - flow.Z(t, theta, z - e)) / (2 * hz)
        worst["jac_fd"] = max(worst["jac_fd"],
                              np.max(np.abs(jac - jac_fd)) / max(float(np.max(np.abs(jac))), 1.0))

        ht = h * (1.0 + abs(t))
        dt_fd = (flow.Z(t + ht, theta, z) - flow.Z(t - ht, theta, z)) / (2 * ht)
        dt_an = flow.dZ_dt(t, theta, z)
        worst["dZdt_fd"] = max(worst["dZdt_fd"],
                               np.max(np.abs(dt_fd - dt_an)) / max(float(np.max(np.abs(dt_an))), 1.0))

        x = flow.Z(t, theta, z)
        ap = np.max(np.abs(np.asarray(sys.a(t, theta + TWO_PI, x)) - np.asarray(sys.a(t, theta, x))))
        worst["a_periodic"] = max(worst["a_periodic"], ap / max(float(np.max(np.abs(sys.a(t, theta, x)))), 1.0))

    for name, value in worst.items():
        if value > rel_tol:
            raise FlowError(f"system invariant '{name}' violated: deviation {value:.3e} > {rel_tol:.1e}")
    return worst
