"""Electric-field presets for the charged-particle regimes.

A field maps (t, theta, x) to a 3-vector and broadcasts numpy-style over a
leading axis in ``theta`` and/or ``x``.  Analytic spatial/temporal
derivatives are optional; consumers fall back to central differences when a
derivative is missing.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .averaging import FDConfig
from .errors import ConfigError


@dataclass(frozen=True)
class EMField:
    """Prescribed electric field with optional analytic derivatives.

    ``grad`` returns the 3x3 matrix d E_i / d x_j, ``hess`` the 3x3x3 tensor
    d^2 E_i / (d x_j d x_l); time derivatives follow the same shapes.
    """

    value: Callable
    grad: Optional[Callable] = None
    hess: Optional[Callable] = None
    dvalue_dt: Optional[Callable] = None
    dgrad_dt: Optional[Callable] = None
    d2value_dt2: Optional[Callable] = None
    theta_dependent: bool = False
    time_dependent: bool = False
    label: str = ""

    def __call__(self, t, theta, x):
        return self.value(t, theta, x)

    # -- finite-difference fallbacks --------------------------------------

    def gradient(self, t, theta, x, fd: Optional[FDConfig] = None):
        if self.grad is not None:
            return np.asarray(self.grad(t, theta, x), dtype=float)
        fd = fd if fd is not None else FDConfig()
        h = fd.step1(x)
        out = np.empty((3, 3))
        for j in range(3):
            e = np.zeros(3)
            e[j] = h
            out[:, j] = (self.value(t, theta, x + e) - self.value(t, theta, x - e)) / (2 * h)
        return out

    def hessian(self, t, theta, x, fd: Optional[FDConfig] = None):
        if self.hess is not None:
            return np.asarray(self.hess(t, theta, x), dtype=float)
        fd = fd if fd is not None else FDConfig()
        h = fd.step2(x)
        out = np.empty((3, 3, 3))
        for l in range(3):
            e = np.zeros(3)
            e[l] = h
            out[:, :, l] = (self.gradient(t, theta, x + e, fd)
                            - self.gradient(t, theta, x - e, fd)) / (2 * h)
        return out

    def dt(self, t, theta, x, fd: Optional[FDConfig] = None):
        if not self.time_dependent:
            return np.zeros(3)
        if self.dvalue_dt is not None:
            return np.asarray(self.dvalue_dt(t, theta, x), dtype=float)
        fd = fd if fd is not None else FDConfig()
        h = fd.h1 * (1.0 + abs(t))
        return (np.asarray(self.value(t + h, theta, x), dtype=float)
                - np.asarray(self.value(t - h, theta, x), dtype=float)) / (2 * h)

    def grad_dt(self, t, theta, x, fd: Optional[FDConfig] = None):
        if not self.time_dependent:
            return np.zeros((3, 3))
        if self.dgrad_dt is not None:
            return np.asarray(self.dgrad_dt(t, theta, x), dtype=float)
        fd = fd if fd is not None else FDConfig()
        h = fd.h1 * (1.0 + abs(t))
        return (self.gradient(t + h, theta, x, fd) - self.gradient(t - h, theta, x, fd)) / (2 * h)

    def dt2(self, t, theta, x, fd: Optional[FDConfig] = None):
        if not self.time_dependent:
            return np.zeros(3)
        if self.d2value_dt2 is not None:
            return np.asarray(self.d2value_dt2(t, theta, x), dtype=float)
        fd = fd if fd is not None else FDConfig()
        h = fd.step2(t)
        v0 = np.asarray(self.value(t, theta, x), dtype=float)
        return (np.asarray(self.value(t + h, theta, x), dtype=float) - 2 * v0
                + np.asarray(self.value(t - h, theta, x), dtype=float)) / h ** 2


def _vec3(x):
    x = np.asarray(x, dtype=float)
    return x[..., 0], x[..., 1], x[..., 2]


def _stack3(a, b, c):
    return np.stack(np.broadcast_arrays(a, b, c), axis=-1)


def _time_factor(time_mod):
    mu, omega = time_mod

    def fac(t):
        return 1.0 + mu * np.sin(omega * t)

    def dfac(t):
        return mu * omega * np.cos(omega * t)

    def d2fac(t):
        return -mu * omega ** 2 * np.sin(omega * t)

    return fac, dfac, d2fac


def constant_field(value) -> EMField:
    """Uniform field E = value."""
    v = np.asarray(value, dtype=float).reshape(3)

    def val(t, theta, x):
        shape = np.broadcast_shapes(np.shape(theta), np.shape(np.asarray(x)[..., 0]))
        return np.broadcast_to(v, shape + (3,)).copy()

    zero33 = lambda t, theta, x: np.zeros((3, 3))
    zero333 = lambda t, theta, x: np.zeros((3, 3, 3))
    return EMField(value=val, grad=zero33, hess=zero333,
                   label=f"constant{tuple(np.round(v, 6))}")


def spatial_trig_field(amplitude=1.0, time_mod=(0.0, 1.0)) -> EMField:
    """E = A(t) * (sin x2, cos x3, sin x1) with A(t) = amp*(1 + mu*sin(omega*t))."""
    amp = float(amplitude)
    fac, dfac, d2fac = _time_factor(time_mod)
    tdep = time_mod[0] != 0.0

    def val(t, theta, x):
        x1, x2, x3 = _vec3(x)
        return amp * fac(t) * _stack3(np.sin(x2), np.cos(x3), np.sin(x1))

    def base_grad(x):
        x1, x2, x3 = _vec3(x)
        g = np.zeros(np.shape(x1) + (3, 3))
        g[..., 0, 1] = np.cos(x2)
        g[..., 1, 2] = -np.sin(x3)
        g[..., 2, 0] = np.cos(x1)
        return g

    def base_hess(x):
        x1, x2, x3 = _vec3(x)
        h = np.zeros(np.shape(x1) + (3, 3, 3))
        h[..., 0, 1, 1] = -np.sin(x2)
        h[..., 1, 2, 2] = -np.cos(x3)
        h[..., 2, 0, 0] = -np.sin(x1)
        return h

    return EMField(
        value=val,
        grad=lambda t, theta, x: amp * fac(t) * base_grad(x),
        hess=lambda t, theta, x: amp * fac(t) * base_hess(x),
        dvalue_dt=lambda t, theta, x: amp * dfac(t) * _stack3(*_vec3_trig(x)),
        dgrad_dt=lambda t, theta, x: amp * dfac(t) * base_grad(x),
        d2value_dt2=lambda t, theta, x: amp * d2fac(t) * _stack3(*_vec3_trig(x)),
        time_dependent=tdep,
        label=f"spatial_trig(amp={amp})",
    )


def _vec3_trig(x):
    x1, x2, x3 = _vec3(x)
    return np.sin(x2), np.cos(x3), np.sin(x1)


def shear_field(amplitude=1.0) -> EMField:
    """E = amp * (0, sin x1, 0)."""
    amp = float(amplitude)

    def val(t, theta, x):
        x1, _, _ = _vec3(x)
        z = np.zeros_like(x1)
        return amp * _stack3(z, np.sin(x1), z)

    def grad(t, theta, x):
        x1, _, _ = _vec3(x)
        g = np.zeros(np.shape(x1) + (3, 3))
        g[..., 1, 0] = amp * np.cos(x1)
        return g

    def hess(t, theta, x):
        x1, _, _ = _vec3(x)
        h = np.zeros(np.shape(x1) + (3, 3, 3))
        h[..., 1, 0, 0] = -amp * np.sin(x1)
        return h

    return EMField(value=val, grad=grad, hess=hess, label=f"shear(amp={amp})")


def theta_harmonic_field(amplitude=1.0, chi=0.0, harmonic=1, time_mod=(0.0, 1.0)) -> EMField:
    """Resonant field E = A(t) * (0, cos(m*theta), 0) * (1 + chi*sin x3).

    Oscillates at a multiple of the cyclotron frequency; ``chi`` adds a
    smooth spatial modulation.
    """
    amp = float(amplitude)
    chi = float(chi)
    m = int(harmonic)
    fac, dfac, d2fac = _time_factor(time_mod)
    tdep = time_mod[0] != 0.0

    def envelope(x):
        _, _, x3 = _vec3(x)
        return 1.0 + chi * np.sin(x3)

    def val(t, theta, x):
        _, _, x3 = _vec3(x)
        c = np.cos(m * np.asarray(theta, dtype=float))
        z = np.zeros(np.broadcast_shapes(np.shape(c), np.shape(x3)))
        return amp * fac(t) * _stack3(z, c * envelope(x), z)

    def grad(t, theta, x):
        _, _, x3 = _vec3(x)
        c = np.cos(m * np.asarray(theta, dtype=float))
        shape = np.broadcast_shapes(np.shape(c), np.shape(x3))
        g = np.zeros(shape + (3, 3))
        g[..., 1, 2] = amp * fac(t) * c * chi * np.cos(x3)
        return g

    def hess(t, theta, x):
        _, _, x3 = _vec3(x)
        c = np.cos(m * np.asarray(theta, dtype=float))
        shape = np.broadcast_shapes(np.shape(c), np.shape(x3))
        h = np.zeros(shape + (3, 3, 3))
        h[..., 1, 2, 2] = -amp * fac(t) * c * chi * np.sin(x3)
        return h

    def dval(t, theta, x):
        _, _, x3 = _vec3(x)
        c = np.cos(m * np.asarray(theta, dtype=float))
        z = np.zeros(np.broadcast_shapes(np.shape(c), np.shape(x3)))
        return amp * dfac(t) * _stack3(z, c * envelope(x), z)

    def dgrad(t, theta, x):
        _, _, x3 = _vec3(x)
        c = np.cos(m * np.asarray(theta, dtype=float))
        shape = np.broadcast_shapes(np.shape(c), np.shape(x3))
        g = np.zeros(shape + (3, 3))
        g[..., 1, 2] = amp * dfac(t) * c * chi * np.cos(x3)
        return g

    def d2val(t, theta, x):
        _, _, x3 = _vec3(x)
        c = np.cos(m * np.asarray(theta, dtype=float))
        z = np.zeros(np.broadcast_shapes(np.shape(c), np.shape(x3)))
        return amp * d2fac(t) * _stack3(z, c * envelope(x), z)

    return EMField(value=val, grad=grad, hess=hess, dvalue_dt=dval,
                   dgrad_dt=dgrad, d2value_dt2=d2val,
                   theta_dependent=True, time_dependent=tdep,
                   label=f"theta_harmonic(amp={amp}, chi={chi}, m={m})")


#: CLI-facing preset registry: name -> (constructor, allowed numeric params)
PRESETS = {
    "constant": (constant_field, {"value"}),
    "spatial_trig": (spatial_trig_field, {"amplitude", "time_mod"}),
    "shear": (shear_field, {"amplitude"}),
    "theta_harmonic": (theta_harmonic_field, {"amplitude", "chi", "harmonic", "time_mod"}),
}


def field_from_spec(spec: dict) -> EMField:
    """Build a preset field from a config mapping like {"preset": name, ...}."""
    if not isinstance(spec, dict):
        raise ConfigError("field spec must be a mapping")
    spec = dict(spec)
    name = spec.pop("preset", None)
    if name not in PRESETS:
        raise ConfigError(f"unknown field preset '{name}'; choose from {sorted(PRESETS)}")
    ctor, allowed = PRESETS[name]
    unknown = set(spec) - allowed
    if unknown:
        raise ConfigError(f"unknown key '{sorted(unknown)[0]}' in field spec for preset '{name}'")
    if "time_mod" in spec:
        tm = spec["time_mod"]
        if not (isinstance(tm, (list, tuple)) and len(tm) == 2):
            raise ConfigError("field time_mod must be a pair [mu, omega]")
        spec["time_mod"] = (float(tm[0]), float(tm[1]))
    try:
        return ctor(**spec)
    except TypeError as exc:
        raise ConfigError(f"invalid field parameters for preset '{name}': {exc}") from exc
