import numpy as np
import pytest

from twoscale import (EMField, PeriodicFlow, TwoScaleSystem, constant_field,
                      make_regime, shear_field, spatial_trig_field,
                      theta_harmonic_field)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def identity_flow(d):
    """Flow of b = 0: Z(t, theta, z) = z."""
    return PeriodicFlow(
        Z=lambda t, th, z: np.broadcast_to(
            z, np.broadcast_shapes(np.shape(np.asarray(th, dtype=float)),
                                   np.shape(np.asarray(z)[..., 0])) + (d,)).copy(),
        jac_z=lambda t, th, z: np.broadcast_to(
            np.eye(d), np.shape(np.asarray(th, dtype=float)) + (d, d)).copy(),
        dZ_dt=lambda t, th, z: np.zeros(np.shape(np.asarray(th, dtype=float)) + (d,)),
        hess_z=lambda t, th, z: np.zeros((d, d, d)),
        vectorized=True,
    )


def trivial_system(a, d=2, linear_flow=True):
    """System with b = 0 (identity carrier flow)."""
    return TwoScaleSystem(d=d, a=a, b=lambda t, x: np.zeros(d),
                          flow=identity_flow(d), m=3, linear_flow=linear_flow,
                          vectorized=True, label="identity-flow")


def gc_regime(amplitude=1.0, time_mod=(0.0, 1.0)):
    return make_regime("gc_const", spatial_trig_field(amplitude, time_mod=time_mod))


def irs_regime(amplitude=1.0, chi=0.2, time_mod=(0.0, 1.0)):
    return make_regime("irs_const", theta_harmonic_field(amplitude, chi=chi,
                                                         time_mod=time_mod))


def flr_regime(amplitude=1.0):
    return make_regime("flr_const", shear_field(amplitude))


def variable_regime(E=(0.1, 0.15, 0.2)):
    return make_regime("gc_variable", constant_field(E))


def variable_sampler(regime):
    def draw(r):
        return r.uniform(0.0, 1.0), r.uniform(0.0, 2 * np.pi), regime.sample_state(r)
    return draw
