import numpy as np
import pytest

from twoscale import (EngineOptions, PeriodicFlow, TimeGrid, TwoScaleSystem,
                      rk4_integrate, rotation_R, solve_hierarchy, solve_reference,
                      constant_field, theta_harmonic_field)
from twoscale.errors import BlowUpError
from twoscale.regimes import make_regime

from conftest import gc_regime


def rotation3_system():
    """d = 3 system with a = 0 and b(x) = x cross e1 (pure gyration)."""
    e1 = np.array([1.0, 0.0, 0.0])

    def Z(t, th, z):
        return np.einsum("...ij,...j->...i", rotation_R(th), z)

    flow = PeriodicFlow(
        Z=Z,
        jac_z=lambda t, th, z: rotation_R(th),
        dZ_dt=lambda t, th, z: np.zeros(np.shape(np.asarray(th, dtype=float)) + (3,)),
        hess_z=lambda t, th, z: np.zeros((3, 3, 3)),
        vectorized=True)
    return TwoScaleSystem(
        d=3,
        a=lambda t, th, x: np.zeros(np.broadcast_shapes(
            np.shape(np.asarray(th, dtype=float)), np.shape(np.asarray(x)[..., 0])) + (3,)),
        b=lambda t, x: np.cross(x, e1),
        flow=flow, m=3, linear_flow=True, vectorized=True, label="gyration")


class TestRK4:
    def test_zero_field_constant(self):
        grid = TimeGrid(0.0, 1.0, samples=11)
        path = rk4_integrate(lambda t, x: np.zeros(3), np.array([1.0, 2.0, 3.0]), grid, 5)
        assert np.allclose(path, [1.0, 2.0, 3.0])

    def test_exponential(self):
        grid = TimeGrid(0.0, 1.0, samples=2)
        path = rk4_integrate(lambda t, x: x, np.array([1.0]), grid, 1000)
        assert abs(path[-1, 0] - np.e) < 1e-8

    def test_fourth_order(self):
        grid = TimeGrid(0.0, 1.0, samples=2)
        errs = []
        for n in (50, 100):
            path = rk4_integrate(lambda t, x: x, np.array([1.0]), grid, n)
            errs.append(abs(path[-1, 0] - np.e))
        assert 12 < errs[0] / errs[1] < 20

    def test_blow_up_reports_time(self):
        grid = TimeGrid(0.0, 10.0, samples=21)
        with pytest.raises(BlowUpError) as info:
            rk4_integrate(lambda t, x: x ** 2, np.array([1.0]), grid, 50)
        assert info.value.t is not None and 0.0 < info.value.t <= 10.0

    def test_substep_validation(self):
        with pytest.raises(ValueError):
            rk4_integrate(lambda t, x: x, np.array([1.0]), TimeGrid(0, 1, 2), 0)


class TestTimeGrid:
    def test_times(self):
        grid = TimeGrid(1.0, 2.0, samples=5)
        assert np.allclose(grid.times, [1.0, 1.5, 2.0, 2.5, 3.0])

    def test_validation(self):
        with pytest.raises(ValueError):
            TimeGrid(0.0, -1.0)
        with pytest.raises(ValueError):
            TimeGrid(0.0, 1.0, samples=1)


class TestSolveReference:
    def test_exact_gyration(self):
        sys = rotation3_system()
        eps = 0.05
        T = eps * np.pi / 2
        grid = TimeGrid(0.0, T, samples=3)
        path = solve_reference(sys, eps, np.array([0.0, 1.0, 0.0]), 0.0, grid,
                               osc_resolution=200)
        assert np.allclose(path[-1], [0.0, 0.0, -1.0], atol=1e-9)

    def test_slow_rotation_period(self):
        sys = rotation3_system()
        eps = 10.0
        grid = TimeGrid(0.0, 2 * np.pi * eps, samples=5)
        path = solve_reference(sys, eps, np.array([0.0, 1.0, 0.0]), 0.0, grid,
                               osc_resolution=500)
        assert np.allclose(path[-1], path[0], atol=1e-7)

    def test_polynomial_exact(self):
        # a constant, b = 0: RK4 reproduces the line exactly
        regime = make_regime("gc_const", constant_field([0.0, 0.0, 0.0]))
        x0 = np.array([0.1, 0.2, 0.3, 0.0, 0.0, 0.0])
        grid = TimeGrid(0.0, 1.0, samples=5)
        path = solve_reference(regime.system, 0.5, x0, 0.0, grid, osc_resolution=16)
        assert np.allclose(path[-1], x0, atol=1e-13)

    def test_step_halving_richardson(self):
        # resolutions high enough that the oscillation-resolved branch of the
        # step rule is active, so doubling them actually halves the step
        regime = gc_regime()
        x0 = np.array([0.0, 0.0, 0.0, 1.0, 0.5, 0.0])
        grid = TimeGrid(0.0, 1.0, samples=3)
        ends = [solve_reference(regime.system, 0.05, x0, 0.0, grid, osc_resolution=r)[-1]
                for r in (400, 800, 1600)]
        d1 = np.linalg.norm(ends[0] - ends[1])
        d2 = np.linalg.norm(ends[1] - ends[2])
        assert d2 < d1 / 10.0

    def test_eps_validation(self):
        sys = rotation3_system()
        with pytest.raises(ValueError):
            solve_reference(sys, 0.0, np.zeros(3), 0.0, TimeGrid(0, 1, 2))


class TestSolveHierarchy:
    def test_gc_free_streaming(self):
        regime = make_regime("gc_const", constant_field([0.0, 0.0, 0.0]))
        x0 = np.array([0.0, 0.0, 0.0, 1.0, 2.0, 3.0])
        grid = TimeGrid(0.0, 1.0, samples=5)
        hier = solve_hierarchy(regime, 0, x0, grid)
        t = grid.times[:, None]
        assert np.allclose(hier.Y[0][:, :3], t * np.array([1.0, 0.0, 0.0]), atol=1e-12)
        assert np.allclose(hier.Y[0][:, 3:], [1.0, 2.0, 3.0], atol=1e-12)

    def test_zero_rhs_zero_correction(self):
        regime = make_regime("gc_const", constant_field([0.0, 0.0, 0.0]))
        x0 = np.array([0.2, -0.1, 0.4, 1.0, 0.0, 0.5])
        grid = TimeGrid(0.0, 1.0, samples=5)
        hier = solve_hierarchy(regime, 1, x0, grid)
        assert np.allclose(hier.Y[1], 0.0, atol=1e-14)

    def test_irs_secular_drift(self):
        regime = make_regime("irs_const", theta_harmonic_field(1.0, chi=0.0))
        x0 = np.zeros(6)
        grid = TimeGrid(0.0, 1.0, samples=5)
        hier = solve_hierarchy(regime, 0, x0, grid)
        t = grid.times[:, None]
        assert np.allclose(hier.Y[0][:, 3:], t * np.array([0.0, 0.5, 0.0]), atol=1e-10)
        assert np.allclose(hier.Y[0][:, :3], 0.0, atol=1e-10)

    def test_initial_conditions(self, rng):
        regime = gc_regime()
        x0 = regime.sample_state(rng)
        hier = solve_hierarchy(regime, 2, x0, TimeGrid(0.0, 0.2, samples=3))
        assert np.array_equal(hier.Y[0][0], x0)
        assert np.all(hier.Y[1][0] == 0.0) and np.all(hier.Y[2][0] == 0.0)

    def test_eps_independent_bitwise(self, rng):
        regime = gc_regime()
        x0 = regime.sample_state(rng)
        grid = TimeGrid(0.0, 0.3, samples=4)
        a = solve_hierarchy(regime, 1, x0, grid)
        b = solve_hierarchy(regime, 1, x0, grid)
        assert np.array_equal(a.Y, b.Y)

    def test_generic_engine_matches_closed(self, rng):
        regime = gc_regime()
        x0 = regime.sample_state(rng)
        grid = TimeGrid(0.0, 0.2, samples=3)
        opts_closed = EngineOptions(steps=100, engine="closed")
        opts_generic = EngineOptions(steps=100, engine="generic")
        a = solve_hierarchy(regime, 1, x0, grid, opts_closed)
        b = solve_hierarchy(regime, 1, x0, grid, opts_generic)
        assert np.max(np.abs(a.Y - b.Y)) < 1e-7
