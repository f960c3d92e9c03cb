import numpy as np
import pytest

from twoscale import (EngineOptions, StateStack, TimeGrid, expansion_sum,
                      reconstruct_X, residual_extract, rotation_R,
                      rotation_calR, solve_hierarchy, solve_reference,
                      transported_density, constant_field)
from twoscale.errors import UnsupportedOrderError
from twoscale.model import TWO_PI
from twoscale.regimes import make_regime

from conftest import flr_regime, gc_regime, irs_regime, variable_regime


class TestReconstructX:
    def test_gc_order0(self, rng):
        regime = gc_regime()
        stack = regime.sample_stack(rng, 0)
        theta = rng.uniform(0, TWO_PI)
        got = reconstruct_X(regime.system, 0, stack.t, theta, stack)
        want = np.concatenate([stack.y(0)[:3], rotation_R(theta) @ stack.y(0)[3:]])
        assert np.allclose(got, want, atol=1e-13)

    def test_gc_order1(self, rng):
        regime = gc_regime()
        stack = regime.sample_stack(rng, 1)
        theta = rng.uniform(0, TWO_PI)
        got = reconstruct_X(regime.system, 1, stack.t, theta, stack)
        E = np.asarray(regime.field.value(stack.t, 0.0, stack.y(0)[:3]), dtype=float)
        want = np.concatenate([
            stack.y(1)[:3] + rotation_calR(theta) @ stack.y(0)[3:],
            rotation_R(theta) @ stack.y(1)[3:] + rotation_calR(theta) @ E])
        assert np.allclose(got, want, atol=1e-9)

    def test_zero_phase_returns_correction(self, rng):
        # at theta = 0 the flow Jacobian is the identity and deviations vanish
        regime = gc_regime()
        stack = regime.sample_stack(rng, 1)
        got = reconstruct_X(regime.system, 1, stack.t, 0.0, stack)
        assert np.allclose(got, stack.y(1), atol=1e-12)

    def test_order_cap(self, rng):
        regime = gc_regime()
        stack = regime.sample_stack(rng, 2)
        with pytest.raises(UnsupportedOrderError):
            reconstruct_X(regime.system, 3, stack.t, 0.1, stack)

    def test_periodic_in_theta(self, rng):
        regime = gc_regime()
        stack = regime.sample_stack(rng, 2)
        for k in range(3):
            a = reconstruct_X(regime.system, k, stack.t, 1.2, stack)
            b = reconstruct_X(regime.system, k, stack.t, 1.2 + TWO_PI, stack)
            assert np.allclose(a, b, atol=1e-12)

    def test_cross_representation_gc(self, rng):
        # generic engine vs closed forms at random states, all orders
        regime = gc_regime()
        for _ in range(100):
            k = rng.integers(0, 3)
            stack = regime.sample_stack(rng, k)
            theta = rng.uniform(0, TWO_PI)
            gen = reconstruct_X(regime.system, k, stack.t, theta, stack)
            closed = regime.reconstruct(k, stack.t, theta, np.stack(stack.ys))
            assert np.max(np.abs(gen - closed)) < 1e-7


class TestExpansionSum:
    def test_single_term(self, rng):
        regime = gc_regime()
        stack = regime.sample_stack(rng, 0)
        t, s, eps = stack.t, stack.t - 0.3, 0.05
        got = expansion_sum(regime.system, 0, eps, t, s, stack)
        theta = (t - s) / eps
        want = reconstruct_X(regime.system, 0, t, theta, stack)
        assert np.allclose(got, want, atol=1e-13)

    def test_telescoping(self, rng):
        regime = gc_regime()
        stack = regime.sample_stack(rng, 2)
        t, s, eps = stack.t, stack.t - 0.41, 2 ** -4
        for k in (1, 2):
            diff = (expansion_sum(regime.system, k, eps, t, s, stack)
                    - expansion_sum(regime.system, k - 1, eps, t, s, stack))
            xk = reconstruct_X(regime.system, k, t, (t - s) / eps, stack)
            assert np.allclose(diff, eps ** k * xk, atol=1e-12)

    def test_initial_condition_all_regimes(self, rng):
        for regime in (gc_regime(), irs_regime(), flr_regime(), variable_regime()):
            kmax = min(regime.max_order, 2)
            x0 = regime.sample_state(rng)
            ys = [x0] + [np.zeros(6)] * kmax
            stack = StateStack(0.0, tuple(ys))
            for k in range(kmax + 1):
                got = expansion_sum(regime.system, k, 0.05, 0.0, 0.0, stack)
                assert np.allclose(got, x0, atol=1e-12), (regime.kind, k)


class TestResidualExtract:
    def test_order_zero_is_reference(self, rng):
        ref = rng.normal(size=(7, 6))
        got = residual_extract(ref, [], 0, 0.25)
        assert np.array_equal(got, ref)

    def test_exact_match_gives_zero(self, rng):
        ref = rng.normal(size=(7, 6))
        got = residual_extract(ref, [ref], 1, 0.25)
        assert np.allclose(got, 0.0)

    def test_synthetic_correction_recovered(self, rng):
        x0 = rng.normal(size=(7, 6))
        g = rng.normal(size=(7, 6))
        eps = 0.125
        got = residual_extract(x0 + eps * g, [x0], 1, eps)
        assert np.allclose(got, g, atol=1e-12)

    def test_eps_zero_rejected(self, rng):
        with pytest.raises(ValueError):
            residual_extract(rng.normal(size=(3, 2)), [], 1, 0.0)

    def test_residual_bounded_as_eps_shrinks(self, rng):
        # the rescaled order-1 residual stays bounded while eps halves
        regime = gc_regime()
        x0 = np.array([0.0, 0.0, 0.0, 1.0, 0.5, 0.0])
        grid = TimeGrid(0.0, 0.5, samples=60)
        hier = solve_hierarchy(regime, 1, x0, grid, EngineOptions(steps=400))
        sups = []
        for eps in (2 ** -4, 2 ** -5, 2 ** -6):
            ref = solve_reference(regime.system, eps, x0, 0.0, grid, osc_resolution=300)
            profs = []
            for i in range(2):
                xi = np.empty_like(ref)
                for m in range(grid.samples):
                    stack = hier.stack_at(m)
                    xi[m] = reconstruct_X(regime.system, i, stack.t,
                                          (grid.times[m]) / eps, stack)
                profs.append(xi)
            res = residual_extract(ref, profs, 1, eps)
            sups.append(np.max(np.linalg.norm(res, axis=1)))
        assert max(sups) < 3.0 * sups[0] + 1.0


class TestTransportedDensity:
    def test_identity_at_initial_time(self, rng):
        regime = gc_regime()
        x = regime.sample_state(rng)
        u0 = lambda state: float(state[0] + 2 * state[4])
        got = transported_density(u0, regime, 0, 0.05, 0.0, 0.0, x)
        assert got == pytest.approx(u0(x))

    def test_free_streaming_exact(self, rng):
        regime = make_regime("gc_const", constant_field([0.0, 0.0, 0.0]))
        coeffs = rng.normal(size=3)
        u0 = lambda state: float(coeffs @ state[:3])
        for _ in range(20):
            x = regime.sample_state(rng)
            t = rng.uniform(0.2, 1.5)
            eps = rng.uniform(0.01, 0.2)
            got = transported_density(u0, regime, 0, eps, t, 0.0, x)
            exact = float(coeffs @ (x[:3] - t * np.array([x[3], 0.0, 0.0])))
            assert abs(got - exact) < 1e-8

    def test_constant_density_invariant(self, rng):
        regime = gc_regime()
        x = regime.sample_state(rng)
        for k in (0, 1):
            got = transported_density(lambda s: 7.5, regime, k, 0.08, 0.9, 0.0, x)
            assert got == pytest.approx(7.5)
