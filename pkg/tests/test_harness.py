import numpy as np
import pytest

from twoscale import (constant_field, crosscheck, fit_slope, make_regime,
                      run_convergence, sup_error)
from twoscale.integrate import EngineOptions

from conftest import gc_regime, irs_regime, variable_regime


class TestSupError:
    def test_identical(self, rng):
        a = rng.normal(size=(9, 6))
        assert sup_error(a, a) == 0.0

    def test_constant_offset(self, rng):
        a = rng.normal(size=(9, 6))
        v = rng.normal(size=6)
        assert sup_error(a, a + v) == pytest.approx(np.linalg.norm(v))

    def test_single_spike(self, rng):
        a = rng.normal(size=(9, 3))
        b = a.copy()
        b[4, 0] += 3.0
        assert sup_error(a, b) == pytest.approx(3.0)

    def test_grid_mismatch(self, rng):
        with pytest.raises(ValueError):
            sup_error(rng.normal(size=(9, 3)), rng.normal(size=(8, 3)))


class TestFitSlope:
    def test_linear_power_law(self):
        eps = np.array([0.5, 0.25, 0.125, 0.0625, 0.03125])
        assert fit_slope(eps, 7 * eps) == pytest.approx(1.0, abs=1e-10)

    def test_quadratic_power_law(self):
        eps = np.array([0.5, 0.25, 0.125, 0.0625])
        assert fit_slope(eps, 3 * eps ** 2) == pytest.approx(2.0, abs=1e-10)

    def test_perturbed_quadratic(self):
        eps = 2.0 ** -np.arange(3, 9)
        err = eps ** 2 * (1 + 0.1 * np.sin(1 / eps))
        assert abs(fit_slope(eps, err) - 2.0) < 0.15

    def test_validation(self):
        with pytest.raises(ValueError):
            fit_slope([0.5, 0.25, 0.125], [1, 2, 3])
        with pytest.raises(ValueError):
            fit_slope([0.5, 0.25, 0.125, -0.1], [1, 1, 1, 1])
        with pytest.raises(ValueError):
            fit_slope([0.5, 0.25, 0.125, 0.0625], [1, 1, 0, 1])


class TestCrosscheck:
    def test_deterministic(self):
        regime = irs_regime()
        a = crosscheck(regime, 1, n_samples=8, seed=123)
        b = crosscheck(regime, 1, n_samples=8, seed=123)
        da, db = a.to_dict(), b.to_dict()
        da.pop("runtime_seconds")
        db.pop("runtime_seconds")
        assert da == db

    def test_gc_order0_tight(self):
        report = crosscheck(gc_regime(), 0, n_samples=25, seed=1)
        assert report.max_abs_rhs < 1e-9
        assert report.max_abs_rec < 1e-9

    def test_variable_order1_special_case(self):
        report = crosscheck(variable_regime(), 1, n_samples=10, seed=2)
        assert report.max_rel_rhs < 1e-5
        assert report.max_rel_rec < 1e-5

    def test_order_beyond_max(self):
        with pytest.raises(Exception):
            crosscheck(variable_regime(), 2, n_samples=2, seed=0)


class TestRunConvergence:
    def test_exact_case_flagged_below_floor(self):
        # zero field: the order-1 partial sum carries the whole Larmor circle
        # and reproduces the reference exactly, so every order-1 point sits at
        # the integrator floor and no slope is fitted; order 0 still sees the
        # O(eps) gyroradius
        regime = make_regime("gc_const", constant_field([0.0, 0.0, 0.0]))
        x0 = np.array([0.1, 0.0, 0.2, 1.0, 0.5, 0.0])
        rep = run_convergence(regime, x0, 0.0, 0.5, [2**-3, 2**-4, 2**-5, 2**-6],
                              orders=[0, 1], opts=EngineOptions(steps=200),
                              samples=40, osc_resolution=50)
        assert all(rep.floor_flags[(1, e)] for e in rep.eps_list)
        assert rep.slopes[1] is None
        assert not any(rep.floor_flags[(0, e)] for e in rep.eps_list)
        assert rep.slopes[0] == pytest.approx(1.0, abs=0.1)

    def test_small_sweep_monotone(self):
        regime = irs_regime()
        x0 = np.array([0.0, 0.0, 0.0, 1.0, 0.5, 0.0])
        rep = run_convergence(regime, x0, 0.0, 0.5, [2**-3, 2**-4, 2**-5, 2**-6],
                              orders=[0, 1], opts=EngineOptions(steps=400),
                              samples=60, osc_resolution=100)
        for k in (0, 1):
            errs = [rep.errors[(k, e)] for e in rep.eps_list]
            drops = [a > b for a, b in zip(errs, errs[1:])]
            assert sum(drops) >= len(drops) - 1, errs
        # error stacking at the smallest eps
        e_min = rep.eps_list[-1]
        assert rep.errors[(1, e_min)] <= rep.errors[(0, e_min)]
        assert rep.slopes[0] is not None and 0.5 < rep.slopes[0] < 1.5

    def test_report_determinism(self):
        regime = irs_regime()
        x0 = np.array([0.0, 0.0, 0.0, 1.0, 0.0, 0.0])
        kw = dict(orders=[0], opts=EngineOptions(steps=100), samples=20,
                  osc_resolution=50)
        a = run_convergence(regime, x0, 0.0, 0.3, [2**-3, 2**-4, 2**-5, 2**-6], **kw)
        b = run_convergence(regime, x0, 0.0, 0.3, [2**-3, 2**-4, 2**-5, 2**-6], **kw)
        da, db = a.to_dict(), b.to_dict()
        da.pop("runtime_seconds")
        db.pop("runtime_seconds")
        assert da == db
