import math

import numpy as np
import pytest
from scipy.special import spherical_in

from spheretime.functions import TemporalCorrelation
from spheretime.kernels import KernelSpec, evaluate, separable_product
from spheretime.spectral import (
    QuadratureWarning,
    SchoenbergTable,
    power_series_coefficients,
    reconstruct,
    schoenberg_coefficients,
    validity_diagnostic,
)

POISSON = KernelSpec("Poisson", {"lambda": 1.0})


def constant_kernel(s2=1.7):
    return KernelSpec("SchoenbergSeries", {"coeffs": [s2], "time_scales": [math.inf]})


class TestCoefficients:
    def test_separable_constant_in_lag(self):
        spec = separable_product(KernelSpec("Poisson", {"lambda": 2.0}), TemporalCorrelation("Constant", {}))
        t = schoenberg_coefficients(spec, k_max=20, u_grid=[0.0, 0.5, 3.0])
        assert np.allclose(t.coeffs, t.coeffs[:, :1], atol=1e-14)

    def test_poisson_bessel_values(self):
        t = schoenberg_coefficients(POISSON, k_max=30)
        k = np.arange(31)
        ref = (2 * k + 1) * math.exp(-1.0) * spherical_in(k, 1.0)
        assert np.max(np.abs(t.coeffs[:, 0] - ref)) < 1e-13

    def test_poisson_refinement(self):
        a = schoenberg_coefficients(POISSON, k_max=50, quad_order=256, check_refinement=False)
        b = schoenberg_coefficients(POISSON, k_max=50, quad_order=512, check_refinement=False)
        assert np.max(np.abs(a.coeffs - b.coeffs)) < 1e-13

    def test_constant_kernel(self):
        t = schoenberg_coefficients(constant_kernel(), k_max=15, u_grid=[0.0, 2.0])
        assert np.allclose(t.coeffs[0], 1.7, atol=1e-10)
        assert np.max(np.abs(t.coeffs[1:])) < 1e-10

    @pytest.mark.parametrize("n", [1, 3, 4])
    def test_other_dimensions_sum_to_origin(self, n):
        spec = KernelSpec("Poisson", {"lambda": 1.5}, temporal_correlation=TemporalCorrelation("Exponential", {}))
        t = schoenberg_coefficients(spec, n=n, k_max=40, u_grid=[0.0, 0.7])
        assert np.allclose(t.coeffs.sum(axis=0), evaluate(spec, 0.0, np.array([0.0, 0.7])), atol=1e-10)

    def test_quad_order_floor(self):
        with pytest.raises(ValueError):
            schoenberg_coefficients(POISSON, k_max=100, quad_order=300)

    def test_refinement_warning(self):
        with pytest.warns(QuadratureWarning):
            schoenberg_coefficients(KernelSpec("SinePower", {"alpha": 0.3}), k_max=64, quad_order=256)

    def test_invalid_spec_rejected(self):
        with pytest.raises(Exception):
            schoenberg_coefficients(KernelSpec("Multiquadric", {"epsilon": 1.5, "tau": 1.0}))

    @pytest.mark.parametrize("family,params", [("SineSeries", {}), ("Poisson", {"lambda": 1.0})])
    def test_super_polynomial_decay(self, family, params):
        # coefficients reach roundoff near degree 15; check decay where resolved
        t = schoenberg_coefficients(KernelSpec(family, params), k_max=30, quad_order=256)
        k = np.arange(31, dtype=float)
        weighted = np.abs(t.coeffs[:, 0]) * k**8
        assert weighted[12] < 1e-3 * weighted[5]
        assert np.all(np.diff(np.abs(t.coeffs[1:13, 0])) < 0)


class TestReconstruct:
    def test_constant(self):
        t = schoenberg_coefficients(constant_kernel(2.0), k_max=10)
        assert np.allclose(reconstruct(t, np.linspace(0, math.pi, 9), 0), 2.0, atol=1e-10)

    def test_poisson_round_trip(self, rng):
        spec = KernelSpec("Poisson", {"lambda": 1.0}, temporal_correlation=TemporalCorrelation("Exponential", {"scale": 1.3}))
        u = rng.uniform(0, 3, 20)
        d = rng.uniform(0, math.pi, 20)
        t = schoenberg_coefficients(spec, k_max=200, u_grid=u, quad_order=1024)
        got = np.array([reconstruct(t, d[i], i) for i in range(20)])
        assert np.max(np.abs(got - evaluate(spec, d, u))) < 1e-6

    def test_origin_is_coefficient_sum(self):
        spec = KernelSpec("NegativeBinomial", {"epsilon": 0.4, "tau": 2.0},
                          temporal_correlation=TemporalCorrelation("Exponential", {}))
        t = schoenberg_coefficients(spec, k_max=200, u_grid=[0.0, 1.0], quad_order=1024)
        for j, u in enumerate([0.0, 1.0]):
            assert reconstruct(t, 0.0, j) == pytest.approx(evaluate(spec, 0.0, u), abs=1e-6)

    def test_index_range(self):
        t = schoenberg_coefficients(POISSON, k_max=5)
        with pytest.raises(IndexError):
            reconstruct(t, 0.1, 3)

    def test_text_round_trip(self):
        t = schoenberg_coefficients(POISSON, k_max=12, u_grid=[0.0, 0.25])
        back = SchoenbergTable.from_text(t.to_text())
        assert np.array_equal(back.coeffs, t.coeffs) and np.array_equal(back.u_grid, t.u_grid)


class TestDiagnostic:
    def test_valid_multiquadric(self):
        spec = KernelSpec("Multiquadric", {"epsilon": 0.5, "tau": 2.0},
                          temporal_correlation=TemporalCorrelation("Exponential", {}))
        rep = validity_diagnostic(spec, k_max=100)
        assert rep.passed
        assert rep.min_toeplitz_eigenvalue >= -1e-8

    def test_negative_epsilon_flagged(self):
        rep = validity_diagnostic(KernelSpec("Multiquadric", {"epsilon": -0.5, "tau": 1.0}), k_max=100)
        assert not rep.passed
        assert rep.negative_degrees and all(k % 2 == 1 for k in rep.negative_degrees)

    def test_epsilon_above_one_mirrors_reciprocal(self):
        # ((1-e)^2/(1+e^2-2ex))^tau is unchanged by e -> 1/e, so e = 1.5 gives
        # the valid e = 2/3 kernel and no negative coefficient
        d = np.linspace(0, math.pi, 50)
        a = evaluate(KernelSpec("Multiquadric", {"epsilon": 1.5, "tau": 1.0}), d, 0.0, check=False)
        b = evaluate(KernelSpec("Multiquadric", {"epsilon": 2 / 3, "tau": 1.0}), d, 0.0)
        assert np.allclose(a, b, atol=1e-14)

    def test_sine_power_outside_range_flagged(self):
        rep = validity_diagnostic(KernelSpec("SinePower", {"alpha": 3.0}), k_max=100)
        assert not rep.passed

    def test_separable_tail_decreases(self):
        spec = separable_product(KernelSpec("NegativeBinomial", {"epsilon": 0.5, "tau": 1.0}),
                                 TemporalCorrelation("Exponential", {}))
        tails = [validity_diagnostic(spec, k_max=k).tail_mass for k in (10, 20, 40)]
        assert validity_diagnostic(spec, k_max=40).passed
        assert tails[0] > tails[1] > tails[2]

    def test_summary_text(self):
        assert validity_diagnostic(POISSON, k_max=20).summary().startswith("pass")


class TestPowerSeries:
    def test_chebyshev_recovery(self):
        w = [0.5, 0.2, 0.0, 0.3, 0.1]
        tc = TemporalCorrelation("Exponential", {"scale": 0.9})
        spec = KernelSpec("PowerSeries", {"sigma2": 2.0, "weights": w}, temporal_correlation=tc)
        u = np.array([0.0, 0.5, 1.7])
        a = power_series_coefficients(spec, 4, u)
        expected = 2.0 * np.array(w)[:, None] / sum(w) * tc(u)[None, :] ** np.arange(5)[:, None]
        assert np.max(np.abs(a - expected)) < 1e-9
