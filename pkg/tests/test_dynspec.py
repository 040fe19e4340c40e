import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from spheretime.dynspec import (
    DynSpecModel,
    GridSeries,
    burn_in_length,
    coherence_matrix,
    comparison_table,
    detrend,
    evolutionary_spectrum,
    fit_coherence,
    fit_pipeline,
    fit_spectrum,
    fit_temporal_ar,
    innovations,
    kernel_region_loglik,
    longitudinal_fft,
    model_loglik,
    periodogram,
    psd_project,
    simulate_var,
    spectrum_shape,
    spectrum_values,
    synthesize_innovations,
)
from spheretime.kernels import KernelSpec
from spheretime.sphere import LatLonGrid


def model_on(grid, phi=0.5, params=(2.0, 0.8, 1.2), coherence=(0.0, 1.0, 0.0), **kw):
    return DynSpecModel(
        grid,
        np.full(grid.shape, phi),
        np.tile(params, (grid.n_lat, 1)),
        np.array(coherence),
        **kw,
    )


def irregular_grid(n_lon=16):
    lat = np.cumsum([0.0, 0.1, 0.35, 0.15, 0.5, 0.08, 0.3, 0.2]) - 1.0
    return LatLonGrid(lat, n_lon)


class TestGridSeries:
    def test_shape(self):
        with pytest.raises(ValueError):
            GridSeries(LatLonGrid.regular(2, 4), np.arange(3.0), np.zeros((2, 4, 2)))

    def test_irregular_times(self):
        with pytest.raises(ValueError):
            GridSeries(LatLonGrid.regular(1, 2), [0.0, 1.0, 3.0], np.zeros((1, 2, 3)))

    def test_finite(self):
        v = np.zeros((1, 2, 3))
        v[0, 0, 0] = np.inf
        with pytest.raises(ValueError):
            GridSeries(LatLonGrid.regular(1, 2), np.arange(3.0), v)


class TestDetrend:
    def test_removes_seasonal_cycle(self, rng):
        grid = LatLonGrid.regular(2, 4)
        t = np.arange(48)
        season = np.sin(2 * np.pi * t / 12)
        v = 3.0 * season[None, None, :] + 0.1 * rng.standard_normal((2, 4, 48))
        anom, trend = detrend(GridSeries(grid, t, v), 12)
        assert trend.shape == v.shape
        assert np.allclose(anom.values + trend, v)
        assert np.std(anom.values) < 0.2
        # each phase of the anomalies averages to zero
        assert np.allclose(anom.values.reshape(2, 4, 4, 12).mean(axis=2), 0, atol=1e-12)

    def test_block_mode(self):
        grid = LatLonGrid.regular(1, 1)
        v = np.arange(7.0).reshape(1, 1, 7)
        anom, trend = detrend(GridSeries(grid, np.arange(7.0), v), 3, mode="block")
        assert np.allclose(trend.ravel(), [1, 1, 1, 4, 4, 4, 6])

    def test_bad_period(self):
        s = GridSeries(LatLonGrid.regular(1, 1), np.arange(3.0), np.zeros((1, 1, 3)))
        with pytest.raises(ValueError):
            detrend(s, 5)
        with pytest.raises(ValueError):
            detrend(s, 1, mode="other")


class TestAR:
    def test_recovers_coefficients(self):
        grid = LatLonGrid.regular(3, 8)
        phi = np.linspace(-0.6, 0.8, 24).reshape(3, 8)
        m = DynSpecModel(grid, phi, np.tile([1.0, 1.0, 0.0], (3, 1)))
        z = simulate_var(m, 2000, seed=2)
        fit = fit_temporal_ar(z)
        assert np.max(np.abs(fit.coeffs - phi)) < 0.06
        assert not fit.flagged.any()

    def test_constant_site_flagged(self):
        v = np.random.default_rng(0).standard_normal((1, 2, 10))
        v[0, 1] = 4.0
        fit = fit_temporal_ar(GridSeries(LatLonGrid.regular(1, 2), np.arange(10.0), v))
        assert fit.flagged[0, 1] and fit.coeffs[0, 1] == 0.0

    def test_innovations_invert_recursion(self, rng):
        grid = LatLonGrid.regular(2, 3)
        eps = rng.standard_normal((2, 3, 6))
        z = np.zeros_like(eps)
        z[..., 0] = eps[..., 0]
        for t in range(1, 6):
            z[..., t] = 0.4 * z[..., t - 1] + eps[..., t]
        out = innovations(GridSeries(grid, np.arange(6.0), z), np.full((2, 3), 0.4))
        assert np.allclose(out.values, eps[..., 1:])
        assert out.n_times == 5

    def test_burn_in(self):
        assert burn_in_length(np.zeros(3)) == 100
        assert burn_in_length([0.99]) == 10 * math.ceil(-1 / math.log(0.99))


class TestSpectrum:
    @given(st.integers(2, 64), st.floats(0.01, 20), st.floats(0, 5))
    def test_shape_mean_one_and_symmetric(self, n, alpha, nu):
        s = spectrum_shape(n, alpha, nu)
        assert np.mean(s) == pytest.approx(1.0)
        assert np.allclose(s[1:], s[1:][::-1], rtol=1e-10)

    def test_white_at_nu_zero(self):
        assert np.allclose(spectrum_values((2.5, 3.0, 0.0), 12), 2.5)

    def test_periodogram_parseval(self, rng):
        grid = LatLonGrid.regular(2, 8)
        v = rng.standard_normal((2, 8, 30))
        p = periodogram(longitudinal_fft(GridSeries(grid, np.arange(30.0), v)))
        assert np.allclose(p.mean(axis=1), np.mean(v**2, axis=(1, 2)))

    def test_fft_requires_grid_series(self):
        with pytest.raises(TypeError):
            longitudinal_fft(np.zeros((2, 3, 4)))

    def test_fit_recovers(self):
        grid = LatLonGrid.regular(2, 32)
        m = model_on(grid, phi=0.0, params=(2.0, 0.8, 1.2))
        eps = synthesize_innovations(m, 400, np.random.default_rng(3))
        x = np.fft.fft(eps, axis=1)
        fit = fit_spectrum(x, 0)
        assert not fit.white
        assert np.allclose(fit.params, [2.0, 0.8, 1.2], rtol=0.2)

    def test_white_selected_on_white_noise(self, rng):
        x = np.fft.fft(rng.standard_normal((1, 16, 300)), axis=1)
        fit = fit_spectrum(x, 0)
        assert fit.white and fit.params[2] == 0.0
        assert fit.params[0] == pytest.approx(1.0, rel=0.1)

    def test_needs_replicates(self):
        with pytest.raises(ValueError):
            fit_spectrum(np.ones((1, 4, 1), dtype=complex), 0)


class TestCoherence:
    def test_matrix_properties(self):
        lat = np.linspace(-1, 1, 6)
        r = coherence_matrix((0.7, 0.3, 0.5), lat, 3, 16)
        assert np.allclose(np.diag(r), 1)
        assert np.allclose(r, r.T)
        assert np.linalg.eigvalsh(r).min() > 0
        assert np.allclose(r, coherence_matrix((0.7, 0.3, 0.5), lat, 13, 16))

    def test_psd_project(self):
        m = np.array([[1.0, 0.9, -0.9], [0.9, 1.0, 0.9], [-0.9, 0.9, 1.0]])
        fixed, flag = psd_project(m)
        assert flag and np.linalg.eigvalsh(fixed).min() > -1e-12
        assert np.allclose(np.diag(fixed), 1)
        same, flag = psd_project(np.eye(3))
        assert not flag and np.array_equal(same, np.eye(3))

    def test_recovers_on_irregular_latitudes(self):
        grid = irregular_grid()
        truth = (0.8, 0.2, 0.5)
        m = model_on(grid, phi=0.0, coherence=truth)
        eps = synthesize_innovations(m, 400, np.random.default_rng(5))
        x = np.fft.fft(eps, axis=1)
        fit = fit_coherence(x, m.spectra(1), grid.lat)
        assert not fit.independent and not fit.boundary
        assert np.allclose(fit.params, truth, rtol=0.2)

    def test_independent_rings_selected(self):
        grid = irregular_grid()
        m = model_on(grid, phi=0.0)
        eps = synthesize_innovations(m, 300, np.random.default_rng(6))
        x = np.fft.fft(eps, axis=1)
        fit = fit_coherence(x, m.spectra(1), grid.lat)
        # effective adjacent correlation stays within sampling noise
        eff = fit.params[0] * math.exp(-0.1 / fit.params[1])
        assert fit.independent or eff <= 3 / math.sqrt(fit.n_pairs)

    def test_pole_rings_excluded(self):
        lat = np.radians([-89.0, -87.0])
        x = np.ones((2, 4, 3), dtype=complex)
        with pytest.raises(ValueError):
            fit_coherence(x, np.ones((2, 4)), lat)

    def test_synthesized_cross_correlation(self):
        grid = LatLonGrid(np.array([-0.2, 0.1]), 8)
        m = model_on(grid, phi=0.0, coherence=(0.6, 0.5, 0.0))
        eps = synthesize_innovations(m, 3000, np.random.default_rng(7))
        x = np.fft.fft(eps, axis=1)[:, 2, :]
        rho = np.real(np.mean(x[0] * np.conj(x[1]))) / math.sqrt(
            np.mean(np.abs(x[0]) ** 2) * np.mean(np.abs(x[1]) ** 2)
        )
        assert rho == pytest.approx(0.6 * math.exp(-0.3 / 0.5), abs=0.05)


class TestModel:
    def test_validation(self):
        grid = LatLonGrid.regular(2, 4)
        with pytest.raises(ValueError):
            model_on(grid, phi=1.0)
        with pytest.raises(ValueError):
            model_on(grid, coherence=(1.0, 1.0, 0.0))
        with pytest.raises(ValueError):
            model_on(grid, mixing=np.full(grid.shape, 0.5))

    def test_evolutionary_spectrum_limits(self):
        b1 = np.array([[1.0, 1.0, 1.0]])
        b2 = np.array([[3.0, 2.0, 0.5]])
        mix = np.array([[1.0, 0.0, 0.25, 0.5]])
        f1 = spectrum_values(b1[0], 4)
        f2 = spectrum_values(b2[0], 4)
        assert evolutionary_spectrum(b1, b2, mix, 1, 0, 0) == f1[1]
        assert evolutionary_spectrum(b1, b2, mix, 1, 0, 1) == f2[1]
        assert evolutionary_spectrum(b1, b2, mix, 1, 0, 2) == pytest.approx(0.25 * f1[1] + 0.75 * f2[1])

    def test_text_round_trip(self):
        grid = LatLonGrid.regular(3, 6)
        m = model_on(grid, coherence=(0.4, 0.3, 0.2), mixing=np.full(grid.shape, 0.3),
                     spectrum_params2=np.tile([1.0, 2.0, 0.5], (3, 1)))
        back = DynSpecModel.from_text(m.to_text())
        assert np.array_equal(back.spectrum_params2, m.spectrum_params2)
        assert np.array_equal(back.grid.lat, m.grid.lat)
        assert back.n_spectral_params() == m.n_spectral_params() == 21

    def test_unknown_format(self):
        with pytest.raises(ValueError):
            DynSpecModel.from_text('{"format_version": 99}')

    def test_innovation_covariance_matches_simulation(self):
        grid = LatLonGrid(np.array([-0.3, 0.2]), 6)
        m = model_on(grid, coherence=(0.5, 0.4, 0.3))
        ii, jj = np.array([0, 0, 1]), np.array([0, 2, 1])
        cov = m.innovation_covariance(ii, jj)
        eps = synthesize_innovations(m, 20000, np.random.default_rng(8))
        emp = np.cov(eps[ii, jj, :])
        assert np.allclose(cov, emp, atol=0.08)
        assert cov[0, 0] == pytest.approx(2.0)

    def test_mixing_changes_local_variance(self):
        grid = LatLonGrid.regular(1, 8)
        mix = np.zeros(grid.shape)
        mix[0, :4] = 1.0
        m = model_on(grid, params=(1.0, 1.0, 0.0), mixing=mix,
                     spectrum_params2=np.array([[4.0, 1.0, 0.0]]))
        eps = synthesize_innovations(m, 4000, np.random.default_rng(9))
        var = eps[0].var(axis=1)
        assert np.allclose(var[:4], 1.0, rtol=0.1) and np.allclose(var[4:], 4.0, rtol=0.1)

    def test_simulate_reproducible(self):
        m = model_on(LatLonGrid.regular(2, 4))
        a = simulate_var(m, 10, seed=1)
        b = simulate_var(m, 10, seed=1)
        assert np.array_equal(a.values, b.values)


class TestLikelihood:
    def test_spectral_equals_dense(self):
        grid = LatLonGrid(np.array([-0.4, 0.0, 0.3]), 6)
        m = model_on(grid, coherence=(0.5, 0.3, 0.2))
        z = simulate_var(m, 20, seed=4)
        a = model_loglik(m, z, method="spectral")
        b = model_loglik(m, z, method="dense")
        assert a.loglik == pytest.approx(b.loglik, rel=1e-10)
        assert a.n_obs == 3 * 6 * 19

    def test_bic_and_normalized(self):
        grid = LatLonGrid.regular(2, 4)
        m = model_on(grid)
        res = model_loglik(m, simulate_var(m, 10, seed=0), region=(0, 1, 0, 2))
        assert res.n_obs == 2 * 9
        assert res.bic == pytest.approx(res.n_params * math.log(18) - 2 * res.loglik)
        assert res.normalized == pytest.approx(res.loglik / 18)

    def test_region_errors(self):
        grid = LatLonGrid.regular(2, 4)
        m = model_on(grid)
        z = simulate_var(m, 5, seed=0)
        with pytest.raises(ValueError):
            model_loglik(m, z, region=(0, 3, 0, 2))
        with pytest.raises(ValueError):
            model_loglik(m, z, region=(0, 1, 0, 2), method="spectral")

    def test_true_model_beats_kernel_on_own_data(self):
        grid = LatLonGrid.regular(3, 8)
        m = model_on(grid, params=(1.0, 0.5, 1.5))
        z = simulate_var(m, 200, seed=10)
        eps = innovations(z, m.ar_coeffs)
        own = model_loglik(m, z, region=(0, 3, 0, 8), method="dense")
        other = kernel_region_loglik(KernelSpec("Poisson", {"lambda": 0.5}), eps, (0, 3, 0, 8))
        assert own.normalized > other.normalized


class TestPipeline:
    def test_round_trip(self):
        grid = LatLonGrid.regular(4, 16)
        m = model_on(grid, phi=0.6, params=(1.5, 0.7, 1.0))
        z = simulate_var(m, 300, seed=12)
        res = fit_pipeline(z, coherence=False)
        assert np.max(np.abs(res.model.ar_coeffs - 0.6)) < 0.15
        assert np.allclose(np.median(res.model.spectrum_params, axis=0), [1.5, 0.7, 1.0], rtol=0.25)
        assert res.coherence_fit is None

    def test_comparison_table(self):
        text = comparison_table([
            {"model": "a", "n_params": 3, "time_minutes": 0.1, "normalized_loglik": -1.0, "bic": 10.0},
            {"model": "b", "n_params": 4, "time_minutes": 0.2, "normalized_loglik": -0.5, "bic": 8.0},
        ])
        lines = text.strip().splitlines()
        assert lines[0].split(",") == ["model", "n_params", "time_minutes", "normalized_loglik",
                                       "delta_normalized_loglik", "bic"]
        assert lines[2].split(",")[4] == "0.5"
        with pytest.raises(ValueError):
            comparison_table([])
