import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from spheretime.functions import TemporalCorrelation
from spheretime.kernels import KernelSpec, evaluate, gram_matrix, lagrangian_transport, modified_gneiting
from spheretime.simulate import (
    FieldSample,
    RotationLaw,
    SimulationError,
    TruncationWarning,
    axis_angle_matrix,
    cholesky_draws,
    cholesky_factor,
    cholesky_simulate,
    coefficient_models_from_series,
    coefficient_models_from_spec,
    kl_simulate,
    replicate_seeds,
    rotate,
    rotation_power,
    transport_covariance_mc,
    transport_cross_covariance,
    transport_kernel_value,
    transport_simulate,
)
from spheretime.sphere import distance_matrix, fibonacci_sites, random_sites



def spatial_kernel():
    return KernelSpec("Poisson", {"lambda": 1.0})


SERIES = KernelSpec("SchoenbergSeries", {"coeffs": [0.2, 0.4, 0.25, 0.15], "time_scales": [math.inf, 1.0, 0.5, 2.0]})


class TestCholesky:
    def test_reproducible(self):
        x = fibonacci_sites(10)
        a = cholesky_simulate(modified_gneiting(1.0, 0.3, 0.5), x, [0.0, 1.0], seed=5)
        b = cholesky_simulate(modified_gneiting(1.0, 0.3, 0.5), x, [0.0, 1.0], seed=5)
        assert np.array_equal(a.values, b.values)
        assert a.values.shape == (10, 2)

    def test_layout_matches_gram(self):
        # empirical covariance of draws matches the gridded Gram in (site, time) order
        x = fibonacci_sites(4)
        t = np.array([0.0, 0.7])
        spec = modified_gneiting(1.5, 0.4, 0.5)
        z = cholesky_draws(spec, x, t, 4000, seed=1)
        emp = z[:, 0, 0] * z[:, 2, 1]
        target = evaluate(spec, distance_matrix(x[:1], x[2:3])[0, 0], 0.7)
        assert abs(emp.mean() - target) < 4 * emp.std() / math.sqrt(emp.size)

    def test_size_guard(self):
        with pytest.raises(ValueError):
            cholesky_draws(modified_gneiting(1, 0.3, 0.5), fibonacci_sites(2001), np.arange(10.0), 1, 0)

    def test_factor_fails_on_indefinite(self):
        with pytest.raises(SimulationError):
            cholesky_factor(np.array([[1.0, 2.0], [2.0, 1.0]]))

    def test_jitter_rescues_semidefinite(self):
        v = np.ones((3, 1))
        chol = cholesky_factor(v @ v.T)
        assert np.allclose(chol @ chol.T, v @ v.T, atol=1e-6)


class TestFieldSample:
    def test_shape_check(self):
        with pytest.raises(ValueError):
            FieldSample(fibonacci_sites(3), [0.0, 1.0], np.zeros((3, 3)))

    def test_finite_check(self):
        with pytest.raises(ValueError):
            FieldSample(fibonacci_sites(1), [0.0], np.array([[np.nan]]))


def test_replicate_seeds_independent_and_stable():
    a = replicate_seeds(3, 4)
    b = replicate_seeds(3, 4)
    draws_a = [np.random.default_rng(s).random() for s in a]
    draws_b = [np.random.default_rng(s).random() for s in b]
    assert draws_a == draws_b and len(set(draws_a)) == 4


class TestKL:
    def test_series_models_match_kernel(self):
        m = coefficient_models_from_series(SERIES)
        phi = m.variance_by_degree()
        assert np.allclose(phi, [0.2, 0.4, 0.25, 0.15])
        assert m.total_variance == pytest.approx(1.0)

    def test_spec_models_match_series(self):
        t = np.array([0.0, 0.5, 1.5])
        exact = coefficient_models_from_series(SERIES)
        quad = coefficient_models_from_spec(SERIES, 3, t)
        lags = t[:, None] - t[None, :]
        for k in range(4):
            assert np.allclose(quad.cov(k, lags), exact.cov(k, lags), atol=1e-12)

    def test_empirical_covariance(self):
        x = fibonacci_sites(6)
        t = np.array([0.0, 1.0])
        m = coefficient_models_from_series(SERIES)
        reps = np.array([kl_simulate(m, 3, None, x, t, seed=s).values for s in range(1500)])
        prod = reps[:, 0, 0] * reps[:, 3, 1]
        target = evaluate(SERIES, distance_matrix(x[:1], x[3:4])[0, 0], 1.0)
        assert abs(prod.mean() - target) < 4 * prod.std() / math.sqrt(prod.size)

    def test_truncation_warning(self):
        m = coefficient_models_from_series(SERIES)
        with pytest.warns(TruncationWarning):
            kl_simulate(m, 1, None, fibonacci_sites(4), [0.0], seed=0)

    def test_temporal_truncation_reduces_rank(self):
        m = coefficient_models_from_series(KernelSpec("SchoenbergSeries", {"coeffs": [1.0], "time_scales": [1.0]}))
        t = np.linspace(0, 3, 8)
        z = np.array([kl_simulate(m, 0, 2, fibonacci_sites(1), t, seed=s).values[0] for s in range(20)])
        assert np.linalg.matrix_rank(z, tol=1e-8) == 2


class TestRotations:
    @given(st.floats(-math.pi + 1e-3, math.pi - 1e-3), st.integers(0, 10_000))
    def test_power_identities(self, angle, seed):
        axis = np.random.default_rng(seed).standard_normal(3)
        r = axis_angle_matrix(axis, angle)
        assert np.allclose(rotation_power(r, 0.0), np.eye(3), atol=1e-10)
        assert np.allclose(rotation_power(r, 1.0), r, atol=1e-10)
        h = rotation_power(r, 0.5)
        assert np.allclose(h @ h, r, atol=1e-10)

    def test_half_turn(self):
        r = axis_angle_matrix([1.0, 0, 0], math.pi)
        h = rotation_power(r, 0.5)
        assert np.allclose(h @ h, r, atol=1e-10)

    def test_rejects_non_rotation(self):
        with pytest.raises(ValueError):
            rotation_power(np.diag([1.0, 1.0, -1.0]), 0.5)

    def test_rotate_matches_matrix(self, rng):
        p = random_sites(5, rng)
        axis = np.array([0.0, 0.6, 0.8])
        assert np.allclose(rotate(p, axis[None, :], 0.4), p @ axis_angle_matrix(axis, 0.4).T)

    def test_law_round_trip(self):
        law = RotationLaw("fixed", (0, 0, 2.0), "degenerate", 0.3)
        assert RotationLaw.from_component(law.to_component()) == law
        assert law.axis == (0.0, 0.0, 1.0)


class TestTransport:
    def test_mc_zero_lag_exact(self):
        a, b = fibonacci_sites(2)
        mean, se = transport_covariance_mc(spatial_kernel(), RotationLaw(), a, b, 0.0)
        assert se == 0.0
        assert mean == pytest.approx(evaluate(spatial_kernel(), distance_matrix(a[None], b[None])[0, 0]))

    def test_mc_sample_floor(self):
        with pytest.raises(ValueError):
            transport_covariance_mc(spatial_kernel(), RotationLaw(), [0, 0, 1.0], [1.0, 0, 0], 1.0, n_samples=10)

    def test_isotropic_value_matches_pairs(self, rng):
        spec = lagrangian_transport(spatial_kernel(), RotationLaw(n_samples=300))
        law = RotationLaw(n_samples=300)
        for _ in range(3):
            a, b = random_sites(2, rng)
            d = distance_matrix(a[None], b[None])[0, 0]
            mean, se = transport_covariance_mc(spatial_kernel(), law, a, b, 1.0, n_samples=4000, seed=9)
            ref = float(transport_kernel_value(spec, d, 1.0))
            assert abs(mean - ref) < 4 * se + 0.02

    def test_fixed_axis_not_isotropic(self):
        spec = lagrangian_transport(spatial_kernel(), RotationLaw("fixed"))
        with pytest.raises(Exception):
            transport_kernel_value(spec, 0.3, 1.0)

    def test_cross_covariance_psd(self, rng):
        spec = lagrangian_transport(spatial_kernel(), RotationLaw("fixed", n_samples=100))
        x = np.tile(random_sites(10, rng), (2, 1))
        t = np.repeat([0.0, 1.0], 10)
        c = transport_cross_covariance(spec, x, t, x, t)
        assert np.allclose(c, c.T)
        assert np.linalg.eigvalsh(c).min() > -1e-10

    def test_simulate_frozen_field(self):
        # with a degenerate zero rotation, every time slice is the same field
        x = fibonacci_sites(8)
        z = transport_simulate(spatial_kernel(), RotationLaw.identity(), x, [0.0, 1.0, 2.0], seed=3)
        assert np.allclose(z.values[:, 0], z.values[:, 2])

    def test_simulate_advects(self):
        # a quarter turn about z at unit rate maps the t=1 field onto rotated sites
        law = RotationLaw("fixed", (0, 0, 1.0), "degenerate", math.pi / 2)
        x = np.array([[1.0, 0, 0], [0, 1.0, 0], [-1.0, 0, 0], [0, -1.0, 0]])
        z = transport_simulate(spatial_kernel(), law, x, [0.0, 1.0], seed=4)
        assert np.allclose(z.values[:, 1], np.roll(z.values[:, 0], -1))
