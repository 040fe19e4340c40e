"""Gaussian random fields on the sphere cross time.

Three samplers are provided:

* :func:`cholesky_simulate`, exact draws from a dense Gram matrix.
* :func:`kl_simulate`, the truncated expansion
  ``Z(s, t) = sum_{k <= K} sum_l A_{k,l}(t) Y_{k,l}(s)`` with independent
  coefficient processes, each drawn exactly on the time grid.
* :func:`transport_simulate`, a spatial field advected by real powers of a
  random rotation, ``Z(s, t) = X(R^t s)``.

Replicate seeds are derived with :func:`replicate_seeds`, which spawns child
sequences from ``numpy.random.SeedSequence(seed)``.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .functions import Component, InvalidParameterError
from .kernels import KernelSpec, evaluate, gram_matrix, validate_params
from .sphere import as_xyz, distance_matrix, geodesic_xyz, iter_spherical_harmonics

MAX_DENSE = 20000
JITTERS = (1e-10, 1e-8, 1e-6)


class SimulationError(RuntimeError):
    """The covariance matrix could not be factorized; the kernel is likely invalid."""


class TruncationWarning(UserWarning):
    """The discarded tail of an expansion carries more than 1% of the variance."""


def replicate_seeds(seed: int, n: int) -> list[np.random.SeedSequence]:
    """Independent child seed sequences for ``n`` replicates of one run."""
    return np.random.SeedSequence(seed).spawn(n)


@dataclass
class FieldSample:
    """A field realization on a ``sites x times`` grid.

    ``values[i, j]`` is ``Z(sites[i], times[j])``; ``sites`` holds unit
    vectors.
    """

    sites: np.ndarray
    times: np.ndarray
    values: np.ndarray
    seed: int | None = None

    def __post_init__(self):
        self.sites = as_xyz(self.sites)
        self.times = np.atleast_1d(np.asarray(self.times, dtype=float))
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.sites.shape[0], self.times.size):
            raise ValueError(
                f"values shape {self.values.shape} does not match "
                f"{self.sites.shape[0]} sites x {self.times.size} times"
            )
        if not np.all(np.isfinite(self.values)):
            raise ValueError("field values must be finite")


# ---------------------------------------------------------------------------
# dense sampler


def cholesky_factor(cov: np.ndarray, scale: float | None = None) -> np.ndarray:
    """Lower Cholesky factor with escalating relative jitter."""
    if scale is None:
        scale = float(np.max(np.abs(np.diag(cov)))) or 1.0
    eye = np.eye(cov.shape[0])
    for jitter in JITTERS:
        try:
            return np.linalg.cholesky(cov + jitter * scale * eye)
        except np.linalg.LinAlgError:
            continue
    raise SimulationError(
        "Cholesky factorization failed after jitter escalation to "
        f"{JITTERS[-1]:g} relative; the kernel is probably not positive definite"
    )


def cholesky_draws(
    spec: KernelSpec, sites, times, n_draws: int, seed: int
) -> np.ndarray:
    """``n_draws`` exact realizations, shape ``(n_draws, n_sites, n_times)``."""
    x = as_xyz(sites)
    t = np.atleast_1d(np.asarray(times, dtype=float))
    n = x.shape[0] * t.size
    if n > MAX_DENSE:
        raise ValueError(f"dense simulation limited to {MAX_DENSE} points, got {n}")
    cov = gram_matrix(spec, x, t, gridded=True)
    chol = cholesky_factor(cov, abs(spec.variance) or None)
    rng = np.random.default_rng(seed)
    w = rng.standard_normal((n, n_draws))
    z = (chol @ w).T  # (draws, nt * ns), time-major
    return z.reshape(n_draws, t.size, x.shape[0]).transpose(0, 2, 1)


def cholesky_simulate(spec: KernelSpec, sites, times, seed: int) -> FieldSample:
    """Exact zero-mean Gaussian draw on the grid ``sites x times``."""
    z = cholesky_draws(spec, sites, times, 1, seed)[0]
    return FieldSample(as_xyz(sites), times, z, seed)


# ---------------------------------------------------------------------------
# truncated Karhunen-Loeve sampler


@dataclass
class CoefficientModels:
    """Temporal covariances ``C_{k,T}`` of the expansion coefficients.

    ``cov(k, lags)`` returns ``C_{k,T}`` at the given lags.  On the 2-sphere the
    kernel's Legendre coefficients satisfy ``phi_k = (2k+1) C_{k,T} / (4 pi)``.
    ``total_variance`` is ``psi(0, 0)`` when known and drives the truncation
    warning.
    """

    cov: Callable[[int, np.ndarray], np.ndarray]
    k_max: int
    total_variance: float | None = None

    def variance_by_degree(self, k_max: int | None = None) -> np.ndarray:
        """Contribution ``(2k+1) C_{k,T}(0) / (4 pi)`` of each degree to ``psi(0,0)``."""
        k_max = self.k_max if k_max is None else k_max
        return np.array(
            [(2 * k + 1) * float(self.cov(k, np.zeros(1))[0]) / (4 * np.pi) for k in range(k_max + 1)]
        )


def coefficient_models_from_spec(
    spec: KernelSpec, k_max: int, times, quad_order: int | None = None
) -> CoefficientModels:
    """Tabulate ``C_{k,T}`` at every lag of the time grid by quadrature."""
    from .spectral import schoenberg_coefficients

    t = np.atleast_1d(np.asarray(times, dtype=float))
    lags = np.unique(np.round(np.abs(t[:, None] - t[None, :]), 12).ravel())
    table = schoenberg_coefficients(
        spec, 2, k_max, lags, quad_order, check_refinement=False
    )
    ks = np.arange(k_max + 1)
    c = 4 * np.pi * table.coeffs / (2 * ks + 1)[:, None]
    index = {float(v): j for j, v in enumerate(lags)}

    def cov(k, query):
        q = np.round(np.abs(np.asarray(query, dtype=float)), 12)
        try:
            return c[k, [index[float(v)] for v in q.ravel()]].reshape(q.shape)
        except KeyError as exc:
            raise KeyError(f"lag {exc.args[0]} was not tabulated") from None

    return CoefficientModels(cov, k_max, spec.variance)


def coefficient_models_from_series(spec: KernelSpec) -> CoefficientModels:
    """Exact coefficient models of a ``SchoenbergSeries`` kernel."""
    if spec.family != "SchoenbergSeries":
        raise ValueError("expected a SchoenbergSeries kernel")
    b = np.asarray(spec.params["coeffs"], dtype=float)
    s = np.asarray(spec.params["time_scales"], dtype=float)

    def cov(k, lags):
        lags = np.abs(np.asarray(lags, dtype=float))
        if k >= b.size:
            return np.zeros_like(lags)
        temporal = np.ones_like(lags) if np.isinf(s[k]) else np.exp(-lags / s[k])
        return 4 * np.pi * b[k] / (2 * k + 1) * temporal

    return CoefficientModels(cov, b.size - 1, float(b.sum()))


def _temporal_factor(gram: np.ndarray, m_trunc: int | None) -> np.ndarray:
    vals, vecs = np.linalg.eigh(0.5 * (gram + gram.T))
    vals = np.clip(vals, 0.0, None)
    if m_trunc is not None:
        keep = np.argsort(vals)[::-1][:m_trunc]
        vals, vecs = vals[keep], vecs[:, keep]
    return vecs * np.sqrt(vals)


def kl_simulate(
    coeff_models: CoefficientModels,
    k_trunc: int,
    m_trunc: int | None,
    sites,
    times,
    seed: int,
) -> FieldSample:
    """Truncated double expansion sampler.

    Parameters
    ----------
    coeff_models : CoefficientModels
    k_trunc : int
        Highest spherical-harmonic degree kept.
    m_trunc : int or None
        Number of temporal eigenfunctions kept per degree; ``None`` draws the
        coefficient processes exactly on the time grid.
    sites, times
        Output grid.
    seed : int
    """
    x = as_xyz(sites)
    t = np.atleast_1d(np.asarray(times, dtype=float))
    lags = t[:, None] - t[None, :]
    if coeff_models.total_variance is not None:
        kept = coeff_models.variance_by_degree(min(k_trunc, coeff_models.k_max)).sum()
        tail = coeff_models.total_variance - kept
        if tail > 0.01 * abs(coeff_models.total_variance):
            warnings.warn(
                f"degrees above {k_trunc} carry {tail / coeff_models.total_variance:.1%} "
                "of the variance",
                TruncationWarning,
                stacklevel=2,
            )
    rng = np.random.default_rng(seed)
    z = np.zeros((x.shape[0], t.size))
    for k, Y in iter_spherical_harmonics(k_trunc, x):
        factor = _temporal_factor(coeff_models.cov(k, lags), m_trunc)  # (nt, r)
        w = rng.standard_normal((factor.shape[1], 2 * k + 1))
        a = factor @ w  # (nt, 2k+1): A_{k,l}(t)
        z += Y.T @ a.T
    return FieldSample(x, t, z, seed)


# ---------------------------------------------------------------------------
# rotations


def _is_rotation(r: np.ndarray, tol: float = 1e-10) -> bool:
    return (
        r.shape == (3, 3)
        and np.allclose(r @ r.T, np.eye(3), atol=tol)
        and abs(np.linalg.det(r) - 1.0) < tol
    )


def axis_angle_matrix(axis, angle):
    """Rodrigues rotation matrices; broadcasts over leading dimensions."""
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis, axis=-1, keepdims=True)
    angle = np.asarray(angle, dtype=float)
    c = np.cos(angle)[..., None, None]
    s = np.sin(angle)[..., None, None]
    kx, ky, kz = axis[..., 0], axis[..., 1], axis[..., 2]
    zero = np.zeros_like(kx)
    cross = np.stack(
        [
            np.stack([zero, -kz, ky], -1),
            np.stack([kz, zero, -kx], -1),
            np.stack([-ky, kx, zero], -1),
        ],
        -2,
    )
    outer = axis[..., :, None] * axis[..., None, :]
    return c * np.eye(3) + s * cross + (1 - c) * outer


def rotate(points: np.ndarray, axis: np.ndarray, angle) -> np.ndarray:
    """Rotate ``points`` (..., 3) about ``axis`` (..., 3) by ``angle`` (...,)."""
    angle = np.asarray(angle, dtype=float)[..., None]
    kv = np.sum(axis * points, axis=-1, keepdims=True)
    return (
        points * np.cos(angle)
        + np.cross(axis, points) * np.sin(angle)
        + axis * kv * (1 - np.cos(angle))
    )


def _axis_angle(r: np.ndarray) -> tuple[np.ndarray, float]:
    angle = math.acos(max(-1.0, min(1.0, (np.trace(r) - 1.0) / 2.0)))
    vals, vecs = np.linalg.eig(r)
    axis = np.real(vecs[:, np.argmin(np.abs(vals - 1.0))])
    axis = axis / np.linalg.norm(axis)
    # orient the axis so that rotating by +angle reproduces r
    if not np.allclose(axis_angle_matrix(axis, angle), r, atol=1e-9):
        axis = -axis
    return axis, angle


def rotation_power(r, t: float) -> np.ndarray:
    """Real power ``R^t = Q diag(exp(i kappa_k t)) Q^{-1}`` of a rotation.

    The principal branch ``kappa_k in (-pi, pi]`` is used.  For a half-turn
    the eigenvalue ``-1`` is repeated and the eigenbasis is not unique, so the
    axis-angle form ``rot(axis, t * pi)`` is used instead.
    """
    r = np.asarray(r, dtype=float)
    if not _is_rotation(r):
        raise ValueError("input is not a rotation matrix (orthogonal, det +1)")
    vals, vecs = np.linalg.eig(r)
    kappa = np.angle(vals)
    if np.sum(np.abs(np.abs(kappa) - np.pi) < 1e-6) >= 2:
        axis, angle = _axis_angle(r)
        return axis_angle_matrix(axis, t * angle)
    out = vecs @ np.diag(np.exp(1j * kappa * t)) @ np.linalg.inv(vecs)
    out = np.real(out)
    if not _is_rotation(out, 1e-8):
        axis, angle = _axis_angle(r)
        return axis_angle_matrix(axis, t * angle)
    return out


@dataclass(frozen=True)
class RotationLaw:
    """Distribution of the random rotation of a transport model.

    The axis is either fixed or uniform on the sphere.  The rotation angle
    per unit time is von Mises distributed with mean ``mean_angle`` and
    concentration ``kappa``, or degenerate at ``mean_angle``.  Defaults:
    uniform axis, von Mises with mean 0.5 rad and ``kappa = 4``.

    ``n_samples`` and ``seed`` fix the Monte-Carlo draws used when the law
    defines a covariance function.
    """

    axis_distribution: str = "uniform"
    axis: tuple = (0.0, 0.0, 1.0)
    rate_distribution: str = "vonmises"
    mean_angle: float = 0.5
    kappa: float = 4.0
    n_samples: int = 400
    seed: int = 0

    def __post_init__(self):
        if self.axis_distribution not in ("uniform", "fixed"):
            raise InvalidParameterError("axis_distribution must be 'uniform' or 'fixed'")
        if self.rate_distribution not in ("vonmises", "degenerate"):
            raise InvalidParameterError(
                "rate_distribution must be 'vonmises' or 'degenerate'"
            )
        ax = np.asarray(self.axis, dtype=float)
        if ax.shape != (3,) or not np.linalg.norm(ax) > 0:
            raise InvalidParameterError("axis must be a nonzero 3-vector")
        object.__setattr__(self, "axis", tuple(float(v) for v in ax / np.linalg.norm(ax)))
        if self.rate_distribution == "vonmises" and not self.kappa >= 0:
            raise InvalidParameterError("κ ≥ 0")
        if not abs(self.mean_angle) <= np.pi:
            raise InvalidParameterError("mean_angle ∈ [-π,π]")
        if int(self.n_samples) < 1:
            raise InvalidParameterError("n_samples ≥ 1")

    @classmethod
    def identity(cls) -> "RotationLaw":
        return cls("fixed", (0.0, 0.0, 1.0), "degenerate", 0.0)

    @property
    def isotropic(self) -> bool:
        return self.axis_distribution == "uniform" or (
            self.rate_distribution == "degenerate" and self.mean_angle == 0.0
        )

    def sample_axis_angle(self, rng: np.random.Generator, size: int):
        if self.axis_distribution == "uniform":
            axes = rng.standard_normal((size, 3))
            axes /= np.linalg.norm(axes, axis=1, keepdims=True)
        else:
            axes = np.tile(np.asarray(self.axis), (size, 1))
        if self.rate_distribution == "vonmises":
            angles = rng.vonmises(self.mean_angle, self.kappa, size)
        else:
            angles = np.full(size, float(self.mean_angle))
        return axes, angles

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        axes, angles = self.sample_axis_angle(rng, size)
        return axis_angle_matrix(axes, angles)

    def to_component(self) -> Component:
        return Component(
            "RotationLaw",
            {
                "axis_distribution": self.axis_distribution,
                "axis": list(self.axis),
                "rate_distribution": self.rate_distribution,
                "mean_angle": self.mean_angle,
                "kappa": self.kappa,
                "n_samples": self.n_samples,
                "seed": self.seed,
            },
        )

    @classmethod
    def from_component(cls, comp: Component) -> "RotationLaw":
        if comp.tag != "RotationLaw":
            raise InvalidParameterError(f"law tag must be 'RotationLaw', got {comp.tag!r}")
        p = dict(comp.params)
        if "axis" in p:
            p["axis"] = tuple(p["axis"])
        return cls(**p)


def _law_of(spec: KernelSpec) -> RotationLaw:
    return RotationLaw.from_component(spec.components["law"])


def _require_spatial(spec: KernelSpec):
    report = validate_params(spec)
    if not report.ok:
        raise InvalidParameterError(f"{spec.family}: {report}")


def transport_covariance_mc(
    spatial_spec: KernelSpec,
    law: RotationLaw,
    a,
    b,
    u: float,
    n_samples: int = 1000,
    seed: int = 0,
) -> tuple[float, float]:
    """Monte-Carlo ``E psi_S(d(R^u a, b))`` and its standard error."""
    if n_samples < 100:
        raise ValueError("n_samples must be >= 100")
    _require_spatial(spatial_spec)
    xa = as_xyz(a)[0]
    xb = as_xyz(b)[0]
    rng = np.random.default_rng(seed)
    axes, angles = law.sample_axis_angle(rng, n_samples)
    moved = rotate(np.broadcast_to(xa, axes.shape), axes, u * angles)
    vals = evaluate(spatial_spec, geodesic_xyz(moved, xb[None, :]), 0.0, check=False)
    vals = np.atleast_1d(vals)
    # spread about the first draw so that identical draws give exactly zero
    spread = vals - vals[0]
    return float(vals.mean()), float(spread.std(ddof=1) / math.sqrt(n_samples))


def transport_cross_covariance(spec: KernelSpec, xa, ta, xb, tb) -> np.ndarray:
    """Covariance ``E psi_S(d(R^{t_i} s_i, R^{t_j} s_j))`` averaged over the
    law's fixed Monte-Carlo rotations (an exact average of PSD matrices)."""
    _require_spatial(spec)
    law = _law_of(spec)
    inner = spec.children[0]
    rng = np.random.default_rng(law.seed)
    axes, angles = law.sample_axis_angle(rng, int(law.n_samples))
    ta = np.asarray(ta, dtype=float)
    tb = np.asarray(tb, dtype=float)
    symmetric = xa.shape == xb.shape and np.array_equal(xa, xb) and np.array_equal(ta, tb)
    out = np.zeros((xa.shape[0], xb.shape[0]))
    if symmetric:
        iu = np.triu_indices(xa.shape[0])
        acc = np.zeros(iu[0].size)
        for axis, angle in zip(axes, angles):
            pa = rotate(xa, axis[None, :], ta * angle)
            dot = np.sum(pa[iu[0]] * pa[iu[1]], axis=1)
            acc += evaluate(inner, np.arccos(np.clip(dot, -1.0, 1.0)), 0.0, check=False)
        out[iu] = acc
        out.T[iu] = acc
        return out / len(angles)
    for axis, angle in zip(axes, angles):
        pa = rotate(xa, axis[None, :], ta * angle)
        pb = rotate(xb, axis[None, :], tb * angle)
        out += evaluate(inner, distance_matrix(pa, pb), 0.0, check=False)
    return out / len(angles)


def transport_kernel_value(spec: KernelSpec, d, u):
    """Isotropic transport kernel ``psi(d, u)`` for a uniform-axis law."""
    law = _law_of(spec)
    if not law.isotropic:
        raise InvalidParameterError(
            "a fixed-axis transport kernel is not geodesically isotropic; "
            "use cross_covariance or gram_matrix"
        )
    inner = spec.children[0]
    # a uniform axis makes R^-u and R^u equal in law, so the kernel is even in u
    d, u = np.broadcast_arrays(np.asarray(d, float), np.abs(np.asarray(u, float)))
    rng = np.random.default_rng(law.seed)
    axes, angles = law.sample_axis_angle(rng, int(law.n_samples))
    north = np.array([0.0, 0.0, 1.0])
    out = np.empty(d.shape)
    flat_d, flat_u, flat_out = d.ravel(), u.ravel(), out.reshape(-1)
    for lag in np.unique(flat_u):
        sel = flat_u == lag
        moved = rotate(np.broadcast_to(north, axes.shape), axes, lag * angles)
        b = np.stack(
            [np.sin(flat_d[sel]), np.zeros(sel.sum()), np.cos(flat_d[sel])], axis=1
        )
        dist = distance_matrix(moved, b)  # (samples, points)
        flat_out[sel] = evaluate(inner, dist, 0.0, check=False).mean(axis=0)
    return out


def transport_simulate(
    spatial_spec: KernelSpec, law: RotationLaw, sites, times, seed: int
) -> FieldSample:
    """Draw ``R`` from ``law`` and a spatial field ``X``; return ``X(R^t s)``."""
    _require_spatial(spatial_spec)
    x = as_xyz(sites)
    t = np.atleast_1d(np.asarray(times, dtype=float))
    rng = np.random.default_rng(seed)
    axes, angles = law.sample_axis_angle(rng, 1)
    pts = np.concatenate([rotate(x, axes, tj * angles[0]) for tj in t])
    uniq, inverse = np.unique(np.round(pts, 12), axis=0, return_inverse=True)
    inverse = inverse.ravel()
    if uniq.shape[0] > MAX_DENSE:
        raise ValueError(f"dense simulation limited to {MAX_DENSE} points")
    uniq = uniq / np.linalg.norm(uniq, axis=1, keepdims=True)
    cov = gram_matrix(spatial_spec, uniq, np.zeros(uniq.shape[0]))
    chol = cholesky_factor(cov, abs(spatial_spec.variance) or None)
    field_vals = chol @ rng.standard_normal(uniq.shape[0])
    z = field_vals[inverse].reshape(t.size, x.shape[0]).T
    return FieldSample(x, t, z, seed)
