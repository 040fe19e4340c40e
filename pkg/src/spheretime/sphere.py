"""Geometry on the unit sphere and the special functions built on it.

Coordinates
-----------
A :class:`SpherePoint` carries two angles ``(polar, azimuth)`` and the
great-circle distance between two points is evaluated with the classical
formula

    d = arccos(sin p1 sin p2 + cos p1 cos p2 cos|a1 - a2|)

taken literally.  That formula treats the first angle as an elevation from the
equatorial plane, so the embedding consistent with it is
``(cos p cos a, cos p sin a, sin p)``.  Everything downstream (kernels,
simulation, kriging) works on arrays of unit vectors of shape ``(n, 3)``; use
:func:`latlon_to_xyz` for geographic data covering the whole globe and
:func:`as_xyz` to convert any mix of inputs.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterator

import numpy as np

EARTH_RADIUS_KM = 6371.0

_TWO_PI = 2.0 * np.pi


class DomainError(ValueError):
    """Raised when an argument lies outside the domain of a special function."""


@dataclass(frozen=True)
class SpherePoint:
    """A location on the unit sphere.

    The azimuth is wrapped into ``[0, 2*pi)`` on construction; a polar angle
    outside ``[0, pi]`` is rejected.
    """

    polar: float
    azimuth: float

    def __post_init__(self):
        polar = float(self.polar)
        if not (0.0 <= polar <= np.pi) or not np.isfinite(polar):
            raise DomainError(f"polar angle {polar!r} outside [0, pi]")
        azimuth = float(self.azimuth) % _TWO_PI
        if azimuth >= _TWO_PI:
            azimuth = 0.0
        object.__setattr__(self, "polar", polar)
        object.__setattr__(self, "azimuth", azimuth)

    @property
    def unit_vector(self) -> np.ndarray:
        cp = np.cos(self.polar)
        return np.array(
            [cp * np.cos(self.azimuth), cp * np.sin(self.azimuth), np.sin(self.polar)]
        )


def as_xyz(points) -> np.ndarray:
    """Return an ``(n, 3)`` array of unit vectors.

    Accepts a single :class:`SpherePoint`, a sequence of them, or an array
    whose last axis has length 3 (rows are renormalised).
    """
    if isinstance(points, SpherePoint):
        return points.unit_vector[None, :]
    if isinstance(points, np.ndarray) and points.dtype != object:
        arr = np.atleast_2d(np.asarray(points, dtype=float))
        if arr.shape[-1] != 3:
            raise ValueError(f"expected (n, 3) array of unit vectors, got {arr.shape}")
        return arr / np.linalg.norm(arr, axis=-1, keepdims=True)
    seq = list(points)
    if not seq:
        return np.zeros((0, 3))
    if isinstance(seq[0], SpherePoint):
        return np.array([p.unit_vector for p in seq])
    return as_xyz(np.asarray(seq, dtype=float))


def latlon_to_xyz(lat, lon, degrees: bool = True) -> np.ndarray:
    """Geographic latitude/longitude to unit vectors, shape ``(..., 3)``."""
    lat = np.asarray(lat, dtype=float)
    lon = np.asarray(lon, dtype=float)
    if degrees:
        lat = np.deg2rad(lat)
        lon = np.deg2rad(lon)
    cl = np.cos(lat)
    return np.stack([cl * np.cos(lon), cl * np.sin(lon), np.sin(lat)], axis=-1)


def xyz_to_latlon(xyz, degrees: bool = True) -> tuple[np.ndarray, np.ndarray]:
    xyz = np.asarray(xyz, dtype=float)
    lat = np.arcsin(np.clip(xyz[..., 2], -1.0, 1.0))
    lon = np.mod(np.arctan2(xyz[..., 1], xyz[..., 0]), _TWO_PI)
    if degrees:
        return np.rad2deg(lat), np.rad2deg(lon)
    return lat, lon


def geodesic(a: SpherePoint, b: SpherePoint) -> float:
    """Great-circle distance in radians, in ``[0, pi]``."""
    cos_d = np.sin(a.polar) * np.sin(b.polar) + np.cos(a.polar) * np.cos(
        b.polar
    ) * np.cos(abs(a.azimuth - b.azimuth))
    return float(np.arccos(np.clip(cos_d, -1.0, 1.0)))


def chordal(a: SpherePoint, b: SpherePoint) -> float:
    """Straight-line distance through the ball, ``2 sin(d/2)``, in ``[0, 2]``."""
    return 2.0 * np.sin(0.5 * geodesic(a, b))


def geodesic_xyz(a, b) -> np.ndarray:
    """Elementwise great-circle distance between broadcastable unit-vector arrays."""
    dot = np.sum(np.asarray(a) * np.asarray(b), axis=-1)
    return np.arccos(np.clip(dot, -1.0, 1.0))


def distance_matrix(xa, xb=None) -> np.ndarray:
    """Pairwise great-circle distances between two sets of unit vectors."""
    xa = as_xyz(xa)
    xb = xa if xb is None else as_xyz(xb)
    return np.arccos(np.clip(xa @ xb.T, -1.0, 1.0))


def geodesic_to_chordal(d):
    return 2.0 * np.sin(0.5 * np.asarray(d, dtype=float))


def km_to_radians(km):
    return np.asarray(km, dtype=float) / EARTH_RADIUS_KM


def radians_to_km(rad):
    return np.asarray(rad, dtype=float) * EARTH_RADIUS_KM


def random_sites(n: int, rng: np.random.Generator) -> np.ndarray:
    """``n`` points drawn uniformly on the sphere."""
    v = rng.standard_normal((n, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def fibonacci_sites(n: int) -> np.ndarray:
    """Quasi-uniform spiral point set with ``n`` points."""
    i = np.arange(n) + 0.5
    z = 1.0 - 2.0 * i / n
    lon = np.pi * (1.0 + 5.0**0.5) * i
    r = np.sqrt(1.0 - z * z)
    return np.stack([r * np.cos(lon), r * np.sin(lon), z], axis=1)


@dataclass(frozen=True)
class LatLonGrid:
    """Regular latitude by longitude grid, latitude-major.

    ``lat`` holds geographic latitudes in radians (south to north), ``lon``
    the equally spaced longitudes ``j * 2*pi / n_lon``.
    """

    lat: np.ndarray
    n_lon: int
    lon: np.ndarray = field(init=False)

    def __post_init__(self):
        lat = np.asarray(self.lat, dtype=float)
        if lat.ndim != 1 or lat.size == 0:
            raise ValueError("lat must be a non-empty 1-D array")
        if np.any(np.abs(lat) > np.pi / 2 + 1e-12):
            raise DomainError("latitudes must lie in [-pi/2, pi/2]")
        if int(self.n_lon) < 1:
            raise ValueError("n_lon must be positive")
        object.__setattr__(self, "lat", lat)
        object.__setattr__(self, "n_lon", int(self.n_lon))
        object.__setattr__(self, "lon", np.arange(self.n_lon) * (_TWO_PI / self.n_lon))

    @classmethod
    def regular(cls, n_lat: int, n_lon: int) -> "LatLonGrid":
        """Cell-centred latitudes, e.g. 12 rows at -82.5, -67.5, ..., 82.5 degrees."""
        step = np.pi / n_lat
        lat = -np.pi / 2 + step * (np.arange(n_lat) + 0.5)
        return cls(lat, n_lon)

    @property
    def n_lat(self) -> int:
        return self.lat.size

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_lat, self.n_lon)

    @property
    def points(self) -> np.ndarray:
        """Unit vectors, shape ``(n_lat * n_lon, 3)``, latitude-major."""
        la, lo = np.meshgrid(self.lat, self.lon, indexing="ij")
        return latlon_to_xyz(la.ravel(), lo.ravel(), degrees=False)

    def __len__(self) -> int:
        return self.n_lat * self.n_lon


# ---------------------------------------------------------------------------
# polynomials


def _check_unit_interval(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if np.any(np.abs(x) > 1.0 + 1e-12):
        raise DomainError("argument outside [-1, 1]")
    return np.clip(x, -1.0, 1.0)


def legendre(k_max: int, x) -> np.ndarray:
    """Legendre polynomials ``P_0(x) ... P_kmax(x)``.

    Returns an array of shape ``(k_max + 1,) + x.shape``.
    """
    x = _check_unit_interval(x)
    out = np.empty((k_max + 1,) + x.shape)
    out[0] = 1.0
    if k_max >= 1:
        out[1] = x
    for k in range(2, k_max + 1):
        out[k] = ((2 * k - 1) * x * out[k - 1] - (k - 1) * out[k - 2]) / k
    return out


def gegenbauer_normalized(n: int, k_max: int, x) -> np.ndarray:
    """Gegenbauer polynomials of index ``(n-1)/2`` divided by their value at 1.

    ``n`` is the sphere dimension.  For ``n = 1`` these are the Chebyshev
    polynomials ``cos(k arccos x)``, for ``n = 2`` the Legendre polynomials.
    Shape of the result is ``(k_max + 1,) + x.shape``.
    """
    if n < 1:
        raise ValueError("sphere dimension must be >= 1")
    x = _check_unit_interval(x)
    lam = 0.5 * (n - 1)
    out = np.empty((k_max + 1,) + x.shape)
    out[0] = 1.0
    if k_max >= 1:
        out[1] = x
    # recurrence for C_k / C_k(1): c_k = (2(k+lam-1) x c_{k-1} - (k-1) c_{k-2}) / (k+2lam-1)
    for k in range(2, k_max + 1):
        out[k] = (2 * (k + lam - 1) * x * out[k - 1] - (k - 1) * out[k - 2]) / (
            k + 2 * lam - 1
        )
    return out


def harmonic_dimension(n: int, k) -> np.ndarray:
    """Dimension of the space of degree-``k`` spherical harmonics on S^n."""
    from scipy.special import comb

    k = np.asarray(k)
    if n == 1:
        return np.where(k == 0, 1, 2)
    return np.where(
        k == 0, 1, (2 * k + n - 1) * comb(k + n - 2, k, exact=False) / (n - 1)
    )


def sphere_area(n: int) -> float:
    """Surface measure of S^n: ``2 pi^((n+1)/2) / Gamma((n+1)/2)``."""
    from scipy.special import gamma

    return 2.0 * np.pi ** ((n + 1) / 2) / gamma((n + 1) / 2)


# ---------------------------------------------------------------------------
# spherical harmonics


def _polar_coords(xyz: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    cos_t = np.clip(xyz[:, 2], -1.0, 1.0)
    sin_t = np.sqrt(np.maximum(0.0, 1.0 - cos_t * cos_t))
    phi = np.arctan2(xyz[:, 1], xyz[:, 0])
    return cos_t, sin_t, phi


def iter_spherical_harmonics(k_max: int, points) -> Iterator[tuple[int, np.ndarray]]:
    """Yield ``(k, Y_k)`` with ``Y_k`` of shape ``(2k+1, n)`` for ``k = 0..k_max``.

    Rows of ``Y_k`` are ordered ``l = -k, ..., k``.  Only two degrees of
    associated Legendre values are held at a time, which keeps memory linear
    in the number of points.
    """
    xyz = as_xyz(points)
    cos_t, sin_t, phi = _polar_coords(xyz)
    npts = xyz.shape[0]
    # prev1[m] = Pbar_{k-1}^m, prev2[m] = Pbar_{k-2}^m
    prev2 = np.zeros((k_max + 1, npts))
    prev1 = np.zeros((k_max + 1, npts))
    sqrt2 = np.sqrt(2.0)
    for k in range(k_max + 1):
        cur = np.zeros((k_max + 1, npts))
        if k == 0:
            cur[0] = 1.0 / np.sqrt(4.0 * np.pi)
        else:
            m = np.arange(k - 1)
            if m.size:
                kk = float(k)
                a = np.sqrt((4 * kk * kk - 1) / (kk * kk - m * m))
                b = np.sqrt(((kk - 1) ** 2 - m * m) / (4 * (kk - 1) ** 2 - 1))
                cur[: k - 1] = a[:, None] * (
                    cos_t * prev1[: k - 1] - b[:, None] * prev2[: k - 1]
                )
            cur[k - 1] = np.sqrt(2 * k + 1) * cos_t * prev1[k - 1]
            cur[k] = np.sqrt((2 * k + 1) / (2 * k)) * sin_t * prev1[k - 1]
        Y = np.empty((2 * k + 1, npts))
        Y[k] = cur[0]
        for m in range(1, k + 1):
            Y[k + m] = sqrt2 * cur[m] * np.cos(m * phi)
            Y[k - m] = sqrt2 * cur[m] * np.sin(m * phi)
        yield k, Y
        prev2, prev1 = prev1, cur


def spherical_harmonics(k_max: int, points) -> np.ndarray:
    """Real orthonormal spherical harmonics up to degree ``k_max``.

    Returns an array of shape ``((k_max+1)**2, n)``; the row of ``(k, l)`` is
    ``k*k + k + l`` for ``l`` in ``[-k, k]``.
    """
    return np.concatenate([Y for _, Y in iter_spherical_harmonics(k_max, points)], axis=0)


def harmonic_index(k: int, l: int) -> int:
    if abs(l) > k:
        raise IndexError(f"order {l} out of range for degree {k}")
    return k * k + k + l


# ---------------------------------------------------------------------------
# quadrature


@dataclass(frozen=True)
class QuadratureRule:
    nodes: np.ndarray
    weights: np.ndarray

    def integrate(self, values) -> np.ndarray:
        """Apply the rule along the last axis of ``values``."""
        return np.asarray(values) @ self.weights

    def __len__(self) -> int:
        return self.nodes.size


@lru_cache(maxsize=64)
def _gauss_legendre_cached(m: int) -> tuple[np.ndarray, np.ndarray]:
    # Newton iteration on P_m from the Tricomi-type initial guess
    i = np.arange(1, m + 1)
    x = np.cos(np.pi * (i - 0.25) / (m + 0.5))
    for _ in range(100):
        p0 = np.ones_like(x)
        p1 = x.copy()
        for k in range(2, m + 1):
            p0, p1 = p1, ((2 * k - 1) * x * p1 - (k - 1) * p0) / k
        dp = m * (x * p1 - p0) / (x * x - 1.0)
        step = p1 / dp
        x = x - step
        if np.max(np.abs(step)) < 1e-16:
            break
    p0 = np.ones_like(x)
    p1 = x.copy()
    for k in range(2, m + 1):
        p0, p1 = p1, ((2 * k - 1) * x * p1 - (k - 1) * p0) / k
    dp = m * (x * p1 - p0) / (x * x - 1.0)
    w = 2.0 / ((1.0 - x * x) * dp * dp)
    order = np.argsort(x)
    x, w = x[order], w[order]
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


def gauss_legendre(m: int) -> QuadratureRule:
    """``m``-point Gauss-Legendre rule on ``[-1, 1]``, exact to degree ``2m - 1``."""
    m = int(m)
    if m < 1:
        raise ValueError("m must be >= 1")
    if m == 1:
        return QuadratureRule(np.array([0.0]), np.array([2.0]))
    x, w = _gauss_legendre_cached(m)
    return QuadratureRule(x, w)


def default_quad_order(k_max: int) -> int:
    return max(256, 4 * int(k_max))


def gauss_jacobi_symmetric(m: int, a: float) -> QuadratureRule:
    """Rule for weight ``(1 - x^2)^a`` on ``[-1, 1]`` (scipy backed)."""
    from scipy.special import roots_jacobi

    x, w = roots_jacobi(int(m), a, a)
    return QuadratureRule(np.asarray(x), np.asarray(w))


def monomial_integral(p: int) -> float:
    """Exact integral of ``x**p`` over ``[-1, 1]``."""
    return 0.0 if p % 2 else 2.0 / (p + 1)
