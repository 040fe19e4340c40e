"""Gridded VAR(1) dynamics with axially symmetric spectral innovations.

On a regular latitude-longitude grid the model is

    Z_t = diag(phi) Z_{t-1} + eps_t,

with innovations that are stationary in longitude.  Their longitude DFT
``X_t(k; lat)`` is independent across wavenumbers, with spectrum
``f(k; lat)`` per latitude ring and complex correlation ``rho(k; lat, lat')``
between rings at the same wavenumber.  The covariance is therefore block
circulant and is stored as ``N_lat x N_lat`` blocks per wavenumber.

Estimation is step-wise: per-site AR(1) coefficients, then per-latitude
spectra by Whittle likelihood (exact for a circulant ring), then the
coherence parameters by a pairwise complex-Gaussian likelihood over
adjacent latitudes.

The spectrum family is

    f(k) = sigma2 * s(k) / mean_k s(k),   s(k) = (alpha^2 + 4 sin^2(pi k / N))^(-nu),

so ``sigma2`` is the marginal variance of the ring and ``nu = 0`` is white
noise.  Coherence is ``c exp(-|lat - lat'| / L) (1 + k~)^(-gamma)`` with
``k~ = min(k, N - k)`` and ``0 <= c < 1``, which is positive semidefinite for
every ``k``.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import chi2

from .fit import NMSettings, _from_free, _to_free, nelder_mead
from .kernels import KernelSpec, gram_matrix
from .sphere import LatLonGrid

FORMAT_VERSION = 1
NU_BOUNDS = (0.0, 10.0)
ALPHA_BOUNDS = (1e-3, 50.0)
POLE_EXCLUSION_DEG = 85.0


@dataclass
class GridSeries:
    """Values on ``grid`` at regularly spaced ``times``, shape (lat, lon, time)."""

    grid: LatLonGrid
    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.times = np.atleast_1d(np.asarray(self.times, dtype=float))
        self.values = np.asarray(self.values, dtype=float)
        expected = self.grid.shape + (self.times.size,)
        if self.values.shape != expected:
            raise ValueError(f"values shape {self.values.shape}, expected {expected}")
        if self.times.size > 2:
            steps = np.diff(self.times)
            if not np.allclose(steps, steps[0], rtol=1e-9, atol=1e-12):
                raise ValueError("times must be regularly spaced")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("values must be finite")

    @property
    def n_times(self) -> int:
        return self.times.size


# ---------------------------------------------------------------------------
# detrending and temporal dynamics


def detrend(series: GridSeries, period: int, mode: str = "phase"):
    """Remove a per-site periodic or block mean.

    ``mode="phase"`` subtracts, for each site, the mean over all time steps
    sharing the same phase ``t mod period`` (a climatology).  ``mode="block"``
    subtracts the mean of consecutive blocks of ``period`` steps (a trailing
    partial block is averaged on its own).

    Returns
    -------
    anomalies : GridSeries
    trend : ndarray, shape (lat, lon, time)
    """
    period = int(period)
    if period < 1 or period > series.n_times:
        raise ValueError(f"period {period} outside 1..{series.n_times}")
    v = series.values
    idx = np.arange(series.n_times)
    trend = np.empty_like(v)
    if mode == "phase":
        for p in range(period):
            sel = idx % period == p
            trend[..., sel] = v[..., sel].mean(axis=-1, keepdims=True)
    elif mode == "block":
        for start in range(0, series.n_times, period):
            sl = slice(start, start + period)
            trend[..., sl] = v[..., sl].mean(axis=-1, keepdims=True)
    else:
        raise ValueError("mode must be 'phase' or 'block'")
    return GridSeries(series.grid, series.times, v - trend), trend


@dataclass
class ARFit:
    coeffs: np.ndarray
    flagged: np.ndarray


def fit_temporal_ar(anomalies: GridSeries, clamp: float = 0.999) -> ARFit:
    """Per-site Yule-Walker AR(1) coefficients; zero-variance sites are flagged
    and given coefficient 0."""
    if anomalies.n_times < 3:
        raise ValueError("at least 3 time steps are needed")
    x = anomalies.values - anomalies.values.mean(axis=-1, keepdims=True)
    denom = np.sum(x * x, axis=-1)
    num = np.sum(x[..., 1:] * x[..., :-1], axis=-1)
    flagged = denom <= 1e-300
    with np.errstate(invalid="ignore", divide="ignore"):
        phi = np.where(flagged, 0.0, num / np.where(flagged, 1.0, denom))
    return ARFit(np.clip(phi, -clamp, clamp), flagged)


def innovations(anomalies: GridSeries, ar_coeffs) -> GridSeries:
    """``eps_t = Z_t - phi Z_{t-1}`` for ``t = 1 .. T-1``."""
    phi = np.asarray(ar_coeffs, dtype=float)[..., None]
    v = anomalies.values
    return GridSeries(anomalies.grid, anomalies.times[1:], v[..., 1:] - phi * v[..., :-1])


# ---------------------------------------------------------------------------
# spectral analysis


def longitudinal_fft(series: GridSeries) -> np.ndarray:
    """DFT along longitude; shape (lat, wavenumber, time), numpy convention
    ``X_k = sum_j x_j exp(-2 pi i j k / N)``."""
    if not isinstance(series, GridSeries):
        raise TypeError("longitudinal_fft needs a GridSeries on a regular grid")
    return np.fft.fft(series.values, axis=1)


def periodogram(spectral: np.ndarray) -> np.ndarray:
    """``|X_k|^2 / N`` averaged over time; shape (lat, wavenumber)."""
    n = spectral.shape[1]
    return np.mean(np.abs(spectral) ** 2, axis=-1) / n


def spectrum_shape(n_lon: int, alpha: float, nu: float) -> np.ndarray:
    k = np.arange(n_lon)
    s = (alpha * alpha + 4.0 * np.sin(np.pi * k / n_lon) ** 2) ** (-nu)
    return s / s.mean()


def spectrum_values(params, n_lon: int) -> np.ndarray:
    """``f(k)`` for ``params = (sigma2, alpha, nu)``."""
    sigma2, alpha, nu = params
    return sigma2 * spectrum_shape(n_lon, alpha, nu)


@dataclass
class SpectrumFit:
    """Fitted ``(sigma2, alpha, nu)`` of one latitude ring.

    ``loglik`` is the Whittle log likelihood summed over time replicates.
    """

    params: np.ndarray
    loglik: float
    converged: bool
    trace: list[float]
    white: bool = False


def _whittle(ibar, n_rep, alpha, nu):
    g = spectrum_shape(ibar.size, alpha, nu)
    sigma2 = float(np.mean(ibar / g))
    f = sigma2 * g
    val = -0.5 * n_rep * (
        ibar.size * math.log(2 * math.pi) + np.sum(np.log(f)) + np.sum(ibar / f)
    )
    return val, sigma2


def fit_spectrum(spectral: np.ndarray, latitude_index: int, white_level: float | None = 0.95) -> SpectrumFit:
    """Whittle fit of the spectrum family on one latitude ring.

    ``sigma2`` is profiled out in closed form; ``(alpha, nu)`` are found by
    Nelder-Mead on a logit scale inside ``ALPHA_BOUNDS`` and ``NU_BOUNDS``.
    On a circulant ring the Whittle likelihood equals the exact Gaussian one.

    A flat spectrum is reached both at ``nu = 0`` and as ``alpha`` grows, so
    on white data ``nu`` alone is not identified.  When the likelihood-ratio
    statistic against the white model (``nu = 0``) is below the chi-square(2)
    quantile at ``white_level``, the white model is returned with
    ``white=True``.  Pass ``white_level=None`` to keep the raw maximizer.
    """
    ring = spectral[latitude_index]
    n_rep = ring.shape[-1]
    if n_rep < 2:
        raise ValueError("at least 2 time replicates are needed")
    ibar = np.mean(np.abs(ring) ** 2, axis=-1) / ring.shape[0]
    if not np.all(ibar > 0):
        ibar = np.maximum(ibar, 1e-300)
    nu_lo, nu_hi = NU_BOUNDS
    a_lo, a_hi = ALPHA_BOUNDS

    def unpack(y):
        return _from_free(y[0], a_lo, a_hi), _from_free(y[1], nu_lo, nu_hi)

    def objective(y):
        alpha, nu = unpack(y)
        return _whittle(ibar, n_rep, alpha, nu)[0]

    best = None
    for a0, n0 in ((1.0, 0.05), (0.3, 1.0), (3.0, 2.0)):
        y0 = np.array([_to_free(a0, a_lo, a_hi), _to_free(n0, nu_lo, nu_hi)])
        res = nelder_mead(objective, y0, NMSettings(max_iter=800, tol=1e-7, initial_step=0.5))
        if best is None or res.value > best.value:
            best = res
    alpha, nu = unpack(best.x)
    val, sigma2 = _whittle(ibar, n_rep, alpha, nu)
    if white_level is not None:
        val0, sigma0 = _whittle(ibar, n_rep, 1.0, 0.0)
        if 2.0 * (val - val0) < chi2.ppf(white_level, 2):
            return SpectrumFit(np.array([sigma0, 1.0, 0.0]), float(val0), best.converged, best.trace, True)
    return SpectrumFit(np.array([sigma2, alpha, nu]), float(val), best.converged, best.trace)


# ---------------------------------------------------------------------------
# coherence


def coherence_matrix(params, lat: np.ndarray, k: int, n_lon: int) -> np.ndarray:
    """Cross-latitude correlation of the wavenumber-``k`` coefficients."""
    c, length, gamma = params
    kt = min(k % n_lon, (-k) % n_lon)
    dl = np.abs(lat[:, None] - lat[None, :])
    r = c * np.exp(-dl / length) * (1.0 + kt) ** (-gamma)
    np.fill_diagonal(r, 1.0)
    return r


def psd_project(mat: np.ndarray, tol: float = 1e-8):
    """Clip negative eigenvalues and rescale to unit diagonal.

    Returns ``(matrix, projected)``.
    """
    vals, vecs = np.linalg.eigh(mat)
    if vals.min() >= -tol:
        return mat, False
    fixed = (vecs * np.clip(vals, 0.0, None)) @ vecs.T
    dn = np.sqrt(np.diag(fixed))
    return fixed / np.outer(dn, dn), True


@dataclass
class CoherenceFit:
    params: np.ndarray
    loglik: float
    n_pairs: int
    converged: bool
    boundary: bool
    projected: bool
    trace: list[float]
    independent: bool = False


def _coherence_terms(w1, w2, real_mask, rho):
    """Pairwise log density of standardized coefficient pairs with correlation ``rho``."""
    one = 1.0 - rho * rho
    cross = np.real(w1 * np.conj(w2))
    a = np.abs(w1) ** 2 + np.abs(w2) ** 2
    complex_ll = -2 * math.log(math.pi) - np.log(one) - (a - 2 * rho * cross) / one
    real_ll = -math.log(2 * math.pi) - 0.5 * np.log(one) - 0.5 * (a - 2 * rho * cross) / one
    return np.where(real_mask, real_ll, complex_ll)


def _standardized_pairs(spectral, spectra, lat_deg):
    n_lat, n_lon, _ = spectral.shape
    keep = np.flatnonzero(np.abs(lat_deg) <= POLE_EXCLUSION_DEG)
    kmax = n_lon // 2
    ks = np.arange(kmax + 1)
    real_k = (ks == 0) | ((n_lon % 2 == 0) & (ks == n_lon // 2))
    w = spectral[:, : kmax + 1, :] / np.sqrt(n_lon * spectra[:, : kmax + 1, None])
    # real coefficients (k = 0, N/2) have unit variance, complex ones E|w|^2 = 1
    pairs = [(a, b) for a, b in zip(keep[:-1], keep[1:]) if b == a + 1]
    return w, pairs, ks, real_k


def fit_coherence(
    spectral: np.ndarray, spectra: np.ndarray, lat: np.ndarray, null_level: float | None = 0.95
) -> CoherenceFit:
    """Estimate ``(c, L, gamma)`` from adjacent-latitude coefficient pairs.

    Parameters
    ----------
    spectral : (lat, wavenumber, time) complex array
    spectra : (lat, wavenumber) fitted ``f(k; lat)``
    lat : latitudes in radians

    Rings poleward of 85 degrees are excluded.  The fit is flagged
    ``boundary`` when ``c`` approaches 1 or ``L`` its upper bound.

    With ``c = 0`` the parameters ``L`` and ``gamma`` are not identified.
    When the likelihood-ratio statistic against independent rings is below
    the chi-square(1) quantile at ``null_level``, ``c = 0`` is returned with
    ``independent=True``; ``None`` keeps the raw maximizer.
    """
    lat = np.asarray(lat, dtype=float)
    if lat.size < 2:
        raise ValueError("at least two latitudes are needed")
    if spectral.shape[-1] < 2:
        raise ValueError("at least two time replicates are needed")
    w, pairs, ks, real_k = _standardized_pairs(spectral, spectra, np.degrees(lat))
    if not pairs:
        raise ValueError("no adjacent latitude pairs outside the polar caps")
    ia = np.array([p[0] for p in pairs])
    ib = np.array([p[1] for p in pairs])
    dlat = np.abs(lat[ib] - lat[ia])
    w1 = w[ia]  # (pairs, k, t)
    w2 = w[ib]
    n_lon = spectral.shape[1]
    kt = np.minimum(ks, n_lon - ks)
    real_mask = np.broadcast_to(real_k[None, :, None], w1.shape)
    l_hi = 100.0 * max(float(np.ptp(lat)), 1e-3)
    bounds = ((0.0, 1.0 - 1e-9), (1e-4, l_hi), (0.0, 10.0))

    def unpack(y):
        return [_from_free(v, lo, hi) for v, (lo, hi) in zip(y, bounds)]

    def loglik(params):
        c, length, gamma = params
        rho = c * np.exp(-dlat / length)[:, None, None] * ((1.0 + kt) ** (-gamma))[None, :, None]
        return float(np.sum(_coherence_terms(w1, w2, real_mask, rho)))

    best = None
    for start in ((0.3, 0.05 * l_hi, 0.5), (0.8, 0.1 * l_hi, 0.1)):
        start = [min(max(s, lo * 1.01 + 1e-12), hi * 0.99) for s, (lo, hi) in zip(start, bounds)]
        y0 = np.array([_to_free(s, lo, hi) for s, (lo, hi) in zip(start, bounds)])
        res = nelder_mead(lambda y: loglik(unpack(y)), y0, NMSettings(max_iter=1500, tol=1e-7, initial_step=0.5))
        if best is None or res.value > best.value:
            best = res
    params = np.array(unpack(best.x))
    independent = False
    if null_level is not None:
        ll0 = loglik((0.0, params[1], params[2]))
        if 2.0 * (best.value - ll0) < chi2.ppf(null_level, 1):
            params[0] = 0.0
            independent = True
    projected = False
    for k in range(n_lon):
        _, flag = psd_project(coherence_matrix(params, lat, k, n_lon))
        projected = projected or flag
    boundary = params[0] > 0.99 or params[1] > 0.9 * l_hi
    return CoherenceFit(
        params, loglik(params), int(w1.shape[0] * w1.shape[1] * w1.shape[2]),
        best.converged, bool(boundary), projected, best.trace, independent,
    )


# ---------------------------------------------------------------------------
# model


def evolutionary_spectrum(bank1, bank2, mixing, k: int, lat_index: int, lon_index: int) -> float:
    """``f_1(k; lat) b + f_2(k; lat) (1 - b)`` with ``b = mixing[lat, lon]``.

    ``bank1`` and ``bank2`` are ``(lat, 3)`` arrays of spectrum parameters.
    """
    b = float(np.asarray(mixing)[lat_index, lon_index])
    if not 0.0 <= b <= 1.0:
        raise ValueError("mixing weight must lie in [0, 1]")
    n_lon = np.asarray(mixing).shape[1]
    f1 = spectrum_values(np.asarray(bank1)[lat_index], n_lon)[k % n_lon]
    f2 = spectrum_values(np.asarray(bank2)[lat_index], n_lon)[k % n_lon]
    if b == 1.0:
        return float(f1)
    if b == 0.0:
        return float(f2)
    return float(f1 * b + f2 * (1.0 - b))


@dataclass
class DynSpecModel:
    """Fitted or prescribed VAR(1)-spectral model.

    Attributes
    ----------
    grid : LatLonGrid
    ar_coeffs : (lat, lon) array in (-1, 1)
    spectrum_params : (lat, 3) array of ``(sigma2, alpha, nu)``
    coherence_params : ``(c, L, gamma)``; ``c = 0`` means independent rings
    mixing : optional (lat, lon) weights ``b_land`` in [0, 1]
    spectrum_params2 : second spectrum bank used with ``mixing``
    """

    grid: LatLonGrid
    ar_coeffs: np.ndarray
    spectrum_params: np.ndarray
    coherence_params: np.ndarray = field(default_factory=lambda: np.array([0.0, 1.0, 0.0]))
    mixing: np.ndarray | None = None
    spectrum_params2: np.ndarray | None = None

    def __post_init__(self):
        self.ar_coeffs = np.asarray(self.ar_coeffs, dtype=float)
        self.spectrum_params = np.asarray(self.spectrum_params, dtype=float)
        self.coherence_params = np.asarray(self.coherence_params, dtype=float)
        if self.ar_coeffs.shape != self.grid.shape:
            raise ValueError("ar_coeffs must have the grid shape")
        if np.any(np.abs(self.ar_coeffs) >= 1):
            raise ValueError("AR coefficients must lie in (-1, 1)")
        if self.spectrum_params.shape != (self.grid.n_lat, 3):
            raise ValueError("spectrum_params must have shape (n_lat, 3)")
        if np.any(self.spectrum_params[:, 0] <= 0) or np.any(self.spectrum_params[:, 1] <= 0):
            raise ValueError("spectrum sigma2 and alpha must be positive")
        c, length, _ = self.coherence_params
        if not (0 <= c < 1 and length > 0):
            raise ValueError("coherence needs 0 <= c < 1 and L > 0")
        if self.mixing is not None:
            self.mixing = np.asarray(self.mixing, dtype=float)
            if self.mixing.shape != self.grid.shape or np.any(
                (self.mixing < 0) | (self.mixing > 1)
            ):
                raise ValueError("mixing must be a (lat, lon) field in [0, 1]")
            if self.spectrum_params2 is None:
                raise ValueError("mixing requires a second spectrum bank")
            self.spectrum_params2 = np.asarray(self.spectrum_params2, dtype=float)

    @property
    def n_lon(self) -> int:
        return self.grid.n_lon

    def spectra(self, bank: int = 1) -> np.ndarray:
        params = self.spectrum_params if bank == 1 else self.spectrum_params2
        return np.array([spectrum_values(p, self.n_lon) for p in params])

    def local_spectra(self) -> np.ndarray:
        """``f(k; lat, lon)``, shape (lat, lon, wavenumber)."""
        f1 = self.spectra(1)[:, None, :]
        if self.mixing is None:
            return np.broadcast_to(f1, self.grid.shape + (self.n_lon,))
        f2 = self.spectra(2)[:, None, :]
        b = self.mixing[..., None]
        return f1 * b + f2 * (1 - b)

    def coherence(self, k: int) -> np.ndarray:
        return coherence_matrix(self.coherence_params, self.grid.lat, k, self.n_lon)

    def n_spectral_params(self) -> int:
        n = self.spectrum_params.size
        if self.mixing is not None:
            n += self.spectrum_params2.size
        if self.coherence_params[0] > 0:
            n += 3
        return n

    def innovation_covariance(self, lat_idx, lon_idx) -> np.ndarray:
        """Dense innovation covariance between the listed sites.

        ``Cov(eps(i, a), eps(j, b)) = (1/N) sum_k exp(2 pi i (a - b) k / N)
        sqrt(f_i(k, a) f_j(k, b)) rho_k(i, j)``.
        """
        lat_idx = np.asarray(lat_idx)
        lon_idx = np.asarray(lon_idx)
        n = self.n_lon
        f = self.local_spectra()[lat_idx, lon_idx]  # (m, k)
        sq = np.sqrt(f)
        ks = np.arange(n)
        phase = np.exp(2j * np.pi * np.outer(lon_idx, ks) / n)  # (m, k)
        cov = np.zeros((lat_idx.size, lat_idx.size))
        for k in range(n):
            rho = self.coherence(k)[np.ix_(lat_idx, lat_idx)]
            a = phase[:, k] * sq[:, k]
            cov += np.real(np.outer(a, np.conj(a))) * rho
        return cov / n

    # -- serialization -----------------------------------------------------

    def to_text(self) -> str:
        data = {
            "format_version": FORMAT_VERSION,
            "lat": self.grid.lat.tolist(),
            "n_lon": self.grid.n_lon,
            "ar_coeffs": self.ar_coeffs.tolist(),
            "spectrum_params": self.spectrum_params.tolist(),
            "coherence_params": self.coherence_params.tolist(),
            "mixing": None if self.mixing is None else self.mixing.tolist(),
            "spectrum_params2": (
                None if self.spectrum_params2 is None else self.spectrum_params2.tolist()
            ),
        }
        return json.dumps(data, indent=1)

    @classmethod
    def from_text(cls, text: str) -> "DynSpecModel":
        data = json.loads(text)
        if data.get("format_version") != FORMAT_VERSION:
            raise ValueError(f"unsupported model format {data.get('format_version')!r}")
        grid = LatLonGrid(np.array(data["lat"]), int(data["n_lon"]))
        return cls(
            grid,
            np.array(data["ar_coeffs"]),
            np.array(data["spectrum_params"]),
            np.array(data["coherence_params"]),
            None if data["mixing"] is None else np.array(data["mixing"]),
            None if data["spectrum_params2"] is None else np.array(data["spectrum_params2"]),
        )


# ---------------------------------------------------------------------------
# simulation


def _hermitian_noise(rng, n_lat: int, n_lon: int, chol: list[np.ndarray]) -> np.ndarray:
    """Unit-variance coefficients W[lat, k] with W[:, N-k] = conj(W[:, k]) and
    cross-latitude correlation ``chol[k] @ chol[k].T``."""
    w = np.zeros((n_lat, n_lon), dtype=complex)
    half = n_lon // 2
    for k in range(half + 1):
        is_real = k == 0 or (n_lon % 2 == 0 and k == half)
        if is_real:
            w[:, k] = chol[k] @ rng.standard_normal(n_lat)
        else:
            z = (rng.standard_normal(n_lat) + 1j * rng.standard_normal(n_lat)) / math.sqrt(2)
            w[:, k] = chol[k] @ z
            w[:, n_lon - k] = np.conj(w[:, k])
    return w


def _coherence_factors(model: DynSpecModel) -> list[np.ndarray]:
    out = []
    for k in range(model.n_lon):
        r, _ = psd_project(model.coherence(k))
        vals, vecs = np.linalg.eigh(r)
        out.append(vecs * np.sqrt(np.clip(vals, 0, None)))
    return out


def synthesize_innovations(model: DynSpecModel, n_steps: int, rng) -> np.ndarray:
    """Innovation fields, shape (lat, lon, n_steps)."""
    n_lat, n_lon = model.grid.shape
    chol = _coherence_factors(model)
    out = np.empty((n_lat, n_lon, n_steps))
    if model.mixing is None:
        amp = np.sqrt(n_lon * model.spectra(1))  # (lat, k)
        for t in range(n_steps):
            w = _hermitian_noise(rng, n_lat, n_lon, chol)
            out[..., t] = np.real(np.fft.ifft(amp * w, axis=1))
        return out
    f = model.local_spectra()  # (lat, lon, k)
    ks = np.arange(n_lon)
    basis = np.exp(2j * np.pi * np.outer(ks, ks) / n_lon) / math.sqrt(n_lon)  # (lon a, k)
    for t in range(n_steps):
        w = _hermitian_noise(rng, n_lat, n_lon, chol)
        for i in range(n_lat):
            out[i, :, t] = np.real((basis * np.sqrt(f[i])) @ w[i])
    return out


def burn_in_length(ar_coeffs) -> int:
    """``10 * max(10, ceil(-1 / log max|phi|))`` steps."""
    m = float(np.max(np.abs(ar_coeffs))) if np.size(ar_coeffs) else 0.0
    memory = 10 if m <= 0 else max(10, math.ceil(-1.0 / math.log(m)))
    return 10 * memory


def simulate_var(model: DynSpecModel, n_steps: int, seed: int, dt: float = 1.0) -> GridSeries:
    """Iterate ``Z_t = diag(phi) Z_{t-1} + eps_t`` from zero after a burn-in."""
    rng = np.random.default_rng(seed)
    burn = burn_in_length(model.ar_coeffs)
    eps = synthesize_innovations(model, n_steps + burn, rng)
    z = np.zeros(model.grid.shape)
    out = np.empty(model.grid.shape + (n_steps,))
    for t in range(n_steps + burn):
        z = model.ar_coeffs * z + eps[..., t]
        if t >= burn:
            out[..., t - burn] = z
    return GridSeries(model.grid, dt * np.arange(n_steps), out)


# ---------------------------------------------------------------------------
# likelihood


@dataclass
class LoglikResult:
    """Log likelihood of the innovations given the first time step.

    ``normalized`` divides by the number of observations ``n_obs``; ``bic`` is
    ``n_params log(n_obs) - 2 loglik``.
    """

    loglik: float
    n_obs: int
    n_params: int

    @property
    def normalized(self) -> float:
        return self.loglik / self.n_obs

    @property
    def bic(self) -> float:
        return self.n_params * math.log(self.n_obs) - 2.0 * self.loglik


def _region_index(grid: LatLonGrid, region):
    if region is None:
        lat_r, lon_r = range(grid.n_lat), range(grid.n_lon)
    else:
        i0, i1, j0, j1 = region
        lat_r, lon_r = range(i0, i1), range(j0, j1)
    ii, jj = np.meshgrid(np.array(lat_r, dtype=int), np.array(lon_r, dtype=int), indexing="ij")
    if ii.size == 0 or np.any(ii >= grid.n_lat) or np.any(jj >= grid.n_lon) or np.any(ii < 0) or np.any(jj < 0):
        raise ValueError("region is empty or outside the grid")
    return ii.ravel(), jj.ravel()


def _gauss_loglik(cov: np.ndarray, x: np.ndarray) -> float:
    """Sum over columns of ``x`` of the zero-mean Gaussian log density."""
    chol = np.linalg.cholesky(cov)
    sol = np.linalg.solve(chol, x)
    logdet = 2.0 * np.sum(np.log(np.diag(chol)))
    n, m = x.shape
    return float(-0.5 * (m * (n * math.log(2 * math.pi) + logdet) + np.sum(sol * sol)))


def spectral_loglik(model: DynSpecModel, eps: GridSeries) -> float:
    """Exact full-grid log likelihood via the block-circulant structure
    (requires a longitude-stationary model)."""
    if model.mixing is not None:
        raise ValueError("spectral evaluation needs a longitude-stationary model")
    x = longitudinal_fft(eps)  # (lat, k, t)
    n_lat, n_lon, n_t = x.shape
    f = model.spectra(1)
    total = 0.0
    for k in range(n_lon):
        sq = np.sqrt(f[:, k])
        m = model.coherence(k) * np.outer(sq, sq)
        chol = np.linalg.cholesky(m)
        logdet = 2.0 * np.sum(np.log(np.diag(chol)))
        sol = np.linalg.solve(chol, x[:, k, :])
        total += n_t * logdet + np.sum(np.abs(sol) ** 2) / n_lon
    return float(-0.5 * (n_t * n_lat * n_lon * math.log(2 * math.pi) + total))


def model_loglik(model: DynSpecModel, anomalies: GridSeries, region=None, method: str = "auto") -> LoglikResult:
    """Gaussian log likelihood of the VAR(1) innovations on a region.

    Parameters
    ----------
    region : (lat_start, lat_stop, lon_start, lon_stop) index box or None
    method : ``"dense"``, ``"spectral"`` (full grid only) or ``"auto"``
    """
    eps = innovations(anomalies, model.ar_coeffs)
    ii, jj = _region_index(model.grid, region)
    n_obs = ii.size * eps.n_times
    full = region is None or ii.size == model.grid.n_lat * model.grid.n_lon
    use_spectral = method == "spectral" or (method == "auto" and full and model.mixing is None)
    if use_spectral:
        if not full:
            raise ValueError("spectral evaluation is only available on the full grid")
        ll = spectral_loglik(model, eps)
    else:
        cov = model.innovation_covariance(ii, jj)
        ll = _gauss_loglik(cov, eps.values[ii, jj, :])
    return LoglikResult(ll, n_obs, model.n_spectral_params())


def kernel_region_loglik(spec: KernelSpec, eps: GridSeries, region=None, n_params: int = 3) -> LoglikResult:
    """Innovations treated as independent in time with spatial covariance
    ``psi(d, 0)``, for comparison with the spectral model."""
    ii, jj = _region_index(eps.grid, region)
    pts = eps.grid.points.reshape(eps.grid.n_lat, eps.grid.n_lon, 3)[ii, jj]
    cov = gram_matrix(spec, pts, np.zeros(ii.size))
    ll = _gauss_loglik(cov + 1e-10 * abs(spec.variance) * np.eye(ii.size), eps.values[ii, jj, :])
    return LoglikResult(ll, ii.size * eps.n_times, n_params)


# ---------------------------------------------------------------------------
# pipeline


@dataclass
class PipelineResult:
    model: DynSpecModel
    anomalies: GridSeries
    ar: ARFit
    spectrum_fits: list[SpectrumFit]
    coherence_fit: CoherenceFit | None


def fit_pipeline(series: GridSeries, period: int | None = None, coherence: bool = True) -> PipelineResult:
    """Step-wise estimation: detrend, AR(1), spectra, coherence."""
    anomalies = detrend(series, period)[0] if period else series
    ar = fit_temporal_ar(anomalies)
    eps = innovations(anomalies, ar.coeffs)
    spec_arr = longitudinal_fft(eps)
    fits = [fit_spectrum(spec_arr, i) for i in range(series.grid.n_lat)]
    params = np.array([f.params for f in fits])
    coh = None
    coherence_params = np.array([0.0, 1.0, 0.0])
    if coherence and series.grid.n_lat >= 2:
        spectra = np.array([spectrum_values(p, series.grid.n_lon) for p in params])
        coh = fit_coherence(spec_arr, spectra, series.grid.lat)
        coherence_params = coh.params
    model = DynSpecModel(series.grid, ar.coeffs, params, coherence_params)
    return PipelineResult(model, anomalies, ar, fits, coh)


COMPARISON_COLUMNS = ("model", "n_params", "time_minutes", "normalized_loglik", "delta_normalized_loglik", "bic")


def comparison_table(rows: list[dict]) -> str:
    """Model comparison CSV; ``delta_normalized_loglik`` is relative to the
    first row."""
    import csv
    import io

    if not rows:
        raise ValueError("no models to compare")
    ref = rows[0]["normalized_loglik"]
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(COMPARISON_COLUMNS)
    for r in rows:
        writer.writerow([
            r["model"],
            int(r["n_params"]),
            repr(float(r["time_minutes"])),
            repr(float(r["normalized_loglik"])),
            repr(float(r["normalized_loglik"] - ref)),
            repr(float(r["bic"])),
        ])
    return buf.getvalue()
