"""Simple kriging, drop-one cross-validation and predictive scores."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.special import ndtr

from .kernels import KernelSpec, cross_covariance, gram_matrix
from .sphere import LatLonGrid, SpherePoint, as_xyz

JITTERS = (0.0, 1e-10, 1e-8, 1e-6)


class SingularSystemError(np.linalg.LinAlgError):
    """The observation covariance stayed singular after jitter escalation."""


@dataclass
class ObservationSet:
    """Scattered space-time observations ``(s_i, t_i, z_i)``.

    Parameters
    ----------
    sites : SpherePoint list or (n, 3) array
    times : (n,) array
    values : (n,) array
    grid : LatLonGrid, optional
        Set when the observations come from a ``grid x times`` layout.
    units : dict
        Free-form metadata, e.g. ``{"distance": "radians", "time": "days"}``.
    """

    sites: np.ndarray
    times: np.ndarray
    values: np.ndarray
    grid: LatLonGrid | None = None
    units: dict = field(default_factory=dict)

    def __post_init__(self):
        self.sites = as_xyz(self.sites)
        self.times = np.atleast_1d(np.asarray(self.times, dtype=float)).ravel()
        self.values = np.atleast_1d(np.asarray(self.values, dtype=float)).ravel()
        n = self.sites.shape[0]
        if not (self.times.size == n == self.values.size):
            raise ValueError(
                f"sites, times and values must have equal lengths "
                f"({n}, {self.times.size}, {self.values.size})"
            )
        key = np.round(np.column_stack([self.sites, self.times]), 12)
        if np.unique(key, axis=0).shape[0] != n:
            raise ValueError("duplicated (site, time) pair in observations")

    def __len__(self) -> int:
        return self.values.size

    @classmethod
    def from_grid(cls, sites, times, values, grid: LatLonGrid | None = None, units=None):
        """Flatten a ``(n_sites, n_times)`` value matrix, time-major."""
        x = as_xyz(sites)
        t = np.atleast_1d(np.asarray(times, dtype=float))
        v = np.asarray(values, dtype=float)
        if v.shape != (x.shape[0], t.size):
            raise ValueError("values must have shape (n_sites, n_times)")
        return cls(
            np.tile(x, (t.size, 1)),
            np.repeat(t, x.shape[0]),
            v.T.ravel(),
            grid,
            dict(units or {}),
        )

    def subset(self, index) -> "ObservationSet":
        return ObservationSet(
            self.sites[index], self.times[index], self.values[index], None, dict(self.units)
        )


@dataclass(frozen=True)
class PredictionResult:
    mean: float
    variance: float

    @property
    def sd(self) -> float:
        return float(np.sqrt(self.variance))


def _factor(cov: np.ndarray, scale: float):
    eye = np.eye(cov.shape[0])
    for jitter in JITTERS:
        try:
            return cho_factor(cov + jitter * scale * eye, lower=True)
        except np.linalg.LinAlgError:
            continue
    raise SingularSystemError(
        f"observation covariance singular after jitter {JITTERS[-1]:g} relative"
    )


def _targets(targets):
    """Accept ``(sites, times)`` arrays or a list of ``(point, time)`` pairs."""
    if isinstance(targets, tuple) and len(targets) == 2 and not isinstance(
        targets[0], SpherePoint
    ):
        sites, times = targets
        x = as_xyz(sites)
        t = np.broadcast_to(np.asarray(times, dtype=float), (x.shape[0],)).copy()
        return x, t
    pts = [p for p, _ in targets]
    times = np.array([float(t) for _, t in targets])
    return as_xyz(pts), times


def krige_arrays(spec: KernelSpec, obs: ObservationSet, targets):
    """Vectorized :func:`simple_krige`; returns ``(means, variances)`` arrays."""
    xt, tt = _targets(targets)
    sill = spec.variance
    cov = gram_matrix(spec, obs.sites, obs.times)
    factor = _factor(cov, abs(sill))
    c_star = cross_covariance(spec, obs.sites, obs.times, xt, tt)  # (n_obs, n_target)
    weights = cho_solve(factor, c_star)
    means = weights.T @ obs.values
    var = sill - np.sum(c_star * weights, axis=0)
    return means, np.clip(var, 0.0, sill)


def simple_krige(spec: KernelSpec, obs: ObservationSet, targets) -> list[PredictionResult]:
    """Zero-mean kriging predictor ``c* C^{-1} z`` with variance
    ``psi(0,0) - c* C^{-1} c*``.

    ``targets`` is a list of ``(SpherePoint, time)`` pairs or a tuple of
    arrays ``(sites, times)``.
    """
    means, var = krige_arrays(spec, obs, targets)
    return [PredictionResult(float(m), float(v)) for m, v in zip(means, var)]


def drop_one_arrays(spec: KernelSpec, obs: ObservationSet):
    """Leave-one-out means and variances from one factorization.

    Removing observation ``i`` from a Gaussian system gives
    ``mean_i = z_i - (Q z)_i / Q_ii`` and ``var_i = 1 / Q_ii`` with
    ``Q = C^{-1}``; this is the rank-one downdate of the full solve.
    """
    sill = spec.variance
    cov = gram_matrix(spec, obs.sites, obs.times)
    factor = _factor(cov, abs(sill))
    q = cho_solve(factor, np.eye(len(obs)))
    q = 0.5 * (q + q.T)
    qz = q @ obs.values
    diag = np.diag(q)
    means = obs.values - qz / diag
    var = np.clip(1.0 / diag, 0.0, sill)
    return means, var


def drop_one_cv(spec: KernelSpec, obs: ObservationSet) -> list[PredictionResult]:
    """Prediction at each observation from all the others."""
    means, var = drop_one_arrays(spec, obs)
    return [PredictionResult(float(m), float(v)) for m, v in zip(means, var)]


# ---------------------------------------------------------------------------
# scores


def crps_gaussian(mean, sd, y):
    """Closed-form CRPS of a Gaussian forecast; smaller is better.

    ``sd * [z (2 Phi(z) - 1) + 2 phi(z) - 1/sqrt(pi)]`` with
    ``z = (y - mean) / sd``; reduces to ``|y - mean|`` as ``sd -> 0``.
    """
    mean = np.asarray(mean, dtype=float)
    sd = np.asarray(sd, dtype=float)
    y = np.asarray(y, dtype=float)
    resid = y - mean
    with np.errstate(divide="ignore", invalid="ignore"):
        z = resid / sd
        pdf = np.exp(-0.5 * z * z) / np.sqrt(2 * np.pi)
        val = sd * (z * (2 * ndtr(z) - 1) + 2 * pdf - 1 / np.sqrt(np.pi))
    return np.where(sd > 0, val, np.abs(resid))


def log_score(mean, var, y):
    """Negative Gaussian log predictive density; smaller is better."""
    mean = np.asarray(mean, dtype=float)
    var = np.asarray(var, dtype=float)
    y = np.asarray(y, dtype=float)
    resid = y - mean
    if np.any((var <= 0) & (resid != 0)):
        raise ValueError("log score undefined: zero predictive variance with nonzero residual")
    with np.errstate(divide="ignore", invalid="ignore"):
        val = 0.5 * np.log(2 * np.pi * var) + 0.5 * resid * resid / var
    return np.where(var > 0, val, -np.inf)


@dataclass(frozen=True)
class Scores:
    """Mean predictive scores, all oriented so that smaller is better.

    ``lscore`` is the negative mean Gaussian log predictive density.
    """

    mspe: float
    lscore: float
    crps: float

    def as_dict(self) -> dict[str, float]:
        return {"MSPE": self.mspe, "LSCORE": self.lscore, "CRPS": self.crps}


def scores(preds: Sequence[PredictionResult], actuals) -> Scores:
    """MSPE, LSCORE and CRPS of a set of predictions."""
    y = np.asarray(actuals, dtype=float).ravel()
    if len(preds) != y.size:
        raise ValueError(f"{len(preds)} predictions but {y.size} actuals")
    mean = np.array([p.mean for p in preds])
    var = np.array([p.variance for p in preds])
    return scores_arrays(mean, var, y)


def scores_arrays(mean, var, y) -> Scores:
    mean = np.asarray(mean, dtype=float)
    var = np.asarray(var, dtype=float)
    y = np.asarray(y, dtype=float)
    resid = y - mean
    return Scores(
        mspe=float(np.mean(resid * resid)),
        lscore=float(np.mean(log_score(mean, var, y))),
        crps=float(np.mean(crps_gaussian(mean, np.sqrt(np.clip(var, 0, None)), y))),
    )
