"""Empirical variograms, pairwise composite likelihood and its maximization."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .functions import Component, InvalidParameterError
from .kernels import (
    KernelSpec,
    chordal_lift,
    dynamical_wendland,
    evaluate,
    modified_gneiting,
    validate_params,
)
from .krige import ObservationSet
from .sphere import distance_matrix

# ---------------------------------------------------------------------------
# parametric families for estimation


@dataclass(frozen=True)
class ParametricFamily:
    """A kernel template with an ordered list of free parameters.

    ``names`` are dotted paths understood by :meth:`KernelSpec.with_params`;
    ``bounds`` give the default box for each.
    """

    name: str
    template: KernelSpec
    names: tuple[str, ...]
    bounds: Mapping[str, tuple[float, float]] = field(default_factory=dict)

    def build(self, theta) -> KernelSpec:
        theta = np.asarray(theta, dtype=float).ravel()
        if theta.size != len(self.names):
            raise ValueError(f"{self.name}: expected {len(self.names)} parameters")
        return self.template.with_params(dict(zip(self.names, map(float, theta))))

    def initial(self) -> np.ndarray:
        flat = self.template.flat_params()
        return np.array([flat[n] for n in self.names])


def _positive_bounds(names):
    return {n: (0.0, math.inf) for n in names}


def modified_gneiting_family() -> ParametricFamily:
    names = ("sigma2", "b_S", "b_T")
    return ParametricFamily(
        "ModifiedGneiting", modified_gneiting(1.0, 0.3, 0.5), names, _positive_bounds(names)
    )


def dynamical_wendland_family(mu: float = 4.0, alpha: float = 3.0) -> ParametricFamily:
    """``sigma2 / (1+|u|/b_T) (1 - d / (b_S (1+|u|/b_T)^{-1/alpha}))_+^mu``."""
    template = dynamical_wendland(
        mu, 0, alpha, Component("PowerDecay", {"c": 1.0, "scale": 1.0, "beta": 1 / alpha})
    )
    names = ("sigma2", "h.c", "h.scale")
    return ParametricFamily(
        "DynamicalWendland",
        template,
        names,
        {"sigma2": (0.0, math.inf), "h.c": (0.0, math.pi), "h.scale": (0.0, math.inf)},
    )


def gneiting_family() -> ParametricFamily:
    names = ("sigma2", "b_S", "b_T")
    return ParametricFamily(
        "Gneiting",
        KernelSpec("Gneiting", {"sigma2": 1.0, "b_S": 0.3, "b_T": 0.5}),
        names,
        _positive_bounds(names),
    )


def chordal_gneiting_family() -> ParametricFamily:
    template = chordal_lift(Component("Gneiting", {"b_S": 0.3, "b_T": 0.5}))
    names = ("sigma2", "euclidean.b_S", "euclidean.b_T")
    return ParametricFamily("ChordalGneiting", template, names, _positive_bounds(names))


FAMILY_BUILDERS: dict[str, Callable[[], ParametricFamily]] = {
    "ModifiedGneiting": modified_gneiting_family,
    "DynamicalWendland": dynamical_wendland_family,
    "Gneiting": gneiting_family,
    "ChordalGneiting": chordal_gneiting_family,
}


def get_family(family) -> ParametricFamily:
    if isinstance(family, ParametricFamily):
        return family
    try:
        return FAMILY_BUILDERS[family]()
    except KeyError:
        raise ValueError(
            f"no estimation template for {family!r}; choose from {sorted(FAMILY_BUILDERS)}"
        ) from None


# ---------------------------------------------------------------------------
# variogram


@dataclass
class VariogramTable:
    """Binned space-time semivariances.

    ``semivariance[b, l]`` averages ``(z_i - z_j)^2 / 2`` over pairs whose
    great-circle distance lies in ``[edges[b], edges[b+1])`` and whose time
    separation equals ``time_lags[l]``; cells with fewer than ``min_pairs``
    pairs hold ``nan``.
    """

    space_edges: np.ndarray
    time_lags: np.ndarray
    semivariance: np.ndarray
    counts: np.ndarray

    @property
    def space_mid(self) -> np.ndarray:
        return 0.5 * (self.space_edges[1:] + self.space_edges[:-1])

    @property
    def empty(self) -> np.ndarray:
        return np.isnan(self.semivariance)


def empirical_variogram(
    obs: ObservationSet,
    space_bins: int,
    time_lags: Sequence[float] = (0.0,),
    max_distance: float = math.pi,
    min_pairs: int = 1,
    time_tol: float = 1e-9,
) -> VariogramTable:
    """Method-of-moments semivariogram on ``space_bins`` equal-width bins."""
    edges = np.linspace(0.0, max_distance, space_bins + 1)
    lags = np.asarray(time_lags, dtype=float)
    sums = np.zeros((space_bins, lags.size))
    counts = np.zeros((space_bins, lags.size), dtype=np.int64)
    n = len(obs)
    block = max(1, 4_000_000 // max(n, 1))
    for start in range(0, n, block):
        rows = np.arange(start, min(n, start + block))
        d = distance_matrix(obs.sites[rows], obs.sites)
        dt = np.abs(obs.times[rows, None] - obs.times[None, :])
        sq = 0.5 * (obs.values[rows, None] - obs.values[None, :]) ** 2
        upper = np.arange(n)[None, :] > rows[:, None]
        b = np.searchsorted(edges, d, side="right") - 1
        b[d == max_distance] = space_bins - 1
        inside = upper & (b >= 0) & (b < space_bins)
        for li, lag in enumerate(lags):
            m = inside & (np.abs(dt - abs(lag)) <= time_tol)
            if np.any(m):
                sums[:, li] += np.bincount(b[m], weights=sq[m], minlength=space_bins)
                counts[:, li] += np.bincount(b[m], minlength=space_bins)
    with np.errstate(invalid="ignore", divide="ignore"):
        gamma = sums / counts
    gamma[counts < max(min_pairs, 1)] = np.nan
    return VariogramTable(edges, lags, gamma, counts)


# ---------------------------------------------------------------------------
# composite likelihood


@dataclass(frozen=True)
class CLConfig:
    """Settings of the pairwise composite likelihood fit.

    Parameters
    ----------
    cutoff : float
        Pairs with great-circle distance below this (radians) enter the sum;
        every temporal lag is admitted.
    bounds : mapping
        Per-parameter ``(lower, upper)`` boxes overriding the family defaults.
    max_iter : int
    tol : float
        Simplex diameter tolerance in the transformed space.
    initial_step : float
        Simplex edge length in the transformed space.
    """

    cutoff: float = 1.0
    bounds: Mapping[str, tuple[float, float]] = field(default_factory=dict)
    max_iter: int = 2000
    tol: float = 1e-6
    initial_step: float = 0.3

    def __post_init__(self):
        if not 0 < self.cutoff <= math.pi:
            raise ValueError("cutoff must lie in (0, pi]")
        for name, (lo, hi) in dict(self.bounds).items():
            if not lo < hi:
                raise ValueError(f"empty bound interval for {name}")


@dataclass
class PairSet:
    """Admissible pairs ``i < j`` with their distances and lags.

    ``key_index`` maps each pair to a row of ``(unique_d, unique_u)`` so the
    kernel is evaluated once per distinct separation.
    """

    i: np.ndarray
    j: np.ndarray
    unique_d: np.ndarray
    unique_u: np.ndarray
    key_index: np.ndarray

    def __len__(self) -> int:
        return self.i.size


def build_pairs(obs: ObservationSet, cutoff: float) -> PairSet:
    n = len(obs)
    ii, jj, dd, uu = [], [], [], []
    block = max(1, 4_000_000 // max(n, 1))
    for start in range(0, n, block):
        rows = np.arange(start, min(n, start + block))
        d = distance_matrix(obs.sites[rows], obs.sites)
        keep = (np.arange(n)[None, :] > rows[:, None]) & (d < cutoff)
        r, c = np.nonzero(keep)
        ii.append(rows[r])
        jj.append(c)
        dd.append(d[r, c])
        uu.append(np.abs(obs.times[rows[r]] - obs.times[c]))
    i = np.concatenate(ii)
    j = np.concatenate(jj)
    if i.size == 0:
        raise ValueError(f"no pairs within cutoff {cutoff:g} rad")
    d = np.concatenate(dd)
    u = np.concatenate(uu)
    keys = np.column_stack([np.round(d, 12), np.round(u, 12)])
    uniq, inverse = np.unique(keys, axis=0, return_inverse=True)
    return PairSet(i, j, uniq[:, 0], uniq[:, 1], inverse.ravel())


def _pair_loglik(spec: KernelSpec, obs: ObservationSet, pairs: PairSet) -> float:
    if not validate_params(spec).ok:
        return -math.inf
    var = spec.variance
    cov = evaluate(spec, pairs.unique_d, pairs.unique_u, check=False)[pairs.key_index]
    det = var * var - cov * cov
    if not var > 0 or np.any(det <= 0) or not np.all(np.isfinite(det)):
        return -math.inf
    zi = obs.values[pairs.i]
    zj = obs.values[pairs.j]
    quad = (var * (zi * zi + zj * zj) - 2 * cov * (zi * zj)) / det
    terms = -math.log(2 * math.pi) - 0.5 * np.log(det) - 0.5 * quad
    # exact summation keeps the result independent of the pair order
    return math.fsum(terms.tolist())


def pairwise_cl(
    spec_family, params, obs: ObservationSet, config: CLConfig, pairs: PairSet | None = None
) -> float:
    """Pairwise Gaussian log composite likelihood.

    Sums ``log N_2((z_i, z_j); 0, C_ij)`` over unordered pairs closer than
    ``config.cutoff``.  Invalid parameters or a non-positive-definite pair
    covariance give ``-inf``.
    """
    family = get_family(spec_family)
    if pairs is None:
        pairs = build_pairs(obs, config.cutoff)
    try:
        spec = family.build(params)
    except (InvalidParameterError, ValueError):
        return -math.inf
    return _pair_loglik(spec, obs, pairs)


# ---------------------------------------------------------------------------
# optimizer


@dataclass(frozen=True)
class NMSettings:
    """Nelder-Mead settings; coefficients are reflection 1, expansion 2,
    contraction 0.5 and shrink 0.5."""

    max_iter: int = 2000
    tol: float = 1e-8
    initial_step: float = 0.1
    reflect: float = 1.0
    expand: float = 2.0
    contract: float = 0.5
    shrink: float = 0.5


@dataclass
class NMResult:
    x: np.ndarray
    value: float
    iterations: int
    converged: bool
    trace: list[float]


def nelder_mead(
    objective: Callable[[np.ndarray], float], init, settings: NMSettings = NMSettings()
) -> NMResult:
    """Maximize ``objective`` by the downhill simplex method.

    Terminates when the simplex diameter drops below ``settings.tol`` or after
    ``settings.max_iter`` iterations.  ``-inf`` values are allowed and treated
    as worst; ``nan`` aborts.
    """
    x0 = np.atleast_1d(np.asarray(init, dtype=float))
    dim = x0.size

    def f(x):
        val = float(objective(x))
        if math.isnan(val):
            raise ValueError(f"objective returned NaN at {x.tolist()}")
        return -val  # minimize internally

    f0 = f(x0)
    if not math.isfinite(f0):
        raise ValueError("objective is not finite at the initial point")
    simplex = [x0]
    for k in range(dim):
        v = x0.copy()
        v[k] += settings.initial_step if v[k] == 0 else settings.initial_step * max(1.0, abs(v[k]))
        simplex.append(v)
    simplex = np.array(simplex)
    values = np.array([f0] + [f(v) for v in simplex[1:]])
    trace: list[float] = []
    converged = False
    it = 0
    for it in range(1, settings.max_iter + 1):
        order = np.argsort(values, kind="stable")
        simplex, values = simplex[order], values[order]
        trace.append(-values[0])
        diam = np.max(np.linalg.norm(simplex[1:] - simplex[0], axis=1))
        if diam < settings.tol:
            converged = True
            break
        centroid = simplex[:-1].mean(axis=0)
        worst = simplex[-1]
        xr = centroid + settings.reflect * (centroid - worst)
        fr = f(xr)
        if values[0] <= fr < values[-2]:
            simplex[-1], values[-1] = xr, fr
            continue
        if fr < values[0]:
            xe = centroid + settings.expand * (xr - centroid)
            fe = f(xe)
            if fe < fr:
                simplex[-1], values[-1] = xe, fe
            else:
                simplex[-1], values[-1] = xr, fr
            continue
        if fr < values[-1]:
            xc = centroid + settings.contract * (xr - centroid)
            fc = f(xc)
            if fc <= fr:
                simplex[-1], values[-1] = xc, fc
                continue
        else:
            xc = centroid + settings.contract * (worst - centroid)
            fc = f(xc)
            if fc < values[-1]:
                simplex[-1], values[-1] = xc, fc
                continue
        best = simplex[0]
        simplex[1:] = best + settings.shrink * (simplex[1:] - best)
        values[1:] = [f(v) for v in simplex[1:]]
    order = np.argsort(values, kind="stable")
    simplex, values = simplex[order], values[order]
    if not trace or trace[-1] != -values[0]:
        trace.append(-values[0])
    return NMResult(simplex[0].copy(), float(-values[0]), it, converged, trace)


# ---------------------------------------------------------------------------
# box transforms


def _to_free(x, lo, hi):
    if math.isfinite(lo) and math.isfinite(hi):
        p = (x - lo) / (hi - lo)
        return math.log(p / (1 - p))
    if math.isfinite(lo):
        return math.log(x - lo)
    if math.isfinite(hi):
        return math.log(hi - x)
    return x


def _from_free(y, lo, hi):
    if math.isfinite(lo) and math.isfinite(hi):
        return lo + (hi - lo) / (1 + math.exp(-y))
    if math.isfinite(lo):
        return lo + math.exp(y)
    if math.isfinite(hi):
        return hi - math.exp(y)
    return y


@dataclass
class FitResult:
    """Composite likelihood estimates.

    ``trace`` holds the best log-CL after each optimizer iteration and is
    non-decreasing.
    """

    family: str
    names: tuple[str, ...]
    estimates: np.ndarray
    log_cl: float
    trace: list[float]
    iterations: int
    converged: bool
    n_pairs: int

    def as_dict(self) -> dict[str, float]:
        return dict(zip(self.names, map(float, self.estimates)))

    def spec(self, family=None) -> KernelSpec:
        return get_family(family or self.family).build(self.estimates)


def fit_cl(spec_family, init, obs: ObservationSet, config: CLConfig = CLConfig()) -> FitResult:
    """Maximize the pairwise composite likelihood inside the parameter box.

    Bounded parameters are optimized on a logit scale, half-bounded ones on a
    log scale.  Non-convergence is reported through ``converged=False`` with
    the best point found.
    """
    family = get_family(spec_family)
    bounds = {**{n: (-math.inf, math.inf) for n in family.names}, **family.bounds, **config.bounds}
    box = [bounds[n] for n in family.names]
    init = np.asarray(init, dtype=float).ravel()
    for name, v, (lo, hi) in zip(family.names, init, box):
        if not lo < v < hi:
            raise ValueError(f"initial {name}={v} outside bounds ({lo}, {hi})")
    pairs = build_pairs(obs, config.cutoff)

    def back(y):
        return np.array([_from_free(yi, lo, hi) for yi, (lo, hi) in zip(y, box)])

    def objective(y):
        theta = back(y)
        try:
            spec = family.build(theta)
        except (InvalidParameterError, ValueError, OverflowError):
            return -math.inf
        return _pair_loglik(spec, obs, pairs)

    y0 = np.array([_to_free(v, lo, hi) for v, (lo, hi) in zip(init, box)])
    res = nelder_mead(
        objective,
        y0,
        NMSettings(max_iter=config.max_iter, tol=config.tol, initial_step=config.initial_step),
    )
    return FitResult(
        family.name,
        family.names,
        back(res.x),
        res.value,
        res.trace,
        res.iterations,
        res.converged,
        len(pairs),
    )
