"""Space-time covariance functions on the sphere cross time.

Kernels are immutable expression trees (:class:`KernelSpec`) that can be
evaluated at a great-circle angle ``d`` and temporal lag ``u``, validated
against their admissible parameter ranges, serialized, and assembled into Gram
matrices.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Mapping, Sequence

import numpy as np

from .functions import (
    BERNSTEIN,
    COMPLETELY_MONOTONE,
    QA_GENERATORS,
    SUPPORT,
    TEMPORAL,
    Component,
    InvalidParameterError,
    TemporalCorrelation,
    bernstein_value,
    cm_value,
    matern,
    qa_forward,
    qa_inverse,
    support_value,
    symbol,
    temporal_value,
    validate_component,
    wendland,
)
from .sphere import DomainError, as_xyz, distance_matrix, legendre

__all__ = [
    "FAMILIES",
    "KernelSpec",
    "TemporalCorrelation",
    "Component",
    "Violation",
    "ValidationReport",
    "evaluate",
    "validate_params",
    "cross_covariance",
    "gram_matrix",
    "quasi_arithmetic",
    "dynamical_wendland",
    "chordal_lift",
    "separable_product",
    "adaptive_gneiting",
    "modified_gneiting",
    "scale_mixture",
    "lagrangian_transport",
]

TABLE_FAMILIES = (
    "NegativeBinomial",
    "Multiquadric",
    "SineSeries",
    "SinePower",
    "AdaptedMultiquadric",
    "Poisson",
)

FAMILIES = TABLE_FAMILIES + (
    "PowerSeries",
    "SchoenbergSeries",
    "ModifiedGneiting",
    "ScaleMixture",
    "AdaptiveGneiting",
    "DynamicalWendland",
    "QuasiArithmetic",
    "Gneiting",
    "ChordalMaternGneiting",
    "ChordalLift",
    "SeparableProduct",
    "LagrangianTransport",
)

_DOMAIN_TOL = 1e-10


# ---------------------------------------------------------------------------
# specification


def _freeze(value):
    if isinstance(value, (list, tuple)):
        return tuple(float(v) for v in value)
    return value


def _component(value, cls=Component):
    if value is None or isinstance(value, cls):
        return value
    if isinstance(value, Component):
        return cls(value.tag, value.params)
    return cls.from_dict(value)


@dataclass(frozen=True, eq=True)
class KernelSpec:
    """Immutable description of a space-time covariance function.

    Parameters
    ----------
    family : str
        One of :data:`FAMILIES`.
    params : mapping
        Named real parameters (``sigma2``, ``epsilon``, ``b_S`` ...). Series
        families take tuples.
    children : tuple of KernelSpec
        Nested specifications (spatial margin of a separable product, the
        transported field of a Lagrangian kernel).
    temporal_correlation : TemporalCorrelation, optional
        The temporal correlation ``g`` of the power-series families, or the
        temporal margin of product and quasi-arithmetic constructions.
    components : mapping of str to Component
        Further function slots (``f``, ``g``, ``h``, ``spatial``,
        ``euclidean``, ``law``).
    """

    family: str
    params: Mapping[str, Any] = field(default_factory=dict)
    children: tuple = ()
    temporal_correlation: TemporalCorrelation | None = None
    components: Mapping[str, Component] = field(default_factory=dict)

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise InvalidParameterError(
                f"unknown kernel family {self.family!r}; expected one of {FAMILIES}"
            )
        object.__setattr__(
            self, "params", {k: _freeze(v) for k, v in dict(self.params).items()}
        )
        kids = tuple(
            c if isinstance(c, KernelSpec) else KernelSpec.from_dict(c)
            for c in self.children
        )
        if len(kids) > 2:
            raise InvalidParameterError("a kernel has at most two children")
        object.__setattr__(self, "children", kids)
        object.__setattr__(
            self,
            "temporal_correlation",
            _component(self.temporal_correlation, TemporalCorrelation),
        )
        object.__setattr__(
            self,
            "components",
            {k: _component(v) for k, v in dict(self.components).items()},
        )

    __hash__ = None  # mutable containers inside

    def __call__(self, d, u=0.0):
        return evaluate(self, d, u)

    @property
    def variance(self) -> float:
        """Value at the space-time origin."""
        return float(evaluate(self, 0.0, 0.0))

    def param(self, name: str, default=None):
        if name in self.params:
            return self.params[name]
        if default is None:
            raise InvalidParameterError(f"{self.family}: missing parameter {name!r}")
        return default

    # -- serialization -----------------------------------------------------

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {
            "family": self.family,
            "params": {
                k: list(v) if isinstance(v, tuple) else v for k, v in self.params.items()
            },
        }
        if self.children:
            out["children"] = [c.to_dict() for c in self.children]
        if self.temporal_correlation is not None:
            out["temporal_correlation"] = self.temporal_correlation.to_dict()
        if self.components:
            out["components"] = {k: c.to_dict() for k, c in self.components.items()}
        return out

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "KernelSpec":
        return cls(
            family=data["family"],
            params=dict(data.get("params", {})),
            children=tuple(data.get("children", ())),
            temporal_correlation=data.get("temporal_correlation"),
            components=dict(data.get("components", {})),
        )

    # -- flat parameter access for optimizers -------------------------------

    def flat_params(self) -> dict[str, float]:
        """Scalar numeric parameters keyed by dotted path.

        Paths are ``name`` for own parameters, ``slot.name`` for components
        and the temporal correlation (slot ``temporal``) and ``child<i>.path``
        for children.
        """
        out: dict[str, float] = {}
        for k, v in self.params.items():
            if _is_scalar(v):
                out[k] = float(v)
        for slot, comp in self.components.items():
            for k, v in comp.params.items():
                if _is_scalar(v):
                    out[f"{slot}.{k}"] = float(v)
        if self.temporal_correlation is not None:
            for k, v in self.temporal_correlation.params.items():
                if _is_scalar(v):
                    out[f"temporal.{k}"] = float(v)
        for i, child in enumerate(self.children):
            for k, v in child.flat_params().items():
                out[f"child{i}.{k}"] = v
        return out

    def with_params(self, values: Mapping[str, float]) -> "KernelSpec":
        """Copy with the dotted-path parameters in ``values`` replaced."""
        own: dict[str, Any] = dict(self.params)
        comps = {k: dict(c.params) for k, c in self.components.items()}
        temporal = (
            dict(self.temporal_correlation.params)
            if self.temporal_correlation is not None
            else None
        )
        child_updates: dict[int, dict[str, float]] = {}
        for path, value in values.items():
            head, _, rest = path.partition(".")
            if not rest:
                own[head] = value
            elif head == "temporal":
                if temporal is None:
                    raise KeyError(path)
                temporal[rest] = value
            elif head in comps:
                comps[head][rest] = value
            elif head.startswith("child") and head[5:].isdigit():
                child_updates.setdefault(int(head[5:]), {})[rest] = value
            else:
                raise KeyError(path)
        kids = list(self.children)
        for i, upd in child_updates.items():
            kids[i] = kids[i].with_params(upd)
        return KernelSpec(
            family=self.family,
            params=own,
            children=tuple(kids),
            temporal_correlation=(
                None
                if temporal is None
                else TemporalCorrelation(self.temporal_correlation.tag, temporal)
            ),
            components={
                k: Component(self.components[k].tag, p) for k, p in comps.items()
            },
        )


def _is_scalar(v) -> bool:
    return isinstance(v, (int, float, np.floating, np.integer)) and not isinstance(
        v, bool
    )


# ---------------------------------------------------------------------------
# validation


@dataclass(frozen=True)
class Violation:
    """A violated constraint and the result that imposes it."""

    constraint: str
    source: str

    def __str__(self) -> str:
        return f"{self.constraint} [{self.source}]"


@dataclass
class ValidationReport:
    violations: list[Violation] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def messages(self) -> list[str]:
        return [str(v) for v in self.violations]

    def extend(self, other: "ValidationReport", prefix: str = "") -> None:
        for v in other.violations:
            self.violations.append(Violation(prefix + v.constraint, v.source))
        self.warnings.extend(prefix + w for w in other.warnings)

    def add(self, constraints: Iterable[str], source: str) -> None:
        for c in constraints:
            self.violations.append(Violation(c, source))

    def __str__(self) -> str:
        if self.ok:
            return "valid"
        return "; ".join(self.messages())


def _req_positive(spec: KernelSpec, names: Sequence[str], report, source, defaults=None):
    defaults = defaults or {}
    for name in names:
        v = spec.params.get(name, defaults.get(name))
        if v is None:
            report.add([f"missing parameter {name}"], source)
        elif not (np.isfinite(v) and v > 0):
            report.add([f"{symbol(name)} > 0"], source)


def _req_open_unit(spec, name, report, source):
    v = spec.params.get(name)
    if v is None:
        report.add([f"missing parameter {name}"], source)
    elif not (0 < v < 1):
        report.add([f"{symbol(name)} ∈ (0,1)"], source)


def _check_slot(spec, slot, catalogue, report, source, required=True):
    comp = spec.components.get(slot)
    if comp is None:
        if required:
            report.add([f"missing component {slot!r}"], source)
        return None
    report.add(validate_component(catalogue, comp), source)
    return comp


def _check_temporal(spec, report, required=False):
    tc = spec.temporal_correlation
    if tc is None:
        if required:
            report.add(["missing temporal correlation"], "temporal margin")
        return
    report.add(tc.validate(), "temporal correlation on the real line")


def _validate_table(spec: KernelSpec, report: ValidationReport) -> None:
    fam = spec.family
    source = f"{fam} family parameter range"
    _req_positive(spec, ["sigma2"], report, source, {"sigma2": 1.0})
    if fam in ("NegativeBinomial", "Multiquadric", "AdaptedMultiquadric"):
        _req_open_unit(spec, "epsilon", report, source)
        _req_positive(spec, ["tau"], report, source)
    elif fam == "SinePower":
        a = spec.params.get("alpha")
        if a is None:
            report.add(["missing parameter alpha"], source)
        elif not (0 < a <= 2):
            report.add(["α ∈ (0,2]"], source)
        report.warnings.append(
            "SinePower: the family carries an additional validity condition that "
            "is not encoded; only α ∈ (0,2] is checked"
        )
    elif fam == "Poisson":
        _req_positive(spec, ["lambda"], report, source)
    _check_temporal(spec, report)
    if fam == "AdaptedMultiquadric":
        _check_adapted_margin(spec, report)


def _check_adapted_margin(spec, report):
    # psi = (1-e)^tau (1 - cos(d) e sech(phi(u)))^-tau with g = exp(-phi); the
    # coefficient e sech(phi) is a correlation whenever phi^2 is a variogram,
    # since sech(sqrt(t)) is completely monotone.  Other g can break it.
    tc = spec.temporal_correlation
    if tc is None:
        return
    source = "AdaptedMultiquadric needs g = exp(-sqrt(variogram))"
    if tc.tag == "Exponential":
        return
    if tc.tag == "PowerExponential" and tc.params.get("alpha", 1.0) <= 1.0:
        return
    report.add(["g ∈ {Exponential, PowerExponential with α ≤ 1}"], source)


def _validate_power_series(spec, report):
    source = "power series in g(u)cos(d) with nonnegative coefficients"
    _req_positive(spec, ["sigma2"], report, source, {"sigma2": 1.0})
    w = np.asarray(spec.params.get("weights", ()), dtype=float)
    if w.size == 0:
        report.add(["missing parameter weights"], source)
    elif np.any(w < 0) or not np.any(w > 0):
        report.add(["weights ≥ 0 with positive sum"], source)
    _check_temporal(spec, report)


def _validate_schoenberg_series(spec, report):
    source = "Schoenberg expansion with nonnegative coefficient functions"
    b = np.asarray(spec.params.get("coeffs", ()), dtype=float)
    s = np.asarray(spec.params.get("time_scales", ()), dtype=float)
    if b.size == 0:
        report.add(["missing parameter coeffs"], source)
        return
    if np.any(b < 0) or not np.any(b > 0):
        report.add(["coeffs ≥ 0 with positive sum"], source)
    if s.size != b.size:
        report.add(["time_scales has the same length as coeffs"], source)
    elif np.any(~(s > 0)):
        report.add(["time_scales > 0"], source)


def _validate_modified_gneiting(spec, report):
    _req_positive(
        spec, ["sigma2", "b_S", "b_T"], report, "Gneiting-type scale mixture parameters"
    )


def _validate_scale_mixture(spec, report):
    _req_positive(
        spec, ["sigma2", "b_S", "b_T"], report, "Gneiting-type scale mixture parameters"
    )
    _check_slot(
        spec, "f", "completely_monotone", report, "completely monotone generator f"
    )


_ADAPTIVE_F = ("Exponential", "Dagum", "Matern", "GenCauchy", "PowerExponential")


def _validate_adaptive(spec, report):
    source = "adaptive Gneiting class"
    _req_positive(
        spec, ["sigma2", "b_S", "b_T"], report, source, {"b_S": 1.0, "b_T": 1.0}
    )
    f = _check_slot(spec, "f", "completely_monotone", report, source)
    g = _check_slot(spec, "g", "bernstein", report, source)
    if f is not None and f.tag not in _ADAPTIVE_F:
        report.add([f"f ∈ {{{', '.join(_ADAPTIVE_F)}}}"], source)
    if g is not None and g.tag not in BERNSTEIN:
        report.add([f"g ∈ {{{', '.join(BERNSTEIN)}}}"], source)


def _validate_wendland(spec, report):
    source_support = "dynamical support function h"
    _req_positive(spec, ["sigma2"], report, "variance", {"sigma2": 1.0})
    mu = spec.params.get("mu")
    k = spec.params.get("k", 0)
    alpha = spec.params.get("alpha")
    if mu is None or alpha is None:
        report.add(["missing parameter mu or alpha"], "dynamical Wendland class")
        return
    if k != int(k) or not (0 <= k <= 3):
        report.add(["k ∈ {0,1,2,3}"], "Wendland polynomial table")
        return
    k = int(k)
    if k == 0:
        source = "dynamical Wendland validity for k = 0 (α ≥ 3, μ ≥ 4)"
        if alpha < 3:
            report.add(["α ≥ 3"], source)
        if mu < 4:
            report.add(["μ ≥ 4"], source)
    else:
        source = "dynamical Wendland validity for k ≥ 1 (α ≥ 2k+2, μ ≥ k+4)"
        if mu < k + 4:
            report.add([f"μ ≥ k+4 = {k + 4}"], source)
        if alpha < 2 * k + 2:
            report.add([f"α ≥ 2k+2 = {2 * k + 2}"], source)
    h = _check_slot(spec, "h", "support", report, source_support)
    if h is not None and not report.violations:
        t = np.linspace(0.0, 50.0, 201)
        if not np.all(np.diff(support_value(h, t)) <= 1e-15):
            report.add(["h decreasing"], source_support)


def _qa_margin_ok(f: Component, margin: Component, temporal: bool) -> str | None:
    """Whether ``f^{-1}`` composed with the margin is a Bernstein function
    (spatial) or a variogram (temporal); returns the failed condition."""
    max_alpha = 2.0 if temporal else 1.0
    kind = "temporal variogram" if temporal else "Bernstein function"
    tag = margin.tag
    a = margin.params.get("alpha", 1.0)
    if tag == "Constant":
        return None
    if f.tag == "Exponential":
        if tag == "Exponential":
            return None
        if tag in ("PowerExponential", "GenCauchy", "Cauchy"):
            return None if 0 < a <= max_alpha else f"margin α ∈ (0,{max_alpha:g}]"
    elif f.tag == "Cauchy":
        if tag in ("GenCauchy", "Cauchy"):
            beta_f = f.params.get("beta", 1.0)
            p = margin.params.get("beta", 1.0) / (a * beta_f)
            if not 0 < a <= max_alpha:
                return f"margin α ∈ (0,{max_alpha:g}]"
            if p > 1:
                return "margin β ≤ α·β_f"
            return None
    return f"f⁻¹∘{tag} not a verified {kind} for generator {f.tag}"


def _validate_quasi(spec, report):
    source = "quasi-arithmetic construction (Bernstein and variogram conditions)"
    _req_positive(spec, ["sigma2"], report, source, {"sigma2": 1.0})
    f = _check_slot(spec, "f", "qa_generator", report, source)
    m = _check_slot(spec, "spatial", "completely_monotone", report, source)
    _check_temporal(spec, report, required=True)
    tc = spec.temporal_correlation
    if f is None or f.tag not in QA_GENERATORS:
        return
    if m is not None and m.tag in COMPLETELY_MONOTONE:
        msg = _qa_margin_ok(f, m, temporal=False)
        if msg:
            report.add([msg], source)
    if tc is not None and tc.tag in TEMPORAL:
        msg = _qa_margin_ok(f, tc, temporal=True)
        if msg:
            report.add([msg], source)


def _validate_gneiting(spec, report):
    _req_positive(spec, ["sigma2", "b_S", "b_T"], report, "Gneiting function parameters")


def _validate_cmg(spec, report):
    source = "chordal Matérn-Gneiting parameters"
    _req_positive(spec, ["sigma2", "nu", "b_S", "b_T"], report, source)
    a = spec.params.get("a", 1.0)
    if not 0 < a <= 2:
        report.add(["a ∈ (0,2]"], "temporal variogram 1+(|u|/b_T)^a")


_EUCLIDEAN = {
    "Matern": ("nu", "scale"),
    "Gneiting": ("b_S", "b_T"),
    "MaternGneiting": ("nu", "b_S", "b_T"),
}


def _validate_chordal_lift(spec, report):
    source = "covariance on three-dimensional Euclidean space"
    _req_positive(spec, ["sigma2"], report, source, {"sigma2": 1.0})
    e = spec.components.get("euclidean")
    if e is None:
        report.add(["missing component 'euclidean'"], source)
    elif e.tag not in _EUCLIDEAN:
        report.add([f"euclidean form ∈ {{{', '.join(_EUCLIDEAN)}}}"], source)
    else:
        for name in _EUCLIDEAN[e.tag]:
            v = e.params.get(name)
            if v is None or not v > 0:
                report.add([f"{symbol(name)} > 0"], source)
        if e.tag == "MaternGneiting" and not 0 < e.params.get("a", 1.0) <= 2:
            report.add(["a ∈ (0,2]"], source)
    _check_temporal(spec, report)


def _validate_separable(spec, report):
    if len(spec.children) != 1:
        report.add(["exactly one spatial margin"], "separable product")
    else:
        report.extend(validate_params(spec.children[0]), "spatial margin: ")
    _check_temporal(spec, report, required=True)


def _validate_transport(spec, report):
    from .simulate import RotationLaw

    if len(spec.children) != 1:
        report.add(["exactly one transported spatial kernel"], "Lagrangian transport")
    else:
        report.extend(validate_params(spec.children[0]), "transported field: ")
    law = spec.components.get("law")
    if law is None:
        report.add(["missing component 'law'"], "Lagrangian transport")
    else:
        try:
            RotationLaw.from_component(law)
        except (InvalidParameterError, ValueError, KeyError) as exc:
            report.add([str(exc)], "rotation law")


_VALIDATORS: dict[str, Callable] = {
    **{f: _validate_table for f in TABLE_FAMILIES},
    "PowerSeries": _validate_power_series,
    "SchoenbergSeries": _validate_schoenberg_series,
    "ModifiedGneiting": _validate_modified_gneiting,
    "ScaleMixture": _validate_scale_mixture,
    "AdaptiveGneiting": _validate_adaptive,
    "DynamicalWendland": _validate_wendland,
    "QuasiArithmetic": _validate_quasi,
    "Gneiting": _validate_gneiting,
    "ChordalMaternGneiting": _validate_cmg,
    "ChordalLift": _validate_chordal_lift,
    "SeparableProduct": _validate_separable,
    "LagrangianTransport": _validate_transport,
}


def validate_params(spec: KernelSpec) -> ValidationReport:
    """List every violated constraint of ``spec``; never raises."""
    report = ValidationReport()
    try:
        _VALIDATORS[spec.family](spec, report)
    except (TypeError, ValueError) as exc:
        report.add([f"malformed parameters: {exc}"], spec.family)
    return report


def _require_valid(spec: KernelSpec) -> None:
    report = validate_params(spec)
    if not report.ok:
        raise InvalidParameterError(f"{spec.family}: {report}")


# ---------------------------------------------------------------------------
# evaluation


def _g(spec, u):
    tc = spec.temporal_correlation
    return np.ones_like(u) if tc is None else temporal_value(tc, u)


def _eval_table(spec, d, u):
    s2 = spec.param("sigma2", 1.0)
    g = _g(spec, u)
    cos = np.cos(d)
    x = g * cos
    fam = spec.family
    if fam == "NegativeBinomial":
        e, tau = spec.param("epsilon"), spec.param("tau")
        return s2 * ((1 - e) / (1 - e * x)) ** tau
    if fam == "Multiquadric":
        e, tau = spec.param("epsilon"), spec.param("tau")
        return s2 * ((1 - e) ** 2 / (1 + e * e - 2 * e * x)) ** tau
    if fam == "SineSeries":
        return s2 * 0.5 * np.exp(x - 1) * (1 + x)
    if fam == "SinePower":
        a = spec.param("alpha")
        return s2 * (1 - 2.0**-a * np.clip(1 - x, 0, None) ** (a / 2))
    if fam == "AdaptedMultiquadric":
        e, tau = spec.param("epsilon"), spec.param("tau")
        g2 = g * g
        return s2 * ((1 + g2) * (1 - e) / (1 + g2 - 2 * e * g * cos)) ** tau
    if fam == "Poisson":
        return s2 * np.exp(spec.param("lambda") * (x - 1))
    raise AssertionError(fam)


def _eval_power_series(spec, d, u):
    w = np.asarray(spec.param("weights"), dtype=float)
    x = _g(spec, u) * np.cos(d)
    return spec.param("sigma2", 1.0) * np.polynomial.polynomial.polyval(x, w) / w.sum()


def _eval_schoenberg_series(spec, d, u):
    b = np.asarray(spec.param("coeffs"), dtype=float)
    s = np.asarray(spec.param("time_scales"), dtype=float)
    p = legendre(b.size - 1, np.cos(d))
    au = np.abs(u)
    out = np.zeros(np.broadcast(d, u).shape)
    for k in range(b.size):
        if b[k] == 0:
            continue
        temporal = np.ones_like(au) if np.isinf(s[k]) else np.exp(-au / s[k])
        out = out + b[k] * temporal * p[k]
    return out


def _eval_modified_gneiting(spec, d, u):
    gamma = 1 + np.abs(u) / spec.param("b_T")
    return spec.param("sigma2") / gamma**3 * np.exp(-d * gamma / spec.param("b_S"))


def _eval_scale_mixture(spec, d, u):
    gamma = 1 + np.abs(u) / spec.param("b_T")
    f = cm_value(spec.components["f"], d * gamma / spec.param("b_S"))
    return spec.param("sigma2") / gamma**3 * f


def _eval_adaptive(spec, d, u):
    g = bernstein_value(spec.components["g"], d / spec.param("b_S", 1.0))
    f = cm_value(spec.components["f"], np.abs(u) / (spec.param("b_T", 1.0) * g))
    return spec.param("sigma2") * g**-0.5 * f


def _eval_wendland(spec, d, u):
    h_comp = spec.components["h"]
    h = support_value(h_comp, u)
    c = float(support_value(h_comp, 0.0))
    mu, k, alpha = spec.param("mu"), int(spec.param("k", 0)), spec.param("alpha")
    return spec.param("sigma2", 1.0) * (h / c) ** alpha * wendland(d / h, mu, k)


def _eval_quasi(spec, d, u):
    f = spec.components["f"]
    ms = cm_value(spec.components["spatial"], d)
    ct = temporal_value(spec.temporal_correlation, u)
    inner = 0.5 * qa_inverse(f, ms) + 0.5 * qa_inverse(f, ct)
    return spec.param("sigma2", 1.0) * qa_forward(f, inner)


def _gneiting_k(r, u, s2, b_s, b_t):
    a = 1 + r / b_s
    return s2 / a**3 * np.exp(-np.abs(u) / (b_t * np.sqrt(a)))


def _eval_gneiting(spec, d, u):
    return _gneiting_k(d, u, spec.param("sigma2"), spec.param("b_S"), spec.param("b_T"))


def _matern_gneiting(r, u, s2, nu, b_s, b_t, a):
    # Gneiting form in R^3: the distance is scaled by gamma^(1/2), which keeps
    # it positive definite for every nu > 0 (scaling by gamma is not).
    gamma = 1 + (np.abs(u) / b_t) ** a
    return s2 / gamma**1.5 * matern(r / (b_s * np.sqrt(gamma)), nu)


def _chord(d):
    return 2 * np.sin(d / 2)


def _eval_cmg(spec, d, u):
    p = spec.params
    return _matern_gneiting(
        _chord(d), u, p["sigma2"], p["nu"], p["b_S"], p["b_T"], p.get("a", 1.0)
    )


def _eval_chordal_lift(spec, d, u):
    e = spec.components["euclidean"]
    s2 = spec.param("sigma2", 1.0)
    r = _chord(d)
    p = e.params
    if e.tag == "Matern":
        val = s2 * matern(r / p["scale"], p["nu"]) * np.ones_like(u)
    elif e.tag == "Gneiting":
        val = _gneiting_k(r, u, s2, p["b_S"], p["b_T"])
    else:
        val = _matern_gneiting(r, u, s2, p["nu"], p["b_S"], p["b_T"], p.get("a", 1.0))
    if spec.temporal_correlation is not None:
        val = val * temporal_value(spec.temporal_correlation, u)
    return val


def _eval_separable(spec, d, u):
    return evaluate(spec.children[0], d, 0.0, check=False) * temporal_value(
        spec.temporal_correlation, u
    )


def _eval_transport(spec, d, u):
    from .simulate import transport_kernel_value

    return transport_kernel_value(spec, d, u)


_EVALUATORS: dict[str, Callable] = {
    **{f: _eval_table for f in TABLE_FAMILIES},
    "PowerSeries": _eval_power_series,
    "SchoenbergSeries": _eval_schoenberg_series,
    "ModifiedGneiting": _eval_modified_gneiting,
    "ScaleMixture": _eval_scale_mixture,
    "AdaptiveGneiting": _eval_adaptive,
    "DynamicalWendland": _eval_wendland,
    "QuasiArithmetic": _eval_quasi,
    "Gneiting": _eval_gneiting,
    "ChordalMaternGneiting": _eval_cmg,
    "ChordalLift": _eval_chordal_lift,
    "SeparableProduct": _eval_separable,
    "LagrangianTransport": _eval_transport,
}


def evaluate(spec: KernelSpec, d, u=0.0, check: bool = True):
    """Evaluate ``psi(d, u)`` with numpy broadcasting.

    Parameters
    ----------
    spec : KernelSpec
    d : array_like
        Great-circle angles in ``[0, pi]``.
    u : array_like
        Temporal lags.
    check : bool
        Validate the parameters first (raises :class:`InvalidParameterError`).

    Returns
    -------
    float or ndarray
    """
    d = np.asarray(d, dtype=float)
    u = np.asarray(u, dtype=float)
    if np.any(~np.isfinite(d)) or np.any(d < -_DOMAIN_TOL) or np.any(
        d > math.pi + _DOMAIN_TOL
    ):
        raise DomainError("great-circle distance outside [0, pi]")
    if np.any(~np.isfinite(u)):
        raise DomainError("temporal lag must be finite")
    if check:
        _require_valid(spec)
    d = np.clip(d, 0.0, math.pi)
    d, u = np.broadcast_arrays(d, u)
    out = np.asarray(_EVALUATORS[spec.family](spec, d, u), dtype=float)
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# Gram matrices


def _expand_design(sites, times, gridded: bool):
    x = as_xyz(sites)
    t = np.atleast_1d(np.asarray(times, dtype=float)).ravel()
    if gridded:
        # time-major ordering: index = it * n_sites + is
        x = np.tile(x, (t.size, 1))
        t = np.repeat(t, len(as_xyz(sites)))
    elif x.shape[0] != t.size:
        raise ValueError(
            f"dimension mismatch: {x.shape[0]} sites but {t.size} times "
            "(pass gridded=True for a space-time grid)"
        )
    return x, t


def cross_covariance(spec: KernelSpec, sites_a, times_a, sites_b, times_b) -> np.ndarray:
    """Covariance matrix between two scattered space-time designs."""
    xa, ta = _expand_design(sites_a, times_a, False)
    xb, tb = _expand_design(sites_b, times_b, False)
    if spec.family == "LagrangianTransport":
        from .simulate import transport_cross_covariance

        return transport_cross_covariance(spec, xa, ta, xb, tb)
    _require_valid(spec)
    return evaluate(spec, distance_matrix(xa, xb), ta[:, None] - tb[None, :], check=False)


def gram_matrix(spec: KernelSpec, sites, times, gridded: bool = False) -> np.ndarray:
    """Symmetric covariance matrix of a space-time design.

    Parameters
    ----------
    spec : KernelSpec
    sites : SpherePoint list or (n, 3) array
    times : sequence of float
    gridded : bool
        If true the design is the cross product ``sites x times`` ordered
        time-major, so a separable kernel gives ``kron(T, S)``.
    """
    x, t = _expand_design(sites, times, gridded)
    k = cross_covariance(spec, x, t, x, t)
    k = 0.5 * (k + k.T)
    return k


# ---------------------------------------------------------------------------
# constructors


def _as_component(c, cls=Component):
    if isinstance(c, str):
        return cls(c, {})
    if isinstance(c, tuple) and len(c) == 2:
        return cls(c[0], dict(c[1]))
    return _component(c, cls)


def _built(spec: KernelSpec) -> KernelSpec:
    _require_valid(spec)
    return spec


def quasi_arithmetic(f, spatial, temporal, sigma2: float = 1.0) -> KernelSpec:
    """Quasi-arithmetic mean of a spatial and a temporal margin.

    ``psi(d, u) = sigma2 f(f^{-1}(psi_S(d))/2 + f^{-1}(C_T(u))/2)``.

    Parameters
    ----------
    f : Component or tag
        Generator, ``"Exponential"`` (``exp(-t)``) or ``"Cauchy"``
        (``(1+t)^-beta``).
    spatial : Component
        Completely monotone spatial margin (restricted to ``[0, pi]``).
    temporal : TemporalCorrelation
    """
    f = _as_component(f)
    if f.tag not in QA_GENERATORS:
        raise InvalidParameterError(
            f"generator {f.tag!r} has no closed-form inverse; use one of {sorted(QA_GENERATORS)}"
        )
    if isinstance(spatial, KernelSpec):
        raise InvalidParameterError(
            "the spatial margin must be a completely monotone component"
        )
    return _built(
        KernelSpec(
            "QuasiArithmetic",
            {"sigma2": sigma2},
            temporal_correlation=_as_component(temporal, TemporalCorrelation),
            components={"f": f, "spatial": _as_component(spatial)},
        )
    )


def dynamical_wendland(mu: float, k: int, alpha: float, h, sigma2: float = 1.0) -> KernelSpec:
    """Wendland kernel whose support ``h(|u|)`` shrinks with the lag.

    ``psi(d, u) = sigma2 (h(|u|)/c)^alpha phi_{mu,k}(d / h(|u|))`` with
    ``c = h(0)``, so that ``psi(0, 0) = sigma2``.
    """
    h = _as_component(h)
    if h.tag == "PowerDecay" and "beta" not in h.params:
        h = Component(h.tag, {**h.params, "beta": 1.0 / alpha})
    return _built(
        KernelSpec(
            "DynamicalWendland",
            {"sigma2": sigma2, "mu": mu, "k": k, "alpha": alpha},
            components={"h": h},
        )
    )


def chordal_lift(euclidean, sigma2: float = 1.0, temporal=None) -> KernelSpec:
    """Euclidean covariance evaluated at the chordal distance ``2 sin(d/2)``."""
    return _built(
        KernelSpec(
            "ChordalLift",
            {"sigma2": sigma2},
            temporal_correlation=_as_component(temporal, TemporalCorrelation),
            components={"euclidean": _as_component(euclidean)},
        )
    )


def separable_product(spatial: KernelSpec, temporal) -> KernelSpec:
    """Product of a spatial margin ``spatial(d, 0)`` and a temporal correlation."""
    return _built(
        KernelSpec(
            "SeparableProduct",
            {},
            children=(spatial,),
            temporal_correlation=_as_component(temporal, TemporalCorrelation),
        )
    )


def adaptive_gneiting(
    f, g, sigma2: float = 1.0, b_S: float = 1.0, b_T: float = 1.0
) -> KernelSpec:
    """``sigma2 g(d/b_S)^{-1/2} f(|u| / (b_T g(d/b_S)))``."""
    f = _as_component(f)
    g = _as_component(g)
    if f.tag not in _ADAPTIVE_F:
        raise InvalidParameterError(f"f must be one of {_ADAPTIVE_F}, got {f.tag!r}")
    if g.tag not in BERNSTEIN:
        raise InvalidParameterError(f"g must be one of {sorted(BERNSTEIN)}, got {g.tag!r}")
    return _built(
        KernelSpec(
            "AdaptiveGneiting",
            {"sigma2": sigma2, "b_S": b_S, "b_T": b_T},
            components={"f": f, "g": g},
        )
    )


def modified_gneiting(sigma2: float, b_S: float, b_T: float) -> KernelSpec:
    """``sigma2 / gamma^3 exp(-d gamma / b_S)`` with ``gamma = 1 + |u|/b_T``."""
    return _built(
        KernelSpec("ModifiedGneiting", {"sigma2": sigma2, "b_S": b_S, "b_T": b_T})
    )


def scale_mixture(f, sigma2: float, b_S: float, b_T: float) -> KernelSpec:
    """``sigma2 / gamma^3 f(d gamma / b_S)`` for a completely monotone ``f``."""
    return _built(
        KernelSpec(
            "ScaleMixture",
            {"sigma2": sigma2, "b_S": b_S, "b_T": b_T},
            components={"f": _as_component(f)},
        )
    )


def lagrangian_transport(spatial: KernelSpec, law) -> KernelSpec:
    """Spatial field transported by powers of a random rotation.

    ``law`` is a :class:`~spheretime.simulate.RotationLaw` or its component form.
    """
    if hasattr(law, "to_component"):
        law = law.to_component()
    return _built(
        KernelSpec(
            "LagrangianTransport",
            {},
            children=(spatial,),
            components={"law": _as_component(law)},
        )
    )
