"""One-dimensional building blocks used inside the space-time kernels.

Each catalogue maps a tag to a function of a non-negative argument plus the
parameter constraints that make it admissible for its role:

* ``COMPLETELY_MONOTONE``: completely monotone ``f`` on ``[0, inf)`` with
  ``f(0) = 1`` (scale mixtures, adaptive Gneiting, quasi-arithmetic margins).
* ``BERNSTEIN``: positive functions with completely monotone derivative
  (the ``g`` slot of the adaptive Gneiting class).
* ``TEMPORAL``: correlation functions on the real line.
* ``SUPPORT``: positive, decreasing, convex support functions ``h`` for the
  dynamically supported Wendland kernels.
* ``QA_GENERATORS``: invertible completely monotone generators of
  quasi-arithmetic means.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable, Mapping

import numpy as np
from scipy.special import gammaln, kve


class InvalidParameterError(ValueError):
    """A kernel or component was built with parameters outside its valid range."""


@dataclass(frozen=True)
class Component:
    """A tagged one-dimensional function with its parameters."""

    tag: str
    params: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "params", dict(self.params))

    def get(self, name: str, default: float | None = None) -> float:
        if name in self.params:
            return self.params[name]
        if default is None:
            raise InvalidParameterError(f"{self.tag}: missing parameter {name!r}")
        return default

    def to_dict(self) -> dict[str, Any]:
        return {"tag": self.tag, "params": dict(self.params)}

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]):
        return cls(data["tag"], dict(data.get("params", {})))


class TemporalCorrelation(Component):
    """Correlation function of the temporal lag, ``rho(0) = 1``."""

    def __call__(self, u) -> np.ndarray:
        return temporal_value(self, u)

    def validate(self) -> list[str]:
        return _validate(TEMPORAL, self, "temporal correlation")


# ---------------------------------------------------------------------------
# elementary functions


_MATERN_CLOSED = {
    0.5: lambda x: np.ones_like(x),
    1.5: lambda x: 1.0 + x,
    2.5: lambda x: 1.0 + x + x * x / 3.0,
}


def matern(x, nu: float) -> np.ndarray:
    """Matern correlation ``2^(1-nu)/Gamma(nu) x^nu K_nu(x)``, equal to 1 at 0."""
    x = np.asarray(x, dtype=float)
    if nu in _MATERN_CLOSED:
        return _MATERN_CLOSED[nu](np.abs(x)) * np.exp(-np.abs(x))
    out = np.ones_like(x)
    pos = x > 0
    if np.any(pos):
        xp = x[pos]
        with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
            logv = (
                (1.0 - nu) * np.log(2.0)
                - gammaln(nu)
                + nu * np.log(xp)
                + np.log(kve(nu, xp))
                - xp
            )
        out[pos] = np.where(np.isfinite(logv), np.exp(logv), 0.0)
    return np.minimum(out, 1.0)


def wendland(x, mu: float, k: int) -> np.ndarray:
    """Wendland correlation ``(1-x)_+^(mu+k) P_k(x)`` for ``k = 0..3``."""
    x = np.asarray(x, dtype=float)
    if k == 0:
        poly = np.ones_like(x)
    elif k == 1:
        poly = 1 + x * (mu + 1)
    elif k == 2:
        poly = 1 + x * (mu + 2) + x * x * (mu * mu + 4 * mu + 3) / 3.0
    elif k == 3:
        poly = (
            1
            + x * (mu + 3)
            + x * x * (2 * mu * mu + 12 * mu + 15) / 5.0
            + x**3 * (mu**3 + 9 * mu * mu + 23 * mu + 15) / 15.0
        )
    else:
        raise InvalidParameterError(f"Wendland smoothness k={k} not in 0..3")
    base = np.clip(1.0 - x, 0.0, None)
    return base ** (mu + k) * poly


# ---------------------------------------------------------------------------
# catalogues
#
# Every entry: (function(x, params) -> values, validator(params) -> violations)


def _scaled(c: Component, x):
    return np.abs(np.asarray(x, dtype=float)) / c.get("scale", 1.0)


SYMBOLS = {
    "alpha": "α",
    "beta": "β",
    "tau": "τ",
    "nu": "ν",
    "mu": "μ",
    "epsilon": "ε",
    "lambda": "λ",
    "sigma2": "σ²",
}


def symbol(name: str) -> str:
    return SYMBOLS.get(name, name)


def _in_range(name, value, lo, hi, lo_open=True, hi_open=False):
    lo_ok = value > lo if lo_open else value >= lo
    hi_ok = value < hi if hi_open else value <= hi
    if lo_ok and hi_ok:
        return []
    lb = "(" if lo_open else "["
    rb = ")" if hi_open else "]"
    return [f"{symbol(name)} ∈ {lb}{_fmt(lo)},{_fmt(hi)}{rb}"]


def _fmt(v):
    return "π" if v == np.pi else f"{v:g}"


def _positive(name, value):
    return [] if value > 0 else [f"{symbol(name)} > 0"]


def _scale_violation(c: Component):
    return _positive("scale", c.get("scale", 1.0))


def _power_exp(x, c):
    return np.exp(-(x ** c.get("alpha", 1.0)))


def _gen_cauchy(x, c):
    a = c.get("alpha", 1.0)
    return (1.0 + x**a) ** (-c.get("beta", 1.0) / a)


def _dagum(x, c):
    b = c.get("beta", 1.0)
    xb = x**b
    return 1.0 - (xb / (1.0 + xb)) ** c.get("tau", 1.0)


COMPLETELY_MONOTONE: dict[str, tuple[Callable, Callable]] = {
    "Exponential": (lambda x, c: np.exp(-x), lambda c: []),
    "PowerExponential": (
        _power_exp,
        lambda c: _in_range("alpha", c.get("alpha", 1.0), 0, 1),
    ),
    "GenCauchy": (
        _gen_cauchy,
        lambda c: _in_range("alpha", c.get("alpha", 1.0), 0, 1)
        + _positive("beta", c.get("beta", 1.0)),
    ),
    "Dagum": (
        _dagum,
        lambda c: _in_range("beta", c.get("beta", 1.0), 0, 1)
        + _in_range("tau", c.get("tau", 1.0), 0, 1),
    ),
    "Matern": (
        lambda x, c: matern(x, c.get("nu", 0.5)),
        lambda c: _in_range("nu", c.get("nu", 0.5), 0, 0.5),
    ),
}


def _bern_gc(x, c):
    a = c.get("alpha", 1.0)
    return (1.0 + x**a) ** (c.get("beta", 1.0) / a)


def _bern_gc_check(c):
    a = c.get("alpha", 1.0)
    b = c.get("beta", 1.0)
    out = _in_range("alpha", a, 0, 1) + _positive("beta", b)
    if b > a:
        out.append("β ≤ α")
    return out


BERNSTEIN: dict[str, tuple[Callable, Callable]] = {
    "Dagum": (
        lambda x, c: 1.0 + (x ** c.get("beta", 1.0) / (1.0 + x ** c.get("beta", 1.0)))
        ** c.get("tau", 1.0),
        lambda c: _in_range("beta", c.get("beta", 1.0), 0, 1)
        + _in_range("tau", c.get("tau", 1.0), 0, 1),
    ),
    "GenCauchy": (_bern_gc, _bern_gc_check),
    "Power": (
        lambda x, c: c.get("c", 1.0) + x ** c.get("alpha", 1.0),
        lambda c: _in_range("alpha", c.get("alpha", 1.0), 0, 1)
        + _positive("c", c.get("c", 1.0)),
    ),
}

TEMPORAL: dict[str, tuple[Callable, Callable]] = {
    "Exponential": (lambda x, c: np.exp(-x), lambda c: []),
    "PowerExponential": (
        _power_exp,
        lambda c: _in_range("alpha", c.get("alpha", 1.0), 0, 2),
    ),
    "Cauchy": (
        _gen_cauchy,
        lambda c: _in_range("alpha", c.get("alpha", 1.0), 0, 2)
        + _positive("beta", c.get("beta", 1.0)),
    ),
    "Dagum": (
        _dagum,
        lambda c: _in_range("beta", c.get("beta", 1.0), 0, 1)
        + _in_range("tau", c.get("tau", 1.0), 0, 1),
    ),
    "Constant": (lambda x, c: np.ones_like(x), lambda c: []),
}


def _support_power(t, c):
    return c.get("c") * (1.0 + t / c.get("scale", 1.0)) ** (-c.get("beta"))


SUPPORT: dict[str, tuple[Callable, Callable]] = {
    # h(t) = c (1 + t/scale)^(-beta)
    "PowerDecay": (
        _support_power,
        lambda c: _in_range("c", c.get("c", np.nan), 0, np.pi)
        + _positive("beta", c.get("beta", np.nan)),
    ),
    # h(t) = c exp(-t/scale)
    "ExpDecay": (
        lambda t, c: c.get("c") * np.exp(-t / c.get("scale", 1.0)),
        lambda c: _in_range("c", c.get("c", np.nan), 0, np.pi),
    ),
}


def _qa_exp_inverse(y, c):
    return -np.log(y)


def _qa_cauchy(t, c):
    return (1.0 + t) ** (-c.get("beta", 1.0))


def _qa_cauchy_inverse(y, c):
    return y ** (-1.0 / c.get("beta", 1.0)) - 1.0


# tag -> (f, f_inverse, validator)
QA_GENERATORS: dict[str, tuple[Callable, Callable, Callable]] = {
    "Exponential": (lambda t, c: np.exp(-t), _qa_exp_inverse, lambda c: []),
    "Cauchy": (
        _qa_cauchy,
        _qa_cauchy_inverse,
        lambda c: _positive("beta", c.get("beta", 1.0)),
    ),
}


def _validate(catalogue, comp: Component, role: str) -> list[str]:
    if comp.tag not in catalogue:
        return [f"{role} tag {comp.tag!r} not one of {sorted(catalogue)}"]
    checker = catalogue[comp.tag][-1]
    try:
        out = list(checker(comp))
    except InvalidParameterError as exc:
        return [str(exc)]
    if catalogue is not QA_GENERATORS:
        out += _scale_violation(comp)
    return [f"{role} {comp.tag}: {v}" for v in out]


def validate_component(catalogue_name: str, comp: Component) -> list[str]:
    catalogue = {
        "completely_monotone": COMPLETELY_MONOTONE,
        "bernstein": BERNSTEIN,
        "temporal": TEMPORAL,
        "support": SUPPORT,
        "qa_generator": QA_GENERATORS,
    }[catalogue_name]
    return _validate(catalogue, comp, catalogue_name.replace("_", " "))


def _lookup(catalogue, comp: Component, role: str):
    try:
        return catalogue[comp.tag]
    except KeyError:
        raise InvalidParameterError(
            f"{role} tag {comp.tag!r} not one of {sorted(catalogue)}"
        ) from None


def cm_value(comp: Component, x) -> np.ndarray:
    fn = _lookup(COMPLETELY_MONOTONE, comp, "completely monotone function")[0]
    return fn(_scaled(comp, x), comp)


def bernstein_value(comp: Component, x) -> np.ndarray:
    fn = _lookup(BERNSTEIN, comp, "Bernstein function")[0]
    return fn(_scaled(comp, x), comp)


def temporal_value(comp: Component, u) -> np.ndarray:
    fn = _lookup(TEMPORAL, comp, "temporal correlation")[0]
    return fn(_scaled(comp, u), comp)


def support_value(comp: Component, t) -> np.ndarray:
    fn = _lookup(SUPPORT, comp, "support function")[0]
    return fn(np.abs(np.asarray(t, dtype=float)), comp)


def qa_forward(comp: Component, t) -> np.ndarray:
    return _lookup(QA_GENERATORS, comp, "quasi-arithmetic generator")[0](t, comp)


def qa_inverse(comp: Component, y) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    if np.any((y <= 0) | (y > 1 + 1e-12)):
        raise InvalidParameterError(
            "margin value outside the range (0, 1] of the quasi-arithmetic generator"
        )
    return _lookup(QA_GENERATORS, comp, "quasi-arithmetic generator")[1](
        np.minimum(y, 1.0), comp
    )
