"""Schoenberg expansions of space-time kernels.

A continuous ``psi(d, u)`` on the n-sphere cross time is a covariance iff

    psi(d, u) = sum_k phi_{k,n}(u) c_k(n, cos d)

with ``c_k`` the normalized Gegenbauer polynomials and every ``phi_{k,n}`` a
temporal covariance.  The coefficient functions are recovered by projection:

    phi_{k,n}(u) = N_k(n) |S^{n-1}| / |S^n| int_0^pi psi(x, u) c_k(n, cos x) sin^{n-1} x dx

which after ``t = cos x`` becomes a Gauss-Jacobi quadrature with weight
``(1 - t^2)^{(n-2)/2}`` (plain Gauss-Legendre on the 2-sphere).
"""
from __future__ import annotations

import io
import warnings
from dataclasses import dataclass, field

import numpy as np

from .kernels import KernelSpec, evaluate, validate_params
from .functions import InvalidParameterError
from .sphere import (
    DomainError,
    gauss_jacobi_symmetric,
    gauss_legendre,
    gegenbauer_normalized,
    harmonic_dimension,
    sphere_area,
)

DEFAULT_K_MAX = 200


class QuadratureWarning(UserWarning):
    """Quadrature results changed noticeably when the order was refined."""


@dataclass
class SchoenbergTable:
    """Coefficient functions ``phi_{k,n}`` tabulated on a lag grid.

    Attributes
    ----------
    n : int
        Sphere dimension.
    k_max : int
    u_grid : ndarray, shape (m,)
    coeffs : ndarray, shape (k_max + 1, m)
    """

    n: int
    k_max: int
    u_grid: np.ndarray
    coeffs: np.ndarray

    def __post_init__(self):
        self.u_grid = np.atleast_1d(np.asarray(self.u_grid, dtype=float))
        self.coeffs = np.asarray(self.coeffs, dtype=float).reshape(
            self.k_max + 1, self.u_grid.size
        )

    def to_text(self) -> str:
        """Columnar ``k u value`` text, one row per coefficient."""
        buf = io.StringIO()
        buf.write(f"# n={self.n} k_max={self.k_max}\n")
        buf.write("k,u,value\n")
        for k in range(self.k_max + 1):
            for j, u in enumerate(self.u_grid):
                buf.write(f"{k},{float(u)!r},{float(self.coeffs[k, j])!r}\n")
        return buf.getvalue()

    @classmethod
    def from_text(cls, text: str) -> "SchoenbergTable":
        lines = text.strip().splitlines()
        header = dict(tok.split("=") for tok in lines[0].lstrip("# ").split())
        n, k_max = int(header["n"]), int(header["k_max"])
        rows = [ln.split(",") for ln in lines[2:]]
        u_vals = sorted({float(r[1]) for r in rows})
        u_index = {u: j for j, u in enumerate(u_vals)}
        coeffs = np.zeros((k_max + 1, len(u_vals)))
        for k, u, v in rows:
            coeffs[int(k), u_index[float(u)]] = float(v)
        return cls(n, k_max, np.array(u_vals), coeffs)


def _rule(n: int, m: int):
    if n == 2:
        return gauss_legendre(m)
    return gauss_jacobi_symmetric(m, 0.5 * (n - 2))


def _normalization(n: int, k_max: int) -> np.ndarray:
    k = np.arange(k_max + 1)
    return harmonic_dimension(n, k) * sphere_area(n - 1) / sphere_area(n)


def _project(spec, n, k_max, u, m, check):
    rule = _rule(n, m)
    t = rule.nodes
    d = np.arccos(np.clip(t, -1.0, 1.0))
    vals = evaluate(spec, d[:, None], u[None, :], check=check)  # (m, n_u)
    basis = gegenbauer_normalized(n, k_max, t)  # (k+1, m)
    return _normalization(n, k_max)[:, None] * (basis @ (rule.weights[:, None] * vals))


def schoenberg_coefficients(
    spec: KernelSpec,
    n: int = 2,
    k_max: int = DEFAULT_K_MAX,
    u_grid=(0.0,),
    quad_order: int | None = None,
    validate: bool = True,
    check_refinement: bool = True,
) -> SchoenbergTable:
    """Compute ``phi_{k,n}(u)`` for ``k <= k_max`` on ``u_grid``.

    Parameters
    ----------
    spec : KernelSpec
    n : int
        Sphere dimension (``n >= 1``).
    k_max : int
    u_grid : sequence of float
    quad_order : int, optional
        Number of quadrature nodes, at least ``4 * k_max`` (default
        ``max(256, 4 * k_max)``).
    validate : bool
        Reject invalid specifications.  Diagnostics on deliberately broken
        kernels pass ``False``.
    check_refinement : bool
        Recompute at twice the order and warn with :class:`QuadratureWarning`
        when the results differ by more than ``1e-6`` relative.
    """
    if k_max < 0:
        raise ValueError("k_max must be >= 0")
    if quad_order is None:
        quad_order = max(256, 4 * k_max)
    if quad_order < 4 * k_max:
        raise ValueError(f"quad_order={quad_order} below 4*k_max={4 * k_max}")
    if validate:
        report = validate_params(spec)
        if not report.ok:
            raise InvalidParameterError(f"{spec.family}: {report}")
    u = np.atleast_1d(np.asarray(u_grid, dtype=float))
    coeffs = _project(spec, n, k_max, u, quad_order, check=False)
    if check_refinement:
        fine = _project(spec, n, k_max, u, 2 * quad_order, check=False)
        scale = max(np.max(np.abs(fine)), np.finfo(float).tiny)
        if np.max(np.abs(fine - coeffs)) > 1e-6 * scale:
            warnings.warn(
                f"Schoenberg coefficients changed by more than 1e-6 relative when "
                f"refining quadrature from {quad_order} to {2 * quad_order} nodes",
                QuadratureWarning,
                stacklevel=2,
            )
    return SchoenbergTable(n, k_max, u, coeffs)


def reconstruct(table: SchoenbergTable, d, u_index: int):
    """Partial sum ``sum_k phi_k(u_j) c_k(n, cos d)`` of a table."""
    if not -table.u_grid.size <= u_index < table.u_grid.size:
        raise IndexError(f"u_index {u_index} out of range for {table.u_grid.size} lags")
    d = np.asarray(d, dtype=float)
    if np.any(d < -1e-12) or np.any(d > np.pi + 1e-12):
        raise DomainError("great-circle distance outside [0, pi]")
    basis = gegenbauer_normalized(table.n, table.k_max, np.cos(np.clip(d, 0, np.pi)))
    out = np.tensordot(table.coeffs[:, u_index], basis, axes=(0, 0))
    return float(out) if np.ndim(out) == 0 else out


@dataclass
class ValidityReport:
    """Necessary-condition diagnostics for a candidate kernel.

    ``passed`` means every coefficient function is nonnegative at lag 0,
    every lag-Toeplitz matrix is positive semidefinite up to tolerance, and
    the truncated tail carries a small fraction of the mass.  This is a
    finite check, not a certificate of positive definiteness.
    """

    min_coefficient_at_zero: float
    negative_degrees: list[int]
    toeplitz_min_eigenvalues: np.ndarray
    min_toeplitz_eigenvalue: float
    tail_mass: float
    total_mass: float
    passed: bool
    thresholds: dict = field(default_factory=dict)

    def summary(self) -> str:
        verdict = "pass" if self.passed else "fail"
        return (
            f"{verdict}: min phi_k(0)={self.min_coefficient_at_zero:.3e} "
            f"(negative at k={self.negative_degrees[:10]}), "
            f"min Toeplitz eigenvalue={self.min_toeplitz_eigenvalue:.3e}, "
            f"tail mass={self.tail_mass:.3e} of {self.total_mass:.3e}"
        )


def validity_diagnostic(
    spec: KernelSpec,
    n: int = 2,
    k_max: int = DEFAULT_K_MAX,
    u_grid=(0.0, 1.0, 2.0),
    quad_order: int | None = None,
    coef_tol: float = 1e-9,
    eig_tol: float = 1e-8,
    tail_tol: float = 0.05,
) -> ValidityReport:
    """Check positive definiteness of each coefficient function on a lag grid.

    Parameter validation is bypassed so that broken specifications can be
    diagnosed.  For every degree ``k`` the matrix ``[phi_k(u_i - u_j)]`` is
    built over ``u_grid`` and its smallest eigenvalue recorded.
    """
    u = np.atleast_1d(np.asarray(u_grid, dtype=float))
    diffs = np.abs(u[:, None] - u[None, :])
    lags, inverse = np.unique(np.round(diffs, 12), return_inverse=True)
    if lags[0] != 0.0:
        lags = np.concatenate([[0.0], lags])
        inverse = inverse + 1
    table = schoenberg_coefficients(
        spec, n, k_max, lags, quad_order, validate=False, check_refinement=False
    )
    c = table.coeffs
    scale = max(abs(c[:, 0].sum()), np.finfo(float).tiny)
    at_zero = c[:, 0]
    mats = c[:, inverse.reshape(diffs.shape)]  # (k+1, m, m)
    eigs = np.linalg.eigvalsh(mats)[:, 0]
    tail = float(np.sum(np.abs(at_zero[k_max // 2 + 1 :])))
    total = float(np.sum(np.abs(at_zero)))
    negative = [int(k) for k in np.flatnonzero(at_zero < -coef_tol * scale)]
    passed = (
        not negative
        and float(eigs.min()) >= -eig_tol * scale
        and tail <= tail_tol * max(total, np.finfo(float).tiny)
    )
    return ValidityReport(
        min_coefficient_at_zero=float(at_zero.min()),
        negative_degrees=negative,
        toeplitz_min_eigenvalues=eigs,
        min_toeplitz_eigenvalue=float(eigs.min()),
        tail_mass=tail,
        total_mass=total,
        passed=passed,
        thresholds={"coef_tol": coef_tol, "eig_tol": eig_tol, "tail_tol": tail_tol},
    )


def power_series_coefficients(spec: KernelSpec, degree: int, u_grid=(0.0,)) -> np.ndarray:
    """Coefficients ``a_k(u)`` of ``psi(d, u) = sum_k a_k(u) cos^k d``.

    Exact for kernels that are polynomials of degree ``<= degree`` in
    ``cos d``; obtained by interpolation at ``degree + 1`` Chebyshev nodes.
    Returns an array of shape ``(degree + 1, len(u_grid))``.
    """
    j = np.arange(degree + 1)
    x = np.cos((2 * j + 1) * np.pi / (2 * (degree + 1)))
    u = np.atleast_1d(np.asarray(u_grid, dtype=float))
    vals = evaluate(spec, np.arccos(x)[:, None], u[None, :])
    out = np.empty((degree + 1, u.size))
    for i in range(u.size):
        cheb = np.polynomial.chebyshev.Chebyshev.fit(x, vals[:, i], degree, domain=[-1, 1])
        out[:, i] = np.polynomial.chebyshev.cheb2poly(cheb.coef)
    return out
