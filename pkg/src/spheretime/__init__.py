"""Covariance modelling, simulation and prediction for random fields on the
sphere cross time."""

from .functions import Component, InvalidParameterError, TemporalCorrelation
from .kernels import (
    FAMILIES,
    KernelSpec,
    adaptive_gneiting,
    chordal_lift,
    dynamical_wendland,
    evaluate,
    gram_matrix,
    lagrangian_transport,
    modified_gneiting,
    quasi_arithmetic,
    separable_product,
    validate_params,
)
from .sphere import DomainError, LatLonGrid, SpherePoint, chordal, geodesic

__version__ = "0.1.0"
