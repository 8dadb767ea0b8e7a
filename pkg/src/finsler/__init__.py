"""Numerical anisotropic (Finsler) tensor calculus on truncated Taylor jets."""
from .connections import (
    ChristoffelField,
    QSpec,
    TensorField,
    berwald,
    berwald_christoffels,
    berwald_tensor,
    chern,
    chern_christoffels,
    covariant_derivative_tensor,
    difference_tensor,
    distinguished,
    distinguished_christoffels,
    landsberg_tensor,
    metric_compatibility,
    torsion,
    vertical_deriv_P,
)
from .curvature import (
    CurvatureValue,
    bianchi_residuals,
    compare_curvatures,
    curvature_symmetry_residuals,
    curvature_tensor,
    flag_curvature,
    vertical_derivative_tensor,
)
from .dynamics import (
    Curve,
    FieldAlongCurve,
    PiecewiseCurve,
    VariationSpec,
    energy,
    first_variation,
    geodesic_field,
    integrate_geodesic,
    integrate_jacobi,
    osculating_compare,
    parallel_transport,
    second_variation,
)
from .errors import (
    ConeExit,
    ConeViolation,
    DegenerateFlag,
    DegenerateMetric,
    DomainError,
    FinslerError,
    ParseError,
)
from .expr import Expression, parse
from .jets import Jet, derive
from .metrics import (
    MetricSpec,
    TensorValue,
    cartan_tensor,
    custom,
    euclidean,
    fundamental_tensor,
    minkowski_quartic,
    randers,
    riemannian_sphere,
    spray_coefficients,
)

__version__ = "0.1.0"
