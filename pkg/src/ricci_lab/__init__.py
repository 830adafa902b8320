"""Variable Ricci curvature bounds checked numerically on finite metric measure spaces."""

from .errors import (
    CapacityError,
    ConstructionError,
    EvaluationError,
    InputError,
    NumericError,
    RicciLabError,
    UnsupportedGeometryError,
)
from .space import (
    CurvatureField,
    DiscreteSpace,
    Potential,
    ProbMeasure,
    build_circle_space,
    build_interval_space,
    entropy,
    gamma,
    graph_space,
    laplacian,
    potential_hessian,
    product_space,
    space_from_spec,
)

__version__ = "0.1.0"

__all__ = [
    "CapacityError",
    "ConstructionError",
    "CurvatureField",
    "DiscreteSpace",
    "EvaluationError",
    "InputError",
    "NumericError",
    "Potential",
    "ProbMeasure",
    "RicciLabError",
    "UnsupportedGeometryError",
    "build_circle_space",
    "build_interval_space",
    "entropy",
    "gamma",
    "graph_space",
    "laplacian",
    "potential_hessian",
    "product_space",
    "space_from_spec",
]
