"""Exact optimal transport on finite spaces."""

from .geodesic import (
    GeodesicPlan,
    action_integral,
    action_per_atom,
    action_trace,
    displacement_geodesic,
    green_function,
    slope_action,
    slope_action_per_atom,
)
from .plans import (
    INFEASIBLE,
    CouplingPlan,
    cell_quantile,
    cell_quantile_in,
    cell_w2_squared,
    constrained_coupling,
    is_monotone,
    monotone_plan,
    squared_w2,
    wasserstein_inf,
    wasserstein_p,
)

__all__ = [
    "INFEASIBLE",
    "CouplingPlan",
    "GeodesicPlan",
    "action_integral",
    "action_per_atom",
    "action_trace",
    "cell_quantile",
    "cell_quantile_in",
    "cell_w2_squared",
    "constrained_coupling",
    "displacement_geodesic",
    "green_function",
    "is_monotone",
    "monotone_plan",
    "slope_action",
    "slope_action_per_atom",
    "squared_w2",
    "wasserstein_inf",
    "wasserstein_p",
]
