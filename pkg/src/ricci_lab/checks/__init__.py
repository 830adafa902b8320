"""Numerical verifiers for curvature inequalities."""

from .bochner import be_check, be_margins, be_scan, gradient_estimate_check, gradient_margin
from .contraction import contraction_margin, wp_contraction_check
from .entropy import (
    cd_check,
    cd_margin,
    ent_slope_check,
    entropy_slope,
    evi_check,
    evi_margin,
    pathwise_convexity_check,
    pathwise_margins,
)
from .families import function_family, nonnegative_family, random_measure, random_measure_pairs
from .measure import change_of_measure, lambda_convexity_check, lambda_convexity_margin, tensor_curvature
from .report import CheckReport, make_report, merge_reports

__all__ = [
    "CheckReport",
    "be_check",
    "be_margins",
    "be_scan",
    "cd_check",
    "cd_margin",
    "change_of_measure",
    "contraction_margin",
    "ent_slope_check",
    "entropy_slope",
    "evi_check",
    "evi_margin",
    "function_family",
    "gradient_estimate_check",
    "gradient_margin",
    "lambda_convexity_check",
    "lambda_convexity_margin",
    "make_report",
    "merge_reports",
    "nonnegative_family",
    "pathwise_convexity_check",
    "pathwise_margins",
    "random_measure",
    "random_measure_pairs",
    "tensor_curvature",
    "wp_contraction_check",
]
