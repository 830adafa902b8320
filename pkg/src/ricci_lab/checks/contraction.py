"""Wasserstein contraction of the heat flow."""

from __future__ import annotations

import math

import numpy as np

from ..semigroups import heat_flow_measure
from ..space import DiscreteSpace, ProbMeasure
from ..transport import wasserstein_inf, wasserstein_p
from .report import CheckReport, make_report

CONTRACTION_TOLERANCE = 1e-3


def wasserstein(space: DiscreteSpace, mu: ProbMeasure, nu: ProbMeasure, p: float) -> float:
    if math.isinf(p):
        return wasserstein_inf(space, mu, nu)[0]
    return wasserstein_p(space, mu, nu, p)[0]


def contraction_margin(space: DiscreteSpace, K: float, mu: ProbMeasure, nu: ProbMeasure, t: float, p: float) -> float:
    """(e^{-Kt} W_p(mu, nu) - W_p(P_t mu, P_t nu)) / W_p(mu, nu); 0 when mu = nu."""
    w0 = wasserstein(space, mu, nu, p)
    if w0 == 0:
        return 0.0
    wt = wasserstein(space, heat_flow_measure(space, mu, t), heat_flow_measure(space, nu, t), p)
    return (math.exp(-K * t) * w0 - wt) / w0


def wp_contraction_check(space: DiscreteSpace, K: float, pairs, times, p: float, tolerance: float = CONTRACTION_TOLERANCE) -> CheckReport:
    """Contraction margins over pairs and times, relative to W_p(mu, nu)."""
    times = [float(t) for t in np.atleast_1d(times)]
    residuals, rows, w0s = [], [], []
    for idx, (mu, nu) in enumerate(pairs):
        w0 = wasserstein(space, mu, nu, p)
        w0s.append(w0)
        for t in times:
            if w0 == 0:
                residuals.append(0.0)
            else:
                wt = wasserstein(space, heat_flow_measure(space, mu, t), heat_flow_measure(space, nu, t), p)
                residuals.append((math.exp(-K * t) * w0 - wt) / w0)
            rows.append({"pair": idx, "t": t})
    params = {"K": float(K), "p": "inf" if math.isinf(p) else float(p), "times": times, "pairs": len(w0s), "tolerance_rule": "relative to W_p(mu,nu)"}
    return make_report(
        "contraction-wp",
        params,
        residuals,
        tolerance,
        rows,
        lambda i: dict(rows[i]),
        {"w_initial": w0s},
    )
