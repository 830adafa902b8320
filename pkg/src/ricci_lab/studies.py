"""Refinement studies that measure discretization budgets."""

from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np

from .checks.entropy import T_GRID, cd_check
from .checks.families import random_measure_pairs
from .checks.measure import change_of_measure
from .coupling import build_qstar
from .space import DiscreteSpace, Potential, build_interval_space


def double_well_space(n: int, L: float = 2.5):
    """Uniform interval reweighted by the double well, with k = V''."""
    V = Potential("double_well")
    return change_of_measure(build_interval_space(n, L), V, V.hessian)


def cd_refinement(factory: Callable[[int], tuple], ns: Sequence[int], pairs: int = 10, seed: int = 0, t_grid=T_GRID, S: int = 200) -> list[dict]:
    """Normalized cd margins at each resolution and tau(n) = max |margin_n - margin_next|.

    ``factory(n)`` returns (space, k).  The random pairs are drawn in
    continuum units, so row i of every resolution is the same continuum pair.
    The finest resolution only serves as reference and gets no tau.
    """
    ns = sorted(int(n) for n in ns)
    margins, hs = [], []
    for n in ns:
        space, k = factory(n)
        hs.append(space.h)
        margins.append(np.array([cd_check(space, k, mu, nu, t_grid, S).residuals for mu, nu in random_measure_pairs(space, pairs, seed)]))
    rows = []
    for i, n in enumerate(ns):
        tau = float(np.abs(margins[i] - margins[i + 1]).max()) if i + 1 < len(ns) else None
        rows.append({"n": n, "h": hs[i], "min_margin": float(margins[i].min()), "tau": tau})
    return rows


def coupling_slack_table(ns: Sequence[int], deltas: Sequence[float], L: float = 4.0, K: float = 1.0, eps: float = 1e-3) -> list[dict]:
    """Max pair slack lam e^{K delta} of q* on OU intervals across (n, delta)."""
    rows = []
    for n in ns:
        space = build_interval_space(int(n), L, Potential("quadratic"))
        for delta in deltas:
            qk = build_qstar(space, K, float(delta), eps)
            slack = qk.max_slack()
            rows.append(
                {
                    "n": int(n),
                    "h": space.h,
                    "delta": float(delta),
                    "max_slack": slack,
                    "excess_over_h": (slack - 1.0) / space.h,
                    "continuum_rate": math.exp(K * float(delta)),
                }
            )
    return rows


def slack_constant(table: Sequence[dict]) -> float:
    """Smallest C with max_slack <= 1 + C h over the whole table."""
    return max(row["excess_over_h"] for row in table)
