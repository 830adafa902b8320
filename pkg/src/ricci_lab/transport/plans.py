"""Couplings, exact W_p by linear programming or monotone rearrangement, and W_inf."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog

from ..errors import InputError, NumericError
from ..space import DiscreteSpace, ProbMeasure
from .flow import max_flow_plan

MARGINAL_TOL = 1e-10
MASS_TOL = 1e-13


class _Infeasible:
    """Sentinel returned by constrained_coupling when no coupling exists."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "INFEASIBLE"

    def __bool__(self):
        return False


INFEASIBLE = _Infeasible()


@dataclass(frozen=True, eq=False)
class CouplingPlan:
    """Joint mass matrix q(x, y) with marginals source and target."""

    mass: np.ndarray
    source: ProbMeasure
    target: ProbMeasure

    def __post_init__(self):
        q = np.array(self.mass, dtype=float)
        n = self.source.space.n
        if q.shape != (n, self.target.space.n):
            raise InputError("plan shape does not match the marginals")
        if np.any(q < 0):
            raise InputError("plan has negative entries")
        q.setflags(write=False)
        object.__setattr__(self, "mass", q)

    def marginal_error(self) -> float:
        return max(
            float(np.abs(self.mass.sum(axis=1) - self.source.masses).max()),
            float(np.abs(self.mass.sum(axis=0) - self.target.masses).max()),
        )

    def validate(self, tol: float = MARGINAL_TOL) -> None:
        err = self.marginal_error()
        if err > tol:
            raise NumericError(f"coupling marginals off by {err:.3e}")

    def support(self, floor: float = 0.0):
        i, j = np.nonzero(self.mass > floor)
        return i, j, self.mass[i, j]

    def cost(self, p: float) -> float:
        d = self.source.space.metric
        i, j, w = self.support()
        if np.isinf(p):
            return float(d[i, j].max()) if len(i) else 0.0
        return float(w @ d[i, j] ** p)

    def to_json(self) -> dict:
        i, j, w = self.support()
        return {"rows": i.tolist(), "cols": j.tolist(), "mass": w.tolist()}


def _check_pair(space: DiscreteSpace, mu: ProbMeasure, nu: ProbMeasure) -> None:
    if mu.space.n != space.n or nu.space.n != space.n:
        raise InputError("measures live on a different space")
    for m in (mu, nu):
        if abs(m.masses.sum() - 1.0) > 1e-12:
            raise InputError("measures must have unit mass")


# --- one-dimensional monotone rearrangement ---------------------------------------


def monotone_pieces(a: np.ndarray, b: np.ndarray):
    """North-west corner pieces of the monotone coupling of two mass vectors.

    Returns (levels, rows, cols): piece k carries the quantile range
    [levels[k], levels[k+1]] from site rows[k] to site cols[k].
    """
    Fa = np.concatenate([[0.0], np.cumsum(a)])
    Fb = np.concatenate([[0.0], np.cumsum(b)])
    top = min(Fa[-1], Fb[-1])
    levels = np.union1d(Fa, Fb)
    levels = levels[levels <= top]
    if levels[-1] < top:
        levels = np.append(levels, top)
    mids = 0.5 * (levels[:-1] + levels[1:])
    keep = levels[1:] > levels[:-1]
    mids = mids[keep]
    lo = levels[:-1][keep]
    hi = levels[1:][keep]
    rows = np.clip(np.searchsorted(Fa, mids, side="right") - 1, 0, len(a) - 1)
    cols = np.clip(np.searchsorted(Fb, mids, side="right") - 1, 0, len(b) - 1)
    return np.concatenate([lo, hi[-1:]]), rows, cols


def monotone_plan(space: DiscreteSpace, mu: ProbMeasure, nu: ProbMeasure) -> CouplingPlan:
    _, rows, cols, w = _monotone_atoms(mu.masses, nu.masses)
    q = np.zeros((space.n, space.n))
    np.add.at(q, (rows, cols), w)
    return CouplingPlan(q, mu, nu)


def _monotone_atoms(a, b):
    levels, rows, cols = monotone_pieces(a, b)
    return levels, rows, cols, np.diff(levels)


def is_monotone(plan: CouplingPlan) -> bool:
    """Support is non-crossing: i < i' implies j <= j'.  Sufficient for
    optimality of any convex cost of |x - y| on the line."""
    i, j, _ = plan.support()
    order = np.lexsort((j, i))
    return bool(np.all(np.diff(j[order]) >= 0))


# --- exact LP -------------------------------------------------------------------------


COST_CAP = 1e12
RESCALE_PASSES = 8


def _solve_transport(C: np.ndarray, a: np.ndarray, b: np.ndarray):
    na, nb = C.shape
    rows_a = np.repeat(np.arange(na), nb)
    rows_b = na + np.tile(np.arange(nb), na)
    cols = np.arange(na * nb)
    A = sp.csr_matrix((np.ones(2 * na * nb), (np.concatenate([rows_a, rows_b]), np.concatenate([cols, cols]))), shape=(na + nb, na * nb))
    rhs = np.concatenate([a, b])
    # one constraint is redundant; dropping it absorbs the rounding mismatch of the totals
    res = linprog(
        C.ravel(),
        A_eq=A[:-1],
        b_eq=rhs[:-1],
        bounds=(0, None),
        method="highs-ds",
        options={"primal_feasibility_tolerance": 1e-10, "dual_feasibility_tolerance": 1e-10},
    )
    if res.status != 0:
        raise NumericError(f"transport LP failed: {res.message}")
    x = np.clip(res.x, 0.0, None).reshape(na, nb)
    duals = np.concatenate([res.eqlin.marginals, [0.0]])
    reduced = C - duals[:na, None] - duals[na:][None, :]
    if reduced.min() < -1e-7 * max(1.0, float(np.abs(C).max()) * 1e-12):
        raise NumericError(f"transport LP returned a non-optimal basis (reduced cost {reduced.min():.2e})")
    return x


def _lp_plan(cost: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Exact transportation LP restricted to the supports; dual-checked.

    Costs are first divided by their maximum.  When the optimum is tiny on
    that scale (high powers of the metric), the solver's tolerances swamp
    the costs that matter, so the LP is solved again with costs measured in
    units of the previous objective until that objective is of order one.  Entries above COST_CAP in those units are
    capped: an edge that expensive can carry at most 1/COST_CAP of the mass.
    """
    I = np.nonzero(a > 0)[0]
    J = np.nonzero(b > 0)[0]
    C = cost[np.ix_(I, J)]
    cmax = C.max() if C.size else 0.0
    scale = cmax if cmax > 0 else 1.0
    x = _solve_transport(C / scale, a[I], b[J])
    value = float((x * C).sum())
    for _ in range(RESCALE_PASSES):
        if not 0 < value < 1e-3 * scale:
            break
        scale = value
        x = _solve_transport(np.minimum(C / scale, COST_CAP), a[I], b[J])
        value = float((x * C).sum())
    q = np.zeros((len(a), len(b)))
    q[np.ix_(I, J)] = x
    return q


def _cost_scale(d: np.ndarray, a: np.ndarray, b: np.ndarray) -> float:
    """A cheap lower bound on W_inf used to condition high-power costs."""
    I = a > 0
    J = b > 0
    sub = d[np.ix_(I, J)]
    lb = max(sub.min(axis=1).max(), sub.min(axis=0).max())
    return lb if lb > 0 else max(float(d.max()), 1.0)


def wasserstein_p(space: DiscreteSpace, mu: ProbMeasure, nu: ProbMeasure, p: float = 2, method: str = "auto"):
    """Exact W_p distance and an optimal plan.

    ``method`` is "monotone" (intervals only), "lp" or "auto" (monotone on
    intervals, LP elsewhere).
    """
    if not (1 <= p < np.inf):
        raise InputError("p must satisfy 1 <= p < inf")
    _check_pair(space, mu, nu)
    if method == "auto":
        method = "monotone" if space.kind == "interval" else "lp"
    if method == "monotone":
        if space.kind != "interval":
            raise InputError("monotone rearrangement needs an interval space")
        plan = monotone_plan(space, mu, nu)
    elif method == "lp":
        scale = _cost_scale(space.metric, mu.masses, nu.masses)
        plan = CouplingPlan(_lp_plan((space.metric / scale) ** p, mu.masses, nu.masses), mu, nu)
    else:
        raise InputError(f"unknown method {method!r}")
    plan.validate()
    return plan.cost(p) ** (1.0 / p), plan


def squared_w2(space: DiscreteSpace, mu: ProbMeasure, nu: ProbMeasure) -> float:
    return wasserstein_p(space, mu, nu, 2)[1].cost(2)


# --- constrained couplings and W_inf ---------------------------------------------------


def _allowed(space: DiscreteSpace, threshold) -> np.ndarray:
    c = np.broadcast_to(np.asarray(threshold, dtype=float), space.metric.shape)
    if np.any(c < 0):
        raise InputError("threshold must be nonnegative")
    return space.metric <= c + 1e-12 * max(1.0, space.diameter)


def constrained_coupling(space: DiscreteSpace, mu: ProbMeasure, nu: ProbMeasure, threshold, mass_tol: float = MASS_TOL):
    """A coupling supported on {d(x, y) <= c(x, y)} or INFEASIBLE.

    Feasibility tolerates an unmatched mass of at most ``mass_tol``.
    """
    _check_pair(space, mu, nu)
    q, deficit = max_flow_plan(mu.masses, nu.masses, _allowed(space, threshold))
    if deficit > mass_tol:
        return INFEASIBLE
    return CouplingPlan(q, mu, nu)


def wasserstein_inf(space: DiscreteSpace, mu: ProbMeasure, nu: ProbMeasure, method: str = "auto", mass_tol: float = MASS_TOL):
    """W_inf and a feasible plan at the optimal threshold.

    "flow": bisection over the attained distances with a max-flow test.
    "monotone": the monotone coupling, optimal for every p on an interval.
    "auto" picks monotone on intervals and flow elsewhere.
    """
    _check_pair(space, mu, nu)
    if method == "auto":
        method = "monotone" if space.kind == "interval" else "flow"
    a, b = mu.masses, nu.masses
    if method == "monotone":
        if space.kind != "interval":
            raise InputError("monotone rearrangement needs an interval space")
        _, rows, cols, w = _monotone_atoms(a, b)
        keep = w > mass_tol
        value = float(space.metric[rows[keep], cols[keep]].max()) if keep.any() else 0.0
        return value, monotone_plan(space, mu, nu)
    if method != "flow":
        raise InputError(f"unknown method {method!r}")
    d = space.metric[np.ix_(a > 0, b > 0)]
    cands = np.unique(d)
    lo, hi = 0, len(cands) - 1
    best = None
    while lo < hi:
        mid = (lo + hi) // 2
        q, deficit = max_flow_plan(a, b, _allowed(space, cands[mid]))
        if deficit <= mass_tol:
            hi = mid
            best = (mid, q)
        else:
            lo = mid + 1
    if best is None or best[0] != lo:
        q, deficit = max_flow_plan(a, b, _allowed(space, cands[lo]))
        if deficit > mass_tol:
            raise NumericError("max-flow failed at the largest attained distance")
        best = (lo, q)
    return float(cands[lo]), CouplingPlan(best[1], mu, nu)


# --- cell-extended quantities on intervals ---------------------------------------------


def cell_edges(space: DiscreteSpace) -> np.ndarray:
    """Edges of the cells [x_i - h/2, x_i + h/2] of an interval grid."""
    x = space.coords[:, 0]
    h = space.h
    return np.concatenate([x - h / 2, [x[-1] + h / 2]])


def cell_quantile(space: DiscreteSpace, masses: np.ndarray, q) -> np.ndarray:
    """Inverse CDF of the measure spread uniformly over each cell.

    Ambiguous at levels where the CDF is flat (empty cells); use
    :func:`cell_quantile_in` when the cell is known.
    """
    F = np.concatenate([[0.0], np.cumsum(masses)])
    return np.interp(q, F, cell_edges(space))


def cell_quantile_in(space: DiscreteSpace, masses: np.ndarray, cells, q) -> np.ndarray:
    """Quantile at level q computed inside the given cells, clipped to them."""
    m = np.asarray(masses, dtype=float)
    cells = np.asarray(cells)
    F = np.concatenate([[0.0], np.cumsum(m)])
    e = cell_edges(space)
    lo, hi = e[cells], e[cells + 1]
    mass = m[cells]
    frac = np.where(mass > 0, (np.asarray(q, dtype=float) - F[cells]) / np.where(mass > 0, mass, 1.0), 0.0)
    return np.clip(lo + frac * (hi - lo), lo, hi)


def cell_w2_squared(space: DiscreteSpace, mu: ProbMeasure, nu: ProbMeasure) -> float:
    """Squared W_2 between the cell-spread (piecewise constant) versions of mu and nu.

    Both quantile functions are linear between consecutive CDF levels, so the
    integral is exact.  Each piece is evaluated inside the cell that owns it.
    """
    if space.kind != "interval":
        raise InputError("cell-spread transport needs an interval space")
    Fa = np.concatenate([[0.0], np.cumsum(mu.masses)])
    Fb = np.concatenate([[0.0], np.cumsum(nu.masses)])
    levels = np.union1d(np.union1d(np.clip(Fa, 0, 1), np.clip(Fb, 0, 1)), [0.0, 1.0])
    lo, hi = levels[:-1], levels[1:]
    keep = hi > lo
    lo, hi = lo[keep], hi[keep]
    mid = 0.5 * (lo + hi)
    n = space.n
    ca = np.clip(np.searchsorted(Fa, mid, side="left") - 1, 0, n - 1)
    cb = np.clip(np.searchsorted(Fb, mid, side="left") - 1, 0, n - 1)
    d0 = cell_quantile_in(space, mu.masses, ca, lo) - cell_quantile_in(space, nu.masses, cb, lo)
    d1 = cell_quantile_in(space, mu.masses, ca, hi) - cell_quantile_in(space, nu.masses, cb, hi)
    return float(np.sum((hi - lo) * (d0**2 + d0 * d1 + d1**2) / 3.0))
