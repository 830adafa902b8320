"""Coupled Markov chains whose distance contracts at every dyadic step.

One step of semigroup time delta moves a pair (x, y) to (x', y') drawn from a
coupling q* of the heat kernel rows p_delta(x, .) and p_delta(y, .) supported
on {d(x', y') <= lam(x, y) d(x, y)}.  The chains themselves run in process
time: B_t corresponds to semigroup time t / 2, so one step is 2 delta.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .checks.report import make_report
from .errors import CapacityError, ConstructionError, InputError, NumericError
from .rng import uniforms
from .semigroups import markov_kernel
from .space import DiscreteSpace, ProbMeasure
from .transport.plans import INFEASIBLE, constrained_coupling, wasserstein_inf

SLACK_STEP = 1e-3
PAIR_CAP = 4096
TABLE_CAP = 20_000_000


def _support_tol(space: DiscreteSpace) -> float:
    # same allowance as the feasibility test of constrained couplings
    return 1e-12 * max(1.0, space.diameter)


@dataclass(frozen=True, eq=False)
class CoupledKernel:
    """One-step coupled kernel on pairs of sites.

    ``table`` is a sparse (n^2, n^2) matrix; row x*n + y is q*((x, y), .)
    over target pairs x'*n + y'.  ``lam[x, y]`` is the threshold multiplier
    used for the pair and ``P`` the heat kernel p_delta.
    """

    space: DiscreteSpace
    K: float
    delta: float
    eps: float
    P: np.ndarray
    lam: np.ndarray
    table: sp.csr_matrix

    @property
    def n(self) -> int:
        return self.space.n

    @property
    def step_time(self) -> float:
        """Process time covered by one step."""
        return 2.0 * self.delta

    def slack(self) -> np.ndarray:
        """lam(x, y) e^{K delta}: how far each pair is from the continuum rate."""
        return self.lam * math.exp(self.K * self.delta)

    def max_slack(self) -> float:
        off = ~np.eye(self.n, dtype=bool)
        return float(self.slack()[off].max()) if off.any() else 1.0

    def plan(self, x: int, y: int) -> np.ndarray:
        """Dense (n, n) coupling q*((x, y), .)."""
        row = self.table.getrow(x * self.n + y).toarray().ravel()
        return row.reshape(self.n, self.n)

    def to_json(self) -> dict:
        n = self.n
        rows = []
        for p in range(n * n):
            lo, hi = self.table.indptr[p], self.table.indptr[p + 1]
            idx = self.table.indices[lo:hi]
            rows.append(
                {
                    "x": p // n,
                    "y": p % n,
                    "lambda": float(self.lam[p // n, p % n]),
                    "targets": [[int(q // n), int(q % n), float(v)] for q, v in zip(idx, self.table.data[lo:hi])],
                }
            )
        return {"K": self.K, "delta": self.delta, "eps": self.eps, "n": n, "pairs": rows}


def _threshold_grid(K: float, delta: float, eps: float, j: int) -> float:
    return math.exp(-K * delta) * (1.0 + j * eps)


def minimal_multiplier(space: DiscreteSpace, px: ProbMeasure, py: ProbMeasure, d: float, K: float, delta: float, eps: float):
    """Smallest grid multiplier with a feasible constrained coupling, and that coupling.

    The search starts from the exact W_inf ratio, so usually one or two
    max-flow solves settle it; the step below is always confirmed infeasible.
    """
    w_inf, _ = wasserstein_inf(space, px, py)
    ratio = w_inf / d
    j = max(0, math.ceil((ratio * math.exp(K * delta) - 1.0) / eps - 1e-9))
    limit = space.diameter / d
    plan = constrained_coupling(space, px, py, _threshold_grid(K, delta, eps, j) * d)
    while plan is INFEASIBLE:
        j += 1
        if _threshold_grid(K, delta, eps, j) > limit * (1 + eps):
            return None, None
        plan = constrained_coupling(space, px, py, _threshold_grid(K, delta, eps, j) * d)
    while j > 0:
        lower = constrained_coupling(space, px, py, _threshold_grid(K, delta, eps, j - 1) * d)
        if lower is INFEASIBLE:
            break
        j, plan = j - 1, lower
    return _threshold_grid(K, delta, eps, j), plan


def build_qstar(space: DiscreteSpace, K: float, delta: float, eps: float = SLACK_STEP) -> CoupledKernel:
    """Deterministic one-step coupled kernel with per-pair minimal slack.

    Pair (y, x) reuses the transposed plan of (x, y); diagonal pairs get the
    identity coupling with lam = e^{-K delta}.
    """
    if not delta > 0:
        raise InputError("delta must be positive")
    if not eps > 0:
        raise InputError("eps must be positive")
    n = space.n
    P = markov_kernel(space, delta)
    measures = [ProbMeasure.from_masses(space, P[x], normalize=True) for x in range(n)]
    lam = np.full((n, n), math.exp(-K * delta))
    rows, cols, vals = [], [], []
    for x in range(n):
        targets = np.nonzero(P[x] > 0)[0]
        rows.append(np.full(len(targets), x * n + x))
        cols.append(targets * n + targets)
        vals.append(P[x, targets])
    for x in range(n):
        for y in range(x + 1, n):
            d = float(space.metric[x, y])
            value, plan = minimal_multiplier(space, measures[x], measures[y], d, K, delta, eps)
            if plan is None:
                raise ConstructionError(
                    f"no feasible threshold below the diameter ratio for pair ({x}, {y})",
                    witness={"x": x, "y": y, "distance": d},
                )
            lam[x, y] = lam[y, x] = value
            i, j, w = plan.support()
            rows += [np.full(len(i), x * n + y), np.full(len(i), y * n + x)]
            cols += [i * n + j, j * n + i]
            vals += [w, w]
    table = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n * n, n * n))
    table.sort_indices()
    lam.setflags(write=False)
    return CoupledKernel(space, float(K), float(delta), float(eps), P, lam, table)


# --- composition --------------------------------------------------------------------


def compose_kernel(qk: CoupledKernel, steps: int, cap: int = PAIR_CAP) -> np.ndarray:
    """Dense (n^2, n^2) kernel of ``steps`` coupled steps, by repeated squaring."""
    if int(steps) != steps or steps < 1:
        raise InputError("steps must be a positive integer")
    pairs = qk.n * qk.n
    if pairs > cap:
        raise CapacityError(f"{pairs} state pairs exceed the cap {cap}; sample paths instead")
    base = qk.table.toarray()
    result = None
    power = base
    k = int(steps)
    while k:
        if k & 1:
            result = power.copy() if result is None else result @ power
        k >>= 1
        if k:
            power = power @ power
    return result


def coordinate_marginals(qk: CoupledKernel, joint: np.ndarray, x: int, y: int):
    """Laws of the first and second coordinate after the joint transition from (x, y)."""
    row = joint[x * qk.n + y].reshape(qk.n, qk.n)
    return row.sum(axis=1), row.sum(axis=0)


def marginal_error(qk: CoupledKernel, steps: int, joint: np.ndarray | None = None) -> float:
    """Largest deviation of either coordinate marginal from p_{steps delta}."""
    joint = compose_kernel(qk, steps) if joint is None else joint
    target = markov_kernel(qk.space, steps * qk.delta)
    n = qk.n
    J = joint.reshape(n, n, n, n)
    first = J.sum(axis=3)
    second = J.sum(axis=2)
    err1 = np.abs(first - target[:, None, :]).max()
    err2 = np.abs(second - target[None, :, :]).max()
    return float(max(err1, err2))


def support_budget(qk: CoupledKernel, x: int, y: int, steps: int) -> list[dict]:
    """Propagate reachable pairs from (x, y) with the tightest product of lam along any path.

    Returns one entry per step with the worst ratio d(z) / (budget(z) d(x, y));
    the per-step invariant guarantees ratios <= 1.
    """
    n = qk.n
    d = qk.space.metric.ravel()
    lam = qk.lam.ravel()
    coo = qk.table.tocoo()
    keep = coo.data > 0
    src, dst = coo.row[keep], coo.col[keep]
    budget = np.full(n * n, np.inf)
    budget[x * n + y] = 1.0
    d0 = d[x * n + y]
    tol = _support_tol(qk.space)
    out = []
    for s in range(1, steps + 1):
        reach = np.isfinite(budget)
        sel = reach[src]
        new = np.full(n * n, np.inf)
        np.minimum.at(new, dst[sel], budget[src[sel]] * lam[src[sel]])
        budget = new
        live = np.isfinite(budget)
        excess = d[live] - budget[live] * d0
        out.append({"step": s, "reachable": int(live.sum()), "worst_excess": float(excess.max()), "ok": bool(excess.max() <= tol * s)})
    return out


# --- sampling ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CoupledTrajectory:
    """One coupled path on the dyadic grid, with the lam used at every step."""

    times: np.ndarray
    x: np.ndarray
    y: np.ndarray
    lam: np.ndarray
    seed: int
    path_index: int

    def distances(self, space: DiscreteSpace) -> np.ndarray:
        return space.metric[self.x, self.y]


class CoupledPaths(Sequence):
    """Batch of coupled trajectories stored as arrays (paths x times)."""

    def __init__(self, qk: CoupledKernel, X: np.ndarray, Y: np.ndarray, lam: np.ndarray, seed: int, violations: int):
        self.kernel = qk
        self.X = X
        self.Y = Y
        self.lam = lam
        self.seed = int(seed)
        self.violations = int(violations)
        self.times = np.arange(X.shape[1]) * qk.step_time

    def __len__(self) -> int:
        return self.X.shape[0]

    def __getitem__(self, i):
        if isinstance(i, slice):
            return [self[j] for j in range(*i.indices(len(self)))]
        if i < 0:
            i += len(self)
        return CoupledTrajectory(self.times, self.X[i], self.Y[i], self.lam[i], self.seed, int(i))

    def distances(self) -> np.ndarray:
        return self.kernel.space.metric[self.X, self.Y]

    def rows(self, limit: int | None = None) -> list[dict]:
        """CSV-ready rows (path, time, x, y, distance)."""
        D = self.distances()
        count = len(self) if limit is None else min(limit, len(self))
        return [
            {"path": p, "time": float(t), "x": int(self.X[p, s]), "y": int(self.Y[p, s]), "distance": float(D[p, s])}
            for p in range(count)
            for s, t in enumerate(self.times)
        ]


def _initial_pairs(qk: CoupledKernel, alpha, n_paths: int, seed: int) -> np.ndarray:
    n = qk.n
    if isinstance(alpha, tuple) and len(alpha) == 2 and all(isinstance(v, (int, np.integer)) for v in alpha):
        x, y = alpha
        if not (0 <= x < n and 0 <= y < n):
            raise InputError("initial pair is not a pair of sites")
        return np.full(n_paths, x * n + y, dtype=np.int64)
    A = np.asarray(alpha, dtype=float)
    if A.shape != (n, n):
        raise InputError(f"initial distribution must have shape ({n}, {n})")
    if np.any(A < 0) or abs(A.sum() - 1.0) > 1e-12:
        raise InputError("initial distribution must be a probability table")
    cum = np.cumsum(A.ravel())
    u = uniforms(seed, 0, np.arange(n_paths), 0)
    return np.minimum(np.searchsorted(cum / cum[-1], u, side="left"), n * n - 1)


def horizon_steps(qk: CoupledKernel, horizon: float) -> int:
    steps = horizon / qk.step_time
    if horizon < 0 or abs(steps - round(steps)) > 1e-9 * max(1.0, steps):
        raise InputError(f"horizon {horizon} is not a multiple of the step 2*delta = {qk.step_time}")
    return int(round(steps))


def sample_coupled_paths(qk: CoupledKernel, alpha, horizon: float, n_paths: int, seed: int = 0) -> CoupledPaths:
    """Sample coupled trajectories step by step from q*.

    ``alpha`` is an initial site pair (x, y) or an (n, n) probability table.
    Path j draws its step-s uniform from stream (seed, 1, j, s), so every
    path is reproducible on its own.  Each transition is checked against the
    support invariant d(x', y') <= lam(x, y) d(x, y).
    """
    if int(n_paths) != n_paths or n_paths < 1:
        raise InputError("n_paths must be a positive integer")
    steps = horizon_steps(qk, horizon)
    n = qk.n
    d = qk.space.metric.ravel()
    lam_flat = qk.lam.ravel()
    tol = _support_tol(qk.space)
    table = qk.table
    indptr, indices = table.indptr, table.indices
    cum = np.empty_like(table.data)
    for p in range(n * n):
        lo, hi = indptr[p], indptr[p + 1]
        c = np.cumsum(table.data[lo:hi])
        cum[lo:hi] = p + c / c[-1]
    state = _initial_pairs(qk, alpha, int(n_paths), seed)
    ids = np.arange(int(n_paths))
    states = np.empty((int(n_paths), steps + 1), dtype=np.int64)
    lams = np.empty((int(n_paths), steps))
    states[:, 0] = state
    violations = 0
    for s in range(steps):
        u = uniforms(seed, 1, ids, s)
        k = np.searchsorted(cum, state + u, side="left")
        k = np.clip(k, indptr[state], indptr[state + 1] - 1)
        nxt = indices[k]
        lams[:, s] = lam_flat[state]
        bad = d[nxt] > lam_flat[state] * d[state] + tol
        violations += int(bad.sum())
        if bad.any():
            raise NumericError(f"support invariant broken at step {s} on {int(bad.sum())} paths")
        state = nxt
        states[:, s + 1] = state
    return CoupledPaths(qk, states // n, states % n, lams, seed, violations)


# --- statistics -----------------------------------------------------------------------


def pathwise_contraction_stats(paths: CoupledPaths, K: float | None = None):
    """Contraction margins over all dyadic time pairs s < s + t of every path.

    margin = e^{-K t/2} prod(lam e^{K_kernel delta}) d(s) - d(s + t), where the
    product runs over the steps between s and s + t.  With K equal to the
    kernel's rate this is prod(lam) d(s) - d(s + t), which the support
    invariant keeps nonnegative.  Residuals are per-path minima.
    """
    qk = paths.kernel
    K = qk.K if K is None else float(K)
    D = paths.distances()
    steps = D.shape[1] - 1
    log_budget = np.log(paths.lam) + qk.K * qk.delta - K * qk.delta
    cum = np.concatenate([np.zeros((len(paths), 1)), np.cumsum(log_budget, axis=1)], axis=1)
    tol = _support_tol(qk.space)
    worst = np.full(len(paths), np.inf)
    worst_at = np.zeros((len(paths), 2), dtype=int)
    violations = 0
    ratios = []
    separated = 0
    for s in range(steps):
        later = D[:, s + 1 :]
        bound = np.exp(cum[:, s + 1 :] - cum[:, [s]]) * D[:, [s]]
        margin = bound - later
        violations += int(np.sum(margin < -tol))
        idx = np.argmin(margin, axis=1)
        m = margin[np.arange(len(paths)), idx]
        better = m < worst
        worst[better] = m[better]
        worst_at[better] = np.column_stack([np.full(better.sum(), s), s + 1 + idx[better]])
        met = D[:, s] == 0
        separated += int(np.sum(met[:, None] & (later > 0)))
        rate = np.exp(-K * (np.arange(1, steps - s + 1)) * qk.delta)
        pos = D[:, s] > 0
        if pos.any():
            ratios.append((later[pos] / (rate[None, :] * D[pos, s][:, None])).ravel())
    if steps == 0:
        worst[:] = 0.0
    ratio = np.concatenate(ratios) if ratios else np.zeros(0)
    quantiles = {f"q{int(q * 100)}": float(np.quantile(ratio, q)) for q in (0.5, 0.9, 0.99, 1.0)} if len(ratio) else {}
    rows = [{"path": int(p), "s": float(worst_at[p, 0] * qk.step_time), "s_plus_t": float(worst_at[p, 1] * qk.step_time)} for p in range(len(paths))]
    params = {"K": K, "kernel_K": qk.K, "delta": qk.delta, "paths": len(paths), "steps": steps, "seed": paths.seed}
    diag = {"violations": violations, "separations_after_meeting": separated, "ratio_quantiles": quantiles, "max_slack": qk.max_slack()}

    def inputs(i):
        return {"path": int(i), "s_index": int(worst_at[i, 0]), "u_index": int(worst_at[i, 1])}

    return make_report("couple", params, worst.tolist(), tol, rows, inputs, diag)


def finite_dim_distribution(qk: CoupledKernel, alpha, J, cap: int = TABLE_CAP) -> np.ndarray:
    """Exact joint law of the pair at process times J, shape (n, n) * len(J)."""
    n = qk.n
    times = [float(t) for t in J]
    if not times:
        raise InputError("empty time list")
    if any(b < a for a, b in zip(times, times[1:])):
        raise InputError("times must be nondecreasing")
    size = (n * n) ** len(times)
    if size > cap:
        raise CapacityError(f"joint table with {size} entries exceeds the cap {cap}")
    if isinstance(alpha, tuple):
        A = np.zeros(n * n)
        A[alpha[0] * n + alpha[1]] = 1.0
    else:
        A = np.asarray(alpha, dtype=float).reshape(n * n)
    steps = [horizon_steps(qk, t) for t in times]

    def power(k):
        return np.eye(n * n) if k == 0 else compose_kernel(qk, k, cap=max(PAIR_CAP, n * n))

    dist = A @ power(steps[0])
    for prev, cur in zip(steps, steps[1:]):
        Q = power(cur - prev) if cur > prev else np.eye(n * n)
        dist = dist[..., None] * Q
    return dist.reshape((n, n) * len(times))
