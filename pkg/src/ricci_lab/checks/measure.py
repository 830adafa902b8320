"""Reweighting by e^{-V}, lambda-convexity of potentials and tensorized curvature."""

from __future__ import annotations

import numpy as np

from ..errors import InputError
from ..space import CurvatureField, DiscreteSpace, Potential, as_field
from ..transport.geodesic import _augmented_nodes, green_function
from .report import CheckReport, make_report


def _edge_potential(space: DiscreteSpace, V):
    """V at the sites and at every edge (i < j), as used for reweighting."""
    i, j, _ = space.edges
    if callable(V) and space.kind in ("interval", "circle"):
        x = space.coords[:, 0]
        if space.kind == "circle":
            # midpoint along the short arc
            diff = np.angle(np.exp(1j * (x[j] - x[i])))
            mids = x[i] + diff / 2
        else:
            mids = 0.5 * (x[i] + x[j])
        return np.asarray(V(x), dtype=float) * np.ones(space.n), np.asarray(V(mids), dtype=float) * np.ones(len(i))
    if callable(V):
        raise InputError("callable potentials need an interval or circle; pass site values instead")
    vals = np.asarray(V, dtype=float)
    if vals.shape != (space.n,):
        raise InputError(f"potential has shape {vals.shape}, expected ({space.n},)")
    return vals, 0.5 * (vals[i] + vals[j])


def change_of_measure(space: DiscreteSpace, V, lam, k=0.0) -> tuple[DiscreteSpace, CurvatureField]:
    """Reweight ``space`` by e^{-V} and shift the curvature field by ``lam``.

    The new measure is m e^{-V} / Z and every edge weight is multiplied by
    e^{-V} at the edge (midpoint for callables, endpoint average for site
    tables) and divided by the same Z.  Starting from a uniform interval this
    reproduces the directly built weighted interval.
    """
    if isinstance(V, dict):
        V = Potential.from_json(V)
    Vs, Ve = _edge_potential(space, V)
    if not (np.all(np.isfinite(Vs)) and np.all(np.isfinite(Ve))):
        raise InputError("potential must be finite")
    shift = Vs.min()
    m = space.measure * np.exp(-(Vs - shift))
    Z = m.sum()
    m = m / Z
    i, j, w = space.edges
    wv = w * np.exp(-(Ve - shift)) / Z
    W = np.zeros((space.n, space.n))
    W[i, j] = wv
    W[j, i] = wv
    info = {key: val for key, val in space.info.items() if key != "spec"}
    info["reweighted"] = True
    pot = V if isinstance(V, Potential) and space.potential is None else None
    if pot is not None:
        info["potential"] = pot.to_json()
    new = DiscreteSpace(space.coords, space.metric, m, W, space.kind, info, space.factors, pot)
    lam_vals = np.asarray(lam(space.coords[:, 0]) if callable(lam) else lam, dtype=float) * np.ones(space.n)
    return new, as_field(space, k).shifted(lam_vals)


# --- lambda-convexity ------------------------------------------------------------------


def _evaluator(space: DiscreteSpace, f):
    if callable(f):
        return lambda x: np.asarray(f(x), dtype=float) * np.ones(np.shape(x))
    vals = np.asarray(f, dtype=float) * np.ones(space.n)
    if space.kind != "interval":
        raise InputError("site tables can be interpolated on intervals only")
    grid = space.coords[:, 0]
    return lambda x: np.interp(x, grid, vals)


def _interp_budget(space: DiscreteSpace, f) -> float:
    """Bound h^2/8 max|f''| on the error of linear interpolation of a site table."""
    if callable(f):
        return 0.0
    vals = np.asarray(f, dtype=float) * np.ones(space.n)
    second = np.abs(np.diff(vals, 2)).max() if len(vals) > 2 else 0.0
    return second / 8.0


def green_action(lam_at, x0: float, x1: float, t: float, S: int) -> float:
    """int_0^1 g(s,t) lam((1-s)x0 + s x1) (x1-x0)^2 ds on S panels plus the kink at t."""
    nodes, wq = _augmented_nodes(np.linspace(0.0, 1.0, S + 1), t)
    pos = (1 - nodes) * x0 + nodes * x1
    return float((x1 - x0) ** 2 * np.sum(wq * green_function(nodes, t) * lam_at(pos)))


def lambda_convexity_margin(V_at, lam_at, x0: float, x1: float, t: float, S: int) -> float:
    gt = (1 - t) * x0 + t * x1
    return float((1 - t) * V_at(x0) + t * V_at(x1) - green_action(lam_at, x0, x1, t, S) - V_at(gt))


def lambda_convexity_check(space: DiscreteSpace, V, lam, paths, t_grid=None, S: int = 200, tolerance: float | None = None) -> CheckReport:
    """Strong lambda-convexity of V along straight grid geodesics.

    ``paths`` is a list of site pairs (i, j).  V and lam are callables of the
    position or site tables (linearly interpolated).  The default budget is
    twice the largest change of the action under S -> S/2 plus the
    interpolation error of tables.
    """
    if space.kind != "interval":
        raise InputError("lambda_convexity_check works on interval spaces")
    if S < 2 or S % 2:
        raise InputError("S must be an even number >= 2")
    times = [float(t) for t in (np.linspace(0.1, 0.9, 9) if t_grid is None else np.atleast_1d(t_grid))]
    V_at, lam_at = _evaluator(space, V), _evaluator(space, lam)
    x = space.coords[:, 0]
    residuals, rows, quad = [], [], []
    for i, j in paths:
        if not (0 <= i < space.n and 0 <= j < space.n):
            raise InputError(f"path endpoints ({i}, {j}) are not sites")
        x0, x1 = float(x[i]), float(x[j])
        for t in times:
            residuals.append(lambda_convexity_margin(V_at, lam_at, x0, x1, t, S))
            quad.append(abs(green_action(lam_at, x0, x1, t, S) - green_action(lam_at, x0, x1, t, S // 2)))
            rows.append({"start": int(i), "end": int(j), "t": t})
    vscale = max(1.0, float(np.abs(V_at(x)).max()))
    spread = max((abs(x[j] - x[i]) for i, j in paths), default=0.0)
    interp = _interp_budget(space, V) * 2 + _interp_budget(space, lam) * spread**2 / 8
    tau_quad = 2.0 * max(quad, default=0.0)
    tol = tau_quad + interp + 1e-12 * vscale if tolerance is None else float(tolerance)
    params = {"S": S, "t_grid": times, "paths": len(list(paths)), "tolerance_rule": "2*|A_S - A_{S/2}| + interpolation" if tolerance is None else "given"}

    def inputs(idx):
        row = rows[idx]
        return {"x0": float(x[row["start"]]), "x1": float(x[row["end"]]), "t": row["t"], "S": S}

    return make_report("lambda-convexity", params, residuals, tol, rows, inputs, {"tau_quad": tau_quad, "interpolation": interp})


# --- tensorization -------------------------------------------------------------------


def tensor_curvature(k_list, space: DiscreteSpace | None = None) -> CurvatureField:
    """min(0, k_1(x_1), ..., k_n(x_n)) on the product, in product site order."""
    fields = [np.asarray(k.values if isinstance(k, CurvatureField) else k, dtype=float).reshape(-1) for k in k_list]
    if len(fields) < 2:
        raise InputError("tensor_curvature needs at least two factor fields")
    if space is not None:
        sizes = _factor_sizes(space)
        if len(sizes) != len(fields) or any(len(f) != s for f, s in zip(fields, sizes)):
            raise InputError(f"factor fields of sizes {[len(f) for f in fields]} do not match the product {sizes}")
    out = np.zeros(1)
    for f in fields:
        out = np.minimum(np.repeat(out, len(f)), np.tile(f, len(out)))
    return CurvatureField(np.minimum(out, 0.0))


def _factor_sizes(space: DiscreteSpace) -> list[int]:
    if space.kind != "product":
        return [space.n]
    return [s for f in space.factors for s in _factor_sizes(f)]
