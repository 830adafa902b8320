"""Integrated Bochner inequality and the variable-curvature gradient estimate."""

from __future__ import annotations

import numpy as np

from ..errors import InputError
from ..semigroups import heat_apply, schrodinger_apply
from ..space import DiscreteSpace, apply_laplacian, as_field, gamma
from .families import function_family, nonnegative_family
from .report import CheckReport, make_report

BE_TOLERANCE_FACTOR = 10.0
GRADIENT_TOLERANCE = 5e-3


def be_check(space: DiscreteSpace, k, u, phi) -> float:
    """int (Delta/2 - k) phi Gamma(u) dm - int phi Gamma(u, Delta u) dm."""
    phi = np.asarray(phi, dtype=float)
    if np.any(phi < 0):
        raise InputError("phi must be nonnegative")
    kv = as_field(space, k).values
    u = np.asarray(u, dtype=float)
    m = space.measure
    weight = 0.5 * apply_laplacian(space, phi) - kv * phi
    return float((m * weight) @ gamma(space, u) - (m * phi) @ gamma(space, u, apply_laplacian(space, u)))


def be_margins(space: DiscreteSpace, k, U: np.ndarray, Phi: np.ndarray) -> np.ndarray:
    """be_check for every column pair, shape (len(U cols), len(Phi cols))."""
    kv = as_field(space, k).values
    m = space.measure
    G = gamma(space, U)
    GL = gamma(space, U, apply_laplacian(space, U))
    weight = 0.5 * apply_laplacian(space, Phi) - kv[:, None] * Phi
    return G.T @ (m[:, None] * weight) - GL.T @ (m[:, None] * Phi)


def be_scan(
    space: DiscreteSpace,
    k,
    family_spec,
    tolerance: float | None = None,
    bumps: int = 4,
    seed: int = 0,
) -> CheckReport:
    """Minimum Bochner margin over test functions u and nonnegative phi.

    The u's are normalized to max Gamma(u) = 1 and every phi has unit
    integral, so margins are on a common scale.  Point densities make the
    scan pointwise.  Default budget 10 h^2.
    """
    field = as_field(space, k)
    U, ulabels = function_family(space, family_spec)
    Phi, plabels = nonnegative_family(space, bumps=bumps, seed=seed)
    margins = be_margins(space, field, U, Phi)
    tol = BE_TOLERANCE_FACTOR * space.h**2 if tolerance is None else float(tolerance)
    iu, ip = np.meshgrid(np.arange(U.shape[1]), np.arange(Phi.shape[1]), indexing="ij")
    rows = [{"u": ulabels[a], "phi": plabels[b]} for a, b in zip(iu.ravel(), ip.ravel())]
    residuals = margins.ravel().copy()
    worst = int(np.argmin(residuals))
    a, b = np.unravel_index(worst, margins.shape)
    residuals[worst] = be_check(space, field, U[:, a], Phi[:, b])

    def inputs(idx):
        a, b = np.unravel_index(idx, margins.shape)
        return {"u": U[:, a].tolist(), "phi": Phi[:, b].tolist()}

    params = {
        "family": family_spec,
        "family_size": int(U.shape[1]),
        "phi_count": int(Phi.shape[1]),
        "k_min": float(field.values.min()),
        "k_max": float(field.values.max()),
        "h": space.h,
        "tolerance_rule": "10*h^2 on u normalized to max Gamma(u)=1" if tolerance is None else "given",
    }
    return make_report("be", params, residuals, tol, rows, inputs)


def gradient_estimate_check(space: DiscreteSpace, k, u, times, tolerance: float = GRADIENT_TOLERANCE) -> CheckReport:
    """T_t^{2k} Gamma(u) - Gamma(T_t u) per site and time.

    ``u`` may be one function or an (n, r) stack.  Margins are divided by
    max Gamma(u) of their own u, so ``tolerance`` is relative.
    """
    field = as_field(space, k)
    U = np.asarray(u, dtype=float)
    if U.ndim == 1:
        U = U[:, None]
    times = [float(t) for t in np.atleast_1d(times)]
    if any(t <= 0 for t in times):
        raise InputError("times must be positive")
    G = gamma(space, U)
    scale = G.max(axis=0)
    scale = np.where(scale > 0, scale, 1.0)
    residuals, rows = [], []
    for t in times:
        lhs = schrodinger_apply(space, field, G, t)
        rhs = gamma(space, heat_apply(space, U, t))
        margin = (lhs - rhs) / scale[None, :]
        for j in range(U.shape[1]):
            residuals.extend(margin[:, j].tolist())
            rows.extend({"u": j, "t": t, "site": x} for x in range(space.n))

    def inputs(idx):
        row = rows[idx]
        return {"u": U[:, row["u"]].tolist(), "t": row["t"], "site": row["site"]}

    params = {"times": times, "functions": int(U.shape[1]), "k_min": float(field.values.min()), "k_max": float(field.values.max())}
    return make_report("grad", params, residuals, tolerance, rows, inputs)


def gradient_margin(space: DiscreteSpace, k, u, t: float, site: int) -> float:
    """Single normalized margin, used to re-evaluate witnesses."""
    u = np.asarray(u, dtype=float)
    G = gamma(space, u)
    scale = G.max() if G.max() > 0 else 1.0
    lhs = schrodinger_apply(space, as_field(space, k), G, t)
    rhs = gamma(space, heat_apply(space, u, t))
    return float((lhs[site] - rhs[site]) / scale)
