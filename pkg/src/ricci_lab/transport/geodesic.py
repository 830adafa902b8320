"""Discrete displacement geodesics and Green-function weighted actions."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import InputError, UnsupportedGeometryError
from ..space import CurvatureField, DiscreteSpace, ProbMeasure, as_field
from .plans import _monotone_atoms, cell_edges, cell_quantile_in, wasserstein_p


def green_function(s, t):
    """g(s, t) = min(s (1 - t), t (1 - s)) on the unit square."""
    s_arr = np.asarray(s, dtype=float)
    t_arr = np.asarray(t, dtype=float)
    if np.any((s_arr < 0) | (s_arr > 1)) or np.any((t_arr < 0) | (t_arr > 1)):
        raise InputError("green_function arguments must lie in [0, 1]")
    g = np.minimum(s_arr * (1 - t_arr), t_arr * (1 - s_arr))
    return float(g) if g.ndim == 0 else g


@dataclass(frozen=True, eq=False)
class GeodesicPlan:
    """Weighted family of constant-speed grid paths.

    Atom a moves from ``start[a]`` to ``end[a]`` with speed ``speed[a]``;
    ``paths[a, k]`` is its site at parameter ``s_grid[k]``.  On intervals each
    atom also owns a segment of its start cell and of its end cell
    (``segments[a] = (lo0, hi0, lo1, hi1)``) so that its mass can be spread
    continuously along the way.
    """

    space: DiscreteSpace
    weights: np.ndarray
    start: np.ndarray
    end: np.ndarray
    speed: np.ndarray
    s_grid: np.ndarray
    paths: np.ndarray
    segments: np.ndarray | None = None

    @property
    def n_atoms(self) -> int:
        return len(self.weights)

    def squared_speed_mass(self) -> float:
        """Sum of theta |gamma dot|^2, the W_2^2 of the underlying plan."""
        return float(self.weights @ self.speed**2)

    def sites_at(self, t) -> np.ndarray:
        """Nearest sites of every atom at parameter(s) t: shape (atoms,) or (atoms, len(t))."""
        t_arr = np.atleast_1d(np.asarray(t, dtype=float))
        out = _locate(self.space, self.start, self.end, t_arr)
        return out[:, 0] if np.ndim(t) == 0 else out

    def positions(self, t) -> np.ndarray:
        if self.space.kind != "interval":
            raise UnsupportedGeometryError("continuous positions are defined on intervals only")
        x = self.space.coords[:, 0]
        return (1 - t) * x[self.start] + t * x[self.end]

    def segment_at(self, t: float):
        lo = (1 - t) * self.segments[:, 0] + t * self.segments[:, 2]
        hi = (1 - t) * self.segments[:, 1] + t * self.segments[:, 3]
        return lo, hi

    def cell_fractions(self, t: float):
        """Sparse (atom, cell, fraction) triples of each spread segment at time t."""
        lo, hi = self.segment_at(t)
        e = cell_edges(self.space)
        n = self.space.n
        first = np.clip(np.searchsorted(e, lo, side="right") - 1, 0, n - 1)
        last = np.clip(np.searchsorted(e, hi, side="left") - 1, first, n - 1)
        width = hi - lo
        span = last - first
        atoms, cells, fracs = [], [], []
        for offset in range(int(span.max()) + 1 if len(span) else 0):
            sel = np.nonzero(span >= offset)[0]
            c = first[sel] + offset
            overlap = np.minimum(hi[sel], e[c + 1]) - np.maximum(lo[sel], e[c])
            w = width[sel]
            f = np.where(w > 0, np.clip(overlap, 0, None) / np.where(w > 0, w, 1.0), 1.0)
            atoms.append(sel)
            cells.append(c)
            fracs.append(f)
        if not atoms:
            return np.zeros(0, int), np.zeros(0, int), np.zeros(0)
        return np.concatenate(atoms), np.concatenate(cells), np.concatenate(fracs)

    def evaluate_masses(self, t: float, mode: str = "auto") -> np.ndarray:
        if not 0 <= t <= 1:
            raise InputError("t must lie in [0, 1]")
        if mode == "auto":
            mode = "spread" if self.segments is not None else "nearest"
        n = self.space.n
        if mode == "spread":
            if self.segments is None:
                raise UnsupportedGeometryError("spread evaluation needs segment footprints")
            a, c, f = self.cell_fractions(t)
            return np.bincount(c, weights=self.weights[a] * f, minlength=n)
        if mode == "nearest":
            return np.bincount(self.sites_at(t), weights=self.weights, minlength=n)
        raise InputError(f"unknown evaluation mode {mode!r}")

    def evaluate(self, t: float, mode: str = "auto") -> ProbMeasure:
        """(e_t)_* Theta as a probability measure."""
        q = self.evaluate_masses(t, mode)
        return ProbMeasure.from_masses(self.space, q / q.sum())

    def to_json(self) -> dict:
        out = {
            "weights": self.weights.tolist(),
            "start": self.start.tolist(),
            "end": self.end.tolist(),
            "speed": self.speed.tolist(),
            "S": len(self.s_grid) - 1,
        }
        if self.segments is not None:
            out["segments"] = self.segments.tolist()
        return out


def _locate(space: DiscreteSpace, start: np.ndarray, end: np.ndarray, t: np.ndarray) -> np.ndarray:
    """Nearest-site rounding of the straight (or arc) path at parameters t."""
    kind = space.kind
    if kind == "interval":
        x = space.coords[:, 0]
        pos = (1 - t[None, :]) * x[start][:, None] + t[None, :] * x[end][:, None]
        idx = np.rint((pos - x[0]) / space.h).astype(int)
        return np.clip(idx, 0, space.n - 1)
    if kind == "circle":
        n = space.n
        delta = (end - start) % n
        delta = np.where(delta > n / 2, delta - n, delta)
        pos = start[:, None] + t[None, :] * delta[:, None]
        return (np.rint(pos).astype(int)) % n
    if kind == "product":
        A, B = space.factors
        nb = B.n
        ia = _locate(A, start // nb, end // nb, t)
        ib = _locate(B, start % nb, end % nb, t)
        return ia * nb + ib
    raise UnsupportedGeometryError(f"geodesics are not available on {kind} spaces")


def _supports_geodesics(space: DiscreteSpace) -> bool:
    if space.kind in ("interval", "circle"):
        return True
    if space.kind == "product":
        return all(_supports_geodesics(f) for f in space.factors)
    return False


def displacement_geodesic(space: DiscreteSpace, mu0: ProbMeasure, mu1: ProbMeasure, S: int = 200) -> GeodesicPlan:
    """Geodesic plan from an optimal W_2 coupling.

    On intervals the atoms are the pieces of the monotone rearrangement and
    carry the quantile segments they occupy in their start and end cells.
    Circles and products use the exact LP plan and nearest-site rounding.
    """
    if S < 1:
        raise InputError("S must be positive")
    if not _supports_geodesics(space):
        raise UnsupportedGeometryError(f"geodesics are not available on {space.kind} spaces")
    s_grid = np.linspace(0.0, 1.0, S + 1)
    segments = None
    if space.kind == "interval":
        levels, rows, cols, w = _monotone_atoms(mu0.masses, mu1.masses)
        keep = w > 0
        rows, cols, w = rows[keep], cols[keep], w[keep]
        lo, hi = levels[:-1][keep], levels[1:][keep]
        segments = np.column_stack(
            [
                cell_quantile_in(space, mu0.masses, rows, lo),
                cell_quantile_in(space, mu0.masses, rows, hi),
                cell_quantile_in(space, mu1.masses, cols, lo),
                cell_quantile_in(space, mu1.masses, cols, hi),
            ]
        )
    else:
        _, plan = wasserstein_p(space, mu0, mu1, 2)
        rows, cols, w = plan.support()
    w = w / w.sum()
    speed = space.metric[rows, cols]
    paths = _locate(space, rows, cols, s_grid)
    return GeodesicPlan(space, w, rows, cols, speed, s_grid, paths, segments)


def _augmented_nodes(s_grid: np.ndarray, t: float) -> tuple[np.ndarray, np.ndarray]:
    nodes = np.union1d(s_grid, [t])
    wq = np.zeros_like(nodes)
    dn = np.diff(nodes)
    wq[:-1] += dn / 2
    wq[1:] += dn / 2
    return nodes, wq


def action_per_atom(theta: GeodesicPlan, k, t: float) -> np.ndarray:
    """int_0^1 g(s, t) k(gamma_s) |gamma dot|^2 ds for every atom.

    Trapezoid rule on the s-grid augmented with s = t, where g has its kink,
    so the rule is exact for constant k.
    """
    kv = as_field(theta.space, k).values
    nodes, wq = _augmented_nodes(theta.s_grid, float(t))
    sites = theta.sites_at(nodes)
    gw = wq * green_function(nodes, float(t))
    return theta.speed**2 * (kv[sites] @ gw)


def action_integral(theta: GeodesicPlan, k: CurvatureField | np.ndarray | float, t: float) -> float:
    return float(theta.weights @ action_per_atom(theta, k, t))


def slope_action_per_atom(theta: GeodesicPlan, k) -> np.ndarray:
    """int_0^1 (1 - s) k(gamma_s) |gamma dot|^2 ds for every atom (trapezoid)."""
    kv = as_field(theta.space, k).values
    s = theta.s_grid
    wq = np.zeros_like(s)
    ds = np.diff(s)
    wq[:-1] += ds / 2
    wq[1:] += ds / 2
    return theta.speed**2 * (kv[theta.paths] @ (wq * (1 - s)))


def slope_action(theta: GeodesicPlan, k) -> float:
    return float(theta.weights @ slope_action_per_atom(theta, k))


def action_trace(theta: GeodesicPlan, k, t: float) -> list[dict]:
    """Rows (s, t, g, integrand) of the Theta-averaged action integrand."""
    kv = as_field(theta.space, k).values
    nodes, _ = _augmented_nodes(theta.s_grid, float(t))
    sites = theta.sites_at(nodes)
    g = green_function(nodes, float(t))
    integrand = (theta.weights * theta.speed**2) @ kv[sites] * g
    return [{"s": float(s), "t": float(t), "g": float(gi), "integrand": float(v)} for s, gi, v in zip(nodes, g, integrand)]
