"""Finite metric measure spaces, their Laplacians and the carré du champ."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Mapping, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components, shortest_path

from .errors import InputError

KINDS = ("interval", "circle", "product", "graph")
MASS_TOL = 1e-12
DENSITY_FLOOR = 1e-300


def _readonly(a) -> np.ndarray:
    arr = np.array(a, dtype=float)
    arr.setflags(write=False)
    return arr


# --- potentials ---------------------------------------------------------------

_POTENTIAL_PARAMS = {
    "zero": {},
    "quadratic": {"a": 1.0, "c": 0.0},
    "double_well": {"a": 1.0, "b": 1.0},
    "cosine": {"a": 1.0},
    "table": {"values": None},
}


@dataclass(frozen=True)
class Potential:
    """A named potential V with its second derivative.

    quadratic:   a (x - c)^2 / 2
    double_well: a x^4 / 4 - b x^2 / 2
    cosine:      a cos(x)
    table:       explicit site values (second derivative by finite differences)
    """

    name: str
    params: Mapping = field(default_factory=dict)

    def __post_init__(self):
        if self.name not in _POTENTIAL_PARAMS:
            raise InputError(f"unknown potential {self.name!r}")
        allowed = _POTENTIAL_PARAMS[self.name]
        extra = set(self.params) - set(allowed)
        if extra:
            raise InputError(f"unknown parameters for potential {self.name!r}: {sorted(extra)}")
        merged = {**allowed, **dict(self.params)}
        if self.name == "table":
            if merged["values"] is None:
                raise InputError("table potential needs 'values'")
            merged["values"] = [float(v) for v in merged["values"]]
        else:
            merged = {k: float(v) for k, v in merged.items()}
        object.__setattr__(self, "params", merged)

    @property
    def is_table(self) -> bool:
        return self.name == "table"

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        p = self.params
        if self.name == "zero":
            return np.zeros_like(x)
        if self.name == "quadratic":
            return 0.5 * p["a"] * (x - p["c"]) ** 2
        if self.name == "double_well":
            return 0.25 * p["a"] * x**4 - 0.5 * p["b"] * x**2
        if self.name == "cosine":
            return p["a"] * np.cos(x)
        raise InputError("table potentials are defined on sites only")

    def hessian(self, x):
        x = np.asarray(x, dtype=float)
        p = self.params
        if self.name == "zero":
            return np.zeros_like(x)
        if self.name == "quadratic":
            return np.full_like(x, p["a"])
        if self.name == "double_well":
            return 3.0 * p["a"] * x**2 - p["b"]
        if self.name == "cosine":
            return -p["a"] * np.cos(x)
        raise InputError("table potentials are defined on sites only")

    def to_json(self) -> dict:
        return {"name": self.name, "params": dict(self.params)}

    @classmethod
    def from_json(cls, spec) -> "Potential":
        if spec is None:
            return cls("zero")
        if not isinstance(spec, Mapping):
            raise InputError("potential must be an object")
        extra = set(spec) - {"name", "params"}
        if extra:
            raise InputError(f"unknown potential keys: {sorted(extra)}")
        if "name" not in spec:
            raise InputError("potential needs a 'name'")
        return cls(spec["name"], spec.get("params") or {})


PotentialLike = Potential | Callable | Sequence[float] | np.ndarray | None


def _site_and_edge_values(V: PotentialLike, sites: np.ndarray, mids: np.ndarray, periodic: bool):
    """Potential values at sites and at edge midpoints.

    Table-like inputs only know site values; their edge value is the average
    of the two endpoint values.
    """
    n = len(sites)
    if V is None:
        return np.zeros(n), np.zeros(len(mids))
    if isinstance(V, Potential) and V.is_table:
        V = np.asarray(V.params["values"], dtype=float)
    if callable(V):
        return np.asarray(V(sites), dtype=float) * np.ones(n), np.asarray(V(mids), dtype=float) * np.ones(len(mids))
    vals = np.asarray(V, dtype=float)
    if vals.shape != (n,):
        raise InputError(f"potential table has shape {vals.shape}, expected ({n},)")
    nxt = np.roll(vals, -1) if periodic else vals[1:]
    return vals, 0.5 * (vals[: len(mids)] + nxt[: len(mids)])


# --- the space ----------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class DiscreteSpace:
    """Finite metric measure space with a Dirichlet form.

    ``coords`` has one row per site.  For intervals it is the position, for
    circles the angle, for products the concatenated factor coordinates.
    ``edge_weights`` w(x, y) define the Laplacian
    (Delta u)(x) = (1/m(x)) sum_y w(x, y) (u(y) - u(x)).
    """

    coords: np.ndarray
    metric: np.ndarray
    measure: np.ndarray
    edge_weights: np.ndarray
    kind: str
    info: Mapping = field(default_factory=dict)
    factors: tuple = ()
    potential: Potential | None = None

    def __post_init__(self):
        for name in ("coords", "metric", "measure", "edge_weights"):
            object.__setattr__(self, name, _readonly(getattr(self, name)))
        if self.coords.ndim == 1:
            object.__setattr__(self, "coords", _readonly(self.coords[:, None]))
        if self.kind not in KINDS:
            raise InputError(f"unknown space kind {self.kind!r}")
        n = len(self.measure)
        if self.metric.shape != (n, n) or self.edge_weights.shape != (n, n) or len(self.coords) != n:
            raise InputError("inconsistent array shapes in space")
        if np.any(self.measure <= 0):
            raise InputError("reference measure must be strictly positive")
        if np.any(self.edge_weights < 0) or np.any(np.diag(self.edge_weights) != 0):
            raise InputError("edge weights must be nonnegative with zero diagonal")
        if not np.array_equal(self.edge_weights, self.edge_weights.T):
            raise InputError("edge weights must be symmetric")
        if not np.array_equal(self.metric, self.metric.T) or np.any(np.diag(self.metric) != 0):
            raise InputError("metric must be symmetric with zero diagonal")

    @property
    def n(self) -> int:
        return len(self.measure)

    @property
    def h(self) -> float:
        """Grid spacing used in discretization budgets."""
        if "h" in self.info:
            return float(self.info["h"])
        w = self.edge_weights > 0
        return float(self.metric[w].max()) if w.any() else 0.0

    @property
    def diameter(self) -> float:
        return float(self.metric.max())

    @property
    def labels(self) -> list[str]:
        if self.kind == "product":
            nb = self.factors[1].n
            return [f"({i // nb},{i % nb})" for i in range(self.n)]
        return [f"x{i}" for i in range(self.n)]

    @cached_property
    def edges(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        i, j = np.nonzero(np.triu(self.edge_weights, 1))
        return i, j, self.edge_weights[i, j]

    @cached_property
    def _incidence(self) -> sp.csr_matrix:
        i, j, _ = self.edges
        e = np.arange(len(i))
        data = np.ones(2 * len(i))
        return sp.csr_matrix((data, (np.concatenate([i, j]), np.concatenate([e, e]))), shape=(self.n, len(i)))

    @cached_property
    def laplacian_matrix(self) -> np.ndarray:
        W = np.array(self.edge_weights)
        L = W - np.diag(W.sum(axis=1))
        L /= self.measure[:, None]
        L.setflags(write=False)
        return L

    @cached_property
    def laplacian_sparse(self) -> sp.csr_matrix:
        return sp.csr_matrix(self.laplacian_matrix)

    def to_json(self) -> dict:
        out = {
            "kind": self.kind,
            "info": {k: v for k, v in self.info.items() if k != "factors"},
            "coords": self.coords.tolist(),
            "metric": self.metric.tolist(),
            "measure": self.measure.tolist(),
            "edge_weights": self.edge_weights.tolist(),
        }
        if self.factors:
            out["factors"] = [f.to_json() for f in self.factors]
        return out

    @classmethod
    def from_arrays(cls, doc: Mapping) -> "DiscreteSpace":
        factors = tuple(cls.from_arrays(f) for f in doc.get("factors", ()))
        return cls(
            coords=np.array(doc["coords"], dtype=float),
            metric=np.array(doc["metric"], dtype=float),
            measure=np.array(doc["measure"], dtype=float),
            edge_weights=np.array(doc["edge_weights"], dtype=float),
            kind=doc["kind"],
            info=dict(doc.get("info", {})),
            factors=factors,
        )


def check_invariants(space: DiscreteSpace, tol: float = 1e-12) -> None:
    """Exhaustive structural checks; raises InputError on the first failure."""
    d = space.metric
    scale = max(1.0, space.diameter)
    for z in range(space.n):
        if np.any(d[:, z][:, None] + d[z, :][None, :] < d - tol * scale):
            raise InputError(f"triangle inequality fails through site {z}")
    M = space.measure[:, None] * space.laplacian_matrix
    if not np.allclose(M, M.T, rtol=0, atol=tol * max(1.0, np.abs(M).max())):
        raise InputError("Laplacian is not self-adjoint in L2(m)")
    if np.abs(space.laplacian_matrix.sum(axis=1)).max() > tol * max(1.0, np.abs(M).max()):
        raise InputError("Laplacian does not annihilate constants")


# --- builders ------------------------------------------------------------------


def _coerce_potential(V):
    if isinstance(V, Mapping):
        return Potential.from_json(V)
    return V


def build_interval_space(n: int, L: float, V: PotentialLike = None) -> DiscreteSpace:
    """Weighted path graph on a uniform grid of [-L, L].

    m_i = e^{-V(x_i)} / Z and w_{i,i+1} = e^{-V(midpoint)} / (h^2 Z) with
    Z = sum_j e^{-V(x_j)}, so that Delta approximates u'' - V' u'.
    """
    if int(n) != n or n < 3:
        raise InputError("interval needs n >= 3 sites")
    if not L > 0:
        raise InputError("half width L must be positive")
    n = int(n)
    V = _coerce_potential(V)
    x = np.linspace(-L, L, n)
    h = 2.0 * L / (n - 1)
    mids = 0.5 * (x[1:] + x[:-1])
    Vs, Vm = _site_and_edge_values(V, x, mids, periodic=False)
    shift = Vs.min()
    Z = np.exp(-(Vs - shift)).sum()
    m = np.exp(-(Vs - shift)) / Z
    wv = np.exp(-(Vm - shift)) / (h * h * Z)
    W = np.zeros((n, n))
    idx = np.arange(n - 1)
    W[idx, idx + 1] = wv
    W[idx + 1, idx] = wv
    metric = np.abs(x[:, None] - x[None, :])
    info = {"n": n, "L": float(L), "h": h}
    pot = V if isinstance(V, Potential) else None
    if pot is not None:
        info["potential"] = pot.to_json()
    return DiscreteSpace(x, metric, m, W, "interval", info, potential=pot)


def build_circle_space(n: int, R: float = 1.0, V: PotentialLike = None) -> DiscreteSpace:
    """Weighted cycle graph with arc-length metric; V is a function of the angle."""
    if int(n) != n or n < 3:
        raise InputError("circle needs n >= 3 sites")
    if not R > 0:
        raise InputError("radius R must be positive")
    n = int(n)
    V = _coerce_potential(V)
    theta = 2.0 * np.pi * np.arange(n) / n
    h = 2.0 * np.pi * R / n
    mids = theta + np.pi / n
    Vs, Vm = _site_and_edge_values(V, theta, mids, periodic=True)
    shift = Vs.min()
    Z = np.exp(-(Vs - shift)).sum()
    m = np.exp(-(Vs - shift)) / Z
    wv = np.exp(-(Vm - shift)) / (h * h * Z)
    W = np.zeros((n, n))
    idx = np.arange(n)
    W[idx, (idx + 1) % n] = wv
    W[(idx + 1) % n, idx] = wv
    steps = np.abs(idx[:, None] - idx[None, :])
    metric = h * np.minimum(steps, n - steps)
    info = {"n": n, "R": float(R), "h": h}
    pot = V if isinstance(V, Potential) else None
    if pot is not None:
        info["potential"] = pot.to_json()
    return DiscreteSpace(theta, metric, m, W, "circle", info, potential=pot)


def product_space(A: DiscreteSpace, B: DiscreteSpace) -> DiscreteSpace:
    """Cartesian product with the l2 product metric and tensor measure.

    Site (a, b) has index a * B.n + b.  Edge weights are chosen so that the
    Laplacian is the Kronecker sum of the factor Laplacians.
    """
    na, nb = A.n, B.n
    coords = np.hstack([np.repeat(A.coords, nb, axis=0), np.tile(B.coords, (na, 1))])
    metric = np.sqrt(np.kron(A.metric**2, np.ones((nb, nb))) + np.kron(np.ones((na, na)), B.metric**2))
    m = np.kron(A.measure, B.measure)
    W = np.kron(A.edge_weights, np.diag(B.measure)) + np.kron(np.diag(A.measure), B.edge_weights)
    info = {"h": max(A.h, B.h), "factor_sizes": [na, nb]}
    return DiscreteSpace(coords, metric, m, W, "product", info, factors=(A, B))


def graph_space(lengths, weights=None, measure=None) -> DiscreteSpace:
    """General graph from a matrix of edge lengths (0 or inf means no edge).

    The metric is the shortest-path closure.  Default Dirichlet weights are
    1/length^2 per edge and the default measure is uniform; both are
    normalized to total mass 1.
    """
    Lm = np.array(lengths, dtype=float)
    n = len(Lm)
    if Lm.shape != (n, n) or n < 1:
        raise InputError("lengths must be a square matrix")
    adj = np.isfinite(Lm) & (Lm > 0)
    if not np.array_equal(adj, adj.T) or not np.allclose(np.where(adj, Lm, 0), np.where(adj, Lm, 0).T):
        raise InputError("edge lengths must be symmetric")
    graph = sp.csr_matrix(np.where(adj, Lm, 0.0))
    if n > 1 and connected_components(graph, directed=False)[0] != 1:
        raise InputError("graph must be connected")
    metric = shortest_path(graph, directed=False)
    metric = 0.5 * (metric + metric.T)
    np.fill_diagonal(metric, 0.0)
    m = np.full(n, 1.0 / n) if measure is None else np.array(measure, dtype=float)
    if m.shape != (n,) or np.any(m <= 0):
        raise InputError("measure must be a positive vector")
    Z = m.sum()
    m = m / Z
    if weights is None:
        W = np.where(adj, 1.0 / np.where(adj, Lm, 1.0) ** 2, 0.0)
    else:
        W = np.array(weights, dtype=float)
        if W.shape != (n, n):
            raise InputError("weights must be a square matrix")
    W = W / Z
    W = 0.5 * (W + W.T)
    np.fill_diagonal(W, 0.0)
    info = {"n": n, "h": float(Lm[adj].max()) if adj.any() else 0.0}
    return DiscreteSpace(np.arange(n, dtype=float), metric, m, W, "graph", info)


# --- operators -----------------------------------------------------------------


def laplacian(space: DiscreteSpace) -> np.ndarray:
    """Dense matrix of (Delta u)(x) = (1/m(x)) sum_y w(x,y)(u(y) - u(x))."""
    return space.laplacian_matrix


def apply_laplacian(space: DiscreteSpace, u: np.ndarray) -> np.ndarray:
    return space.laplacian_sparse @ np.asarray(u, dtype=float)


def gamma(space: DiscreteSpace, u, v=None) -> np.ndarray:
    """Carré du champ Gamma(u, v)(x) = (1/2m(x)) sum_y w(x,y) du dv.

    ``u`` and ``v`` may be vectors or (n, r) stacks of column vectors.
    """
    u = np.asarray(u, dtype=float)
    v = u if v is None else np.asarray(v, dtype=float)
    i, j, w = space.edges
    du = u[j] - u[i]
    dv = v[j] - v[i]
    contrib = (w[:, None] if du.ndim == 2 else w) * du * dv
    out = space._incidence @ contrib
    denom = 2.0 * space.measure
    return out / (denom[:, None] if out.ndim == 2 else denom)


def integrate(space: DiscreteSpace, f) -> float | np.ndarray:
    """Integral of f against the reference measure (column-wise for stacks)."""
    return space.measure @ np.asarray(f, dtype=float)


# --- measures and curvature fields --------------------------------------------


@dataclass(frozen=True, eq=False)
class ProbMeasure:
    """Probability measure mu = rho m given by its density rho."""

    space: DiscreteSpace
    density: np.ndarray

    def __post_init__(self):
        rho = np.array(self.density, dtype=float)
        if rho.shape != (self.space.n,):
            raise InputError(f"density has shape {rho.shape}, expected ({self.space.n},)")
        if np.any(rho < 0) or not np.all(np.isfinite(rho)):
            raise InputError("density must be finite and nonnegative")
        total = float(rho @ self.space.measure)
        if abs(total - 1.0) > MASS_TOL:
            raise InputError(f"total mass {total!r} differs from 1")
        rho.setflags(write=False)
        object.__setattr__(self, "density", rho)

    @property
    def masses(self) -> np.ndarray:
        return self.density * self.space.measure

    @classmethod
    def from_masses(cls, space: DiscreteSpace, masses, normalize: bool = False) -> "ProbMeasure":
        q = np.array(masses, dtype=float)
        if normalize:
            q = np.clip(q, 0.0, None)
            if q.sum() <= 0:
                raise InputError("cannot normalize a zero measure")
            q = q / q.sum()
        return cls(space, q / space.measure)

    @classmethod
    def from_density(cls, space: DiscreteSpace, density, normalize: bool = False) -> "ProbMeasure":
        rho = np.array(density, dtype=float)
        if normalize:
            rho = np.clip(rho, 0.0, None)
            rho = rho / (rho @ space.measure)
        return cls(space, rho)

    @classmethod
    def reference(cls, space: DiscreteSpace) -> "ProbMeasure":
        return cls(space, np.ones(space.n))

    @classmethod
    def dirac(cls, space: DiscreteSpace, site: int) -> "ProbMeasure":
        q = np.zeros(space.n)
        q[site] = 1.0
        return cls.from_masses(space, q)


def entropy(space: DiscreteSpace, mu: ProbMeasure) -> float:
    """Boltzmann entropy sum rho log rho m with 0 log 0 = 0."""
    rho = np.where(mu.density < DENSITY_FLOOR, 0.0, mu.density)
    pos = rho > 0
    return float(np.sum(space.measure[pos] * rho[pos] * np.log(rho[pos])))


@dataclass(frozen=True, eq=False)
class CurvatureField:
    """Site values k(x) together with a scalar lower bound K <= min k."""

    values: np.ndarray
    lower_bound: float | None = None

    def __post_init__(self):
        vals = np.array(self.values, dtype=float).reshape(-1)
        if not np.all(np.isfinite(vals)):
            raise InputError("curvature values must be finite")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)
        K = float(vals.min()) if self.lower_bound is None else float(self.lower_bound)
        if vals.min() < K:
            raise InputError(f"lower bound {K} exceeds min k = {vals.min()}")
        object.__setattr__(self, "lower_bound", K)

    def __len__(self):
        return len(self.values)

    def shifted(self, c) -> "CurvatureField":
        return CurvatureField(self.values + np.asarray(c, dtype=float))

    @classmethod
    def constant(cls, space_or_n, K: float) -> "CurvatureField":
        n = space_or_n.n if isinstance(space_or_n, DiscreteSpace) else int(space_or_n)
        return cls(np.full(n, float(K)), float(K))


def as_field(space: DiscreteSpace, k) -> CurvatureField:
    """Coerce a scalar, a site vector or a CurvatureField."""
    if isinstance(k, CurvatureField):
        field_ = k
    elif np.isscalar(k):
        field_ = CurvatureField.constant(space, float(k))
    else:
        field_ = CurvatureField(np.asarray(k, dtype=float))
    if len(field_) != space.n:
        raise InputError(f"curvature field has {len(field_)} values for {space.n} sites")
    return field_


def potential_hessian(space: DiscreteSpace) -> np.ndarray:
    """V'' on the sites of a space built from a named potential.

    For products the value at (a, b) is the smaller of the two factor values,
    which is the best constant-in-direction lower bound of the Hessian.
    """
    if space.kind == "product":
        ha, hb = (potential_hessian(f) for f in space.factors)
        return np.minimum(np.repeat(ha, len(hb)), np.tile(hb, len(ha)))
    pot = space.potential
    if pot is None:
        return np.zeros(space.n)
    if pot.is_table:
        vals = np.asarray(pot.params["values"])
        step = space.h if space.kind == "interval" else space.info["h"] / space.info["R"]
        if space.kind == "circle":
            return (np.roll(vals, -1) - 2 * vals + np.roll(vals, 1)) / step**2
        out = np.empty_like(vals)
        out[1:-1] = (vals[2:] - 2 * vals[1:-1] + vals[:-2]) / step**2
        out[0], out[-1] = out[1], out[-2]
        return out
    x = space.coords[:, 0]
    if space.kind == "circle":
        R = space.info["R"]
        return pot.hessian(x) / R**2
    return pot.hessian(x)


# --- JSON specs ----------------------------------------------------------------

_SPEC_KEYS = {
    "interval": {"kind", "n", "L", "potential"},
    "circle": {"kind", "n", "R", "potential"},
    "product": {"kind", "factors"},
    "graph": {"kind", "lengths", "weights", "measure"},
}


def space_from_spec(spec: Mapping) -> DiscreteSpace:
    """Build a space from its JSON specification."""
    if not isinstance(spec, Mapping):
        raise InputError("space spec must be an object")
    kind = spec.get("kind")
    if kind not in _SPEC_KEYS:
        raise InputError(f"unknown space kind {kind!r}")
    extra = set(spec) - _SPEC_KEYS[kind]
    if extra:
        raise InputError(f"unknown keys in {kind} spec: {sorted(extra)}")
    try:
        if kind == "interval":
            space = build_interval_space(spec["n"], spec["L"], Potential.from_json(spec.get("potential")))
        elif kind == "circle":
            space = build_circle_space(spec["n"], spec.get("R", 1.0), Potential.from_json(spec.get("potential")))
        elif kind == "product":
            factors = spec["factors"]
            if len(factors) != 2:
                raise InputError("product spec needs exactly two factors")
            space = product_space(space_from_spec(factors[0]), space_from_spec(factors[1]))
        else:
            space = graph_space(spec["lengths"], spec.get("weights"), spec.get("measure"))
    except KeyError as exc:
        raise InputError(f"missing key {exc.args[0]!r} in {kind} spec") from None
    except TypeError as exc:
        raise InputError(f"bad value in {kind} spec: {exc}") from None
    object.__setattr__(space, "info", {**space.info, "spec": dict(spec)})
    return space


def space_spec(space: DiscreteSpace) -> dict | None:
    return space.info.get("spec")


def total_mass(space: DiscreteSpace) -> float:
    return math.fsum(space.measure)
