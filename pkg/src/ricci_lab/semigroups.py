"""Heat and Schrödinger semigroups, Markov kernels, Duhamel and Feynman-Kac."""

from __future__ import annotations

import math
import weakref
from dataclasses import dataclass

import numpy as np

from .errors import InputError, NumericError
from .rng import uniforms
from .space import DiscreteSpace, ProbMeasure, as_field


@dataclass(frozen=True, eq=False)
class SpectralCache:
    """Eigendecomposition of Delta - 2 diag(k) in L2(m).

    ``eigenvectors`` are m-orthonormal (Phi^T M Phi = I), so
    e^{t A} u = Phi e^{t Lambda} Phi^T M u.
    """

    space: DiscreteSpace
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    potential: np.ndarray

    @property
    def sqrt_m(self) -> np.ndarray:
        return np.sqrt(self.space.measure)

    def apply(self, u, t: float) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        Phi = self.eigenvectors
        m = self.space.measure
        weighted = u * (m[:, None] if u.ndim == 2 else m)
        coeff = Phi.T @ weighted
        decay = np.exp(t * self.eigenvalues)
        return Phi @ (coeff * (decay[:, None] if u.ndim == 2 else decay))

    def symmetric_matrix(self, t: float) -> np.ndarray:
        """M^{1/2} e^{tA} M^{-1/2}, symmetric."""
        U = self.eigenvectors * self.sqrt_m[:, None]
        out = (U * np.exp(t * self.eigenvalues)) @ U.T
        return 0.5 * (out + out.T)

    def matrix(self, t: float) -> np.ndarray:
        s = self.sqrt_m
        return self.symmetric_matrix(t) / s[:, None] * s[None, :]

    def reconstruction_error(self) -> float:
        s = self.sqrt_m
        U = self.eigenvectors * s[:, None]
        A = (U * self.eigenvalues) @ U.T
        target = s[:, None] * (self.space.laplacian_matrix - np.diag(2 * self.potential)) / s[None, :]
        return float(np.abs(A - target).max() / max(1.0, np.abs(target).max()))


_CACHES: "weakref.WeakKeyDictionary[DiscreteSpace, dict]" = weakref.WeakKeyDictionary()


def spectral_cache(space: DiscreteSpace, k=None) -> SpectralCache:
    """Cached eigendecomposition of Delta (k None) or Delta - 2k."""
    kv = np.zeros(space.n) if k is None else as_field(space, k).values
    key = kv.tobytes()
    per_space = _CACHES.setdefault(space, {})
    if key in per_space:
        return per_space[key]
    s = np.sqrt(space.measure)
    L = space.laplacian_matrix
    S = s[:, None] * L / s[None, :]
    S = 0.5 * (S + S.T) - np.diag(2 * kv)
    try:
        evals, U = np.linalg.eigh(S)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"eigensolver failed: {exc}") from exc
    if k is None:
        evals = np.minimum(evals, 0.0)
    Phi = U / s[:, None]
    Phi.setflags(write=False)
    evals.setflags(write=False)
    cache = SpectralCache(space, evals, Phi, kv)
    per_space[key] = cache
    return cache


def _check_time(t: float) -> float:
    t = float(t)
    if not t >= 0:
        raise InputError("time must be nonnegative")
    return t


def heat_apply(space: DiscreteSpace, u, t: float) -> np.ndarray:
    """T_t u = e^{t Delta} u."""
    t = _check_time(t)
    if t == 0:
        return np.array(u, dtype=float)
    return spectral_cache(space).apply(u, t)


def schrodinger_apply(space: DiscreteSpace, k, u, t: float) -> np.ndarray:
    """T_t^{2k} u = e^{t (Delta - 2k)} u."""
    t = _check_time(t)
    if t == 0:
        return np.array(u, dtype=float)
    return spectral_cache(space, k).apply(u, t)


def heat_flow_measure(space: DiscreteSpace, mu: ProbMeasure, t: float) -> ProbMeasure:
    """P_t mu, whose density is T_t rho."""
    t = _check_time(t)
    if t == 0:
        return mu
    rho = np.clip(heat_apply(space, mu.density, t), 0.0, None)
    return ProbMeasure.from_density(space, rho, normalize=True)


def markov_kernel(space: DiscreteSpace, t: float) -> np.ndarray:
    """Row x is the mass vector of P_t delta_x."""
    t = _check_time(t)
    if t == 0:
        return np.eye(space.n)
    cache = spectral_cache(space)
    s = cache.sqrt_m
    P = cache.symmetric_matrix(t) / s[:, None] * s[None, :]
    P = np.clip(P, 0.0, None)
    return P / P.sum(axis=1, keepdims=True)


# --- Duhamel -----------------------------------------------------------------------


def duhamel_residual(space: DiscreteSpace, k, t: float, quad_nodes: int) -> float:
    """L2(m) operator norm of T_t - T_t^{2k} - int_0^t T_r 2k T_{t-r}^{2k} dr.

    The integral uses composite Simpson with ``quad_nodes`` subintervals.
    """
    t = _check_time(t)
    if quad_nodes < 2 or quad_nodes % 2:
        raise InputError("quad_nodes must be an even number >= 2")
    kv = as_field(space, k).values
    heat = spectral_cache(space)
    schr = spectral_cache(space, kv)
    lhs = heat.symmetric_matrix(t) - schr.symmetric_matrix(t)
    r = np.linspace(0.0, t, quad_nodes + 1)
    weights = np.ones(quad_nodes + 1)
    weights[1:-1:2] = 4.0
    weights[2:-1:2] = 2.0
    weights *= (t / quad_nodes) / 3.0
    rhs = np.zeros_like(lhs)
    for ri, wi in zip(r, weights):
        rhs += wi * (heat.symmetric_matrix(ri) * (2 * kv)[None, :]) @ schr.symmetric_matrix(t - ri)
    return float(np.linalg.norm(lhs - rhs, 2))


# --- Feynman-Kac Monte Carlo -----------------------------------------------------------


@dataclass(frozen=True)
class PathSample:
    """One continuous-time path of the chain with generator Delta / 2."""

    start: int
    jump_times: np.ndarray
    sites: np.ndarray
    integral: float
    terminal: int
    seed: int
    path_index: int
    draws: int


def _jump_tables(space: DiscreteSpace):
    """Rates of the chain with generator Delta/2 and CSR jump distributions."""
    W = space.edge_weights
    out = W.sum(axis=1)
    rates = out / (2.0 * space.measure)
    rows, cols = np.nonzero(W)
    probs = W[rows, cols] / out[rows]
    indptr = np.concatenate([[0], np.cumsum(np.bincount(rows, minlength=space.n))])
    cum = np.empty_like(probs)
    for x in range(space.n):
        a, b = indptr[x], indptr[x + 1]
        if b > a:
            c = np.cumsum(probs[a:b])
            c /= c[-1]
            cum[a:b] = x + c
    return rates, indptr, cols, cum


def _choose_neighbor(pos, u, indptr, cols, cum):
    idx = np.searchsorted(cum, pos + u, side="left")
    idx = np.clip(idx, indptr[pos], indptr[pos + 1] - 1)
    return cols[idx]


def _simulate(space, kv, starts, path_ids, horizon, seed, record=False):
    rates, indptr, cols, cum = _jump_tables(space)
    pos = np.array(starts, dtype=np.int64)
    remaining = np.full(len(pos), float(horizon))
    integral = np.zeros(len(pos))
    active = remaining > 0
    counter = 0
    log = [] if record else None
    while active.any():
        idx = np.nonzero(active)[0]
        u_hold = uniforms(seed, starts[idx], path_ids[idx], counter)
        u_jump = uniforms(seed, starts[idx], path_ids[idx], counter + 1)
        counter += 2
        r = rates[pos[idx]]
        with np.errstate(divide="ignore"):
            hold = np.where(r > 0, -np.log(u_hold) / np.where(r > 0, r, 1.0), np.inf)
        jumps = hold < remaining[idx]
        dt = np.where(jumps, hold, remaining[idx])
        integral[idx] += dt * kv[pos[idx]]
        remaining[idx] -= dt
        jumpers = idx[jumps]
        if len(jumpers):
            pos[jumpers] = _choose_neighbor(pos[jumpers], u_jump[jumps], indptr, cols, cum)
        if record:
            log.append((jumpers.copy(), horizon - remaining[jumpers], pos[jumpers].copy()))
        remaining[idx[~jumps]] = 0.0
        active = remaining > 0
    return pos, integral, counter, log


def feynman_kac_mc(space: DiscreteSpace, k, u, t: float, n_paths: int, seed: int = 0, chunk: int = 500_000):
    """Monte Carlo estimate of T_t^{2k} u(x) = E_x[exp(-int_0^{2t} k(B_s) ds) u(B_{2t})].

    Path j from site x uses the counter stream (seed, x, j), so each path is
    reproducible on its own.  Returns (estimate, standard error) per site.
    """
    if int(n_paths) != n_paths or n_paths < 1:
        raise InputError("n_paths must be a positive integer")
    t = _check_time(t)
    kv = as_field(space, k).values
    u = np.asarray(u, dtype=float)
    n = space.n
    estimate = np.empty(n)
    stderr = np.empty(n)
    sites_per_chunk = max(1, chunk // n_paths)
    for lo in range(0, n, sites_per_chunk):
        block = np.arange(lo, min(n, lo + sites_per_chunk))
        starts = np.repeat(block, n_paths)
        ids = np.tile(np.arange(n_paths), len(block))
        end, integral, _, _ = _simulate(space, kv, starts, ids, 2.0 * t, seed)
        values = (np.exp(-integral) * u[end]).reshape(len(block), n_paths)
        for row, x in enumerate(block):
            vals = values[row]
            mean = math.fsum(vals) / n_paths
            estimate[x] = mean
            if n_paths > 1:
                var = math.fsum((vals - mean) ** 2) / (n_paths - 1)
                stderr[x] = math.sqrt(var / n_paths)
            else:
                stderr[x] = 0.0
    return estimate, stderr


def sample_path(space: DiscreteSpace, k, x: int, t: float, seed: int = 0, path_index: int = 0) -> PathSample:
    """Single path with full jump history, identical to path (x, path_index) of feynman_kac_mc."""
    t = _check_time(t)
    kv = as_field(space, k).values
    starts = np.array([x])
    ids = np.array([path_index])
    end, integral, draws, log = _simulate(space, kv, starts, ids, 2.0 * t, seed, record=True)
    times = [float(tt[0]) for j, tt, _ in log if len(j)]
    sites = [int(x)] + [int(s[0]) for j, _, s in log if len(j)]
    return PathSample(int(x), np.array(times), np.array(sites), float(integral[0]), int(end[0]), int(seed), int(path_index), draws)


def path_integral(space: DiscreteSpace, k, sample: PathSample, t: float) -> float:
    """Recompute int k(B_s) ds from the jump history of a sample."""
    kv = as_field(space, k).values
    edges = np.concatenate([[0.0], sample.jump_times, [2.0 * t]])
    return float(np.sum(np.diff(edges) * kv[sample.sites]))
