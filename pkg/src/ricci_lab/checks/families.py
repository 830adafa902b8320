"""Deterministic families of test functions and probability measures."""

from __future__ import annotations

from typing import Mapping

import numpy as np

from ..errors import InputError
from ..rng import gaussian_vectors, generator
from ..semigroups import heat_apply, spectral_cache
from ..space import DiscreteSpace, ProbMeasure, gamma

MOLLIFY_TIME = 0.01

FUNCTION_KINDS = ("eigen", "random-smooth", "polynomial")


def eigen_functions(space: DiscreteSpace, count: int) -> np.ndarray:
    """The ``count`` lowest nonconstant eigenfunctions of Delta as columns."""
    cache = spectral_cache(space)
    order = np.argsort(-cache.eigenvalues)
    count = min(count, space.n - 1)
    return np.array(cache.eigenvectors[:, order[1 : count + 1]])


def random_smooth_functions(space: DiscreteSpace, count: int, seed: int, mollify: float = MOLLIFY_TIME) -> np.ndarray:
    """Heat-mollified Gaussian noise, one column per function."""
    noise = gaussian_vectors(seed, 1, count, space.n).T
    return heat_apply(space, noise, mollify)


def polynomial_functions(space: DiscreteSpace, count: int, seed: int, degree: int = 3) -> np.ndarray:
    """Random polynomials of the coordinates with normal coefficients."""
    rng = generator(seed, 2)
    X = space.coords / max(1.0, float(np.abs(space.coords).max()))
    cols = []
    for _ in range(count):
        u = np.zeros(space.n)
        for dim in range(X.shape[1]):
            coeff = rng.normal(size=degree + 1)
            u += np.polynomial.polynomial.polyval(X[:, dim], coeff)
        cols.append(u)
    return np.column_stack(cols)


def function_family(space: DiscreteSpace, spec) -> tuple[np.ndarray, list[str]]:
    """Stack of test functions u with labels, normalized to max Gamma(u) = 1.

    ``spec`` is one mapping {"kind", "count", "seed"} or a list of them.
    Constant functions (zero gradient) are dropped.
    """
    specs = [spec] if isinstance(spec, Mapping) else list(spec or [])
    blocks, labels = [], []
    for item in specs:
        extra = set(item) - {"kind", "count", "seed", "mollify"}
        if extra:
            raise InputError(f"unknown family keys: {sorted(extra)}")
        kind = item.get("kind")
        count = int(item.get("count", 10))
        seed = int(item.get("seed", 0))
        if kind == "eigen":
            U = eigen_functions(space, count)
        elif kind == "random-smooth":
            U = random_smooth_functions(space, count, seed, float(item.get("mollify", MOLLIFY_TIME)))
        elif kind == "polynomial":
            U = polynomial_functions(space, count, seed)
        else:
            raise InputError(f"unknown function family {kind!r}")
        blocks.append(U)
        labels.extend(f"{kind}:{i}" for i in range(U.shape[1]))
    if not blocks:
        raise InputError("empty test-function family")
    U = np.hstack(blocks)
    scale = gamma(space, U).max(axis=0)
    keep = scale > 1e-14
    if not keep.any():
        raise InputError("test-function family has no nonconstant member")
    U = U[:, keep] / np.sqrt(scale[keep])
    labels = [lab for lab, k in zip(labels, keep) if k]
    return U, labels


def nonnegative_family(space: DiscreteSpace, bumps: int = 4, seed: int = 0) -> tuple[np.ndarray, list[str]]:
    """Nonnegative phi with integral one: point densities, the constant, smooth bumps."""
    m = space.measure
    Phi = [np.diag(1.0 / m)]
    labels = [f"delta:{i}" for i in range(space.n)]
    Phi.append(np.ones((space.n, 1)))
    labels.append("const")
    if bumps:
        noise = np.exp(gaussian_vectors(seed, 3, bumps, space.n).T)
        smooth = np.clip(heat_apply(space, noise, 0.05), 0.0, None)
        smooth /= m @ smooth
        Phi.append(smooth)
        labels.extend(f"bump:{i}" for i in range(bumps))
    return np.hstack(Phi), labels


# --- random measures ----------------------------------------------------------------


def _mixture_density(points: np.ndarray, centers: np.ndarray, widths: np.ndarray, weights: np.ndarray, periodic: bool = False):
    out = np.zeros(len(points))
    for c, w, a in zip(centers, widths, weights):
        diff = points - c
        if periodic:
            diff = np.angle(np.exp(1j * diff))
        out += a * np.exp(-0.5 * np.sum(diff**2, axis=1) / w**2)
    return out


def random_measure(space: DiscreteSpace, rng: np.random.Generator, components: int = 2, spread: float = 0.6, floor: float = 0.0) -> ProbMeasure:
    """Gaussian mixture with random centers and widths, sampled at the sites.

    Parameters are drawn in continuum units, so the same seed gives the same
    continuum measure on every grid resolution.
    """
    X = space.coords
    periodic = space.kind == "circle"
    if periodic:
        centers = rng.uniform(0, 2 * np.pi, size=(components, 1))
        widths = rng.uniform(0.3, 0.8, size=components)
    else:
        half = np.abs(X).max(axis=0)
        centers = rng.uniform(-spread, spread, size=(components, X.shape[1])) * half
        widths = rng.uniform(0.25, 0.6, size=components) * half.mean() / 2
    weights = rng.uniform(0.5, 1.5, size=components)
    lebesgue = _mixture_density(X, centers, widths, weights, periodic)
    masses = lebesgue + floor * lebesgue.max()
    return ProbMeasure.from_masses(space, masses, normalize=True)


def random_measure_pairs(space: DiscreteSpace, count: int, seed: int, **kwargs) -> list[tuple[ProbMeasure, ProbMeasure]]:
    rng = generator(seed, 4)
    return [(random_measure(space, rng, **kwargs), random_measure(space, rng, **kwargs)) for _ in range(count)]

