import numpy as np
import pytest
from scipy.linalg import expm

from ricci_lab.errors import InputError
from ricci_lab.space import Potential, ProbMeasure, build_circle_space, build_interval_space
from ricci_lab.semigroups import (
    duhamel_residual,
    feynman_kac_mc,
    heat_apply,
    heat_flow_measure,
    markov_kernel,
    path_integral,
    sample_path,
    schrodinger_apply,
    spectral_cache,
)


@pytest.fixture
def space():
    return build_interval_space(15, 1.5, Potential("double_well"))


def test_heat_and_schrodinger_match_expm(space):
    u = np.sin(3 * space.coords[:, 0])
    k = space.coords[:, 0] ** 2 - 0.3
    L = space.laplacian_matrix
    assert np.allclose(heat_apply(space, u, 0.3), expm(0.3 * L) @ u, atol=1e-11)
    assert np.allclose(schrodinger_apply(space, k, u, 0.3), expm(0.3 * (L - 2 * np.diag(k))) @ u, atol=1e-11)
    assert spectral_cache(space, k).reconstruction_error() < 1e-10


def test_reference_measure_is_stationary(space):
    P = markov_kernel(space, 0.4)
    assert np.allclose(P.sum(axis=1), 1.0)
    assert np.allclose(space.measure @ P, space.measure, atol=1e-12)
    ref = ProbMeasure.reference(space)
    assert np.allclose(heat_flow_measure(space, ref, 1.0).density, 1.0, atol=1e-10)


def test_negative_time_rejected(space):
    with pytest.raises(InputError):
        heat_apply(space, np.ones(space.n), -0.1)


def test_duhamel_trivial_cases(space):
    assert duhamel_residual(space, np.zeros(space.n), 0.5, 4) < 1e-13
    # constant k: T^{2k}_t = e^{-2kt} T_t and the integral is (1 - e^{-2kt}) T_t, Simpson error O(n^-4)
    assert duhamel_residual(space, 0.7, 0.5, 64) < 1e-8
    with pytest.raises(InputError):
        duhamel_residual(space, 0.7, 0.5, 5)


def test_duhamel_fourth_order():
    space = build_circle_space(31, 1.0, Potential("cosine"))
    k = -np.cos(space.coords[:, 0])
    coarse, fine = duhamel_residual(space, k, 0.5, 16), duhamel_residual(space, k, 0.5, 32)
    assert 12 < coarse / fine < 20


def test_feynman_kac_constant_potential_is_exact(space):
    est, se = feynman_kac_mc(space, 0.4, np.ones(space.n), 0.3, 50, seed=1)
    assert np.allclose(est, np.exp(-2 * 0.4 * 0.3), rtol=1e-13)
    assert np.allclose(se, 0.0, atol=1e-15)


def test_feynman_kac_transition_probabilities(space):
    y = 9
    u = np.zeros(space.n)
    u[y] = 1.0
    est, se = feynman_kac_mc(space, 0.0, u, 0.2, 20000, seed=3)
    exact = markov_kernel(space, 0.2)[:, y]
    assert np.all(np.abs(est - exact) <= 4 * se + 1e-12)


def test_sample_path_reproduces_the_batch(space):
    k = space.coords[:, 0] ** 2
    est, _ = feynman_kac_mc(space, k, np.ones(space.n), 0.25, 3, seed=5)
    for x in (0, 7):
        batch = [np.exp(-sample_path(space, k, x, 0.25, seed=5, path_index=j).integral) for j in range(3)]
        assert est[x] == pytest.approx(np.mean(batch), rel=1e-12)
    sample = sample_path(space, k, 4, 0.25, seed=5, path_index=1)
    assert path_integral(space, k, sample, 0.25) == pytest.approx(sample.integral, rel=1e-12)
    assert sample.sites[-1] == sample.terminal
    assert np.all(np.abs(np.diff(sample.sites)) == 1)
