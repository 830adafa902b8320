import numpy as np
import pytest

from ricci_lab.checks import cd_check, ent_slope_check, entropy_slope, evi_check, pathwise_convexity_check
from ricci_lab.checks.entropy import evi_terms
from ricci_lab.checks.families import random_measure_pairs
from ricci_lab.errors import EvaluationError
from ricci_lab.space import ProbMeasure, build_interval_space, entropy
from ricci_lab.studies import double_well_space
from ricci_lab.transport import displacement_geodesic


def gaussian(space, center, sigma):
    x = space.coords[:, 0]
    return ProbMeasure.from_masses(space, np.exp(-0.5 * ((x - center) / sigma) ** 2), normalize=True)


@pytest.fixture(scope="module")
def flat():
    return build_interval_space(401, 4.0)


def test_cd_trivial_pair(flat):
    mu = gaussian(flat, 0.0, 0.5)
    r = cd_check(flat, 5.0, mu, mu)
    assert max(abs(x) for x in r.residuals) < 1e-12


def test_cd_constant_curvature_shift(flat):
    mu, nu = random_measure_pairs(flat, 1, 2)[0]
    base = cd_check(flat, 0.0, mu, nu)
    shifted = cd_check(flat, 0.8, mu, nu)
    w2 = base.diagnostics["w2_squared"]
    for row0, row1 in zip(base.rows, shifted.rows):
        t = row0["t"]
        assert row0["raw_margin"] - row1["raw_margin"] == pytest.approx(0.8 * t * (1 - t) / 2 * w2, rel=1e-10)
    assert base.passed


def test_pathwise_average_is_the_cd_margin():
    space, k = double_well_space(101)
    mu, nu = random_measure_pairs(space, 1, 0)[0]
    theta = displacement_geodesic(space, mu, nu, 200)
    path = pathwise_convexity_check(space, k, theta)
    cd = cd_check(space, k, mu, nu)
    assert path.diagnostics["skipped"] == 0
    assert np.allclose(path.diagnostics["averaged_margins"], [row["raw_margin"] for row in cd.rows], atol=1e-8)


def test_pathwise_trivial_and_foreign_plan(flat):
    mu = gaussian(flat, 0.5, 0.4)
    theta = displacement_geodesic(flat, mu, mu, 50)
    assert max(abs(x) for x in pathwise_convexity_check(flat, 0.0, theta).residuals) < 1e-12
    with pytest.raises(ValueError):
        pathwise_convexity_check(build_interval_space(401, 4.0), 0.0, theta)


def test_gaussian_entropy(flat):
    sigma = 0.5
    mu = gaussian(flat, 0.3, sigma)
    n, h = flat.n, flat.h
    expected = np.log(h * n) - 0.5 * np.log(2 * np.pi * np.e * sigma**2)
    assert entropy(flat, mu) == pytest.approx(expected, abs=1e-6)


def test_entropy_slope_of_a_dilation():
    # continuum: mu_r is the Gaussian of width (1-r) s0 + r s1, so Ent(r) = c - log sigma_r.
    # On the grid the step eta is below one cell, and re-binning the spread
    # segments adds a first-order-in-h bias; check it halves with h.
    s0, s1 = 0.4, 0.7
    errors = []
    for n in (401, 801):
        space = build_interval_space(n, 4.0)
        theta = displacement_geodesic(space, gaussian(space, 0.0, s0), gaussian(space, 0.0, s1), 200)
        slope, resid = entropy_slope(theta)
        assert resid < 1e-4
        errors.append(slope + (s1 - s0) / s0)
        margin = ent_slope_check(space, 0.0, theta)
        assert margin - (-np.log(s1 / s0) + (s1 - s0) / s0) == pytest.approx(-errors[-1], abs=1e-5)
    assert errors[0] < 0 and errors[0] / errors[1] == pytest.approx(2.0, rel=0.05)


def test_entropy_slope_of_a_translation():
    # zero in the continuum; the grid bias is -h I / 2 with Fisher information I = 1 / sigma^2
    sigma = 0.5
    for n in (401, 801):
        space = build_interval_space(n, 4.0)
        theta = displacement_geodesic(space, gaussian(space, -0.5, sigma), gaussian(space, 0.5, sigma), 200)
        assert entropy_slope(theta)[0] == pytest.approx(-space.h / (2 * sigma**2), rel=1e-3)


def test_evi_at_equilibrium_is_zero(flat):
    ref = ProbMeasure.reference(flat)
    terms = evi_terms(flat, 0.0, ref, ref, 0.2)
    assert abs(terms["margin"]) < 1e-9
    assert terms["w2_squared"] < 1e-12


def test_evi_passes_on_double_well_and_rejects_vanishing_target():
    space, k = double_well_space(101)
    mu, nu = random_measure_pairs(space, 1, 3)[0]
    assert evi_check(space, k, mu, nu, t_grid=(0.3,)).passed
    with pytest.raises(EvaluationError):
        evi_check(space, k, mu, ProbMeasure.dirac(space, 50))
