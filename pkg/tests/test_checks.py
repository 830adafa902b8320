import math

import numpy as np
import pytest

from ricci_lab.checks import (
    be_check,
    be_margins,
    be_scan,
    contraction_margin,
    gradient_estimate_check,
    gradient_margin,
    make_report,
    merge_reports,
    wp_contraction_check,
)
from ricci_lab.checks.families import function_family, nonnegative_family, random_measure_pairs
from ricci_lab.errors import InputError
from ricci_lab.space import Potential, build_circle_space, build_interval_space, gamma

FAMILY = [{"kind": "eigen", "count": 6}, {"kind": "random-smooth", "count": 6, "seed": 1}]


@pytest.fixture
def ou():
    return build_interval_space(41, 4.0, Potential("quadratic"))


def test_constant_function_has_zero_margin(ou):
    phi = nonnegative_family(ou)[0][:, 0]
    assert be_check(ou, 3.0, np.ones(ou.n), phi) == 0.0


def test_be_is_affine_in_k_and_quadratic_in_u(ou):
    u = np.sin(ou.coords[:, 0])
    phi = nonnegative_family(ou)[0][:, 1]
    base = be_check(ou, 0.0, u, phi)
    shifted = be_check(ou, 0.5, u, phi)
    assert base - shifted == pytest.approx(0.5 * (ou.measure * phi) @ gamma(ou, u), rel=1e-10)
    assert be_check(ou, 0.5, 3 * u, phi) == pytest.approx(9 * shifted, rel=1e-10)


def test_be_margins_agree_with_single_evaluations(ou):
    U = function_family(ou, FAMILY)[0]
    Phi = nonnegative_family(ou)[0]
    M = be_margins(ou, 1.0, U, Phi)
    assert M[3, 2] == pytest.approx(be_check(ou, 1.0, U[:, 3], Phi[:, 2]), rel=1e-10, abs=1e-14)


def test_be_rejects_negative_phi(ou):
    with pytest.raises(InputError):
        be_check(ou, 0.0, np.ones(ou.n), -np.ones(ou.n))


def test_flat_circle_and_monotonicity():
    circle = build_circle_space(24, 1.0)
    assert be_scan(circle, 0.0, FAMILY).min_margin >= -1e-12
    # the first eigenfunction pins the curvature bound at the spectral gap
    assert not be_scan(circle, 1.2, FAMILY).passed
    margins = [be_scan(circle, k, FAMILY).min_margin for k in (0.0, 0.3, 0.6)]
    assert margins[0] >= margins[1] >= margins[2]


def test_be_scan_witness_reproduces(ou):
    r = be_scan(ou, 1.0, FAMILY)
    w = r.witnesses[0]
    assert be_check(ou, 1.0, w["inputs"]["u"], w["inputs"]["phi"]) == pytest.approx(w["margin"], rel=1e-9, abs=1e-15)


def test_gradient_estimate_on_flat_circle():
    circle = build_circle_space(20, 1.0)
    U = function_family(circle, FAMILY)[0]
    r = gradient_estimate_check(circle, 0.0, U, [0.05, 0.5])
    assert r.min_margin >= -1e-12


def test_gradient_margin_vanishes_at_small_time(ou):
    U = function_family(ou, FAMILY)[0]
    # margins are first order in t: halving t halves them
    small = np.array(gradient_estimate_check(ou, 1.0, U, [1e-6]).residuals)
    smaller = np.array(gradient_estimate_check(ou, 1.0, U, [5e-7]).residuals)
    big = np.abs(small) > 1e-3 * np.abs(small).max()
    assert np.allclose(smaller[big] / small[big], 0.5, atol=1e-3)


def test_gradient_witness_and_errors(ou):
    u = np.cos(ou.coords[:, 0])
    r = gradient_estimate_check(ou, 1.5, u, [0.2])
    w = r.witnesses[0]
    assert gradient_margin(ou, 1.5, u, w["t"], w["site"]) == pytest.approx(w["margin"], rel=1e-12)
    with pytest.raises(InputError):
        gradient_estimate_check(ou, 1.0, u, [0.0])


def test_contraction_trivial_and_sharpness(ou):
    pairs = random_measure_pairs(ou, 3, 0)
    mu = pairs[0][0]
    assert contraction_margin(ou, 1.0, mu, mu, 0.3, 2) == 0.0
    assert wp_contraction_check(ou, 1.0, pairs, [0.5], 2).passed
    assert wp_contraction_check(ou, -1.0, pairs, [0.5], 2).min_margin > 0.5
    assert not wp_contraction_check(ou, 3.0, pairs, [0.5], 1).passed
    assert wp_contraction_check(ou, 1.0, pairs, [0.5], math.inf).rows[0] == {"pair": 0, "t": 0.5}


def test_report_status_and_merge():
    a = make_report("a", {}, [0.1, -0.01], 0.05)
    b = make_report("b", {}, [0.2], 0.05)
    assert (a.verdict, a.status) == ("pass", "inconclusive")
    merged = merge_reports("ab", [a, b])
    assert merged.residuals == [0.1, -0.01, 0.2]
    assert merged.witnesses[0]["part"] == 0
    with pytest.raises(ValueError):
        merge_reports("ab", [a, make_report("c", {}, [0.0], 0.1)])
    assert make_report("f", {}, [-1.0], 0.5).status == "fail"


def test_smoother_family_exposes_the_shifted_curvature():
    # the acceptance family (heat-mollified at 0.01) misses the k + 0.5 violation;
    # a smoother family finds it, so the estimate itself is sharp
    from ricci_lab.studies import double_well_space

    space, k = double_well_space(201)
    U = function_family(space, {"kind": "random-smooth", "count": 20, "seed": 0, "mollify": 0.1})[0]
    assert gradient_estimate_check(space, k, U, [0.05, 0.1, 0.2]).passed
    assert not gradient_estimate_check(space, k.shifted(0.5), U, [0.05, 0.1, 0.2]).passed


def test_winf_contraction_shortfall_is_below_one_lattice_step(ou):
    # discrete W_inf takes values in the finite set of site distances, so it can
    # exceed e^{-Kt} W_inf(mu, nu) by less than one grid step
    pairs = random_measure_pairs(ou, 10, 0)
    r = wp_contraction_check(ou, 1.0, pairs, [0.1, 0.5, 1.0], math.inf)
    w0 = r.diagnostics["w_initial"]
    for row, margin in zip(r.rows, r.residuals):
        assert margin * w0[row["pair"]] >= -ou.h
