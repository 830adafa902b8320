import numpy as np
import pytest

from ricci_lab.checks import be_scan, change_of_measure, lambda_convexity_check, tensor_curvature
from ricci_lab.errors import InputError
from ricci_lab.space import Potential, build_circle_space, build_interval_space, product_space


def test_zero_potential_changes_nothing():
    flat = build_interval_space(11, 2.0)
    new, field = change_of_measure(flat, lambda x: 0 * x, 0.0, k=0.25)
    assert np.allclose(new.measure, flat.measure, rtol=1e-15)
    assert np.allclose(new.edge_weights, flat.edge_weights, rtol=1e-15)
    assert np.all(field.values == 0.25)


@pytest.mark.parametrize("name", ["quadratic", "double_well"])
def test_reweighting_reproduces_direct_construction(name):
    V = Potential(name)
    direct = build_interval_space(31, 2.5, V)
    new, field = change_of_measure(build_interval_space(31, 2.5), V, V.hessian)
    assert np.allclose(new.measure, direct.measure, rtol=1e-12)
    assert np.allclose(new.edge_weights, direct.edge_weights, rtol=1e-12)
    assert np.allclose(field.values, V.hessian(direct.coords[:, 0]))


def test_circle_reweighting_uses_short_arc_midpoints():
    V = Potential("cosine")
    direct = build_circle_space(12, 1.0, V)
    new, _ = change_of_measure(build_circle_space(12, 1.0), V, 0.0)
    assert np.allclose(new.edge_weights, direct.edge_weights, rtol=1e-12)


def test_reweighted_ou_satisfies_be():
    new, field = change_of_measure(build_interval_space(101, 5.0), Potential("quadratic"), 1.0)
    assert be_scan(new, field, [{"kind": "eigen", "count": 8}]).passed


def test_quadratic_is_exactly_one_convex():
    space = build_interval_space(41, 2.0)
    paths = [(0, 40), (5, 30), (10, 11)]
    V = lambda x: 0.5 * x**2
    r = lambda_convexity_check(space, V, lambda x: np.ones_like(x), paths)
    assert max(abs(m) for m in r.residuals) < 1e-12
    assert not lambda_convexity_check(space, V, lambda x: 1.5 * np.ones_like(x), paths).passed


def test_double_well_with_its_hessian():
    space = build_interval_space(41, 2.0)
    V = Potential("double_well")
    paths = [(0, 40), (3, 25), (20, 39)]
    r = lambda_convexity_check(space, V, V.hessian, paths)
    assert r.passed and abs(r.min_margin) < 1e-4
    assert not lambda_convexity_check(space, V, lambda x: V.hessian(x) + 0.5, paths).passed
    tables = lambda_convexity_check(space, V(space.coords[:, 0]), V.hessian(space.coords[:, 0]), paths)
    assert tables.passed and tables.diagnostics["interpolation"] > 0


def test_lambda_convexity_input_errors():
    space = build_interval_space(11, 1.0)
    with pytest.raises(InputError):
        lambda_convexity_check(space, np.zeros(11), 0.0, [(0, 11)])
    with pytest.raises(InputError):
        lambda_convexity_check(space, np.zeros(11), 0.0, [(0, 5)], S=7)
    with pytest.raises(InputError):
        lambda_convexity_check(build_circle_space(5), lambda x: x, 0.0, [(0, 2)])


def test_tensor_curvature_order_and_clipping():
    k = tensor_curvature([[1.0, -2.0], [0.5, 3.0, -1.0]])
    assert list(k.values) == [0.0, 0.0, -1.0, -2.0, -2.0, -2.0]
    A, B = build_interval_space(3, 1.0), build_interval_space(4, 1.0)
    assert len(tensor_curvature([np.ones(3), np.ones(4)], product_space(A, B))) == 12
    with pytest.raises(InputError):
        tensor_curvature([np.ones(4), np.ones(3)], product_space(A, B))
    with pytest.raises(InputError):
        tensor_curvature([np.ones(3)])
