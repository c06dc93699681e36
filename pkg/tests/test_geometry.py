import numpy as np
import pytest

from nlinclusion.errors import GeometryError
from nlinclusion.geometry import (
    SurfaceSpec,
    build_quadrature,
    check_inclusion,
    default_epsilon_grid,
    epsilon0,
    make_window,
)

UNIT = SurfaceSpec.sphere()


@pytest.mark.parametrize("order", [8, 12, 16])
def test_unit_sphere_area(order):
    rule = build_quadrature(UNIT, order)
    assert abs(rule.weights.sum() - 4 * np.pi) < 1e-12


def test_half_radius_sphere_area():
    rule = build_quadrature(SurfaceSpec.sphere(0.5), 12)
    assert abs(rule.weights.sum() - np.pi) < 1e-12


def test_second_moment():
    rule = build_quadrature(UNIT, 12)
    assert abs(rule.weights @ rule.nodes[:, 0] ** 2 - 4 * np.pi / 3) < 1e-12


def test_nodes_and_normals_on_sphere():
    rule = build_quadrature(SurfaceSpec.sphere(2.0), 10)
    assert np.allclose(np.linalg.norm(rule.nodes, axis=1), 2.0)
    assert np.allclose(rule.normals, rule.nodes / 2.0)


def test_star_surface_area_matches_dense_rule():
    spec = SurfaceSpec("star-shaped", 1.0, ((2, 0, 0.1), (3, 1, 0.05)))
    a16 = build_quadrature(spec, 16).weights.sum()
    a32 = build_quadrature(spec, 32).weights.sum()
    assert abs(a16 - a32) < 1e-6
    assert np.allclose(np.linalg.norm(build_quadrature(spec, 16).normals, axis=1), 1.0)


@pytest.mark.parametrize(
    "inner, eps, expected",
    [(UNIT, 0.5, True), (UNIT, 1.0, False), (SurfaceSpec.sphere(2.0), 0.4, True), (SurfaceSpec.sphere(2.0), 0.5, False)],
)
def test_check_inclusion_examples(inner, eps, expected):
    assert check_inclusion(UNIT, inner, eps) is expected


def test_check_inclusion_rejects_non_positive():
    with pytest.raises(ValueError):
        check_inclusion(UNIT, UNIT, 0.0)


def test_epsilon0_for_spheres():
    assert epsilon0(UNIT, SurfaceSpec.sphere(2.0)) == pytest.approx(0.5)


def test_window_rejects_grid_outside_inclusion():
    with pytest.raises(GeometryError):
        make_window(UNIT, UNIT, [0.5, 1.2])


def test_default_grid_is_geometric():
    g = np.array(default_epsilon_grid())
    assert len(g) == 12 and g[0] == pytest.approx(1e-3) and g[-1] == pytest.approx(0.2)
    assert np.allclose(g[1:] / g[:-1], g[1] / g[0])


@pytest.mark.parametrize(
    "kwargs",
    [
        {"kind": "cube"},
        {"kind": "unit-sphere", "radius": 2.0},
        {"kind": "scaled-sphere", "radius": -1.0},
        {"kind": "star-shaped", "radius": 1.0, "coefficients": ((1, 0, 5.0),)},
        {"kind": "star-shaped", "radius": 1.0, "coefficients": ((1, 3, 0.1),)},
    ],
)
def test_invalid_surfaces(kwargs):
    with pytest.raises(GeometryError):
        SurfaceSpec(**kwargs)


def test_spec_round_trip():
    spec = SurfaceSpec("star-shaped", 1.0, ((2, 0, 0.1),))
    assert SurfaceSpec.from_dict(spec.to_dict()) == spec


def test_band_limited_round_trip(rng):
    rule = build_quadrature(UNIT, 12)
    c = rng.standard_normal(rule.n_coeffs)
    vals = rule.from_coefficients(c)
    assert np.allclose(rule.to_coefficients(vals), c, atol=1e-12)


def test_tangential_gradient_of_x1():
    rule = build_quadrature(UNIT, 12)
    g = rule.tangential_gradient(rule.nodes[:, 0])
    expected = np.array([1.0, 0, 0]) - rule.nodes[:, :1] * rule.nodes
    assert np.abs(g - expected).max() < 1e-12
