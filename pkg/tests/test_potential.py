import numpy as np
import pytest

from nlinclusion.errors import ConfigurationError, DomainError
from nlinclusion.geometry import SurfaceSpec, build_quadrature
from nlinclusion.potential import (
    assemble_W,
    assemble_normal_derivative,
    double_layer_gradient_offsurface,
    double_layer_offsurface,
    fundamental_solution,
    grad_fundamental_solution,
    hessian_fundamental_solution,
    normal_derivative_double_layer,
    solve_interior_dirichlet,
)


@pytest.fixture(scope="module")
def unit_rule():
    return build_quadrature(SurfaceSpec.sphere(), 12)


def test_fundamental_solution_values():
    assert fundamental_solution(np.array([2.0, 0, 0])) == pytest.approx(-1 / (8 * np.pi), rel=1e-15)
    assert fundamental_solution(np.array([0, 0, 1.0, 0]), n=4) == pytest.approx(-1 / (4 * np.pi**2), rel=1e-15)


def test_fundamental_solution_gradient_example():
    g = grad_fundamental_solution(np.array([1.0, 0, 0]))
    assert np.allclose(g, [1 / (4 * np.pi), 0, 0], rtol=1e-15)


def test_gradient_and_hessian_match_finite_differences(rng):
    x = rng.normal(size=3) + 1.0
    h = 1e-6
    eye = np.eye(3)
    fd = np.array([(fundamental_solution(x + h * e) - fundamental_solution(x - h * e)) / (2 * h) for e in eye])
    assert np.allclose(grad_fundamental_solution(x), fd, rtol=1e-7)
    fdH = np.array([(grad_fundamental_solution(x + h * e) - grad_fundamental_solution(x - h * e)) / (2 * h) for e in eye])
    assert np.allclose(hessian_fundamental_solution(x), fdH, rtol=1e-6)
    assert abs(np.trace(hessian_fundamental_solution(x))) < 1e-12


def test_fundamental_solution_errors():
    with pytest.raises(DomainError):
        fundamental_solution(np.zeros(3))
    with pytest.raises(ConfigurationError):
        fundamental_solution(np.ones(2), n=2)


def test_double_layer_of_constant(unit_rule):
    one = np.ones(unit_rule.size)
    inside = double_layer_offsurface(unit_rule, one, np.array([[0.1, 0.2, -0.3], [0.0, 0.0, 0.0]]))
    outside = double_layer_offsurface(unit_rule, one, np.array([[2.0, 0.5, 0.0]]), upsample=2)
    assert np.allclose(inside, 1.0, atol=1e-12)
    assert np.allclose(outside, 0.0, atol=1e-12)


def test_double_layer_of_first_harmonic(unit_rule):
    x = np.array([[0.3, -0.2, 0.1], [2.0, 1.0, 0.0]])
    w = double_layer_offsurface(unit_rule, unit_rule.nodes[:, 0], x, upsample=2)
    # inside: (2/3) x1, outside: -(1/3) x1 / |x|^3
    assert w[0] == pytest.approx(2 / 3 * 0.3, abs=1e-10)
    assert w[1] == pytest.approx(-1 / 3 * 2.0 / np.linalg.norm(x[1]) ** 3, abs=1e-10)


def test_double_layer_gradient_inside(unit_rule):
    g = double_layer_gradient_offsurface(unit_rule, unit_rule.nodes[:, 0], np.array([[0.1, 0.1, 0.1]]))
    assert np.allclose(g, [[2 / 3, 0, 0]], atol=1e-10)


def test_W_row_sums(unit_rule):
    W = assemble_W(unit_rule)
    assert np.abs(W.matrix @ np.ones(unit_rule.size) - 0.5).max() < 1e-10


def test_interior_dirichlet_first_harmonic(unit_rule):
    mu = solve_interior_dirichlet(unit_rule, unit_rule.nodes[:, 0])
    assert np.abs(mu - 1.5 * unit_rule.nodes[:, 0]).max() < 1e-8


def test_spectral_normal_derivative(unit_rule):
    nd = normal_derivative_double_layer(unit_rule, unit_rule.nodes[:, 0], mode="spectral")
    assert np.abs(nd.values - 2 / 3 * unit_rule.nodes[:, 0]).max() < 1e-12
    assert nd.mismatch == 0.0


def test_offset_normal_derivative_agrees_with_spectral():
    rule = build_quadrature(SurfaceSpec.sphere(), 10)
    spec, _ = assemble_normal_derivative(rule, mode="spectral")
    off, _ = assemble_normal_derivative(rule, mode="offset")
    mu = rule.nodes[:, 0] * rule.nodes[:, 1]
    assert np.abs(off @ mu - spec @ mu).max() < 1e-5
    assert np.abs(off @ np.ones(rule.size)).max() < 1e-12


def test_spectral_mode_requires_sphere():
    spec = SurfaceSpec("star-shaped", 1.0, ((2, 0, 0.1),))
    with pytest.raises(ConfigurationError):
        assemble_normal_derivative(build_quadrature(spec, 8), mode="spectral")
