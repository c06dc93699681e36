import numpy as np
import pytest

from nlinclusion.data import (
    HarmonicPolynomial,
    Polynomial3,
    affine_family,
    check_admissibility,
    dv_nemytskii,
    family_from_dict,
    nemytskii_apply,
    polynomial_family,
    taylor_remainder_F,
    taylor_remainder_u,
)
from nlinclusion.errors import ConfigurationError, EvaluationError
from nlinclusion.geometry import SurfaceSpec, build_quadrature
from nlinclusion.system import compute_background

INNER = build_quadrature(SurfaceSpec.sphere(), 8)
OUTER = build_quadrature(SurfaceSpec.sphere(), 12)
one = Polynomial3.constant


def test_polynomial_calculus():
    p = Polynomial3.from_json([[[2, 1, 0], 3.0], [[0, 0, 1], -1.0]])
    x = np.array([[1.0, 2.0, 3.0]])
    assert p.value(x)[0] == pytest.approx(3.0)
    assert np.allclose(p.gradient(x), [[12.0, 3.0, -1.0]])
    assert np.allclose(p.hessian(x)[0], [[12, 6, 0], [6, 0, 0], [0, 0, 0]])
    assert p.laplacian().terms == {(0, 1, 0): 6.0}
    assert p.degree == 3
    assert Polynomial3.from_json(p.to_json()).terms == p.terms


def test_harmonic_check():
    HarmonicPolynomial.from_json([[[2, 0, 0], 1.0], [[0, 0, 2], -1.0]])
    with pytest.raises(ConfigurationError):
        HarmonicPolynomial.from_json([[[2, 0, 0], 1.0]])


def test_nemytskii_examples():
    H = lambda eps, t, z: eps + t[:, 0] * z**2
    v = np.full(INNER.size, 2.0)
    assert np.allclose(nemytskii_apply(H, 0.5, v, INNER), 0.5 + 4 * INNER.nodes[:, 0])
    dH = lambda eps, t, z: 2 * t[:, 0] * z
    w = INNER.nodes[:, 1]
    assert np.allclose(dv_nemytskii(dH, 0.5, v, w, INNER), 4 * INNER.nodes[:, 0] * w)


def test_nemytskii_errors():
    v = np.zeros(INNER.size)
    with pytest.raises(EvaluationError), np.errstate(divide="ignore"):
        nemytskii_apply(lambda e, t, z: 1.0 / z, 0.0, v, INNER)
    with pytest.raises(ValueError):
        nemytskii_apply(lambda e, t, z: z, 0.0, v[:-1], INNER)


def test_dv_matches_difference_quotient(rng):
    data = polynomial_family([(0, 1, one(1.0)), (1, 2, one(1.0)), (0, 3, Polynomial3.from_json([[[1, 0, 0], 1.0]]))], [], 0.0)
    v = rng.normal(size=INNER.size)
    w = rng.normal(size=INNER.size)
    h = 1e-6
    fd = (nemytskii_apply(data.F, 0.3, v + h * w, INNER) - nemytskii_apply(data.F, 0.3, v - h * w, INNER)) / (2 * h)
    assert np.abs(dv_nemytskii(data.F_zeta, 0.3, v, w, INNER) - fd).max() < 1e-7


def test_Ftilde_example():
    # F = zeta + eps zeta^2 gives F~ = 2 a b + eps b^2
    data = polynomial_family([(0, 1, one(1.0)), (1, 2, one(1.0))], [], 0.0)
    t = INNER.nodes
    a = np.linspace(-1, 1, INNER.size)
    b = np.cos(np.arange(INNER.size))
    for eps in (0.0, 0.1, 0.37):
        assert np.abs(taylor_remainder_F(data, eps, t, a, b) - (2 * a * b + eps * b * b)).max() < 1e-13


def test_utilde_example():
    bg = compute_background(OUTER, OUTER.nodes[:, 0] ** 2 - OUTER.nodes[:, 2] ** 2)
    t = INNER.nodes
    expected = t[:, 0] ** 2 - t[:, 2] ** 2
    for eps in (0.0, 1e-4, 0.1):
        assert np.abs(taylor_remainder_u(bg, eps, t) - expected).max() < 1e-8


def test_admissibility():
    bg = compute_background(OUTER, 0.3 + OUTER.nodes[:, 0])
    ok = check_admissibility(affine_family(0.0, 2.0, 0.0, 0.15), bg, INNER)
    assert ok.passed and ok.max_deviation < 1e-10
    wrong_value = check_admissibility(affine_family(0.0, 2.0, 0.0, 0.2), bg, INNER)
    assert not wrong_value.passed
    negative = check_admissibility(affine_family(0.6, -1.0, 0.0, 0.3), bg, INNER)
    assert not negative.passed and "positive" in " ".join(negative.failures)
    varying = polynomial_family([(0, 0, one(0.3)), (0, 1, Polynomial3.from_json([[[0, 0, 0], 1.0], [[1, 0, 0], 0.5]]))], [], 0.0)
    assert not check_admissibility(varying, bg, INNER).passed


def test_manufactured_exactness():
    spec = {
        "family": "manufactured",
        "p_outer": [[[2, 0, 0], 1.0], [[0, 0, 2], -1.0], [[0, 1, 0], 0.5], [[0, 0, 0], 0.3]],
        "p_inner": [[[0, 0, 0], 1.0], [[1, 0, 0], 1.0], [[1, 1, 0], 1.0]],
        "coupling": [0.0, 0.5, 1.0],
    }
    data, exact = family_from_dict(spec, SurfaceSpec.sphere())
    t = INNER.nodes
    for eps in (0.01, 0.1):
        x = eps * t
        zeta = exact.u_inner(x)
        # the Dirichlet and flux transmission conditions hold for the exact pair
        assert np.abs(exact.u_outer(x) - data.F(eps, t, zeta)).max() < 1e-12
        flux = np.einsum("nk,nk->n", t, exact.grad_outer(x) - exact.grad_inner(x))
        assert np.abs(flux - data.G(eps, t, zeta)).max() < 1e-12
    assert data.zeta_i == pytest.approx(1.0)


def test_family_errors():
    with pytest.raises(ConfigurationError):
        family_from_dict({"family": "quartic"})
    with pytest.raises(ConfigurationError):
        family_from_dict({"family": "polynomial"})
    with pytest.raises(ConfigurationError):
        family_from_dict({"family": "manufactured", "p_outer": [], "p_inner": [], "coupling": [1.0]}, SurfaceSpec.sphere())
