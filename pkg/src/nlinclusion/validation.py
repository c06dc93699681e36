"""Oracle checks run by ``nlinclusion validate`` and by the acceptance tests.

Every check returns a :class:`Check` with the measured value, its tolerance and
the verdict.  Checks never raise on a failed comparison; numerical errors
raised by the library are recorded as failures with their message.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import HarmonicPolynomial, Polynomial3, polynomial_family, taylor_remainder_F, taylor_remainder_u
from .errors import InclusionError
from .geometry import SurfaceSpec, build_quadrature
from .holder import HolderConfig, check_composition_inequality, check_product_inequality
from .potential import (
    assemble_W,
    assemble_normal_derivative,
    double_layer_offsurface,
    one_sided_limits,
)
from .sphharm import real_index
from .system import compute_background

__all__ = [
    "Check",
    "ValidationReport",
    "check_gauss",
    "check_sphere_eigenvalues",
    "check_jump_relation",
    "check_hypersingular",
    "check_background",
    "check_taylor_F",
    "check_utilde_paths",
    "check_appendix_battery",
    "run_validation",
    "nonlinear_polynomial_family",
    "TEST_HARMONICS",
]

# Harmonic polynomials of degree <= 4 used by the background oracle.
TEST_HARMONICS = (
    [[[0, 0, 0], 0.3], [[0, 1, 0], 0.5]],
    [[[2, 0, 0], 1.0], [[0, 0, 2], -1.0]],
    [[[1, 1, 1], 1.0], [[1, 0, 0], -0.2]],
    [[[3, 0, 0], 1.0], [[1, 2, 0], -3.0]],
    [[[4, 0, 0], 1.0], [[2, 2, 0], -6.0], [[0, 4, 0], 1.0], [[0, 0, 1], 0.7]],
)


@dataclass(frozen=True)
class Check:
    name: str
    value: float
    tolerance: float
    passed: bool
    detail: str = ""

    def to_dict(self) -> dict:
        return {"name": self.name, "value": self.value, "tolerance": self.tolerance, "passed": self.passed, "detail": self.detail}


@dataclass
class ValidationReport:
    checks: list[Check] = field(default_factory=list)

    @property
    def failures(self) -> list[Check]:
        return [c for c in self.checks if not c.passed]

    @property
    def passed(self) -> bool:
        return not self.failures

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "checks": [c.to_dict() for c in self.checks],
            "failures": [c.name for c in self.failures],
        }


def _check(name: str, value: float, tol: float, detail: str = "") -> Check:
    value = float(value)
    return Check(name, value, tol, bool(np.isfinite(value) and value < tol), detail)


def _guarded(name: str, tol: float, fn) -> Check:
    try:
        return fn()
    except (InclusionError, np.linalg.LinAlgError, ValueError) as exc:
        return Check(name, float("inf"), tol, False, f"{type(exc).__name__}: {exc}")


def _random_bandlimited(rule, rng: np.random.Generator, degree: int) -> np.ndarray:
    n = (degree + 1) ** 2
    return rule.synthesis[:, :n] @ rng.standard_normal(n)


def check_gauss(spec: SurfaceSpec, order: int, tol: float = 1e-9) -> Check:
    """``W[1] = 1/2`` at every node, and ``w[1]`` equal to 1 inside and 0 outside."""
    name = f"gauss[{spec.kind}]"

    def run():
        rule = build_quadrature(spec, order)
        W = assemble_W(rule)
        dev = float(np.abs(W.matrix.sum(axis=1) - 0.5).max())
        r = float(spec.radial(rule.params).min())
        x_in = np.array([[0.0, 0.0, 0.0], [0.2 * r, -0.1 * r, 0.1 * r]])
        x_out = np.array([[3.0 * r + 2.0, 0.0, 0.0], [0.0, -4.0 * r - 2.0, 1.0]])
        ones = np.ones(rule.size)
        inside = np.abs(double_layer_offsurface(rule, ones, x_in, upsample=2) - 1.0).max()
        outside = np.abs(double_layer_offsurface(rule, ones, x_out, upsample=2)).max()
        return _check(name, max(dev, inside, outside), tol, f"boundary {dev:.2e}, inside {inside:.2e}, outside {outside:.2e}")

    return _guarded(name, tol, run)


def check_sphere_eigenvalues(order: int, tol: float = 1e-6, lmax: int = 3) -> Check:
    """``W[Y_l] = Y_l / (2 (2l + 1))`` on the unit sphere for ``1 <= l <= lmax``."""
    name = f"sphere-eigenvalues[order={order}]"

    def run():
        rule = build_quadrature(SurfaceSpec.sphere(1.0), order)
        W = assemble_W(rule)
        ls, _ = real_index(rule.lmax)
        worst = 0.0
        for k in np.flatnonzero((ls >= 1) & (ls <= lmax)):
            y = rule.synthesis[:, k]
            lam = 1.0 / (2.0 * (2 * ls[k] + 1))
            worst = max(worst, float(np.abs(W.matrix @ y - lam * y).max()))
        return _check(name, worst, tol)

    return _guarded(name, tol, run)


def check_jump_relation(spec: SurfaceSpec, order: int, seed: int = 0, tol: float = 1e-5, h: float = 0.01, p: int = 6) -> Check:
    """``w^+ - w^- = mu`` for a random smooth density from extrapolated one-sided limits."""
    name = f"jump-relation[{spec.kind}]"

    def run():
        rule = build_quadrature(spec, order)
        mu = _random_bandlimited(rule, np.random.default_rng(seed), min(4, rule.lmax))
        wp, wm = one_sided_limits(rule, mu, h, p)
        return _check(name, np.abs(wp - wm - mu).max(), tol)

    return _guarded(name, tol, run)


def check_hypersingular(order: int, tol: float = 1e-4, lmax: int = 3, h: float = 0.01, p: int = 6) -> Check:
    """Offset-mode normal derivative against ``l (l + 1) / (2l + 1)`` on the unit sphere."""
    name = f"hypersingular[order={order}]"

    def run():
        rule = build_quadrature(SurfaceSpec.sphere(1.0), order)
        D, _ = assemble_normal_derivative(rule, "offset", h, p)
        ls, _ = real_index(rule.lmax)
        worst = 0.0
        for k in np.flatnonzero((ls >= 1) & (ls <= lmax)):
            y = rule.synthesis[:, k]
            lam = ls[k] * (ls[k] + 1) / (2.0 * ls[k] + 1)
            worst = max(worst, float(np.abs(D.matrix @ y - lam * y).max()))
        return _check(name, worst, tol)

    return _guarded(name, tol, run)


def check_background(spec: SurfaceSpec, order: int, tol_values: float = 1e-7, tol_origin: float = 1e-6) -> list[Check]:
    """Harmonic polynomials reproduced by the interior Dirichlet solver, with derivatives at the origin."""
    rule = build_quadrature(spec, order)
    r = float(spec.radial(rule.params).min())
    rng = np.random.default_rng(1)
    d = rng.standard_normal((20, 3))
    x = d / np.linalg.norm(d, axis=1, keepdims=True) * (0.6 * r * rng.random((20, 1)))
    worst_v = worst_o = 0.0
    for terms in TEST_HARMONICS:
        p = HarmonicPolynomial.from_json(terms)
        bg = compute_background(rule, p.value(rule.nodes))
        worst_v = max(worst_v, float(np.abs(bg.value(x) - p.value(x)).max()))
        o = np.zeros((1, 3))
        worst_o = max(
            worst_o,
            float(np.abs(bg.gradient_at_origin - p.gradient(o)[0]).max()),
            float(np.abs(bg.hessian_at_origin - p.hessian(o)[0]).max()),
        )
    return [
        _check(f"background-values[{spec.kind}]", worst_v, tol_values),
        _check(f"background-origin-derivatives[{spec.kind}]", worst_o, tol_origin),
    ]


def nonlinear_polynomial_family():
    """A nonlinear polynomial family with every Taylor coefficient non-zero."""
    c = Polynomial3.constant
    x = lambda i, a: Polynomial3({tuple(int(k == i) for k in range(3)): a})  # noqa: E731
    F = [(0, 0, c(0.3)), (0, 1, c(1.0)), (1, 2, x(0, 1.0)), (1, 0, x(1, 0.5)), (2, 1, c(0.4)), (0, 3, c(0.2))]
    G = [(0, 2, c(1.0)), (0, 0, x(2, 0.2))]
    return polynomial_family(F, G, zeta_i=0.3, center=0.3)


def check_taylor_F(data=None, order: int = 8, seed: int = 0, tol: float = 1e-12) -> Check:
    """``F(eps, t, a + eps b) = F(0, t, a) + eps F_e + eps b F_z + eps^2 F~`` on random arguments."""
    data = nonlinear_polynomial_family() if data is None else data
    rule = build_quadrature(SurfaceSpec.sphere(1.0), order)
    t = rule.nodes
    rng = np.random.default_rng(seed)
    worst = 0.0
    for eps in (1e-3, 0.05, 0.2):
        a = data.zeta_i + 0.5 * rng.standard_normal(len(t))
        b = rng.standard_normal(len(t))
        lhs = data.F(eps, t, a + eps * b)
        rhs = data.F(0.0, t, a) + eps * data.F_eps(0.0, t, a) + eps * b * data.F_zeta(0.0, t, a)
        rhs = rhs + eps**2 * taylor_remainder_F(data, eps, t, a, b)
        worst = max(worst, float(np.abs(lhs - rhs).max()))
    return _check("taylor-identity-F", worst, tol)


def check_utilde_paths(background, rule_inner, epsilon: float = 1e-3, tol: float = 1e-8) -> Check:
    """Direct difference quotient and Hessian integral for ``u~`` agree at ``epsilon``."""
    t = rule_inner.nodes
    direct = taylor_remainder_u(background, epsilon, t, threshold=epsilon)
    integral = taylor_remainder_u(background, epsilon, t, threshold=2.0 * epsilon)
    return _check(f"utilde-dual-path[eps={epsilon:g}]", np.abs(direct - integral).max(), tol)


def check_appendix_battery(order: int = 10, draws: int = 100, seed: int = 0, alpha: float = 0.5, degree: int = 3) -> list[Check]:
    """Product and composition inequalities on seeded random band-limited pairs.

    ``u(t, s) = a(t) + b(t) s + c(t) s^2`` with band-limited ``a, b, c`` and
    ``v`` rescaled into ``[-1, 1]``.  The reported value is the largest
    ``lhs / bound`` over the battery; the inequality holds when it is at most 1.
    """
    rule = build_quadrature(SurfaceSpec.sphere(1.0), order)
    cfg = HolderConfig(alpha=alpha, seed=seed)
    rng = np.random.default_rng(seed)
    prod0 = prod1 = comp0 = comp1 = 0.0
    for _ in range(draws):
        u = _random_bandlimited(rule, rng, degree)
        v = _random_bandlimited(rule, rng, degree)
        for order_name in ("c0alpha", "c1alpha"):
            rep = check_product_inequality(u, v, rule, cfg, order_name)
            ratio = rep.lhs / rep.bound if rep.bound > 0 else 0.0
            if order_name == "c0alpha":
                prod0 = max(prod0, ratio)
            else:
                prod1 = max(prod1, ratio)
        A, B, C = (_random_bandlimited(rule, rng, 2) for _ in range(3))
        vv = _random_bandlimited(rule, rng, degree)
        vv = 0.9 * vv / np.abs(vv).max()

        def comp(tt, s, A=A, B=B, C=C):
            return A + B * s + C * s * s

        crep = check_composition_inequality(comp, vv, rule, cfg, R=1.0)
        comp0 = max(comp0, crep.ratio_c0 / crep.bound_c0)
        comp1 = max(comp1, crep.ratio_c1 / crep.bound_c1)
    limit = 1.0 + 1e-12
    return [
        _check("product-inequality-c0alpha", prod0, limit, f"max lhs/bound over {draws} draws"),
        _check("product-inequality-c1alpha", prod1, limit, f"max lhs/bound over {draws} draws"),
        _check("composition-bound-c0alpha", comp0, limit, f"max ratio over {draws} draws"),
        _check("composition-bound-c1alpha", comp1, limit, f"max ratio over {draws} draws"),
    ]


def run_validation(cfg, problem=None, draws: int = 30) -> ValidationReport:
    """All oracle checks for a run configuration.

    The eigenvalue and hypersingular checks use the configured quadrature
    order, so an under-resolved configuration fails them.  ``problem`` (if
    given) supplies the background field for the dual-path remainder check.
    """
    rep = ValidationReport()
    surfaces = [cfg.outer] if cfg.outer == cfg.inner else [cfg.outer, cfg.inner]
    for spec in surfaces:
        rep.checks.append(check_gauss(spec, cfg.order))
        rep.checks.append(check_jump_relation(spec, cfg.order, cfg.seed))
    rep.checks.append(check_sphere_eigenvalues(cfg.order))
    rep.checks.append(check_hypersingular(cfg.order))
    rep.checks.extend(check_background(cfg.outer, cfg.order))
    rep.checks.append(check_taylor_F())
    if problem is not None:
        rep.checks.append(check_utilde_paths(problem.background, problem.rule_inner))
    rep.checks.extend(check_appendix_battery(order=min(cfg.order, 10), draws=draws, seed=cfg.seed, alpha=cfg.alpha))
    return rep
