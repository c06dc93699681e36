"""Nonlinear transmission data ``(F, G)``, superposition operators and Taylor remainders.

Every evaluator has the signature ``H(eps, t, zeta) -> values`` where ``t`` is an
``(N, 3)`` array of points on the inner surface, ``zeta`` an ``(N,)`` array and
the result an ``(N,)`` array.  Evaluators must be pure; they are shared freely.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .errors import ConfigurationError, EvaluationError
from .geometry import SurfaceSpec

__all__ = [
    "Polynomial3",
    "HarmonicPolynomial",
    "TransmissionData",
    "ExactFields",
    "AdmissibilityReport",
    "affine_family",
    "polynomial_family",
    "make_manufactured",
    "family_from_dict",
    "nemytskii_apply",
    "dv_nemytskii",
    "taylor_remainder_F",
    "dFtilde_db",
    "taylor_remainder_u",
    "check_admissibility",
    "TAYLOR_THRESHOLD",
]

Evaluator = Callable[[float, np.ndarray, np.ndarray], np.ndarray]

TAYLOR_THRESHOLD = 1e-3
_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(8)
_TAU = 0.5 * (_GL_NODES + 1.0)
_TAU_W = 0.5 * _GL_WEIGHTS


# ---------------------------------------------------------------------------
# Polynomials in three variables
# ---------------------------------------------------------------------------
class Polynomial3:
    """``sum_k c_k x^a y^b z^c`` stored as a mapping from exponent triples to coefficients."""

    def __init__(self, terms: Mapping[tuple[int, int, int], float] | Sequence = ()):
        acc: dict[tuple[int, int, int], float] = {}
        items = terms.items() if isinstance(terms, Mapping) else terms
        for e, c in items:
            e = tuple(int(v) for v in e)
            if len(e) != 3 or min(e) < 0:
                raise ConfigurationError(f"invalid exponent triple {e}")
            acc[e] = acc.get(e, 0.0) + float(c)
        self.terms = {e: c for e, c in sorted(acc.items()) if c != 0.0}

    @classmethod
    def constant(cls, c: float) -> "Polynomial3":
        return cls({(0, 0, 0): c})

    @classmethod
    def from_json(cls, obj) -> "Polynomial3":
        """Accept a number (constant) or a list of ``[[a, b, c], coef]`` pairs."""
        if isinstance(obj, (int, float)):
            return cls.constant(float(obj))
        try:
            return cls([(e, c) for e, c in obj])
        except (TypeError, ValueError) as exc:
            raise ConfigurationError(f"malformed polynomial terms {obj!r}") from exc

    def to_json(self) -> list:
        return [[list(e), c] for e, c in self.terms.items()]

    @property
    def degree(self) -> int:
        return max((sum(e) for e in self.terms), default=0)

    def _derived(self, axis: int) -> "Polynomial3":
        out = {}
        for e, c in self.terms.items():
            if e[axis] > 0:
                d = list(e)
                d[axis] -= 1
                out[tuple(d)] = c * e[axis]
        return Polynomial3(out)

    def derivative(self, *axes: int) -> "Polynomial3":
        p = self
        for a in axes:
            p = p._derived(a)
        return p

    def value(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape[:-1])
        for (a, b, c), coef in self.terms.items():
            out = out + coef * x[..., 0] ** a * x[..., 1] ** b * x[..., 2] ** c
        return out

    def gradient(self, x: np.ndarray) -> np.ndarray:
        return np.stack([self.derivative(k).value(x) for k in range(3)], axis=-1)

    def hessian(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        H = np.empty(x.shape[:-1] + (3, 3))
        for i in range(3):
            for j in range(i, 3):
                H[..., i, j] = H[..., j, i] = self.derivative(i, j).value(x)
        return H

    def laplacian(self) -> "Polynomial3":
        acc: dict = {}
        for k in range(3):
            for e, c in self.derivative(k, k).terms.items():
                acc[e] = acc.get(e, 0.0) + c
        return Polynomial3(acc)

    def __call__(self, x):
        return self.value(x)

    def __repr__(self):
        return f"Polynomial3({self.terms})"


class HarmonicPolynomial(Polynomial3):
    """A :class:`Polynomial3` whose Laplacian vanishes identically (checked on construction)."""

    def __init__(self, terms=(), tol: float = 1e-12):
        super().__init__(terms)
        lap = self.laplacian().terms
        scale = max((abs(c) for c in self.terms.values()), default=1.0)
        if any(abs(c) > tol * max(scale, 1.0) for c in lap.values()):
            raise ConfigurationError(f"polynomial is not harmonic (Laplacian {lap})")

    @classmethod
    def from_json(cls, obj) -> "HarmonicPolynomial":
        return cls(Polynomial3.from_json(obj).terms)


# ---------------------------------------------------------------------------
# Transmission data
# ---------------------------------------------------------------------------
@dataclass(frozen=True, eq=False)
class TransmissionData:
    """The pair ``(F, G)`` with the derivative stack used by the Taylor expansion."""

    F: Evaluator
    G: Evaluator
    F_eps: Evaluator
    F_zeta: Evaluator
    F_epseps: Evaluator
    F_epszeta: Evaluator
    F_zetazeta: Evaluator
    G_zeta: Evaluator
    zeta_i: float
    name: str = "custom"
    params: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"family": self.name, **self.params}


@dataclass(frozen=True, eq=False)
class ExactFields:
    """Exact solution pair of a manufactured problem together with the outer Dirichlet datum."""

    p_outer: HarmonicPolynomial
    p_inner: HarmonicPolynomial

    def u_outer(self, x):
        return self.p_outer.value(x)

    def u_inner(self, x):
        return self.p_inner.value(x)

    def grad_outer(self, x):
        return self.p_outer.gradient(x)

    def grad_inner(self, x):
        return self.p_inner.gradient(x)

    def f_outer(self, x):
        return self.p_outer.value(x)


def _falling(n: int, k: int) -> int:
    return math.perm(n, k) if k <= n else 0


class _PolyTerms:
    """``sum c(t) eps^j s^k`` with ``s = zeta - center``; derivatives in ``(eps, zeta)`` are exact."""

    def __init__(self, terms: Sequence[tuple[int, int, Polynomial3]], center: float):
        self.terms = [(int(j), int(k), p) for j, k, p in terms]
        if any(j < 0 or k < 0 for j, k, _ in self.terms):
            raise ConfigurationError("polynomial powers must be non-negative")
        self.center = float(center)

    def evaluator(self, de: int, dz: int) -> Evaluator:
        def H(eps, t, zeta):
            t = np.asarray(t, dtype=float)
            s = np.asarray(zeta, dtype=float) - self.center
            out = np.zeros(np.broadcast_shapes(t.shape[:-1], s.shape))
            for j, k, p in self.terms:
                a, b = _falling(j, de), _falling(k, dz)
                if a == 0 or b == 0:
                    continue
                out = out + a * b * p.value(t) * float(eps) ** (j - de) * s ** (k - dz)
            return out

        return H


def _terms_from_json(items) -> list:
    out = []
    for it in items or []:
        if not isinstance(it, Mapping) or "coef" not in it:
            raise ConfigurationError(f"polynomial term needs 'eps', 'zeta' and 'coef': {it!r}")
        out.append((it.get("eps", 0), it.get("zeta", 0), Polynomial3.from_json(it["coef"])))
    return out


def _terms_to_json(terms) -> list:
    return [{"eps": j, "zeta": k, "coef": p.to_json()} for j, k, p in terms]


def polynomial_family(F_terms, G_terms, zeta_i: float, center: float = 0.0, name: str = "polynomial") -> TransmissionData:
    """Data polynomial in ``eps`` and ``zeta - center`` with polynomial coefficients in ``t``.

    ``F_terms``/``G_terms`` are sequences of ``(j, k, Polynomial3)`` meaning
    ``c(t) eps^j (zeta - center)^k``.
    """
    F = _PolyTerms(F_terms, center)
    G = _PolyTerms(G_terms, center)
    params = {
        "zeta_i": float(zeta_i),
        "center": float(center),
        "F": _terms_to_json(F.terms),
        "G": _terms_to_json(G.terms),
    }
    return TransmissionData(
        F=F.evaluator(0, 0),
        G=G.evaluator(0, 0),
        F_eps=F.evaluator(1, 0),
        F_zeta=F.evaluator(0, 1),
        F_epseps=F.evaluator(2, 0),
        F_epszeta=F.evaluator(1, 1),
        F_zetazeta=F.evaluator(0, 2),
        G_zeta=G.evaluator(0, 1),
        zeta_i=float(zeta_i),
        name=name,
        params=params,
    )


def affine_family(a: float, b: float, c: float, zeta_i: float) -> TransmissionData:
    """``F = a + b zeta`` and ``G = c``."""
    one = Polynomial3.constant
    data = polynomial_family([(0, 0, one(a)), (0, 1, one(b))], [(0, 0, one(c))], zeta_i, name="affine")
    return TransmissionData(
        **{k: getattr(data, k) for k in ("F", "G", "F_eps", "F_zeta", "F_epseps", "F_epszeta", "F_zetazeta", "G_zeta")},
        zeta_i=float(zeta_i),
        name="affine",
        params={"a": float(a), "b": float(b), "c": float(c), "zeta_i": float(zeta_i)},
    )


def make_manufactured(
    p_outer: HarmonicPolynomial,
    p_inner: HarmonicPolynomial,
    coupling: Sequence[float],
    inner: SurfaceSpec,
) -> tuple[TransmissionData, ExactFields]:
    """Data for which ``u^o = p_outer`` and ``u^i = p_inner`` solve the transmission problem.

    ``coupling`` lists ``c_0, c_1, ...`` of ``g(s) = sum c_k s^k``; ``c_0`` must vanish.
    The outer Dirichlet datum is ``p_outer`` restricted to the outer surface.
    """
    coeffs = [float(c) for c in coupling]
    if coeffs and coeffs[0] != 0.0:
        raise ConfigurationError(f"coupling must vanish at 0, got constant term {coeffs[0]}")
    g = np.polynomial.Polynomial(coeffs or [0.0])
    dg = g.deriv()
    po, pi = p_outer, p_inner

    def s_of(eps, t, zeta):
        return np.asarray(zeta, dtype=float) - pi.value(eps * np.asarray(t, dtype=float))

    def F(eps, t, zeta):
        t = np.asarray(t, dtype=float)
        return po.value(eps * t) + s_of(eps, t, zeta)

    def F_eps(eps, t, zeta):
        t = np.asarray(t, dtype=float)
        return np.einsum("...k,...k->...", t, po.gradient(eps * t) - pi.gradient(eps * t))

    def F_zeta(eps, t, zeta):
        return np.ones(np.broadcast_shapes(np.shape(t)[:-1], np.shape(zeta)))

    def zero(eps, t, zeta):
        return np.zeros(np.broadcast_shapes(np.shape(t)[:-1], np.shape(zeta)))

    def F_epseps(eps, t, zeta):
        t = np.asarray(t, dtype=float)
        H = po.hessian(eps * t) - pi.hessian(eps * t)
        return np.einsum("...i,...ij,...j->...", t, H, t)

    def G(eps, t, zeta):
        t = np.asarray(t, dtype=float)
        nu = inner.normal_at(t)
        flux = np.einsum("...k,...k->...", nu, po.gradient(eps * t) - pi.gradient(eps * t))
        return flux + g(s_of(eps, t, zeta))

    def G_zeta(eps, t, zeta):
        return dg(s_of(eps, t, zeta)) + 0.0 * np.asarray(zeta, dtype=float)

    params = {
        "p_outer": po.to_json(),
        "p_inner": pi.to_json(),
        "coupling": coeffs,
        "zeta_i": float(pi.value(np.zeros(3))),
    }
    data = TransmissionData(
        F=F,
        G=G,
        F_eps=F_eps,
        F_zeta=F_zeta,
        F_epseps=F_epseps,
        F_epszeta=zero,
        F_zetazeta=zero,
        G_zeta=G_zeta,
        zeta_i=float(pi.value(np.zeros(3))),
        name="manufactured",
        params=params,
    )
    return data, ExactFields(po, pi)


def family_from_dict(d: Mapping, inner: SurfaceSpec | None = None):
    """Build a builtin family from its JSON description.

    Returns ``(data, exact)`` where ``exact`` is :class:`ExactFields` for the
    manufactured family and ``None`` otherwise.
    """
    if not isinstance(d, Mapping) or "family" not in d:
        raise ConfigurationError("data description needs a 'family' key")
    kind = d["family"]
    try:
        if kind == "affine":
            return affine_family(d.get("a", 0.0), d.get("b", 1.0), d.get("c", 0.0), d["zeta_i"]), None
        if kind == "polynomial":
            return (
                polynomial_family(_terms_from_json(d.get("F")), _terms_from_json(d.get("G")), d["zeta_i"], d.get("center", 0.0)),
                None,
            )
        if kind == "manufactured":
            if inner is None:
                raise ConfigurationError("the manufactured family needs the inner surface")
            return make_manufactured(
                HarmonicPolynomial.from_json(d["p_outer"]),
                HarmonicPolynomial.from_json(d["p_inner"]),
                d.get("coupling", [0.0]),
                inner,
            )
    except KeyError as exc:
        raise ConfigurationError(f"data family {kind!r} is missing key {exc}") from exc
    raise ConfigurationError(f"unknown data family {kind!r}")


# ---------------------------------------------------------------------------
# Superposition operators
# ---------------------------------------------------------------------------
def _evaluate(H: Evaluator, eps: float, t: np.ndarray, v: np.ndarray) -> np.ndarray:
    try:
        out = np.asarray(H(eps, t, v), dtype=float)
    except Exception as exc:
        for i in range(len(v)):
            try:
                H(eps, t[i : i + 1], v[i : i + 1])
            except Exception as inner:
                raise EvaluationError(f"evaluator failed: {inner}", i) from inner
        raise EvaluationError(f"evaluator failed: {exc}") from exc
    out = np.broadcast_to(out, v.shape).copy()
    bad = ~np.isfinite(out)
    if np.any(bad):
        raise EvaluationError("evaluator returned a non-finite value", int(np.argmax(bad)))
    return out


def _nodes_and_values(rule, v):
    t = rule.nodes if hasattr(rule, "nodes") else np.asarray(rule, dtype=float)
    v = np.asarray(v, dtype=float)
    if v.shape != (len(t),):
        raise ValueError(f"density must have {len(t)} nodal values, got shape {v.shape}")
    return t, v


def nemytskii_apply(H: Evaluator, epsilon: float, v, rule) -> np.ndarray:
    """``t -> H(eps, t, v(t))`` at the nodes of ``rule`` (a quadrature or an ``(N, 3)`` point array)."""
    t, v = _nodes_and_values(rule, v)
    return _evaluate(H, float(epsilon), t, v)


def dv_nemytskii(H_zeta: Evaluator, epsilon: float, vbar, vtilde, rule) -> np.ndarray:
    """Directional derivative ``H_zeta(eps, t, vbar(t)) * vtilde(t)`` of the superposition operator."""
    t, vbar = _nodes_and_values(rule, vbar)
    vtilde = np.asarray(vtilde, dtype=float)
    if vtilde.shape != vbar.shape:
        raise ValueError("direction must match the base point")
    return _evaluate(H_zeta, float(epsilon), t, vbar) * vtilde


# ---------------------------------------------------------------------------
# Taylor remainders
# ---------------------------------------------------------------------------
def _tau_integral(fn, eps, t, a, b, weight_one_minus_tau: bool):
    acc = 0.0
    for tau, w in zip(_TAU, _TAU_W):
        f = fn(tau * eps, t, a + tau * eps * b)
        acc = acc + (w * (1.0 - tau) if weight_one_minus_tau else w) * f
    return acc


def taylor_remainder_F(data: TransmissionData, epsilon: float, t, a, b) -> np.ndarray:
    """``F~(eps, t, a, b)``, the second-order remainder of ``F(eps, t, a + eps b)``.

    Computed as the integral over ``tau`` in ``[0, 1]`` of
    ``(1 - tau) (F_ee + 2 b F_ez + b^2 F_zz)(tau eps, t, a + tau eps b)``
    with the 8-point Gauss--Legendre rule, so that
    ``F(eps, t, a + eps b) = F(0, t, a) + eps F_e(0, t, a) + eps b F_z(0, t, a) + eps^2 F~``.
    """
    t = np.asarray(t, dtype=float)
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    eps = float(epsilon)

    def integrand(e, tt, z):
        return data.F_epseps(e, tt, z) + 2.0 * b * data.F_epszeta(e, tt, z) + b * b * data.F_zetazeta(e, tt, z)

    return np.asarray(_tau_integral(integrand, eps, t, a, b, True), dtype=float)


def dFtilde_db(data: TransmissionData, epsilon: float, t, a, b) -> np.ndarray:
    """Partial derivative of ``F~`` in ``b``: the integral of ``(F_ez + b F_zz)(tau eps, t, a + tau eps b)``."""
    t = np.asarray(t, dtype=float)
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    eps = float(epsilon)

    def integrand(e, tt, z):
        return data.F_epszeta(e, tt, z) + b * data.F_zetazeta(e, tt, z)

    return np.asarray(_tau_integral(integrand, eps, t, a, b, False), dtype=float)


def taylor_remainder_u(background, epsilon: float, t, threshold: float = TAYLOR_THRESHOLD) -> np.ndarray:
    """``u~(eps, t)`` with ``u(eps t) = u(0) + eps t . grad u(0) + eps^2 u~(eps, t)``.

    ``background`` provides ``value``, ``hessian``, ``value_at_origin``,
    ``gradient_at_origin`` and ``check_points`` (see ``system.BackgroundField``).
    For ``|eps| >= threshold`` the difference quotient is used, below it the
    Hessian integral with the 8-point rule in ``tau``.
    """
    t = np.atleast_2d(np.asarray(t, dtype=float))
    eps = float(epsilon)
    background.check_points(eps * t)
    if abs(eps) >= threshold:
        u = background.value(eps * t)
        return (u - background.value_at_origin - eps * t @ background.gradient_at_origin) / eps**2
    if eps == 0.0:
        H0 = background.hessian(np.zeros((1, 3)))[0]
        return 0.5 * np.einsum("ni,ij,nj->n", t, H0, t)
    pts = (_TAU[:, None, None] * eps * t[None]).reshape(-1, 3)
    H = background.hessian(pts).reshape(len(_TAU), len(t), 3, 3)
    quad = np.einsum("ni,snij,nj->sn", t, H, t)
    return ((_TAU_W * (1.0 - _TAU))[:, None] * quad).sum(axis=0)


# ---------------------------------------------------------------------------
# Admissibility
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class AdmissibilityReport:
    """Measured quantities behind the admissibility test."""

    passed: bool
    max_deviation: float
    slope_min: float
    slope_max: float
    slope_variation: float
    failures: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "max_deviation": self.max_deviation,
            "slope_min": self.slope_min,
            "slope_max": self.slope_max,
            "slope_variation": self.slope_variation,
            "failures": list(self.failures),
        }


def check_admissibility(data: TransmissionData, background, rule_inner, tol: float = 1e-10, margin: float = 1e-8) -> AdmissibilityReport:
    """Check that ``F(0, t, zeta_i)`` equals ``u(0)`` and ``F_zeta(0, t, zeta_i)`` is a positive constant."""
    t = rule_inner.nodes if hasattr(rule_inner, "nodes") else np.asarray(rule_inner, dtype=float)
    zi = np.full(len(t), data.zeta_i)
    failures = []
    try:
        F0 = _evaluate(data.F, 0.0, t, zi)
        slope = _evaluate(data.F_zeta, 0.0, t, zi)
    except EvaluationError as exc:
        return AdmissibilityReport(False, np.inf, np.nan, np.nan, np.inf, (str(exc),))
    dev = float(np.abs(F0 - background.value_at_origin).max())
    smin, smax = float(slope.min()), float(slope.max())
    var = (smax - smin) / max(abs(smax), abs(smin), np.finfo(float).tiny)
    if dev >= tol:
        failures.append(f"F(0, t, zeta_i) differs from the background value at the origin by {dev:.3e}")
    if var >= tol:
        failures.append(f"F_zeta(0, t, zeta_i) is not constant (relative variation {var:.3e})")
    if smin <= margin:
        failures.append(f"F_zeta(0, t, zeta_i) is not positive (minimum {smin:.3e})")
    return AdmissibilityReport(not failures, dev, smin, smax, float(var), tuple(failures))
