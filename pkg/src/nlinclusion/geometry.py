"""Star-shaped surfaces, their quadrature rules, and the admissible epsilon window.

A surface is the radial graph ``x(p) = r(p) p`` over the unit sphere, where
``r = radius + sum_k c_k Y_k`` is a finite real spherical-harmonic expansion.
Each harmonic is carried as a homogeneous harmonic polynomial, which gives the
surface gradient of ``r`` without any coordinate singularity at the poles.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .errors import GeometryError
from .sphharm import (
    combine_polynomials,
    homogeneous_harmonic,
    n_coefficients,
    product_grid,
    real_sh,
    real_sh_derivatives,
    unit_vectors,
)

__all__ = [
    "SurfaceSpec",
    "SurfaceQuadrature",
    "EpsilonWindow",
    "build_quadrature",
    "check_inclusion",
    "epsilon0",
    "make_window",
    "default_epsilon_grid",
]

_KINDS = ("unit-sphere", "scaled-sphere", "star-shaped")
_DENSE_ORDER = 64


@dataclass(frozen=True)
class SurfaceSpec:
    """Closed star-shaped surface about the origin.

    Parameters
    ----------
    kind
        ``"unit-sphere"``, ``"scaled-sphere"`` or ``"star-shaped"``.
    radius
        Sphere radius, or the constant part of the radial function.
    coefficients
        ``(l, m, c)`` triples for the star-shaped kind: ``r = radius + sum c Y_{l,m}``.
    """

    kind: str = "unit-sphere"
    radius: float = 1.0
    coefficients: tuple[tuple[int, int, float], ...] = ()

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise GeometryError(f"unknown surface kind {self.kind!r}; expected one of {_KINDS}")
        if self.kind == "unit-sphere" and self.radius != 1.0:
            raise GeometryError("unit-sphere must have radius 1")
        if not np.isfinite(self.radius) or self.radius <= 0:
            raise GeometryError(f"radius must be positive, got {self.radius}")
        coeffs = tuple((int(l), int(m), float(c)) for l, m, c in self.coefficients)
        if coeffs and self.kind != "star-shaped":
            raise GeometryError("harmonic coefficients are only allowed for star-shaped surfaces")
        for l, m, _ in coeffs:
            if l < 0 or abs(m) > l:
                raise GeometryError(f"invalid harmonic index ({l}, {m})")
        object.__setattr__(self, "coefficients", coeffs)
        rmin = float(self.radial(product_grid(_DENSE_ORDER).points).min())
        if rmin <= 0:
            raise GeometryError(f"radial function is not positive (minimum {rmin:.3e})")

    # -- construction helpers -------------------------------------------------
    @classmethod
    def sphere(cls, radius: float = 1.0) -> "SurfaceSpec":
        return cls("unit-sphere") if radius == 1.0 else cls("scaled-sphere", radius)

    @classmethod
    def from_dict(cls, d: dict) -> "SurfaceSpec":
        kind = d.get("kind", "unit-sphere")
        radius = float(d.get("radius", 1.0))
        coeffs = tuple(tuple(c) for c in d.get("coefficients", ()))
        for c in coeffs:
            if len(c) != 3:
                raise GeometryError(f"coefficient entries must be [l, m, value], got {list(c)}")
        return cls(kind, radius, coeffs)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "radius": self.radius, "coefficients": [list(c) for c in self.coefficients]}

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @property
    def is_sphere(self) -> bool:
        return all(c == 0.0 for _, _, c in self.coefficients)

    # -- radial function --------------------------------------------------------
    @cached_property
    def _polynomials(self):
        # r = radius + R(p) on |p| = 1 and grad_S r = grad R - E p, E = sum l H_l
        hs = [(homogeneous_harmonic(l, m), c) for l, m, c in self.coefficients if c != 0.0]
        R = combine_polynomials([h for h, _ in hs], [c for _, c in hs])
        E = combine_polynomials([h for h, _ in hs], [c * h.degree for h, c in hs])
        return R, E

    def radial(self, p: np.ndarray) -> np.ndarray:
        """Radial function at unit vectors ``p``."""
        p = np.asarray(p, dtype=float)
        if not self.coefficients:
            return np.full(p.shape[:-1], self.radius)
        return self.radius + self._polynomials[0].value(p)

    def radial_gradient(self, p: np.ndarray) -> np.ndarray:
        """Surface gradient on the unit sphere of the radial function."""
        p = np.asarray(p, dtype=float)
        if not self.coefficients:
            return np.zeros(p.shape)
        R, E = self._polynomials
        return R.gradient(p) - E.value(p)[..., None] * p

    def geometry(self, p: np.ndarray):
        """Surface points, unit outward normals and area factors above unit vectors ``p``.

        The area factor ``J`` satisfies ``d sigma = J d Omega``.
        """
        p = np.asarray(p, dtype=float)
        r = self.radial(p)
        x = r[..., None] * p
        if not self.coefficients:
            return x, p.copy(), r * r
        n = r[..., None] * p - self.radial_gradient(p)
        nn = np.linalg.norm(n, axis=-1)
        return x, n / nn[..., None], r * nn

    def normal_at(self, x: np.ndarray) -> np.ndarray:
        """Outward unit normal at surface points ``x`` (looked up by direction)."""
        x = np.asarray(x, dtype=float)
        p = x / np.linalg.norm(x, axis=-1, keepdims=True)
        return self.geometry(p)[1]

    def contains(self, x: np.ndarray, scale: float = 1.0) -> np.ndarray:
        """Strict interior test for the surface scaled by ``scale``."""
        x = np.asarray(x, dtype=float)
        rx = np.linalg.norm(x, axis=-1)
        out = np.ones(rx.shape, dtype=bool)
        nz = rx > 0
        p = x[nz] / rx[nz, None]
        out[nz] = rx[nz] < scale * self.radial(p)
        return out


@dataclass(frozen=True, eq=False)
class SurfaceQuadrature:
    """Product-grid quadrature of one surface.

    ``nodes``, ``weights`` and ``normals`` are the Nystrom data; ``params`` are
    the unit vectors the nodes sit above and ``param_weights`` the weights of
    the product rule on the unit sphere, so ``weights = param_weights * jacobian``.
    Band-limited densities (harmonic degree ``<= order - 1``) are handled via
    :attr:`synthesis` and :attr:`analysis`.
    """

    spec: SurfaceSpec
    order: int
    nodes: np.ndarray
    weights: np.ndarray
    normals: np.ndarray
    params: np.ndarray
    param_weights: np.ndarray
    jacobian: np.ndarray
    theta: np.ndarray = field(repr=False)
    phi: np.ndarray = field(repr=False)

    @property
    def size(self) -> int:
        return len(self.weights)

    @property
    def lmax(self) -> int:
        return self.order - 1

    @property
    def n_coeffs(self) -> int:
        return n_coefficients(self.lmax)

    @property
    def area(self) -> float:
        return float(self.weights.sum())

    @property
    def is_sphere(self) -> bool:
        return self.spec.is_sphere

    @cached_property
    def node_theta(self) -> np.ndarray:
        return np.repeat(self.theta, len(self.phi))

    @cached_property
    def node_phi(self) -> np.ndarray:
        return np.tile(self.phi, len(self.theta))

    @cached_property
    def synthesis(self) -> np.ndarray:
        """Real harmonics at the nodes, ``(N, K)``: coefficients to nodal values."""
        B = real_sh(self.lmax, self.node_theta, self.node_phi)
        B.setflags(write=False)
        return B

    @cached_property
    def analysis(self) -> np.ndarray:
        """Discrete projection ``(K, N)``: nodal values to harmonic coefficients."""
        A = np.ascontiguousarray(self.synthesis.T * self.param_weights[None, :])
        A.setflags(write=False)
        return A

    def to_coefficients(self, values: np.ndarray) -> np.ndarray:
        return self.analysis @ np.asarray(values, dtype=float)

    def from_coefficients(self, coeffs: np.ndarray) -> np.ndarray:
        return self.synthesis @ np.asarray(coeffs, dtype=float)

    def band_limit(self, values: np.ndarray) -> np.ndarray:
        """Project nodal values onto harmonics of degree ``<= order - 1``."""
        return self.from_coefficients(self.to_coefficients(values))

    @cached_property
    def _gradient_operators(self):
        _, dth, dph = real_sh_derivatives(self.lmax, self.node_theta, self.node_phi)
        p = self.params
        t, f = self.node_theta, self.node_phi
        e_t = np.stack([np.cos(t) * np.cos(f), np.cos(t) * np.sin(f), -np.sin(t)], axis=-1)
        e_f = np.stack([-np.sin(f), np.cos(f), np.zeros_like(f)], axis=-1)
        r = self.spec.radial(p)
        gr = self.spec.radial_gradient(p)
        a = (gr * e_t).sum(-1)[:, None] * p + r[:, None] * e_t
        b = (gr * e_f).sum(-1)[:, None] * p + r[:, None] * e_f
        return dth, dph, a, b

    def tangential_gradient(self, values: np.ndarray) -> np.ndarray:
        """Surface gradient ``(N, 3)`` of the band-limited interpolant of ``values``."""
        dth, dph, a, b = self._gradient_operators
        c = self.to_coefficients(values)
        ft, fp = dth @ c, dph @ c
        g11 = (a * a).sum(-1)
        g12 = (a * b).sum(-1)
        g22 = (b * b).sum(-1)
        det = g11 * g22 - g12 * g12
        alpha = (g22 * ft - g12 * fp) / det
        beta = (g11 * fp - g12 * ft) / det
        return alpha[:, None] * a + beta[:, None] * b

    @cached_property
    def spacing(self) -> np.ndarray:
        """Local node spacing: largest distance to the four grid neighbours.

        Neighbours are the adjacent nodes on the same ring and on the adjacent
        rings (across the pole for the first and last ring), so the gap between
        rings is seen even where the rings themselves are tiny.
        """
        nt, nf = len(self.theta), len(self.phi)
        X = self.nodes.reshape(nt, nf, 3)
        across = np.roll(X, nf // 2, axis=1)
        up = np.concatenate([across[:1], X[:-1]], axis=0)
        down = np.concatenate([X[1:], across[-1:]], axis=0)
        gaps = [np.linalg.norm(X - Y, axis=-1) for Y in (np.roll(X, 1, axis=1), np.roll(X, -1, axis=1), up, down)]
        return np.max(gaps, axis=0).reshape(-1)

    @cached_property
    def tree(self) -> cKDTree:
        return cKDTree(self.nodes)

    def distance_to_surface(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Approximate distance of points to the surface (nearest node) and that node's index."""
        d, i = self.tree.query(np.atleast_2d(x))
        return d, i

    def ring_slices(self) -> Iterable[tuple[int, slice]]:
        n = len(self.phi)
        for a in range(len(self.theta)):
            yield a, slice(a * n, (a + 1) * n)


def build_quadrature(spec: SurfaceSpec, order: int) -> SurfaceQuadrature:
    """Product Gauss--Legendre x trapezoid rule of the given order mapped onto ``spec``."""
    if int(order) != order or order < 4:
        raise ValueError(f"quadrature order must be an integer >= 4, got {order}")
    order = int(order)
    grid = product_grid(order)
    x, nu, J = spec.geometry(grid.points)
    if np.any(J <= 0):
        raise GeometryError("degenerate area element")
    arrays = dict(
        nodes=x,
        weights=grid.weights * J,
        normals=nu,
        params=np.array(grid.points),
        param_weights=np.array(grid.weights),
        jacobian=J,
        theta=np.array(grid.theta),
        phi=np.array(grid.phi),
    )
    for a in arrays.values():
        a.setflags(write=False)
    return SurfaceQuadrature(spec=spec, order=order, **arrays)


def _dense_directions() -> np.ndarray:
    return product_grid(_DENSE_ORDER).points


def epsilon0(outer: SurfaceSpec, inner: SurfaceSpec) -> float:
    """Largest scaling ``e`` with ``e * closure(inner)`` inside ``outer`` (sampled)."""
    p = _dense_directions()
    return float((outer.radial(p) / inner.radial(p)).min())


def check_inclusion(outer: SurfaceSpec, inner: SurfaceSpec, epsilon: float) -> bool:
    """True iff every sampled point of ``epsilon * inner`` lies strictly inside ``outer``."""
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    p = _dense_directions()
    return bool(np.all(epsilon * inner.radial(p) < outer.radial(p)))


def default_epsilon_grid(n: int = 12, lo: float = 1e-3, hi: float = 0.2) -> tuple[float, ...]:
    return tuple(float(e) for e in np.geomspace(lo, hi, n))


@dataclass(frozen=True)
class EpsilonWindow:
    """Admissible scalings: ``epsilon0`` and a sorted grid inside ``(0, epsilon0)``."""

    epsilon0: float
    grid: tuple[float, ...]

    def __post_init__(self):
        g = tuple(float(e) for e in self.grid)
        if any(e <= 0 or e >= self.epsilon0 for e in g):
            raise GeometryError(f"epsilon grid must lie in (0, {self.epsilon0:g})")
        if list(g) != sorted(g):
            raise GeometryError("epsilon grid must be sorted")
        object.__setattr__(self, "grid", g)


def make_window(outer: SurfaceSpec, inner: SurfaceSpec, grid: Sequence[float] | None = None) -> EpsilonWindow:
    """Validate ``grid`` (default geometric 1e-3..0.2) against the inclusion condition."""
    e0 = epsilon0(outer, inner)
    g = tuple(sorted(default_epsilon_grid() if grid is None else grid))
    for e in g:
        if not check_inclusion(outer, inner, e):
            raise GeometryError(f"epsilon = {e:g} violates the inclusion condition (epsilon0 = {e0:g})")
    return EpsilonWindow(e0, g)

