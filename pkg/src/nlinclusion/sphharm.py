"""Real spherical harmonics on the Gauss--Legendre x trapezoid product grid.

Conventions
-----------
Real orthonormal harmonics with the Condon--Shortley phase::

    Y_{l,0}  = P_l^0(cos t)
    Y_{l,m}  = sqrt(2) P_l^m(cos t) cos(m f)     (m > 0)
    Y_{l,-m} = sqrt(2) P_l^m(cos t) sin(m f)     (m > 0)

where ``P_l^m`` is the fully normalized associated Legendre function returned by
:func:`scipy.special.sph_legendre_p_all`.  Coefficient vectors are ordered by
``k = l*l + l + m``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from itertools import combinations_with_replacement

import numpy as np
from scipy.special import sph_legendre_p_all

__all__ = [
    "ProductGrid",
    "product_grid",
    "n_coefficients",
    "real_index",
    "legendre_table",
    "real_sh",
    "real_sh_derivatives",
    "complex_sums_to_real",
    "unit_vectors",
    "homogeneous_harmonic",
    "HomogeneousPolynomial",
    "combine_polynomials",
]


def n_coefficients(lmax: int) -> int:
    return (lmax + 1) ** 2


@lru_cache(maxsize=None)
def real_index(lmax: int) -> tuple[np.ndarray, np.ndarray]:
    """Degree and signed order of every real basis function, in storage order."""
    ls, ms = [], []
    for l in range(lmax + 1):
        for m in range(-l, l + 1):
            ls.append(l)
            ms.append(m)
    ls_a, ms_a = np.array(ls), np.array(ms)
    ls_a.setflags(write=False)
    ms_a.setflags(write=False)
    return ls_a, ms_a


@dataclass(frozen=True)
class ProductGrid:
    """Nodes and weights of the product rule on the unit sphere.

    ``theta`` holds the ``L`` Gauss--Legendre colatitudes (ascending), ``phi``
    the ``2L`` equispaced longitudes; node ``j = a*2L + b`` sits at
    ``(theta[a], phi[b])``.
    """

    order: int
    theta: np.ndarray
    phi: np.ndarray
    weights: np.ndarray
    points: np.ndarray
    node_theta: np.ndarray
    node_phi: np.ndarray


@lru_cache(maxsize=None)
def product_grid(order: int) -> ProductGrid:
    x, w = np.polynomial.legendre.leggauss(order)
    theta = np.arccos(x)[::-1].copy()
    wt = w[::-1].copy()
    nphi = 2 * order
    phi = 2.0 * np.pi * np.arange(nphi) / nphi
    T, P = np.meshgrid(theta, phi, indexing="ij")
    weights = np.outer(wt, np.full(nphi, 2.0 * np.pi / nphi)).ravel()
    points = unit_vectors(T.ravel(), P.ravel())
    grid = ProductGrid(order, theta, phi, weights, points, T.ravel(), P.ravel())
    for arr in (theta, phi, weights, points, grid.node_theta, grid.node_phi):
        arr.setflags(write=False)
    return grid


def unit_vectors(theta: np.ndarray, phi: np.ndarray) -> np.ndarray:
    st = np.sin(theta)
    return np.stack([st * np.cos(phi), st * np.sin(phi), np.cos(theta)], axis=-1)


def legendre_table(lmax: int, theta: np.ndarray, derivative: bool = False):
    """Normalized ``P_l^m(cos theta)`` for ``0 <= m <= l <= lmax``.

    Returns an array of shape ``(lmax+1, lmax+1, len(theta))`` indexed
    ``[l, m, point]``; with ``derivative=True`` also the theta-derivative.
    """
    theta = np.asarray(theta, dtype=float)
    if derivative:
        out = sph_legendre_p_all(lmax, lmax, theta, diff_n=1)
        return out[0][:, : lmax + 1], out[1][:, : lmax + 1]
    return sph_legendre_p_all(lmax, lmax, theta)[0][:, : lmax + 1]


def _angles(points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    p = np.asarray(points, dtype=float)
    r = np.linalg.norm(p, axis=-1)
    theta = np.arccos(np.clip(p[..., 2] / r, -1.0, 1.0))
    phi = np.arctan2(p[..., 1], p[..., 0])
    return theta, phi


def complex_sums_to_real(G: np.ndarray, lmax: int) -> np.ndarray:
    """Convert sums of ``P_l^m e^{i m f}`` (last two axes ``[l, m>=0]``) to real-basis values."""
    ls, ms = real_index(lmax)
    am = np.abs(ms)
    vals = G[..., ls, am]
    out = np.where(ms == 0, vals.real, np.where(ms > 0, np.sqrt(2.0) * vals.real, np.sqrt(2.0) * vals.imag))
    return np.ascontiguousarray(out)


def real_sh(lmax: int, theta: np.ndarray, phi: np.ndarray) -> np.ndarray:
    """Real harmonics at the given angles, shape ``(npoints, (lmax+1)**2)``."""
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    phi = np.atleast_1d(np.asarray(phi, dtype=float))
    P = legendre_table(lmax, theta)  # l, m, q
    E = np.exp(1j * np.outer(phi, np.arange(lmax + 1)))  # q, m
    G = P.transpose(2, 0, 1) * E[:, None, :]
    return complex_sums_to_real(G, lmax)


def real_sh_derivatives(lmax: int, theta: np.ndarray, phi: np.ndarray):
    """Values, theta-derivatives and ``(1/sin t) d/df`` of the real harmonics.

    Intended for points away from the poles (product-grid nodes never sit on them).
    """
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    phi = np.atleast_1d(np.asarray(phi, dtype=float))
    P, dP = legendre_table(lmax, theta, derivative=True)
    m = np.arange(lmax + 1)
    E = np.exp(1j * np.outer(phi, m))
    Pq = P.transpose(2, 0, 1)
    val = complex_sums_to_real(Pq * E[:, None, :], lmax)
    dth = complex_sums_to_real(dP.transpose(2, 0, 1) * E[:, None, :], lmax)
    sin_t = np.sin(theta)[:, None, None]
    dph = complex_sums_to_real(Pq * (1j * m)[None, None, :] * E[:, None, :] / sin_t, lmax)
    return val, dth, dph


class HomogeneousPolynomial:
    """A polynomial in three variables stored by exponent triples (homogeneous or not).

    Evaluation uses per-coordinate power tables, so the cost is a few gathers
    and products per monomial.
    """

    def __init__(self, degree: int, exponents: np.ndarray, coefficients: np.ndarray):
        self.degree = int(degree)
        self.exponents = np.asarray(exponents, dtype=int).reshape(-1, 3)
        self.coefficients = np.asarray(coefficients, dtype=float)
        self._dmax = int(self.exponents.max()) if self.exponents.size else 0

    def _powers(self, x: np.ndarray) -> np.ndarray:
        pw = np.empty(x.shape + (self._dmax + 1,))
        pw[..., 0] = 1.0
        for k in range(1, self._dmax + 1):
            pw[..., k] = pw[..., k - 1] * x
        return pw  # (..., 3, dmax+1)

    def value(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        pw = self._powers(x)
        e = self.exponents
        mono = pw[..., 0, e[:, 0]] * pw[..., 1, e[:, 1]] * pw[..., 2, e[:, 2]]
        return mono @ self.coefficients

    def gradient(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        pw = self._powers(x)
        e = self.exponents
        f = [pw[..., k, e[:, k]] for k in range(3)]
        out = np.empty(x.shape)
        for k in range(3):
            ek = e[:, k]
            dk = pw[..., k, np.maximum(ek - 1, 0)] * ek
            terms = dk * f[(k + 1) % 3] * f[(k + 2) % 3]
            out[..., k] = terms @ self.coefficients
        return out


def combine_polynomials(polys, weights) -> HomogeneousPolynomial:
    """Weighted sum of polynomials as a single exponent table."""
    acc: dict[tuple[int, int, int], float] = {}
    degree = 0
    for P, w in zip(polys, weights):
        degree = max(degree, P.degree)
        for e, c in zip(P.exponents, P.coefficients):
            key = tuple(int(v) for v in e)
            acc[key] = acc.get(key, 0.0) + w * c
    if not acc:
        return HomogeneousPolynomial(0, np.zeros((1, 3), int), np.zeros(1))
    keys = sorted(acc)
    return HomogeneousPolynomial(degree, np.array(keys), np.array([acc[k] for k in keys]))


@lru_cache(maxsize=None)
def _monomials(degree: int) -> np.ndarray:
    exps = []
    for combo in combinations_with_replacement(range(3), degree):
        e = [0, 0, 0]
        for c in combo:
            e[c] += 1
        exps.append(e)
    return np.array(exps, dtype=int).reshape(-1, 3)


@lru_cache(maxsize=None)
def homogeneous_harmonic(l: int, m: int) -> HomogeneousPolynomial:
    """Degree-``l`` homogeneous polynomial whose restriction to the unit sphere is ``Y_{l,m}``.

    Obtained by an exactly determined least-squares fit on a product grid; the
    fit is exact up to rounding because the restriction is unique.
    """
    if abs(m) > l:
        raise ValueError(f"invalid harmonic index ({l}, {m})")
    exps = _monomials(l)
    grid = product_grid(l + 2)
    lmax = l
    Y = real_sh(lmax, grid.node_theta, grid.node_phi)[:, l * l + l + m]
    A = np.prod(grid.points[:, None, :] ** exps[None], axis=-1)
    coef, *_ = np.linalg.lstsq(A, Y, rcond=None)
    return HomogeneousPolynomial(l, exps, coef)
