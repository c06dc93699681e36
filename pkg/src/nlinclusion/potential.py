"""Fundamental solution, double layer potentials and their boundary operators.

Weakly singular and near-singular surface integrals are computed with a
rotated polar quadrature: for every target node the parametrizing sphere is
rotated so that the target sits at the north pole, and a Gauss--Legendre (in
the polar angle) x trapezoid (in the azimuth) rule is laid around it.  The
``sin`` Jacobian of polar coordinates cancels the ``1/r`` behaviour of the
subtracted kernel, so the quadrature is spectrally accurate.  Densities are
evaluated at the rotated points through their harmonic expansion; the rotation
about the polar axis only multiplies the coefficient of order ``m`` by a phase,
so one Legendre table per latitude ring serves all of its nodes.

All kernels use the sign convention ``w[mu](x) = -int nu(y) . grad S(x - y) mu(y)``,
for which ``w[1] = 1`` inside, ``0`` outside and ``W[1] = 1/2``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterator

import numpy as np
from scipy.special import gamma

from ._linalg import factorize
from .errors import AccuracyError, AssemblyError, ConfigurationError, DomainError
from .geometry import SurfaceQuadrature, build_quadrature
from .sphharm import complex_sums_to_real, legendre_table, real_index, real_sh

__all__ = [
    "sphere_measure",
    "fundamental_solution",
    "grad_fundamental_solution",
    "hessian_fundamental_solution",
    "BoundaryOperatorMatrix",
    "NormalDerivative",
    "double_layer_offsurface",
    "double_layer_gradient_offsurface",
    "double_layer_hessian_offsurface",
    "assemble_W",
    "assemble_normal_derivative",
    "normal_derivative_double_layer",
    "near_surface_double_layer",
    "one_sided_limits",
    "solve_interior_dirichlet",
    "extrapolation_weights",
    "dump_matrix_csv",
]

DEFAULT_OFFSET = 0.01
DEFAULT_EXTRAPOLATION_ORDER = 6


# ---------------------------------------------------------------------------
# Fundamental solution
# ---------------------------------------------------------------------------
def sphere_measure(n: int) -> float:
    """``(n-1)``-dimensional measure of the unit sphere in ``R^n``."""
    return float(2.0 * np.pi ** (n / 2.0) / gamma(n / 2.0))


def _check_points(x: np.ndarray, n: int) -> tuple[np.ndarray, np.ndarray]:
    if n < 3:
        raise ConfigurationError("dimension n must be at least 3")
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != n:
        raise ConfigurationError(f"points must have {n} components, got shape {x.shape}")
    r = np.linalg.norm(x, axis=-1)
    if np.any(r == 0):
        raise DomainError("the fundamental solution is singular at x = 0")
    return x, r


def fundamental_solution(x: np.ndarray, n: int = 3):
    """``S_n(x) = |x|^{2-n} / ((2-n) s_n)``."""
    x, r = _check_points(x, n)
    out = r ** (2.0 - n) / ((2.0 - n) * sphere_measure(n))
    return float(out) if np.ndim(out) == 0 else out


def grad_fundamental_solution(x: np.ndarray, n: int = 3) -> np.ndarray:
    """``grad S_n(x) = x |x|^{-n} / s_n``."""
    x, r = _check_points(x, n)
    return x / (sphere_measure(n) * r[..., None] ** n)


def hessian_fundamental_solution(x: np.ndarray, n: int = 3) -> np.ndarray:
    """``D^2 S_n(x) = (|x|^2 I - n x x^T) / (s_n |x|^{n+2})``."""
    x, r = _check_points(x, n)
    outer = x[..., :, None] * x[..., None, :]
    eye = np.eye(n)
    r2 = (r**2)[..., None, None]
    return (r2 * eye - n * outer) / (sphere_measure(n) * r[..., None, None] ** (n + 2))


# ---------------------------------------------------------------------------
# Operator containers
# ---------------------------------------------------------------------------
_FLAVORS = ("W", "half-plus-W", "half-minus-W", "normal-derivative-D")


@dataclass(frozen=True, eq=False)
class BoundaryOperatorMatrix:
    """Dense nodal matrix of a boundary operator on one surface."""

    matrix: np.ndarray
    flavor: str
    rule: SurfaceQuadrature

    def __post_init__(self):
        if self.flavor not in _FLAVORS:
            raise ValueError(f"unknown operator flavor {self.flavor!r}")
        n = self.rule.size
        if self.matrix.shape != (n, n):
            raise AssemblyError(f"operator shape {self.matrix.shape} does not match {n} nodes")

    def __matmul__(self, mu):
        return self.matrix @ mu

    def half_plus(self) -> "BoundaryOperatorMatrix":
        self._require("W")
        return BoundaryOperatorMatrix(0.5 * np.eye(self.rule.size) + self.matrix, "half-plus-W", self.rule)

    def half_minus(self) -> "BoundaryOperatorMatrix":
        self._require("W")
        return BoundaryOperatorMatrix(-0.5 * np.eye(self.rule.size) + self.matrix, "half-minus-W", self.rule)

    def _require(self, flavor):
        if self.flavor != flavor:
            raise ValueError(f"operation requires flavor {flavor!r}, have {self.flavor!r}")


def dump_matrix_csv(op: BoundaryOperatorMatrix, path) -> None:
    """Write the matrix as CSV (one row per target node, full float precision)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"# flavor={op.flavor}", f"order={op.rule.order}", f"nodes={op.rule.size}"])
        for row in op.matrix:
            w.writerow([repr(float(v)) for v in row])


# ---------------------------------------------------------------------------
# Polar quadrature machinery
# ---------------------------------------------------------------------------
def _polar_points(tp: np.ndarray, wt: np.ndarray, nphi: int):
    ph = 2.0 * np.pi * (np.arange(nphi) + 0.5) / nphi
    T, P = np.meshgrid(tp, ph, indexing="ij")
    st = np.sin(T)
    g = np.stack([st * np.cos(P), st * np.sin(P), np.cos(T)], axis=-1).reshape(-1, 3)
    w = (wt[:, None] * np.full(nphi, 2.0 * np.pi / nphi)).ravel()
    return g, w


@lru_cache(maxsize=None)
def polar_grid(nt: int, nphi: int):
    """Gauss--Legendre in the polar angle on ``[0, pi]`` x midpoint trapezoid in azimuth."""
    x, w = np.polynomial.legendre.leggauss(nt)
    tp = (x + 1.0) * np.pi / 2.0
    return _polar_points(tp, w * np.pi / 2.0 * np.sin(tp), nphi)


@lru_cache(maxsize=None)
def graded_polar_grid(h: float, nphi: int, panel_points: int = 12):
    """Polar rule with panels ``[0, h/2], [h/2, h], [h, 2h], ...`` refined toward the pole.

    Used for targets at distance ``~h`` from the surface, where the kernel has
    an angular scale ``~h`` around the foot point.
    """
    breaks = [0.0]
    s = h / 2.0
    while s < 0.6 * np.pi:
        breaks.append(s)
        s *= 2.0
    breaks.append(np.pi)
    x, w = np.polynomial.legendre.leggauss(panel_points)
    tp, wt = [], []
    for a0, a1 in zip(breaks[:-1], breaks[1:]):
        tp.append(a0 + (x + 1.0) * (a1 - a0) / 2.0)
        wt.append(w * (a1 - a0) / 2.0)
    tp = np.concatenate(tp)
    wt = np.concatenate(wt) * np.sin(tp)
    return _polar_points(tp, wt, nphi)


@dataclass
class _Ring:
    targets: slice
    phases: np.ndarray  # (T, M) with M = (lmax+1)**2 over (l, m>=0)
    basis: np.ndarray  # (Q, M) complex: P_l^m e^{i m f} at the base points
    basis_re: np.ndarray  # contiguous real and imaginary parts, for BLAS
    basis_im: np.ndarray
    y: np.ndarray  # (T, Q, 3)
    ny: np.ndarray
    wj: np.ndarray  # (T, Q) polar weight times area factor


def _rings(rule: SurfaceQuadrature, g: np.ndarray, wg: np.ndarray) -> Iterator[_Ring]:
    lmax = rule.lmax
    m = np.tile(np.arange(lmax + 1), lmax + 1)
    phases = np.exp(1j * np.outer(rule.phi, m))
    cf, sf = np.cos(rule.phi), np.sin(rule.phi)
    for a, sl in rule.ring_slices():
        c, s = np.cos(rule.theta[a]), np.sin(rule.theta[a])
        q0 = np.stack([c * g[:, 0] + s * g[:, 2], g[:, 1], -s * g[:, 0] + c * g[:, 2]], axis=-1)
        t0 = np.arccos(np.clip(q0[:, 2], -1.0, 1.0))
        f0 = np.arctan2(q0[:, 1], q0[:, 0])
        P = legendre_table(lmax, t0)  # l, m, q
        E = (P * np.exp(1j * np.arange(lmax + 1)[None, :, None] * f0[None, None, :])).reshape(-1, len(g)).T
        q = np.empty((len(rule.phi), len(g), 3))
        q[..., 0] = cf[:, None] * q0[None, :, 0] - sf[:, None] * q0[None, :, 1]
        q[..., 1] = sf[:, None] * q0[None, :, 0] + cf[:, None] * q0[None, :, 1]
        q[..., 2] = q0[None, :, 2]
        y, ny, Jy = rule.spec.geometry(q)
        yield _Ring(
            sl, phases, E, np.ascontiguousarray(E.real), np.ascontiguousarray(E.imag), y, ny, Jy * wg[None, :]
        )


def _assemble_rows(rule: SurfaceQuadrature, g, wg, kernel, n_out: int):
    """Rows ``C`` (``n_out x N x K``) and row sums of a subtracted polar Nystrom operator.

    ``kernel(x, nu, y, ny, wj)`` returns weights of shape ``(n_out, T, Q)`` for
    the ``T`` targets of one ring.  The operator is then
    ``mu -> C @ (analysis @ mu) - rowsum * mu``.
    """
    lmax, N = rule.lmax, rule.size
    C = np.empty((n_out, N, rule.n_coeffs))
    rows = np.empty((n_out, N))
    for ring in _rings(rule, g, wg):
        x, nu = rule.nodes[ring.targets], rule.normals[ring.targets]
        K = kernel(x, nu, ring.y, ring.ny, ring.wj)
        T = K.shape[1]
        for o in range(n_out):
            G = (K[o] @ ring.basis_re + 1j * (K[o] @ ring.basis_im)) * ring.phases
            C[o, ring.targets] = complex_sums_to_real(G.reshape(T, lmax + 1, lmax + 1), lmax)
            rows[o, ring.targets] = K[o].sum(axis=1)
    return C, rows


def _real_to_complex(c: np.ndarray, lmax: int) -> np.ndarray:
    """Complex coefficients ``h_{lm}`` (``m >= 0``) with ``mu = Re sum h P e^{i m f}``."""
    ls, ms = real_index(lmax)
    h = np.zeros((lmax + 1, lmax + 1), dtype=complex)
    for k, (l, m) in enumerate(zip(ls, ms)):
        if m == 0:
            h[l, 0] += c[k]
        elif m > 0:
            h[l, m] += np.sqrt(2.0) * c[k]
        else:
            h[l, -m] += -1j * np.sqrt(2.0) * c[k]
    return h.ravel()


def _dl_kernel(x, nu, y, ny, wj):
    d = x[:, None, :] - y
    r = np.linalg.norm(d, axis=-1)
    return (-(np.einsum("tqk,tqk->tq", ny, d)) / (4.0 * np.pi * r**3) * wj)[None]


# ---------------------------------------------------------------------------
# Boundary operators
# ---------------------------------------------------------------------------
def _check_nodes(rule: SurfaceQuadrature):
    d, _ = rule.tree.query(rule.nodes, k=2)
    if np.any(d[:, 1] <= 1e-14 * max(1.0, float(np.abs(rule.nodes).max()))):
        raise AssemblyError("duplicate quadrature nodes")


def _require_n3(n: int):
    if n != 3:
        raise ConfigurationError("quadrature-based operators are implemented for n = 3 only")


def assemble_W(rule: SurfaceQuadrature, polar_order: int | None = None, n: int = 3) -> BoundaryOperatorMatrix:
    """Nystrom matrix of ``W`` with the exact subtraction constant ``W[1] = 1/2``.

    Row ``i`` realizes ``W[mu](t_i) = mu_i / 2 + sum_q k_iq (mu(q) - mu_i)`` where the
    sum is the rotated polar rule of ``polar_order`` points per polar direction
    (default: the rule order).
    """
    _require_n3(n)
    _check_nodes(rule)
    nt = polar_order or rule.order
    g, wg = polar_grid(nt, 2 * nt)
    C, rows = _assemble_rows(rule, g, wg, _dl_kernel, 1)
    M = C[0] @ rule.analysis
    M[np.diag_indices_from(M)] += 0.5 - rows[0]
    return BoundaryOperatorMatrix(M, "W", rule)


def extrapolation_weights(order: int) -> np.ndarray:
    """Weights ``c_k`` with ``f(0) ~ sum_k c_k f(k h)``, ``k = 1..order`` (Lagrange)."""
    ks = np.arange(1, order + 1)
    return np.array([np.prod([j / (j - k) for j in ks if j != k]) for k in ks])


def _check_offset(rule: SurfaceQuadrature, h: float, order: int):
    scale = float(np.mean(np.linalg.norm(rule.nodes, axis=1)))
    if order < 1:
        raise ValueError("extrapolation order must be >= 1")
    if h < 1e-4 * scale:
        raise AccuracyError(
            f"offset h = {h:g} is below the resolvable floor {1e-4 * scale:g}; "
            "extrapolation would amplify rounding errors"
        )
    if order * h > 0.2 * scale:
        raise AccuracyError(f"largest offset {order * h:g} leaves the near-surface regime (scale {scale:g})")
    return scale


def _offsets(h: float, order: int) -> np.ndarray:
    k = np.arange(1, order + 1)
    return np.concatenate([-k * h, k * h])  # interior first, then exterior


def _normal_grad_kernel(offs: np.ndarray, lw: np.ndarray):
    p = len(lw)

    def kernel(x, nu, y, ny, wj):
        out = np.zeros((2, x.shape[0], y.shape[1]))
        nn = np.einsum("tqk,tk->tq", ny, nu)
        for j, s in enumerate(offs):
            d = (x + s * nu)[:, None, :] - y
            r2 = np.einsum("tqk,tqk->tq", d, d)
            r = np.sqrt(r2)
            dv = np.einsum("tqk,tk->tq", d, nu)
            dn = np.einsum("tqk,tqk->tq", d, ny)
            k = -(nn / (r2 * r) - 3.0 * dv * dn / (r2 * r2 * r)) / (4.0 * np.pi) * wj
            out[0 if j < p else 1] += lw[j % p] * k
        return out

    return kernel


def _spectral_normal_derivative(rule: SurfaceQuadrature) -> np.ndarray:
    ls, _ = real_index(rule.lmax)
    lam = ls * (ls + 1) / (2.0 * ls + 1.0) / rule.spec.radius
    return (rule.synthesis * lam[None, :]) @ rule.analysis


@dataclass(frozen=True, eq=False)
class NormalDerivative:
    """Boundary values of ``nu . grad w[mu]`` with the one-sided diagnostic."""

    values: np.ndarray
    inside: np.ndarray
    outside: np.ndarray
    mismatch: float
    mode: str


def assemble_normal_derivative(
    rule: SurfaceQuadrature,
    mode: str = "auto",
    h: float = DEFAULT_OFFSET,
    order: int = DEFAULT_EXTRAPOLATION_ORDER,
    side: str = "inside",
    panel_points: int = 12,
):
    """Matrix of ``mu -> nu . grad w[mu]`` on the surface.

    ``mode="spectral"`` uses the sphere eigenvalues ``l(l+1)/((2l+1) R)``;
    ``mode="offset"`` evaluates the gradient at ``t -+ k h nu`` for ``k = 1..order``
    and extrapolates to ``t``.  ``mode="auto"`` picks spectral on spheres.
    Returns ``(operator, other_side_matrix)``; for spectral mode both coincide.
    The offset matrices have zero row sums, so constants map to zero exactly.
    """
    if mode == "auto":
        mode = "spectral" if rule.is_sphere else "offset"
    if mode == "spectral":
        if not rule.is_sphere:
            raise ConfigurationError("spectral normal derivative requires a sphere")
        M = _spectral_normal_derivative(rule)
        op = BoundaryOperatorMatrix(M, "normal-derivative-D", rule)
        return op, op
    if mode != "offset":
        raise ConfigurationError(f"unknown normal-derivative mode {mode!r}")
    if side not in ("inside", "outside"):
        raise ValueError("side must be 'inside' or 'outside'")
    _check_offset(rule, h, order)
    g, wg = graded_polar_grid(float(h), 2 * rule.order, panel_points)
    kernel = _normal_grad_kernel(_offsets(h, order), extrapolation_weights(order))
    C, rows = _assemble_rows(rule, g, wg, kernel, 2)
    mats = []
    for o in range(2):
        M = C[o] @ rule.analysis
        M[np.diag_indices_from(M)] -= rows[o]
        mats.append(BoundaryOperatorMatrix(M, "normal-derivative-D", rule))
    inside, outside = mats
    return (inside, outside) if side == "inside" else (outside, inside)


def normal_derivative_double_layer(
    rule: SurfaceQuadrature,
    mu: np.ndarray,
    mode: str = "auto",
    h: float = DEFAULT_OFFSET,
    order: int = DEFAULT_EXTRAPOLATION_ORDER,
) -> NormalDerivative:
    """``nu . grad w[mu]`` at the nodes, with interior/exterior values and their mismatch."""
    mu = _density(rule, mu)
    if mode == "auto":
        mode = "spectral" if rule.is_sphere else "offset"
    if mode == "spectral":
        if not rule.is_sphere:
            raise ConfigurationError("spectral normal derivative requires a sphere")
        v = _spectral_normal_derivative(rule) @ mu
        return NormalDerivative(v, v, v, 0.0, "spectral")
    _check_offset(rule, h, order)
    _, grads = near_surface_double_layer(rule, mu, _offsets(h, order), gradient=True, values=False)
    ng = np.einsum("nsk,nk->ns", grads, rule.normals)
    lw = extrapolation_weights(order)
    inside = ng[:, :order] @ lw
    outside = ng[:, order:] @ lw
    return NormalDerivative(inside, inside, outside, float(np.abs(inside - outside).max()), "offset")


def near_surface_double_layer(
    rule: SurfaceQuadrature,
    mu: np.ndarray,
    offsets,
    values: bool = True,
    gradient: bool = False,
    panel_points: int = 12,
):
    """``w[mu]`` and/or its gradient at ``t_i + s nu_i`` for every node and offset ``s``.

    Negative offsets are interior points.  Uses the density-subtracted polar
    rule graded to the smallest offset.  Returns ``(values (N, S), gradients (N, S, 3))``
    with ``None`` for quantities not requested.
    """
    mu = _density(rule, mu)
    offs = np.atleast_1d(np.asarray(offsets, dtype=float))
    if np.any(offs == 0):
        raise AccuracyError("offset 0 is on the surface; use the boundary operators instead")
    hmin = float(np.abs(offs).min())
    g, wg = graded_polar_grid(hmin, 2 * rule.order, panel_points)
    hc = _real_to_complex(rule.to_coefficients(mu), rule.lmax)
    N, S = rule.size, len(offs)
    vals = np.zeros((N, S)) if values else None
    grads = np.zeros((N, S, 3)) if gradient else None
    for ring in _rings(rule, g, wg):
        idx = np.arange(N)[ring.targets]
        ph = ring.phases * hc[None, :]
        MU = ph.real @ ring.basis_re.T - ph.imag @ ring.basis_im.T  # (T, Q)
        x, nu = rule.nodes[idx], rule.normals[idx]
        dmu = (MU - mu[idx, None]) * ring.wj
        for j, s in enumerate(offs):
            d = (x + s * nu)[:, None, :] - ring.y
            r2 = np.einsum("tqk,tqk->tq", d, d)
            r = np.sqrt(r2)
            dn = np.einsum("tqk,tqk->tq", d, ring.ny)
            if values:
                vals[idx, j] = -(dn / (r2 * r) * dmu).sum(axis=1) / (4.0 * np.pi) + (mu[idx] if s < 0 else 0.0)
            if gradient:
                a = dmu / (r2 * r)
                b = 3.0 * dn * dmu / (r2 * r2 * r)
                grads[idx, j] = -(
                    np.einsum("tq,tqk->tk", a, ring.ny) - np.einsum("tq,tqk->tk", b, d)
                ) / (4.0 * np.pi)
    return vals, grads


def one_sided_limits(
    rule: SurfaceQuadrature,
    mu: np.ndarray,
    h: float = DEFAULT_OFFSET,
    order: int = DEFAULT_EXTRAPOLATION_ORDER,
    gradient: bool = False,
):
    """Interior and exterior limits of ``w[mu]`` (and of its gradient) by offset extrapolation.

    Returns ``(w_plus, w_minus)`` or, with ``gradient=True``,
    ``(w_plus, w_minus, grad_plus, grad_minus)``.
    """
    _check_offset(rule, h, order)
    vals, grads = near_surface_double_layer(rule, mu, _offsets(h, order), values=True, gradient=gradient)
    lw = extrapolation_weights(order)
    wp, wm = vals[:, :order] @ lw, vals[:, order:] @ lw
    if not gradient:
        return wp, wm
    gp = np.einsum("nsk,s->nk", grads[:, :order], lw)
    gm = np.einsum("nsk,s->nk", grads[:, order:], lw)
    return wp, wm, gp, gm


# ---------------------------------------------------------------------------
# Off-surface evaluation by plain quadrature
# ---------------------------------------------------------------------------
def _density(rule: SurfaceQuadrature, mu) -> np.ndarray:
    mu = np.asarray(mu, dtype=float)
    if mu.shape != (rule.size,):
        raise ValueError(f"density must have {rule.size} nodal values, got shape {mu.shape}")
    return mu


@lru_cache(maxsize=32)
def _refined(rule: SurfaceQuadrature, factor: int):
    fine = build_quadrature(rule.spec, rule.order * factor)
    interp = real_sh(rule.lmax, fine.node_theta, fine.node_phi) @ rule.analysis
    return fine, interp


def _quadrature_for(rule, mu, upsample):
    if upsample == 1:
        return rule, mu
    fine, interp = _refined(rule, int(upsample))
    return fine, interp @ mu


def _check_margin(rule: SurfaceQuadrature, x: np.ndarray, check: bool):
    if not check:
        return
    d, i = rule.distance_to_surface(x)
    bad = d <= 2.0 * rule.spacing[i]
    if np.any(bad):
        k = int(np.argmax(bad))
        raise AccuracyError(
            f"point {x[k].tolist()} is within two node spacings of the surface "
            f"(distance {d[k]:.3e}); use the jump relations / near-surface evaluator"
        )


def _offsurface(rule, mu, x, deriv, upsample, check, chunk=256):
    mu = _density(rule, mu)
    x = np.atleast_2d(np.asarray(x, dtype=float))
    q, m = _quadrature_for(rule, mu, upsample)
    _check_margin(q, x, check)
    y, ny, wm = q.nodes, q.normals, q.weights * m
    shape = {0: (), 1: (3,), 2: (3, 3)}[deriv]
    out = np.empty((len(x),) + shape)
    for s in range(0, len(x), chunk):
        d = x[s : s + chunk, None, :] - y[None]
        r2 = np.einsum("pqk,pqk->pq", d, d)
        r = np.sqrt(r2)
        dn = np.einsum("pqk,qk->pq", d, ny)
        if deriv == 0:
            out[s : s + chunk] = -(dn / (r2 * r)) @ wm / (4.0 * np.pi)
        elif deriv == 1:
            a = wm[None] / (r2 * r)
            b = 3.0 * dn * wm[None] / (r2 * r2 * r)
            out[s : s + chunk] = -(a @ ny - np.einsum("pq,pqk->pk", b, d)) / (4.0 * np.pi)
        else:
            r5 = r2 * r2 * r
            c1 = wm[None] / r5
            c2 = dn * wm[None] / r5
            c3 = 5.0 * dn * wm[None] / (r5 * r2)
            t1 = np.einsum("pq,pqi,qj->pij", c1, d, ny)
            H = -3.0 * (t1 + np.swapaxes(t1, 1, 2) + c2.sum(1)[:, None, None] * np.eye(3))
            H += 3.0 * np.einsum("pq,pqi,pqj->pij", c3, d, d)
            out[s : s + chunk] = -H / (4.0 * np.pi)
    return out


def double_layer_offsurface(rule, mu, x, upsample: int = 1, check: bool = True):
    """``w[mu](x) = -sum_j w_j nu_j . grad S(x - y_j) mu_j`` at points away from the surface.

    ``upsample > 1`` first interpolates the density to a finer product grid.
    Points within two local node spacings raise :class:`AccuracyError`.
    """
    out = _offsurface(rule, mu, x, 0, upsample, check)
    return float(out[0]) if np.ndim(x) == 1 else out


def double_layer_gradient_offsurface(rule, mu, x, upsample: int = 1, check: bool = True):
    out = _offsurface(rule, mu, x, 1, upsample, check)
    return out[0] if np.ndim(x) == 1 else out


def double_layer_hessian_offsurface(rule, mu, x, upsample: int = 1, check: bool = True):
    """Hessian of ``w[mu]`` from the third derivatives of ``S_3``."""
    out = _offsurface(rule, mu, x, 2, upsample, check)
    return out[0] if np.ndim(x) == 1 else out


# ---------------------------------------------------------------------------
# Interior Dirichlet problem
# ---------------------------------------------------------------------------
def solve_interior_dirichlet(rule: SurfaceQuadrature, f, W: BoundaryOperatorMatrix | None = None) -> np.ndarray:
    """Density ``mu`` with ``(I/2 + W) mu = f``; the harmonic extension is ``w[mu]`` inside."""
    f = _density(rule, f)
    W = W if W is not None else assemble_W(rule)
    fac = factorize(W.half_plus().matrix, "I/2 + W")
    return fac.solve(f)
