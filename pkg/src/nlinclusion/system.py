"""The coupled boundary-integral system for the perforated-domain transmission problem.

Unknowns are the nodal densities ``(phi_o, phi_i, zeta, psi_i)``.  The
representation is

    U^o(x) = u(x) + eps w_o[phi_o](x) + eps w_i[phi_i](x / eps) + eps^(n-1) zeta S(x)
    U^i(x) = eps w_i[psi_i](x / eps) + zeta_i

where ``u`` is the background field (harmonic in the outer domain with the outer
Dirichlet datum) and ``w_o``, ``w_i`` are double layers on the unit-size outer
and inner surfaces.  Three residual rows encode the outer Dirichlet condition
and the two interface conditions; ``M = N state - S`` splits them into the
linear part ``N`` and the data part ``S`` which depends on ``psi_i`` only.

Linear solves are Galerkin projections onto the band-limited harmonic spaces
of both surfaces: the unknowns are harmonic coefficient vectors, the residual
rows are projected with the discrete analysis operator and the zero-mean
constraint of ``phi_i`` is a bordered row.  Residual magnitudes used by the
solvers are the weighted l2 norms of these projected rows.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.linalg as sla

from ._linalg import Factorization, factorize
from .data import (
    TransmissionData,
    dFtilde_db,
    nemytskii_apply,
    taylor_remainder_F,
    taylor_remainder_u,
)
from .errors import ConvergenceError, DomainError, SolverError
from .geometry import SurfaceQuadrature, check_inclusion
from .potential import (
    BoundaryOperatorMatrix,
    assemble_normal_derivative,
    assemble_W,
    double_layer_gradient_offsurface,
    double_layer_hessian_offsurface,
    double_layer_offsurface,
    fundamental_solution,
    grad_fundamental_solution,
    one_sided_limits,
    solve_interior_dirichlet,
    _refined,
)

__all__ = [
    "DIMENSION",
    "UnknownState",
    "BackgroundField",
    "OperatorCache",
    "ResidualTriple",
    "SolveReport",
    "LinearSystem",
    "ReconstructedFields",
    "PDEResidualReport",
    "compute_background",
    "build_cache",
    "apply_J",
    "solve_J",
    "assemble_Lambda",
    "eval_M",
    "assemble_N",
    "eval_S",
    "jacobian_M",
    "solve_limit",
    "picard_step",
    "newton_solve",
    "reconstruct_fields",
    "residual_check_pde",
    "state_from_fields",
    "ExactFieldTraces",
    "mean_value_balls",
    "projected",
    "picard_solve",
    "apply_N",
    "solve_Lambda",
    "lambda_matrix",
    "n_matrix",
]

DIMENSION = 3
_FOUR_PI = 4.0 * np.pi


_MAX_UPSAMPLE = 8


def _upsample_for(rule: SurfaceQuadrature, x: np.ndarray, requested: int = 1, margin: float = 4.0) -> int:
    """Smallest refinement factor putting every point beyond ``margin`` node spacings of the refined rule.

    Falls back to the smallest factor meeting the two-spacing validity limit
    when no factor up to the cap reaches ``margin``.
    """
    fallback = None
    for f in range(max(int(requested), 1), _MAX_UPSAMPLE + 1):
        q = rule if f == 1 else _refined(rule, f)[0]
        dq, iq = q.distance_to_surface(x)
        ratio = float((dq / q.spacing[iq]).min())
        if ratio > margin:
            return f
        if fallback is None and ratio > 2.0:
            fallback = f
    return fallback or _MAX_UPSAMPLE


def _dl(rule: SurfaceQuadrature, mu, x, deriv: int = 0, upsample: int = 1):
    x = np.atleast_2d(np.asarray(x, dtype=float))
    f = _upsample_for(rule, x, upsample)
    fn = (double_layer_offsurface, double_layer_gradient_offsurface, double_layer_hessian_offsurface)[deriv]
    return fn(rule, mu, x, f)


# ---------------------------------------------------------------------------
# State
# ---------------------------------------------------------------------------
@dataclass(frozen=True, eq=False)
class UnknownState:
    """Nodal densities ``phi_o`` (outer), ``phi_i`` (inner, zero mean), ``psi_i`` (inner) and ``zeta``."""

    phi_o: np.ndarray
    phi_i: np.ndarray
    zeta: float
    psi_i: np.ndarray

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.phi_o, self.phi_i, [self.zeta], self.psi_i])

    @classmethod
    def from_vector(cls, z: np.ndarray, n_outer: int, n_inner: int) -> "UnknownState":
        z = np.asarray(z, dtype=float)
        if z.shape != (n_outer + 2 * n_inner + 1,):
            raise ValueError(f"state vector has shape {z.shape}")
        a, b = n_outer, n_outer + n_inner
        return cls(z[:a].copy(), z[a:b].copy(), float(z[b]), z[b + 1 :].copy())

    @classmethod
    def zeros(cls, n_outer: int, n_inner: int) -> "UnknownState":
        return cls(np.zeros(n_outer), np.zeros(n_inner), 0.0, np.zeros(n_inner))

    def replace(self, **kw) -> "UnknownState":
        d = {"phi_o": self.phi_o, "phi_i": self.phi_i, "zeta": self.zeta, "psi_i": self.psi_i}
        d.update(kw)
        return UnknownState(**d)

    def distance(self, other: "UnknownState", cache: "OperatorCache") -> float:
        """Weighted l2 distance over all components."""
        return cache.state_norm(self.to_vector() - other.to_vector())

    def to_dict(self) -> dict:
        return {
            "phi_o": self.phi_o.tolist(),
            "phi_i": self.phi_i.tolist(),
            "zeta": self.zeta,
            "psi_i": self.psi_i.tolist(),
        }


# ---------------------------------------------------------------------------
# Background field
# ---------------------------------------------------------------------------
class BackgroundField:
    """Harmonic extension ``u = w_o[mu]`` of the outer Dirichlet datum.

    Values, gradients and Hessians at interior points come from plain
    quadrature of the kernel and its derivatives.  Results at the scaled inner
    nodes ``eps t`` are memoized per ``eps``.
    """

    def __init__(self, rule: SurfaceQuadrature, f_o: np.ndarray, mu: np.ndarray, upsample: int = 1):
        self.rule = rule
        self.f_o = np.asarray(f_o, dtype=float)
        self.mu = np.asarray(mu, dtype=float)
        self.upsample = int(upsample)
        origin = np.zeros((1, 3))
        self.check_points(origin)
        self.value_at_origin = float(self.value(origin)[0])
        self.gradient_at_origin = self.gradient(origin)[0]
        self.hessian_at_origin = self.hessian(origin)[0]
        self._memo: dict = {}
        self._lock = threading.Lock()

    def check_points(self, x: np.ndarray) -> None:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        inside = self.rule.spec.contains(x)
        if not np.all(inside):
            k = int(np.argmin(inside))
            raise DomainError(f"point {x[k].tolist()} is not inside the outer domain")

    def value(self, x):
        return _dl(self.rule, self.mu, x, 0, self.upsample)

    def gradient(self, x):
        return _dl(self.rule, self.mu, x, 1, self.upsample)

    def hessian(self, x):
        return _dl(self.rule, self.mu, x, 2, self.upsample)

    def at_inner(self, epsilon: float, rule_inner: SurfaceQuadrature) -> dict:
        """Gradient at ``eps t`` and the remainder ``u~(eps, t)`` on the inner nodes."""
        key = (float(epsilon), id(rule_inner))
        with self._lock:
            hit = self._memo.get(key)
        if hit is not None:
            return hit
        t = rule_inner.nodes
        eps = float(epsilon)
        grad = np.broadcast_to(self.gradient_at_origin, t.shape).copy() if eps == 0 else self.gradient(eps * t)
        out = {
            "grad": grad,
            "utilde": taylor_remainder_u(self, eps, t),
            "t_grad0": t @ self.gradient_at_origin,
        }
        with self._lock:
            self._memo[key] = out
        return out


def compute_background(rule_outer: SurfaceQuadrature, f_o, W: BoundaryOperatorMatrix | None = None, upsample: int = 1) -> BackgroundField:
    """Solve the interior Dirichlet problem for the outer datum ``f_o``."""
    mu = solve_interior_dirichlet(rule_outer, f_o, W)
    return BackgroundField(rule_outer, f_o, mu, upsample)


# ---------------------------------------------------------------------------
# Operator cache
# ---------------------------------------------------------------------------
@dataclass(frozen=True, eq=False)
class EpsilonBlocks:
    """Cross-surface kernels at one ``eps``.

    ``X[i, j] = w_j nu_j . grad S(x_i - eps y_j)`` (inner densities seen from the
    outer nodes); ``D`` and ``Dg`` evaluate ``w_o`` and ``nu(t) . grad w_o`` at ``eps t``.
    """

    epsilon: float
    X: np.ndarray
    D: np.ndarray
    Dg: np.ndarray


@dataclass(frozen=True)
class LinearSystem:
    """A Galerkin-projected square system with its factorization."""

    matrix: np.ndarray
    factorization: Factorization

    @property
    def condition(self) -> float:
        return self.factorization.condition


class OperatorCache:
    """Surface operators of both surfaces and memoized ``eps``-dependent blocks.

    The ``eps``-independent matrices are assembled once; cross-kernel blocks,
    ``Lambda`` and ``N`` factorizations are memoized per ``eps``.  Instances are
    safe to share between threads.
    """

    def __init__(
        self,
        rule_outer: SurfaceQuadrature,
        rule_inner: SurfaceQuadrature,
        normal_mode: str = "auto",
        offset: float = 0.01,
        extrapolation_order: int = 6,
    ):
        self.rule_outer = rule_outer
        self.rule_inner = rule_inner
        self.normal_mode = normal_mode
        self.offset = offset
        self.extrapolation_order = extrapolation_order
        self.W_o = assemble_W(rule_outer)
        self.W_i = assemble_W(rule_inner)
        H, H_other = assemble_normal_derivative(rule_inner, normal_mode, offset, extrapolation_order)
        self.H = H.matrix
        self.H_other = H_other.matrix
        t, nu = rule_inner.nodes, rule_inner.normals
        self.S_o = fundamental_solution(rule_outer.nodes)
        self.S_i = fundamental_solution(t)
        self.dS_i = np.einsum("nk,nk->n", nu, grad_fundamental_solution(t))
        self.half_plus_W_i = 0.5 * np.eye(rule_inner.size) + self.W_i.matrix
        self._memo: dict = {}
        self._lock = threading.Lock()

    # -- sizes and layout ----------------------------------------------------
    @property
    def n_outer(self) -> int:
        return self.rule_outer.size

    @property
    def n_inner(self) -> int:
        return self.rule_inner.size

    @property
    def n_state(self) -> int:
        return self.n_outer + 2 * self.n_inner + 1

    def slices(self):
        No, Ni = self.n_outer, self.n_inner
        return slice(0, No), slice(No, No + Ni), No + Ni, slice(No + Ni + 1, No + 2 * Ni + 1)

    @cached_property
    def _state_weights(self) -> np.ndarray:
        wo, wi = self.rule_outer.weights, self.rule_inner.weights
        return np.concatenate([wo, wi, [1.0], wi])

    def state_norm(self, z: np.ndarray) -> float:
        return float(np.sqrt(np.sum(self._state_weights * np.asarray(z) ** 2)))

    def zero_state(self) -> UnknownState:
        return UnknownState.zeros(self.n_outer, self.n_inner)

    @property
    def normal_mismatch(self) -> float:
        """Largest row-sum difference between the interior and exterior normal-derivative matrices."""
        return float(np.abs(self.H - self.H_other).sum(axis=1).max())

    # -- Galerkin machinery --------------------------------------------------
    @cached_property
    def _constraint_row(self) -> np.ndarray:
        r = self.rule_inner.weights @ self.rule_inner.synthesis
        return r / np.linalg.norm(r)

    @cached_property
    def _constraint_scale(self) -> float:
        r = self.rule_inner.weights @ self.rule_inner.synthesis
        return float(np.linalg.norm(r))

    def _prolong(self, cols: list[str]) -> np.ndarray:
        blocks = {"o": self.rule_outer.synthesis, "i": self.rule_inner.synthesis, "z": np.ones((1, 1))}
        return self.memo(("prolong", tuple(cols)), lambda: sla.block_diag(*[blocks[c] for c in cols]))

    def _restrict(self, rows: list[str]) -> np.ndarray:
        blocks = {"o": self.rule_outer.analysis, "i": self.rule_inner.analysis}
        return self.memo(("restrict", tuple(rows)), lambda: sla.block_diag(*[blocks[c] for c in rows]))

    def galerkin(self, nodal: np.ndarray, rows: list[str], cols: list[str], constrained_col: int, what: str) -> LinearSystem:
        """Project a nodal matrix and border it with the zero-mean row on column block ``constrained_col``."""
        G = self._restrict(rows) @ nodal @ self._prolong(cols)
        sizes = [{"o": self.rule_outer.n_coeffs, "i": self.rule_inner.n_coeffs, "z": 1}[c] for c in cols]
        start = int(np.sum(sizes[:constrained_col]))
        row = np.zeros(G.shape[1])
        row[start : start + sizes[constrained_col]] = self._constraint_row
        A = np.vstack([G, row])
        return LinearSystem(A, factorize(A, what))

    def galerkin_solve(self, system: LinearSystem, rhs: np.ndarray, rows: list[str], cols: list[str], mean_rhs: float = 0.0) -> np.ndarray:
        """Solve ``system`` for the nodal right-hand side ``rhs``; returns nodal unknowns."""
        b = np.concatenate([self._restrict(rows) @ rhs, [mean_rhs / self._constraint_scale]])
        c = system.factorization.solve(b)
        return self._prolong(cols) @ c

    def project(self, residual: np.ndarray, rows: list[str]) -> np.ndarray:
        """Band-limited nodal version ``B A r`` of a stacked residual."""
        return self._prolong(rows) @ (self._restrict(rows) @ residual)

    # -- memoized blocks -----------------------------------------------------
    def memo(self, key, build):
        with self._lock:
            if key in self._memo:
                return self._memo[key]
        value = build()
        with self._lock:
            return self._memo.setdefault(key, value)

    def blocks(self, epsilon: float) -> EpsilonBlocks:
        eps = float(epsilon)
        return self.memo(("blocks", eps), lambda: _cross_blocks(self, eps))


def _cross_blocks(cache: OperatorCache, eps: float) -> EpsilonBlocks:
    ro, ri = cache.rule_outer, cache.rule_inner
    if eps != 0.0 and not check_inclusion(ro.spec, ri.spec, eps):
        raise DomainError(f"eps = {eps} does not keep the inclusion inside the outer domain")
    # outer nodes x, inner sources eps y
    d = ro.nodes[:, None, :] - eps * ri.nodes[None, :, :]
    r = np.linalg.norm(d, axis=-1)
    X = np.einsum("ijk,jk->ij", d, ri.normals) / (_FOUR_PI * r**3) * ri.weights[None, :]
    # inner targets eps t, outer sources y
    x = eps * ri.nodes
    dist, _ = ro.distance_to_surface(x)
    if np.any(dist <= 2.0 * ro.spacing.max()):
        raise DomainError(f"eps = {eps} brings the inclusion within two node spacings of the outer surface")
    d = x[:, None, :] - ro.nodes[None, :, :]
    r2 = np.einsum("ijk,ijk->ij", d, d)
    r = np.sqrt(r2)
    dn = np.einsum("ijk,jk->ij", d, ro.normals)
    wj = ro.weights[None, :]
    D = -dn / (_FOUR_PI * r2 * r) * wj
    nu_t = ri.normals
    nn = nu_t @ ro.normals.T
    dv = np.einsum("ijk,ik->ij", d, nu_t)
    Dg = -(nn / (r2 * r) - 3.0 * dv * dn / (r2 * r2 * r)) / _FOUR_PI * wj
    for a in (X, D, Dg):
        a.setflags(write=False)
    return EpsilonBlocks(eps, X, D, Dg)


def build_cache(rule_outer, rule_inner, normal_mode="auto", offset=0.01, extrapolation_order=6) -> OperatorCache:
    return OperatorCache(rule_outer, rule_inner, normal_mode, offset, extrapolation_order)


# ---------------------------------------------------------------------------
# Residual triple
# ---------------------------------------------------------------------------
@dataclass(frozen=True, eq=False)
class ResidualTriple:
    """Residual rows on the outer nodes (``r1``) and on the inner nodes (``r2``, ``r3``)."""

    r1: np.ndarray
    r2: np.ndarray
    r3: np.ndarray
    weights_outer: np.ndarray
    weights_inner: np.ndarray

    def stacked(self) -> np.ndarray:
        return np.concatenate([self.r1, self.r2, self.r3])

    @property
    def components(self) -> tuple[float, float, float]:
        return tuple(
            float(np.sqrt(np.sum(w * r**2)))
            for r, w in ((self.r1, self.weights_outer), (self.r2, self.weights_inner), (self.r3, self.weights_inner))
        )

    @property
    def magnitude(self) -> float:
        return float(np.sqrt(sum(c * c for c in self.components)))

    def __sub__(self, other: "ResidualTriple") -> "ResidualTriple":
        return ResidualTriple(self.r1 - other.r1, self.r2 - other.r2, self.r3 - other.r3, self.weights_outer, self.weights_inner)


def _triple(cache: OperatorCache, z: np.ndarray) -> ResidualTriple:
    No, Ni = cache.n_outer, cache.n_inner
    return ResidualTriple(z[:No], z[No : No + Ni], z[No + Ni :], cache.rule_outer.weights, cache.rule_inner.weights)


def projected(cache: OperatorCache, res: ResidualTriple) -> ResidualTriple:
    """Residual restricted to the band-limited spaces the solvers act on."""
    return _triple(cache, cache.project(res.stacked(), ["o", "i", "i"]))


# ---------------------------------------------------------------------------
# J and Lambda
# ---------------------------------------------------------------------------
def apply_J(mu, xi: float, cache: OperatorCache) -> np.ndarray:
    """``(-1/2 + W) mu + xi S`` on the inner nodes."""
    mu = np.asarray(mu, dtype=float)
    return cache.W_i.matrix @ mu - 0.5 * mu + xi * cache.S_i


def _J_system(cache: OperatorCache) -> LinearSystem:
    def build():
        nodal = np.hstack([cache.W_i.matrix - 0.5 * np.eye(cache.n_inner), cache.S_i[:, None]])
        return cache.galerkin(nodal, ["i"], ["i", "z"], 0, "J")

    return cache.memo("J", build)


def solve_J(f, cache: OperatorCache) -> tuple[np.ndarray, float]:
    """Zero-mean ``mu`` and ``xi`` with ``apply_J(mu, xi) = f`` (Galerkin solve)."""
    f = np.asarray(f, dtype=float)
    sol = cache.galerkin_solve(_J_system(cache), f, ["i"], ["i", "z"])
    return sol[:-1], float(sol[-1])


def lambda_matrix(epsilon: float, cache: OperatorCache) -> np.ndarray:
    """Nodal matrix of ``Lambda`` acting on ``(phi_o, phi_i, zeta)``."""
    eps = float(epsilon)
    n = DIMENSION
    b = cache.blocks(eps)
    No, Ni = cache.n_outer, cache.n_inner
    top = np.hstack([0.5 * np.eye(No) + cache.W_o.matrix, -(eps ** (n - 1)) * b.X, (eps ** (n - 2)) * cache.S_o[:, None]])
    bottom = np.hstack([b.D, cache.W_i.matrix - 0.5 * np.eye(Ni), cache.S_i[:, None]])
    return np.vstack([top, bottom])


def assemble_Lambda(epsilon: float, cache: OperatorCache) -> LinearSystem:
    """Galerkin ``Lambda`` with its factorization (memoized per ``eps``)."""
    eps = float(epsilon)
    return cache.memo(
        ("Lambda", eps), lambda: cache.galerkin(lambda_matrix(eps, cache), ["o", "i"], ["o", "i", "z"], 1, "Lambda")
    )


def solve_Lambda(epsilon: float, cache: OperatorCache, f1, f2) -> tuple[np.ndarray, np.ndarray, float]:
    sol = cache.galerkin_solve(assemble_Lambda(epsilon, cache), np.concatenate([f1, f2]), ["o", "i"], ["o", "i", "z"])
    No, Ni = cache.n_outer, cache.n_inner
    return sol[:No], sol[No : No + Ni], float(sol[-1])


# ---------------------------------------------------------------------------
# M, N, S
# ---------------------------------------------------------------------------
def _slope0(cache: OperatorCache, data: TransmissionData) -> np.ndarray:
    t = cache.rule_inner.nodes
    return nemytskii_apply(data.F_zeta, 0.0, np.full(len(t), data.zeta_i), t)


def _beta(cache: OperatorCache, psi: np.ndarray) -> np.ndarray:
    return cache.half_plus_W_i @ psi


def eval_M(epsilon: float, state: UnknownState, cache: OperatorCache, background: BackgroundField, data: TransmissionData) -> ResidualTriple:
    """The three residual rows in their original form."""
    eps = float(epsilon)
    n = DIMENSION
    b = cache.blocks(eps)
    ri = cache.rule_inner
    t = ri.nodes
    bg = background.at_inner(eps, ri)
    zi = np.full(len(t), data.zeta_i)
    beta = _beta(cache, state.psi_i)
    Wi = cache.W_i.matrix

    r1 = cache.W_o.matrix @ state.phi_o + 0.5 * state.phi_o - eps ** (n - 1) * (b.X @ state.phi_i) + eps ** (n - 2) * cache.S_o * state.zeta
    r2 = (
        bg["t_grad0"]
        + eps * bg["utilde"]
        + (Wi @ state.phi_i - 0.5 * state.phi_i)
        + state.zeta * cache.S_i
        + b.D @ state.phi_o
        - nemytskii_apply(data.F_eps, 0.0, zi, t)
        - nemytskii_apply(data.F_zeta, 0.0, zi, t) * beta
        - eps * taylor_remainder_F(data, eps, t, zi, beta)
    )
    r3 = (
        np.einsum("nk,nk->n", ri.normals, bg["grad"])
        + eps * (b.Dg @ state.phi_o)
        + cache.H @ state.phi_i
        + state.zeta * cache.dS_i
        - cache.H @ state.psi_i
        - nemytskii_apply(data.G, eps, eps * beta + data.zeta_i, t)
    )
    return ResidualTriple(r1, r2, r3, cache.rule_outer.weights, ri.weights)


def n_matrix(epsilon: float, cache: OperatorCache, data: TransmissionData) -> np.ndarray:
    """Nodal matrix of ``N`` on the stacked state ``(phi_o, phi_i, zeta, psi_i)``."""
    eps = float(epsilon)
    n = DIMENSION
    b = cache.blocks(eps)
    No, Ni = cache.n_outer, cache.n_inner
    Wi = cache.W_i.matrix
    slope = _slope0(cache, data)
    N = np.zeros((No + 2 * Ni, No + 2 * Ni + 1))
    so, si, sz, sp = cache.slices()
    r1, r2, r3 = slice(0, No), slice(No, No + Ni), slice(No + Ni, No + 2 * Ni)
    N[r1, so] = 0.5 * np.eye(No) + cache.W_o.matrix
    N[r1, si] = -(eps ** (n - 1)) * b.X
    N[r1, sz] = eps ** (n - 2) * cache.S_o
    N[r2, so] = b.D
    N[r2, si] = Wi - 0.5 * np.eye(Ni)
    N[r2, sz] = cache.S_i
    N[r2, sp] = -slope[:, None] * cache.half_plus_W_i
    N[r3, so] = eps * b.Dg
    N[r3, si] = cache.H
    N[r3, sz] = cache.dS_i
    N[r3, sp] = -cache.H
    return N


_ROWS = ["o", "i", "i"]
_COLS = ["o", "i", "z", "i"]


def assemble_N(epsilon: float, cache: OperatorCache, background: BackgroundField, data: TransmissionData) -> LinearSystem:
    """Galerkin ``N(eps)`` with its factorization (memoized per ``eps`` and data)."""
    eps = float(epsilon)
    return cache.memo(("N", eps, id(data)), lambda: cache.galerkin(n_matrix(eps, cache, data), _ROWS, _COLS, 1, "N"))


def apply_N(epsilon: float, state: UnknownState, cache: OperatorCache, data: TransmissionData) -> ResidualTriple:
    return _triple(cache, n_matrix(epsilon, cache, data) @ state.to_vector())


def eval_S(epsilon: float, psi_i, cache: OperatorCache, background: BackgroundField, data: TransmissionData) -> ResidualTriple:
    """Right-hand side ``S(eps, psi_i)``; the first row vanishes identically."""
    eps = float(epsilon)
    ri = cache.rule_inner
    t = ri.nodes
    bg = background.at_inner(eps, ri)
    zi = np.full(len(t), data.zeta_i)
    beta = _beta(cache, np.asarray(psi_i, dtype=float))
    s2 = -bg["t_grad0"] - eps * bg["utilde"] + nemytskii_apply(data.F_eps, 0.0, zi, t) + eps * taylor_remainder_F(data, eps, t, zi, beta)
    s3 = -np.einsum("nk,nk->n", ri.normals, bg["grad"]) + nemytskii_apply(data.G, eps, eps * beta + data.zeta_i, t)
    return ResidualTriple(np.zeros(cache.n_outer), s2, s3, cache.rule_outer.weights, ri.weights)


def jacobian_M(epsilon: float, state: UnknownState, cache: OperatorCache, data: TransmissionData) -> np.ndarray:
    """Nodal Jacobian of ``M``: ``N`` minus the ``psi``-derivative of ``S``."""
    eps = float(epsilon)
    J = n_matrix(eps, cache, data)
    if eps == 0.0:
        return J
    t = cache.rule_inner.nodes
    zi = np.full(len(t), data.zeta_i)
    beta = _beta(cache, state.psi_i)
    No, Ni = cache.n_outer, cache.n_inner
    _, _, _, sp = cache.slices()
    dF = dFtilde_db(data, eps, t, zi, beta)
    dG = nemytskii_apply(data.G_zeta, eps, eps * beta + data.zeta_i, t)
    J[No : No + Ni, sp] -= eps * dF[:, None] * cache.half_plus_W_i
    J[No + Ni :, sp] -= eps * dG[:, None] * cache.half_plus_W_i
    return J


# ---------------------------------------------------------------------------
# Solvers
# ---------------------------------------------------------------------------
@dataclass
class SolveReport:
    """Per-solve diagnostics; ``residuals`` are projected residual magnitudes per iterate."""

    epsilon: float
    method: str
    residuals: list = field(default_factory=list)
    converged: bool = False
    zeta: float = float("nan")
    conditions: dict = field(default_factory=dict)
    nodal_residual: float = float("nan")
    pde_residuals: dict | None = None
    field_samples: dict | None = None

    @property
    def iterations(self) -> int:
        return max(len(self.residuals) - 1, 0)

    def convergence_orders(self) -> list[float]:
        """``log r_{k+1} / log r_k`` for consecutive residuals below ``1e-2``."""
        r = [x for x in self.residuals if 0 < x < 1e-2]
        return [float(np.log(b) / np.log(a)) for a, b in zip(r, r[1:])]

    def to_dict(self) -> dict:
        return {
            "epsilon": self.epsilon,
            "method": self.method,
            "iterations": list(map(float, self.residuals)),
            "converged": self.converged,
            "zeta": self.zeta,
            "nodal_residual": self.nodal_residual,
            "condition_numbers": dict(self.conditions),
            "pde_residuals": self.pde_residuals,
            "field_samples": self.field_samples,
        }


def _projected_magnitude(cache, res: ResidualTriple) -> float:
    return projected(cache, res).magnitude


def _mean_inner(cache: OperatorCache, phi_i: np.ndarray) -> float:
    return float(cache.rule_inner.weights @ phi_i)


def solve_limit(cache: OperatorCache, background: BackgroundField, data: TransmissionData) -> UnknownState:
    """The ``eps = 0`` solution from ``N(0) state = S(0)`` (``S(0)`` does not depend on ``psi``)."""
    system = assemble_N(0.0, cache, background, data)
    rhs = eval_S(0.0, np.zeros(cache.n_inner), cache, background, data).stacked()
    z = cache.galerkin_solve(system, rhs, _ROWS, _COLS)
    return UnknownState.from_vector(z, cache.n_outer, cache.n_inner)


def picard_step(epsilon: float, state: UnknownState, cache: OperatorCache, background: BackgroundField, data: TransmissionData) -> UnknownState:
    """One application of ``N(eps)^-1 S(eps, psi_i)``."""
    system = assemble_N(epsilon, cache, background, data)
    rhs = eval_S(epsilon, state.psi_i, cache, background, data).stacked()
    z = cache.galerkin_solve(system, rhs, _ROWS, _COLS)
    return UnknownState.from_vector(z, cache.n_outer, cache.n_inner)


def picard_solve(
    epsilon: float,
    initial: UnknownState,
    cache: OperatorCache,
    background: BackgroundField,
    data: TransmissionData,
    tol: float = 1e-10,
    max_iter: int = 200,
    blowup: float = 1e3,
) -> tuple[UnknownState, SolveReport]:
    """Iterate the Picard map until the projected residual drops below ``tol``.

    Never raises on non-convergence; the report carries the outcome.
    """
    report = SolveReport(float(epsilon), "picard")
    report.conditions["N"] = assemble_N(epsilon, cache, background, data).condition
    state = initial
    for _ in range(max_iter + 1):
        res = eval_M(epsilon, state, cache, background, data)
        r = _projected_magnitude(cache, res)
        report.residuals.append(r)
        if not np.isfinite(r) or r > blowup:
            break
        if r <= tol:
            report.converged = True
            break
        state = picard_step(epsilon, state, cache, background, data)
    report.zeta = state.zeta
    report.nodal_residual = eval_M(epsilon, state, cache, background, data).magnitude if np.isfinite(report.residuals[-1]) else float("nan")
    return state, report


def newton_solve(
    epsilon: float,
    initial: UnknownState,
    cache: OperatorCache,
    background: BackgroundField,
    data: TransmissionData,
    tol: float = 1e-10,
    max_iter: int = 30,
    raise_on_failure: bool = True,
) -> tuple[UnknownState, SolveReport]:
    """Newton's method on the projected residual with the analytic Jacobian."""
    eps = float(epsilon)
    report = SolveReport(eps, "newton")
    report.conditions["N"] = assemble_N(eps, cache, background, data).condition
    state = initial
    for k in range(max_iter + 1):
        res = eval_M(eps, state, cache, background, data)
        r = _projected_magnitude(cache, res)
        report.residuals.append(r)
        if not np.isfinite(r):
            break
        if r <= tol:
            report.converged = True
            break
        if k == max_iter:
            break
        J = jacobian_M(eps, state, cache, data)
        try:
            system = cache.galerkin(J, _ROWS, _COLS, 1, "Newton Jacobian")
        except SolverError:
            report.conditions["jacobian"] = float("inf")
            break
        report.conditions["jacobian"] = system.condition
        dz = cache.galerkin_solve(system, -res.stacked(), _ROWS, _COLS, mean_rhs=-_mean_inner(cache, state.phi_i))
        state = UnknownState.from_vector(state.to_vector() + dz, cache.n_outer, cache.n_inner)
    report.zeta = state.zeta
    report.nodal_residual = eval_M(eps, state, cache, background, data).magnitude if report.converged else float("nan")
    if not report.converged and raise_on_failure:
        raise ConvergenceError(f"Newton did not converge at eps = {eps} (residuals {report.residuals[-3:]})", report)
    return state, report


# ---------------------------------------------------------------------------
# Fields
# ---------------------------------------------------------------------------
class ReconstructedFields:
    """Field evaluators ``u^o`` on the perforated domain and ``u^i`` on the inclusion."""

    def __init__(self, epsilon: float, state: UnknownState, cache: OperatorCache, background: BackgroundField, zeta_i: float):
        self.epsilon = float(epsilon)
        self.state = state
        self.cache = cache
        self.background = background
        self.zeta_i = float(zeta_i)

    def _check(self, x: np.ndarray, inside: bool):
        eps = self.epsilon
        spec_i = self.cache.rule_inner.spec
        in_incl = spec_i.contains(x, eps) if eps > 0 else np.zeros(len(x), bool)
        ok = in_incl if inside else (~in_incl & self.cache.rule_outer.spec.contains(x))
        if not np.all(ok):
            k = int(np.argmin(ok))
            where = "the inclusion" if inside else "the perforated domain"
            raise DomainError(f"point {x[k].tolist()} is not in {where}")

    def u_outer(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        self._check(x, inside=False)
        eps, s, c = self.epsilon, self.state, self.cache
        out = self.background.value(x) + eps * _dl(c.rule_outer, s.phi_o, x)
        if eps > 0:
            out = out + eps * _dl(c.rule_inner, s.phi_i, x / eps)
        return out + eps ** (DIMENSION - 1) * s.zeta * fundamental_solution(x)

    def u_inner(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        self._check(x, inside=True)
        eps = self.epsilon
        return eps * _dl(self.cache.rule_inner, self.state.psi_i, x / eps) + self.zeta_i

    def outer_trace(self) -> np.ndarray:
        """``u^o`` on the outer nodes from interior offset limits."""
        c, s, eps = self.cache, self.state, self.epsilon
        xo = c.rule_outer.nodes
        wp, _ = one_sided_limits(c.rule_outer, self.background.mu + eps * s.phi_o, c.offset, c.extrapolation_order)
        out = wp + eps ** (DIMENSION - 1) * s.zeta * fundamental_solution(xo)
        if eps > 0:
            out = out + eps * _dl(c.rule_inner, s.phi_i, xo / eps)
        return out

    def interface_traces(self, rule_inner: SurfaceQuadrature | None = None):
        """``(u^o, u^i, nu . grad u^o, nu . grad u^i)`` at ``eps t`` from one-sided offset limits."""
        c, s, eps = self.cache, self.state, self.epsilon
        ri = c.rule_inner
        t, nu = ri.nodes, ri.normals
        h, p = c.offset, c.extrapolation_order
        _, wm_phi, _, gm_phi = one_sided_limits(ri, s.phi_i, h, p, gradient=True)
        wp_psi, _, gp_psi, _ = one_sided_limits(ri, s.psi_i, h, p, gradient=True)
        b = c.blocks(eps)
        bg = self.background.at_inner(eps, ri)
        u_bg = self.background.value(eps * t) if eps > 0 else np.full(len(t), self.background.value_at_origin)
        uo = u_bg + eps * (b.D @ s.phi_o) + eps * wm_phi + eps * s.zeta * c.S_i
        dn_o = np.einsum("nk,nk->n", nu, bg["grad"]) + eps * (b.Dg @ s.phi_o) + np.einsum("nk,nk->n", nu, gm_phi) + s.zeta * c.dS_i
        ui = eps * wp_psi + self.zeta_i
        dn_i = np.einsum("nk,nk->n", nu, gp_psi)
        return uo, ui, dn_o, dn_i


def reconstruct_fields(epsilon: float, state: UnknownState, cache: OperatorCache, background: BackgroundField, zeta_i: float) -> ReconstructedFields:
    return ReconstructedFields(epsilon, state, cache, background, zeta_i)


def state_from_fields(epsilon: float, exact, cache: OperatorCache) -> UnknownState:
    """Densities representing a manufactured pair whose outer field equals the background.

    Then ``phi_o``, ``phi_i`` and ``zeta`` vanish and ``psi_i`` solves the interior
    Dirichlet problem for ``(u^i(eps t) - zeta_i) / eps`` (or its ``eps = 0`` limit).
    """
    eps = float(epsilon)
    t = cache.rule_inner.nodes
    if eps == 0.0:
        g = t @ exact.grad_inner(np.zeros(3))
    else:
        g = (exact.u_inner(eps * t) - exact.u_inner(np.zeros((1, 3)))[0]) / eps
    psi = np.linalg.solve(cache.half_plus_W_i, g)
    z = cache.zero_state()
    return z.replace(psi_i=psi)


class ExactFieldTraces:
    """Adapter giving closed-form fields the evaluation interface of :class:`ReconstructedFields`."""

    def __init__(self, epsilon: float, exact, rule_inner: SurfaceQuadrature, rule_outer: SurfaceQuadrature):
        self.epsilon = float(epsilon)
        self.exact = exact
        self.rule_inner = rule_inner
        self.rule_outer = rule_outer

    def u_outer(self, x):
        return self.exact.u_outer(np.atleast_2d(x))

    def u_inner(self, x):
        return self.exact.u_inner(np.atleast_2d(x))

    def outer_trace(self):
        return self.exact.u_outer(self.rule_outer.nodes)

    def interface_traces(self, rule_inner=None):
        ri = self.rule_inner
        x = self.epsilon * ri.nodes
        nu = ri.normals
        return (
            self.exact.u_outer(x),
            self.exact.u_inner(x),
            np.einsum("nk,nk->n", nu, self.exact.grad_outer(x)),
            np.einsum("nk,nk->n", nu, self.exact.grad_inner(x)),
        )


# ---------------------------------------------------------------------------
# PDE residuals
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class PDEResidualReport:
    """Maxima of the five transmission-problem conditions at the collocation nodes and test balls."""

    harmonic_outer: float
    harmonic_inner: float
    dirichlet: float
    interface_value: float
    interface_flux: float

    @property
    def worst(self) -> float:
        return max(self.harmonic_outer, self.harmonic_inner, self.dirichlet, self.interface_value, self.interface_flux)

    def passed(self, tol: float) -> bool:
        return self.worst < tol

    def to_dict(self) -> dict:
        return {
            "harmonic_outer": self.harmonic_outer,
            "harmonic_inner": self.harmonic_inner,
            "dirichlet": self.dirichlet,
            "interface_value": self.interface_value,
            "interface_flux": self.interface_flux,
        }


def _mean_value_defect(u, centers: np.ndarray, radius: float, order: int = 8) -> float:
    from .sphharm import product_grid

    g = product_grid(order)
    w = g.weights / g.weights.sum()
    worst = 0.0
    for c in centers:
        ball = c[None, :] + radius * g.points
        worst = max(worst, abs(float(w @ u(ball)) - float(u(c[None, :])[0])))
    return worst


def mean_value_balls(epsilon: float, rule_inner: SurfaceQuadrature, rule_outer: SurfaceQuadrature):
    """Centres and radii of mean-value test balls in the perforated domain and in the inclusion."""
    dirs = np.array([[1, 0, 0], [0, 1, 0], [0, 0, 1], [-1, 1, 1], [1, -1, 0.5], [0.3, 0.2, -1]], dtype=float)
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    r_in_max = float(rule_inner.spec.radial(rule_inner.params).max())
    r_in_min = float(rule_inner.spec.radial(rule_inner.params).min())
    r_out_min = float(rule_outer.spec.radial(rule_outer.params).min())
    a = epsilon * r_in_max
    mid = 0.5 * (a + r_out_min)
    gap = 0.5 * (r_out_min - a)
    outer = (mid * dirs, 0.3 * gap)
    inner = (epsilon * 0.3 * r_in_min * dirs, epsilon * 0.2 * r_in_min)
    return outer, inner


def residual_check_pde(
    epsilon: float,
    fields,
    data: TransmissionData,
    rule_inner: SurfaceQuadrature,
    rule_outer: SurfaceQuadrature,
    f_outer: np.ndarray,
) -> PDEResidualReport:
    """Evaluate harmonicity (mean-value property), the outer Dirichlet condition and both interface conditions.

    ``fields`` provides ``u_outer``, ``u_inner``, ``outer_trace()`` and
    ``interface_traces()``; both :class:`ReconstructedFields` and the exact
    manufactured fields qualify.
    """
    eps = float(epsilon)
    t = rule_inner.nodes
    (co, ro), (ci, rad_i) = mean_value_balls(eps, rule_inner, rule_outer)
    h_out = _mean_value_defect(fields.u_outer, co, ro)
    h_in = _mean_value_defect(fields.u_inner, ci, rad_i) if eps > 0 else 0.0
    dirichlet = float(np.abs(fields.outer_trace() - f_outer).max())
    uo, ui, dno, dni = fields.interface_traces(rule_inner)
    val = float(np.abs(uo - nemytskii_apply(data.F, eps, ui, t)).max())
    flux = float(np.abs(dno - dni - nemytskii_apply(data.G, eps, ui, t)).max())
    return PDEResidualReport(h_out, h_in, dirichlet, val, flux)
