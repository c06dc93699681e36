"""Discrete Hölder norms on surface node sets and checks of the algebra/composition bounds.

The seminorm is the largest difference quotient ``|f_i - f_j| / |t_i - t_j|^alpha``
over node pairs (chordal distance).  All pairs are used up to the configured
budget; beyond it a fixed seeded permutation of the pairs is truncated, so a
larger budget always examines a superset of pairs.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable

import numpy as np

from .geometry import SurfaceQuadrature

__all__ = [
    "HolderConfig",
    "holder_seminorm",
    "c0alpha_norm",
    "c1alpha_norm",
    "ProductReport",
    "CompositionReport",
    "check_product_inequality",
    "check_composition_inequality",
]

_CHUNK = 1 << 20


@dataclass(frozen=True)
class HolderConfig:
    """Exponent ``alpha`` in (0, 1) and the pair-sampling budget."""

    alpha: float = 0.5
    pair_budget: int = 2_000_000
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.pair_budget < 1:
            raise ValueError("pair budget must be positive")


def _pairs(n: int, cfg: HolderConfig) -> tuple[np.ndarray, np.ndarray]:
    i, j = np.triu_indices(n, 1)
    if len(i) > cfg.pair_budget:
        order = np.random.default_rng(cfg.seed).permutation(len(i))[: cfg.pair_budget]
        i, j = i[order], j[order]
    return i, j


@lru_cache(maxsize=16)
def _pair_table(key: bytes, shape: tuple[int, int], cfg: HolderConfig):
    pts = np.frombuffer(key, dtype=float).reshape(shape)
    i, j = _pairs(shape[0], cfg)
    inv = np.linalg.norm(pts[i] - pts[j], axis=1) ** (-cfg.alpha)
    return i, j, inv


def holder_seminorm(values: np.ndarray, points: np.ndarray, cfg: HolderConfig) -> np.ndarray:
    """Largest sampled difference quotient per component; ``values`` is ``(N,)`` or ``(N, c)``."""
    v = np.asarray(values, dtype=float)
    scalar = v.ndim == 1
    v = v.reshape(len(v), -1)
    if len(v) == 0:
        raise ValueError("empty node set")
    pts = np.ascontiguousarray(points, dtype=float)
    i, j, inv = _pair_table(pts.tobytes(), pts.shape, cfg)
    best = np.zeros(v.shape[1])
    for c in range(v.shape[1]):
        col = v[:, c]
        for s in range(0, len(i), _CHUNK):
            sl = slice(s, s + _CHUNK)
            best[c] = max(best[c], float((np.abs(col[i[sl]] - col[j[sl]]) * inv[sl]).max(initial=0.0)))
    return best[0] if scalar else best


def _sup(values: np.ndarray) -> np.ndarray:
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        raise ValueError("empty node set")
    return np.abs(v).max(axis=0)


def c0alpha_norm(f: np.ndarray, rule: SurfaceQuadrature, cfg: HolderConfig = HolderConfig()) -> float:
    """``max |f| + [f]_alpha`` on the nodes of ``rule``."""
    f = np.asarray(f, dtype=float)
    return float(_sup(f) + holder_seminorm(f, rule.nodes, cfg))


def c1alpha_norm(
    f: np.ndarray,
    rule: SurfaceQuadrature,
    cfg: HolderConfig = HolderConfig(),
    gradient: np.ndarray | None = None,
) -> float:
    """``max |f| + sum_k (max |g_k| + [g_k]_alpha)`` with ``g`` the tangential gradient.

    The gradient is the exact surface gradient of the band-limited interpolant
    of ``f`` unless supplied explicitly.
    """
    f = np.asarray(f, dtype=float)
    g = rule.tangential_gradient(f) if gradient is None else np.asarray(gradient, dtype=float)
    return float(_sup(f) + _sup(g).sum() + holder_seminorm(g, rule.nodes, cfg).sum())


@dataclass(frozen=True)
class ProductReport:
    order: str
    lhs: float
    bound: float

    @property
    def holds(self) -> bool:
        return self.lhs <= self.bound * (1.0 + 1e-12)


def check_product_inequality(u, v, rule: SurfaceQuadrature, cfg: HolderConfig = HolderConfig(), order="c0alpha"):
    """Compare ``||u v||`` with ``||u|| ||v||`` (C^{0,alpha}) or ``2 ||u|| ||v||`` (C^{1,alpha}).

    For the C^{1,alpha} form the product's gradient is taken from its
    band-limited interpolant, which is exact when ``deg u + deg v <= order - 1``.
    """
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if order == "c0alpha":
        return ProductReport(order, c0alpha_norm(u * v, rule, cfg), c0alpha_norm(u, rule, cfg) * c0alpha_norm(v, rule, cfg))
    if order == "c1alpha":
        return ProductReport(
            order, c1alpha_norm(u * v, rule, cfg), 2.0 * c1alpha_norm(u, rule, cfg) * c1alpha_norm(v, rule, cfg)
        )
    raise ValueError(f"unknown order {order!r}")


@dataclass(frozen=True)
class CompositionReport:
    """Empirical ratios for the composition bounds and the norms entering them."""

    ratio_c0: float
    ratio_c1: float
    norm_composite_c0: float
    norm_composite_c1: float
    norm_u_c0: float
    norm_u_c1: float
    norm_v_c1: float
    bound_c0: float = field(default=np.inf)
    bound_c1: float = field(default=np.inf)

    @property
    def holds(self) -> bool:
        return self.ratio_c0 <= self.bound_c0 and self.ratio_c1 <= self.bound_c1


def check_composition_inequality(
    u: Callable[[np.ndarray, np.ndarray], np.ndarray],
    v: np.ndarray,
    rule: SurfaceQuadrature,
    cfg: HolderConfig = HolderConfig(),
    R: float = 1.0,
    n_levels: int = 13,
    bound_c0: float = 1.0,
    bound_c1: float = 1.0,
) -> CompositionReport:
    """Ratios ``||u(., v)||_{0,a} / (||u|| (1 + ||v||_{1,a}^a))`` and ``||u(., v)||_{1,a} / (||u|| (1 + ||v||_{1,a})^2)``.

    ``u(t, s)`` is sampled on the nodes times ``n_levels`` Chebyshev--Lobatto
    levels in ``[-R, R]``; its ``s``-derivative comes from the Chebyshev
    interpolant across levels and its tangential gradient from the harmonic
    interpolant on each level.  Product-domain distances are
    ``sqrt(|t - t'|^2 + (s - s')^2)``.
    """
    v = np.asarray(v, dtype=float)
    if np.any(np.abs(v) > R * (1 + 1e-12)):
        raise ValueError(f"range of v exceeds [-{R}, {R}]")
    t = rule.nodes
    N = rule.size
    levels = R * np.cos(np.pi * np.arange(n_levels) / (n_levels - 1))
    U = np.stack([u(t, np.full(N, s)) for s in levels], axis=1)  # (N, n_levels)
    cheb = np.polynomial.chebyshev
    coef = cheb.chebfit(levels / R, U.T, n_levels - 1)
    Us = cheb.chebval(levels / R, cheb.chebder(coef)) / R  # (N, n_levels)
    Ut = np.stack([rule.tangential_gradient(U[:, k]) for k in range(n_levels)], axis=1)  # (N, L, 3)
    pts = np.concatenate([np.repeat(t, n_levels, axis=0), np.tile(levels, N)[:, None]], axis=1)
    flatU = U.reshape(-1)
    derivs = np.concatenate([Ut.reshape(-1, 3), Us.reshape(-1, 1)], axis=1)
    u_c0 = float(np.abs(flatU).max() + holder_seminorm(flatU, pts, cfg))
    u_c1 = float(
        np.abs(flatU).max() + np.abs(derivs).max(axis=0).sum() + holder_seminorm(derivs, pts, cfg).sum()
    )
    comp = u(t, v)
    comp_c0 = c0alpha_norm(comp, rule, cfg)
    comp_c1 = c1alpha_norm(comp, rule, cfg)
    v_c1 = c1alpha_norm(v, rule, cfg)
    r0 = comp_c0 / (u_c0 * (1.0 + v_c1**cfg.alpha)) if u_c0 > 0 else 0.0
    r1 = comp_c1 / (u_c1 * (1.0 + v_c1) ** 2) if u_c1 > 0 else 0.0
    return CompositionReport(r0, r1, comp_c0, comp_c1, u_c0, u_c1, v_c1, bound_c0, bound_c1)
