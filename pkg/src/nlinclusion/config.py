"""Run configuration (JSON) and assembly of a ready-to-solve problem."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .data import ExactFields, HarmonicPolynomial, TransmissionData, affine_family, check_admissibility, family_from_dict
from .errors import ConfigurationError, GeometryError
from .geometry import SurfaceQuadrature, SurfaceSpec, build_quadrature, default_epsilon_grid, make_window
from .system import BackgroundField, OperatorCache, build_cache, compute_background

__all__ = ["SCHEMA_VERSION", "RunConfig", "Problem", "load_config", "parse_config", "build_problem"]

SCHEMA_VERSION = 1

_TOP_KEYS = {
    "schema_version", "outer", "inner", "order", "order_inner", "alpha", "data", "f_outer",
    "epsilon_grid", "solver", "probe", "seed", "out",
}
_SOLVER_DEFAULTS = {"tol": 1e-10, "max_iter": 30, "normal_mode": "auto", "offset": 0.01, "extrapolation_order": 6}
_PROBE_DEFAULTS = {
    "deltas": [0.1, 1.0, 10.0, 100.0, 1000.0, 10000.0],
    "samples": 10,
    "contraction_samples": 8,
    "merge_tol": 1e-8,
    "picard_tol": 1e-12,
    "picard_max_iter": 200,
    "corollary_c": 1.0,
    "corollary_samples": 4,
    "negative_factor": 10.0,
    "epsilons": None,
}


@dataclass(frozen=True)
class RunConfig:
    """Validated run configuration."""

    outer: SurfaceSpec
    inner: SurfaceSpec
    order: int = 12
    order_inner: int = 12
    alpha: float = 0.5
    data: dict = field(default_factory=lambda: {"family": "affine", "a": 0.0, "b": 1.0, "c": 0.0})
    f_outer: Any = None
    epsilon_grid: tuple[float, ...] = field(default_factory=default_epsilon_grid)
    solver: dict = field(default_factory=lambda: dict(_SOLVER_DEFAULTS))
    probe: dict = field(default_factory=lambda: dict(_PROBE_DEFAULTS))
    seed: int = 0
    out: str = "out"

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "outer": self.outer.to_dict(),
            "inner": self.inner.to_dict(),
            "order": self.order,
            "order_inner": self.order_inner,
            "alpha": self.alpha,
            "data": self.data,
            "f_outer": self.f_outer,
            "epsilon_grid": list(self.epsilon_grid),
            "solver": self.solver,
            "probe": self.probe,
            "seed": self.seed,
            "out": self.out,
        }


def _field(d: dict, key: str, kind, default=None, path: str = ""):
    if key not in d:
        return default
    v = d[key]
    if kind is float and isinstance(v, (int, float)) and not isinstance(v, bool):
        return float(v)
    if kind is int and isinstance(v, int) and not isinstance(v, bool):
        return v
    if kind not in (float, int) and isinstance(v, kind):
        return v
    raise ConfigurationError(f"field '{path}{key}': expected {getattr(kind, '__name__', kind)}, got {v!r}")


def _grid(v) -> tuple[float, ...]:
    if v is None:
        return default_epsilon_grid()
    if isinstance(v, dict):
        unknown = set(v) - {"n", "lo", "hi"}
        if unknown:
            raise ConfigurationError(f"field 'epsilon_grid': unknown keys {sorted(unknown)}")
        return default_epsilon_grid(int(v.get("n", 12)), float(v.get("lo", 1e-3)), float(v.get("hi", 0.2)))
    if isinstance(v, list) and all(isinstance(e, (int, float)) for e in v):
        return tuple(float(e) for e in v)
    raise ConfigurationError(f"field 'epsilon_grid': expected a list of numbers or {{n, lo, hi}}, got {v!r}")


def _merge(defaults: dict, given, name: str) -> dict:
    if given is None:
        return dict(defaults)
    if not isinstance(given, dict):
        raise ConfigurationError(f"field '{name}': expected an object")
    unknown = set(given) - set(defaults)
    if unknown:
        raise ConfigurationError(f"field '{name}': unknown keys {sorted(unknown)}")
    return {**defaults, **given}


def _surface(v, name: str) -> SurfaceSpec:
    if v is None:
        return SurfaceSpec.sphere(1.0)
    if not isinstance(v, dict):
        raise ConfigurationError(f"field '{name}': expected an object")
    try:
        return SurfaceSpec.from_dict(v)
    except (GeometryError, ValueError, KeyError, TypeError) as exc:
        raise ConfigurationError(f"field '{name}': {exc}") from exc


def parse_config(obj: dict) -> RunConfig:
    """Validate a decoded JSON object; unknown keys are rejected with the offending field named."""
    if not isinstance(obj, dict):
        raise ConfigurationError("configuration must be a JSON object")
    unknown = set(obj) - _TOP_KEYS
    if unknown:
        raise ConfigurationError(f"unknown top-level fields {sorted(unknown)}")
    version = obj.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ConfigurationError(f"field 'schema_version': unsupported version {version!r}")
    order = _field(obj, "order", int, 12)
    cfg = RunConfig(
        outer=_surface(obj.get("outer"), "outer"),
        inner=_surface(obj.get("inner"), "inner"),
        order=order,
        order_inner=_field(obj, "order_inner", int, order),
        alpha=_field(obj, "alpha", float, 0.5),
        data=_field(obj, "data", dict, {"family": "affine", "a": 0.0, "b": 1.0, "c": 0.0}),
        f_outer=obj.get("f_outer"),
        epsilon_grid=_grid(obj.get("epsilon_grid")),
        solver=_merge(_SOLVER_DEFAULTS, obj.get("solver"), "solver"),
        probe=_merge(_PROBE_DEFAULTS, obj.get("probe"), "probe"),
        seed=_field(obj, "seed", int, 0),
        out=_field(obj, "out", str, "out"),
    )
    if cfg.order < 4 or cfg.order_inner < 4:
        raise ConfigurationError("field 'order': quadrature order must be at least 4")
    if not 0 < cfg.alpha < 1:
        raise ConfigurationError("field 'alpha': must lie in (0, 1)")
    if cfg.seed < 0:
        raise ConfigurationError("field 'seed': must be non-negative")
    return cfg


def load_config(path) -> RunConfig:
    """Read and validate a JSON configuration file; parse errors report line and column."""
    text = Path(path).read_text()
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    return parse_config(obj)


@dataclass(eq=False)
class Problem:
    """Everything a solve needs: quadratures, operators, background field and data."""

    config: RunConfig
    rule_outer: SurfaceQuadrature
    rule_inner: SurfaceQuadrature
    cache: OperatorCache
    background: BackgroundField
    data: TransmissionData
    exact: ExactFields | None
    epsilon_grid: tuple[float, ...]

    @property
    def solver(self) -> dict:
        return self.config.solver


def _outer_datum(cfg: RunConfig, rule: SurfaceQuadrature, exact: ExactFields | None) -> np.ndarray:
    spec = cfg.f_outer
    if spec is None:
        if exact is None:
            raise ConfigurationError("field 'f_outer': required unless the data family is manufactured")
        return exact.f_outer(rule.nodes)
    if isinstance(spec, dict) and "samples" in spec:
        vals = np.asarray(spec["samples"], dtype=float)
        if vals.shape != (rule.size,):
            raise ConfigurationError(f"field 'f_outer.samples': expected {rule.size} values, got {vals.size}")
        return vals
    terms = spec.get("harmonic") if isinstance(spec, dict) else spec
    try:
        return HarmonicPolynomial.from_json(terms).value(rule.nodes)
    except ConfigurationError as exc:
        raise ConfigurationError(f"field 'f_outer': {exc}") from exc


def build_problem(cfg: RunConfig, check: bool = True) -> Problem:
    """Build quadratures, background field, data and operator cache; verify admissibility and the grid."""
    window = make_window(cfg.outer, cfg.inner, cfg.epsilon_grid)
    ro = build_quadrature(cfg.outer, cfg.order)
    ri = build_quadrature(cfg.inner, cfg.order_inner)
    d = dict(cfg.data)
    auto_zeta = d.get("family") == "affine" and "zeta_i" not in d
    if auto_zeta:
        d["zeta_i"] = 0.0
    data, exact = family_from_dict(d, cfg.inner)
    background = compute_background(ro, _outer_datum(cfg, ro, exact))
    if auto_zeta:
        a, b, c = float(d.get("a", 0.0)), float(d.get("b", 1.0)), float(d.get("c", 0.0))
        if b == 0:
            raise ConfigurationError("field 'data.b': slope must be non-zero")
        data = affine_family(a, b, c, (background.value_at_origin - a) / b)
    if check:
        rep = check_admissibility(data, background, ri)
        if not rep.passed:
            raise ConfigurationError("data is not admissible: " + "; ".join(rep.failures))
    s = cfg.solver
    cache = build_cache(ro, ri, s["normal_mode"], s["offset"], s["extrapolation_order"])
    return Problem(cfg, ro, ri, cache, background, data, exact, tuple(window.grid))
