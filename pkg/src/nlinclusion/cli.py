"""Command-line front end: ``nlinclusion validate|solve|continue|probe``.

Exit codes: 0 when the report has no failures, 1 when it does, 2 for
configuration, parse and domain errors.  JSON outputs wrap the payload as
``{"header": ..., "payload": ...}`` where only the header carries timestamps
and environment data; CSV outputs are byte-deterministic for a fixed seed.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import platform
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .config import SCHEMA_VERSION, Problem, RunConfig, build_problem, load_config
from .continuation import (
    FamilyRecord,
    combined_delta_hat,
    continue_family,
    contraction_certificate,
    family_to_csv,
    family_to_json,
    family_uniqueness_check,
    fit_analytic,
    probe_to_csv,
    probe_to_json,
    probe_uniqueness,
)
from .errors import ConfigurationError, ConvergenceError, DomainError, GeometryError, InclusionError
from .geometry import check_inclusion
from .system import newton_solve, reconstruct_fields, residual_check_pde, solve_limit
from .validation import run_validation

__all__ = ["main", "build_parser", "cmd_validate", "cmd_solve", "cmd_continue", "cmd_probe"]

PDE_TOL = 1e-6
FIELD_COLUMNS = ("schema_version", "location", "x", "y", "z", "u", "exact", "error")


def _header(command: str, cfg: RunConfig) -> dict:
    return {
        "command": command,
        "timestamp": datetime.now(timezone.utc).isoformat(),
        "version": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "seed": cfg.seed,
    }


def _write(out: Path, name: str, text: str) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    path = out / name
    path.write_text(text)
    return path


def _dump(header: dict, payload: dict) -> str:
    return json.dumps({"header": header, "payload": payload}, indent=2, sort_keys=True, default=_json_default)


def _json_default(v):
    if isinstance(v, np.generic):
        return v.item()
    if isinstance(v, np.ndarray):
        return v.tolist()
    raise TypeError(f"not serializable: {type(v).__name__}")


# ---------------------------------------------------------------------------
# validate
# ---------------------------------------------------------------------------
def cmd_validate(cfg: RunConfig, out: Path) -> int:
    problem = build_problem(cfg)
    rep = run_validation(cfg, problem)
    _write(out, "validate.json", _dump(_header("validate", cfg), rep.to_dict()))
    for c in rep.checks:
        print(f"{'PASS' if c.passed else 'FAIL'}  {c.name}: {c.value:.3e} (tol {c.tolerance:.1e})")
    return 0 if rep.passed else 1


# ---------------------------------------------------------------------------
# solve
# ---------------------------------------------------------------------------
def _warm_start(problem: Problem, eps: float):
    """Newton continuation from the limit through the grid points below ``eps``."""
    c, bg, data, s = problem.cache, problem.background, problem.data, problem.solver
    state = solve_limit(c, bg, data)
    for e in sorted(x for x in problem.epsilon_grid if x < eps):
        state, _ = newton_solve(e, state, c, bg, data, s["tol"], s["max_iter"])
    return state


def _resolvable(rule, x: np.ndarray) -> bool:
    """Whether plain quadrature (with at most eightfold refinement) resolves ``x`` near ``rule``."""
    d, i = rule.distance_to_surface(x)
    return bool(d[0] >= 0.5 * rule.spacing[i[0]])


def field_samples(problem: Problem, eps: float, fields, n_line: int = 41) -> list[tuple]:
    """Rows ``(location, x, u, exact)`` on the ``x_1`` axis and on both interfaces."""
    rows = []
    exact = problem.exact
    ri, ro = problem.rule_inner, problem.rule_outer
    r_out = float(ro.spec.radial(ro.params).min())
    for x1 in np.linspace(-0.9 * r_out, 0.9 * r_out, n_line):
        x = np.array([[x1, 0.0, 0.0]])
        if not (_resolvable(ri, x / eps) and _resolvable(ro, x)):
            continue
        if ri.spec.contains(x, eps)[0]:
            loc, u = "line-inner", fields.u_inner(x)[0]
            ex = exact.u_inner(x)[0] if exact else None
        else:
            loc, u = "line-outer", fields.u_outer(x)[0]
            ex = exact.u_outer(x)[0] if exact else None
        rows.append((loc, x[0], float(u), ex))
    uo, ui, _, _ = fields.interface_traces()
    xi = eps * ri.nodes
    ex_o = exact.u_outer(xi) if exact else [None] * len(xi)
    ex_i = exact.u_inner(xi) if exact else [None] * len(xi)
    for k in range(len(xi)):
        rows.append(("interface-outer-side", xi[k], float(uo[k]), ex_o[k]))
        rows.append(("interface-inner-side", xi[k], float(ui[k]), ex_i[k]))
    to = fields.outer_trace()
    ex_b = exact.u_outer(ro.nodes) if exact else [None] * ro.size
    for k in range(ro.size):
        rows.append(("outer-boundary", ro.nodes[k], float(to[k]), ex_b[k]))
    return rows


def fields_to_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(FIELD_COLUMNS)
    for loc, x, u, ex in rows:
        err = "" if ex is None else repr(abs(float(u) - float(ex)))
        w.writerow([SCHEMA_VERSION, loc, *(repr(float(v)) for v in x), repr(u), "" if ex is None else repr(float(ex)), err])
    return buf.getvalue()


def cmd_solve(cfg: RunConfig, out: Path, epsilon: float) -> int:
    if not epsilon > 0 or not check_inclusion(cfg.outer, cfg.inner, epsilon):
        raise DomainError(f"eps = {epsilon} is outside the admissible window: the inclusion does not fit in the domain")
    problem = build_problem(cfg)
    s = problem.solver
    start = _warm_start(problem, epsilon)
    state, report = newton_solve(epsilon, start, problem.cache, problem.background, problem.data, s["tol"], s["max_iter"], raise_on_failure=False)
    failures = []
    if not report.converged:
        failures.append(f"Newton did not converge (last residual {report.residuals[-1]:.3e})")
    rows = []
    if report.converged:
        fields = reconstruct_fields(epsilon, state, problem.cache, problem.background, problem.data.zeta_i)
        pde = residual_check_pde(epsilon, fields, problem.data, problem.rule_inner, problem.rule_outer, problem.background.f_o)
        report.pde_residuals = pde.to_dict()
        if not pde.passed(PDE_TOL):
            failures.append(f"PDE residual {pde.worst:.3e} exceeds {PDE_TOL:g}")
        rows = field_samples(problem, epsilon, fields)
        errs = [abs(u - ex) for _, _, u, ex in rows if ex is not None]
        report.field_samples = {"count": len(rows), "max_error": max(errs) if errs else None}
        if errs and max(errs) >= PDE_TOL:
            failures.append(f"field error {max(errs):.3e} exceeds {PDE_TOL:g}")
    payload = {
        "schema_version": SCHEMA_VERSION,
        "config": cfg.to_dict(),
        "report": report.to_dict(),
        "state": state.to_dict(),
        "failures": failures,
    }
    _write(out, "report.json", _dump(_header("solve", cfg), payload))
    _write(out, "fields.csv", fields_to_csv(rows))
    print(f"eps = {epsilon:g}: residual {report.residuals[-1]:.3e} after {report.iterations} Newton steps; zeta = {report.zeta:.12g}")
    for f in failures:
        print(f"FAIL  {f}")
    return 0 if not failures else 1


# ---------------------------------------------------------------------------
# continue
# ---------------------------------------------------------------------------
def _family_failures(family: FamilyRecord) -> list[str]:
    out = []
    if family.truncated_at is not None:
        out.append(f"family truncated at eps = {family.truncated_at}: {family.failure}")
    return out


def cmd_continue(cfg: RunConfig, out: Path) -> int:
    problem = build_problem(cfg)
    family = continue_family(problem)
    fit = fit_analytic(family, problem) if len(family.entries) >= 3 else None
    failures = _family_failures(family)
    _write(out, "family.json", family_to_json(family, fit, _header("continue", cfg)))
    _write(out, "family.csv", family_to_csv(family))
    print(f"{len(family.entries)} grid points solved; log-log slope of distance to the limit {family.linear_rate():.4f}")
    for f in failures:
        print(f"FAIL  {f}")
    return 0 if not failures else 1


# ---------------------------------------------------------------------------
# probe
# ---------------------------------------------------------------------------
def run_probes(problem: Problem, threads: int = 1):
    """Family, contraction certificates, basin probes and the competing-start check."""
    pc = problem.config.probe
    family = continue_family(problem)
    wanted = pc["epsilons"]
    contractions, probes = [], []
    for k, entry in enumerate(family.entries):
        if wanted is not None and not any(np.isclose(entry.epsilon, w) for w in wanted):
            continue
        cert = contraction_certificate(problem, entry, eps_index=k)
        res = probe_uniqueness(problem, entry, eps_index=k, threads=threads)
        entry.L = cert.L
        entry.delta_hat = combined_delta_hat(cert, res)
        entry.returned_fraction = res.returned_fraction("psi-only", entry.delta_hat)
        contractions.append(cert)
        probes.append(res)
    corollary = family_uniqueness_check(problem, family) if family.entries else None
    return family, contractions, probes, corollary


def probe_failures(family, contractions, probes) -> list[str]:
    out = _family_failures(family)
    for cert, res in zip(contractions, probes):
        for o in res.distinct:
            out.append(f"distinct fixed point at eps = {o.epsilon}, delta = {o.delta}, sample {o.sample} ({o.regime})")
        entry = family.entry(res.epsilon)
        if entry.delta_hat is not None and entry.delta_hat > 0 and entry.returned_fraction < 1.0:
            out.append(f"probes within delta_hat failed to return at eps = {res.epsilon}")
    return out


def cmd_probe(cfg: RunConfig, out: Path, threads: int = 1) -> int:
    problem = build_problem(cfg)
    family, contractions, probes, corollary = run_probes(problem, threads)
    failures = probe_failures(family, contractions, probes)
    header = _header("probe", cfg)
    text = probe_to_json(probes, contractions, corollary, header)
    doc = json.loads(text)
    doc["payload"]["failures"] = failures
    doc["payload"]["summary"] = [
        {"epsilon": e.epsilon, "zeta": e.state.zeta, "L": e.L, "delta_hat": e.delta_hat, "returned_fraction": e.returned_fraction}
        for e in family.entries
    ]
    _write(out, "probe.json", json.dumps(doc, indent=2, sort_keys=True))
    _write(out, "probe.csv", probe_to_csv(probes))
    _write(out, "summary.csv", family_to_csv(family))
    n = sum(len(r.outcomes) for r in probes)
    print(f"{n} probes at {len(probes)} values of eps; delta_hat = {[e.delta_hat for e in family.entries]}")
    if corollary is not None:
        print(f"competing starts merge for eps <= {corollary.eps_star:g}")
    for f in failures:
        print(f"FAIL  {f}")
    return 0 if not failures else 1


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------
def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="nlinclusion", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=("validate", "solve", "continue", "probe"))
    p.add_argument("--config", required=True, help="JSON run configuration")
    p.add_argument("--epsilon", type=float, help="inclusion size (solve only)")
    p.add_argument("--out", help="output directory (overrides the configuration)")
    p.add_argument("--seed", type=int, help="random seed (overrides the configuration)")
    p.add_argument("--threads", type=int, default=1, help="worker threads for probes")
    return p


def _apply_overrides(cfg: RunConfig, args) -> RunConfig:
    changes = {}
    if args.seed is not None:
        if not 0 <= args.seed < 2**64:
            raise ConfigurationError("--seed must be an unsigned 64-bit integer")
        changes["seed"] = args.seed
    if args.out is not None:
        changes["out"] = args.out
    return dataclasses.replace(cfg, **changes) if changes else cfg


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0) and 2
    try:
        cfg = _apply_overrides(load_config(args.config), args)
        if args.threads < 1:
            raise ConfigurationError("--threads must be at least 1")
        out = Path(cfg.out)
        if args.command == "solve":
            if args.epsilon is None:
                raise ConfigurationError("solve needs --epsilon")
            return cmd_solve(cfg, out, args.epsilon)
        if args.epsilon is not None:
            raise ConfigurationError("--epsilon is only valid for solve")
        if args.command == "validate":
            return cmd_validate(cfg, out)
        if args.command == "continue":
            return cmd_continue(cfg, out)
        return cmd_probe(cfg, out, args.threads)
    except (ConfigurationError, DomainError, GeometryError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ConvergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except InclusionError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
