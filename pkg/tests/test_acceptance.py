"""Acceptance criteria 1 to 11.

Each test prints one ``CRITERION n: PASS|FAIL`` line with the measured
quantities and then asserts the verdict.  The lines are repeated in the pytest
terminal summary.  Run alone with ``pytest tests/test_acceptance.py -s``.
"""

from __future__ import annotations

import time

import numpy as np
import pytest

from conftest import AFFINE, load_json, make_problem, record_acceptance
from nlinclusion.cli import field_samples, main
from nlinclusion.geometry import SurfaceSpec
from nlinclusion.system import (
    UnknownState,
    apply_N,
    eval_M,
    eval_S,
    n_matrix,
    newton_solve,
    picard_solve,
    reconstruct_fields,
    residual_check_pde,
)
from nlinclusion.validation import (
    check_appendix_battery,
    check_background,
    check_gauss,
    check_hypersingular,
    check_jump_relation,
    check_sphere_eigenvalues,
    check_taylor_F,
    check_utilde_paths,
    nonlinear_polynomial_family,
)

STAR = SurfaceSpec.from_dict({"kind": "star-shaped", "radius": 1.0, "coefficients": [[2, 0, 0.1], [3, 1, 0.05]]})
BATTERY = (SurfaceSpec.sphere(1.0), SurfaceSpec.sphere(0.5), STAR)


def verdict(n: int, ok: bool, detail: str, started: float) -> None:
    record_acceptance(f"CRITERION {n}: {'PASS' if ok else 'FAIL'}  ({time.perf_counter() - started:.1f} s)  {detail}")
    assert ok, detail


def _checks(checks) -> tuple[bool, str]:
    return all(c.passed for c in checks), "; ".join(f"{c.name}={c.value:.2e}" for c in checks)


def test_criterion_01_potential_oracles():
    t0 = time.perf_counter()
    checks = [check_gauss(s, 16) for s in BATTERY]
    checks.append(check_sphere_eigenvalues(24))
    checks += [check_jump_relation(s, 16) for s in (SurfaceSpec.sphere(1.0), STAR)]
    checks.append(check_hypersingular(16))
    ok, detail = _checks(checks)
    verdict(1, ok, detail, t0)


def test_criterion_02_background_solver():
    t0 = time.perf_counter()
    checks = check_background(SurfaceSpec.sphere(1.0), 16) + check_background(STAR, 16)
    ok, detail = _checks(checks)
    verdict(2, ok, detail, t0)


def test_criterion_03_taylor_identities(manufactured_problem, polynomial_problem):
    t0 = time.perf_counter()
    checks = [check_taylor_F(nonlinear_polynomial_family()), check_taylor_F(polynomial_problem.data)]
    checks.append(check_utilde_paths(manufactured_problem.background, manufactured_problem.rule_inner, 1e-3))
    ok, detail = _checks(checks)
    verdict(3, ok, detail, t0)


def test_criterion_04_structural_identity(polynomial_problem, manufactured_problem):
    t0 = time.perf_counter()
    rng = np.random.default_rng(4)
    worst_identity = 0.0
    count = 0
    for P in (polynomial_problem, manufactured_problem):
        c = P.cache
        grid = P.epsilon_grid
        for k in range(25):
            eps = grid[k % len(grid)]
            z = UnknownState.from_vector(0.1 * rng.standard_normal(c.n_state), c.n_outer, c.n_inner)
            M = eval_M(eps, z, c, P.background, P.data)
            NS = apply_N(eps, z, c, P.data) - eval_S(eps, z.psi_i, c, P.background, P.data)
            worst_identity = max(worst_identity, (M - NS).magnitude)
            count += 1
    # N(0) against a central-difference Jacobian of M at the eps = 0 solution, column by column
    P = manufactured_problem
    c = P.cache
    from nlinclusion.system import solve_limit

    z0 = solve_limit(c, P.background, P.data).to_vector()
    N0 = n_matrix(0.0, c, P.data)
    h = 1e-5
    cols = rng.choice(c.n_state, size=120, replace=False)
    worst_jac = 0.0
    for j in cols:
        e = np.zeros(c.n_state)
        e[j] = h
        Mp = eval_M(0.0, UnknownState.from_vector(z0 + e, c.n_outer, c.n_inner), c, P.background, P.data).stacked()
        Mm = eval_M(0.0, UnknownState.from_vector(z0 - e, c.n_outer, c.n_inner), c, P.background, P.data).stacked()
        worst_jac = max(worst_jac, float(np.abs((Mp - Mm) / (2 * h) - N0[:, j]).max()))
    ok = worst_identity < 1e-10 and worst_jac < 1e-6
    verdict(4, ok, f"identity max {worst_identity:.2e} over {count} states; N(0) vs FD Jacobian {worst_jac:.2e} on {len(cols)} columns", t0)


def _affine_errors(P, eps):
    c = P.cache
    state, rep = picard_solve(eps, c.zero_state(), c, P.background, P.data)
    fields = reconstruct_fields(eps, state, c, P.background, P.data.zeta_i)
    rows = field_samples(P, eps, fields)
    err = max(abs(u - x[0]) for _, x, u, _ in rows)
    rng = np.random.default_rng(5)
    d = rng.standard_normal((30, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    outer = d * (eps * 1.6 + (0.85 - eps * 1.6) * rng.random((30, 1)))
    inner = d * (eps * 0.8 * rng.random((30, 1)))
    err = max(err, np.abs(fields.u_outer(outer) - outer[:, 0]).max(), np.abs(fields.u_inner(inner) - inner[:, 0]).max())
    return float(err), rep


def test_criterion_05_affine_regression(affine_problem):
    t0 = time.perf_counter()
    errs, steps = [], []
    for eps in (0.05, 0.1, 0.2):
        err, rep = _affine_errors(affine_problem, eps)
        errs.append(err)
        steps.append(rep.iterations if rep.converged else -1)
    ok = max(errs) < 1e-6 and all(s == 1 for s in steps)
    verdict(5, ok, f"max |u - x1| = {max(errs):.2e}; Picard steps {steps}", t0)


def _quadratic(residuals, floor=1e-12) -> bool:
    r = [x for x in residuals if x > floor]
    pairs = [(a, b) for a, b in zip(r, r[1:]) if a < 1e-2]
    return all(b <= 10.0 * a * a for a, b in pairs) and len(residuals) >= 3


def test_criterion_06_manufactured_solve(manufactured_problem, manufactured_family, star_problem):
    t0 = time.perf_counter()
    details, ok = [], True
    for P, eps_list in ((manufactured_problem, (0.05, 0.1, 0.2)), (star_problem, (0.1,))):
        c, s = P.cache, P.solver
        for eps in eps_list:
            if P is manufactured_problem:
                # Newton from the previous family member
                eps_prev = max(e.epsilon for e in manufactured_family.entries if e.epsilon < eps)
                start = manufactured_family.entry(eps_prev).state
            else:
                from nlinclusion.cli import _warm_start

                start = _warm_start(P, eps)
            state, rep = newton_solve(eps, start, c, P.background, P.data, s["tol"], s["max_iter"])
            fields = reconstruct_fields(eps, state, c, P.background, P.data.zeta_i)
            rows = field_samples(P, eps, fields)
            ferr = max(abs(u - ex) for _, _, u, ex in rows)
            pde = residual_check_pde(eps, fields, P.data, P.rule_inner, P.rule_outer, P.background.f_o)
            good = ferr < 1e-6 and rep.residuals[-1] < 1e-10 and pde.worst < 1e-6 and _quadratic(rep.residuals)
            ok &= good
            details.append(
                f"[{P.rule_inner.spec.kind} eps={eps}] field err {ferr:.1e}, residual {rep.residuals[-1]:.1e}, "
                f"steps {rep.iterations}, pde {pde.worst:.1e}"
            )
    # cold start from the eps = 0 limit shows the quadratic phase over more steps
    P = manufactured_problem
    from nlinclusion.system import solve_limit

    state, rep = newton_solve(0.1, solve_limit(P.cache, P.background, P.data), P.cache, P.background, P.data)
    ok &= _quadratic(rep.residuals)
    details.append("residuals from the limit " + ", ".join(f"{r:.1e}" for r in rep.residuals))
    verdict(6, ok, "; ".join(details), t0)


def test_criterion_07_family_behaviour(manufactured_problem, manufactured_family, polynomial_problem, polynomial_family_record):
    from nlinclusion.continuation import fit_analytic

    t0 = time.perf_counter()
    ok, details = True, []
    for name, P, fam in (
        ("manufactured", manufactured_problem, manufactured_family),
        ("polynomial", polynomial_problem, polynomial_family_record),
    ):
        slope = fam.linear_rate()
        fit = fit_analytic(fam, P)
        good = fam.truncated_at is None and abs(slope - 1.0) <= 0.1 and fit.geometric_until_floor(10.0)
        ok &= good
        details.append(f"{name}: slope {slope:.4f}, fit residuals " + ", ".join(f"{r:.1e}" for r in fit.residuals))
    verdict(7, ok, "; ".join(details), t0)


def test_criterion_08_uniqueness_probe(probe_runs, delta_hat_floors):
    t0 = time.perf_counter()
    ok, details, total, distinct = True, [], 0, 0
    for name, (P, family, certs, probes, _) in probe_runs.items():
        floor = delta_hat_floors[name]["floor"]
        eps = np.array([c.epsilon for c in certs])
        L = np.array([c.L for c in certs])
        for cert, res in zip(certs, probes):
            entry = family.entry(res.epsilon)
            total += len(res.outcomes)
            distinct += len(res.distinct)
            inside = [o for o in res.outcomes if o.regime == "psi-only" and o.delta <= entry.delta_hat]
            ok &= bool(inside) and all(o.outcome == "returned" and o.final_distance < 1e-8 for o in inside)
            ok &= entry.delta_hat >= floor
        slope = float(np.polyfit(np.log(eps), np.log(L), 1)[0])
        ok &= bool(np.all(L < 1.0)) and slope > 0 and L[0] < L[-1]
        details.append(
            f"{name}: min delta_hat {min(e.delta_hat for e in family.entries):g} (floor {floor:g}), "
            f"L {L[0]:.1e}..{L[-1]:.1e}, log-log slope {slope:.2f}"
        )
    ok &= total >= 500 and distinct == 0
    verdict(8, ok, f"{total} probes, {distinct} distinct fixed points; " + "; ".join(details), t0)


def test_criterion_09_corollary(probe_runs):
    t0 = time.perf_counter()
    ok, details = True, []
    for name, (_, family, _, _, cor) in probe_runs.items():
        below = [r for e, r in zip(cor.epsilons, cor.returned) if e <= cor.eps_star]
        ok &= cor.eps_star > 0 and bool(below) and all(r == 1.0 for r in below)
        details.append(
            f"{name}: eps_star {cor.eps_star:g}, returned {min(cor.returned):.2f}..{max(cor.returned):.2f}; "
            f"control (size {cor.control_sizes[0]:g}, not asserted) returned {min(cor.control_returned):.2f}..{max(cor.control_returned):.2f}"
        )
    verdict(9, ok, "; ".join(details), t0)


def test_criterion_10_appendix_battery():
    t0 = time.perf_counter()
    ok, detail = _checks(check_appendix_battery(order=10, draws=100, seed=0))
    verdict(10, ok, detail, t0)


def test_criterion_11_determinism(tmp_path):
    t0 = time.perf_counter()
    cfg = load_json("polynomial.json")
    cfg.update({"epsilon_grid": [0.05, 0.1, 0.2], "probe": {"samples": 4, "contraction_samples": 3, "corollary_samples": 2}})
    path = tmp_path / "probe.json"
    import json

    path.write_text(json.dumps(cfg))
    outs = []
    for k, threads in enumerate((1, 3)):
        out = tmp_path / f"run{k}"
        code = main(["probe", "--config", str(path), "--out", str(out), "--seed", "7", "--threads", str(threads)])
        assert code == 0
        outs.append({name: (out / name).read_bytes() for name in ("probe.csv", "summary.csv")})
    same = outs[0] == outs[1]
    rows = outs[0]["probe.csv"].count(b"\n") - 1
    verdict(11, same, f"probe.csv ({rows} rows) and summary.csv byte-identical across two runs (threads 1 and 3)", t0)


if __name__ == "__main__":
    import sys

    sys.exit(pytest.main([__file__, "-q", "-s"]))
