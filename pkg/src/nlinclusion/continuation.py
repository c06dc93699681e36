"""Solution families in ``eps``, analyticity fits, contraction certificates and basin probes.

The uniqueness radius reported here is empirical: a sampled Lipschitz constant
of the Picard map ``psi -> [N^-1 S(psi)]_psi`` together with the outcome of
Picard runs started from perturbed densities.  Perturbation sizes are measured
in the discrete C^{1,alpha} norm of the inner density and scale like ``eps * delta``.
"""

from __future__ import annotations

import csv
import io
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .config import SCHEMA_VERSION, Problem
from .errors import ConvergenceError, SolverError
from .holder import HolderConfig, c1alpha_norm
from .system import (
    SolveReport,
    UnknownState,
    assemble_N,
    eval_S,
    newton_solve,
    picard_solve,
    solve_limit,
)

__all__ = [
    "FamilyEntry",
    "FamilyRecord",
    "FitReport",
    "ContractionReport",
    "ProbeOutcome",
    "BasinProbeResult",
    "CorollaryReport",
    "continue_family",
    "fit_analytic",
    "contraction_certificate",
    "probe_uniqueness",
    "family_uniqueness_check",
    "family_to_json",
    "family_to_csv",
    "probe_to_json",
    "probe_to_csv",
    "combined_delta_hat",
]

RETURNED = "returned"
DIVERGED = "diverged"
DISTINCT = "escaped-to-distinct-fixed-point"


# ---------------------------------------------------------------------------
# Family
# ---------------------------------------------------------------------------
@dataclass
class FamilyEntry:
    epsilon: float
    state: UnknownState
    report: SolveReport
    distance_to_limit: float
    psi_distance_c1a: float
    trace_distance_c1a: float
    L: float | None = None
    delta_hat: float | None = None
    returned_fraction: float | None = None


@dataclass
class FamilyRecord:
    """Solved entries sorted by ``eps`` plus the ``eps = 0`` limit."""

    limit: UnknownState
    entries: list[FamilyEntry] = field(default_factory=list)
    truncated_at: float | None = None
    failure: str | None = None

    @property
    def epsilons(self) -> np.ndarray:
        return np.array([e.epsilon for e in self.entries])

    def entry(self, epsilon: float) -> FamilyEntry:
        for e in self.entries:
            if e.epsilon == epsilon:
                return e
        raise KeyError(epsilon)

    def linear_rate(self) -> float:
        """Log-log slope of ``||state(eps) - state(0)||`` against ``eps``."""
        eps = self.epsilons
        d = np.array([e.distance_to_limit for e in self.entries])
        keep = d > 0
        if keep.sum() < 2:
            return float("nan")
        return float(np.polyfit(np.log(eps[keep]), np.log(d[keep]), 1)[0])

    def continuity_constant(self, limit_distance: bool = True) -> float:
        """Largest ``||state(e_k+1) - state(e_k)|| / (e_k+1 - e_k)`` over the grid."""
        out = 0.0
        prev_e, prev_d = 0.0, 0.0
        for e in self.entries:
            if e.epsilon > prev_e:
                out = max(out, abs(e.distance_to_limit - prev_d) / (e.epsilon - prev_e))
            prev_e, prev_d = e.epsilon, e.distance_to_limit
        return out


def _holder(problem: Problem) -> HolderConfig:
    return HolderConfig(alpha=problem.config.alpha, seed=problem.config.seed)


def continue_family(problem: Problem, grid=None, tol: float | None = None, max_iter: int | None = None) -> FamilyRecord:
    """Warm-started Newton along the grid, seeded with the ``eps = 0`` limit.

    A Newton failure truncates the family; the failing ``eps`` and message are kept.
    """
    cache, bg, data = problem.cache, problem.background, problem.data
    tol = problem.solver["tol"] if tol is None else tol
    max_iter = problem.solver["max_iter"] if max_iter is None else max_iter
    grid = sorted(problem.epsilon_grid if grid is None else grid)
    limit = solve_limit(cache, bg, data)
    record = FamilyRecord(limit)
    hc = _holder(problem)
    ri = problem.rule_inner
    beta0 = cache.half_plus_W_i @ limit.psi_i
    state = limit
    for eps in grid:
        try:
            state, rep = newton_solve(eps, state, cache, bg, data, tol, max_iter)
        except (ConvergenceError, SolverError) as exc:
            record.truncated_at = float(eps)
            record.failure = str(exc)
            break
        dpsi = state.psi_i - limit.psi_i
        record.entries.append(
            FamilyEntry(
                float(eps),
                state,
                rep,
                state.distance(limit, cache),
                c1alpha_norm(dpsi, ri, hc),
                c1alpha_norm(cache.half_plus_W_i @ state.psi_i - beta0, ri, hc),
            )
        )
    return record


@dataclass(frozen=True)
class FitReport:
    """Mean-squared residuals of least-squares polynomial fits in ``eps`` per degree."""

    degrees: tuple[int, ...]
    residuals: tuple[float, ...]
    zeta_residuals: tuple[float, ...]
    noise_floor: float
    degree_cap: int

    def decay_ratios(self) -> list[float]:
        r = self.residuals
        return [r[k] / r[k + 1] if r[k + 1] > 0 else float("inf") for k in range(len(r) - 1)]

    def geometric_until_floor(self, factor: float = 10.0) -> bool:
        """Every step above the noise floor reduces the residual by at least ``factor``."""
        r = self.residuals
        for k in range(len(r) - 1):
            if r[k] <= self.noise_floor:
                return True
            if r[k + 1] > self.noise_floor and r[k] / r[k + 1] < factor:
                return False
        return True

    def to_dict(self) -> dict:
        return {
            "degrees": list(self.degrees),
            "residuals": list(self.residuals),
            "zeta_residuals": list(self.zeta_residuals),
            "noise_floor": self.noise_floor,
            "degree_cap": self.degree_cap,
        }


def _moments(problem: Problem, psi: np.ndarray) -> np.ndarray:
    """Degree <= 2 harmonic coefficients of ``psi``."""
    return problem.rule_inner.to_coefficients(psi)[:9]


def fit_analytic(family: FamilyRecord, problem: Problem, max_degree: int = 6, noise_floor: float = 1e-20) -> FitReport:
    """Fit ``zeta(eps)`` and low-order moments of ``psi_i(eps)`` by polynomials of increasing degree.

    The residual of a fit is the mean over grid points and observables of the
    squared deviation; the degree is capped at ``n_points - 2``.
    """
    eps = family.epsilons
    n = len(eps)
    if n < 3:
        raise ValueError("need at least three grid points to fit")
    cap = min(max_degree, n - 2)
    Y = np.array([np.concatenate([[e.state.zeta], _moments(problem, e.state.psi_i)]) for e in family.entries])
    scale = max(float(np.abs(Y).max()), 1.0)
    floor = noise_floor * scale**2
    res, zres = [], []
    x = (eps - eps.mean()) / max(np.ptp(eps), 1e-300)
    for deg in range(cap + 1):
        V = np.vander(x, deg + 1)
        coef, *_ = np.linalg.lstsq(V, Y, rcond=None)
        R = Y - V @ coef
        res.append(float(np.mean(R**2)))
        zres.append(float(np.mean(R[:, 0] ** 2)))
    return FitReport(tuple(range(cap + 1)), tuple(res), tuple(zres), floor, cap)


# ---------------------------------------------------------------------------
# Perturbations
# ---------------------------------------------------------------------------
def _perturbation_space(problem: Problem) -> np.ndarray:
    """Nodal basis of the band-limited perturbations (degree <= L/2), orthonormal in the weighted l2 metric."""
    ri = problem.rule_inner
    lmax = ri.lmax // 2
    B = ri.synthesis[:, : (lmax + 1) ** 2]
    sw = np.sqrt(ri.weights)[:, None]
    q, _ = np.linalg.qr(sw * B)
    return q / sw


def _draw(problem: Problem, rng: np.random.Generator, size: float, basis: np.ndarray) -> np.ndarray:
    p = basis @ rng.standard_normal(basis.shape[1])
    return p * (size / c1alpha_norm(p, problem.rule_inner, _holder(problem)))


def _picard_psi(problem: Problem, eps: float, psi: np.ndarray) -> np.ndarray:
    cache = problem.cache
    system = assemble_N(eps, cache, problem.background, problem.data)
    rhs = eval_S(eps, psi, cache, problem.background, problem.data).stacked()
    z = cache.galerkin_solve(system, rhs, ["o", "i", "i"], ["o", "i", "z", "i"])
    return z[cache.n_outer + cache.n_inner + 1 :]


def _wnorm(problem: Problem, v: np.ndarray) -> float:
    return float(np.sqrt(problem.rule_inner.weights @ (v * v)))


def _seed(seed: int, *idx: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), *map(int, idx)]))


# ---------------------------------------------------------------------------
# Contraction certificate
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class ContractionReport:
    """Sampled Lipschitz constants of the Picard map around a family solution."""

    epsilon: float
    L: float
    L_secant: float
    L_fd: float
    samples: int
    deltas: tuple[float, ...]
    L_per_delta: tuple[float, ...]
    delta_hat: float

    def to_dict(self) -> dict:
        return {
            "epsilon": self.epsilon,
            "L": self.L,
            "L_secant": self.L_secant,
            "L_fd": self.L_fd,
            "samples": self.samples,
            "deltas": list(self.deltas),
            "L_per_delta": list(self.L_per_delta),
            "delta_hat": self.delta_hat,
        }


def _fd_lipschitz(problem: Problem, eps: float, psi: np.ndarray, basis: np.ndarray, h: float) -> float:
    sw = np.sqrt(problem.rule_inner.weights)
    cols = []
    for k in range(basis.shape[1]):
        d = basis[:, k]
        cols.append(sw * (_picard_psi(problem, eps, psi + h * d) - _picard_psi(problem, eps, psi - h * d)) / (2 * h))
    return float(np.linalg.norm(np.array(cols).T, 2))


def _secant_lipschitz(problem, eps, psi, basis, size, rng, power_steps: int = 3) -> float:
    """Largest ratio over pairs ``(psi + p, psi)``; each pair direction is refined by secant power steps."""
    base = _picard_psi(problem, eps, psi)
    sw = np.sqrt(problem.rule_inner.weights)
    p = _draw(problem, rng, size, basis)
    best = 0.0
    for _ in range(power_steps + 1):
        diff = _picard_psi(problem, eps, psi + p) - base
        ratio = _wnorm(problem, diff) / _wnorm(problem, p)
        best = max(best, ratio)
        # next direction: the image projected onto the perturbation space, at the same size
        c = basis.T @ (sw**2 * diff)
        q = basis @ c
        nq = _wnorm(problem, q)
        if nq == 0 or not np.isfinite(nq):
            break
        p = q * (_wnorm(problem, p) / nq)
    return best


def contraction_certificate(
    problem: Problem,
    entry: FamilyEntry,
    deltas=None,
    num_samples: int | None = None,
    seed: int | None = None,
    eps_index: int = 0,
    fd_step: float = 1e-6,
) -> ContractionReport:
    """Secant and finite-difference estimates of the Picard map's Lipschitz constant.

    For every ladder radius ``delta`` (ascending) the secant estimate uses pairs at
    C^{1,alpha} distance ``eps * delta``; ``delta_hat`` is the largest radius such
    that every radius up to it has a sampled constant below one.
    """
    pc = problem.config.probe
    deltas = tuple(sorted(pc["deltas"] if deltas is None else deltas))
    num_samples = pc["contraction_samples"] if num_samples is None else num_samples
    seed = problem.config.seed if seed is None else seed
    eps = entry.epsilon
    psi = entry.state.psi_i
    basis = _perturbation_space(problem)
    L_fd = _fd_lipschitz(problem, eps, psi, basis, fd_step)
    per = []
    for j, delta in enumerate(deltas):
        Ls = [
            _secant_lipschitz(problem, eps, psi, basis, eps * delta, _seed(seed, eps_index, j, s, 1))
            for s in range(num_samples)
        ]
        per.append(max(Ls))
    delta_hat = 0.0
    for delta, L in zip(deltas, per):
        if not L < 1.0:
            break
        delta_hat = delta
    L_sec = per[0]
    return ContractionReport(eps, max(L_sec, L_fd), L_sec, L_fd, num_samples, deltas, tuple(per), delta_hat)


# ---------------------------------------------------------------------------
# Basin probes
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class ProbeOutcome:
    epsilon: float
    delta: float
    sample: int
    regime: str
    outcome: str
    iterations: int
    final_distance: float
    final_residual: float
    newton_outcome: str | None = None


@dataclass
class BasinProbeResult:
    """All probe outcomes at one ``eps`` and the empirical basin radius ``delta_hat``."""

    epsilon: float
    outcomes: list[ProbeOutcome]
    delta_hat: float
    merge_tol: float

    def returned_fraction(self, regime: str = "psi-only", max_delta: float | None = None) -> float:
        sel = [o for o in self.outcomes if o.regime == regime and (max_delta is None or o.delta <= max_delta)]
        return sum(o.outcome == RETURNED for o in sel) / len(sel) if sel else float("nan")

    @property
    def distinct(self) -> list[ProbeOutcome]:
        return [o for o in self.outcomes if o.outcome == DISTINCT or o.newton_outcome == DISTINCT]

    def to_dict(self) -> dict:
        return {
            "epsilon": self.epsilon,
            "delta_hat": self.delta_hat,
            "merge_tol": self.merge_tol,
            "outcomes": [o.__dict__ for o in self.outcomes],
        }


def _classify(converged: bool, distance: float, merge_tol: float) -> str:
    if not converged:
        return DIVERGED
    return RETURNED if distance < merge_tol else DISTINCT


def _one_probe(problem, entry, delta, j, s, regime, seed, eps_index, basis, newton_check):
    pc = problem.config.probe
    eps = entry.epsilon
    cache = problem.cache
    rng = _seed(seed, eps_index, j, s, 0 if regime == "psi-only" else 2)
    size = eps * delta
    start = entry.state.replace(psi_i=entry.state.psi_i + _draw(problem, rng, size, basis))
    if regime == "joint":
        # also move the outer density, the inner density and zeta by comparable amounts
        ro = problem.rule_outer
        po = ro.synthesis[:, : (ro.lmax // 2 + 1) ** 2] @ rng.standard_normal((ro.lmax // 2 + 1) ** 2)
        po *= size / max(np.abs(po).max(), 1e-300)
        pi = _draw(problem, rng, size, basis)
        pi -= (problem.rule_inner.weights @ pi) / problem.rule_inner.area
        start = start.replace(phi_o=start.phi_o + po, phi_i=start.phi_i + pi, zeta=start.zeta + size * rng.standard_normal())
    final, rep = picard_solve(eps, start, cache, problem.background, problem.data, pc["picard_tol"], pc["picard_max_iter"])
    dist = final.distance(entry.state, cache) if rep.converged else float("inf")
    outcome = _classify(rep.converged, dist, pc["merge_tol"])
    n_out = None
    if newton_check:
        try:
            nfinal, nrep = newton_solve(eps, start, cache, problem.background, problem.data, pc["picard_tol"], 50, raise_on_failure=False)
            ndist = nfinal.distance(entry.state, cache) if nrep.converged else float("inf")
            n_out = _classify(nrep.converged, ndist, pc["merge_tol"])
        except SolverError:
            n_out = DIVERGED
    return ProbeOutcome(eps, float(delta), s, regime, outcome, rep.iterations, float(dist), float(rep.residuals[-1]), n_out)


def probe_uniqueness(
    problem: Problem,
    entry: FamilyEntry,
    deltas=None,
    num_samples: int | None = None,
    seed: int | None = None,
    eps_index: int = 0,
    regimes=("psi-only", "joint"),
    newton_every: int = 5,
    threads: int = 1,
) -> BasinProbeResult:
    """Perturb the family solution and classify where Picard iteration ends.

    Seeds derive from ``(seed, eps_index, delta_index, sample)``, so results do
    not depend on ``threads``.  ``delta_hat`` is the largest ladder radius up
    to which every ``psi-only`` probe returned.
    """
    pc = problem.config.probe
    deltas = tuple(sorted(pc["deltas"] if deltas is None else deltas))
    num_samples = pc["samples"] if num_samples is None else num_samples
    seed = problem.config.seed if seed is None else seed
    basis = _perturbation_space(problem)
    jobs = [
        (d, j, s, r)
        for r in regimes
        for j, d in enumerate(deltas)
        for s in range(num_samples)
    ]

    def run(job):
        d, j, s, r = job
        return _one_probe(problem, entry, d, j, s, r, seed, eps_index, basis, newton_every > 0 and s % newton_every == 0)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            outcomes = list(ex.map(run, jobs))
    else:
        outcomes = [run(job) for job in jobs]
    delta_hat = 0.0
    for d in deltas:
        sel = [o for o in outcomes if o.regime == "psi-only" and o.delta == d]
        if not all(o.outcome == RETURNED for o in sel):
            break
        delta_hat = d
    return BasinProbeResult(entry.epsilon, outcomes, delta_hat, pc["merge_tol"])


def combined_delta_hat(contraction: ContractionReport, probe: BasinProbeResult) -> float:
    """Largest radius certified by both the sampled contraction and the probe returns."""
    return min(contraction.delta_hat, probe.delta_hat)


# ---------------------------------------------------------------------------
# Competing families
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class CorollaryReport:
    """Return fractions for ``o(eps)`` competing starts and for the ``Theta(1)`` control."""

    epsilons: tuple[float, ...]
    sizes: tuple[float, ...]
    returned: tuple[float, ...]
    control_sizes: tuple[float, ...]
    control_returned: tuple[float, ...]
    eps_star: float
    exponent: float

    def to_dict(self) -> dict:
        return {
            "epsilons": list(self.epsilons),
            "sizes": list(self.sizes),
            "returned_fraction": list(self.returned),
            "control_sizes": list(self.control_sizes),
            "control_returned_fraction": list(self.control_returned),
            "eps_star": self.eps_star,
            "exponent": self.exponent,
        }


def family_uniqueness_check(
    problem: Problem,
    family: FamilyRecord,
    c: float | None = None,
    exponent: float = 1.5,
    num_samples: int | None = None,
    control_factor: float | None = None,
    seed: int | None = None,
) -> CorollaryReport:
    """Start Picard at C^{1,alpha} distance ``c eps^exponent`` from each family density.

    ``eps_star`` is the largest grid ``eps`` below which every start returned.
    The control uses distance ``control_factor * c`` independently of ``eps``
    and is reported, not asserted.
    """
    pc = problem.config.probe
    c = pc["corollary_c"] if c is None else c
    num_samples = pc["corollary_samples"] if num_samples is None else num_samples
    control_factor = pc["negative_factor"] if control_factor is None else control_factor
    seed = problem.config.seed if seed is None else seed
    basis = _perturbation_space(problem)
    eps_list, sizes, ret, csz, cret = [], [], [], [], []

    def fraction(entry, size, k, tag):
        n_ret = 0
        for s in range(num_samples):
            rng = _seed(seed, k, s, tag, 7)
            start = entry.state.replace(psi_i=entry.state.psi_i + _draw(problem, rng, size, basis))
            final, rep = picard_solve(entry.epsilon, start, problem.cache, problem.background, problem.data, pc["picard_tol"], pc["picard_max_iter"])
            dist = final.distance(entry.state, problem.cache) if rep.converged else float("inf")
            n_ret += _classify(rep.converged, dist, pc["merge_tol"]) == RETURNED
        return n_ret / num_samples

    for k, entry in enumerate(family.entries):
        eps = entry.epsilon
        size = c * eps**exponent
        eps_list.append(eps)
        sizes.append(size)
        ret.append(fraction(entry, size, k, 0))
        csz.append(control_factor * c)
        cret.append(fraction(entry, control_factor * c, k, 1))
    eps_star = 0.0
    for e, r in zip(eps_list, ret):
        if r < 1.0:
            break
        eps_star = e
    return CorollaryReport(tuple(eps_list), tuple(sizes), tuple(ret), tuple(csz), tuple(cret), eps_star, exponent)


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------
FAMILY_COLUMNS = ("schema_version", "epsilon", "zeta", "residual", "L", "delta_hat", "returned_fraction")
PROBE_COLUMNS = ("schema_version", "epsilon", "delta", "sample", "regime", "outcome", "iterations", "final_distance", "newton_outcome")


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _csv(columns, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    return buf.getvalue()


def family_to_csv(family: FamilyRecord) -> str:
    rows = [
        (SCHEMA_VERSION, e.epsilon, e.state.zeta, e.report.residuals[-1], e.L, e.delta_hat, e.returned_fraction)
        for e in family.entries
    ]
    return _csv(FAMILY_COLUMNS, rows)


def family_to_json(family: FamilyRecord, fit: FitReport | None = None, header: dict | None = None) -> str:
    payload = {
        "schema_version": SCHEMA_VERSION,
        "truncated_at": family.truncated_at,
        "failure": family.failure,
        "limit_zeta": family.limit.zeta,
        "linear_rate": family.linear_rate(),
        "entries": [
            {
                "epsilon": e.epsilon,
                "zeta": e.state.zeta,
                "report": e.report.to_dict(),
                "distance_to_limit": e.distance_to_limit,
                "psi_distance_c1a": e.psi_distance_c1a,
                "trace_distance_c1a": e.trace_distance_c1a,
                "L": e.L,
                "delta_hat": e.delta_hat,
                "returned_fraction": e.returned_fraction,
            }
            for e in family.entries
        ],
        "fit": fit.to_dict() if fit else None,
    }
    return json.dumps({"header": header or {}, "payload": payload}, indent=2, sort_keys=True)


def probe_to_csv(results: list[BasinProbeResult]) -> str:
    rows = [
        (SCHEMA_VERSION, o.epsilon, o.delta, o.sample, o.regime, o.outcome, o.iterations, o.final_distance, o.newton_outcome)
        for r in results
        for o in r.outcomes
    ]
    return _csv(PROBE_COLUMNS, rows)


def probe_to_json(results, contraction, corollary: CorollaryReport | None = None, header: dict | None = None) -> str:
    payload = {
        "schema_version": SCHEMA_VERSION,
        "probes": [r.to_dict() for r in results],
        "contraction": [c.to_dict() for c in contraction],
        "corollary": corollary.to_dict() if corollary else None,
    }
    return json.dumps({"header": header or {}, "payload": payload}, indent=2, sort_keys=True, default=float)
