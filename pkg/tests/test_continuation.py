import csv
import io
import json

import numpy as np
import pytest

from conftest import load_json, make_problem
from nlinclusion.continuation import (
    FAMILY_COLUMNS,
    PROBE_COLUMNS,
    combined_delta_hat,
    continue_family,
    contraction_certificate,
    family_to_csv,
    family_to_json,
    fit_analytic,
    probe_to_csv,
    probe_uniqueness,
)


def test_family_solves_every_grid_point(manufactured_family, manufactured_problem):
    fam = manufactured_family
    assert fam.truncated_at is None
    assert np.array_equal(fam.epsilons, np.array(manufactured_problem.epsilon_grid))
    assert all(e.report.converged for e in fam.entries)


def test_family_moves_linearly_away_from_limit(manufactured_family):
    assert manufactured_family.linear_rate() == pytest.approx(1.0, abs=0.05)
    assert manufactured_family.continuity_constant() < np.inf


def test_failing_solver_truncates(polynomial_problem):
    fam = continue_family(polynomial_problem, grid=[0.05, 0.1], max_iter=0)
    assert fam.truncated_at == 0.05 and fam.failure and not fam.entries


def test_fit_degree_zero_is_variance(manufactured_family, manufactured_problem):
    fit = fit_analytic(manufactured_family, manufactured_problem)
    Y = np.array(
        [np.concatenate([[e.state.zeta], manufactured_problem.rule_inner.to_coefficients(e.state.psi_i)[:9]]) for e in manufactured_family.entries]
    )
    assert fit.residuals[0] == pytest.approx(float(np.mean(Y.var(axis=0))), rel=1e-12)
    assert fit.degree_cap == min(6, len(manufactured_family.entries) - 2)
    assert all(a >= b for a, b in zip(fit.residuals, fit.residuals[1:]))


def test_fit_needs_three_points(affine_problem):
    fam = continue_family(affine_problem, grid=[0.05, 0.1])
    with pytest.raises(ValueError):
        fit_analytic(fam, affine_problem)


def test_affine_picard_map_is_constant(affine_problem):
    fam = continue_family(affine_problem)
    rep = contraction_certificate(affine_problem, fam.entries[0], deltas=[0.1, 1.0], num_samples=2)
    assert rep.L < 1e-10 and rep.delta_hat == 1.0


def test_lipschitz_estimators_agree(polynomial_family_record, polynomial_problem):
    entry = polynomial_family_record.entries[-1]
    rep = contraction_certificate(polynomial_problem, entry, deltas=[1e-3], num_samples=4)
    assert rep.L_fd > 0
    assert abs(rep.L_secant - rep.L_fd) <= 0.2 * rep.L_fd


def test_probe_small_run(polynomial_family_record, polynomial_problem):
    entry = polynomial_family_record.entries[-1]
    res = probe_uniqueness(polynomial_problem, entry, deltas=[0.1, 1.0], num_samples=2, newton_every=1)
    assert len(res.outcomes) == 2 * 2 * 2
    assert res.returned_fraction("psi-only") == 1.0 and not res.distinct
    assert res.delta_hat == 1.0
    cert = contraction_certificate(polynomial_problem, entry, deltas=[0.1, 1.0], num_samples=2)
    assert combined_delta_hat(cert, res) == min(cert.delta_hat, res.delta_hat)
    rows = list(csv.reader(io.StringIO(probe_to_csv([res]))))
    assert tuple(rows[0]) == PROBE_COLUMNS and len(rows) == 9


def test_probe_is_thread_independent(polynomial_family_record, polynomial_problem):
    entry = polynomial_family_record.entries[2]
    a = probe_uniqueness(polynomial_problem, entry, deltas=[1.0], num_samples=3, threads=1)
    b = probe_uniqueness(polynomial_problem, entry, deltas=[1.0], num_samples=3, threads=3)
    assert probe_to_csv([a]) == probe_to_csv([b])


def test_family_serialization(manufactured_family, manufactured_problem):
    rows = list(csv.reader(io.StringIO(family_to_csv(manufactured_family))))
    assert tuple(rows[0]) == FAMILY_COLUMNS
    assert len(rows) == len(manufactured_family.entries) + 1
    assert float(rows[1][1]) == manufactured_family.entries[0].epsilon
    doc = json.loads(family_to_json(manufactured_family, fit_analytic(manufactured_family, manufactured_problem), {"command": "t"}))
    assert doc["header"]["command"] == "t"
    assert len(doc["payload"]["entries"]) == len(manufactured_family.entries)
    assert doc["payload"]["fit"]["degrees"][0] == 0


def test_stronger_coupling_does_not_lower_L(manufactured_problem):
    obj = load_json("manufactured.json")
    obj["data"] = {**obj["data"], "coupling": [2 * c for c in obj["data"]["coupling"]]}
    strong = make_problem(obj, epsilon_grid=[0.1])
    strong_entry = continue_family(strong).entries[0]
    base_entry = continue_family(manufactured_problem, grid=[0.1]).entries[0]
    base = contraction_certificate(manufactured_problem, base_entry, deltas=[0.1], num_samples=4)
    doubled = contraction_certificate(strong, strong_entry, deltas=[0.1], num_samples=4)
    assert doubled.L >= base.L
