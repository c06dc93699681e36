import numpy as np
import pytest

from nlinclusion.errors import ConvergenceError, DomainError
from nlinclusion.system import (
    ExactFieldTraces,
    UnknownState,
    apply_J,
    apply_N,
    assemble_Lambda,
    assemble_N,
    eval_M,
    newton_solve,
    picard_solve,
    projected,
    reconstruct_fields,
    residual_check_pde,
    solve_J,
    solve_limit,
    state_from_fields,
)


def test_state_vector_round_trip(rng):
    z = rng.normal(size=10 + 2 * 4 + 1)
    s = UnknownState.from_vector(z, 10, 4)
    assert np.array_equal(s.to_vector(), z)
    with pytest.raises(ValueError):
        UnknownState.from_vector(z[:-1], 10, 4)


def test_J_on_first_harmonic(affine_problem):
    cache = affine_problem.cache
    y1 = cache.rule_inner.nodes[:, 0]
    assert np.abs(apply_J(y1, 0.0, cache) + y1 / 3).max() < 1e-10


def test_J_round_trip(affine_problem, rng):
    cache = affine_problem.cache
    rule = cache.rule_inner
    mu = rule.band_limit(rng.normal(size=rule.size))
    mu -= (rule.weights @ mu) / rule.weights.sum()
    f = apply_J(mu, 0.7, cache)
    mu2, xi = solve_J(f, cache)
    assert xi == pytest.approx(0.7, abs=1e-10)
    assert np.abs(mu2 - mu).max() < 1e-9


def test_background_is_harmonic_extension(affine_problem):
    bg = affine_problem.background
    x = np.array([[0.1, 0.2, 0.3], [-0.4, 0.1, 0.0]])
    assert np.abs(bg.value(x) - x[:, 0]).max() < 1e-10
    assert np.allclose(bg.gradient_at_origin, [1, 0, 0], atol=1e-10)
    with pytest.raises(DomainError):
        bg.check_points(np.array([[2.0, 0, 0]]))


def test_lambda_conditioning_is_uniform(manufactured_problem):
    conds = [assemble_Lambda(e, manufactured_problem.cache).condition for e in (0.0, 0.05, 0.1)]
    assert max(conds) / min(conds) < 2.0


@pytest.mark.parametrize("eps", [0.01, 0.1])
def test_exact_state_solves_M(manufactured_problem, eps):
    p = manufactured_problem
    state = state_from_fields(eps, p.exact, p.cache)
    assert eval_M(eps, state, p.cache, p.background, p.data).magnitude < 1e-8


@pytest.mark.parametrize("eps", [0.01, 0.2])
def test_exact_fields_satisfy_pde(manufactured_problem, eps):
    p = manufactured_problem
    traces = ExactFieldTraces(eps, p.exact, p.rule_inner, p.rule_outer)
    rep = residual_check_pde(eps, traces, p.data, p.rule_inner, p.rule_outer, p.background.f_o)
    assert rep.worst < 1e-10


def test_N_round_trip(polynomial_problem, rng):
    p = polynomial_problem
    cache = p.cache
    z = rng.normal(size=cache.n_state)
    system = assemble_N(0.1, cache, p.background, p.data)
    state = UnknownState.from_vector(z, cache.n_outer, cache.n_inner)
    rhs = apply_N(0.1, state, cache, p.data)
    z2 = cache.galerkin_solve(system, rhs.stacked(), ["o", "i", "i"], ["o", "i", "z", "i"])
    back = apply_N(0.1, UnknownState.from_vector(z2, cache.n_outer, cache.n_inner), cache, p.data)
    assert projected(cache, back - rhs).magnitude < 1e-9


def test_limit_solution(polynomial_problem):
    p = polynomial_problem
    state = solve_limit(p.cache, p.background, p.data)
    assert projected(p.cache, eval_M(0.0, state, p.cache, p.background, p.data)).magnitude < 1e-10


def test_affine_newton_converges_in_two_steps(affine_problem):
    p = affine_problem
    start = solve_limit(p.cache, p.background, p.data)
    state, rep = newton_solve(0.1, start, p.cache, p.background, p.data, tol=1e-10)
    assert rep.converged and rep.iterations <= 2
    # affine data: the field in the inclusion equals the background value at the origin plus a harmonic
    fields = reconstruct_fields(0.1, state, p.cache, p.background, p.data.zeta_i)
    pde = residual_check_pde(0.1, fields, p.data, p.rule_inner, p.rule_outer, p.background.f_o)
    assert pde.worst < 1e-6


def test_perturbed_state_has_large_pde_residual(manufactured_problem):
    p = manufactured_problem
    eps = 0.1
    state = state_from_fields(eps, p.exact, p.cache)
    bumped = state.replace(psi_i=state.psi_i + 0.01 * p.rule_inner.nodes[:, 2])
    fields = reconstruct_fields(eps, bumped, p.cache, p.background, p.data.zeta_i)
    pde = residual_check_pde(eps, fields, p.data, p.rule_inner, p.rule_outer, p.background.f_o)
    assert pde.worst >= 1e-3


def test_picard_and_newton_agree(polynomial_problem):
    p = polynomial_problem
    start = solve_limit(p.cache, p.background, p.data)
    s1, r1 = picard_solve(0.05, start, p.cache, p.background, p.data, tol=1e-11)
    s2, r2 = newton_solve(0.05, start, p.cache, p.background, p.data, tol=1e-11)
    assert r1.converged and r2.converged
    assert s1.distance(s2, p.cache) < 1e-9
    orders = r2.convergence_orders()
    assert orders and max(orders) > 1.5


def test_newton_failure_reports(polynomial_problem):
    p = polynomial_problem
    start = solve_limit(p.cache, p.background, p.data)
    with pytest.raises(ConvergenceError) as info:
        newton_solve(0.1, start, p.cache, p.background, p.data, tol=1e-30, max_iter=1)
    assert info.value.report is not None and not info.value.report.converged
