import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from levyflow.core import DriftParams, FadeParams, ObservationGroup, ObservationSet, SpaceTimeGrid
from levyflow.invfit import (
    FitError,
    FitProblem,
    armijo_step,
    fd_jacobian,
    fit,
    lm_direction,
    objective,
    observations_from_solution,
)

BASE = FadeParams(0.8, 0.9999, 0.1859783, DriftParams(0.1, 0.0003, 0.1, 0.0003, 50.0), 0.0, 50.0)


def seam_problem(model, n_obs=2, observed=None, weights=(1.0,), **kwargs):
    """FitProblem whose forward map is replaced by ``model``."""
    observed = np.zeros(n_obs) if observed is None else np.asarray(observed, float)
    groups, start = [], 0
    sizes = np.array_split(np.arange(n_obs), len(weights))
    for t, (w, idx) in enumerate(zip(weights, sizes), start=1):
        groups.append(ObservationGroup(float(t), np.arange(idx.size, dtype=float),
                                       observed[idx], w))
    grid = SpaceTimeGrid.uniform(0.0, 50.0, 10, 2.0)
    return FitProblem(ObservationSet(tuple(groups)), BASE, grid, 5.0, model=model, **kwargs)


@pytest.fixture(scope="module")
def synthetic():
    grid = SpaceTimeGrid.uniform(0.0, 50.0, 100, 20.0)
    locations = [np.linspace(2.0, 30.0, 12)]
    obs = observations_from_solution(BASE, grid, 5.0, locations, [20.0], clip_negative=True)
    return FitProblem(obs, BASE, grid, 5.0, solver_options={"clip_negative": True})


# --- objective --------------------------------------------------------------

def test_objective_vanishes_at_generating_parameters(synthetic):
    assert objective([0.1, 0.0003], synthetic) <= 1e-20


def test_objective_single_observation():
    prob = seam_problem(lambda a: np.array([a[0]]), n_obs=1, observed=[0.25])
    assert objective([1.0, 0.0], prob) == pytest.approx(0.75**2 / 2)


def test_objective_weights_groups():
    observed = [1.0, 2.0, 3.0, 4.0]
    model = lambda a: np.array([a[0]] * 4)
    prob = seam_problem(model, 4, observed, weights=(2.0, 1.0))
    sse1 = (0.0 - 1.0) ** 2 + (0.0 - 2.0) ** 2
    sse2 = 9.0 + 16.0
    assert objective([0.0, 0.0], prob) == pytest.approx(2.0 * sse1 / 2 + sse2 / 2)


# --- Jacobian ---------------------------------------------------------------

def test_residual_is_zero_at_truth(synthetic):
    _, r = fd_jacobian([0.1, 0.0003], synthetic)
    np.testing.assert_allclose(r, 0.0, atol=1e-14)


def test_unused_branch_gives_zero_column():
    drift = DriftParams(0.1, 0.0003, 0.1, 0.0003, 50.0)  # right branch never reached
    params = BASE.with_drift(drift)
    grid = SpaceTimeGrid.uniform(0.0, 50.0, 100, 10.0)
    obs = observations_from_solution(params, grid, 5.0, [np.linspace(2, 20, 5)], [10.0],
                                     clip_negative=True)
    prob = FitProblem(obs, params, grid, 5.0, pair="a23", solver_options={"clip_negative": True})
    J, _ = fd_jacobian(prob.initial_alpha(), prob)
    np.testing.assert_array_equal(J, 0.0)


@settings(max_examples=30, deadline=None)
@given(a=st.floats(0.5, 5.0), b=st.floats(0.5, 5.0))
def test_jacobian_of_planted_square_map(a, b):
    prob = seam_problem(lambda x: x**2, fd_delta=1e-6)
    J, r = fd_jacobian([a, b], prob)
    exact = np.diag([2 * a, 2 * b])
    steps = 1e-6 * np.array([a, b])
    # forward difference of x^2 has error exactly equal to the step
    np.testing.assert_allclose(np.diag(J), np.diag(exact) + steps, rtol=1e-6)
    assert np.max(np.abs(J - exact)) <= 2 * steps.max()
    np.testing.assert_allclose(r, [a * a, b * b])


def test_infeasible_perturbation_raises():
    # a(50) = a0 - 50 a1 = 0, so any increase of a1 leaves the feasible set
    params = BASE.with_drift(DriftParams(0.015, 0.0003, 0.015, 0.0003, 50.0))
    grid = SpaceTimeGrid.uniform(0.0, 50.0, 10, 2.0)
    obs = ObservationSet((ObservationGroup(2.0, np.array([10.0]), np.array([0.01])),))
    prob = FitProblem(obs, params, grid, 5.0, solver_options={"clip_negative": True})
    with pytest.raises(FitError, match="infeasible"):
        fd_jacobian(prob.initial_alpha(), prob)


# --- direction --------------------------------------------------------------

def test_direction_vanishes_without_residual():
    np.testing.assert_array_equal(lm_direction(np.eye(2), np.zeros(2), 0.1), 0.0)


def test_large_penalty_gives_gradient_direction(rng):
    J = rng.normal(size=(7, 2))
    r = rng.normal(size=7)
    d = lm_direction(J, r, 1e12)
    g = -J.T @ r
    angle = np.arccos(np.dot(d, g) / (np.linalg.norm(d) * np.linalg.norm(g)))
    assert angle < 1e-3


def test_direction_two_by_two_by_hand():
    J = np.array([[2.0, 0.0], [0.0, 1.0]])
    r = np.array([1.0, 3.0])
    # (J^T J + I) = diag(5, 2); J^T r = (2, 3)
    np.testing.assert_allclose(lm_direction(J, r, 1.0), [-2.0 / 5.0, -3.0 / 2.0])


def test_singular_system_without_penalty_raises():
    J = np.array([[1.0, 1.0], [1.0, 1.0]])
    with pytest.raises(np.linalg.LinAlgError, match="increase the penalty"):
        lm_direction(J, np.ones(2), 0.0)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-10, 10), min_size=6, max_size=6),
       st.lists(st.floats(-10, 10), min_size=3, max_size=3),
       st.floats(1e-6, 1e3))
def test_direction_is_descent(Jflat, r, penalty):
    J = np.array(Jflat).reshape(3, 2)
    r = np.array(r)
    g = J.T @ r
    if np.linalg.norm(g) < 1e-8:
        return
    assert np.dot(lm_direction(J, r, penalty), g) < 0.0


# --- line search ------------------------------------------------------------

def quadratic_problem(k=3.0):
    return seam_problem(lambda a: k * a, armijo_sigma=1e-4, armijo_rho=0.5)


def test_zero_direction_accepts_full_step():
    prob = quadratic_problem()
    t, new, f, m = armijo_step([1.0, 2.0], [0.0, 0.0], prob, grad=[9.0, 18.0])
    assert m == 0 and t == 1.0
    np.testing.assert_array_equal(new, [1.0, 2.0])


def test_newton_step_on_quadratic_is_accepted():
    prob = quadratic_problem(k=3.0)
    alpha = np.array([1.0, -2.0])
    grad = 9.0 * alpha
    t, new, f, m = armijo_step(alpha, -alpha, prob, grad)
    assert m == 0
    np.testing.assert_allclose(new, 0.0, atol=1e-15)


@pytest.mark.parametrize("scale,expected_m", [(3.0, 1), (10.0, 3)])
def test_overshooting_step_backtracks_to_hand_value(scale, expected_m):
    # f(alpha + t d) / f(alpha) = (1 - scale*t)^2; Armijo needs that <= 1 - 2*sigma*scale*t
    prob = quadratic_problem(k=1.0)
    alpha = np.array([1.0, 1.0])
    _, _, _, m = armijo_step(alpha, -scale * alpha, prob, grad=alpha)
    sigma = prob.armijo_sigma
    hand = next(j for j in range(40)
                if (1 - scale * 0.5**j) ** 2 <= 1 - 2 * sigma * scale * 0.5**j)
    assert m == hand == expected_m


def test_ascent_direction_exhausts_backtracks():
    prob = seam_problem(lambda a: a, max_backtracks=5)
    with pytest.raises(FitError, match="Armijo"):
        armijo_step([1.0, 1.0], [1.0, 1.0], prob, grad=[1.0, 1.0])


# --- full iteration ---------------------------------------------------------

def test_fit_stops_immediately_at_optimum(synthetic):
    result = fit(synthetic, [0.1, 0.0003])
    assert result.converged and result.iterations <= 1
    np.testing.assert_allclose(result.alpha, [0.1, 0.0003], atol=1e-8)


def test_fit_recovers_planted_drift(synthetic):
    result = fit(synthetic, [0.12, 0.00036])
    assert result.converged
    np.testing.assert_allclose(result.alpha, [0.1, 0.0003], rtol=0.01)
    objectives = result.trace.objectives
    assert all(b <= a for a, b in zip(objectives, objectives[1:]))


def test_penalty_halves_every_iteration():
    prob = seam_problem(lambda a: np.array([np.exp(a[0]) - 2.0, a[1] ** 3 + a[1] - 1.0]),
                        penalty0=0.8, tol=1e-12)
    result = fit(prob, [0.0, 0.0])
    penalties = [rec.penalty for rec in result.trace.records]
    assert len(penalties) > 3
    np.testing.assert_array_equal(penalties, 0.8 * 0.5 ** np.arange(len(penalties)))
    np.testing.assert_allclose(result.alpha, [np.log(2.0), 0.6823278038280193], atol=1e-8)


def test_adaptive_penalty_is_opt_in():
    model = lambda a: np.array([np.exp(a[0]) - 2.0, a[1] ** 3 + a[1] - 1.0])
    result = fit(seam_problem(model, penalty0=0.8, adaptive_penalty=True), [0.0, 0.0])
    np.testing.assert_allclose(result.alpha, [np.log(2.0), 0.6823278038280193], atol=1e-7)


def test_fit_error_carries_partial_trace():
    calls = {"n": 0}

    def flaky(a):
        calls["n"] += 1
        if calls["n"] > 6:
            raise FitError("solver exploded", alpha=a)
        return np.array([np.exp(a[0]) - 2.0, a[1] - 1.0])

    with pytest.raises(FitError) as info:
        fit(seam_problem(flaky, tol=1e-14), [0.0, 0.0])
    assert info.value.trace is not None and len(info.value.trace) >= 1


@pytest.mark.parametrize("field,value", [("armijo_rho", 1.0), ("armijo_sigma", 0.5),
                                         ("penalty0", 0.0), ("fd_delta", 0.0), ("tol", 0.0),
                                         ("pair", "a02")])
def test_problem_validates_knobs(field, value):
    with pytest.raises(ValueError):
        seam_problem(lambda a: a, **{field: value})


def test_parallel_jacobian_matches_serial(synthetic):
    import dataclasses

    parallel = dataclasses.replace(synthetic, parallel=True)
    J1, r1 = fd_jacobian([0.11, 0.0003], synthetic)
    J2, r2 = fd_jacobian([0.11, 0.0003], parallel)
    np.testing.assert_array_equal(J1, J2)
    np.testing.assert_array_equal(r1, r2)


def test_made_day224_fit_from_appendix_seed_decreases_objective():
    from levyflow.appio import appendix_seed_params, bundled_data, load_observations

    params = appendix_seed_params("day224")
    obs = load_observations(bundled_data("made_day224.csv"))
    grid = SpaceTimeGrid.uniform(0.0, 300.0, 600, 224.0)
    problem = FitProblem(obs.scaled(1.0 / params.mass_constant), params, grid, grid.h,
                         max_iter=4, solver_options={"clip_negative": True})
    result = fit(problem)
    objectives = result.trace.objectives
    assert len(objectives) == 5
    assert all(b < a for a, b in zip(objectives, objectives[1:]))
