"""Drift identification by damped Gauss-Newton (Levenberg-Marquardt) iteration.

Two drift coefficients are fitted at a time, either ``(a0, a1)`` or
``(a2, a3)``, with everything else held fixed. Each iteration solves the
forward problem at the current point and at one forward-difference
perturbation per free parameter, computes the damped direction

    d = -(J^T J + penalty * I)^{-1} J^T r,

backtracks along ``d`` with the Armijo rule and halves the penalty.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .core import FadeParams, ObservationSet, SpaceTimeGrid, eval_drift, eval_piecewise_linear
from .fvsolver import SolverError, initial_point_source, solve_forward

log = logging.getLogger(__name__)

PAIRS = {"a01": ("a0", "a1"), "a23": ("a2", "a3")}


class FitError(RuntimeError):
    """Fitting stopped early; ``trace`` holds the iterations completed so far."""

    def __init__(self, message: str, trace: FitTrace | None = None, alpha=None) -> None:
        super().__init__(message)
        self.trace = trace
        self.alpha = alpha


@dataclass
class FitProblem:
    """Everything needed to evaluate the least-squares objective.

    ``observations`` are on density scale (concentration divided by ``K``).
    ``model`` replaces the forward solve with a direct map from the free
    parameters to the stacked model values; it exists for testing.
    """

    observations: ObservationSet
    base_params: FadeParams
    grid: SpaceTimeGrid
    source: float
    pair: str = "a01"
    fd_delta: float = 1e-6
    fd_floor: float = 1e-9
    armijo_rho: float = 0.5
    armijo_sigma: float = 1e-4
    penalty0: float = 1e-2
    tol: float = 1e-8
    max_iter: int = 100
    max_backtracks: int = 40
    adaptive_penalty: bool = False
    parallel: bool = False
    solver_options: dict = field(default_factory=dict)
    model: Callable[[NDArray[np.float64]], NDArray[np.float64]] | None = None

    def __post_init__(self) -> None:
        if self.pair not in PAIRS:
            raise ValueError(f"pair must be one of {sorted(PAIRS)}, got {self.pair!r}")
        if not 0.0 < self.armijo_rho < 1.0:
            raise ValueError("armijo_rho must lie in (0, 1)")
        if not 0.0 < self.armijo_sigma < 0.5:
            raise ValueError("armijo_sigma must lie in (0, 1/2)")
        if not self.penalty0 > 0.0:
            raise ValueError("penalty0 must be positive")
        if not (self.fd_delta > 0.0 and self.fd_floor > 0.0):
            raise ValueError("finite-difference step must be positive")
        if not self.tol > 0.0:
            raise ValueError("tol must be positive")
        if self.model is None:
            self.observations.check_domain(self.base_params.domain)
        self._guarded_ends = [
            x for x in self.base_params.domain if eval_drift(self.base_params.drift, x) >= 0.0
        ]

    @property
    def names(self) -> tuple[str, str]:
        return PAIRS[self.pair]

    @property
    def sqrt_weights(self) -> NDArray[np.float64]:
        return np.concatenate(
            [np.full(len(g), np.sqrt(g.weight)) for g in self.observations.groups]
        )

    @property
    def observed(self) -> NDArray[np.float64]:
        return np.concatenate([g.c for g in self.observations.groups])

    def initial_alpha(self) -> NDArray[np.float64]:
        drift = self.base_params.drift
        return np.array([getattr(drift, n) for n in self.names], dtype=float)

    def params_for(self, alpha: ArrayLike) -> FadeParams:
        a, b = np.asarray(alpha, dtype=float)
        names = self.names
        drift = self.base_params.drift.replace(**{names[0]: float(a), names[1]: float(b)})
        return self.base_params.with_drift(drift)

    def feasible(self, alpha: ArrayLike) -> bool:
        if not np.all(np.isfinite(alpha)):
            return False
        if self.model is not None:
            return True
        # only ends where the starting drift is non-negative are guarded
        drift = self.params_for(alpha).drift
        return all(eval_drift(drift, x) >= 0.0 for x in self._guarded_ends)

    def model_values(self, alpha: ArrayLike) -> NDArray[np.float64]:
        """Model densities at every observation, stacked group by group."""
        alpha = np.asarray(alpha, dtype=float)
        if self.model is not None:
            return np.asarray(self.model(alpha), dtype=float)
        params = self.params_for(alpha)
        initial = initial_point_source(self.grid, self.source)
        try:
            solution = solve_forward(
                params, self.grid, initial, self.observations.times, **self.solver_options
            )
        except SolverError as exc:
            raise FitError(f"forward solve failed at alpha={alpha.tolist()}: {exc}", alpha=alpha) from exc
        return np.concatenate(
            [
                eval_piecewise_linear(snap, self.grid, g.x)
                for snap, g in zip(solution.snapshots, self.observations.groups)
            ]
        )


@dataclass(frozen=True)
class FitRecord:
    alpha: NDArray[np.float64]
    objective: float
    penalty: float
    step: float
    direction: NDArray[np.float64]
    backtracks: int


@dataclass
class FitTrace:
    records: list[FitRecord] = field(default_factory=list)

    def append(self, record: FitRecord) -> None:
        self.records.append(record)

    @property
    def objectives(self) -> list[float]:
        return [r.objective for r in self.records]

    def __len__(self) -> int:
        return len(self.records)


@dataclass(frozen=True)
class FitResult:
    alpha: NDArray[np.float64]
    params: FadeParams
    objective: float
    trace: FitTrace
    converged: bool
    iterations: int


def _residual(alpha: ArrayLike, problem: FitProblem) -> NDArray[np.float64]:
    """Weighted residuals ``sqrt(w_k) * (p - p_hat)``."""
    return problem.sqrt_weights * (problem.model_values(alpha) - problem.observed)


def objective(alpha: ArrayLike, problem: FitProblem) -> float:
    """Half the weighted sum of squared density residuals."""
    r = _residual(alpha, problem)
    return 0.5 * float(r @ r)


def fd_steps(alpha: ArrayLike, problem: FitProblem) -> NDArray[np.float64]:
    alpha = np.asarray(alpha, dtype=float)
    return np.maximum(problem.fd_delta * np.abs(alpha), problem.fd_floor)


def fd_jacobian(
    alpha: ArrayLike, problem: FitProblem, base: NDArray[np.float64] | None = None
) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    """Forward-difference Jacobian of the weighted residuals and the residuals themselves.

    ``base`` may carry already computed residuals at ``alpha`` to save a solve.
    """
    alpha = np.asarray(alpha, dtype=float)
    r = _residual(alpha, problem) if base is None else base
    steps = fd_steps(alpha, problem)
    shifted = []
    for j in range(alpha.size):
        a = alpha.copy()
        a[j] += steps[j]
        if not problem.feasible(a):
            raise FitError(f"finite-difference point {a.tolist()} is infeasible", alpha=a)
        shifted.append(a)
    if problem.parallel and problem.model is None:
        with ThreadPoolExecutor(max_workers=len(shifted)) as pool:
            columns = list(pool.map(lambda a: _residual(a, problem), shifted))
    else:
        columns = [_residual(a, problem) for a in shifted]
    J = np.column_stack([(c - r) / s for c, s in zip(columns, steps)])
    return J, r


def lm_direction(J: ArrayLike, r: ArrayLike, penalty: float) -> NDArray[np.float64]:
    """Solve ``(J^T J + penalty I) d = -J^T r``."""
    if penalty < 0.0:
        raise ValueError("penalty must be non-negative")
    J = np.atleast_2d(np.asarray(J, dtype=float))
    r = np.asarray(r, dtype=float)
    g = J.T @ r
    H = J.T @ J + penalty * np.eye(J.shape[1])
    try:
        d = np.linalg.solve(H, -g)
    except np.linalg.LinAlgError:
        raise np.linalg.LinAlgError(
            "damped normal matrix is singular; increase the penalty"
        ) from None
    if not np.all(np.isfinite(d)):
        raise np.linalg.LinAlgError("damped normal matrix is singular; increase the penalty")
    return d


def armijo_step(
    alpha: ArrayLike,
    d: ArrayLike,
    problem: FitProblem,
    grad: ArrayLike,
    f0: float | None = None,
) -> tuple[float, NDArray[np.float64], float, int]:
    """Backtrack along ``d`` until the Armijo sufficient-decrease test holds.

    ``grad`` is ``J^T r`` at ``alpha``. Returns ``(rho**m, new_alpha, new_objective, m)``.
    Infeasible trial points count as failed tests.
    """
    alpha = np.asarray(alpha, dtype=float)
    d = np.asarray(d, dtype=float)
    if not np.all(np.isfinite(d)):
        raise FitError("search direction is not finite", alpha=alpha)
    if f0 is None:
        f0 = objective(alpha, problem)
    slope = float(np.dot(d, grad))
    rho = problem.armijo_rho
    for m in range(problem.max_backtracks + 1):
        t = rho**m
        trial = alpha + t * d
        if not problem.feasible(trial):
            continue
        f = objective(trial, problem)
        if f <= f0 + problem.armijo_sigma * t * slope:
            return t, trial, f, m
    raise FitError(
        f"Armijo line search failed after {problem.max_backtracks} backtracks", alpha=alpha
    )


def fit(problem: FitProblem, alpha0: ArrayLike | None = None) -> FitResult:
    """Run the damped iteration from ``alpha0`` (default: the base drift's values)."""
    alpha = problem.initial_alpha() if alpha0 is None else np.array(alpha0, dtype=float)
    if alpha.shape != (2,):
        raise ValueError("alpha0 must hold two values")
    if not problem.feasible(alpha):
        raise ValueError(f"initial point {alpha.tolist()} is infeasible")
    trace = FitTrace()
    penalty = problem.penalty0
    converged = False
    k = 0
    try:
        r = _residual(alpha, problem)
        f = 0.5 * float(r @ r)
        for k in range(problem.max_iter + 1):
            J, r = fd_jacobian(alpha, problem, base=r)
            grad = J.T @ r
            d = lm_direction(J, r, penalty)
            t, trial, f_trial, m = armijo_step(alpha, d, problem, grad, f0=f)
            step = t * d
            trace.append(FitRecord(alpha.copy(), f, penalty, t, d, m))
            log.info("iter %d: alpha=%s objective=%.6e penalty=%.3e step=%.3g",
                     k, alpha, f, penalty, t)
            if np.linalg.norm(step) <= problem.tol:
                converged = True
                break
            alpha, f = trial, f_trial
            r = _residual(alpha, problem)
            if problem.adaptive_penalty:
                penalty = penalty / 2.0 if m == 0 else penalty * 2.0
            else:
                penalty = penalty / 2.0
    except (FitError, np.linalg.LinAlgError) as exc:
        raise FitError(str(exc), trace=trace, alpha=alpha) from exc
    return FitResult(alpha, problem.params_for(alpha) if problem.model is None else problem.base_params,
                     f, trace, converged, k)


def observations_from_solution(
    params: FadeParams,
    grid: SpaceTimeGrid,
    source: float,
    locations: Sequence[ArrayLike],
    times: Sequence[float],
    **solver_options,
) -> ObservationSet:
    """Synthesize density-scale observations from a forward solve."""
    from .core import ObservationGroup

    solution = solve_forward(params, grid, initial_point_source(grid, source), times, **solver_options)
    groups = tuple(
        ObservationGroup(t, np.asarray(x, float), eval_piecewise_linear(snap, grid, x))
        for t, x, snap in zip(times, locations, solution.snapshots)
    )
    return ObservationSet(groups)
