"""Characteristic-tracking finite volume solver for the forward equation.

Each time step integrates the density over the dual cells
``[x_{i-1/2}, x_{i+1/2}]``. Advection is absorbed by tracking the cell
interfaces back along the drift characteristics, so the right-hand side is the
exact integral of the previous piecewise-linear density between the tracked
feet. The fractional diffusion flux is treated implicitly through the
stiffness matrix, which leaves one linear system per step::

    (A + dt * Z) p^n = r(p^{n-1})

with ``A`` the tridiagonal ``h/8 * (1, 6, 1)`` accumulation stencil.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.linalg
import scipy.sparse.linalg
from numpy.typing import ArrayLike, NDArray

from .core import DensitySnapshot, DomainError, DriftParams, FadeParams, SpaceTimeGrid, eval_drift
from .fracmat import StiffnessMatrix, assemble, matvec, to_dense

log = logging.getLogger(__name__)

DEFAULT_SUBSTEPS = 4
NEGATIVE_TOL = 1e-10


class SolverError(RuntimeError):
    """The discrete system could not be solved or produced an invalid density."""


@dataclass(frozen=True)
class CharacteristicFeet:
    """Feet at ``t_{n-1}`` of the characteristics through the dual points at ``t_n``."""

    feet: NDArray[np.float64] = field(repr=False)

    def __post_init__(self) -> None:
        feet = np.array(self.feet, dtype=float)
        if np.any(np.diff(feet) < 0.0):
            raise SolverError("tracked characteristics cross; reduce the time step")
        feet.setflags(write=False)
        object.__setattr__(self, "feet", feet)


@dataclass(frozen=True)
class ForwardSolution:
    snapshots: tuple[DensitySnapshot, ...]
    params: FadeParams
    grid: SpaceTimeGrid

    @property
    def times(self) -> list[float]:
        return [s.time for s in self.snapshots]

    def at(self, time: float) -> DensitySnapshot:
        for snap in self.snapshots:
            if np.isclose(snap.time, time, rtol=0.0, atol=1e-9):
                return snap
        raise KeyError(f"no snapshot stored at t={time}")


def track_foot(
    drift: DriftParams,
    x_head: ArrayLike,
    t_n: float,
    dt: float,
    substeps: int = DEFAULT_SUBSTEPS,
    domain: tuple[float, float] | None = None,
) -> float | NDArray[np.float64]:
    """Trace ``dr/dt = a(r)`` backward over ``dt`` from ``x_head`` at ``t_n``.

    Uses ``substeps`` explicit Euler steps. With ``domain`` given the path is
    clamped to it after every substep. The drift is time independent, so
    ``t_n`` only documents the head time.
    """
    if not dt > 0.0:
        raise ValueError("dt must be positive")
    if substeps < 1:
        raise ValueError("substeps must be at least 1")
    r = np.array(x_head, dtype=float)
    tau = dt / substeps
    for _ in range(substeps):
        r = r - tau * eval_drift(drift, r)
        if domain is not None:
            r = np.clip(r, domain[0], domain[1])
    if r.ndim == 0:
        return float(r)
    return r


def tracked_feet(
    params: FadeParams, grid: SpaceTimeGrid, dt: float, substeps: int = DEFAULT_SUBSTEPS
) -> CharacteristicFeet:
    """Feet of all ``I`` dual points for one step of length ``dt``."""
    feet = track_foot(params.drift, grid.dual_points, 0.0, dt, substeps, params.domain)
    return CharacteristicFeet(np.atleast_1d(feet))


def _check_interior(grid: SpaceTimeGrid, i: int) -> None:
    if not 1 <= i <= grid.intervals - 1:
        raise IndexError(f"cell index {i} outside 1..{grid.intervals - 1}")


def accumulation_new(p_n: DensitySnapshot | ArrayLike, grid: SpaceTimeGrid, i: int) -> float:
    """Integral of the piecewise-linear density over the dual cell around node ``i``."""
    _check_interior(grid, i)
    p = p_n.values if isinstance(p_n, DensitySnapshot) else np.asarray(p_n, dtype=float)
    dx_left = dx_right = grid.h
    return 0.125 * (dx_left * (p[i - 1] + 3.0 * p[i]) + dx_right * (3.0 * p[i] + p[i + 1]))


def accumulation_matrix(grid: SpaceTimeGrid) -> NDArray[np.float64]:
    """Dense ``(I-1) x (I-1)`` matrix of the accumulation stencil on interior nodes."""
    n = grid.intervals - 1
    h = grid.h
    A = np.diag(np.full(n, 0.75 * h))
    idx = np.arange(n - 1)
    A[idx, idx + 1] = A[idx + 1, idx] = 0.125 * h
    return A


def _antiderivative(values: NDArray[np.float64], grid: SpaceTimeGrid, x: NDArray[np.float64]):
    """Exact integral of the piecewise-linear density from ``x_left`` to ``x``."""
    h = grid.h
    cumulative = np.concatenate(([0.0], np.cumsum(0.5 * h * (values[:-1] + values[1:]))))
    k = np.clip(np.floor((x - grid.x_left) / h).astype(int), 0, grid.intervals - 1)
    s = x - (grid.x_left + k * h)
    slope = (values[k + 1] - values[k]) / h
    return cumulative[k] + values[k] * s + 0.5 * slope * s * s


def accumulation_old_all(
    p_prev: DensitySnapshot | ArrayLike, grid: SpaceTimeGrid, feet: ArrayLike
) -> NDArray[np.float64]:
    """Right-hand side integrals for every interior cell from the ``I`` tracked feet."""
    p = p_prev.values if isinstance(p_prev, DensitySnapshot) else np.asarray(p_prev, dtype=float)
    feet = np.asarray(feet, dtype=float)
    if np.any(np.diff(feet) < 0.0):
        raise SolverError("tracked characteristics cross; reduce the time step")
    if not grid.contains(feet):
        raise DomainError("characteristic feet outside the domain")
    return np.diff(_antiderivative(p, grid, feet))


def accumulation_old(
    p_prev: DensitySnapshot | ArrayLike,
    grid: SpaceTimeGrid,
    foot_left: float,
    foot_right: float,
) -> float:
    """Exact integral of the previous density between two tracked feet."""
    if foot_right < foot_left:
        raise SolverError("reversed feet: characteristics crossed")
    return float(accumulation_old_all(p_prev, grid, [foot_left, foot_right])[0])


def _finalize(
    values: NDArray[np.float64], time: float, negative_tol: float, clip: bool
) -> DensitySnapshot:
    worst = float(values.min()) if values.size else 0.0
    if worst < -negative_tol:
        if not clip:
            raise SolverError(
                f"density dropped to {worst:.3e} at t={time:g}, below -{negative_tol:g}"
            )
        # mass-preserving clip: rescale the positive part to the raw trapezoidal mass
        total = values.sum()
        values = np.maximum(values, 0.0)
        if total > 0.0:
            values *= total / values.sum()
    full = np.zeros(values.size + 2)
    full[1:-1] = np.maximum(values, 0.0)
    return DensitySnapshot(full, time)


class Stepper:
    """Fixed-``dt`` time stepper that factors the system matrix once.

    Parameters
    ----------
    params, grid
        Problem definition.
    dt : float
        Step length.
    Z : StiffnessMatrix, optional
        Pre-assembled stiffness matrix for ``(grid, params)``.
    method : {"direct", "iterative"}
        Dense LU or GMRES driven by the band matrix-vector product.
    negative_tol : float
        Negative nodal values above ``-negative_tol`` are rounded to zero.
    clip_negative : bool
        When false, larger negative values raise :class:`SolverError`; when
        true they are clipped and the positive part rescaled so the step keeps
        its trapezoidal mass.
    """

    def __init__(
        self,
        params: FadeParams,
        grid: SpaceTimeGrid,
        dt: float,
        Z: StiffnessMatrix | None = None,
        substeps: int = DEFAULT_SUBSTEPS,
        method: str = "direct",
        negative_tol: float = NEGATIVE_TOL,
        clip_negative: bool = False,
    ) -> None:
        if not dt > 0.0:
            raise ValueError("dt must be positive")
        if method not in ("direct", "iterative"):
            raise ValueError(f"unknown linear solver {method!r}")
        self.params = params
        self.grid = grid
        self.dt = dt
        self.method = method
        self.negative_tol = negative_tol
        self.clip_negative = clip_negative
        self.Z = assemble(grid, params) if Z is None else Z
        if self.Z.size != grid.intervals - 1:
            raise ValueError("stiffness matrix does not match the grid")
        self.feet = tracked_feet(params, grid, dt, substeps).feet
        h = grid.h
        if method == "direct":
            system = accumulation_matrix(grid) + dt * to_dense(self.Z)
            lu, piv = scipy.linalg.lu_factor(system, check_finite=True)
            if np.any(np.abs(np.diag(lu)) <= np.finfo(float).eps * np.abs(lu).max() * system.shape[0]):
                raise SolverError(
                    f"singular step matrix (condition number {np.linalg.cond(system):.3e})"
                )
            self._lu = (lu, piv)
        else:
            n = self.Z.size

            def apply(v: NDArray[np.float64]) -> NDArray[np.float64]:
                out = 0.75 * h * v
                out[1:] += 0.125 * h * v[:-1]
                out[:-1] += 0.125 * h * v[1:]
                return out + dt * matvec(self.Z, v)

            self._operator = scipy.sparse.linalg.LinearOperator((n, n), matvec=apply, dtype=float)

    def rhs(self, p_prev: DensitySnapshot) -> NDArray[np.float64]:
        return accumulation_old_all(p_prev, self.grid, self.feet)

    def __call__(self, p_prev: DensitySnapshot) -> DensitySnapshot:
        r = self.rhs(p_prev)
        time = p_prev.time + self.dt
        if self.method == "direct":
            values = scipy.linalg.lu_solve(self._lu, r)
        else:
            if not np.any(r):
                values = np.zeros_like(r)
            else:
                values, info = scipy.sparse.linalg.gmres(
                    self._operator, r, rtol=1e-13, atol=0.0, restart=200, maxiter=1000
                )
                if info != 0:
                    raise SolverError(f"GMRES did not converge (info={info}) at t={time:g}")
        if not np.all(np.isfinite(values)):
            raise SolverError(f"non-finite density at t={time:g}")
        return _finalize(values, time, self.negative_tol, self.clip_negative)


def step(
    p_prev: DensitySnapshot,
    Z: StiffnessMatrix,
    grid: SpaceTimeGrid,
    params: FadeParams,
    dt: float,
    substeps: int = DEFAULT_SUBSTEPS,
    method: str = "direct",
    clip_negative: bool = False,
) -> DensitySnapshot:
    """Advance ``p_prev`` by one step of length ``dt``."""
    if Z.provenance != (params.lam, params.gamma, params.b, grid.h):
        raise ValueError("stiffness matrix was built for different parameters or grid")
    stepper = Stepper(params, grid, dt, Z=Z, substeps=substeps, method=method,
                      clip_negative=clip_negative)
    return stepper(p_prev)


def initial_point_source(grid: SpaceTimeGrid, y0: float) -> DensitySnapshot:
    """Discrete delta at ``y0`` with unit trapezoidal mass.

    The mass is split between the two bracketing nodes so that the first moment
    equals ``y0``. A share that would land on a boundary node (where the density
    is pinned to zero) goes to the neighbouring interior node instead.
    """
    if not grid.x_left < y0 < grid.x_right:
        raise DomainError(f"point source {y0} must lie strictly inside the domain")
    h = grid.h
    u = (y0 - grid.x_left) / h
    k = min(int(np.floor(u)), grid.intervals - 1)
    theta = u - k
    if theta < 1e-12:
        theta = 0.0
    elif theta > 1.0 - 1e-12:
        k, theta = k + 1, 0.0
    weights = np.zeros(grid.node_count)
    weights[k] += 1.0 - theta
    if theta:
        weights[k + 1] += theta
    weights[1] += weights[0]
    weights[-2] += weights[-1]
    weights[0] = weights[-1] = 0.0
    return DensitySnapshot(weights / h, 0.0)


def solve_forward(
    params: FadeParams,
    grid: SpaceTimeGrid,
    initial: DensitySnapshot,
    output_times: Sequence[float],
    substeps: int = DEFAULT_SUBSTEPS,
    method: str = "direct",
    negative_tol: float = NEGATIVE_TOL,
    clip_negative: bool = False,
) -> ForwardSolution:
    """March from ``t_0`` and record snapshots at ``output_times``.

    Every requested time must be a level of ``grid.times``. Consecutive steps of
    equal length share one factorization.
    """
    if initial.values.size != grid.node_count:
        raise ValueError("initial snapshot does not match the grid")
    times = grid.times
    wanted = []
    for t in output_times:
        hits = np.flatnonzero(np.isclose(times, t, rtol=0.0, atol=1e-9 * max(1.0, abs(t))))
        if hits.size == 0:
            raise ValueError(f"output time {t} is not a level of the time grid")
        wanted.append(int(hits[0]))
    last = max(wanted, default=0)

    Z = assemble(grid, params)
    steppers: dict[float, Stepper] = {}
    current = DensitySnapshot(initial.values, float(times[0]))
    stored = {0: current}
    for n in range(1, last + 1):
        dt = float(times[n] - times[n - 1])
        key = round(dt, 12)
        stepper = steppers.get(key)
        if stepper is None:
            stepper = Stepper(
                params, grid, dt, Z=Z, substeps=substeps, method=method,
                negative_tol=negative_tol, clip_negative=clip_negative,
            )
            steppers[key] = stepper
        nxt = stepper(current)
        current = DensitySnapshot(nxt.values, float(times[n]))
        if n in wanted:
            stored[n] = current
    log.debug("forward solve: %d steps, I=%d", last, grid.intervals)
    return ForwardSolution(tuple(stored[n] for n in wanted), params, grid)
