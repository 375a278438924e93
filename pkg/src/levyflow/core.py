"""Domain types shared across the toolkit.

Conventions
-----------
Lengths are in meters, times in days. The density ``p`` integrates to (at most)
one over the domain and relates to concentration through ``c = K * p`` where
``K`` is the mass constant. The fractional order of the forward equation is
``alpha = 2 - lambda`` and the skewness of the driving stable process is
``beta = 2 * gamma - 1``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import ArrayLike, NDArray

log = logging.getLogger(__name__)


class DomainError(ValueError):
    """A location or index falls outside the computational domain."""


@dataclass(frozen=True)
class DriftParams:
    """Piecewise-linear drift ``a0 - a1*x`` left of ``x_mid``, ``a2 - a3*x`` right of it."""

    a0: float
    a1: float
    a2: float
    a3: float
    x_mid: float

    @classmethod
    def constant(cls, v: float, x_mid: float = 0.0) -> DriftParams:
        return cls(a0=v, a1=0.0, a2=v, a3=0.0, x_mid=x_mid)

    def jump(self) -> float:
        """Left value minus right limit at the breakpoint."""
        return (self.a0 - self.a2) - (self.a1 - self.a3) * self.x_mid

    def replace(self, **changes: float) -> DriftParams:
        values = {k: getattr(self, k) for k in ("a0", "a1", "a2", "a3", "x_mid")}
        values.update(changes)
        return DriftParams(**values)


def eval_drift(
    drift: DriftParams,
    x: ArrayLike,
    domain: tuple[float, float] | None = None,
) -> float | NDArray[np.float64]:
    """Evaluate the drift velocity (m/day) at ``x``.

    The breakpoint itself belongs to the left branch. When ``domain`` is given,
    locations outside it raise :class:`DomainError`.
    """
    xa = np.asarray(x, dtype=float)
    if domain is not None:
        lo, hi = domain
        if np.any((xa < lo) | (xa > hi)) or np.any(np.isnan(xa)):
            raise DomainError(f"drift evaluated outside [{lo}, {hi}]")
    out = np.where(xa <= drift.x_mid, drift.a0 - drift.a1 * xa, drift.a2 - drift.a3 * xa)
    if out.ndim == 0:
        return float(out)
    return out


@dataclass(frozen=True)
class FadeParams:
    """Parameters of the forward fractional advection-dispersion problem.

    ``b`` is the scalar diffusion coefficient in m^alpha/day multiplying the
    fractional flux. ``b = 0`` is accepted and gives pure advection.
    """

    lam: float
    gamma: float
    b: float
    drift: DriftParams
    x_left: float
    x_right: float
    mass_constant: float = 1.0

    def __post_init__(self) -> None:
        if not 0.0 < self.lam < 1.0:
            raise ValueError(f"lambda must lie in (0, 1), got {self.lam}")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError(f"gamma must lie in [0, 1], got {self.gamma}")
        if not self.b >= 0.0:
            raise ValueError(f"b must be non-negative, got {self.b}")
        if not self.x_left < self.x_right:
            raise ValueError("x_left must be smaller than x_right")
        if not self.mass_constant > 0.0:
            raise ValueError("mass_constant must be positive")
        if not self.x_left <= self.drift.x_mid <= self.x_right:
            raise ValueError("drift breakpoint x_mid lies outside the domain")
        if not drift_feasible(self.drift, self.domain):
            log.warning(
                "drift is negative at a domain end (a(%g)=%g, a(%g)=%g)",
                self.x_left, eval_drift(self.drift, self.x_left),
                self.x_right, eval_drift(self.drift, self.x_right),
            )

    @property
    def alpha(self) -> float:
        """Order of the fractional derivative, ``2 - lambda``."""
        return 2.0 - self.lam

    @property
    def beta(self) -> float:
        """Skewness of the driving stable law."""
        return 2.0 * self.gamma - 1.0

    @property
    def domain(self) -> tuple[float, float]:
        return (self.x_left, self.x_right)

    def velocity(self, x: ArrayLike) -> float | NDArray[np.float64]:
        return eval_drift(self.drift, x, self.domain)

    def with_drift(self, drift: DriftParams) -> FadeParams:
        return FadeParams(
            lam=self.lam,
            gamma=self.gamma,
            b=self.b,
            drift=drift,
            x_left=self.x_left,
            x_right=self.x_right,
            mass_constant=self.mass_constant,
        )


def drift_feasible(drift: DriftParams, domain: tuple[float, float]) -> bool:
    """True when the drift is non-negative at both domain ends (inflow/outflow convention)."""
    lo, hi = domain
    return eval_drift(drift, lo) >= 0.0 and eval_drift(drift, hi) >= 0.0


@dataclass(frozen=True)
class SpaceTimeGrid:
    """Uniform spatial partition ``x_0 < ... < x_I`` and a time partition.

    Parameters
    ----------
    x_left, x_right : float
        Domain bounds in meters.
    node_count : int
        Number of spatial nodes, ``I + 1``.
    times : ndarray
        Strictly increasing time levels starting at zero.
    """

    x_left: float
    x_right: float
    node_count: int
    times: NDArray[np.float64] = field(repr=False)

    def __post_init__(self) -> None:
        if self.node_count < 3:
            raise ValueError("need at least three nodes (one interior unknown)")
        if not self.x_left < self.x_right:
            raise ValueError("x_left must be smaller than x_right")
        times = np.asarray(self.times, dtype=float)
        if times.ndim != 1 or times.size < 1:
            raise ValueError("times must be a non-empty 1-d array")
        if times[0] != 0.0:
            raise ValueError("time partition must start at t0 = 0")
        if np.any(np.diff(times) <= 0.0):
            raise ValueError("times must be strictly increasing")
        times.setflags(write=False)
        object.__setattr__(self, "times", times)

    @classmethod
    def uniform(
        cls,
        x_left: float,
        x_right: float,
        intervals: int,
        t_end: float = 0.0,
        steps: int | None = None,
        max_dt: float = 1.0,
    ) -> SpaceTimeGrid:
        """Build a grid with ``intervals`` cells and uniform steps up to ``t_end``.

        When ``steps`` is omitted the smallest count with ``dt <= max_dt`` is used.
        """
        if t_end < 0.0:
            raise ValueError("t_end must be non-negative")
        if t_end == 0.0:
            times = np.zeros(1)
        else:
            if steps is None:
                steps = max(1, int(np.ceil(t_end / max_dt - 1e-12)))
            times = np.linspace(0.0, t_end, steps + 1)
        return cls(x_left, x_right, intervals + 1, times)

    @classmethod
    def from_nodes(cls, nodes: ArrayLike, times: ArrayLike, rtol: float = 1e-9) -> SpaceTimeGrid:
        """Build a grid from explicit node locations, which must be equally spaced."""
        nodes = np.asarray(nodes, dtype=float)
        if nodes.ndim != 1 or nodes.size < 3:
            raise ValueError("need at least three nodes")
        spacing = np.diff(nodes)
        h = (nodes[-1] - nodes[0]) / (nodes.size - 1)
        if np.any(spacing <= 0.0) or np.max(np.abs(spacing - h)) > rtol * abs(h):
            raise ValueError("only uniform spatial grids are supported")
        return cls(float(nodes[0]), float(nodes[-1]), nodes.size, np.asarray(times, dtype=float))

    @property
    def intervals(self) -> int:
        """Number of cells ``I``."""
        return self.node_count - 1

    @property
    def h(self) -> float:
        return (self.x_right - self.x_left) / self.intervals

    @property
    def nodes(self) -> NDArray[np.float64]:
        return np.linspace(self.x_left, self.x_right, self.node_count)

    @property
    def dual_points(self) -> NDArray[np.float64]:
        """Cell-interface points ``x_{1/2}, ..., x_{I-1/2}``."""
        x = self.nodes
        return 0.5 * (x[:-1] + x[1:])

    def contains(self, x: ArrayLike) -> bool:
        xa = np.asarray(x, dtype=float)
        return bool(np.all((xa >= self.x_left) & (xa <= self.x_right)))


@dataclass(frozen=True)
class DensitySnapshot:
    """Nodal values of the piecewise-linear density at one time level."""

    values: NDArray[np.float64] = field(repr=False)
    time: float = 0.0

    def __post_init__(self) -> None:
        values = np.array(self.values, dtype=float)
        if values.ndim != 1 or values.size < 3:
            raise ValueError("snapshot needs at least three nodal values")
        if values[0] != 0.0 or values[-1] != 0.0:
            raise ValueError("density must vanish at both boundary nodes")
        if np.any(values < 0.0):
            raise ValueError("density values must be non-negative")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    def mass(self, h: float) -> float:
        """Trapezoidal integral on a uniform grid with spacing ``h``."""
        return float(h * np.sum(self.values))

    def mean(self, grid: SpaceTimeGrid) -> float:
        """Exact first moment of the piecewise-linear density divided by its mass."""
        x = grid.nodes
        p = self.values
        h = grid.h
        # integral of x*p over each cell for linear p
        first = h / 6.0 * np.sum(p[:-1] * (2 * x[:-1] + x[1:]) + p[1:] * (x[:-1] + 2 * x[1:]))
        return float(first / self.mass(h))


def eval_piecewise_linear(
    snapshot: DensitySnapshot | ArrayLike,
    grid: SpaceTimeGrid,
    x: ArrayLike,
) -> float | NDArray[np.float64]:
    """Interpolate nodal values at ``x`` with hat functions."""
    values = snapshot.values if isinstance(snapshot, DensitySnapshot) else np.asarray(snapshot, float)
    if values.shape != (grid.node_count,):
        raise ValueError("snapshot size does not match the grid")
    xa = np.asarray(x, dtype=float)
    if not grid.contains(xa):
        raise DomainError(f"interpolation point outside [{grid.x_left}, {grid.x_right}]")
    out = np.interp(xa, grid.nodes, values)
    if out.ndim == 0:
        return float(out)
    return out


@dataclass(frozen=True)
class ObservationGroup:
    """Observed concentrations at a single sampling time."""

    time: float
    x: NDArray[np.float64] = field(repr=False)
    c: NDArray[np.float64] = field(repr=False)
    weight: float = 1.0

    def __post_init__(self) -> None:
        x = np.array(self.x, dtype=float)
        c = np.array(self.c, dtype=float)
        if x.ndim != 1 or x.shape != c.shape:
            raise ValueError("x and c must be 1-d arrays of equal length")
        if np.any(c < 0.0):
            raise ValueError("observed concentrations must be non-negative")
        if not self.weight > 0.0:
            raise ValueError("group weight must be positive")
        if np.unique(x).size != x.size:
            raise ValueError(f"duplicate observation location at t={self.time}")
        order = np.argsort(x, kind="stable")
        x, c = x[order], c[order]
        x.setflags(write=False)
        c.setflags(write=False)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "c", c)

    def __len__(self) -> int:
        return self.x.size


@dataclass(frozen=True)
class ObservationSet:
    """Observation groups ordered by time."""

    groups: tuple[ObservationGroup, ...]

    def __post_init__(self) -> None:
        groups = tuple(sorted(self.groups, key=lambda g: g.time))
        times = [g.time for g in groups]
        if len(set(times)) != len(times):
            raise ValueError("observation times must be distinct")
        object.__setattr__(self, "groups", groups)

    @property
    def times(self) -> list[float]:
        return [g.time for g in self.groups]

    def __len__(self) -> int:
        return sum(len(g) for g in self.groups)

    def check_domain(self, domain: tuple[float, float]) -> None:
        lo, hi = domain
        for g in self.groups:
            if np.any((g.x < lo) | (g.x > hi)):
                raise DomainError(f"observation at t={g.time} outside [{lo}, {hi}]")

    def scaled(self, factor: float) -> ObservationSet:
        """Multiply every concentration by ``factor`` (e.g. ``1/K`` for density scale)."""
        return ObservationSet(
            tuple(ObservationGroup(g.time, g.x, g.c * factor, g.weight) for g in self.groups)
        )
