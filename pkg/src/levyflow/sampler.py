"""Inverse-CDF sampling of the particle position from a solved density.

The CDF is built on the solver grid with the trapezoidal rule and inverted
exactly as a piecewise-linear function. A Chambers-Mallows-Stuck stable sampler
is included for checking the constant-coefficient case, where the position
itself follows a stable law.
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.stats import norm

log = logging.getLogger(__name__)

MASS_SLACK = 1e-8


@dataclass(frozen=True)
class EmpiricalCdf:
    """Trapezoidal CDF ``F(y_0) = 0, ..., F(y_n)`` on a strictly increasing grid."""

    grid_points: NDArray[np.float64] = field(repr=False)
    cdf_values: NDArray[np.float64] = field(repr=False)
    densities: NDArray[np.float64] = field(repr=False)

    @property
    def total(self) -> float:
        return float(self.cdf_values[-1])

    @property
    def deficient(self) -> bool:
        """True when the densities integrate to noticeably less than one."""
        return self.total < 1.0 - 1e-6

    def __call__(self, y: ArrayLike) -> NDArray[np.float64] | float:
        """Piecewise-linear interpolant of the CDF values (0 below, total above)."""
        out = np.interp(y, self.grid_points, self.cdf_values, left=0.0, right=self.total)
        return float(out) if np.ndim(out) == 0 else out

    def sampled(self, y: ArrayLike) -> NDArray[np.float64] | float:
        """CDF of :func:`sample` output: the interpolant plus the missing mass as an atom at ``y_n``."""
        out = np.where(np.asarray(y) >= self.grid_points[-1], 1.0, self(y))
        return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class SampleBatch:
    values: NDArray[np.float64] = field(repr=False)
    seed: int | None = None
    time: float = float("nan")

    def __len__(self) -> int:
        return self.values.size


def build_cdf(grid_points: ArrayLike, densities: ArrayLike) -> EmpiricalCdf:
    """Accumulate trapezoid areas into CDF values at the grid points."""
    y = np.array(grid_points, dtype=float)
    p = np.array(densities, dtype=float)
    if y.ndim != 1 or y.shape != p.shape or y.size < 2:
        raise ValueError("grid and densities must be 1-d arrays of equal length >= 2")
    if np.any(np.diff(y) <= 0.0):
        raise ValueError("grid points must be strictly increasing")
    if np.any(p < 0.0):
        raise ValueError("densities must be non-negative")
    F = np.empty_like(y)
    F[0] = 0.0
    for r in range(1, y.size):
        F[r] = F[r - 1] + (y[r] - y[r - 1]) * (p[r] + p[r - 1]) / 2.0
    if F[-1] > 1.0 + MASS_SLACK:
        raise ValueError(f"densities integrate to {F[-1]:.10g} > 1")
    cdf = EmpiricalCdf(y, F, p)
    if cdf.deficient:
        log.warning("density integrates to %.6g < 1; upper tail mass sits on the last grid point",
                    cdf.total)
    return cdf


def inverse_cdf(cdf: EmpiricalCdf, u: ArrayLike) -> NDArray[np.float64] | float:
    """Invert the piecewise-linear CDF at probabilities ``u`` in ``[0, 1)``.

    Flat stretches map to their left end; ``u`` at or above the total mass maps
    to the last grid point.
    """
    ua = np.asarray(u, dtype=float)
    if np.any((ua < 0.0) | (ua >= 1.0)) or np.any(np.isnan(ua)):
        raise ValueError("u must lie in [0, 1)")
    y, F = cdf.grid_points, cdf.cdf_values
    r = np.searchsorted(F, ua, side="left") - 1
    r = np.clip(r, 0, y.size - 2)
    lo, hi = F[r], F[r + 1]
    width = hi - lo
    with np.errstate(divide="ignore", invalid="ignore"):
        frac = np.where(width > 0.0, (ua - lo) / width, 0.0)
    out = y[r] + np.clip(frac, 0.0, 1.0) * (y[r + 1] - y[r])
    out = np.where(ua < F[0], y[0], out)
    out = np.where(ua >= F[-1], y[-1], out)
    return float(out) if out.ndim == 0 else out


def sample(cdf: EmpiricalCdf, n: int, seed: int | None = None, time: float = float("nan")) -> SampleBatch:
    """Draw ``n`` positions by pushing uniforms through :func:`inverse_cdf`.

    Uniforms come from numpy's PCG64 generator, so a seed reproduces the batch
    bit for bit.
    """
    if n < 1:
        raise ValueError("sample size must be at least 1")
    rng = np.random.default_rng(seed)
    u = rng.random(n)
    return SampleBatch(np.asarray(inverse_cdf(cdf, u)), seed, time)


def sample_parallel(
    cdf: EmpiricalCdf, n: int, seed: int, workers: int, time: float = float("nan")
) -> SampleBatch:
    """Split ``n`` draws over ``workers`` independent streams.

    Stream ``k`` is seeded with the ``k``-th child of ``SeedSequence(seed)``, so
    results are reproducible for a fixed worker count.
    """
    if workers < 1:
        raise ValueError("workers must be at least 1")
    from concurrent.futures import ThreadPoolExecutor

    children = np.random.SeedSequence(seed).spawn(workers)
    sizes = [n // workers + (1 if k < n % workers else 0) for k in range(workers)]

    def draw(k: int) -> NDArray[np.float64]:
        rng = np.random.default_rng(children[k])
        return np.asarray(inverse_cdf(cdf, rng.random(sizes[k])))

    with ThreadPoolExecutor(max_workers=workers) as pool:
        parts = list(pool.map(draw, range(workers)))
    return SampleBatch(np.concatenate(parts), seed, time)


def stable_oracle_sample(
    alpha: float,
    beta: float,
    mu: float,
    sigma: float,
    n: int,
    seed: int | None = None,
) -> SampleBatch:
    """Stable variates ``S_alpha(sigma, beta, mu)`` by Chambers-Mallows-Stuck.

    Uses the Samorodnitsky-Taqqu parametrization, in which ``mu`` is the mean
    when ``alpha > 1`` and ``alpha = 2`` gives a Gaussian with variance
    ``2 sigma^2``.
    """
    if not 0.0 < alpha <= 2.0:
        raise ValueError("alpha must lie in (0, 2]")
    if not -1.0 <= beta <= 1.0:
        raise ValueError("beta must lie in [-1, 1]")
    if not sigma > 0.0:
        raise ValueError("sigma must be positive")
    if n < 1:
        raise ValueError("sample size must be at least 1")
    rng = np.random.default_rng(seed)
    V = rng.uniform(-np.pi / 2, np.pi / 2, n)
    W = rng.standard_exponential(n)
    if alpha == 1.0:
        half = np.pi / 2
        X = (1.0 / half) * (
            (half + beta * V) * np.tan(V)
            - beta * np.log(half * W * np.cos(V) / (half + beta * V))
        )
        Y = sigma * X + (2.0 / np.pi) * beta * sigma * np.log(sigma) + mu
    else:
        t = beta * np.tan(np.pi * alpha / 2)
        B = np.arctan(t) / alpha
        S = (1.0 + t * t) ** (1.0 / (2.0 * alpha))
        X = (
            S
            * np.sin(alpha * (V + B))
            / np.cos(V) ** (1.0 / alpha)
            * (np.cos(V - alpha * (V + B)) / W) ** ((1.0 - alpha) / alpha)
        )
        Y = sigma * X + mu
    return SampleBatch(Y, seed)


def interval_probability_ci(
    batch: SampleBatch | ArrayLike, a: float, b: float, confidence: float = 0.95
) -> tuple[float, float, float]:
    """Fraction of samples in the open interval ``(a, b)`` with its normal-approximation CI."""
    values = batch.values if isinstance(batch, SampleBatch) else np.asarray(batch, dtype=float)
    if not a < b:
        raise ValueError("interval must satisfy a < b")
    if not 0.0 < confidence < 1.0:
        raise ValueError("confidence must lie in (0, 1)")
    N = values.size
    if N == 0:
        raise ValueError("empty sample batch")
    P = np.count_nonzero((values > a) & (values < b)) / N
    half = ci_half_width(P, N, confidence)
    return P, P - half, P + half


def ci_half_width(P: float, N: int, confidence: float) -> float:
    z = norm.ppf(0.5 + confidence / 2.0)
    return float(z * np.sqrt(P * (1.0 - P) / N))


def empirical_density(batch: SampleBatch | ArrayLike, bin_edges: ArrayLike) -> NDArray[np.float64]:
    """Histogram normalized by the full sample size (count / (N * width))."""
    values = batch.values if isinstance(batch, SampleBatch) else np.asarray(batch, dtype=float)
    edges = np.asarray(bin_edges, dtype=float)
    if edges.ndim != 1 or edges.size < 2 or np.any(np.diff(edges) <= 0.0):
        raise ValueError("bin edges must be strictly increasing")
    counts, _ = np.histogram(values, bins=edges)
    return counts / (values.size * np.diff(edges))


def ks_distance(samples: ArrayLike, cdf, cdf_left=None) -> float:
    """Kolmogorov-Smirnov distance between the sample ECDF and a callable CDF.

    Ties are handled exactly. ``cdf_left`` gives left limits where ``cdf`` has
    atoms; it defaults to ``cdf`` (a continuous law).
    """
    x = np.sort(np.asarray(samples, dtype=float))
    n = x.size
    points, first = np.unique(x, return_index=True)
    below = first / n
    upto = np.append(first[1:], n) / n
    F = np.asarray(cdf(points), dtype=float)
    F_left = F if cdf_left is None else np.asarray(cdf_left(points), dtype=float)
    return float(max(np.max(np.abs(upto - F)), np.max(np.abs(below - F_left))))


def params_digest(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def write_batch(batch: SampleBatch, path: str | Path, param_hash: str = "") -> None:
    """One-column CSV preceded by ``#`` comment lines carrying seed, time and parameter hash."""
    lines = [
        f"# seed={batch.seed}",
        f"# time={batch.time!r}",
        f"# params={param_hash}",
        "y",
    ]
    lines.extend(repr(float(v)) for v in batch.values)
    Path(path).write_text("\n".join(lines) + "\n")


def read_batch(path: str | Path) -> SampleBatch:
    meta: dict[str, str] = {}
    values = []
    header_seen = False
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            key, _, value = line[1:].strip().partition("=")
            meta[key.strip()] = value.strip()
            continue
        if not header_seen:
            header_seen = True
            if line != "y":
                raise ValueError(f"{path}:{lineno}: expected header 'y'")
            continue
        try:
            values.append(float(line))
        except ValueError:
            raise ValueError(f"{path}:{lineno}: not a number: {line!r}") from None
    seed = meta.get("seed")
    time = meta.get("time", "nan")
    return SampleBatch(
        np.array(values),
        None if seed in (None, "None") else int(seed),
        float(time),
    )
