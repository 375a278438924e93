"""Observation files, run configuration and reference parameter sets."""

from __future__ import annotations

import configparser
import csv
import logging
from dataclasses import dataclass, field, asdict
from importlib import resources
from pathlib import Path
from typing import Iterable

import numpy as np

from .core import DriftParams, FadeParams, ObservationGroup, ObservationSet, SpaceTimeGrid

log = logging.getLogger(__name__)


class ConfigError(ValueError):
    """Invalid or incomplete run configuration."""


# Reference fits for the MADE-2 plume (piecewise-linear drift, x_mid = 9.375 m).
REFERENCE_FITS = {
    "day224": dict(a0=0.110, a1=0.00032, a2=0.0003, a3=0.00019, b=0.1859783, lam=0.80,
                   gamma=0.9999, mass_constant=56778.24),
    "day328": dict(a0=0.105, a1=0.00030, a2=0.0005, a3=0.00018, b=0.2233695, lam=0.79,
                   gamma=0.9999, mass_constant=37195.05),
}

# Constant-coefficient stable fits used as starting values.
APPENDIX_SEEDS = {
    "day224": dict(sigma=5.137167, mu=43.915430, beta=0.99, alpha=1.0915, v=0.196051,
                   D=0.1859783, K=56778.24),
    "day328": dict(sigma=5.380654, mu=74.677975, beta=0.99, alpha=1.050998, v=0.2276768,
                   D=0.2233695, K=37195.05),
}

MADE_DOMAIN = (0.0, 300.0)
MADE_X_MID = 9.375


def bundled_data(name: str) -> Path:
    """Path of a bundled CSV such as ``made_day224.csv``."""
    return Path(str(resources.files("levyflow.data").joinpath(name)))


def reference_params(day: str, x_left: float = 0.0, x_right: float = 300.0,
                     x_mid: float = MADE_X_MID) -> FadeParams:
    fit = REFERENCE_FITS[day]
    drift = DriftParams(fit["a0"], fit["a1"], fit["a2"], fit["a3"], x_mid)
    return FadeParams(fit["lam"], fit["gamma"], fit["b"], drift, x_left, x_right,
                      fit["mass_constant"])


def appendix_seed_params(day: str, x_left: float = 0.0, x_right: float = 300.0,
                         x_mid: float = MADE_X_MID) -> FadeParams:
    """Starting parameters from the constant-coefficient stable fit (constant drift ``v``)."""
    seed = APPENDIX_SEEDS[day]
    drift = DriftParams(seed["v"], 0.0, seed["v"], 0.0, x_mid)
    return FadeParams(2.0 - seed["alpha"], (1.0 + seed["beta"]) / 2.0, seed["D"], drift,
                      x_left, x_right, seed["K"])


def load_observations(path: str | Path, weights: dict[float, float] | None = None) -> ObservationSet:
    """Read a ``time,x,concentration[,weight]`` CSV.

    Lines starting with ``#`` are comments; unknown extra columns are ignored.
    A ``weight`` column must be constant within a time group. ``weights`` maps
    times to weights and overrides the file.
    """
    path = Path(path)
    lines = [
        (n, line) for n, line in enumerate(path.read_text().splitlines(), start=1)
        if line.strip() and not line.lstrip().startswith("#")
    ]
    if not lines:
        raise ValueError(f"{path}: no observations")
    header_no, header = lines[0]
    names = [h.strip() for h in next(csv.reader([header]))]
    missing = {"time", "x", "concentration"} - set(names)
    if missing:
        raise ValueError(f"{path}:{header_no}: header lacks columns {sorted(missing)}")
    col = {name: names.index(name) for name in names}
    rows: dict[float, list[tuple[float, float]]] = {}
    file_weights: dict[float, float] = {}
    seen: set[tuple[float, float]] = set()
    for lineno, line in lines[1:]:
        fields = next(csv.reader([line]))
        if len(fields) != len(names):
            raise ValueError(f"{path}:{lineno}: expected {len(names)} fields, got {len(fields)}")
        try:
            t = float(fields[col["time"]])
            x = float(fields[col["x"]])
            c = float(fields[col["concentration"]])
            w = float(fields[col["weight"]]) if "weight" in col else None
        except ValueError:
            raise ValueError(f"{path}:{lineno}: malformed number in {line!r}") from None
        if not all(np.isfinite(v) for v in (t, x, c)):
            raise ValueError(f"{path}:{lineno}: non-finite value")
        if c < 0.0:
            raise ValueError(f"{path}:{lineno}: negative concentration {c}")
        if (t, x) in seen:
            raise ValueError(f"{path}:{lineno}: duplicate observation at time {t}, x {x}")
        seen.add((t, x))
        if w is not None:
            if w <= 0.0:
                raise ValueError(f"{path}:{lineno}: weight must be positive")
            if file_weights.setdefault(t, w) != w:
                raise ValueError(f"{path}:{lineno}: weight differs within time group {t}")
        rows.setdefault(t, []).append((x, c))
    if not rows:
        raise ValueError(f"{path}: no observations")
    weights = {**file_weights, **(weights or {})}
    groups = []
    for t, pts in rows.items():
        xs, cs = zip(*pts)
        groups.append(ObservationGroup(t, np.array(xs), np.array(cs), weights.get(t, 1.0)))
    return ObservationSet(tuple(groups))


def write_observations(observations: ObservationSet, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["time", "x", "concentration", "weight"])
        for g in observations.groups:
            for x, c in zip(g.x, g.c):
                writer.writerow([repr(g.time), repr(float(x)), repr(float(c)), repr(g.weight)])


def load_reference_fit(day: str) -> tuple[np.ndarray, np.ndarray]:
    """Locations and reference fitted concentrations from a bundled table."""
    xs, fitted = [], []
    text = bundled_data(f"made_{day}.csv").read_text().splitlines()
    reader = csv.DictReader(line for line in text if not line.startswith("#"))
    for row in reader:
        xs.append(float(row["x"]))
        fitted.append(float(row["fitted_concentration"]))
    return np.array(xs), np.array(fitted)


def estimate_mass_constant(group: ObservationGroup, domain: tuple[float, float]) -> float:
    """Trapezoidal integral of the observed concentrations, padded with zeros at the domain ends."""
    if len(group) < 2:
        raise ValueError("need at least two observations to estimate the mass constant")
    lo, hi = domain
    x = np.asarray(group.x, dtype=float)
    c = np.asarray(group.c, dtype=float)
    if x[0] > lo:
        x, c = np.concatenate(([lo], x)), np.concatenate(([0.0], c))
    if x[-1] < hi:
        x, c = np.concatenate((x, [hi])), np.concatenate((c, [0.0]))
    return float(np.trapezoid(c, x))


@dataclass
class RunConfig:
    """Flat run configuration read from an INI file.

    Sections: ``[model]``, ``[grid]``, ``[output]``, ``[fit]``, ``[sample]``.
    """

    lam: float = 0.8
    gamma: float = 0.9999
    b: float = 0.1859783
    a0: float = 0.110
    a1: float = 0.00032
    a2: float = 0.0003
    a3: float = 0.00019
    x_mid: float = MADE_X_MID
    x_left: float = 0.0
    x_right: float = 300.0
    mass_constant: float = 56778.24
    source: float | None = None
    intervals: int = 600
    dt: float = 1.0
    substeps: int = 4
    solver: str = "direct"
    clip_negative: bool = False
    output_times: list[float] = field(default_factory=lambda: [224.0])
    out_dir: str = "out"
    data: str | None = None
    pair: str = "a01"
    fit_times: list[float] | None = None
    weights: dict[float, float] = field(default_factory=dict)
    fd_delta: float = 1e-6
    armijo_rho: float = 0.5
    armijo_sigma: float = 1e-4
    penalty0: float = 1e-2
    tol: float = 1e-8
    max_iter: int = 100
    adaptive_penalty: bool = False
    sample_n: int = 1000
    sample_seed: int = 20180709
    sample_time: float | None = None
    bins: int = 100

    def params(self) -> FadeParams:
        drift = DriftParams(self.a0, self.a1, self.a2, self.a3, self.x_mid)
        return FadeParams(self.lam, self.gamma, self.b, drift, self.x_left, self.x_right,
                          self.mass_constant)

    def grid(self, t_end: float, required: Iterable[float] = ()) -> SpaceTimeGrid:
        """Grid up to ``t_end`` whose time levels include every ``required`` time."""
        grid = SpaceTimeGrid.uniform(self.x_left, self.x_right, self.intervals, t_end,
                                     max_dt=self.dt)
        for t in required:
            if not np.any(np.isclose(grid.times, t, rtol=0.0, atol=1e-9 * max(1.0, t))):
                raise ConfigError(
                    f"time {t} is not a multiple of the step {grid.times[1] - grid.times[0]:g}"
                )
        return grid

    def source_location(self, grid: SpaceTimeGrid) -> float:
        """Release point; a point on or beyond a boundary moves to the nearest interior node."""
        y0 = self.x_left if self.source is None else self.source
        lo, hi = grid.x_left + grid.h, grid.x_right - grid.h
        if not lo <= y0 <= hi:
            moved = min(max(y0, lo), hi)
            log.info("source %g moved to interior node %g", y0, moved)
            return moved
        return y0

    def solver_options(self) -> dict:
        return {"substeps": self.substeps, "method": self.solver,
                "clip_negative": self.clip_negative}

    def echo(self) -> dict:
        return asdict(self)


def _floats(text: str) -> list[float]:
    return [float(v) for v in text.replace(";", ",").split(",") if v.strip()]


def load_config(path: str | Path) -> RunConfig:
    """Parse an INI file into :class:`RunConfig`; unknown keys are errors."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    parser = configparser.ConfigParser()
    try:
        parser.read(path)
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    cfg = RunConfig()
    floats = {
        "model": {"lambda": "lam", "gamma": "gamma", "b": "b", "a0": "a0", "a1": "a1",
                  "a2": "a2", "a3": "a3", "x_mid": "x_mid", "x_left": "x_left",
                  "x_right": "x_right", "mass_constant": "mass_constant", "source": "source"},
        "grid": {"dt": "dt"},
        "fit": {"fd_delta": "fd_delta", "rho": "armijo_rho", "sigma": "armijo_sigma",
                "penalty0": "penalty0", "tol": "tol"},
        "sample": {"time": "sample_time"},
    }
    ints = {"grid": {"intervals": "intervals", "substeps": "substeps"},
            "fit": {"max_iter": "max_iter"}, "sample": {"n": "sample_n", "seed": "sample_seed",
                                                        "bins": "bins"}}
    bools = {"grid": {"clip_negative": "clip_negative"}, "fit": {"adaptive": "adaptive_penalty"}}
    strings = {"grid": {"solver": "solver"}, "output": {"dir": "out_dir"},
               "fit": {"pair": "pair", "data": "data"}}
    lists = {"output": {"times": "output_times"}, "fit": {"times": "fit_times"}}
    known = {}
    for table in (floats, ints, bools, strings, lists):
        for section, keys in table.items():
            known.setdefault(section, set()).update(keys)
    known.setdefault("fit", set()).add("weights")
    for section in parser.sections():
        if section not in known:
            raise ConfigError(f"{path}: unknown section [{section}]")
        for key in parser[section]:
            if key not in known[section]:
                raise ConfigError(f"{path}: unknown key {key!r} in [{section}]")
    try:
        for section, keys in floats.items():
            for key, attr in keys.items():
                if parser.has_option(section, key):
                    setattr(cfg, attr, parser.getfloat(section, key))
        for section, keys in ints.items():
            for key, attr in keys.items():
                if parser.has_option(section, key):
                    setattr(cfg, attr, parser.getint(section, key))
        for section, keys in bools.items():
            for key, attr in keys.items():
                if parser.has_option(section, key):
                    setattr(cfg, attr, parser.getboolean(section, key))
        for section, keys in strings.items():
            for key, attr in keys.items():
                if parser.has_option(section, key):
                    setattr(cfg, attr, parser.get(section, key).strip())
        for section, keys in lists.items():
            for key, attr in keys.items():
                if parser.has_option(section, key):
                    setattr(cfg, attr, _floats(parser.get(section, key)))
        if parser.has_option("fit", "weights"):
            for item in parser.get("fit", "weights").split(","):
                t, _, w = item.partition(":")
                cfg.weights[float(t)] = float(w)
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    if cfg.data is not None and not Path(cfg.data).is_absolute():
        cfg.data = str((path.parent / cfg.data).resolve())
    if cfg.solver not in ("direct", "iterative"):
        raise ConfigError(f"{path}: solver must be 'direct' or 'iterative'")
    try:
        cfg.params()
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return cfg
