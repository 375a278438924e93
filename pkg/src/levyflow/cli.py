"""Command line entry point: ``levyflow {solve,fit,sample,report}``.

Exit status is 0 on success, 1 when a computation fails and 2 for usage or
configuration errors.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .appio import (
    APPENDIX_SEEDS,
    ConfigError,
    RunConfig,
    appendix_seed_params,
    load_config,
    load_observations,
)
from .core import eval_piecewise_linear
from .fvsolver import SolverError, initial_point_source, solve_forward
from .invfit import PAIRS, FitError, FitProblem, fit
from .sampler import (
    build_cdf,
    empirical_density,
    interval_probability_ci,
    params_digest,
    read_batch,
    sample,
    write_batch,
)

log = logging.getLogger("levyflow")

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


def _fmt_time(t: float) -> str:
    return f"{t:g}".replace(".", "p")


def _solve(cfg: RunConfig, times: list[float]):
    params = cfg.params()
    grid = cfg.grid(max(times), times)
    y0 = cfg.source_location(grid)
    initial = initial_point_source(grid, y0)
    return solve_forward(params, grid, initial, times, **cfg.solver_options())


def cmd_solve(args: argparse.Namespace, cfg: RunConfig) -> int:
    out = Path(args.out or cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    solution = _solve(cfg, cfg.output_times)
    K = cfg.mass_constant
    x = solution.grid.nodes
    for snap in solution.snapshots:
        tag = _fmt_time(snap.time)
        with open(out / f"snapshot_t{tag}.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["x", "p", "c"])
            for xi, pi in zip(x, snap.values):
                writer.writerow([repr(float(xi)), repr(float(pi)), repr(float(K * pi))])
        with open(out / f"plot_t{tag}.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["x", "c"])
            for xi, pi in zip(x, snap.values):
                if pi > 0.0:
                    writer.writerow([repr(float(xi)), repr(float(K * pi))])
        print(f"t={snap.time:g}: mass={snap.mass(solution.grid.h):.6f} -> {out}/snapshot_t{tag}.csv")
    return EXIT_OK


def cmd_fit(args: argparse.Namespace, cfg: RunConfig) -> int:
    pair = args.pair or cfg.pair
    if pair not in PAIRS:
        raise ConfigError(f"fit one coefficient pair per pass (a01 or a23), got {pair!r}")
    data = args.data or cfg.data
    if data is None:
        raise ConfigError("no observation file given (--data or [fit] data)")
    if args.seed_from_appendix:
        seed = appendix_seed_params(args.seed_from_appendix, cfg.x_left, cfg.x_right, cfg.x_mid)
        cfg.lam, cfg.gamma, cfg.b = seed.lam, seed.gamma, seed.b
        cfg.mass_constant = seed.mass_constant
        cfg.a0 = cfg.a2 = seed.drift.a0
        cfg.a1 = cfg.a3 = 0.0
    observed = load_observations(data, cfg.weights)
    times = args.times or cfg.fit_times or observed.times
    groups = tuple(g for g in observed.groups if any(np.isclose(g.time, t) for t in times))
    if not groups:
        raise ConfigError(f"no observation group matches times {times}")
    observed = type(observed)(groups)
    K = cfg.mass_constant
    params = cfg.params()
    grid = cfg.grid(max(observed.times), observed.times)
    problem = FitProblem(
        observations=observed.scaled(1.0 / K),
        base_params=params,
        grid=grid,
        source=cfg.source_location(grid),
        pair=pair,
        fd_delta=cfg.fd_delta,
        armijo_rho=cfg.armijo_rho,
        armijo_sigma=cfg.armijo_sigma,
        penalty0=cfg.penalty0,
        tol=cfg.tol,
        max_iter=cfg.max_iter,
        adaptive_penalty=cfg.adaptive_penalty,
        solver_options=cfg.solver_options(),
    )
    out = Path(args.out or cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    started = time.perf_counter()
    status, message = EXIT_OK, "ok"
    try:
        result = fit(problem)
        alpha, trace, converged = result.alpha, result.trace, result.converged
        if not converged:
            status, message = EXIT_FAIL, f"no convergence within {cfg.max_iter} iterations"
    except FitError as exc:
        status, message = EXIT_FAIL, str(exc)
        trace = exc.trace
        alpha = exc.alpha if exc.alpha is not None else problem.initial_alpha()
        converged = False
    elapsed = time.perf_counter() - started
    fitted_params = problem.params_for(alpha)

    table = []
    try:
        model = problem.model_values(alpha) * K
    except FitError:
        model = np.full(len(observed), np.nan)
    i = 0
    for g in observed.groups:
        for x, c in zip(g.x, g.c):
            table.append({"time": g.time, "x": float(x), "observed": float(c),
                          "fitted": float(model[i])})
            i += 1
    with open(out / "fitted_vs_observed.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["time", "x", "observed", "fitted"])
        writer.writeheader()
        writer.writerows(table)
    drift = fitted_params.drift
    report = {
        "status": message,
        "converged": converged,
        "pair": pair,
        "fitted": {"a0": drift.a0, "a1": drift.a1, "a2": drift.a2, "a3": drift.a3,
                   "x_mid": drift.x_mid, "b": fitted_params.b, "lambda": fitted_params.lam,
                   "gamma": fitted_params.gamma, "K": K},
        "trace": [
            {"iteration": k, "alpha": rec.alpha.tolist(), "objective": rec.objective,
             "penalty": rec.penalty, "step": rec.step, "direction": rec.direction.tolist(),
             "backtracks": rec.backtracks}
            for k, rec in enumerate(trace.records if trace is not None else [])
        ],
        "table": table,
        "timing_seconds": elapsed,
        "version": __version__,
        "config": cfg.echo(),
    }
    (out / "report.json").write_text(json.dumps(report, indent=2, default=float))
    print(f"{pair}: {PAIRS[pair][0]}={alpha[0]:.6g} {PAIRS[pair][1]}={alpha[1]:.6g} "
          f"({message}, {len(report['trace'])} iterations) -> {out}/report.json")
    return status


def cmd_sample(args: argparse.Namespace, cfg: RunConfig) -> int:
    n = cfg.sample_n if args.n is None else args.n
    if n < 1:
        raise ConfigError("sample size must be at least 1")
    seed = cfg.sample_seed if args.seed is None else args.seed
    t = args.time if args.time is not None else (cfg.sample_time or cfg.output_times[-1])
    solution = _solve(cfg, [t])
    snap = solution.snapshots[0]
    grid = solution.grid
    cdf = build_cdf(grid.nodes, snap.values)
    batch = sample(cdf, n, seed, time=t)
    out = Path(args.out or cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    tag = _fmt_time(t)
    digest = params_digest(json.dumps(cfg.echo(), sort_keys=True, default=str))
    write_batch(batch, out / f"samples_t{tag}.csv", digest)
    edges = np.linspace(grid.x_left, grid.x_right, cfg.bins + 1)
    density = empirical_density(batch, edges)
    centers = 0.5 * (edges[:-1] + edges[1:])
    fitted = eval_piecewise_linear(snap, grid, centers)
    with open(out / f"histogram_t{tag}.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["bin_left", "bin_right", "density", "fitted_pdf"])
        for row in zip(edges[:-1], edges[1:], density, fitted):
            writer.writerow([repr(float(v)) for v in row])
    print(f"{n} samples at t={t:g} (seed {seed}) -> {out}/samples_t{tag}.csv")
    return EXIT_OK


def cmd_report(args: argparse.Namespace) -> int:
    try:
        a, b = (float(v) for v in args.interval.split(","))
    except ValueError:
        raise ConfigError(f"--interval expects 'a,b', got {args.interval!r}") from None
    if not a < b:
        raise ConfigError("interval must satisfy a < b")
    if not 0.0 < args.confidence < 1.0:
        raise ConfigError("confidence must lie in (0, 1)")
    path = Path(args.sample)
    if not path.is_file():
        raise ConfigError(f"sample file not found: {path}")
    batch = read_batch(path)
    P, lower, upper = interval_probability_ci(batch, a, b, args.confidence)
    result = {"interval": [a, b], "confidence": args.confidence, "n": len(batch),
              "estimate": P, "lower": lower, "upper": upper, "sample": str(path)}
    target = Path(args.json) if args.json else path.with_suffix(".interval.json")
    target.write_text(json.dumps(result, indent=2))
    print(f"P[Y in ({a:g}, {b:g})] = {P:.6f}  {args.confidence:.0%} CI [{lower:.6f}, {upper:.6f}]")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="levyflow", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="solve the forward equation and write snapshots")
    p.add_argument("--config", required=True)
    p.add_argument("--out")

    p = sub.add_parser("fit", help="fit one drift coefficient pair to observed concentrations")
    p.add_argument("--config", required=True)
    p.add_argument("--data")
    p.add_argument("--pair", choices=sorted(PAIRS))
    p.add_argument("--seed-from-appendix", choices=sorted(APPENDIX_SEEDS))
    p.add_argument("--times", type=lambda s: [float(v) for v in s.split(",")],
                   help="comma-separated observation times to fit jointly")
    p.add_argument("--out")

    p = sub.add_parser("sample", help="draw positions from the solved density")
    p.add_argument("--config", required=True)
    p.add_argument("--n", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--time", type=float)
    p.add_argument("--out")

    p = sub.add_parser("report", help="interval probability and confidence interval")
    p.add_argument("--sample", required=True)
    p.add_argument("--interval", required=True)
    p.add_argument("--confidence", type=float, default=0.95)
    p.add_argument("--json")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "report":
            return cmd_report(args)
        cfg = load_config(args.config)
        handler = {"solve": cmd_solve, "fit": cmd_fit, "sample": cmd_sample}[args.command]
        return handler(args, cfg)
    except ConfigError as exc:
        parser.print_usage(sys.stderr)
        print(f"levyflow: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (SolverError, FitError, ValueError, np.linalg.LinAlgError) as exc:
        print(f"levyflow: computation failed: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
