"""Fractional advection-dispersion solver, drift fitting and stable-diffusion sampling."""

__version__ = "0.1.0"

from .core import (
    DensitySnapshot,
    DomainError,
    DriftParams,
    FadeParams,
    ObservationGroup,
    ObservationSet,
    SpaceTimeGrid,
    eval_drift,
    eval_piecewise_linear,
)
from .fracmat import StiffnessMatrix, assemble, matvec, stiffness_entry, to_dense
from .fvsolver import ForwardSolution, SolverError, initial_point_source, solve_forward, step
from .invfit import FitError, FitProblem, fit
from .sampler import build_cdf, inverse_cdf, sample, stable_oracle_sample

__all__ = [
    "DensitySnapshot", "DomainError", "DriftParams", "FadeParams", "ObservationGroup",
    "ObservationSet", "SpaceTimeGrid", "eval_drift", "eval_piecewise_linear",
    "StiffnessMatrix", "assemble", "matvec", "stiffness_entry", "to_dense",
    "ForwardSolution", "SolverError", "initial_point_source", "solve_forward", "step",
    "FitError", "FitProblem", "fit", "build_cdf", "inverse_cdf", "sample",
    "stable_oracle_sample",
]
