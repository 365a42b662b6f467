"""Solver library for backward doubly stochastic differential equations
with Poisson jumps on random time horizons, plus a verification harness
(a priori energy bound, uniqueness probes, continuous dependence, and the
probabilistic representation of quasilinear parabolic integro-differential
problems)."""

__version__ = "0.1.0"

from .noise import (
    TimeGrid,
    MarkSpace,
    NoiseBundle,
    NoiseBatch,
    generate_bundle,
    generate_batch,
    compensated_increment,
)
from .drivers import (
    ConcaveModulus,
    DriverSpec,
    TerminalSpec,
    check_growth,
    check_monotone,
    builtin_driver,
)
from .mollify import MollifierConfig, bump_kernel, mollify_driver, estimate_lipschitz
from .forward import Box, ForwardModel, ForwardPath, simulate_forward, exit_time
from .backward import (
    BackwardConfig,
    BackwardSolution,
    solve_backward,
    picard_step,
    solution_norms,
)
from .oracle import analytic_linear, nested_ce, pide_reference
from .diagnostics import apriori_bound, uniqueness_probe, continuous_dependence, bihari_bound
from .feynman_kac import FKProblem, estimate_u, u_surface
from .catalog import catalog_problem, CATALOG_NAMES

__all__ = [
    "TimeGrid",
    "MarkSpace",
    "NoiseBundle",
    "NoiseBatch",
    "generate_bundle",
    "generate_batch",
    "compensated_increment",
    "ConcaveModulus",
    "DriverSpec",
    "TerminalSpec",
    "check_growth",
    "check_monotone",
    "builtin_driver",
    "MollifierConfig",
    "bump_kernel",
    "mollify_driver",
    "estimate_lipschitz",
    "Box",
    "ForwardModel",
    "ForwardPath",
    "simulate_forward",
    "exit_time",
    "BackwardConfig",
    "BackwardSolution",
    "solve_backward",
    "picard_step",
    "solution_norms",
    "analytic_linear",
    "nested_ce",
    "pide_reference",
    "apriori_bound",
    "uniqueness_probe",
    "continuous_dependence",
    "bihari_bound",
    "FKProblem",
    "estimate_u",
    "u_surface",
    "catalog_problem",
    "CATALOG_NAMES",
]
