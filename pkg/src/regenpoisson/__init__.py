"""Poisson's equation for countable-state Markov chains.

Truncated solvers for the regenerative solution, drift certificates,
regenerative simulation and diagnostics for non-unique solutions.
"""

__version__ = "0.1.0"

from .chain import (
    LeakPolicy,
    TransitionKernel,
    TruncatedChain,
    build_truncation,
    center,
    detect_period,
    refine,
    stationary_dist,
    validate_kernel,
)
from .diagnostics import (
    constant_diff_check,
    harmonic_residual,
    poisson_residual,
    solidarity_check,
    ui_limit_check,
)
from .gallery import HarmonicSpec, birth_death, current_age, example1, example1_harmonic, reflected_walk, two_state
from .lyapunov import certify_thm5, certify_thm7, check_drift, queue_certificate
from .poisson import asymptotic_variance, cycle_moment, pi_gz, solve, solve_direct, solve_gstar, solve_gz
from .regen import clt_experiment, estimate_gz, estimate_ratio, lil_experiment, simulate_cycle

__all__ = [name for name in dir() if not name.startswith("_")]
