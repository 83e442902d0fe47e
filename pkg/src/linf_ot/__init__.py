"""Entropic approximation and exact solution of L-infinity optimal transport
between discrete measures."""

from .blockapprox import block_approximate, verify_entropy_bound, verify_winf_bound
from .bottleneck import permutation_brute_force, solve_bottleneck
from .estimators import BottleneckTransport, EntropicInfTransport
from .harness import generate_instance, sweep
from .measures import (
    Coupling,
    CostMatrix,
    DiscreteMeasure,
    Instance,
    build_cost,
    entropy,
    eval_jpe,
    ess_sup,
    support_set,
)
from .monotonicity import (
    check_c_cyclical_monotonicity,
    check_inf_cyclical_monotonicity,
    rate_functions,
)
from .sinkhorn import EpsSchedule, SolverConfig, solve

__version__ = "0.1.0"

__all__ = [
    "BottleneckTransport",
    "CostMatrix",
    "Coupling",
    "DiscreteMeasure",
    "EntropicInfTransport",
    "EpsSchedule",
    "Instance",
    "SolverConfig",
    "block_approximate",
    "build_cost",
    "check_c_cyclical_monotonicity",
    "check_inf_cyclical_monotonicity",
    "entropy",
    "ess_sup",
    "eval_jpe",
    "generate_instance",
    "permutation_brute_force",
    "rate_functions",
    "solve",
    "solve_bottleneck",
    "support_set",
    "sweep",
    "verify_entropy_bound",
    "verify_winf_bound",
]
