"""Separation-principle toolkit for continuous-time LQG control on a uniform grid.

Riccati synthesis, Kalman-Bucy filtering, closed-loop simulation driven by
Gaussian or jump martingales, Volterra resolvents for the loop equation, the
step-change example with its Bayes oracle, and Monte Carlo experiments.
"""

from .errors import (
    CausalityViolation,
    InvalidArgument,
    NumericalBlowup,
    SepControlError,
    SynthesisFailure,
    ValidationError,
)
from .experiments import (
    ExperimentReport,
    cost_decomposition_check,
    estimate_cost,
    full_information_cost,
    open_loop_cost,
    optimality_comparison,
    pathwise_ito_identity_check,
    sigma_invariance_experiment,
)
from .kalman import FilterRun, innovation_path, run_kalman_filter
from .loop import (
    ClassL,
    ControlLaw,
    CustomLaw,
    Delayed,
    SeparatedLQG,
    StateFeedback,
    VolterraKernel,
    ZeroLaw,
    apply_resolvent,
    causality_check,
    loop_kernel,
    solve_closed_loop,
    uniqueness_check,
    volterra_resolvent,
)
from .model import (
    CostSpec,
    MatrixSchedule,
    SamplePath,
    SystemModel,
    TimeGrid,
    build_grid,
    simulate_open_loop,
    skorohod_distance,
    transition_matrix,
)
from .noise import (
    CompensatedPoisson,
    Composite,
    GBMMartingale,
    NoisePath,
    StepChange,
    Wiener,
    coarsen,
    empirical_martingale_check,
    resample_after,
    sample_noise,
    sample_noise_batch,
    zero_noise,
)
from .shiryaev import bayes_oracle, run_shiryaev_filter, run_step_change_scenario, scalar_lqg_gain
from .synthesis import control_gain, solve_control_riccati, solve_filter_riccati

__version__ = "0.1.0"

__all__ = [
    "FilterRun",
    "innovation_path",
    "run_kalman_filter",
    "CausalityViolation",
    "ClassL",
    "CompensatedPoisson",
    "Composite",
    "ControlLaw",
    "CostSpec",
    "CustomLaw",
    "Delayed",
    "ExperimentReport",
    "GBMMartingale",
    "InvalidArgument",
    "MatrixSchedule",
    "NoisePath",
    "NumericalBlowup",
    "SamplePath",
    "SepControlError",
    "SeparatedLQG",
    "StateFeedback",
    "StepChange",
    "SynthesisFailure",
    "SystemModel",
    "TimeGrid",
    "ValidationError",
    "VolterraKernel",
    "Wiener",
    "ZeroLaw",
    "apply_resolvent",
    "bayes_oracle",
    "build_grid",
    "causality_check",
    "coarsen",
    "control_gain",
    "cost_decomposition_check",
    "empirical_martingale_check",
    "estimate_cost",
    "full_information_cost",
    "loop_kernel",
    "open_loop_cost",
    "optimality_comparison",
    "pathwise_ito_identity_check",
    "resample_after",
    "run_shiryaev_filter",
    "run_step_change_scenario",
    "sample_noise",
    "sample_noise_batch",
    "scalar_lqg_gain",
    "sigma_invariance_experiment",
    "simulate_open_loop",
    "skorohod_distance",
    "solve_closed_loop",
    "solve_control_riccati",
    "solve_filter_riccati",
    "transition_matrix",
    "uniqueness_check",
    "volterra_resolvent",
    "zero_noise",
]
