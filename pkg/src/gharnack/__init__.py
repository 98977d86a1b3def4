"""Desk-scale numerical laboratory for sublinear expectations: semigroup
solvers, scenario Monte Carlo, coupling by change of measure, and
Harnack-inequality certificates for state equations with volatility
uncertainty."""

from .model import (
    ModelCoefficients,
    ModelError,
    Payoff,
    TimeGrid,
    ValidationReport,
    VolatilityBand,
    default_state_domain,
    g_function,
    make_coefficient,
    make_payoff,
    validate_coefficients,
)
from .gheat import (
    GridFunction,
    PdeConfig,
    PdeError,
    PolicyTable,
    auto_pde_config,
    feedback_optimal_control,
    solve_g_heat,
    solve_g_hjb,
    solve_with_tolerance,
)
from .scenario import (
    EstimateWithError,
    FeedbackControl,
    GBMPath,
    ScenarioControl,
    ScenarioError,
    YoungReport,
    capacity_mc,
    random_young_trial,
    sample_controls,
    simulate_gbm,
    terminal_functional,
    upper_expectation_mc,
    upper_semigroup_mc,
    young_check,
)
from .coupling import (
    CouplingError,
    CouplingSchedule,
    PathBundle,
    SlackReport,
    coupling_success_check,
    entropy_bound_check,
    entropy_bound_value,
    girsanov_shifted_qv_check,
    make_schedule,
    moment_bound_check,
    moment_bound_value,
    moment_exponent_a,
    simulate_coupled,
)
from .harnack import (
    HarnackError,
    HarnackReport,
    check_gradient_estimate,
    check_log_harnack,
    check_log_harnack_grid,
    check_power_harnack,
    gradient_bound,
    lipschitz_transport_check,
    log_harnack_constant,
    make_alpha_grid,
    power_harnack_exponent,
    power_threshold,
)
from .config import ConfigError, RunConfig, parse_run_config

__version__ = "0.1.0"
