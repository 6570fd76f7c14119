"""Monotone mean-variance investment and reinsurance laboratory."""

__version__ = "0.1.0"

from .closed_form import (
    FrontierPoint,
    OdeCoefficients,
    SaddleControls,
    ZeroStrategyRegimeError,
    expected_wealth_optimal,
    frontier_from_theta,
    frontier_sweep,
    mmv_value,
    ode_coefficients,
    optimal_strategy_benchmark,
    riskless_wealth,
    saddle_feedback,
    theta_for_target_mean,
    value_function,
    y_second_moment,
)
from .mmv_discrete import DiscreteRv, MmvResult, mmv_truncation, mmv_waterfill, mv_utility
from .model import (
    ClaimModel,
    InsuranceParams,
    MarketParams,
    ModelConfig,
    claim_moments,
    experiment_6_2,
    load_config,
    rho,
    rho_schedule,
    save_config,
    validate_config,
)
from .schedules import CoefficientSchedule, integrate
from .simulation import (
    FeedbackStrategy,
    McEstimate,
    PathRecord,
    benchmark_strategy,
    equilibrium_strategy,
    identity_residual_halving,
    mc_game_objective,
    mc_summary,
    mc_terminal_stats,
    pathwise_identity_residual,
    simulate_diffusion_approx,
    simulate_path,
    zero_strategy,
)
from .verification import (
    GeneratorInput,
    SaddleReport,
    apply_generator,
    hjbi_scan,
    market_response_value,
    mc_saddle_check,
)
