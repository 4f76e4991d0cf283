"""Truncated Euler-Maruyama schemes and multilevel Monte Carlo for SDEs with superlinear coefficients."""

__version__ = "0.1.0"

from .rng import GAUSSIAN_METHOD, RandomStream, Role, brownian_increments, make_stream
from .sde import (
    PAYOFFS, PROBLEMS, LevelGrid, Payoff, SdeProblem, call_payoff, coarsen, coupled_increments, gbm,
    identity_payoff, lewis, square_payoff, zero,
)
from .schemes import (
    PathOutcome, SchemeKind, TruncationConfig, TruncationWarning, default_truncation, em_step,
    make_truncation, simulate_coupled_pair, simulate_terminal, truncate_state, truncation_radius,
)
from .mlmc import (
    MlmcPlan, MlmcResult, PlanningError, RateConstants, allocate_samples, choose_L, complexity_bound,
    pilot_constants, plan, run_level, run_mlmc, run_standard_mc, standard_mc_budget, truncated_em_rates,
)
from .analysis import CostCurve, RateFit, cost_curve, fit_rate, strong_error_curve, variance_decay_curve
