"""Prediction markets populated by Kelly and fractional-Kelly bettors."""

__version__ = "0.1.0"

from .adaptive import LambdaLearnerState, current_lambda, track_regret, update
from .core import (
    AgentState,
    MarketRound,
    Odds,
    Order,
    Population,
    clamp_probability,
    clearing_price,
    demand,
    demand_shares,
    effective_belief,
    expected_log_utility,
    kelly_fraction,
    settle,
)
from .errors import (
    AllZeroConfidence,
    ConfigError,
    DegeneratePrice,
    EmptySequence,
    Insolvent,
    KellyMarketError,
    LengthMismatch,
    PriceMismatch,
)
from .metrics import (
    BetaFit,
    FrequencySeries,
    LossLedger,
    beta_posterior_fit,
    discounted_frequency,
    fit_discount_factor,
    log_loss,
    regret_bound_check,
    wealth_identity_check,
)
from .sim import SimulationConfig, SimulationRecord, play, play_sequence, run, run_batch
