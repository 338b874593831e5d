"""Online learning of the Kelly fraction.

An agent treats its own belief and the market price as two experts and
keeps a weight on each. Weights are multiplied by the probability each
expert gave to the realised outcome, which is the same update the market
applies to wealth. The Kelly fraction is the agent's share of the total
weight, so acting on ``lam * p + (1 - lam) * p_m`` is exactly the Bayes
mixture of the two experts.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

# Rescale once the weights drift outside [2**-600, 2**600].
_RESCALE_BELOW = 2.0 ** -600
_RESCALE_ABOVE = 2.0 ** 600
# A dominated weight is held at 2**-400 of the other instead of underflowing;
# with the rescale band above this floor stays a normal float.
_MIN_RATIO_EXP = -400


@dataclass(frozen=True)
class LambdaLearnerState:
    """Two-expert weights. True weights are ``weight * 2**scale_exp``."""

    weight_self: float
    weight_market: float
    scale_exp: int = 0

    def __post_init__(self):
        if not (self.weight_self > 0 and self.weight_market > 0):
            raise ValueError(
                f"learner weights must be positive, got ({self.weight_self!r}, {self.weight_market!r})"
            )

    @classmethod
    def from_lambda(cls, lam: float) -> "LambdaLearnerState":
        if not 0.0 < lam < 1.0:
            raise ValueError(f"initial Kelly fraction must be in (0, 1) for a learner, got {lam!r}")
        return cls(lam, 1.0 - lam)

    @property
    def log_total_weight(self) -> float:
        return math.log(self.weight_self + self.weight_market) + self.scale_exp * math.log(2.0)


def current_lambda(state: LambdaLearnerState) -> float:
    return state.weight_self / (state.weight_self + state.weight_market)


def rescale(state: LambdaLearnerState) -> LambdaLearnerState:
    """Renormalise by a power of two; ``current_lambda`` is unchanged bit for bit."""
    _, e = math.frexp(state.weight_self + state.weight_market)
    return LambdaLearnerState(
        math.ldexp(state.weight_self, -e),
        math.ldexp(state.weight_market, -e),
        state.scale_exp + e,
    )


def update(state: LambdaLearnerState, p_self: float, p_market: float, outcome: int) -> LambdaLearnerState:
    if not (0.0 < p_self < 1.0 and 0.0 < p_market < 1.0):
        raise ValueError("expert predictions must lie in (0, 1)")
    if outcome == 1:
        ls, lm = p_self, p_market
    elif outcome == 0:
        ls, lm = 1.0 - p_self, 1.0 - p_market
    else:
        raise ValueError(f"outcome must be 0 or 1, got {outcome!r}")
    ws, wm = state.weight_self * ls, state.weight_market * lm
    total = ws + wm
    if total < _RESCALE_BELOW or total > _RESCALE_ABOVE:
        _, e = math.frexp(total)
        ws, wm = math.ldexp(state.weight_self, -e) * ls, math.ldexp(state.weight_market, -e) * lm
        new_exp = state.scale_exp + e
    else:
        new_exp = state.scale_exp
    floor = math.ldexp(max(ws, wm), _MIN_RATIO_EXP)
    return LambdaLearnerState(max(ws, floor), max(wm, floor), new_exp)


@dataclass(frozen=True)
class LearnerRegret:
    mixture_loss: float
    self_loss: float
    market_loss: float
    log_total_weight: float
    final_lambda: float

    @property
    def regret(self) -> float:
        """Excess log loss of the learner over the better expert."""
        return self.mixture_loss - min(self.self_loss, self.market_loss)

    @property
    def log_wealth_change(self) -> float:
        """Log growth of a Kelly bettor acting on the mixture against the market."""
        return self.market_loss - self.mixture_loss


def _nll(p: float, y: int) -> float:
    return -math.log(p if y else 1.0 - p)


def track_regret(
    p_self: float | Sequence[float],
    p_market: Sequence[float],
    outcomes: Sequence[int],
    initial: LambdaLearnerState | None = None,
) -> LearnerRegret:
    """Run a learner over a sequence and account for the losses of both experts.

    ``p_self`` may be a fixed belief or one prediction per round. The
    learner's prediction for round t uses the fraction held before the
    round-t update.
    """
    state = initial or LambdaLearnerState(0.5, 0.5)
    n = len(outcomes)
    if len(p_market) != n:
        raise ValueError("p_market and outcomes must have equal length")
    selfs = [p_self] * n if isinstance(p_self, (int, float)) else list(p_self)
    if len(selfs) != n:
        raise ValueError("p_self and outcomes must have equal length")
    w0 = state.log_total_weight
    mix = ls = lm = 0.0
    for ps, pm, y in zip(selfs, p_market, outcomes):
        lam = current_lambda(state)
        mix += _nll(lam * ps + (1.0 - lam) * pm, y)
        ls += _nll(ps, y)
        lm += _nll(pm, y)
        state = update(state, ps, pm, y)
    return LearnerRegret(mix, ls, lm, state.log_total_weight - w0, current_lambda(state))
