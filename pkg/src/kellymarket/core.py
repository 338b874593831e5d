"""Kelly demand, equilibrium clearing and settlement for a binary market.

A market period works like this: every agent states a belief ``p`` in the
event, owns a share ``w`` of total wealth and bets a fraction ``lam`` of
its Kelly stake. The auctioneer picks the price ``p_m`` at which buy and
sell orders cancel, the outcome is revealed, and winning shares pay $1.

All functions here are pure. ``Population`` stores its columns as
read-only numpy arrays so the round loop can stay vectorised, while
``AgentState`` gives the per-agent view.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import TYPE_CHECKING, Optional, Sequence

import numpy as np

from .errors import AllZeroConfidence, DegeneratePrice, Insolvent, PriceMismatch

if TYPE_CHECKING:
    from .adaptive import LambdaLearnerState

# Beliefs are kept away from 0 and 1: a certain agent would stake everything.
BELIEF_EPS = 1e-9
# |sum of shares| at the clearing price, relative to total wealth.
BALANCE_TOL = 1e-9
# |sum(w_after) - sum(w_before)|, relative.
CONSERVATION_TOL = 1e-12
WEALTH_SUM_TOL = 1e-9

Probability = float


def clamp_probability(x):
    """Clamp a probability (scalar or array) into [BELIEF_EPS, 1 - BELIEF_EPS]."""
    if np.ndim(x) == 0:
        x = float(x)
        if math.isnan(x):
            raise ValueError("probability is NaN")
        return min(max(x, BELIEF_EPS), 1.0 - BELIEF_EPS)
    arr = np.asarray(x, dtype=float)
    if np.isnan(arr).any():
        raise ValueError("probability is NaN")
    return np.clip(arr, BELIEF_EPS, 1.0 - BELIEF_EPS)


def check_price(p_m: float) -> float:
    p_m = float(p_m)
    if not 0.0 < p_m < 1.0:
        raise DegeneratePrice(f"market price must lie in (0, 1), got {p_m!r}")
    return p_m


@dataclass(frozen=True)
class Odds:
    """Net payoff ``b`` per unit staked; the implied price is 1 / (1 + b)."""

    b: float

    def __post_init__(self):
        if not (self.b > 0 and math.isfinite(self.b)):
            raise ValueError(f"odds must be positive and finite, got {self.b!r}")

    @classmethod
    def from_price(cls, p_m: float) -> "Odds":
        p_m = check_price(p_m)
        return cls((1.0 - p_m) / p_m)

    @property
    def price(self) -> float:
        return 1.0 / (1.0 + self.b)


@dataclass(frozen=True)
class AgentState:
    id: int
    belief: float
    wealth: float
    lam: float = 1.0
    learner: Optional["LambdaLearnerState"] = None

    def __post_init__(self):
        object.__setattr__(self, "belief", clamp_probability(self.belief))
        if not (self.wealth >= 0 and math.isfinite(self.wealth)):
            raise ValueError(f"agent {self.id}: wealth must be >= 0, got {self.wealth!r}")
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError(f"agent {self.id}: Kelly fraction must be in [0, 1], got {self.lam!r}")


@dataclass(frozen=True)
class Order:
    agent_id: int
    shares: float
    stake: float
    effective_belief: float


def _readonly(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Population:
    """Ordered market participants with normalised wealth.

    Use :meth:`create` or :meth:`from_agents` rather than the raw constructor.
    """

    beliefs: np.ndarray
    wealths: np.ndarray
    lambdas: np.ndarray
    learners: tuple = field(default=())

    def __post_init__(self):
        beliefs = _readonly(clamp_probability(np.atleast_1d(self.beliefs)))
        wealths = _readonly(np.atleast_1d(self.wealths))
        lambdas = _readonly(np.broadcast_to(self.lambdas, beliefs.shape))
        n = beliefs.shape[0]
        if n == 0:
            raise ValueError("population must be nonempty")
        if beliefs.ndim != 1 or wealths.shape != beliefs.shape:
            raise ValueError("beliefs and wealths must be 1-d arrays of equal length")
        if not np.all(np.isfinite(wealths)) or np.any(wealths < 0):
            raise ValueError("wealths must be finite and nonnegative")
        if np.any(lambdas < 0) or np.any(lambdas > 1):
            raise ValueError("Kelly fractions must lie in [0, 1]")
        total = math.fsum(wealths)
        if abs(total - 1.0) > WEALTH_SUM_TOL:
            raise ValueError(f"wealths must sum to 1, got {total!r}")
        learners = tuple(self.learners) if self.learners else (None,) * n
        if len(learners) != n:
            raise ValueError("learners must have one entry per agent")
        object.__setattr__(self, "beliefs", beliefs)
        object.__setattr__(self, "wealths", wealths)
        object.__setattr__(self, "lambdas", lambdas)
        object.__setattr__(self, "learners", learners)

    @classmethod
    def create(cls, beliefs, wealths=None, lambdas=1.0, learners=None, normalize=False):
        beliefs = np.atleast_1d(np.asarray(beliefs, dtype=float))
        if wealths is None:
            wealths = np.full(beliefs.shape, 1.0 / max(len(beliefs), 1))
        wealths = np.atleast_1d(np.asarray(wealths, dtype=float))
        if normalize:
            wealths = wealths / wealths.sum()
        return cls(beliefs, wealths, lambdas, tuple(learners) if learners else ())

    @classmethod
    def from_agents(cls, agents: Sequence[AgentState]) -> "Population":
        return cls(
            [a.belief for a in agents],
            [a.wealth for a in agents],
            [a.lam for a in agents],
            tuple(a.learner for a in agents),
        )

    def __len__(self):
        return self.beliefs.shape[0]

    @property
    def agents(self) -> list[AgentState]:
        return [
            AgentState(i, float(p), float(w), float(lam), lr)
            for i, (p, w, lam, lr) in enumerate(
                zip(self.beliefs, self.wealths, self.lambdas, self.learners)
            )
        ]

    @property
    def total_wealth(self) -> float:
        return math.fsum(self.wealths)

    @property
    def has_learners(self) -> bool:
        return any(lr is not None for lr in self.learners)

    def with_wealths(self, wealths) -> "Population":
        return replace(self, wealths=wealths)


@dataclass(frozen=True)
class MarketRound:
    """One settled period. ``lambdas`` are the fractions in force when it cleared."""

    price: float
    orders: tuple
    outcome: int
    wealth_after: tuple
    lambdas: tuple = ()

    @property
    def net_shares(self) -> float:
        return math.fsum(o.shares for o in self.orders)


def kelly_fraction(p: float, p_m: float) -> float:
    """Signed Kelly fraction of wealth to stake on the event at price ``p_m``.

    Positive values buy the event, negative values bet against it; the
    magnitude is the share of wealth at risk.
    """
    p = clamp_probability(p)
    p_m = check_price(p_m)
    if p > p_m:
        return (p - p_m) / (1.0 - p_m)
    if p < p_m:
        return -(p_m - p) / p_m
    return 0.0


def effective_belief(p: float, p_m: float, lam: float) -> float:
    """Belief a lam-fractional Kelly bettor acts on: lam * p + (1 - lam) * p_m."""
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"Kelly fraction must be in [0, 1], got {lam!r}")
    return lam * p + (1.0 - lam) * p_m


def demand_shares(agent: AgentState, p_m: float) -> Order:
    p_m = check_price(p_m)
    w = agent.wealth
    pe = effective_belief(agent.belief, p_m, agent.lam)
    if pe > p_m:
        shares = (w / p_m) * (pe - p_m) / (1.0 - p_m)
        stake = shares * p_m
    elif pe < p_m:
        stake = (p_m - pe) / p_m * w
        shares = -stake / (1.0 - p_m)
    else:
        shares = stake = 0.0
    return Order(agent.id, shares, stake, pe)


def effective_beliefs(pop: Population, p_m: float) -> np.ndarray:
    return pop.lambdas * pop.beliefs + (1.0 - pop.lambdas) * p_m


def demand(pop: Population, p_m: float):
    """Vectorised ``demand_shares`` for a whole population.

    Returns ``(shares, stakes, effective_beliefs)`` arrays.
    """
    p_m = check_price(p_m)
    pe = effective_beliefs(pop, p_m)
    w = pop.wealths
    shares = w * (pe - p_m) / (p_m * (1.0 - p_m))
    stakes = np.where(shares > 0, shares * p_m, -shares * (1.0 - p_m))
    return shares, stakes, pe


def orders_at(pop: Population, p_m: float) -> list[Order]:
    shares, stakes, pe = demand(pop, p_m)
    return [
        Order(i, float(q), float(s), float(b))
        for i, (q, s, b) in enumerate(zip(shares, stakes, pe))
    ]


def aggregate_demand(pop: Population, p_m: float) -> float:
    shares, _, _ = demand(pop, p_m)
    return math.fsum(shares)


def clearing_price(pop: Population) -> float:
    """Price at which aggregate demand vanishes.

    This is the mean belief weighted by ``lam * wealth``; with every
    ``lam == 1`` it is the plain wealth-weighted mean.
    """
    weights = pop.lambdas * pop.wealths
    total = math.fsum(weights)
    if total <= 0:
        raise AllZeroConfidence("no agent commits wealth: sum of lam * w is zero")
    p_m = math.fsum(weights * pop.beliefs) / total
    active = pop.beliefs[weights > 0]
    return min(max(p_m, float(active.min())), float(active.max()))


def settle(pop: Population, p_m: float, outcome: int) -> Population:
    """Pay off every order at ``p_m`` and return the post-outcome population.

    Each agent's wealth is scaled by ``p'/p_m`` (event) or
    ``(1 - p')/(1 - p_m)`` (no event) where ``p'`` is its effective belief.
    For full-Kelly agents that is exactly Bayes' rule with wealth as the
    prior. Rounding drift is removed by renormalising to the prior total.
    """
    p_m = check_price(p_m)
    if outcome not in (0, 1):
        raise ValueError(f"outcome must be 0 or 1, got {outcome!r}")
    total = pop.total_wealth
    residual = aggregate_demand(pop, p_m)
    if abs(residual) > BALANCE_TOL * total:
        raise PriceMismatch(
            f"price {p_m!r} leaves net demand {residual!r} (tolerance {BALANCE_TOL * total!r})"
        )
    pe = effective_beliefs(pop, p_m)
    ratio = pe / p_m if outcome else (1.0 - pe) / (1.0 - p_m)
    new = pop.wealths * ratio
    new *= total / math.fsum(new)
    return pop.with_wealths(new)


def expected_log_utility(shares: float, w: float, p: float, p_m: float) -> float:
    """Expected log wealth after buying ``shares`` (negative = selling) at ``p_m``."""
    win = (1.0 - p_m) * shares + w
    lose = -p_m * shares + w
    if win <= 0 or lose <= 0:
        raise Insolvent(f"position of {shares!r} shares leaves wealth ({win!r}, {lose!r})")
    return p * math.log(win) + (1.0 - p) * math.log(lose)
