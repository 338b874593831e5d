"""Log loss, regret accounting, frequency models and the Beta wealth fit."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import stats
from scipy.special import logsumexp

from .errors import EmptySequence, LengthMismatch

REGRET_TOL = 1e-9
IDENTITY_TOL = 1e-9
BETA_FIT_TOL = 1e-6
# Relative errors on values below this fraction of the largest are measured
# against that floor; tiny wealths carry no relative precision.
RELATIVE_FLOOR = 1e-12


@dataclass(frozen=True)
class Check:
    """Outcome of one verifiable invariant.

    ``passed`` means ``value <= threshold`` (or ``>=`` when ``lower_bound``).
    Informational checks are reported but never fail a run.
    """

    name: str
    value: float
    threshold: float
    passed: bool
    lower_bound: bool = False
    informational: bool = False
    detail: str = ""

    @classmethod
    def upper(cls, name, value, threshold, **kw):
        return cls(name, float(value), threshold, bool(value <= threshold), **kw)

    @classmethod
    def lower(cls, name, value, threshold, **kw):
        return cls(name, float(value), threshold, bool(value >= threshold), lower_bound=True, **kw)

    def as_dict(self) -> dict:
        return {
            "name": self.name,
            "value": self.value,
            "threshold": self.threshold,
            "comparison": ">=" if self.lower_bound else "<=",
            "passed": self.passed,
            "informational": self.informational,
            "detail": self.detail,
        }


@dataclass(frozen=True)
class LossLedger:
    market_loss: float
    agent_losses: np.ndarray
    rounds: int = 0

    @classmethod
    def empty(cls, n_agents: int) -> "LossLedger":
        return cls(0.0, np.zeros(n_agents), 0)

    def update(self, price: float, beliefs, outcome: int) -> "LossLedger":
        beliefs = np.asarray(beliefs, dtype=float)
        if outcome:
            return LossLedger(
                self.market_loss - math.log(price),
                self.agent_losses - np.log(beliefs),
                self.rounds + 1,
            )
        return LossLedger(
            self.market_loss - math.log1p(-price),
            self.agent_losses - np.log1p(-beliefs),
            self.rounds + 1,
        )


@dataclass(frozen=True)
class FrequencySeries:
    observed: np.ndarray
    discounted: np.ndarray
    gamma: float


@dataclass(frozen=True)
class BetaFit:
    successes: int
    failures: int
    density_at_beliefs: np.ndarray
    max_deviation: float = field(default=0.0)
    # max |w - density| over the peak density; readable when wealth is far off
    peak_deviation: float = field(default=0.0)


def log_loss(predictions: Sequence[float], outcomes: Sequence[int]) -> float:
    if len(predictions) != len(outcomes):
        raise LengthMismatch(f"{len(predictions)} predictions vs {len(outcomes)} outcomes")
    total = 0.0
    for p, y in zip(predictions, outcomes):
        total -= math.log(p) if y else math.log1p(-p)
    return total


def relative_error(actual, expected) -> float:
    """Max elementwise relative error, floored at RELATIVE_FLOOR * max|expected|."""
    a = np.asarray(actual, dtype=float)
    e = np.asarray(expected, dtype=float)
    if a.size == 0:
        return 0.0
    scale = np.maximum(np.abs(e), RELATIVE_FLOOR * np.max(np.abs(e)))
    scale = np.where(scale > 0, scale, 1.0)
    return float(np.max(np.abs(a - e) / scale))


def regret_bound_check(ledger: LossLedger, initial_wealths) -> Check:
    """Slack in ``L <= min_i (L_i + ln 1/w_i)``; negative slack is a violation."""
    w = np.asarray(initial_wealths, dtype=float)
    with np.errstate(divide="ignore"):
        bounds = ledger.agent_losses - np.log(w)
    slack = float(np.min(bounds)) - ledger.market_loss
    return Check.lower(
        "regret_bound", slack, -REGRET_TOL,
        detail=f"L={ledger.market_loss!r}, best bound={float(np.min(bounds))!r}",
    )


def wealth_identity_check(record) -> Check:
    """Compare final wealths with ``w_i(0) * exp(L - L_i)``.

    The losses are recomputed from the recorded prices, effective beliefs
    and outcomes, independently of the ledger carried by the record.
    """
    w0 = np.asarray(record.initial_population.wealths, dtype=float)
    market = 0.0
    agents = np.zeros_like(w0)
    for rnd in record.rounds:
        pe = np.array([o.effective_belief for o in rnd.orders])
        if rnd.outcome:
            market -= math.log(rnd.price)
            agents -= np.log(pe)
        else:
            market -= math.log1p(-rnd.price)
            agents -= np.log1p(-pe)
    predicted = w0 * np.exp(market - agents)
    final = np.asarray(record.final_population.wealths, dtype=float)
    return Check.upper("wealth_identity", relative_error(final, predicted), IDENTITY_TOL)


def discounted_frequency(outcomes: Sequence[int], gamma: float) -> FrequencySeries:
    """Running and geometrically discounted event frequencies, one per prefix."""
    if len(outcomes) == 0:
        raise EmptySequence("need at least one outcome")
    if not 0.0 < gamma <= 1.0:
        raise ValueError(f"gamma must be in (0, 1], got {gamma!r}")
    y = np.asarray(outcomes, dtype=float)
    observed = np.cumsum(y) / np.arange(1, len(y) + 1)
    disc = np.empty_like(y)
    num = den = 0.0
    for n, yn in enumerate(y):
        num = gamma * num + yn
        den = gamma * den + 1.0
        disc[n] = num / den
    return FrequencySeries(observed, disc, gamma)


def parse_grid(spec: str) -> np.ndarray:
    """``"lo:hi:step"`` to an inclusive grid, rounded to 12 decimals."""
    try:
        lo, hi, step = (float(x) for x in spec.split(":"))
    except ValueError:
        raise ValueError(f"grid must look like lo:hi:step, got {spec!r}") from None
    if step <= 0 or hi < lo:
        raise ValueError(f"bad grid {spec!r}")
    n = int(math.floor((hi - lo) / step + 1e-9)) + 1
    grid = np.round(lo + step * np.arange(n), 12)
    if grid[0] <= 0 or grid[-1] > 1:
        raise ValueError(f"grid values must lie in (0, 1], got {spec!r}")
    return grid


def fit_discount_factor(prices, outcomes, grid, burn_in: int = 10):
    """Grid search for the discount factor that best explains a price path.

    ``prices[t]`` is the price the market cleared at in round t, before
    ``outcomes[t]`` was revealed, so it is compared with the discounted
    frequency of ``outcomes[:t]``. Rounds before ``burn_in`` are dropped.
    Returns ``(gamma_star, rmse)`` with one rmse per grid value; ties go to
    the larger gamma.
    """
    prices = np.asarray(prices, dtype=float)
    if len(prices) != len(outcomes):
        raise LengthMismatch(f"{len(prices)} prices vs {len(outcomes)} outcomes")
    grid = np.asarray(grid, dtype=float)
    if grid.size == 0 or np.any(grid <= 0) or np.any(grid > 1):
        raise ValueError("grid must be a nonempty subset of (0, 1]")
    start = max(int(burn_in), 1)
    if start >= len(prices):
        raise EmptySequence(f"no rounds left after burn-in of {burn_in}")
    target = prices[start:]
    rmse = np.empty(grid.size)
    for k, g in enumerate(grid):
        model = discounted_frequency(outcomes[:-1], g).discounted[start - 1:]
        rmse[k] = math.sqrt(np.mean((target - model) ** 2))
    best = rmse.min()
    ties = np.flatnonzero(rmse <= best + 1e-12)
    return float(grid[ties[np.argmax(grid[ties])]]), rmse


def beta_posterior_fit(beliefs, wealths, successes: int, failures: int) -> BetaFit:
    """Compare normalised wealth with the Beta(s+1, f+1) posterior over the beliefs.

    The density is normalised over the finite belief set, which is what a
    uniform-prior Bayes update of equal initial wealths produces exactly.
    """
    beliefs = np.asarray(beliefs, dtype=float)
    wealths = np.asarray(wealths, dtype=float)
    logd = stats.beta.logpdf(beliefs, successes + 1, failures + 1)
    density = np.exp(logd - logsumexp(logd))
    w = wealths / wealths.sum()
    peak = float(np.max(np.abs(w - density)) / density.max())
    return BetaFit(int(successes), int(failures), density, relative_error(w, density), peak)
