"""Invariant checks over a completed simulation record."""

from __future__ import annotations

import math

import numpy as np

from . import metrics
from .core import BALANCE_TOL, CONSERVATION_TOL, Population, demand
from .metrics import Check
from .sim import SimulationRecord, has_equal_initial_wealth, is_full_kelly, observed_counts


def balance_check(record: SimulationRecord, perturb: float = 0.0) -> Check:
    """Recompute every agent's demand at the recorded price.

    ``perturb`` shifts each price before recomputing; it exists as a
    negative control for the checker itself.
    """
    worst = 0.0
    wealth = record.initial_population.wealths
    beliefs = record.initial_population.beliefs
    for r in record.rounds:
        pop = Population(beliefs, wealth, np.asarray(r.lambdas))
        p_m = min(max(r.price + perturb, 1e-12), 1 - 1e-12)
        shares, _, _ = demand(pop, p_m)
        worst = max(worst, abs(math.fsum(shares)) / pop.total_wealth)
        wealth = np.asarray(r.wealth_after)
    return Check.upper("market_balance", worst, BALANCE_TOL)


def recorded_orders_check(record: SimulationRecord) -> Check:
    worst = max((abs(r.net_shares) for r in record.rounds), default=0.0)
    return Check.upper("recorded_orders_balance", worst, BALANCE_TOL)


def conservation_check(record: SimulationRecord) -> Check:
    worst = 0.0
    before = record.initial_population.total_wealth
    for r in record.rounds:
        after = math.fsum(r.wealth_after)
        worst = max(worst, abs(after - before) / before)
        before = after
    return Check.upper("wealth_conservation", worst, CONSERVATION_TOL)


def ledger_check(record: SimulationRecord) -> Check:
    prices = record.prices
    outcomes = record.outcomes
    market = metrics.log_loss(prices, outcomes)
    err = abs(market - record.ledger.market_loss) / max(1.0, market)
    if record.rounds:
        pe = np.array([[o.effective_belief for o in r.orders] for r in record.rounds])
        y = outcomes[:, None]
        agents = -np.sum(np.where(y == 1, np.log(pe), np.log1p(-pe)), axis=0)
        diff = np.abs(record.ledger.agent_losses - agents) / np.maximum(agents, 1.0)
        err = max(err, float(diff.max()))
    return Check.upper("ledger_consistency", err, metrics.IDENTITY_TOL)


def beta_fit_check(record: SimulationRecord) -> Check:
    s, f = observed_counts(record.outcomes)
    pop = record.final_population
    fit = metrics.beta_posterior_fit(pop.beliefs, pop.wealths, s, f)
    exact = is_full_kelly(record) and has_equal_initial_wealth(record)
    return Check.upper(
        "beta_posterior_fit", fit.max_deviation, metrics.BETA_FIT_TOL,
        informational=not exact,
        detail=f"Beta({s}+1, {f}+1)" + ("" if exact else "; not a full-Kelly equal-wealth run, informational"),
    )


def verify_record(record: SimulationRecord, perturb: float = 0.0) -> list[Check]:
    prices = record.prices + perturb if perturb else None
    ledger = record.ledger
    if prices is not None:
        ledger = metrics.LossLedger(metrics.log_loss(np.clip(prices, 1e-12, 1 - 1e-12), record.outcomes),
                                    ledger.agent_losses, ledger.rounds)
    return [
        balance_check(record, perturb),
        recorded_orders_check(record),
        conservation_check(record),
        metrics.regret_bound_check(ledger, record.initial_population.wealths),
        metrics.wealth_identity_check(record),
        ledger_check(record),
        beta_fit_check(record),
    ]


def all_passed(checks) -> bool:
    return all(c.passed or c.informational for c in checks)
