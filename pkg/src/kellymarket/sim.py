"""Seeded Bernoulli-world episodes: clear, draw the outcome, settle, repeat."""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from typing import Callable, Iterable, Optional, Sequence, Union

import numpy as np

from . import adaptive
from .core import MarketRound, Order, Population, clearing_price, demand, settle
from .errors import ConfigError, KellyMarketError
from .metrics import LossLedger

log = logging.getLogger(__name__)

RNG_ALGORITHM = "numpy.random.Philox(4x64-10) seeded by SeedSequence(seed, spawn_key=(stream,))"
BELIEF_STREAM = 0
OUTCOME_STREAM = 1
BELIEF_INITS = ("uniform_random", "uniform_grid")


def stream(seed: int, label: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(label,))))


@dataclass(frozen=True)
class SimulationConfig:
    n_agents: int
    horizon: int
    true_prob: float = 0.5
    seed: int = 0
    belief_init: str = "uniform_random"
    lambda_init: Union[float, tuple] = 1.0
    learners_enabled: bool = False

    def __post_init__(self):
        def bad(name, msg):
            raise ConfigError(msg, field=name)

        for name in ("n_agents", "horizon", "seed"):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, (int, np.integer)):
                bad(name, f"must be an integer, got {v!r}")
        if self.n_agents < 1:
            bad("n_agents", "must be at least 1")
        if self.horizon < 0:
            bad("horizon", "must be nonnegative")
        if not 0 <= self.seed < 2**64:
            bad("seed", "must be a 64-bit unsigned integer")
        if isinstance(self.true_prob, bool) or not isinstance(self.true_prob, (int, float)) \
                or not 0.0 <= self.true_prob <= 1.0:
            bad("true_prob", f"must be a probability in [0, 1], got {self.true_prob!r}")
        if self.belief_init not in BELIEF_INITS:
            bad("belief_init", f"must be one of {BELIEF_INITS}, got {self.belief_init!r}")
        lam = self.lambda_init
        if isinstance(lam, (list, tuple, np.ndarray)):
            lam = tuple(float(x) for x in lam)
            if len(lam) != self.n_agents:
                bad("lambda_init", f"needs {self.n_agents} entries, got {len(lam)}")
            object.__setattr__(self, "lambda_init", lam)
            values = lam
        elif isinstance(lam, (int, float)) and not isinstance(lam, bool):
            object.__setattr__(self, "lambda_init", float(lam))
            values = (float(lam),)
        else:
            bad("lambda_init", f"must be a number or a list of numbers, got {lam!r}")
        if any(not 0.0 <= x <= 1.0 for x in values):
            bad("lambda_init", "Kelly fractions must lie in [0, 1]")
        if not isinstance(self.learners_enabled, bool):
            bad("learners_enabled", "must be true or false")
        if self.learners_enabled and any(not 0.0 < x < 1.0 for x in values):
            bad("lambda_init", "learners need initial fractions strictly inside (0, 1)")

    def lambdas(self) -> np.ndarray:
        return np.broadcast_to(np.asarray(self.lambda_init, dtype=float), (self.n_agents,)).copy()


@dataclass(frozen=True)
class SimulationRecord:
    config: Optional[SimulationConfig]
    rounds: tuple
    initial_population: Population
    final_population: Population
    ledger: LossLedger
    rng_algorithm: str = RNG_ALGORITHM

    @property
    def prices(self) -> np.ndarray:
        return np.array([r.price for r in self.rounds])

    @property
    def outcomes(self) -> np.ndarray:
        return np.array([r.outcome for r in self.rounds], dtype=int)


@dataclass(frozen=True)
class RunFailure:
    config: SimulationConfig
    error: str


def initial_population(config: SimulationConfig) -> Population:
    n = config.n_agents
    if config.belief_init == "uniform_grid":
        beliefs = np.arange(1, n + 1) / (n + 1)
    else:
        beliefs = stream(config.seed, BELIEF_STREAM).random(n)
    lambdas = config.lambdas()
    learners = None
    if config.learners_enabled:
        learners = [adaptive.LambdaLearnerState.from_lambda(x) for x in lambdas]
        lambdas = np.array([adaptive.current_lambda(s) for s in learners])
    return Population.create(beliefs, None, lambdas, learners)


def _update_learners(pop: Population, p_m: float, outcome: int) -> Population:
    learners = []
    lambdas = pop.lambdas.copy()
    for i, (state, p) in enumerate(zip(pop.learners, pop.beliefs)):
        if state is not None:
            state = adaptive.update(state, float(p), p_m, outcome)
            lambdas[i] = adaptive.current_lambda(state)
        learners.append(state)
    return replace(pop, lambdas=lambdas, learners=tuple(learners))


def play(
    pop: Population,
    horizon: int,
    outcome_fn: Callable[[int, float], int],
):
    """Run ``horizon`` market periods starting from ``pop``.

    ``outcome_fn(t, price)`` decides each outcome after the market has
    cleared, which also admits adversarial sequences. Returns
    ``(rounds, final_population, ledger)``.
    """
    rounds = []
    ledger = LossLedger.empty(len(pop))
    for t in range(horizon):
        p_m = clearing_price(pop)
        shares, stakes, pe = demand(pop, p_m)
        y = int(outcome_fn(t, p_m))
        after = settle(pop, p_m, y)
        orders = tuple(
            Order(i, q, s, b)
            for i, (q, s, b) in enumerate(zip(shares.tolist(), stakes.tolist(), pe.tolist()))
        )
        rounds.append(MarketRound(p_m, orders, y, tuple(after.wealths.tolist()), tuple(pop.lambdas.tolist())))
        ledger = ledger.update(p_m, pe, y)
        if after.has_learners:
            after = _update_learners(after, p_m, y)
        pop = after
    return tuple(rounds), pop, ledger


def play_sequence(pop: Population, outcomes: Sequence[int]):
    return play(pop, len(outcomes), lambda t, _: outcomes[t])


def run(config: SimulationConfig) -> SimulationRecord:
    pop = initial_population(config)
    rng = stream(config.seed, OUTCOME_STREAM)
    pi = config.true_prob
    rounds, final, ledger = play(pop, config.horizon, lambda t, _: rng.random() < pi)
    return SimulationRecord(config, rounds, pop, final, ledger)


def _run_safe(config: SimulationConfig):
    try:
        return run(config)
    except (KellyMarketError, ValueError, ArithmeticError) as exc:
        log.warning("run with seed %d failed: %s", config.seed, exc)
        return RunFailure(config, f"{type(exc).__name__}: {exc}")


def run_batch(
    configs: Union[SimulationConfig, Iterable[SimulationConfig]],
    seeds: Optional[Iterable[int]] = None,
    max_workers: Optional[int] = None,
) -> list:
    """Run many configurations; a failed run yields a ``RunFailure`` in its slot.

    Pass a single config with ``seeds`` to sweep seeds. Results come back in
    input order and do not depend on ``max_workers``.
    """
    if isinstance(configs, SimulationConfig):
        configs = [configs] if seeds is None else [replace(configs, seed=int(s)) for s in seeds]
    elif seeds is not None:
        raise ValueError("seeds can only be combined with a single config")
    configs = list(configs)
    if not configs:
        raise ValueError("batch is empty")
    if max_workers is None or max_workers <= 1 or len(configs) == 1:
        return [_run_safe(c) for c in configs]
    with ProcessPoolExecutor(max_workers=max_workers) as pool:
        return list(pool.map(_run_safe, configs))


def laplace_estimate(successes: int, trials: int) -> float:
    return (successes + 1) / (trials + 2)


def observed_counts(outcomes) -> tuple[int, int]:
    s = int(np.sum(outcomes))
    return s, int(len(outcomes)) - s


def is_full_kelly(record: SimulationRecord) -> bool:
    pop = record.initial_population
    return not pop.has_learners and bool(np.all(pop.lambdas == 1.0))


def has_equal_initial_wealth(record: SimulationRecord) -> bool:
    w = record.initial_population.wealths
    return bool(np.all(np.abs(w - w[0]) <= 1e-15 * math.fsum(w)))
