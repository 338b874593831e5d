import math
import pickle

import numpy as np
import pytest
from scipy.special import logsumexp

from kellymarket.core import CONSERVATION_TOL, Population
from kellymarket.errors import AllZeroConfidence, ConfigError
from kellymarket.sim import (
    RunFailure,
    SimulationConfig,
    initial_population,
    laplace_estimate,
    play,
    play_sequence,
    run,
    run_batch,
)

BASE = SimulationConfig(n_agents=100, horizon=150, true_prob=0.5, seed=7)


def posterior_wealth_oracle(beliefs, w0, outcomes):
    """Normalised w0 * p^s (1-p)^f from the outcome sequence alone."""
    s = int(np.sum(outcomes))
    f = len(outcomes) - s
    logw = np.log(w0) + s * np.log(beliefs) + f * np.log1p(-beliefs)
    return np.exp(logw - logsumexp(logw))


def test_horizon_zero():
    rec = run(SimulationConfig(10, 0, seed=1))
    assert rec.rounds == ()
    np.testing.assert_array_equal(rec.final_population.wealths, rec.initial_population.wealths)
    assert rec.ledger.rounds == 0


def test_config_validation():
    with pytest.raises(ConfigError) as exc:
        SimulationConfig(0, 10)
    assert exc.value.field == "n_agents"
    with pytest.raises(ConfigError):
        SimulationConfig(3, 10, lambda_init=[1.0, 1.0])
    with pytest.raises(ConfigError):
        SimulationConfig(3, 10, belief_init="normal")
    with pytest.raises(ConfigError):
        SimulationConfig(3, 10, true_prob=1.5)
    with pytest.raises(ConfigError):
        SimulationConfig(3, 10, lambda_init=1.0, learners_enabled=True)
    with pytest.raises(ConfigError):
        SimulationConfig(3, 10, seed=-1)


def test_grid_beliefs():
    pop = initial_population(SimulationConfig(4, 0, belief_init="uniform_grid"))
    np.testing.assert_allclose(pop.beliefs, [0.2, 0.4, 0.6, 0.8])
    np.testing.assert_allclose(pop.wealths, 0.25)


def test_determinism_and_seed_sensitivity():
    a, b = run(BASE), run(BASE)
    np.testing.assert_array_equal(a.prices, b.prices)
    np.testing.assert_array_equal(a.outcomes, b.outcomes)
    np.testing.assert_array_equal(a.final_population.wealths, b.final_population.wealths)
    c = run(SimulationConfig(100, 150, 0.5, seed=8))
    assert not np.array_equal(a.outcomes, c.outcomes)


def test_outcome_stream_is_independent_of_beliefs():
    # one deviate per round from its own stream: belief scheme does not shift outcomes
    a = run(SimulationConfig(20, 50, 0.3, seed=3))
    b = run(SimulationConfig(50, 50, 0.3, seed=3, belief_init="uniform_grid"))
    np.testing.assert_array_equal(a.outcomes, b.outcomes)
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(3, spawn_key=(1,))))
    np.testing.assert_array_equal(a.outcomes, (rng.random(50) < 0.3).astype(int))


def test_every_round_balances_and_conserves():
    rec = run(SimulationConfig(60, 80, 0.4, seed=2, lambda_init=0.5))
    before = 1.0
    for r in rec.rounds:
        assert abs(r.net_shares) <= 1e-9
        after = math.fsum(r.wealth_after)
        assert abs(after - before) <= CONSERVATION_TOL
        before = after


def test_full_kelly_prices_are_posterior_means_on_grid():
    cfg = SimulationConfig(100, 150, 0.5, seed=11, belief_init="uniform_grid")
    rec = run(cfg)
    p = np.arange(1, 101) / 101
    y = rec.outcomes
    for t in range(len(y)):
        s = int(y[:t].sum())
        logk = s * np.log(p) + (t - s) * np.log1p(-p)
        k = np.exp(logk - logk.max())
        assert rec.rounds[t].price == pytest.approx(np.sum(p * k) / np.sum(k), rel=1e-10)


def test_full_kelly_wealth_matches_closed_form_every_prefix():
    rec = run(SimulationConfig(40, 120, 0.7, seed=5))
    beliefs = rec.initial_population.beliefs
    w0 = rec.initial_population.wealths
    for t in (1, 10, 60, 120):
        oracle = posterior_wealth_oracle(beliefs, w0, rec.outcomes[:t])
        np.testing.assert_allclose(rec.rounds[t - 1].wealth_after, oracle, rtol=1e-9)


def test_mixed_population_full_kelly_subset_follows_bayes():
    rng = np.random.default_rng(9)
    n = 30
    lambdas = np.where(np.arange(n) % 3 == 0, 1.0, rng.uniform(0.05, 0.9, n))
    pop = Population.create(rng.random(n), None, lambdas)
    outcomes = list(rng.integers(0, 2, 100))
    _, final, _ = play_sequence(pop, outcomes)
    kelly = np.flatnonzero(lambdas == 1.0)
    s = sum(outcomes)
    f = len(outcomes) - s
    p = pop.beliefs[kelly]
    logk = s * np.log(p) + f * np.log1p(-p)
    w = final.wealths[kelly]
    for i in range(len(kelly)):
        for j in range(i + 1, len(kelly)):
            assert w[i] / w[j] == pytest.approx(math.exp(logk[i] - logk[j]), rel=1e-9)


def test_adversarial_outcomes():
    pop = Population.create(np.random.default_rng(0).random(20))
    rounds, _, _ = play(pop, 50, lambda t, price: int(price < 0.5))
    for r in rounds:
        assert r.outcome == int(r.price < 0.5)


def test_learners_update_lambda_synchronously():
    cfg = SimulationConfig(30, 40, 0.5, seed=1, lambda_init=0.5, learners_enabled=True)
    rec = run(cfg)
    assert rec.rounds[0].lambdas == (0.5,) * 30
    assert rec.final_population.has_learners
    # round t+1 uses the fractions produced by round t's update
    for t in range(1, 40):
        assert rec.rounds[t].lambdas != rec.rounds[0].lambdas or t == 0
    lam = np.array(rec.rounds[1].lambdas)
    p_m, y = rec.rounds[0].price, rec.rounds[0].outcome
    like_self = np.where(y, rec.initial_population.beliefs, 1 - rec.initial_population.beliefs)
    like_mkt = p_m if y else 1 - p_m
    np.testing.assert_allclose(lam, like_self / (like_self + like_mkt), rtol=1e-14)


def test_laplace_estimate():
    assert laplace_estimate(10, 15) == 11 / 17
    assert laplace_estimate(0, 0) == 0.5


def test_record_pickles():
    rec = run(SimulationConfig(5, 5, seed=1))
    again = pickle.loads(pickle.dumps(rec))
    np.testing.assert_array_equal(again.prices, rec.prices)


# --- run_batch --------------------------------------------------------------

def test_batch_of_one_equals_run():
    (rec,) = run_batch(BASE)
    np.testing.assert_array_equal(rec.prices, run(BASE).prices)


def test_batch_is_order_insensitive_and_parallel_safe():
    seeds = [3, 1, 2]
    serial = run_batch(BASE, seeds=seeds)
    parallel = run_batch(BASE, seeds=seeds, max_workers=2)
    for a, b, s in zip(serial, parallel, seeds):
        assert a.config.seed == s
        np.testing.assert_array_equal(a.prices, b.prices)
    np.testing.assert_array_equal(run_batch(BASE, seeds=[2])[0].prices, serial[2].prices)


def test_batch_collects_failures():
    good = SimulationConfig(5, 5, seed=1)
    broke = SimulationConfig(5, 5, seed=2, lambda_init=0.0)
    results = run_batch([good, broke, good])
    assert isinstance(results[1], RunFailure)
    assert "AllZeroConfidence" in results[1].error
    assert not isinstance(results[0], RunFailure) and not isinstance(results[2], RunFailure)
    with pytest.raises(AllZeroConfidence):
        run(broke)


def test_batch_mean_final_price_near_truth():
    results = run_batch(BASE, seeds=range(100))
    mean_price = np.mean([r.prices[-1] for r in results])
    assert abs(mean_price - 0.5) <= 0.05


def test_empty_batch_rejected():
    with pytest.raises(ValueError):
        run_batch([])
