"""Config parsing, record (de)serialisation and CSV emission.

Config files are JSON objects::

    {
      "n_agents": 100,              required
      "horizon": 150,               required
      "true_prob": 0.5,
      "seed": 7,
      "belief_init": "uniform_random" | "uniform_grid",
      "lambda_init": 1.0,           number or one number per agent
      "learners_enabled": false,
      "gamma": 0.96                 discount used for rounds.csv
    }

Unknown keys are rejected. Floats in CSV files use 17 significant digits.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .adaptive import LambdaLearnerState
from .core import MarketRound, Order, Population
from .errors import ConfigError
from .metrics import LossLedger, discounted_frequency
from .sim import SimulationConfig, SimulationRecord

DEFAULT_GAMMA = 0.96
CONFIG_KEYS = {
    "n_agents", "horizon", "true_prob", "seed", "belief_init",
    "lambda_init", "learners_enabled", "gamma",
}
REQUIRED_KEYS = ("n_agents", "horizon")
ROUNDS_COLUMNS = ("t", "price", "outcome", "observed_freq", "discounted_freq")
WEALTH_COLUMNS = ("agent_id", "belief", "lambda", "wealth_final")


def fmt(x) -> str:
    return format(float(x), ".17g")


def _line_of_key(text: str, key: str):
    needle = f'"{key}"'
    for lineno, line in enumerate(text.splitlines(), 1):
        if needle in line:
            return lineno
    return None


def parse_config(text: str) -> tuple[SimulationConfig, dict]:
    """Parse config JSON into a ``SimulationConfig`` and CLI options (``gamma``)."""
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(exc.msg, line=exc.lineno, column=exc.colno) from None
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object", line=1)
    for key in raw:
        if key not in CONFIG_KEYS:
            raise ConfigError("unknown key", field=key, line=_line_of_key(text, key))
    for key in REQUIRED_KEYS:
        if key not in raw:
            raise ConfigError("required key missing", field=key)
    gamma = raw.pop("gamma", DEFAULT_GAMMA)
    if isinstance(gamma, bool) or not isinstance(gamma, (int, float)) or not 0 < gamma <= 1:
        raise ConfigError(f"must be a number in (0, 1], got {gamma!r}", field="gamma",
                          line=_line_of_key(text, "gamma"))
    try:
        config = SimulationConfig(**raw)
    except ConfigError as exc:
        if exc.field is not None and exc.line is None:
            raise ConfigError(str(exc).split(": ", 1)[-1], field=exc.field,
                              line=_line_of_key(text, exc.field)) from None
        raise
    return config, {"gamma": float(gamma)}


def load_config(path) -> tuple[SimulationConfig, dict]:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror}") from None
    return parse_config(text)


def config_to_dict(config: SimulationConfig) -> dict:
    d = asdict(config)
    if isinstance(d["lambda_init"], tuple):
        d["lambda_init"] = list(d["lambda_init"])
    return d


# --- records ---------------------------------------------------------------

def _learner_to_dict(state):
    if state is None:
        return None
    return {"weight_self": state.weight_self, "weight_market": state.weight_market,
            "scale_exp": state.scale_exp}


def _population_to_dict(pop: Population) -> dict:
    return {
        "beliefs": pop.beliefs.tolist(),
        "wealths": pop.wealths.tolist(),
        "lambdas": pop.lambdas.tolist(),
        "learners": [_learner_to_dict(s) for s in pop.learners],
    }


def _population_from_dict(d: dict) -> Population:
    learners = [None if s is None else LambdaLearnerState(**s) for s in d["learners"]]
    return Population(d["beliefs"], d["wealths"], d["lambdas"], tuple(learners))


def record_to_dict(record: SimulationRecord) -> dict:
    rounds = []
    for r in record.rounds:
        rounds.append({
            "price": r.price,
            "outcome": r.outcome,
            "lambdas": list(r.lambdas),
            "wealth_after": list(r.wealth_after),
            "orders": {
                "shares": [o.shares for o in r.orders],
                "stake": [o.stake for o in r.orders],
                "effective_belief": [o.effective_belief for o in r.orders],
            },
        })
    return {
        "config": None if record.config is None else config_to_dict(record.config),
        "rng_algorithm": record.rng_algorithm,
        "initial_population": _population_to_dict(record.initial_population),
        "final_population": _population_to_dict(record.final_population),
        "ledger": {
            "market_loss": record.ledger.market_loss,
            "agent_losses": record.ledger.agent_losses.tolist(),
            "rounds": record.ledger.rounds,
        },
        "rounds": rounds,
    }


def record_from_dict(d: dict) -> SimulationRecord:
    rounds = []
    for r in d["rounds"]:
        o = r["orders"]
        orders = tuple(
            Order(i, q, s, b)
            for i, (q, s, b) in enumerate(zip(o["shares"], o["stake"], o["effective_belief"]))
        )
        rounds.append(MarketRound(r["price"], orders, r["outcome"],
                                  tuple(r["wealth_after"]), tuple(r["lambdas"])))
    led = d["ledger"]
    return SimulationRecord(
        None if d["config"] is None else SimulationConfig(**d["config"]),
        tuple(rounds),
        _population_from_dict(d["initial_population"]),
        _population_from_dict(d["final_population"]),
        LossLedger(led["market_loss"], np.array(led["agent_losses"], dtype=float), led["rounds"]),
        d["rng_algorithm"],
    )


def save_record(record: SimulationRecord, path) -> None:
    Path(path).write_text(json.dumps(record_to_dict(record)) + "\n", encoding="utf-8")


def load_record(path) -> SimulationRecord:
    return record_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


# --- CSV -------------------------------------------------------------------

def _writer(f):
    return csv.writer(f, lineterminator="\n")


def write_rounds_csv(path, record: SimulationRecord, gamma: float = DEFAULT_GAMMA) -> None:
    outcomes = record.outcomes
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = _writer(f)
        w.writerow(ROUNDS_COLUMNS)
        if len(outcomes) == 0:
            return
        freq = discounted_frequency(outcomes, gamma)
        for t, r in enumerate(record.rounds):
            w.writerow([t + 1, fmt(r.price), r.outcome, fmt(freq.observed[t]), fmt(freq.discounted[t])])


def write_wealth_csv(path, record: SimulationRecord) -> None:
    pop = record.final_population
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = _writer(f)
        w.writerow(WEALTH_COLUMNS)
        for i, (p, lam, wf) in enumerate(zip(pop.beliefs, pop.lambdas, pop.wealths)):
            w.writerow([i, fmt(p), fmt(lam), fmt(wf)])


def read_rounds_csv(path) -> tuple[np.ndarray, np.ndarray]:
    """Prices and outcomes from a rounds.csv (extra columns ignored)."""
    prices, outcomes = [], []
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames is None or not {"price", "outcome"} <= set(reader.fieldnames):
            raise ValueError(f"{path}: need 'price' and 'outcome' columns")
        for row in reader:
            prices.append(float(row["price"]))
            outcomes.append(int(row["outcome"]))
    return np.array(prices), np.array(outcomes, dtype=int)


def write_table_csv(path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = _writer(f)
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(x) if isinstance(x, (float, np.floating)) else x for x in row])


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def default_output_dir() -> Path:
    return Path(os.environ.get("KELLYMARKET_OUTPUT_DIR", "kellymarket-out"))
