import csv
import json
import subprocess
import sys
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from kellymarket import io
from kellymarket.cli import main
from kellymarket.sim import SimulationConfig, run
from kellymarket.verify import all_passed, verify_record

BASE = {"n_agents": 100, "horizon": 150, "true_prob": 0.5, "seed": 7, "belief_init": "uniform_random"}


@pytest.fixture
def write_config(tmp_path):
    def _write(cfg, name="config.json"):
        path = tmp_path / name
        path.write_text(json.dumps(cfg) if isinstance(cfg, dict) else cfg)
        return str(path)
    return _write


def _rows(path):
    with open(path, newline="") as f:
        return list(csv.reader(f))


def test_simulate_writes_outputs(tmp_path, write_config):
    out = tmp_path / "out"
    assert main(["simulate", "--config", write_config(BASE), "--out", str(out), "--svg"]) == 0
    rows = _rows(out / "rounds.csv")
    assert rows[0] == ["t", "price", "outcome", "observed_freq", "discounted_freq"]
    assert len(rows) == 151
    assert [r[0] for r in rows[1:4]] == ["1", "2", "3"]
    wealth = _rows(out / "wealth.csv")
    assert wealth[0] == ["agent_id", "belief", "lambda", "wealth_final"]
    assert len(wealth) == 101
    manifest = json.loads((out / "manifest.json").read_text())
    assert set(manifest["files"]) == {
        "rounds.csv", "wealth.csv", "record.json",
        "price_vs_frequency.svg", "price_vs_discounted.svg", "wealth_vs_belief.svg",
    }
    for name in manifest["files"]:
        assert (out / name).exists()
        if name.endswith(".svg"):
            ET.parse(out / name)
    assert {"version", "duration_seconds", "config", "output_dir"} <= manifest.keys()


def test_csv_format(tmp_path, write_config):
    out = tmp_path / "out"
    main(["simulate", "--config", write_config(BASE), "--out", str(out)])
    raw = (out / "rounds.csv").read_bytes()
    assert raw.endswith(b"\n") and b"\r" not in raw
    rec = io.load_record(out / "record.json")
    rows = _rows(out / "rounds.csv")[1:]
    # 17 significant digits reproduce the float exactly
    assert [float(r[1]) for r in rows] == rec.prices.tolist()
    assert all("," not in c for r in rows for c in r)


def test_simulate_horizon_zero(tmp_path, write_config):
    out = tmp_path / "out"
    assert main(["simulate", "--config", write_config({**BASE, "horizon": 0}), "--out", str(out)]) == 0
    assert (out / "rounds.csv").read_text() == "t,price,outcome,observed_freq,discounted_freq\n"


@pytest.mark.parametrize("bad", [
    '{"n_agents": 10, "horizon": 5, "horizn": 3}',
    '{"n_agents": 10,\n "horizon": 5,}',
    '{"n_agents": 0, "horizon": 5}',
    '{"horizon": 5}',
    '{"n_agents": 10, "horizon": 5, "gamma": 2}',
    '[1, 2]',
])
def test_malformed_config_exit_2_no_outputs(tmp_path, write_config, bad, capsys):
    out = tmp_path / "out"
    assert main(["simulate", "--config", write_config(bad), "--out", str(out)]) == 2
    assert not out.exists()
    assert "config error" in capsys.readouterr().err


def test_config_diagnostics_name_line_and_field():
    with pytest.raises(Exception) as exc:
        io.parse_config('{\n "n_agents": 10,\n "horizon": 5,\n "sed": 1\n}')
    assert exc.value.field == "sed" and exc.value.line == 4
    with pytest.raises(Exception) as exc:
        io.parse_config('{\n "n_agents": 10,\n "horizon": -5\n}')
    assert exc.value.field == "horizon" and exc.value.line == 3
    with pytest.raises(Exception) as exc:
        io.parse_config('{\n "n_agents": 10\n "horizon": 5}')
    assert exc.value.line == 3


def test_simulation_error_exit_1(tmp_path, write_config):
    out = tmp_path / "out"
    assert main(["simulate", "--config", write_config({**BASE, "lambda_init": 0.0}), "--out", str(out)]) == 1
    assert not out.exists()


def test_verify_full_kelly_passes(tmp_path, write_config):
    out = tmp_path / "v"
    assert main(["verify", "--config", write_config(BASE), "--out", str(out)]) == 0
    report = json.loads((out / "verify.json").read_text())
    assert report["passed"]
    names = {c["name"] for c in report["checks"]}
    assert {"market_balance", "wealth_conservation", "regret_bound",
            "wealth_identity", "beta_posterior_fit"} <= names
    assert all(c["passed"] for c in report["checks"])


def test_verify_fractional_beta_fit_is_informational(tmp_path, write_config):
    out = tmp_path / "v"
    assert main(["verify", "--config", write_config({**BASE, "lambda_init": 0.2}), "--out", str(out)]) == 0
    beta = next(c for c in json.loads((out / "verify.json").read_text())["checks"]
                if c["name"] == "beta_posterior_fit")
    assert beta["informational"] and not beta["passed"] and beta["value"] > 0.1


def test_verify_negative_control(tmp_path, write_config):
    sim_out = tmp_path / "s"
    main(["simulate", "--config", write_config(BASE), "--out", str(sim_out)])
    out = tmp_path / "v"
    code = main(["verify", "--record", str(sim_out / "record.json"), "--out", str(out), "--perturb-price", "1e-6"])
    assert code == 1
    balance = next(c for c in json.loads((out / "verify.json").read_text())["checks"]
                   if c["name"] == "market_balance")
    assert not balance["passed"]


def test_record_round_trip_verifies_identically(tmp_path):
    for cfg in (SimulationConfig(30, 40, 0.6, seed=2, lambda_init=0.3),
                SimulationConfig(20, 30, 0.5, seed=3, lambda_init=0.5, learners_enabled=True)):
        rec = run(cfg)
        path = tmp_path / "r.json"
        io.save_record(rec, path)
        again = io.load_record(path)
        assert again.config == rec.config
        np.testing.assert_array_equal(again.final_population.wealths, rec.final_population.wealths)
        assert again.final_population.learners == rec.final_population.learners
        a = [c.as_dict() for c in verify_record(rec)]
        b = [c.as_dict() for c in verify_record(again)]
        assert a == b and all_passed(verify_record(again))


def test_fit_gamma_synthetic(tmp_path):
    y = np.random.default_rng(4).integers(0, 2, 120)
    from kellymarket.metrics import discounted_frequency
    d = discounted_frequency(y, 0.9).discounted
    prices = np.concatenate([[0.5], d[:-1]])
    src = tmp_path / "rounds.csv"
    io.write_table_csv(src, ("t", "price", "outcome"), [(i + 1, float(p), int(o)) for i, (p, o) in enumerate(zip(prices, y))])
    out = tmp_path / "g"
    assert main(["fit-gamma", "--record", str(src), "--grid", "0.80:1.00:0.01", "--out", str(out)]) == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["gamma_star"] == 0.9
    rows = _rows(out / "gamma_fit.csv")
    assert rows[0] == ["gamma", "rmse"] and len(rows) == 22


def test_fit_gamma_on_runs(tmp_path, write_config):
    results = {}
    for name, cfg in (("full", {**BASE, "belief_init": "uniform_grid"}), ("frac", {**BASE, "lambda_init": 0.2})):
        sim_out = tmp_path / name
        main(["simulate", "--config", write_config(cfg, f"{name}.json"), "--out", str(sim_out)])
        out = tmp_path / f"g_{name}"
        assert main(["fit-gamma", "--record", str(sim_out / "record.json"), "--out", str(out)]) == 0
        results[name] = json.loads((out / "manifest.json").read_text())["gamma_star"]
    assert results["full"] == 1.0
    assert results["frac"] < 1.0


def test_fit_gamma_unreadable_rows_exit_1(tmp_path):
    src = tmp_path / "r.csv"
    src.write_text("price,outcome\n0.5,1\n0.5,x\n")
    assert main(["fit-gamma", "--record", str(src), "--out", str(tmp_path / "g")]) == 1


def test_fit_gamma_bad_grid_exit_2(tmp_path):
    src = tmp_path / "r.csv"
    src.write_text("price,outcome\n" + "0.5,1\n" * 20)
    assert main(["fit-gamma", "--record", str(src), "--grid", "1:0:0.1", "--out", str(tmp_path / "g")]) == 2


def test_batch(tmp_path, write_config):
    out = tmp_path / "b"
    assert main(["batch", "--config", write_config(BASE), "--seeds", "1..4", "--out", str(out)]) == 0
    rows = _rows(out / "batch.csv")
    assert [r[0] for r in rows[1:]] == ["1", "2", "3", "4"]
    assert all(r[1] == "ok" for r in rows[1:])
    assert main(["batch", "--config", write_config({**BASE, "lambda_init": 0.0}), "--seeds", "1..2",
                 "--out", str(tmp_path / "bf")]) == 1
    rows = _rows(tmp_path / "bf" / "batch.csv")
    assert all(r[1] == "error" for r in rows[1:])


def test_batch_bad_seed_spec(tmp_path, write_config):
    assert main(["batch", "--config", write_config(BASE), "--seeds", "5..1", "--out", str(tmp_path / "b")]) == 2


def test_env_default_output_dir(tmp_path, write_config, monkeypatch):
    monkeypatch.setenv("KELLYMARKET_OUTPUT_DIR", str(tmp_path / "envout"))
    assert main(["simulate", "--config", write_config({**BASE, "horizon": 3})]) == 0
    assert (tmp_path / "envout" / "manifest.json").exists()


def test_module_entry_point(tmp_path, write_config):
    out = tmp_path / "o"
    proc = subprocess.run([sys.executable, "-m", "kellymarket", "simulate", "--config",
                           write_config({**BASE, "horizon": 5}), "--out", str(out)],
                          capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert len(_rows(out / "rounds.csv")) == 6
