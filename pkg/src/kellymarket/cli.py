"""Command line entry point: ``kellymarket simulate|verify|fit-gamma|batch``.

Exit codes: 0 success, 1 simulation error or failed invariant, 2 bad
configuration or arguments.
"""

from __future__ import annotations

import argparse
import logging
import re
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, io, plots, sim
from .errors import ConfigError, KellyMarketError, LengthMismatch
from .metrics import fit_discount_factor, parse_grid
from .verify import all_passed, verify_record

log = logging.getLogger("kellymarket")

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2


class _Run:
    """Collects emitted files and writes the manifest last."""

    def __init__(self, command, out: Path, config_path=None):
        self.command = command
        self.out = out
        self.config_path = config_path
        self.files = []
        self.start = time.perf_counter()

    def path(self, name) -> Path:
        self.out.mkdir(parents=True, exist_ok=True)
        self.files.append(name)
        return self.out / name

    def finish(self, **extra):
        manifest = {
            "tool": "kellymarket",
            "version": __version__,
            "command": self.command,
            "config": None if self.config_path is None else str(self.config_path),
            "output_dir": str(self.out),
            "files": list(self.files),
            "duration_seconds": time.perf_counter() - self.start,
            **extra,
        }
        io.write_json(self.out / "manifest.json", manifest)


def _out_dir(args) -> Path:
    return Path(args.out) if args.out else io.default_output_dir()


def cmd_simulate(args) -> int:
    config, opts = io.load_config(args.config)
    record = sim.run(config)
    run = _Run("simulate", _out_dir(args), args.config)
    io.write_rounds_csv(run.path("rounds.csv"), record, opts["gamma"])
    io.write_wealth_csv(run.path("wealth.csv"), record)
    io.save_record(record, run.path("record.json"))
    if args.svg:
        for name, svg in plots.chart_svgs(record, opts["gamma"]).items():
            run.path(name).write_text(svg, encoding="utf-8")
    run.finish(rng_algorithm=record.rng_algorithm, seed=config.seed)
    print(f"wrote {len(record.rounds)} rounds to {run.out}")
    return EXIT_OK


def cmd_verify(args) -> int:
    if args.config:
        config, _ = io.load_config(args.config)
        record = sim.run(config)
    else:
        record = io.load_record(args.record)
    checks = verify_record(record, perturb=args.perturb_price)
    ok = all_passed(checks)
    for c in checks:
        status = "PASS" if c.passed else ("INFO" if c.informational else "FAIL")
        op = ">=" if c.lower_bound else "<="
        print(f"{status:4s} {c.name:26s} {c.value:.6g} {op} {c.threshold:g}")
    run = _Run("verify", _out_dir(args), args.config)
    io.write_json(run.path("verify.json"), {"passed": ok, "checks": [c.as_dict() for c in checks]})
    run.finish(passed=ok)
    return EXIT_OK if ok else EXIT_FAIL


def _load_series(path):
    path = Path(path)
    if path.suffix == ".csv":
        return io.read_rounds_csv(path)
    record = io.load_record(path)
    return record.prices, record.outcomes


def cmd_fit_gamma(args) -> int:
    try:
        grid = parse_grid(args.grid)
    except ValueError as exc:
        raise ConfigError(str(exc), field="--grid") from None
    prices, outcomes = _load_series(args.record)
    gamma_star, rmse = fit_discount_factor(prices, outcomes, grid, burn_in=args.burn_in)
    run = _Run("fit-gamma", _out_dir(args))
    io.write_table_csv(run.path("gamma_fit.csv"), ("gamma", "rmse"), zip(grid.tolist(), rmse.tolist()))
    k = int(np.flatnonzero(grid == gamma_star)[0])
    run.finish(gamma_star=gamma_star, rmse_at_gamma_star=float(rmse[k]),
               rmse_at_max_gamma=float(rmse[-1]), burn_in=args.burn_in, record=str(args.record))
    print(f"gamma* = {gamma_star:g} (rmse {rmse[k]:.6g})")
    return EXIT_OK


def _parse_seeds(spec: str):
    m = re.fullmatch(r"\s*(\d+)\s*\.\.\s*(\d+)\s*", spec)
    if not m or int(m.group(2)) < int(m.group(1)):
        raise ConfigError(f"seeds must look like lo..hi, got {spec!r}", field="--seeds")
    return range(int(m.group(1)), int(m.group(2)) + 1)


def cmd_batch(args) -> int:
    config, _ = io.load_config(args.config)
    seeds = _parse_seeds(args.seeds)
    results = sim.run_batch(config, seeds=seeds, max_workers=args.workers)
    rows = []
    for seed, res in zip(seeds, results):
        if isinstance(res, sim.RunFailure):
            rows.append([seed, "error", "", "", "", "", res.error])
            continue
        final_price = res.prices[-1] if res.rounds else float("nan")
        freq = res.outcomes.mean() if res.rounds else float("nan")
        rows.append([seed, "ok", float(final_price), float(freq), float(res.ledger.market_loss),
                     float(res.ledger.agent_losses.min()), ""])
    run = _Run("batch", _out_dir(args), args.config)
    io.write_table_csv(
        run.path("batch.csv"),
        ("seed", "status", "final_price", "observed_freq", "market_loss", "best_agent_loss", "error"),
        rows,
    )
    failed = sum(r[1] == "error" for r in rows)
    run.finish(seeds=[seeds.start, seeds.stop - 1], failed=failed)
    print(f"{len(rows) - failed}/{len(rows)} runs ok")
    return EXIT_FAIL if failed else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="kellymarket", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    out_help = "output directory (default: $KELLYMARKET_OUTPUT_DIR or ./kellymarket-out)"

    p = sub.add_parser("simulate", help="run one experiment and write CSVs")
    p.add_argument("--config", required=True)
    p.add_argument("--out", help=out_help)
    p.add_argument("--svg", action="store_true", help="also write SVG charts")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("verify", help="check market invariants on a run")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--config")
    src.add_argument("--record", help="record.json written by simulate")
    p.add_argument("--out", help=out_help)
    p.add_argument("--perturb-price", type=float, default=0.0, help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("fit-gamma", help="fit the discount factor of a price path")
    p.add_argument("--record", required=True, help="record.json or rounds.csv")
    p.add_argument("--grid", default="0.80:1.00:0.01", help="lo:hi:step (default %(default)s)")
    p.add_argument("--burn-in", type=int, default=10)
    p.add_argument("--out", help=out_help)
    p.set_defaults(func=cmd_fit_gamma)

    p = sub.add_parser("batch", help="run a config over a seed range")
    p.add_argument("--config", required=True)
    p.add_argument("--seeds", required=True, help="inclusive range lo..hi")
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--out", help=out_help)
    p.set_defaults(func=cmd_batch)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (KellyMarketError, LengthMismatch, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
