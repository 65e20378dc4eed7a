"""Command-line entry points.

Subcommands: simulate, train, bootstrap, experiment, metrics.
RULE_SIM_THREADS caps worker parallelism for repeat runs.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import experiments, runio
from .config import ConfigError, get_preset, load_config
from .runio import read_events, read_expectations_csv


def _add_common(p, needs_out=True):
    p.add_argument("--config", help="key-value config file overlaying the preset")
    p.add_argument("--preset", default="desk", help="desk (default) or paper")
    p.add_argument("--seed", type=int, default=None)
    if needs_out:
        p.add_argument("--out", required=True, help="output directory")


def _build_config(args):
    cfg = get_preset(args.preset)
    if args.config:
        cfg = load_config(args.config, base=cfg)
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    return cfg


def _load_expectations(path):
    if path is None:
        return None
    return read_expectations_csv(path)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="rulesim",
        description="Deterministic ecosystem simulator with endogenous "
                    "reward updating")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run one simulation")
    _add_common(p)
    p.add_argument("--policy", default=None,
                   help="scripted | fresh | checkpoint path "
                        "(overrides run.policy)")
    p.add_argument("--expectations", default=None,
                   help="expectations.csv from a bootstrap run")

    p = sub.add_parser("train", help="baseline policy training")
    _add_common(p)
    p.add_argument("--max-steps", type=int, default=2_000_000)
    p.add_argument("--no-coins", action="store_true",
                   help="train without coins (dormant-reward baseline)")

    p = sub.add_parser("bootstrap", help="build baseline expectation tables")
    _add_common(p)
    p.add_argument("--policy", default=None,
                   help="checkpoint path; defaults to the scripted policy")

    p = sub.add_parser("experiment", help="run one of the four experiments")
    p.add_argument("number", choices=["1", "2", "3", "4"])
    _add_common(p)
    p.add_argument("--condition", default="2e",
                   help="experiment 2 condition id (2a..2f)")
    p.add_argument("--schedule", default="higher",
                   help="coin schedule: constant | lower | higher")
    p.add_argument("--item-kind", default="vitaminStrong",
                   help="experiment 3/4 item: coin | vitaminStrong | "
                        "vitaminWeak | poisonStrong | poisonWeak")
    p.add_argument("--seeds", type=int, default=5,
                   help="number of repeat seeds")
    p.add_argument("--rates", default="0,2,5,10,20",
                   help="experiment 1 coin rates, comma separated")
    p.add_argument("--expectations", default=None)

    p = sub.add_parser("metrics", help="recompute metrics from an event log")
    p.add_argument("--log", required=True)
    p.add_argument("--out", required=True)

    args = parser.parse_args(argv)
    try:
        return _dispatch(args)
    except (ConfigError, FileNotFoundError, ValueError,
            experiments.TrainingFailed, experiments.BootstrapFailed) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def _dispatch(args) -> int:
    if args.command == "simulate":
        cfg = _build_config(args)
        if args.policy:
            cfg.policy = args.policy
        cfg.initial_expectations = _load_expectations(args.expectations)
        res = experiments.run_simulation(cfg, out_dir=args.out)
        print(f"outcome={'survived' if res.survived else 'collapsed'} "
              f"t={res.duration:.1f}s births={res.births} "
              f"coins={res.coins_collected}")
        return 0

    if args.command == "train":
        cfg = _build_config(args)
        if args.no_coins:
            cfg = experiments.coin_free(cfg)
        ckpt = experiments.run_baseline_training(cfg, args.out,
                                                 max_steps=args.max_steps)
        print(f"checkpoint written: {ckpt}")
        return 0

    if args.command == "bootstrap":
        cfg = _build_config(args)
        if args.policy:
            cfg.policy = args.policy
        table = experiments.bootstrap_expectations(cfg, out_dir=args.out)
        print(f"expectations stabilized; table written to "
              f"{Path(args.out) / 'expectations.csv'} "
              f"(totals: {[round(float(t), 4) for t in table.sum(axis=1)]})")
        return 0

    if args.command == "experiment":
        return _run_experiment(args)

    if args.command == "metrics":
        events = read_events(args.log)
        m = runio.extract_metrics(events)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        summary = {
            "initial_population": m.initial_population,
            "final_population": m.population_at_end(),
            "births": len(m.birth_records),
            "deaths": len(m.death_steps),
            "coins_spawned": m.coins_spawned,
            "coins_collected": m.coins_collected,
            "theta_updates": m.theta_updates,
            "param_updates": m.param_updates,
            "survived": m.survived,
            "collapse_time": m.collapse_time,
            "partial": m.partial,
        }
        with open(out / "metrics.json", "w") as f:
            json.dump(summary, f, indent=2)
        rows = [(b["t"], b["ent_id"], b["mother"], b["father"],
                 b["mother_age"], *[repr(x) for x in b["theta"]],
                 *[repr(x) for x in b["gene"]]) for b in m.birth_records]
        runio.write_csv(out / "births.csv",
                        runio.BIRTH_COLUMNS + runio.GENE_COLUMNS, rows)
        print(json.dumps(summary, indent=2))
        if m.partial:
            print("warning: log has no run_end record; metrics are partial",
                  file=sys.stderr)
        return 0
    raise ValueError(f"unhandled command {args.command}")


def _run_experiment(args) -> int:
    cfg = _build_config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.number == "1":
        rates = [float(r) for r in args.rates.split(",")]
        rows, survival = experiments.run_experiment1(
            cfg, rates, seeds_per_rate=args.seeds, out_dir=out)
        for rate in rates:
            print(f"rate {rate:6.1f}: survival {survival[rate]:.0%}")
        return 0

    expectations = _load_expectations(args.expectations)
    if args.number == "2":
        for i in range(args.seeds):
            res = experiments.run_experiment2(
                cfg, args.condition, args.schedule, cfg.seed + i,
                out_dir=out / f"seed{i}", expectations=expectations)
            print(f"seed {i}: "
                  f"{'survived' if res.survived else 'collapsed'} "
                  f"t={res.duration:.1f}s births={res.births}")
        return 0
    if args.number == "3":
        if expectations is None:
            print("note: no --expectations given; bootstrapping first")
            expectations = experiments.bootstrap_expectations(
                cfg, out_dir=out / "bootstrap")
        for i in range(args.seeds):
            res = experiments.run_experiment3(
                cfg, args.item_kind, cfg.seed + i,
                expectations, out_dir=out / f"seed{i}")
            series = res.metrics.theta4_series()
            tail = [v for _, v in series[-max(1, len(series) // 4):]]
            med = sorted(tail)[len(tail) // 2] if tail else float("nan")
            print(f"seed {i}: {'survived' if res.survived else 'collapsed'} "
                  f"final-quarter median theta4={med:.3f}")
        return 0
    if args.number == "4":
        if expectations is None:
            print("note: no --expectations given; "
                  "bootstrapping a coin-free baseline first")
            expectations = experiments.bootstrap_expectations(
                experiments.coin_free(cfg), out_dir=out / "bootstrap")
        for i in range(args.seeds):
            res = experiments.run_experiment4(
                cfg, args.item_kind, cfg.seed + i,
                expectations=expectations, out_dir=out / f"seed{i}")
            series = res.metrics.theta4_series()
            last = series[-1][1] if series else float("nan")
            print(f"seed {i}: {'survived' if res.survived else 'collapsed'} "
                  f"last theta4={last:.3f}")
        return 0
    raise ValueError(args.number)


if __name__ == "__main__":
    sys.exit(main())
