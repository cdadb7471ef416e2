"""Command line interface.

    audit run     --config cfg.json --seed 7 --trials 10 --out results/
    audit margins --contest contest.csv [--knesset knesset.json] [--weaken P1:P2]
    audit census  --model districts.csv (--households h.csv | --generate ...)

Exit codes: 0 for a completed run (a full-recount outcome is still a
completed run), 2 for malformed configuration or data.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

from . import census as census_mod
from .alpha import AuditConfig
from .core import load_contest_csv
from .harness import (
    ConfigError,
    plurality_assertions,
    run_experiment,
    write_census_outcome_csv,
)
from .knesset import allocate_seats, assertion_margin, generate_assertions, load_knesset_config


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="audit", description="Risk-limiting audits for elections and censuses"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a configured Monte Carlo audit experiment")
    run.add_argument("--config", required=True, help="JSON experiment configuration")
    run.add_argument("--seed", type=int, default=None, help="root seed (overrides config)")
    run.add_argument("--trials", type=int, default=None, help="trial count (overrides config)")
    run.add_argument("--out", required=True, help="output directory for CSV tables")
    run.add_argument("--trace", action="store_true", help="write per-step test state CSVs")
    run.add_argument("--jobs", type=int, default=1, help="run trials in this many processes")

    margins = sub.add_parser("margins", help="print assertion margins for a contest")
    margins.add_argument("--contest", required=True, help="party,reported_votes CSV")
    margins.add_argument("--knesset", default=None, help="Knesset contest JSON config")
    margins.add_argument(
        "--weaken",
        action="append",
        default=[],
        metavar="GAINER:KEEPER",
        help="use the one-seat move-seat form for this unit pair (repeatable)",
    )

    cens = sub.add_parser("census", help="audit a census apportionment against survey data")
    cens.add_argument("--model", required=True, help="district,population,c_constant CSV")
    cens.add_argument("--households", default=None, help="household CSV with survey results")
    cens.add_argument("--generate", action="store_true", help="generate households instead")
    cens.add_argument("--household-dist", default=None, help="size,probability CSV for generation")
    cens.add_argument("--nonresponse", type=float, default=0.01)
    cens.add_argument("--disagree", type=float, default=0.0, help="survey disagreement rate")
    cens.add_argument("--representatives", type=int, default=56)
    cens.add_argument("--g-max", type=int, default=census_mod.DEFAULT_GMAX)
    cens.add_argument("--divisor", default="dhondt")
    cens.add_argument("--delta", type=float, default=census_mod.DEFAULT_DELTA)
    cens.add_argument(
        "--sample-frac",
        default=None,
        help="comma-separated surveyed fractions for generated runs, e.g. 0.0066,0.0087",
    )
    cens.add_argument("--trials", type=int, default=10)
    cens.add_argument("--seed", type=int, default=0)
    cens.add_argument("--out", default=None, help="output directory (generated runs)")
    return parser


def _cmd_run(args) -> int:
    run_experiment(
        args.config, args.out, seed=args.seed, trials=args.trials, trace=args.trace,
        jobs=args.jobs,
    )
    return 0


def _cmd_margins(args) -> int:
    contest, reported = load_contest_csv(args.contest)
    if args.knesset:
        kc = load_knesset_config(args.knesset)
        weaken = []
        for spec in args.weaken:
            gainer, _, keeper = spec.partition(":")
            if not keeper:
                raise ConfigError(f"--weaken wants GAINER:KEEPER, got {spec!r}")
            weaken.append((gainer, keeper))
        seats = allocate_seats(kc, reported)
        assertions = generate_assertions(kc, reported, seats, weaken)
    else:
        assertions = plurality_assertions(contest, reported)
    writer = csv.writer(sys.stdout)
    writer.writerow(["assertion", "margin", "margin_pct"])
    total = reported.total
    for a in assertions:
        m = assertion_margin(a, reported)
        writer.writerow([a.label, m, repr(round(100.0 * m / total, 6))])
    return 0


def _cmd_census(args) -> int:
    if args.generate == (args.households is not None):
        raise ConfigError("give exactly one of --households or --generate")
    if args.generate:
        if not args.household_dist or not args.sample_frac or not args.out:
            raise ConfigError("--generate needs --household-dist, --sample-frac and --out")
        config = {
            "audit": "census",
            "districts": args.model,
            "representatives": args.representatives,
            "g_max": args.g_max,
            "divisor": args.divisor,
            "delta": args.delta,
            "disagreement_rate": args.disagree,
            "sample_fractions": [float(x) for x in args.sample_frac.split(",")],
            "households": {
                "generate": {
                    "household_dist": args.household_dist,
                    "nonresponse": args.nonresponse,
                }
            },
            "trials": args.trials,
            "seed": args.seed,
        }
        run_experiment(config, args.out, seed=args.seed, trials=args.trials)
        return 0

    pops, constants = census_mod.load_districts_csv(args.model)
    households = census_mod.load_households_csv(args.households)
    model = census_mod.CensusModel(
        states=tuple(pops),
        representatives=args.representatives,
        constants=constants,
        g_max=args.g_max,
        divisor_name=args.divisor,
    )
    cfg = AuditConfig(alpha=1.0, seed=args.seed)
    outcome = census_mod.census_rla(model, households, cfg, delta=args.delta)
    if args.out:
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        write_census_outcome_csv(outcome, out_dir / "census_risks.csv")
    writer = csv.writer(sys.stdout)
    writer.writerow(["pair_s1", "pair_s2", "risk_limit"])
    for (s1, s2), risk in sorted(outcome.pair_risks.items()):
        writer.writerow([s1, s2, repr(risk)])
    writer.writerow(["OVERALL", "", repr(outcome.risk_limit)])
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "margins":
            return _cmd_margins(args)
        if args.command == "census":
            return _cmd_census(args)
        raise AssertionError("unreachable")
    except (ConfigError, ValueError, OSError, json.JSONDecodeError, KeyError) as exc:
        print(f"audit: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
