"""Data generation, error injection, Monte Carlo orchestration and reporting.

Randomness contract: trial i draws its seed from the config's ``seeds`` list
(default 0, 1, ..., trials-1).  Within a trial, stream 0 of that seed
generates data and stream 1 drives the audit's sampling, so two audit methods
run on the same trial see identical batches and identical draw randomness;
comparisons between them are paired by construction.
"""

from __future__ import annotations

import csv
import json
import statistics
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import census as census_mod
from .alpha import AuditConfig, AuditOutcome, alpha_audit, alpha_batch_audit, combined_reported
from .batchcomp import batchcomp_audit, load_batches_csv
from .core import Assorter, BatchRecord, Contest, Tally, load_contest_csv, plurality_assorter
from .knesset import allocate_seats, assertion_margin, generate_assertions, load_knesset_config
from .randomness import make_rng

AUDIT_KINDS = ("alpha", "alpha_batch", "batchcomp", "census")


@dataclass(frozen=True)
class ErrorModel:
    """How the reported count deviates from the truth.

    ``ballot_misread``: each ballot is independently misread with probability
    ``p_misread``; a misread ballot is recorded invalid with probability
    ``p_invalid``, otherwise credited to a party drawn uniformly at random.
    ``census_disagree``: the survey re-draws its count for a ``rate`` share
    of households.
    """

    kind: str = "none"
    p_misread: float = 0.0
    p_invalid: float = 0.0
    rate: float = 0.0

    def __post_init__(self):
        if self.kind not in ("none", "ballot_misread", "census_disagree"):
            raise ValueError(f"unknown error model {self.kind!r}")
        for name in ("p_misread", "p_invalid", "rate"):
            if not 0 <= getattr(self, name) <= 1:
                raise ValueError(f"{name} must be a probability")


@dataclass
class TrialReport:
    seed: int
    audit: str
    approved: bool
    full_count: bool
    ballots_examined: int
    total_ballots: int
    per_assertion: dict[str, dict]
    risk_limit: float | None = None
    sample_fraction: float | None = None
    wall_time: float = 0.0


def trial_rngs(seed: int) -> tuple[np.random.Generator, tuple[int, int]]:
    """(data generator, audit seed) for one trial; see the module docstring."""
    data_rng = make_rng((seed, 0))
    return data_rng, (seed, 1)


def inject_ballot_errors(
    truth: Sequence[BatchRecord], model: ErrorModel, rng
) -> list[BatchRecord]:
    """Recompute reported tallies by misreading true ballots; truth unchanged.

    Batch totals are preserved: every misread ballot stays in its batch,
    only its recorded category moves.
    """
    if model.kind != "ballot_misread":
        raise ValueError("error model is not ballot_misread")
    out = []
    for batch in truth:
        types = sorted(batch.truth.counts, key=lambda bt: bt.name)
        parties = [bt for bt in types if not bt.is_invalid]
        invalid = next(bt for bt in types if bt.is_invalid)
        reported = {bt: batch.truth.get(bt) for bt in types}
        for bt in types:
            count = batch.truth.get(bt)
            if count == 0:
                continue
            misread = int(rng.binomial(count, model.p_misread))
            if misread == 0:
                continue
            reported[bt] -= misread
            to_invalid = int(rng.binomial(misread, model.p_invalid))
            reported[invalid] += to_invalid
            remaining = misread - to_invalid
            if remaining:
                split = rng.multinomial(remaining, [1.0 / len(parties)] * len(parties))
                for p, extra in zip(parties, split):
                    reported[p] += int(extra)
        out.append(
            BatchRecord(id=batch.id, reported=Tally(reported), truth=batch.truth, size=batch.size)
        )
    return out


def deal_batches(
    truth: Tally,
    rng,
    sizes: Sequence[int] | None = None,
    size_range: tuple[int, int] = (250, 550),
) -> list[BatchRecord]:
    """Partition a true tally into batches by dealing a shuffled deck.

    Batch composition is hypergeometric around the overall vote shares, the
    way single polling places scatter around a national result.  Reported
    tallies start out equal to the truth; inject errors separately.  Without
    explicit ``sizes``, draws are uniform over ``size_range`` with the tail
    merged into the final batch.
    """
    types = sorted(truth.counts, key=lambda bt: bt.name)
    n = truth.total
    deck = np.repeat(np.arange(len(types)), [truth.get(bt) for bt in types])
    rng.shuffle(deck)
    if sizes is None:
        lo, hi = size_range
        if hi < 2 * lo:
            raise ValueError("size range too narrow: need max >= 2 * min to always partition")
        if n < lo:
            raise ValueError(f"{n} ballots cannot fill a batch of at least {lo}")
        sizes = []
        left = n
        while left > hi:
            # cap at left - lo so the remainder always stays partitionable
            take = min(int(rng.integers(lo, hi + 1)), left - lo)
            sizes.append(take)
            left -= take
        sizes.append(left)
    elif sum(sizes) != n:
        raise ValueError(f"batch sizes sum to {sum(sizes)}, expected {n}")
    batches = []
    offset = 0
    for i, size in enumerate(sizes):
        chunk = deck[offset : offset + size]
        offset += size
        counts = np.bincount(chunk, minlength=len(types))
        tally = Tally({bt: int(c) for bt, c in zip(types, counts)})
        batches.append(BatchRecord(id=f"batch-{i:05d}", reported=tally, truth=tally, size=size))
    return batches


def plurality_assertions(contest: Contest, reported: Tally) -> list[Assorter]:
    """One winner-vs-loser assorter per reported loser."""
    parties = sorted(contest.parties, key=lambda bt: (-reported.get(bt), bt.name))
    winner = parties[0]
    return [plurality_assorter(winner, loser, contest) for loser in parties[1:]]


def _knesset_margins(assertions, reported: Tally) -> dict[str, int]:
    return {a.label: assertion_margin(a, reported) for a in assertions}


def run_election_trial(
    kind: str,
    batches: list[BatchRecord],
    assertions: list[Assorter],
    alpha: float,
    delta: float,
    audit_seed,
    trace=None,
) -> AuditOutcome:
    cfg = AuditConfig(alpha=alpha, seed=audit_seed)
    if kind == "batchcomp":
        return batchcomp_audit(batches, assertions, cfg, delta=delta, trace=trace)
    if kind == "alpha_batch":
        return alpha_batch_audit(batches, assertions, combined_reported(batches), cfg, trace=trace)
    if kind == "alpha":
        ballots = []
        for b in batches:
            for bt, c in sorted(b.truth.counts.items(), key=lambda kv: kv[0].name):
                ballots.extend([bt] * c)
        return alpha_audit(ballots, assertions, combined_reported(batches), cfg, trace=trace)
    raise ValueError(f"unknown audit kind {kind!r}")


class ConfigError(ValueError):
    """Malformed experiment configuration or data."""


def _require(cfg: Mapping, key: str):
    if key not in cfg:
        raise ConfigError(f"config is missing {key!r}")
    return cfg[key]


def load_household_distribution(path) -> dict[int, float]:
    """``size,probability`` CSV for residents per household."""
    out: dict[int, float] = {}
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames is None or [c.strip() for c in reader.fieldnames[:2]] != [
            "size",
            "probability",
        ]:
            raise ConfigError(f"{path}: expected columns size,probability")
        for row in reader:
            out[int(row["size"])] = float(row["probability"])
    if not out:
        raise ConfigError(f"{path}: empty distribution")
    return out


def run_experiment(
    config: Mapping | str | Path,
    out_dir: str | Path,
    seed: int | None = None,
    trials: int | None = None,
    trace: bool = False,
    jobs: int = 1,
) -> list[TrialReport]:
    """Run the configured Monte Carlo experiment and write its CSV tables.

    Outputs are byte-deterministic for a fixed config and seed list; wall
    times go to run_meta.json only.  ``seed``/``trials`` override the config.
    Trials are independent (each owns its streams and audit state), so
    ``jobs > 1`` runs them in a process pool; reports merge in trial order
    and the outputs stay identical to a sequential run.
    """
    if not isinstance(config, Mapping):
        with open(config, encoding="utf-8") as f:
            config = json.load(f)
    kind = _require(config, "audit")
    if kind not in AUDIT_KINDS:
        raise ConfigError(f"audit kind must be one of {AUDIT_KINDS}, got {kind!r}")
    trials = trials if trials is not None else int(config.get("trials", 10))
    if trials <= 0:
        raise ConfigError("trials must be positive")
    seeds = config.get("seeds")
    if seeds is None:
        base = seed if seed is not None else int(config.get("seed", 0))
        seeds = [base + i for i in range(trials)]
    else:
        seeds = [int(s) for s in seeds][:trials]
        if len(seeds) < trials:
            raise ConfigError("seed list is shorter than the trial count")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    started = time.perf_counter()
    if kind == "census":
        reports = _run_census_experiment(config, seeds, out_dir)
    else:
        reports = _run_election_experiment(config, kind, seeds, out_dir, trace, jobs)
    meta = {
        "config": _jsonable(config),
        "seeds": seeds,
        "wall_time_seconds": time.perf_counter() - started,
    }
    with open(out_dir / "run_meta.json", "w", encoding="utf-8") as f:
        json.dump(meta, f, indent=2)
    return reports


def _jsonable(obj):
    if isinstance(obj, Mapping):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, Path):
        return str(obj)
    return obj


def _load_election_inputs(config: Mapping):
    contest, tally = load_contest_csv(_require(config, "contest"))
    knesset = None
    if config.get("knesset"):
        knesset = load_knesset_config(config["knesset"])
        missing = set(knesset.parties) ^ {bt.name for bt in contest.parties}
        if missing:
            raise ConfigError(f"contest and knesset config disagree on parties: {sorted(missing)}")
    return contest, tally, knesset


def load_declared_sizes(path) -> dict[str, int]:
    """``batch_id,declared_size`` CSV used to pad short batches."""
    out: dict[str, int] = {}
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.DictReader(f)
        expected = ["batch_id", "declared_size"]
        if reader.fieldnames is None or [c.strip() for c in reader.fieldnames[:2]] != expected:
            raise ConfigError(f"{path}: expected columns {','.join(expected)}")
        for row in reader:
            out[row["batch_id"].strip()] = int(row["declared_size"])
    return out


def _trial_batches(config: Mapping, contest, tally, data_rng) -> list[BatchRecord]:
    batches_spec = _require(config, "batches")
    if isinstance(batches_spec, str):
        return load_batches_csv(batches_spec)
    if "file" in batches_spec:
        declared = batches_spec.get("declared_sizes")
        sizes = load_declared_sizes(declared) if declared else None
        return load_batches_csv(batches_spec["file"], declared_sizes=sizes)
    gen = batches_spec.get("generate", {})
    sizes = gen.get("sizes")
    size_range = tuple(gen.get("size_range", (250, 550)))
    return deal_batches(tally, data_rng, sizes=sizes, size_range=size_range)


def _election_trial(args) -> TrialReport:
    (kind, config, contest, truth_tally, knesset, alpha, delta, error_model, weaken,
     trial_seed, trace_path) = args
    t0 = time.perf_counter()
    data_rng, audit_seed = trial_rngs(trial_seed)
    batches = _trial_batches(config, contest, truth_tally, data_rng)
    if error_model.kind == "ballot_misread":
        batches = inject_ballot_errors(batches, error_model, data_rng)
    reported = combined_reported(batches)
    if knesset is not None:
        reported_seats = allocate_seats(knesset, reported)
        assertions = generate_assertions(knesset, reported, reported_seats, weaken)
    else:
        assertions = plurality_assertions(contest, reported)
    margins = {a.label: assertion_margin(a, reported) for a in assertions}

    trace_hook = None
    trace_file = None
    if trace_path is not None:
        trace_file = open(trace_path, "w", newline="")
        writer = csv.writer(trace_file)
        writer.writerow(["step", "assertion", "T", "mu", "eta", "u"])

        def trace_hook(s, lbl, T, mu, eta, u, _w=writer):
            _w.writerow([s, lbl, repr(T), repr(mu), repr(eta), repr(u)])

    try:
        outcome = run_election_trial(
            kind, batches, assertions, alpha, delta, audit_seed, trace_hook
        )
    finally:
        if trace_file:
            trace_file.close()
    per_assertion = {
        r.label: {
            "margin": margins.get(r.label),
            "ballots_examined": r.examined,
            "batches_examined": r.batches_examined,
            "approved": r.approved,
        }
        for r in outcome.assertions
    }
    return TrialReport(
        seed=trial_seed,
        audit=kind,
        approved=outcome.approved,
        full_count=outcome.full_count,
        ballots_examined=outcome.ballots_examined,
        total_ballots=outcome.total_ballots,
        per_assertion=per_assertion,
        wall_time=time.perf_counter() - t0,
    )


def _run_election_experiment(config, kind, seeds, out_dir, trace, jobs=1) -> list[TrialReport]:
    contest, truth_tally, knesset = _load_election_inputs(config)
    alpha = float(config.get("alpha", 0.05))
    delta = float(config.get("delta", 1e-10))
    error_cfg = config.get("error_model") or {"kind": "none"}
    error_model = ErrorModel(**error_cfg)
    weaken = [tuple(p) for p in config.get("weaken", [])]

    tasks = [
        (
            kind,
            dict(config),
            contest,
            truth_tally,
            knesset,
            alpha,
            delta,
            error_model,
            weaken,
            trial_seed,
            (out_dir / f"trace_trial{trial_idx}.csv") if trace else None,
        )
        for trial_idx, trial_seed in enumerate(seeds)
    ]
    if jobs > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=jobs) as pool:
            reports = list(pool.map(_election_trial, tasks))
    else:
        reports = [_election_trial(t) for t in tasks]
    _write_election_csvs(reports, out_dir)
    return reports


def _write_election_csvs(reports: list[TrialReport], out_dir: Path) -> None:
    with open(out_dir / "results.csv", "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(
            [
                "trial",
                "seed",
                "assertion",
                "margin",
                "margin_pct",
                "ballots_examined",
                "pct_ballots",
                "batches_examined",
                "approved",
            ]
        )
        for i, rep in enumerate(reports):
            for label in sorted(rep.per_assertion):
                row = rep.per_assertion[label]
                margin = row["margin"]
                w.writerow(
                    [
                        i,
                        rep.seed,
                        label,
                        margin,
                        _pct(margin, rep.total_ballots),
                        row["ballots_examined"],
                        _pct(row["ballots_examined"], rep.total_ballots),
                        row["batches_examined"] if row["batches_examined"] is not None else "",
                        int(row["approved"]),
                    ]
                )
    stats = assertion_stats(reports) if len(reports) >= 2 else []
    with open(out_dir / "summary.csv", "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["assertion", "margin", "mean_ballots", "std_ballots", "mean_pct_ballots"])
        for row in stats:
            w.writerow(row)


def _pct(x, total):
    if x is None or not total:
        return ""
    return repr(round(100.0 * x / total, 6))


def assertion_stats(reports: Sequence[TrialReport]) -> list[list]:
    """Per-assertion mean and sample standard deviation of ballots examined."""
    if len(reports) < 2:
        raise ValueError("need at least 2 trials for spread statistics")
    labels = sorted({lbl for rep in reports for lbl in rep.per_assertion})
    rows = []
    for lbl in labels:
        examined = [rep.per_assertion[lbl]["ballots_examined"] for rep in reports]
        margin = reports[0].per_assertion[lbl]["margin"]
        mean = statistics.fmean(examined)
        std = statistics.stdev(examined)
        total = reports[0].total_ballots
        rows.append([lbl, margin, repr(mean), repr(std), _pct(mean, total)])
    return rows


def _run_census_experiment(config, seeds, out_dir) -> list[TrialReport]:
    districts_path = _require(config, "districts")
    pops, constants = census_mod.load_districts_csv(districts_path)
    representatives = int(_require(config, "representatives"))
    g_max = int(config.get("g_max", census_mod.DEFAULT_GMAX))
    divisor = config.get("divisor", "dhondt")
    delta = float(config.get("delta", census_mod.DEFAULT_DELTA))
    disagree = float(config.get("disagreement_rate", 0.0))

    households_spec = _require(config, "households")
    generate = isinstance(households_spec, Mapping)
    fractions = config.get("sample_fractions")
    if generate and not fractions:
        raise ConfigError("generated census runs need sample_fractions")
    if not generate and fractions:
        raise ConfigError("sample_fractions only apply to generated households; "
                          "a household file fixes the surveyed set")
    fractions = [float(x) for x in fractions] if fractions else [None]

    reports: list[TrialReport] = []
    rows: list[list] = []
    for trial_idx, trial_seed in enumerate(seeds):
        t0 = time.perf_counter()
        data_rng, audit_seed = trial_rngs(trial_seed)
        if generate:
            gen = households_spec["generate"]
            dist = load_household_distribution(gen["household_dist"])
            households, model = census_mod.generate_census_population(
                pops, dist, float(gen.get("nonresponse", 0.0)), data_rng,
                representatives, g_max, divisor,
            )
            if disagree > 0:
                households = _inject_agreeing_disagreement(
                    households, model, disagree, dist, data_rng
                )
        else:
            households = census_mod.load_households_csv(households_spec)
            model = census_mod.CensusModel(
                states=tuple(pops),
                representatives=representatives,
                constants=constants,
                g_max=g_max,
                divisor_name=divisor,
            )
        data = census_mod.CensusData(model, households)
        n = data.n
        for frac in fractions:
            if frac is None:
                mask = None
            else:
                k = max(1, round(frac * n))
                mask = np.zeros(n, dtype=bool)
                mask[data_rng.choice(n, size=k, replace=False)] = True
            cfg = AuditConfig(alpha=1.0, seed=audit_seed)
            outcome = census_mod.census_rla(model, data, cfg, delta=delta, surveyed_mask=mask)
            frac_label = repr(frac) if frac is not None else "file"
            rows.append([frac_label, trial_idx, trial_seed, repr(outcome.risk_limit)])
            reports.append(
                TrialReport(
                    seed=trial_seed,
                    audit="census",
                    approved=outcome.risk_limit < 1.0,
                    full_count=False,
                    ballots_examined=outcome.households_examined,
                    total_ballots=n,
                    per_assertion={
                        f"{a}->{b}": {"risk": r} for (a, b), r in sorted(outcome.pair_risks.items())
                    },
                    risk_limit=outcome.risk_limit,
                    sample_fraction=frac,
                    wall_time=time.perf_counter() - t0,
                )
            )
    with open(out_dir / "risk_curve.csv", "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["sample_fraction", "trial", "seed", "risk_limit"])
        w.writerows(rows)
    with open(out_dir / "risk_summary.csv", "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["sample_fraction", "median_risk_limit"])
        for frac in fractions:
            risks = [r.risk_limit for r in reports if r.sample_fraction == frac]
            frac_label = repr(frac) if frac is not None else "file"
            w.writerow([frac_label, repr(statistics.median(risks))])
    return reports


def _inject_agreeing_disagreement(households, model, rate, dist, rng, max_tries: int = 50):
    """Disagreement injection conditioned on an unchanged full-survey allocation.

    The efficiency question is only meaningful when the full survey would
    confirm the census, so redraws that flip a seat are rejected and retried.
    """
    base = census_mod.apportion(
        model, _pops_from(households, model, lambda h: h.census_count)
    )
    for _ in range(max_tries):
        candidate = census_mod.inject_survey_disagreement(households, rate, dist, rng)
        pes_alloc = census_mod.apportion(
            model, _pops_from(candidate, model, lambda h: h.pes_count)
        )
        if pes_alloc == base:
            return candidate
    raise ValueError(
        "could not inject survey disagreement without changing the seat allocation; "
        "margins are too tight for this disagreement rate"
    )


def _pops_from(households, model, count_of):
    pops = {s: 0 for s in model.states}
    for h in households:
        pops[h.state] += count_of(h)
    return pops


def write_census_outcome_csv(outcome: census_mod.CensusOutcome, path) -> None:
    """Pairwise risk limits plus an overall summary line."""
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["pair_s1", "pair_s2", "risk_limit"])
        for (s1, s2), risk in sorted(outcome.pair_risks.items()):
            w.writerow([s1, s2, repr(risk)])
        w.writerow(["OVERALL", "", repr(outcome.risk_limit)])
