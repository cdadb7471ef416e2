"""Sequential supermartingale test over single ballots, plus the batch-polling baseline.

Each assertion keeps a statistic T, the inverse of a p-value for the null
that its assorter mean is at most 1/2.  Drawing a ballot worth ``a`` updates

    T <- T * ( (a / mu) * (eta - mu) / (u - mu)  +  (u - eta) / (u - mu) )

where ``mu`` is the mean of the remaining ballots under the null, ``eta`` the
mean of the remaining ballots if the reported tally is exact, and ``u`` a
bound kept strictly above ``eta``.  An assertion is approved once T exceeds
1/alpha, or with certainty once ``mu`` goes negative (the ballots already
seen force the full mean above 1/2 no matter what remains).

The batch variant draws whole batches with probability proportional to size
and feeds each batch's true assorter mean through the same update, with the
running sums weighted by batch size.  It uses only the overall reported
tally, never per-batch reported tallies; the comparison audit that does use
them lives in :mod:`electaudit.batchcomp`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Sequence

import numpy as np

from .core import Assorter, BallotType, BatchRecord, Tally, assorter_mean
from .randomness import Seed, make_rng

TraceHook = Callable[[int, str, float, float, float, float], None]

_HALF = Fraction(1, 2)


@dataclass
class AuditConfig:
    """Risk limit, the epsilon keeping mu < eta < u strict, and the shuffle seed."""

    alpha: float
    epsilon: float = 1e-9
    seed: Seed = 0

    def __post_init__(self):
        if not 0 < self.alpha <= 1:
            raise ValueError("risk limit alpha must be in (0, 1]")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")


@dataclass
class AssertionState:
    """Mutable per-assertion test state; one instance per assorter.

    ``cum_sum`` accumulates ballot-weighted assorter values and ``seen``
    counts ballots, so batch draws enter with their size as weight.
    ``eta_budget`` caches n times the reported mean for the remaining-mean
    guess rule; the comparison audits use a fixed floor instead.
    """

    label: str
    T: float = 1.0
    T_max: float = 1.0
    mu: float = 0.5
    eta: float = 0.0
    u: float = 1.0
    cum_sum: float = 0.0
    seen: int = 0
    active: bool = True
    approvable: bool = True
    approved: bool = False
    examined_at_approval: int | None = None
    eta_budget: float = 0.0


@dataclass(frozen=True)
class AssertionOutcome:
    label: str
    approvable: bool
    approved: bool
    examined: int
    batches_examined: int | None = None
    truly_satisfied: bool | None = None


@dataclass(frozen=True)
class AuditOutcome:
    approved: bool
    full_count: bool
    ballots_examined: int
    total_ballots: int
    assertions: tuple[AssertionOutcome, ...]


def alpha_init(
    assorters: Sequence[Assorter], reported: Tally, n: int, cfg: AuditConfig
) -> list[AssertionState]:
    """Fresh test states: T=1, mu=1/2, u the assorter bound, eta the reported mean.

    An assertion whose reported mean is at most 1/2 is flagged un-approvable:
    the reported results themselves refute it, so the audit can only end in a
    full recount.  A reported mean at or above the upper bound leaves no room
    for mu < eta < u and is rejected outright.
    """
    if n <= 0:
        raise ValueError("ballot count must be positive")
    if reported.total != n:
        raise ValueError(f"reported tally covers {reported.total} ballots, expected {n}")
    states = []
    for a in assorters:
        eta = float(assorter_mean(a, reported))
        u = float(a.upper)
        state = AssertionState(label=a.label, eta=eta, u=u, eta_budget=n * eta)
        if eta <= 0.5:
            state.approvable = False
            state.active = False
        elif eta >= u:
            raise ValueError(
                f"degenerate assorter {a.label!r}: reported mean {eta} reaches its upper bound {u}"
            )
        states.append(state)
    return states


def _advance(
    state: AssertionState,
    value: float,
    weight: int,
    n: int,
    cfg: AuditConfig,
    eta_floor: float | None,
) -> None:
    """One update: T from the current (mu, eta, u), then the forward guesses.

    ``eta_floor`` of None selects the remaining-reported-mean rule driven by
    ``state.eta_budget``; a float selects the fixed-target rule used by the
    comparison audits.  The guesses are refreshed in the order mu, eta, u so
    each uses the value just computed before it.
    """
    if not state.active:
        raise ValueError(f"assertion {state.label!r} is no longer active")
    if state.seen >= n:
        raise ValueError("all ballots consumed; caller must stop sampling first")
    if value < 0:
        raise ValueError("assorter values are non-negative")
    mu, eta, u = state.mu, state.eta, state.u
    if mu <= 0.0:
        # mu has hit zero exactly: any positive draw is infinite evidence
        factor = math.inf if value > 0 else (u - eta) / (u - mu)
    else:
        factor = (value / mu) * (eta - mu) / (u - mu) + (u - eta) / (u - mu)
    state.T *= factor
    if state.T > state.T_max:
        state.T_max = state.T
    state.cum_sum += value * weight
    state.seen += weight
    if state.T > 1.0 / cfg.alpha:
        state.active = False
        state.approved = True
        return
    if state.seen < n:
        remaining = n - state.seen
        state.mu = (0.5 * n - state.cum_sum) / remaining
        if eta_floor is None:
            target = (state.eta_budget - state.cum_sum) / remaining
        else:
            target = eta_floor
        state.eta = max(state.mu + cfg.epsilon, target)
        state.u = max(state.u, state.eta + cfg.epsilon)
        if state.mu < 0:
            state.active = False
            state.approved = True


def alpha_step(
    state: AssertionState, value: float, cfg: AuditConfig, n: int, reported_mean: float
) -> AssertionState:
    """Consume one ballot worth ``value``; mutates and returns ``state``."""
    state.eta_budget = n * reported_mean
    _advance(state, value, 1, n, cfg, eta_floor=None)
    return state


def _alpha_trajectory(x: np.ndarray, n: int, reported_mean: float, u0: float, eps: float):
    """Whole-audit path for one assertion, vectorised.

    Index j of each returned array holds the values in effect at draw j+1 (T
    after that draw).  The sequential updates are reproduced exactly: mu and
    eta depend on past draws only through their running sum, and u is a
    running max of eta + eps seeded with the initial bound.
    """
    m = len(x)
    S = np.concatenate(([0.0], np.cumsum(x)))[:-1]
    rem = (n - np.arange(m)).astype(np.float64)
    mu = (0.5 * n - S) / rem
    eta = np.maximum(mu + eps, (n * reported_mean - S) / rem)
    eta[0] = reported_mean
    u = np.maximum.accumulate(np.concatenate(([u0], eta[1:] + eps)))
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        grow = np.where(x > 0, (x / mu) * (eta - mu) / (u - mu), 0.0)
        factor = grow + (u - eta) / (u - mu)
        T = np.exp(np.cumsum(np.log(factor)))
    return T, mu, eta, u


def _first_crossing(T: np.ndarray, mu: np.ndarray, alpha: float) -> tuple[bool, int, float]:
    """(approved, draws examined, T_max at stop) read off a full trajectory."""
    hits_T = np.flatnonzero(T > 1.0 / alpha)
    stop_T = int(hits_T[0]) + 1 if hits_T.size else None
    # mu[j] is the value computed after draw j, so a negative entry at index j
    # means approval upon the j-th draw
    hits_mu = np.flatnonzero(mu < 0)
    stop_mu = int(hits_mu[0]) if hits_mu.size else None
    stops = [s for s in (stop_T, stop_mu) if s is not None]
    if stops:
        stop = min(stops)
        return True, stop, float(np.max(T[:stop])) if stop else 1.0
    return False, len(T), float(np.max(T)) if len(T) else 1.0


def alpha_audit(
    ballots: Sequence[BallotType],
    assorters: Sequence[Assorter],
    reported: Tally,
    cfg: AuditConfig,
    trace: TraceHook | None = None,
) -> AuditOutcome:
    """Audit the full true ballot list against the reported tally.

    Ballots are drawn without replacement via a seeded shuffle and consumed in
    order.  Returns per-assertion approval and the ballots examined when each
    was approved; the overall outcome is approved only if every assertion is.
    Failing to approve is not an error: the audit then ends in a full count
    and reports the truth it found.
    """
    n = len(ballots)
    states = alpha_init(assorters, reported, n, cfg)
    rng = make_rng(cfg.seed)

    contest_types = sorted(set(ballots), key=lambda bt: bt.name)
    index = {bt: i for i, bt in enumerate(contest_types)}
    values = np.array(
        [[float(a.value(bt)) for bt in contest_types] for a in assorters], dtype=np.float64
    )
    type_idx = np.array([index[b] for b in ballots], dtype=np.intp)
    drawn = type_idx[rng.permutation(n)]

    results: list[AssertionOutcome] = []
    overall_examined = 0
    all_approved = True
    for k, (a, st) in enumerate(zip(assorters, states)):
        if not st.approvable:
            results.append(AssertionOutcome(a.label, False, False, n))
            all_approved = False
            continue
        x = values[k][drawn]
        if trace is None:
            T, mu, _, _ = _alpha_trajectory(x, n, st.eta, st.u, cfg.epsilon)
            approved, examined, _ = _first_crossing(T, mu, cfg.alpha)
        else:
            approved, examined = _traced_single(x, n, st, cfg, trace, a.label)
        results.append(AssertionOutcome(a.label, True, approved, examined))
        all_approved &= approved
        overall_examined = max(overall_examined, examined)

    full_count = not all_approved
    if full_count:
        overall_examined = n
        counts = np.bincount(type_idx, minlength=len(contest_types))
        truth = Tally({bt: int(c) for bt, c in zip(contest_types, counts)})
        results = [
            AssertionOutcome(
                r.label,
                r.approvable,
                r.approved,
                r.examined,
                truly_satisfied=assorter_mean(assorters[i], truth) > _HALF,
            )
            for i, r in enumerate(results)
        ]
    return AuditOutcome(
        approved=all_approved,
        full_count=full_count,
        ballots_examined=overall_examined,
        total_ballots=n,
        assertions=tuple(results),
    )


def _traced_single(x, n, init_state, cfg, trace, label):
    """Step-by-step evaluation emitting one trace row per draw."""
    st = AssertionState(
        label=label, eta=init_state.eta, u=init_state.u, eta_budget=init_state.eta_budget
    )
    reported_mean = init_state.eta
    for j, value in enumerate(x, start=1):
        alpha_step(st, float(value), cfg, n, reported_mean)
        trace(j, label, st.T, st.mu, st.eta, st.u)
        if not st.active:
            return True, j
    return False, n


def _draw_batches_without_replacement(batches: Sequence[BatchRecord], rng) -> list[int]:
    """Order of batch indices, each drawn with probability proportional to size."""
    sizes = np.array([b.size for b in batches], dtype=np.float64)
    remaining = list(range(len(batches)))
    order = []
    while remaining:
        weights = sizes[remaining]
        pick = rng.choice(len(remaining), p=weights / weights.sum())
        order.append(remaining.pop(int(pick)))
    return order


def batch_audit_loop(
    batches: Sequence[BatchRecord],
    states: list[AssertionState],
    batch_values: np.ndarray,
    n: int,
    cfg: AuditConfig,
    eta_floors: Sequence[float | None],
    trace: TraceHook | None = None,
) -> tuple[list[AssertionOutcome], bool, int]:
    """Shared engine for both batch audits; they differ in values and eta rule."""
    rng = make_rng(cfg.seed)
    order = _draw_batches_without_replacement(batches, rng)
    ballots_seen = 0
    examined = [n] * len(states)
    batches_at = [len(batches)] * len(states)
    for step, i in enumerate(order, start=1):
        batch = batches[i]
        ballots_seen += batch.size
        live = False
        for k, st in enumerate(states):
            if not st.active:
                continue
            _advance(st, float(batch_values[k, i]), batch.size, n, cfg, eta_floors[k])
            if trace is not None:
                trace(step, st.label, st.T, st.mu, st.eta, st.u)
            if st.approved and st.examined_at_approval is None:
                st.examined_at_approval = ballots_seen
                examined[k] = ballots_seen
                batches_at[k] = step
            live = live or st.active
        if not live:
            break
    results = []
    all_approved = True
    for k, st in enumerate(states):
        results.append(
            AssertionOutcome(
                st.label,
                st.approvable,
                st.approved,
                examined[k] if st.approved else n,
                batches_examined=batches_at[k] if st.approved else len(batches),
            )
        )
        all_approved &= st.approved
    overall = max((r.examined for r in results), default=0)
    return results, all_approved, overall


def alpha_batch_audit(
    batches: Sequence[BatchRecord],
    assorters: Sequence[Assorter],
    reported: Tally,
    cfg: AuditConfig,
    trace: TraceHook | None = None,
) -> AuditOutcome:
    """Batch-polling audit: the ballot-level test fed with true batch means.

    Sampling units are whole batches, drawn with probability proportional to
    size; the null mean stays ballot-denominated, so each draw enters with its
    batch size as weight.  The upper bound starts at the ballot-level assorter
    bound, which is what makes this baseline slow: per-batch means hug the
    overall mean far below that bound, so T moves in tiny steps.
    """
    if not batches:
        raise ValueError("batch list is empty")
    check_batches_padded(batches)
    combined = combined_reported(batches)
    if dict(reported.counts) != dict(combined.counts):
        raise ValueError("overall reported tally is inconsistent with the batch tallies")
    n = sum(b.size for b in batches)
    states = alpha_init(assorters, reported, n, cfg)
    batch_values = np.array(
        [[float(assorter_mean(a, b.truth)) for b in batches] for a in assorters]
    )
    results, all_approved, overall = batch_audit_loop(
        batches, states, batch_values, n, cfg, [None] * len(states), trace
    )
    full_count = not all_approved
    if full_count:
        overall = n
        truth = combined_truth(batches)
        results = [
            AssertionOutcome(
                r.label,
                r.approvable,
                r.approved,
                r.examined,
                batches_examined=r.batches_examined,
                truly_satisfied=assorter_mean(assorters[i], truth) > _HALF,
            )
            for i, r in enumerate(results)
        ]
    return AuditOutcome(all_approved, full_count, overall, n, tuple(results))


def check_batches_padded(batches: Sequence[BatchRecord]) -> None:
    ids = set()
    for b in batches:
        if b.id in ids:
            raise ValueError(f"duplicate batch id {b.id!r}")
        ids.add(b.id)
        if not (b.reported.total == b.truth.total == b.size):
            raise ValueError(
                f"batch {b.id!r} is not padded: reported {b.reported.total}, "
                f"true {b.truth.total}, size {b.size}"
            )


def combined_reported(batches: Sequence[BatchRecord]) -> Tally:
    out = batches[0].reported
    for b in batches[1:]:
        out = out.combined(b.reported)
    return out


def combined_truth(batches: Sequence[BatchRecord]) -> Tally:
    out = batches[0].truth
    for b in batches[1:]:
        out = out.combined(b.truth)
    return out
