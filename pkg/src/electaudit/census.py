"""Census audit: does the head count allocate representatives the way a full
re-survey would?

States receive representatives by a highest-averages rule over their census
populations (cell value (pop_s + c_s) / d(r); the d'Hondt divisor d(r) = r by
default).  A post-enumeration survey re-counts a random sample of households;
the audit treats the census as the reported result and the survey as the
truth, and outputs the smallest risk limit at which the census allocation can
be approved, rather than taking a risk limit up front: the sample is whatever
the survey collected, so the evidence, not the appetite, is the budget.

Per ordered pair of states (s1, s2), a household-level assorter certifies the
pairwise inequality that keeps s1's last seat ahead of s2's next one, and a
comparison assorter scores the census-vs-survey discrepancy against the
census margin m of that pair:

    A(h) = 1/2 + (m + a_pes(h) - a_cen(h)) / (2 (z - m)),

with z the scale bound making A non-negative.  Households where the survey
agrees with the census all score the same constant, so agreement compounds
multiplicatively exactly as accurate batches do in the batch-comparison
audit.  All constants are exact rationals; the sequential loop runs floats.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from fractions import Fraction
from typing import Mapping, Sequence

import numpy as np

from .alpha import AuditConfig
from .apportionment import DIVISORS, Divisor, highest_averages
from .randomness import make_rng

DEFAULT_GMAX = 15
DEFAULT_DELTA = 1e-10


@dataclass(frozen=True)
class CensusModel:
    """States, house size, per-state additive constants and the divisor rule.

    ``g_max`` is the cap both the census and the survey enforce on a single
    household's headcount; without it one household could swing any seat.
    """

    states: tuple[str, ...]
    representatives: int
    constants: Mapping[str, Fraction]
    g_max: int = DEFAULT_GMAX
    divisor_name: str = "dhondt"

    def __post_init__(self):
        if self.representatives <= 0:
            raise ValueError("representative count must be positive")
        if self.g_max <= 0:
            raise ValueError("g_max must be positive")
        if len(set(self.states)) != len(self.states):
            raise ValueError("duplicate state names")
        if self.divisor_name not in DIVISORS:
            raise ValueError(f"unknown divisor {self.divisor_name!r}; options: {sorted(DIVISORS)}")
        object.__setattr__(
            self, "constants", {s: Fraction(self.constants.get(s, 0)) for s in self.states}
        )

    @property
    def divisor(self) -> Divisor:
        return DIVISORS[self.divisor_name]


@dataclass(frozen=True)
class Household:
    id: str
    state: str
    census_count: int
    pes_count: int | None = None
    in_pes_frame: bool = True

    @property
    def surveyed(self) -> bool:
        return self.pes_count is not None


def apportion(model: CensusModel, populations: Mapping[str, int]) -> dict[str, int]:
    """Highest-averages allocation over (population + constant) per state."""
    values = {s: Fraction(populations[s]) + model.constants[s] for s in model.states}
    return highest_averages(values, model.representatives, model.divisor, what="apportionment")


@dataclass(frozen=True)
class CensusPair:
    """Precomputed constants for one ordered state pair's assertion.

    r1, r2 are the census seat counts; d1 = d(r1), d2 = d(r2 + 1).  The
    normaliser c comes from converting the pairwise population inequality to
    half-average form; m is the census margin of the pair's assorter and z
    the bound that keeps the comparison assorter non-negative.
    """

    s1: str
    s2: str
    r1: int
    r2: int
    d1: int
    d2: int
    g_max: int
    c: Fraction
    m: Fraction
    z: Fraction

    @property
    def agree_value(self) -> Fraction:
        return Fraction(1, 2) + self.m / (2 * (self.z - self.m))


def census_pair(
    model: CensusModel,
    seats: Mapping[str, int],
    census_pops: Mapping[str, int],
    n_households: int,
    s1: str,
    s2: str,
) -> CensusPair:
    """Constants for the (s1, s2) assertion from census aggregates.

    Raises for a non-positive normaliser or z <= m (no room for the test to
    move); a non-positive margin m is *not* an error here, it means the
    census refutes the assertion by itself and the caller pins its risk at 1.
    """
    if s1 == s2:
        raise ValueError("pair states must differ")
    d = model.divisor
    r1, r2 = seats[s1], seats[s2]
    d1, d2 = d(r1), d(r2 + 1)
    if r1 == 0:
        raise ValueError(f"state {s1!r} holds no seat to defend against {s2!r}")
    n = n_households
    g = model.g_max
    c = 2 * (
        Fraction(g, d2)
        + model.constants[s2] / (n * d2)
        - model.constants[s1] / (n * d1)
    )
    if c <= 0:
        raise ValueError(f"degenerate pair ({s1}, {s2}): normaliser is not positive")
    mean_cen = (
        Fraction(census_pops[s1], d1) + Fraction(n * g - census_pops[s2], d2)
    ) / (c * n)
    m = mean_cen - Fraction(1, 2)
    z = max(Fraction(g) / (c * d2), Fraction(g) / (c * d1), Fraction(0))
    if z <= m:
        raise ValueError(f"degenerate pair ({s1}, {s2}): z={z} does not exceed margin m={m}")
    return CensusPair(s1=s1, s2=s2, r1=r1, r2=r2, d1=d1, d2=d2, g_max=g, c=c, m=m, z=z)


def census_assorter_value(pair: CensusPair, household: Household, use_pes: bool):
    """Household-level assorter: g_s1/(c d1) + (g_max - g_s2)/(c d2).

    ``use_pes`` selects the survey count; the census count otherwise.  Exact
    when the pair constants are exact.
    """
    if use_pes:
        if household.pes_count is None:
            raise ValueError(f"household {household.id!r} has no survey count")
        count = household.pes_count
    else:
        count = household.census_count
    g1 = count if household.state == pair.s1 else 0
    g2 = count if household.state == pair.s2 else 0
    return Fraction(g1, pair.d1) / pair.c + Fraction(pair.g_max - g2, pair.d2) / pair.c


def comparison_assorter_value(pair: CensusPair, household: Household, pes_count: int | None = None):
    """Discrepancy assorter 1/2 + (m + a_pes - a_cen) / (2 (z - m)).

    ``pes_count`` overrides the household's recorded survey count; the audit
    uses this to score frame-absent draws as agreeing with the census.
    """
    if pes_count is None:
        pes_count = household.pes_count
    if pes_count is None:
        raise ValueError(f"household {household.id!r} has no survey count")
    diff = Fraction(0)
    if household.state == pair.s1:
        diff = Fraction(pes_count - household.census_count, pair.d1) / pair.c
    elif household.state == pair.s2:
        diff = Fraction(household.census_count - pes_count, pair.d2) / pair.c
    return Fraction(1, 2) + (pair.m + diff) / (2 * (pair.z - pair.m))


def sample_household(
    h1: Sequence[Household],
    hcen: Sequence[Household],
    hpes: Sequence[Household],
    hsurveyed: Sequence[Household],
    rng,
) -> Household:
    """Draw the next household so the auditor sees a uniform pick from ``h1``.

    With probability |frame ∩ h1| / |h1| the draw is uniform over the
    surveyed households still in ``h1``; otherwise it is uniform over the
    not-in-frame households still in ``h1``.  Because the survey itself chose
    its households uniformly from the frame, the composition is a uniform
    draw from ``h1`` that never lands on an unsurveyed frame household.
    """
    h1_set = set(h1)
    if not h1_set:
        raise ValueError("no households left to sample")
    pes_set = set(hpes)
    everything = set(hcen) | pes_set
    p = len(pes_set & h1_set) / len(h1_set)
    if rng.random() < p:
        pool = sorted(set(hsurveyed) & h1_set, key=lambda h: h.id)
    else:
        pool = sorted((everything - pes_set) & h1_set, key=lambda h: h.id)
    if not pool:
        raise ValueError("sampling frame exhausted: the chosen branch has no household left")
    return pool[int(rng.integers(len(pool)))]


@dataclass
class _PairTest:
    """Sequential state for one pair; the T update uses the product form
    T <- (T/U) (A eta/mu + (U - A)(U - eta)/(U - mu))."""

    pair: CensusPair
    agree: float
    T: float = 1.0
    T_max: float = 1.0
    mu: float = 0.5
    eta: float = 0.0
    U: float = 0.0
    cum: float = 0.0
    live: bool = True

    def update(self, A: float, n: int, seen: int, eps: float) -> None:
        T, mu, eta, U = self.T, self.mu, self.eta, self.U
        if mu <= 0.0:
            factor = math.inf if A > 0 else (1.0 / U) * (U - A) * (U - eta) / (U - mu)
        else:
            factor = (1.0 / U) * (A * eta / mu + (U - A) * (U - eta) / (U - mu))
        self.T = T * factor
        if self.T > self.T_max:
            self.T_max = self.T
        self.cum += A
        if seen < n:
            self.mu = (0.5 * n - self.cum) / (n - seen)
            self.eta = max(self.agree, self.mu + eps)
            self.U = max(self.U, self.eta + eps)
            if self.mu < 0:
                self.T_max = math.inf
                self.live = False


@dataclass(frozen=True)
class CensusOutcome:
    """Smallest approvable risk limit overall, per pair and per state."""

    risk_limit: float
    pair_risks: Mapping[tuple[str, str], float]
    state_risks: Mapping[str, float]
    households_examined: int
    total_households: int
    census_seats: Mapping[str, int]


class CensusData:
    """Array view of a household list, reusable across audit runs."""

    def __init__(self, model: CensusModel, households: Sequence[Household]):
        self.model = model
        self.households = list(households)
        ids = set()
        for h in self.households:
            if h.id in ids:
                raise ValueError(f"duplicate household id {h.id!r}")
            ids.add(h.id)
            if h.state not in model.states:
                raise ValueError(f"household {h.id!r} names unknown state {h.state!r}")
            if not 0 <= h.census_count <= model.g_max:
                raise ValueError(
                    f"household {h.id!r} census count {h.census_count} outside [0, {model.g_max}]"
                )
            if h.pes_count is not None and not 0 <= h.pes_count <= model.g_max:
                raise ValueError(
                    f"household {h.id!r} survey count {h.pes_count} outside [0, {model.g_max}]"
                )
        state_index = {s: i for i, s in enumerate(model.states)}
        self.state_idx = np.array([state_index[h.state] for h in self.households], dtype=np.intp)
        self.cen = np.array([h.census_count for h in self.households], dtype=np.int64)
        self.pes = np.array(
            [h.census_count if h.pes_count is None else h.pes_count for h in self.households],
            dtype=np.int64,
        )
        self.has_pes = np.array([h.pes_count is not None for h in self.households], dtype=bool)
        self.in_frame = np.array([h.in_pes_frame for h in self.households], dtype=bool)
        self.census_pops = {
            s: int(self.cen[self.state_idx == i].sum()) for i, s in enumerate(model.states)
        }

    @property
    def n(self) -> int:
        return len(self.households)


def census_rla(
    model: CensusModel,
    households: Sequence[Household] | CensusData,
    cfg: AuditConfig,
    delta: float = DEFAULT_DELTA,
    surveyed_mask: np.ndarray | None = None,
    census_seats: Mapping[str, int] | None = None,
) -> CensusOutcome:
    """Process the survey sample and return the risk limit it supports.

    Households are drawn without replacement until every surveyed household
    has been seen; each draw updates every pair assertion.  ``cfg.alpha`` is
    ignored (this audit outputs the risk limit instead of testing one);
    ``cfg.seed`` drives the sampling and ``cfg.epsilon`` the guess ordering.
    A pair whose census margin is not positive gets risk limit 1: the census
    contradicts the allocation on that pair by itself.  ``surveyed_mask``
    overrides the households' own surveyed flags, which lets simulations
    re-divide one generated population into many survey samples cheaply.
    ``census_seats`` audits a supplied allocation instead of the one the
    census implies (some nations amend seat allocations by law rather than
    recompute them).
    """
    data = households if isinstance(households, CensusData) else CensusData(model, households)
    n = data.n
    if n == 0:
        raise ValueError("no households")
    if surveyed_mask is None:
        surveyed_mask = data.has_pes
    else:
        surveyed_mask = np.asarray(surveyed_mask, dtype=bool)
        if surveyed_mask.shape != (n,):
            raise ValueError("surveyed mask length does not match household count")
        if not np.all(data.has_pes[surveyed_mask]):
            raise ValueError("surveyed mask selects a household with no survey count")
    if not np.all(data.in_frame[surveyed_mask]):
        raise ValueError("a surveyed household is marked outside the survey frame")

    if census_seats is None:
        seats = apportion(model, data.census_pops)
    else:
        seats = dict(census_seats)
        if sorted(seats) != sorted(model.states) or sum(seats.values()) != model.representatives:
            raise ValueError("census_seats must allocate every representative to a known state")
    state_of = model.states

    pair_risks: dict[tuple[str, str], float] = {}
    tests: list[_PairTest] = []
    for s1 in model.states:
        for s2 in model.states:
            if s1 == s2:
                continue
            if seats[s1] == 0:
                continue  # no seat of s1 to defend; the pair condition is vacuous
            pair = census_pair(model, seats, data.census_pops, n, s1, s2)
            if pair.m <= 0:
                pair_risks[(s1, s2)] = 1.0
                continue
            agree = float(pair.agree_value)
            u0 = float(
                Fraction(1, 2) + (pair.m + Fraction(delta)) / (2 * (pair.z - pair.m))
            )
            tests.append(_PairTest(pair=pair, agree=agree, eta=agree, U=u0))

    # disagreement adjustment per pair: A = agree + (pes - cen) * slope(state)
    slopes = np.zeros((len(tests), len(state_of)))
    for t_i, t in enumerate(tests):
        scale = 2 * (t.pair.z - t.pair.m)
        slopes[t_i, state_of.index(t.pair.s1)] = float(1 / (Fraction(t.pair.d1) * t.pair.c * scale))
        slopes[t_i, state_of.index(t.pair.s2)] = float(-1 / (Fraction(t.pair.d2) * t.pair.c * scale))

    rng = make_rng(cfg.seed)
    surveyed_pool = list(np.flatnonzero(surveyed_mask))
    nonframe_pool = list(np.flatnonzero(~data.in_frame))
    frame_in_h1 = int(data.in_frame.sum())
    h1_count = n
    seen = 0
    while surveyed_pool:
        p = frame_in_h1 / h1_count
        if rng.random() < p:
            pool, from_frame = surveyed_pool, True
        else:
            pool, from_frame = nonframe_pool, False
            if not pool:
                raise ValueError(
                    "sampling frame exhausted: no unaudited household outside the survey frame"
                )
        j = int(rng.integers(len(pool)))
        idx = pool[j]
        pool[j] = pool[-1]
        pool.pop()
        h1_count -= 1
        if from_frame:
            frame_in_h1 -= 1
        seen += 1

        # frame-absent draws carry no survey count and score as agreement
        diff = int(data.pes[idx] - data.cen[idx]) if surveyed_mask[idx] else 0
        s_idx = int(data.state_idx[idx])
        for t_i, t in enumerate(tests):
            if not t.live:
                continue
            A = t.agree if diff == 0 else t.agree + diff * slopes[t_i, s_idx]
            t.update(A, n, seen, cfg.epsilon)

    for t in tests:
        risk = 0.0 if math.isinf(t.T_max) else min(1.0, 1.0 / t.T_max)
        pair_risks[(t.pair.s1, t.pair.s2)] = risk

    state_risks = {
        s: max(
            (r for (a, b), r in pair_risks.items() if s in (a, b)),
            default=0.0,
        )
        for s in model.states
    }
    overall = max(pair_risks.values()) if pair_risks else 0.0
    return CensusOutcome(
        risk_limit=overall,
        pair_risks=pair_risks,
        state_risks=state_risks,
        households_examined=seen,
        total_households=n,
        census_seats=seats,
    )


def generate_census_population(
    district_pops: Mapping[str, int],
    household_dist: Mapping[int, float],
    nonresponse: float,
    rng,
    representatives: int,
    g_max: int = DEFAULT_GMAX,
    divisor_name: str = "dhondt",
) -> tuple[list[Household], CensusModel]:
    """Synthesize per-household census data matching real district totals.

    Each district gets round(population / mean household size) households,
    with sizes drawn from ``household_dist`` (support must lie in
    [0, g_max]).  Non-responding households (probability ``nonresponse``) are
    recorded with zero residents.  Each district's constant is set to the
    real population minus the generated one, so apportioning the generated
    census necessarily reproduces the real apportionment.  Survey counts are
    initialized equal to the census counts; disagreement is injected
    separately.
    """
    if not 0 <= nonresponse < 1:
        raise ValueError("nonresponse must be in [0, 1)")
    sizes = np.array(sorted(household_dist), dtype=np.int64)
    if sizes.min() < 0 or sizes.max() > g_max:
        raise ValueError(f"household size support must lie within [0, {g_max}]")
    probs = np.array([household_dist[int(s)] for s in sizes], dtype=np.float64)
    if probs.min() < 0 or probs.sum() <= 0:
        raise ValueError("household size distribution must be non-negative and non-empty")
    probs = probs / probs.sum()
    mean_size = float((sizes * probs).sum())
    if mean_size <= 0:
        raise ValueError("household size distribution must have positive mean")

    households: list[Household] = []
    constants: dict[str, Fraction] = {}
    for district, pop in district_pops.items():
        count = round(pop / mean_size)
        drawn = rng.choice(sizes, size=count, p=probs)
        silent = rng.random(count) < nonresponse
        recorded = np.where(silent, 0, drawn)
        for i, g in enumerate(recorded):
            households.append(
                Household(
                    id=f"{district}-{i}",
                    state=district,
                    census_count=int(g),
                    pes_count=int(g),
                )
            )
        constants[district] = Fraction(pop - int(recorded.sum()))
    model = CensusModel(
        states=tuple(district_pops),
        representatives=representatives,
        constants=constants,
        g_max=g_max,
        divisor_name=divisor_name,
    )
    return households, model


def inject_survey_disagreement(
    households: Sequence[Household],
    rate: float,
    household_dist: Mapping[int, float],
    rng,
) -> list[Household]:
    """Re-draw the survey count of a random ``rate`` share of households."""
    if not 0 <= rate <= 1:
        raise ValueError("disagreement rate must be in [0, 1]")
    sizes = np.array(sorted(household_dist), dtype=np.int64)
    probs = np.array([household_dist[int(s)] for s in sizes], dtype=np.float64)
    probs = probs / probs.sum()
    hit = rng.random(len(households)) < rate
    redrawn = rng.choice(sizes, size=len(households), p=probs)
    out = []
    for h, flip, g in zip(households, hit, redrawn):
        out.append(replace(h, pes_count=int(g)) if flip else h)
    return out


def load_districts_csv(path) -> tuple[dict[str, int], dict[str, Fraction]]:
    """Read ``district,population,c_constant`` rows."""
    pops: dict[str, int] = {}
    constants: dict[str, Fraction] = {}
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.DictReader(f)
        expected = ["district", "population", "c_constant"]
        if reader.fieldnames is None or [c.strip() for c in reader.fieldnames[:3]] != expected:
            raise ValueError(f"{path}: expected columns {','.join(expected)}")
        for row in reader:
            name = row["district"].strip()
            if name in pops:
                raise ValueError(f"{path}: duplicate district {name!r}")
            pops[name] = int(row["population"])
            constants[name] = Fraction(row["c_constant"].strip() or "0")
    return pops, constants


def load_households_csv(path) -> list[Household]:
    """Read ``household_id,district,census_count,pes_count,surveyed`` rows.

    ``pes_count`` must be blank exactly when ``surveyed`` is 0/false.
    """
    out: list[Household] = []
    truthy = {"1", "true", "yes"}
    falsy = {"0", "false", "no", ""}
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.DictReader(f)
        expected = ["household_id", "district", "census_count", "pes_count", "surveyed"]
        if reader.fieldnames is None or [c.strip() for c in reader.fieldnames[:5]] != expected:
            raise ValueError(f"{path}: expected columns {','.join(expected)}")
        for row in reader:
            flag = row["surveyed"].strip().lower()
            if flag in truthy:
                surveyed = True
            elif flag in falsy:
                surveyed = False
            else:
                raise ValueError(f"{path}: bad surveyed flag {row['surveyed']!r}")
            pes_raw = row["pes_count"].strip()
            if surveyed and not pes_raw:
                raise ValueError(f"{path}: surveyed household {row['household_id']!r} lacks pes_count")
            if not surveyed and pes_raw:
                raise ValueError(
                    f"{path}: unsurveyed household {row['household_id']!r} has a pes_count"
                )
            out.append(
                Household(
                    id=row["household_id"].strip(),
                    state=row["district"].strip(),
                    census_count=int(row["census_count"]),
                    pes_count=int(pes_raw) if pes_raw else None,
                )
            )
    return out
