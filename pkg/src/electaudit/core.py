"""Ballot-level domain types and assorter construction.

An assorter is a non-negative scoring function over ballot types.  An
assertion is the statement that the assorter's mean over all cast ballots
exceeds 1/2; full election outcomes are verified by checking a set of such
assertions.  Assorter values are kept as exact rationals at construction so
that assertion equivalences can be checked without rounding; the sequential
tests elsewhere in this package evaluate them in floating point.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Mapping

INVALID_ID = "__invalid__"

RationalLike = int | Fraction


@dataclass(frozen=True)
class BallotType:
    """One category of vote: a party/candidate, or the invalid ballot."""

    name: str
    is_invalid: bool = False

    def __repr__(self):
        return f"BallotType({self.name!r})" if not self.is_invalid else "BallotType(<invalid>)"


@dataclass(frozen=True)
class Contest:
    """A closed set of ballot types: the parties plus exactly one invalid type.

    The ballot-type set is fixed at construction; tallies and assorters that
    mention an unknown type are rejected rather than silently scored zero.
    """

    ballot_types: tuple[BallotType, ...]

    def __post_init__(self):
        names = [bt.name for bt in self.ballot_types]
        if len(set(names)) != len(names):
            raise ValueError("duplicate ballot type names in contest")
        invalids = [bt for bt in self.ballot_types if bt.is_invalid]
        if len(invalids) != 1:
            raise ValueError("contest must have exactly one invalid ballot type")

    @classmethod
    def from_party_names(cls, parties: Iterable[str]) -> "Contest":
        types = tuple(BallotType(p) for p in parties) + (BallotType(INVALID_ID, is_invalid=True),)
        return cls(types)

    @property
    def invalid(self) -> BallotType:
        for bt in self.ballot_types:
            if bt.is_invalid:
                return bt
        raise AssertionError("unreachable: contest always has an invalid type")

    @property
    def parties(self) -> tuple[BallotType, ...]:
        return tuple(bt for bt in self.ballot_types if not bt.is_invalid)

    def by_name(self, name: str) -> BallotType:
        for bt in self.ballot_types:
            if bt.name == name:
                return bt
        raise KeyError(f"unknown ballot type {name!r} (contest types are closed at construction)")

    def tally(self, counts: Mapping[str, int]) -> "Tally":
        """Build a tally from a name->count map; unknown names are a hard error."""
        full = {bt: 0 for bt in self.ballot_types}
        for name, count in counts.items():
            full[self.by_name(name)] = count
        return Tally(full)


@dataclass(frozen=True)
class Tally:
    """Counts per ballot type.  Every contest type has an entry, possibly 0."""

    counts: Mapping[BallotType, int]

    def __post_init__(self):
        for bt, c in self.counts.items():
            if c < 0:
                raise ValueError(f"negative count for {bt}")

    @property
    def total(self) -> int:
        return sum(self.counts.values())

    def get(self, bt: BallotType) -> int:
        return self.counts.get(bt, 0)

    def combined(self, other: "Tally") -> "Tally":
        keys = set(self.counts) | set(other.counts)
        return Tally({bt: self.get(bt) + other.get(bt) for bt in keys})

    def with_added(self, bt: BallotType, extra: int) -> "Tally":
        merged = dict(self.counts)
        merged[bt] = merged.get(bt, 0) + extra
        return Tally(merged)


@dataclass(frozen=True)
class Assorter:
    """Non-negative per-ballot-type scores with a declared upper bound.

    ``upper`` must dominate every value but may legitimately exceed the max:
    the sequential test stays risk-limiting for any bound above its running
    guess, so callers may declare a looser one.
    """

    values: Mapping[BallotType, Fraction]
    upper: Fraction
    label: str = ""

    def __post_init__(self):
        object.__setattr__(self, "values", {bt: Fraction(v) for bt, v in self.values.items()})
        object.__setattr__(self, "upper", Fraction(self.upper))
        if any(v < 0 for v in self.values.values()):
            raise ValueError(f"assorter {self.label!r} has a negative value")
        if self.upper <= 0 or self.upper < max(self.values.values()):
            raise ValueError(f"assorter {self.label!r} upper bound below a value")

    def value(self, bt: BallotType) -> Fraction:
        try:
            return self.values[bt]
        except KeyError:
            raise KeyError(f"assorter {self.label!r} has no value for {bt}") from None


@dataclass(frozen=True)
class LinearInequality:
    """A tally constraint sum_c beta_c * v(c) > d over n total ballots."""

    coefficients: Mapping[BallotType, Fraction]
    rhs: Fraction
    n: int
    label: str = ""

    def __post_init__(self):
        object.__setattr__(
            self, "coefficients", {bt: Fraction(b) for bt, b in self.coefficients.items()}
        )
        object.__setattr__(self, "rhs", Fraction(self.rhs))
        if self.n <= 0:
            raise ValueError("ballot count n must be positive")
        if all(b == 0 for b in self.coefficients.values()):
            raise ValueError("inequality needs at least one nonzero coefficient")

    def holds(self, tally: Tally) -> bool:
        lhs = sum(self.coefficients[bt] * tally.get(bt) for bt in self.coefficients)
        return lhs > self.rhs


@dataclass(frozen=True)
class BatchRecord:
    """A batch of ballots: reported tally, true tally and physical size.

    Lives here (rather than with the batch audits) because both the
    batch-comparison audit and the batch-polling baseline consume it.
    """

    id: str
    reported: Tally
    truth: Tally
    size: int

    def __post_init__(self):
        if self.size <= 0:
            raise ValueError(f"batch {self.id!r} has non-positive size")


def assorter_mean(assorter: Assorter, tally: Tally) -> Fraction:
    """Exact mean of the assorter over the ballots counted in ``tally``."""
    total = tally.total
    if total == 0:
        raise ValueError("empty contest: cannot take an assorter mean over zero ballots")
    acc = Fraction(0)
    for bt, count in tally.counts.items():
        if count:
            acc += assorter.value(bt) * count
    return acc / total


def inequality_to_assorter(q: LinearInequality) -> Assorter:
    """Convert a linear tally inequality into an equivalent assorter.

    With z the smallest coefficient, each ballot type scores
    -(beta_b - z) / (2 (z - d/n)), which is non-negative and has mean > 1/2
    over a tally of n ballots exactly when the inequality holds.  Requires
    z - d/n < 0; otherwise the inequality is decided for every tally and has
    no useful assorter form.
    """
    z = min(q.coefficients.values())
    denom = z - q.rhs / q.n
    if denom >= 0:
        raise ValueError(
            f"trivial inequality {q.label!r}: it is either always false or always true"
        )
    values = {bt: -(beta - z) / (2 * denom) for bt, beta in q.coefficients.items()}
    if max(values.values()) == 0:
        # all coefficients equal: the inequality is always false here
        raise ValueError(
            f"trivial inequality {q.label!r}: it is either always false or always true"
        )
    return Assorter(values=values, upper=max(values.values()), label=q.label)


def plurality_assorter(winner: BallotType, loser: BallotType, contest: Contest) -> Assorter:
    """Assorter whose mean exceeds 1/2 iff ``winner`` out-polls ``loser``.

    Scores 1 for the winner, 0 for the loser, 1/2 for every other type
    including invalid ballots.
    """
    if winner == loser:
        raise ValueError("winner and loser must differ")
    values = {}
    for bt in contest.ballot_types:
        if bt == winner:
            values[bt] = Fraction(1)
        elif bt == loser:
            values[bt] = Fraction(0)
        else:
            values[bt] = Fraction(1, 2)
    return Assorter(values=values, upper=Fraction(1), label=f"plurality:{winner.name}>{loser.name}")


def load_contest_csv(path) -> tuple[Contest, Tally]:
    """Read a ``party,reported_votes`` CSV; the ``__invalid__`` row is required."""
    rows: dict[str, int] = {}
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames is None or [c.strip() for c in reader.fieldnames[:2]] != [
            "party",
            "reported_votes",
        ]:
            raise ValueError(f"{path}: expected columns party,reported_votes")
        for row in reader:
            name = row["party"].strip()
            if name in rows:
                raise ValueError(f"{path}: duplicate party row {name!r}")
            rows[name] = int(row["reported_votes"])
    if INVALID_ID not in rows:
        raise ValueError(f"{path}: missing reserved row {INVALID_ID}")
    contest = Contest.from_party_names(n for n in rows if n != INVALID_ID)
    return contest, contest.tally(rows)
