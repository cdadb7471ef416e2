"""Shared test utilities: tally enumeration and small brute-force oracles."""

from __future__ import annotations

from fractions import Fraction
from itertools import combinations_with_replacement

from electaudit.core import Assorter, Contest, Tally, assorter_mean


def compositions(total: int, parts: int):
    """All tuples of ``parts`` non-negative ints summing to ``total``."""
    if parts == 1:
        yield (total,)
        return
    for first in range(total + 1):
        for rest in compositions(total - first, parts - 1):
            yield (first,) + rest


def all_tallies(contest: Contest, total: int):
    types = contest.ballot_types
    for combo in compositions(total, len(types)):
        yield Tally(dict(zip(types, combo)))


def vote_multisets(max_votes: int, parties: int):
    """Non-increasing vote vectors, one representative per label permutation."""
    return combinations_with_replacement(range(max_votes, -1, -1), parties)


def brute_force_margin(assorter: Assorter, truth: Tally) -> int:
    """Minimal relabel count by exhaustive search over same-size tallies."""
    half = Fraction(1, 2)
    if assorter_mean(assorter, truth) <= half:
        return 0
    types = list(truth.counts)
    n = truth.total
    best = None
    for combo in compositions(n, len(types)):
        cand = Tally(dict(zip(types, combo)))
        if assorter_mean(assorter, cand) <= half:
            dist = sum(abs(cand.get(bt) - truth.get(bt)) for bt in types) // 2
            if best is None or dist < best:
                best = dist
    assert best is not None, "no falsifying tally exists"
    return best
