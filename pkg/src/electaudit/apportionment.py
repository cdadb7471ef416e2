"""Highest-averages seat apportionment with exact arithmetic.

Build the quotient table value(u)/d(r) for r = 1..seats, color the ``seats``
largest cells, and hand each unit its colored-cell count.  Divisors are
evaluated through ``Fraction`` so comparisons are exact: two cells compare
equal only when their quotients are genuinely equal, never because floats
collided.  A genuine tie at the boundary that spans more than one unit makes
the allocation ambiguous and raises; deciding such ties is a matter for
election law, not for this code.
"""

from __future__ import annotations

import math
from fractions import Fraction
from typing import Callable, Mapping

Divisor = Callable[[int], int]


class AllocationTieError(ValueError):
    """The boundary cells tie across units; no unique allocation exists."""


def dhondt(r: int) -> int:
    return r


def sainte_lague(r: int) -> int:
    return 2 * r - 1


DIVISORS: dict[str, Divisor] = {"dhondt": dhondt, "sainte_lague": sainte_lague}


def highest_averages(
    values: Mapping[str, Fraction], seats: int, divisor: Divisor = dhondt, what: str = "allocation"
) -> dict[str, int]:
    """Allocate ``seats`` among units with row values ``values[u] / divisor(r)``.

    ``values`` must be positive.  Raises :class:`AllocationTieError` (message
    prefixed with ``what``) when the boundary of the colored region ties
    across different units.
    """
    if seats <= 0:
        raise ValueError("seats must be positive")
    if not values:
        raise ValueError("no units to allocate seats to")
    units = list(values)
    values = {
        u: int(v) if isinstance(v, Fraction) and v.denominator == 1 else v
        for u, v in values.items()
    }
    for u in units:
        if values[u] <= 0:
            raise ValueError(f"unit {u!r} has non-positive row value {values[u]}")
    divisors = []
    for r in range(1, seats + 1):
        d = divisor(r)
        if divisors and d <= divisors[-1]:
            raise ValueError("divisor function must be strictly increasing")
        divisors.append(d)

    if all(isinstance(values[u], int) for u in units) and all(
        isinstance(d, int) for d in divisors
    ):
        # integer inputs: quotients scale to exact integers over the divisor lcm
        scale = math.lcm(*divisors)
        cells = [
            (values[u] * (scale // d), u) for u in units for d in divisors
        ]
    else:
        cells = [
            (Fraction(values[u]) / d, u) for u in units for d in divisors
        ]
    cells.sort(key=lambda c: c[0], reverse=True)
    threshold = cells[seats - 1][0]

    above = [u for q, u in cells if q > threshold]
    at = [u for q, u in cells if q == threshold]
    slots = seats - len(above)
    if len(at) > slots and len(set(at)) > 1:
        raise AllocationTieError(
            f"{what} tie: {len(at)} cells share the boundary quotient {threshold} "
            f"but only {slots} seats remain"
        )
    alloc = {u: 0 for u in units}
    for u in above:
        alloc[u] += 1
    if len(at) > slots:
        alloc[at[0]] += slots  # all boundary cells belong to one unit
    else:
        for u in at:
            alloc[u] += 1
    return alloc


def brute_force_highest_averages(
    values: Mapping[str, Fraction], seats: int, divisor: Divisor = dhondt
) -> dict[str, int] | None:
    """Independent oracle: score every composition of seats, keep the best.

    The greedy coloring maximizes the summed quotients of colored cells, so
    the optimal composition must match it.  Returns None when two different
    compositions achieve the maximum (an allocation tie).  Exponential in the
    unit count; only for small test instances.
    """
    units = list(values)
    values = {
        u: int(v) if isinstance(v, Fraction) and v.denominator == 1 else v
        for u, v in values.items()
    }
    divisors = [divisor(r) for r in range(1, seats + 1)]
    exact_ints = all(isinstance(values[u], int) for u in units) and all(
        isinstance(d, int) for d in divisors
    )
    scale = math.lcm(*divisors) if exact_ints else None
    prefix = {}
    for u in units:
        acc = [0 if exact_ints else Fraction(0)]
        for d in divisors:
            step = values[u] * (scale // d) if exact_ints else Fraction(values[u]) / d
            acc.append(acc[-1] + step)
        prefix[u] = acc

    best_score = None
    best = None
    tie = False

    def compositions(k: int, remaining: int):
        if k == len(units) - 1:
            yield (remaining,)
            return
        for take in range(remaining + 1):
            for rest in compositions(k + 1, remaining - take):
                yield (take,) + rest

    for comp in compositions(0, seats):
        score = sum(prefix[u][s] for u, s in zip(units, comp))
        if best_score is None or score > best_score:
            best_score, best, tie = score, comp, False
        elif score == best_score:
            tie = True
    if tie:
        return None
    return dict(zip(units, best))
