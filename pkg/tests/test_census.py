import math
from fractions import Fraction
from itertools import product

import numpy as np
import pytest

from electaudit.alpha import AuditConfig
from electaudit.apportionment import AllocationTieError
from electaudit.census import (
    CensusData,
    CensusModel,
    Household,
    apportion,
    census_assorter_value,
    census_pair,
    census_rla,
    comparison_assorter_value,
    generate_census_population,
    inject_survey_disagreement,
    load_districts_csv,
    load_households_csv,
    sample_household,
)
from electaudit.randomness import make_rng

HALF = Fraction(1, 2)


def test_apportion_dhondt_reduction():
    m = CensusModel(states=("X", "Y", "Z"), representatives=5, constants={})
    assert apportion(m, {"X": 100, "Y": 60, "Z": 40}) == {"X": 3, "Y": 1, "Z": 1}


def test_apportion_single_state():
    m = CensusModel(states=("X",), representatives=9, constants={})
    assert apportion(m, {"X": 1234}) == {"X": 9}


def test_apportion_tie_detected():
    m = CensusModel(states=("X", "Y"), representatives=3, constants={})
    with pytest.raises(AllocationTieError, match="apportionment tie"):
        apportion(m, {"X": 10, "Y": 10})


def test_apportion_constant_shifts_rows():
    m = CensusModel(states=("X", "Y"), representatives=3, constants={"Y": 50})
    assert apportion(m, {"X": 100, "Y": 60}) == {"X": 1, "Y": 2}
    m0 = CensusModel(states=("X", "Y"), representatives=3, constants={})
    assert apportion(m0, {"X": 100, "Y": 60}) == {"X": 2, "Y": 1}


def _household_fixture():
    counts_x = [3, 2, 2, 1]
    counts_y = [1, 1, 2]
    hh = [Household(f"x{i}", "X", c, c) for i, c in enumerate(counts_x)]
    hh += [Household(f"y{i}", "Y", c, c) for i, c in enumerate(counts_y)]
    model = CensusModel(states=("X", "Y"), representatives=3, constants={}, g_max=3)
    return model, hh


def test_pair_constants_positive():
    model, hh = _household_fixture()
    data = CensusData(model, hh)
    seats = apportion(model, data.census_pops)
    for s1, s2 in (("X", "Y"), ("Y", "X")):
        pair = census_pair(model, seats, data.census_pops, data.n, s1, s2)
        assert pair.c > 0
        assert pair.z > pair.m > 0


def test_census_assorter_boundary_values():
    model, hh = _household_fixture()
    data = CensusData(model, hh)
    seats = apportion(model, data.census_pops)
    pair = census_pair(model, seats, data.census_pops, data.n, "X", "Y")
    # maximal-occupancy household in s2 zeroes the second term entirely
    h_max = Household("q", "Y", 3, 3)
    assert census_assorter_value(pair, h_max, use_pes=True) == 0
    with pytest.raises(ValueError, match="no survey count"):
        census_assorter_value(pair, Household("r", "Y", 2, None), use_pes=True)


def test_census_assorter_constant_off_pair():
    model3 = CensusModel(states=("X", "Y", "W"), representatives=4, constants={}, g_max=3)
    hh = [Household(f"x{i}", "X", c, c) for i, c in enumerate([3, 2, 2, 1])]
    hh += [Household(f"y{i}", "Y", c, c) for i, c in enumerate([1, 1, 2])]
    hh += [Household(f"w{i}", "W", c, c) for i, c in enumerate([3, 3, 1])]
    data = CensusData(model3, hh)
    seats = apportion(model3, data.census_pops)
    pair = census_pair(model3, seats, data.census_pops, data.n, "X", "Y")
    expected = Fraction(model3.g_max, pair.d2) / pair.c
    for g in range(4):
        h = Household("w", "W", g, g)
        assert census_assorter_value(pair, h, use_pes=True) == expected
        assert census_assorter_value(pair, h, use_pes=False) == expected


def _mean_pes(pair, households):
    return sum(census_assorter_value(pair, h, use_pes=True) for h in households) / len(households)


def test_household_assorter_matches_inequality_exhaustively():
    """mean of the survey assorter > 1/2 iff the pairwise seat inequality holds.

    The assorter is affine in the per-state survey sums, so sweeping every
    reachable (sum_1, sum_2) combination covers every possible mean; 4+4
    households with counts up to 3.
    """
    model, base = _household_fixture()
    base = base + [Household("y3", "Y", 1, 1)]
    data = CensusData(model, base)
    seats = apportion(model, data.census_pops)
    c1, c2 = model.constants["X"], model.constants["Y"]
    for s1, s2 in (("X", "Y"), ("Y", "X")):
        pair = census_pair(model, seats, data.census_pops, data.n, s1, s2)
        d1, d2 = pair.d1, pair.d2
        xs = [h for h in base if h.state == "X"]
        ys = [h for h in base if h.state == "Y"]
        for sum_x, sum_y in product(range(0, 13), range(0, 13)):
            pes_x = _counts_with_sum(sum_x, len(xs), model.g_max)
            pes_y = _counts_with_sum(sum_y, len(ys), model.g_max)
            if pes_x is None or pes_y is None:
                continue
            hh = [
                Household(h.id, h.state, h.census_count, p)
                for h, p in zip(xs + ys, pes_x + pes_y)
            ]
            mean = _mean_pes(pair, hh)
            sums = {"X": sum_x, "Y": sum_y}
            lhs = Fraction(sums[s1] + (c1 if s1 == "X" else c2), d1)
            rhs = Fraction(sums[s2] + (c1 if s2 == "X" else c2), d2)
            assert (mean > HALF) == (lhs > rhs), (s1, s2, sum_x, sum_y)


def _counts_with_sum(total, slots, g_max):
    if total > slots * g_max:
        return None
    counts = []
    left = total
    for _ in range(slots):
        take = min(left, g_max)
        counts.append(take)
        left -= take
    return counts


def test_assorter_mean_depends_only_on_state_sums():
    model, base = _household_fixture()
    data = CensusData(model, base)
    seats = apportion(model, data.census_pops)
    pair = census_pair(model, seats, data.census_pops, data.n, "X", "Y")
    rng = make_rng(8)
    reference = None
    for _ in range(40):
        # random survey counts with fixed per-state sums 5 and 3
        pes_x = _random_counts(rng, 5, 4, model.g_max)
        pes_y = _random_counts(rng, 3, 3, model.g_max)
        hh = [
            Household(h.id, h.state, h.census_count, p)
            for h, p in zip(base, pes_x + pes_y)
        ]
        mean = _mean_pes(pair, hh)
        if reference is None:
            reference = mean
        assert mean == reference


def _random_counts(rng, total, slots, g_max):
    while True:
        counts = [int(rng.integers(0, g_max + 1)) for _ in range(slots - 1)]
        left = total - sum(counts)
        if 0 <= left <= g_max:
            return counts + [left]


def test_comparison_assorter_never_negative():
    """Exhaustive sweep over census/survey count pairs in every pair role."""
    model, base = _household_fixture()
    data = CensusData(model, base)
    seats = apportion(model, data.census_pops)
    g = model.g_max
    for s1, s2 in (("X", "Y"), ("Y", "X")):
        pair = census_pair(model, seats, data.census_pops, data.n, s1, s2)
        for state in ("X", "Y"):
            for cen, pes in product(range(g + 1), repeat=2):
                h = Household("h", state, cen, pes)
                assert comparison_assorter_value(pair, h) >= 0, (s1, s2, state, cen, pes)


def test_comparison_assorter_agreement_constant():
    model, base = _household_fixture()
    data = CensusData(model, base)
    seats = apportion(model, data.census_pops)
    pair = census_pair(model, seats, data.census_pops, data.n, "X", "Y")
    values = {
        comparison_assorter_value(pair, Household("h", st, g, g))
        for st in ("X", "Y")
        for g in range(model.g_max + 1)
    }
    assert values == {pair.agree_value}


def test_comparison_mean_crosses_half_with_survey_mean():
    """mean A > 1/2 iff mean a_pes > 1/2, swept over survey sums."""
    model, base = _household_fixture()
    data = CensusData(model, base)
    seats = apportion(model, data.census_pops)
    pair = census_pair(model, seats, data.census_pops, data.n, "X", "Y")
    xs = [h for h in base if h.state == "X"]
    ys = [h for h in base if h.state == "Y"]
    for sum_x, sum_y in product(range(0, 13), range(0, 10)):
        pes_x = _counts_with_sum(sum_x, len(xs), model.g_max)
        pes_y = _counts_with_sum(sum_y, len(ys), model.g_max)
        if pes_x is None or pes_y is None:
            continue
        hh = [
            Household(h.id, h.state, h.census_count, p)
            for h, p in zip(xs + ys, pes_x + pes_y)
        ]
        mean_a = _mean_pes(pair, hh)
        mean_A = sum(comparison_assorter_value(pair, h) for h in hh) / len(hh)
        assert (mean_A > HALF) == (mean_a > HALF), (sum_x, sum_y)


def test_allocation_equivalence_theorem_small():
    """Apportionments match iff every ordered-pair inequality holds.

    Both sides depend on the survey only through per-state sums, so the sweep
    over sums is exhaustive for 2 states, 7 households, counts up to 3.
    """
    model, base = _household_fixture()
    data = CensusData(model, base)
    census_seats = apportion(model, data.census_pops)
    pairs = {}
    for s1, s2 in (("X", "Y"), ("Y", "X")):
        if census_seats[s1] == 0:
            continue
        pairs[(s1, s2)] = census_pair(model, census_seats, data.census_pops, data.n, s1, s2)
    max_x, max_y = 4 * model.g_max, 3 * model.g_max
    checked = 0
    for sum_x, sum_y in product(range(max_x + 1), range(max_y + 1)):
        try:
            pes_seats = apportion(model, {"X": sum_x, "Y": sum_y})
        except (AllocationTieError, ValueError):
            continue
        holds = all(
            Fraction(sum_x if s1 == "X" else sum_y, p.d1)
            > Fraction(sum_x if s2 == "X" else sum_y, p.d2)
            for (s1, s2), p in pairs.items()
        )
        assert holds == (pes_seats == census_seats), (sum_x, sum_y)
        checked += 1
    assert checked > 50


def test_sample_household_uniform_over_remaining():
    """Composed with a random survey, the draw is uniform over H1."""
    frame = [Household(f"f{i}", "X", 1, 1) for i in range(6)]
    outside = [Household(f"o{i}", "X", 1, None, in_pes_frame=False) for i in range(4)]
    h1 = frame + outside
    rng = make_rng(55)
    counts = {h.id: 0 for h in h1}
    draws = 100_000
    for _ in range(draws):
        surveyed = [frame[i] for i in rng.choice(6, size=3, replace=False)]
        pick = sample_household(h1, h1, frame, surveyed, rng)
        counts[pick.id] += 1
    expect = draws / len(h1)
    sigma = math.sqrt(draws * (1 / len(h1)) * (1 - 1 / len(h1)))
    for hid, c in counts.items():
        assert abs(c - expect) <= 4 * sigma, (hid, c, expect)


def test_sample_household_all_in_frame_draws_surveyed():
    hh = [Household(f"h{i}", "X", 1, 1) for i in range(8)]
    surveyed = hh[:3]
    rng = make_rng(2)
    for _ in range(200):
        assert sample_household(hh, hh, hh, surveyed, rng).id in {h.id for h in surveyed}


def test_sample_household_single_candidate():
    hh = [Household("only", "X", 1, 1)]
    rng = make_rng(3)
    assert sample_household(hh, hh, hh, hh, rng).id == "only"


def test_sample_household_exhausted_branch_errors():
    # the only household is in the frame but unsurveyed: the frame branch is
    # chosen with probability 1 yet has nothing surveyed to offer
    lone = [Household("h", "X", 1, None)]
    rng = make_rng(4)
    with pytest.raises(ValueError, match="sampling frame exhausted|no household"):
        sample_household(lone, lone, lone, [], rng)


def test_census_rla_no_survey_gives_risk_one():
    model, base = _household_fixture()
    silent = [Household(h.id, h.state, h.census_count, None) for h in base]
    out = census_rla(model, silent, AuditConfig(alpha=1.0, seed=0))
    assert out.risk_limit == 1.0
    assert all(r == 1.0 for r in out.pair_risks.values())
    assert out.households_examined == 0


def test_census_rla_agreement_improves_with_more_survey():
    model, base = _household_fixture()
    big = [
        Household(f"X{i}", "X", 2, 2) for i in range(300)
    ] + [Household(f"Y{i}", "Y", 1, 1) for i in range(150)]
    data = CensusData(model, big)
    risks = []
    for k in (50, 150, 300):
        mask = np.zeros(data.n, dtype=bool)
        mask[make_rng((k, 7)).choice(data.n, size=k, replace=False)] = True
        out = census_rla(model, data, AuditConfig(alpha=1.0, seed=1), surveyed_mask=mask)
        risks.append(out.risk_limit)
    assert risks[0] >= risks[1] >= risks[2]


def test_census_rla_supplied_allocation_with_nonpositive_margin():
    model, base = _household_fixture()
    data = CensusData(model, base)
    honest = apportion(model, data.census_pops)
    assert honest == {"X": 2, "Y": 1}
    skewed = {"X": 1, "Y": 2}  # census numbers refute this allocation outright
    out = census_rla(model, data, AuditConfig(alpha=1.0, seed=0), census_seats=skewed)
    assert out.risk_limit == 1.0
    assert out.pair_risks[("Y", "X")] == 1.0


def test_census_rla_state_risks_cover_pairs():
    model, base = _household_fixture()
    out = census_rla(model, base, AuditConfig(alpha=1.0, seed=0))
    for s in model.states:
        relevant = [r for (a, b), r in out.pair_risks.items() if s in (a, b)]
        assert out.state_risks[s] == max(relevant)


def test_generation_degenerate_distribution():
    rng = make_rng(10)
    hh, model = generate_census_population(
        {"X": 1000, "Y": 600}, {2: 1.0}, nonresponse=0.0, rng=rng, representatives=3, g_max=5
    )
    assert all(h.census_count == 2 and h.pes_count == 2 for h in hh)
    assert len([h for h in hh if h.state == "X"]) == 500
    data = CensusData(model, hh)
    assert apportion(model, data.census_pops) == apportion(model, {"X": 1000, "Y": 600})


def test_generation_constant_fixes_apportionment():
    rng = make_rng(11)
    pops = {"X": 5000, "Y": 3100, "Z": 900}
    dist = {1: 0.3, 2: 0.4, 3: 0.3}
    hh, model = generate_census_population(pops, dist, 0.01, rng, representatives=5)
    data = CensusData(model, hh)
    generated = apportion(model, data.census_pops)
    real = apportion(model, pops)
    assert generated == real


def test_generation_nonresponse_rate():
    rng = make_rng(12)
    hh, _ = generate_census_population(
        {"X": 40000}, {2: 1.0}, nonresponse=0.1, rng=rng, representatives=1
    )
    zeros = sum(1 for h in hh if h.census_count == 0)
    n = len(hh)
    assert abs(zeros - 0.1 * n) <= 4 * math.sqrt(n * 0.1 * 0.9)


def test_inject_disagreement_rate():
    rng = make_rng(13)
    hh, _ = generate_census_population(
        {"X": 30000}, {1: 0.5, 2: 0.5}, nonresponse=0.0, rng=rng, representatives=1
    )
    bumped = inject_survey_disagreement(hh, 0.25, {1: 0.5, 2: 0.5}, rng)
    changed = sum(1 for a, b in zip(hh, bumped) if a.pes_count != b.pes_count)
    redrawn_same = 0.5  # a redraw matches the old count half the time here
    n = len(hh)
    expect = 0.25 * n * redrawn_same
    assert abs(changed - expect) <= 5 * math.sqrt(n)


def test_median_risk_monotone_in_sample_size():
    """Across a sample-size grid, the median risk limit never goes back up.

    Checked with 5% survey disagreement, eleven paired trials per fraction.
    """
    pops = {"X": 41000, "Y": 23000, "Z": 17000}
    dist = {1: 0.4, 2: 0.4, 3: 0.2}
    fractions = (0.02, 0.05, 0.1, 0.2)
    medians = []
    risks = {f: [] for f in fractions}
    for trial in range(11):
        data_rng = make_rng((trial, 0))
        hh, model = generate_census_population(pops, dist, 0.01, data_rng, representatives=8)
        hh = inject_survey_disagreement(hh, 0.05, dist, data_rng)
        data = CensusData(model, hh)
        for f in fractions:
            k = round(f * data.n)
            mask = np.zeros(data.n, dtype=bool)
            mask[data_rng.choice(data.n, size=k, replace=False)] = True
            out = census_rla(model, data, AuditConfig(alpha=1.0, seed=(trial, 1)), surveyed_mask=mask)
            risks[f].append(out.risk_limit)
    import statistics

    medians = [statistics.median(risks[f]) for f in fractions]
    assert all(a >= b for a, b in zip(medians, medians[1:])), medians


def test_counts_above_gmax_rejected():
    model = CensusModel(states=("X",), representatives=1, constants={}, g_max=3)
    with pytest.raises(ValueError, match="outside"):
        CensusData(model, [Household("h", "X", 4, None)])


def test_district_and_household_csv(tmp_path):
    d = tmp_path / "districts.csv"
    d.write_text("district,population,c_constant\nX,100,0\nY,60,5\n")
    pops, constants = load_districts_csv(d)
    assert pops == {"X": 100, "Y": 60}
    assert constants["Y"] == 5
    h = tmp_path / "households.csv"
    h.write_text(
        "household_id,district,census_count,pes_count,surveyed\n"
        "a,X,2,2,1\n"
        "b,X,3,,0\n"
    )
    hh = load_households_csv(h)
    assert hh[0].surveyed and hh[0].pes_count == 2
    assert not hh[1].surveyed and hh[1].pes_count is None
    bad = tmp_path / "bad.csv"
    bad.write_text(
        "household_id,district,census_count,pes_count,surveyed\n"
        "a,X,2,,1\n"
    )
    with pytest.raises(ValueError, match="lacks pes_count"):
        load_households_csv(bad)
