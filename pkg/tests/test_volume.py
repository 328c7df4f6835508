from fractions import Fraction

import pytest
from hypothesis import given, settings, strategies as st

from infinimix.maps import make_boole, make_random_walk_map
from infinimix.observables import make_alternating, make_cos, make_dyadic_flip, make_halfcell, make_sign
from infinimix.volume import (CONVERGED, NOT_UNIFORM, ExhaustiveFamily, Probe, Window,
                              avg_invariance_check, avol_check, estimate_avg, pullback, window_average)

LADDER = (10, 100, 1000, 10000)


def test_probe_parsing():
    assert Probe.parse("0").at(7) == 0
    assert Probe.parse("-M").at(7) == -7
    assert Probe.parse("2.5M").at(4) == 10


def test_family_always_contains_centered_windows():
    fam = ExhaustiveFamily("translated", LADDER, ("M",))
    assert Window(-10, 10) in fam.members(10)
    assert len(fam.members(10)) == 2


@pytest.mark.parametrize("kind", ["symmetric", "translated", "cell_aligned"])
def test_halfcell_average_is_one_half(kind):
    rep = estimate_avg(make_halfcell(1), ExhaustiveFamily(kind, LADDER, ("0", "M", "-M", "2.5M")))
    assert rep.verdict == CONVERGED
    assert rep.estimate == pytest.approx(0.5, abs=1e-9)


def test_sign_on_symmetric_windows_converges():
    # odd symmetry makes every centred window average vanish
    rep = estimate_avg(make_sign(), ExhaustiveFamily("symmetric", LADDER))
    assert rep.verdict == CONVERGED and rep.estimate == 0


def test_sign_translated_is_not_uniform():
    rep = estimate_avg(make_sign(), ExhaustiveFamily("translated", LADDER, ("0", "M", "-M")))
    assert rep.verdict == NOT_UNIFORM
    assert min(rep.defects) >= 0.9


def test_dyadic_flip_is_not_converged():
    rep = estimate_avg(make_dyadic_flip(), ExhaustiveFamily("cell_aligned", (16, 64, 256, 1024, 4096),
                                                            ("0", "M", "-M")))
    assert rep.verdict != CONVERGED


def test_short_ladder_is_rejected():
    with pytest.raises(ValueError):
        estimate_avg(make_cos(1), ExhaustiveFamily("symmetric", (10, 100)))


@given(st.floats(-50, 50), st.floats(0.5, 40))
@settings(max_examples=30, deadline=None)
def test_alternating_window_mean_is_small(c, w):
    assert abs(window_average(make_alternating(), Window(c - w, c + w))) <= 1 / (2 * w) + 1e-9


def test_average_is_invariant_under_random_walk():
    fam = ExhaustiveFamily("symmetric", LADDER)
    gaps = avg_invariance_check(make_halfcell(1), fam, make_random_walk_map(-1, 2), [0, 1, 2])
    assert max(gaps) <= 1e-6


def test_pullback_of_cell_is_exact():
    T = make_random_walk_map(-1, 2)
    pre = pullback(T, [(Fraction(0), Fraction(1))], 1)
    # T(x) = 3x - 1 on [0, 1) with the cell shift: [0, 1) pulls back to [0, 1) in total length 1
    assert sum(b - a for a, b in pre) == 1
    for a, b in pre:
        assert isinstance(a, Fraction) and isinstance(b, Fraction)


def test_avol_ratio_scales_like_one_over_m():
    series = avol_check(make_random_walk_map(-1, 2), ExhaustiveFamily("symmetric", LADDER), 1)
    assert all(r * M == series.ratios[0] * LADDER[0] for r, M in zip(series.ratios, LADDER))
    assert series.to_csv().startswith("M,ratio\n")


def test_avol_for_boole_decreases():
    series = avol_check(make_boole(), ExhaustiveFamily("symmetric", LADDER), 1)
    r = series.ratios
    assert all(b < a for a, b in zip(r, r[1:]))
    assert r[-1] < 1e-3

