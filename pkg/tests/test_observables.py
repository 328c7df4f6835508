import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, strategies as st

from infinimix.observables import (LATTICE_STEP, ODD, LatticeMeasure, cesaro_mean, compose, integrate_global,
                                   make_alternating, make_cell_pattern, make_cos, make_dipole, make_dyadic_flip,
                                   make_gauss, make_halfcell, make_indicator_density, make_one, make_sign,
                                   make_triangle, project_to_lattice, restrict)
from infinimix.maps import make_boole

masses = st.dictionaries(st.integers(-20, 20), st.integers(-50, 50), min_size=1, max_size=8)


@given(a=masses, b=masses)
def test_lattice_measure_addition_is_cellwise(a, b):
    A, B = LatticeMeasure.from_masses(a), LatticeMeasure.from_masses(b)
    S = A + B
    for j in set(a) | set(b):
        assert S.mass(j) == a.get(j, 0) + b.get(j, 0)
    assert (A - A).l1() == 0


@given(a=masses)
def test_lattice_measure_json_roundtrip(a):
    A = LatticeMeasure.from_masses(a)
    assert LatticeMeasure.from_json(A.to_json()) == A


@given(a=masses)
def test_lattice_measure_is_normalised(a):
    A = LatticeMeasure.from_masses({j: Fraction(v, 6) for j, v in a.items()})
    if A.numerators:
        assert A.numerators[0] != 0 and A.numerators[-1] != 0
        assert math.gcd(A.denominator, *A.numerators) == 1
    assert A.total() == Fraction(sum(a.values()), 6)


def test_lattice_pair_is_exact():
    m = LatticeMeasure.from_masses({0: Fraction(1, 3), 1: Fraction(2, 3)})
    F = make_cell_pattern([1, Fraction(1, 2)])
    assert m.pair(F.cell_value) == Fraction(1, 3) + Fraction(1, 3)


def test_sign_tags():
    s = make_sign()
    assert ODD in s.tags and LATTICE_STEP in s.tags
    assert s(np.array([-2.0, 0.0, 3.0])).tolist() == [-1, 0, 1]


@pytest.mark.parametrize("j", [1, 2, 5])
def test_cos_has_zero_period_integral(j):
    F = make_cos(j)
    assert F.period == j
    assert integrate_global(F, 0, j)[0] == pytest.approx(0, abs=1e-12)


@pytest.mark.parametrize("a,b", [(0, 1), (-3, 2), (0.25, 0.75)])
def test_indicator_integrals(a, b):
    g = make_indicator_density(a, b)
    assert g.integral == pytest.approx(b - a)
    d = make_indicator_density(a, b, normalize=True)
    assert d.integral == pytest.approx(1)


def test_lattice_indicator_carries_lattice_form():
    assert make_indicator_density(2, 4).lattice == LatticeMeasure.from_masses({2: 1, 3: 1})
    assert make_indicator_density(0.5, 1).lattice is None


def test_dipole_is_mean_zero():
    d = make_dipole(0, 1)
    assert d.integral == 0
    assert d.lattice.total() == 0
    assert d.l1 == 2


@pytest.mark.parametrize("g", [make_gauss(0.3, 0.2), make_triangle(-1, 2)])
def test_smooth_densities_integrate_to_one(g):
    assert g.integral == pytest.approx(1, abs=1e-9)
    x = np.linspace(g.lo, g.hi, 10_001)
    y = g.func(x)
    assert float(np.sum(0.5 * (y[1:] + y[:-1]) * np.diff(x))) == pytest.approx(1, abs=1e-4)


def test_positive_negative_parts():
    d = make_dipole(0, 3)
    assert d.positive_part().integral == pytest.approx(1)
    assert d.negative_part().integral == pytest.approx(1)


def test_restrict_sign_to_integers_is_lattice():
    r = restrict(make_sign(), -2, 3)
    assert r.lattice == LatticeMeasure.from_masses({-2: -1, -1: -1, 0: 1, 1: 1, 2: 1})


@pytest.mark.parametrize("F,expected", [
    (make_halfcell(1), 0.5),
    (make_cell_pattern([1, 0, 0, 1, Fraction(1, 2)]), 0.5),
    (make_alternating(), 0.0),
    (make_one(), 1.0),
])
def test_cesaro_mean(F, expected):
    value, defect = cesaro_mean(F, [0, 10, -10, 100], 1000)
    assert value == pytest.approx(expected, abs=1e-3)
    assert defect <= 2e-3


def test_dyadic_flip_has_no_cesaro_mean():
    _, defect = cesaro_mean(make_dyadic_flip(), [0, 1000, -1000, 5000], 4096)
    assert defect > 0.1


def test_projection_of_halfcell():
    P = project_to_lattice(make_halfcell(1))
    assert float(P.cell_value(3)) == pytest.approx(0.5)


def test_compose_with_boole():
    T = make_boole()
    G = compose(make_sign(), T, 2)
    x = np.array([0.5, 2.0, -3.0])
    expected = np.sign(T.step_array(T.step_array(x)))
    np.testing.assert_array_equal(G(x), expected)


@given(st.floats(-100, 100), st.floats(0.01, 50))
def test_integrate_global_sign_closed_form(c, w):
    a, b = c - w, c + w
    exact = max(b, 0) - max(a, 0) - (min(b, 0) - min(a, 0))
    v, err = integrate_global(make_sign(), a, b)
    assert abs(v - exact) <= err + 1e-12 * (1 + abs(c) + w)
