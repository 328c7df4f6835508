import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from infinimix.errors import MapConstructionError
from infinimix.maps import (check_measure_preservation, iterate, make_boole, make_custom_from_json,
                            make_random_walk_map)

finite = st.floats(min_value=-1e3, max_value=1e3, allow_nan=False).filter(lambda x: abs(x) > 1e-6)


@pytest.fixture(scope="module")
def boole():
    return make_boole()


def test_boole_values(boole):
    assert boole.step(1.0) == 0.0
    assert boole.step(2.0) == 1.5
    assert boole.step(-2.0) == -1.5


def test_boole_preimages_of_zero(boole):
    pre = sorted(boole.preimages(0.0))
    assert [p for p, _ in pre] == pytest.approx([-1.0, 1.0])
    assert [w for _, w in pre] == pytest.approx([0.5, 0.5])


@given(y=st.floats(min_value=-1e4, max_value=1e4, allow_nan=False))
def test_boole_preimages_map_back(y):
    T = make_boole()
    for x, w in T.preimages(y):
        assert T.step(x) == pytest.approx(y, abs=1e-9 * max(1.0, abs(y)))
        assert 0 < w < 1


@pytest.mark.parametrize("k1,k2", [(-1, 2), (0, 2), (-2, 3), (-3, 1)])
def test_random_walk_weights_sum_to_one(k1, k2):
    T = make_random_walk_map(k1, k2)
    y = np.linspace(-40, 40, 2001)
    assert np.max(np.abs(T.weight_sums(y) - 1)) < 1e-12
    assert sum(T.jump_law.values()) == 1
    assert set(T.jump_law) == set(range(k1, k2))


@pytest.mark.parametrize("k1,k2", [(0, 1), (2, 2), (3, 1)])
def test_random_walk_rejects_non_expanding(k1, k2):
    with pytest.raises(MapConstructionError):
        make_random_walk_map(k1, k2)


@given(x=finite)
def test_random_walk_commutes_with_integer_shift(x):
    T = make_random_walk_map(-1, 2)
    assert T.step(x + 7) == pytest.approx(T.step(x) + 7, abs=1e-9)


@given(x=finite)
def test_random_walk_is_three_x_mod_one(x):
    T = make_random_walk_map(-1, 2)
    a = T.step(x) % 1.0
    b = (3 * x) % 1.0
    assert min(abs(a - b), 1 - abs(a - b)) < 1e-9


def test_step_array_matches_scalar(boole):
    x = np.array([-3.0, -0.5, 0.25, 1.0, 5.0])
    np.testing.assert_allclose(boole.step_array(x), [boole.step(v) for v in x])


def test_iterate(boole):
    assert iterate(boole, 2.0, 2) == pytest.approx(1.5 - 1 / 1.5)


def test_measure_check_passes_on_bundled_maps(boole):
    assert check_measure_preservation(boole).passed
    assert check_measure_preservation(make_random_walk_map(-1, 2)).passed


def test_custom_map_that_loses_mass_is_rejected():
    # slope 16/15 on a single cell does not preserve Lebesgue measure
    doc = {"translation_invariant": True,
           "branches": [{"domain": [0, 1], "forward": {"template": "affine", "slope": "16/15", "intercept": 0},
                         "inverse": {"template": "affine", "slope": "15/16", "intercept": 0},
                         "derivative": {"template": "const", "value": "16/15"}}]}
    with pytest.raises(MapConstructionError, match="not Lebesgue preserving"):
        make_custom_from_json(doc)


def test_custom_map_reproduces_random_walk():
    doc = {"translation_invariant": True, "name": "tripling",
           "branches": [{"domain": [0, 1], "forward": {"template": "affine", "slope": 3, "intercept": -1},
                         "inverse": {"template": "affine", "slope": "1/3", "intercept": "1/3"},
                         "derivative": {"template": "const", "value": 3}}]}
    T = make_custom_from_json(doc)
    ref = make_random_walk_map(-1, 2)
    x = np.linspace(-5, 5, 101) + 1e-3
    np.testing.assert_allclose(T.step_array(x), ref.step_array(x), atol=1e-12)
    assert math.isclose(float(np.max(T.weight_sums(x))), 1.0)
