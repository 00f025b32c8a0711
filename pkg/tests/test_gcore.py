import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gldp.gcore import (ScenarioSamples, VolBounds, capacity, g_function, scenario_means,
                        stable_mean, sublinear_expectation)

reals = st.floats(-1e6, 1e6, allow_nan=False)


def test_volbounds_validation():
    with pytest.raises(ValueError):
        VolBounds(0.0, 1.0)
    with pytest.raises(ValueError):
        VolBounds(2.0, 1.0)
    b = VolBounds(1.0, 4.0)
    assert b.sigma_hi == 2.0 and b.sigma_lo == 1.0 and not b.is_classical
    assert VolBounds(2.0, 2.0).is_classical


@pytest.mark.parametrize("a,expected", [(2.0, 4.0), (0.0, 0.0), (-2.0, -1.0)])
def test_g_function_values(a, expected):
    assert g_function(a, VolBounds(1.0, 4.0)) == expected


def test_g_function_vectorised():
    out = g_function(np.array([2.0, 0.0, -2.0]), VolBounds(1.0, 4.0))
    assert np.array_equal(out, [4.0, 0.0, -1.0])


@settings(max_examples=300)
@given(reals, reals, st.floats(0.0, 1e3))
def test_g_sublinear_and_homogeneous(a, b, lam):
    bd = VolBounds(0.5, 3.0)
    assert g_function(a, bd) - g_function(b, bd) <= g_function(a - b, bd) + 1e-9 * (abs(a) + abs(b) + 1)
    assert math.isclose(g_function(lam * a, bd), lam * g_function(a, bd), rel_tol=1e-12, abs_tol=1e-9)


@given(reals, reals)
def test_g_monotone(a, b):
    bd = VolBounds(1.0, 4.0)
    lo, hi = sorted((a, b))
    assert g_function(lo, bd) <= g_function(hi, bd)


def test_sublinear_expectation_examples():
    s = ScenarioSamples({0: [1.0, 1.0], 1: [2.0, 3.0]})
    assert sublinear_expectation(s) == 2.5
    assert sublinear_expectation(ScenarioSamples({7: [0.7]})) == 0.7
    scaled = s.map(lambda v: 3.0 * v)
    assert sublinear_expectation(scaled) == 3.0 * sublinear_expectation(s)


def test_sublinear_detail_reports_argmax():
    est = sublinear_expectation(ScenarioSamples({0: [1.0], 5: [4.0], 2: [3.0]}), detail=True)
    assert est.value == 4.0 and est.argmax_scenario_id == 5 and est.family_size == 3


def test_no_scenarios_error():
    with pytest.raises(ValueError, match="no scenarios"):
        sublinear_expectation(ScenarioSamples({}))


def test_samples_invariants():
    with pytest.raises(ValueError):
        ScenarioSamples([(1, [1.0]), (1, [2.0])])
    with pytest.raises(ValueError):
        ScenarioSamples({1: []})


def test_capacity_examples():
    assert capacity(ScenarioSamples({0: [1, 0, 0, 0, 0, 0, 0, 0, 0, 0],
                                     1: [1, 1, 1, 0, 0, 0, 0, 0, 0, 0]})) == pytest.approx(0.3)
    assert capacity(ScenarioSamples({0: np.zeros(5)})) == 0.0
    assert capacity(ScenarioSamples({0: np.ones(5)})) == 1.0
    with pytest.raises(ValueError):
        capacity(ScenarioSamples({0: [0.5]}))


@settings(max_examples=100)
@given(st.lists(st.lists(st.floats(-1e3, 1e3), min_size=4, max_size=4), min_size=1, max_size=5),
       st.lists(st.lists(st.floats(-1e3, 1e3), min_size=4, max_size=4), min_size=5, max_size=5))
def test_subadditive_monotone_constant(xs, ys):
    ys = ys[: len(xs)]
    X = ScenarioSamples({i: np.array(v) for i, v in enumerate(xs)})
    Y = ScenarioSamples({i: np.array(v) for i, v in enumerate(ys)})
    S = X.combine(Y, np.add)
    # fsum-based means keep this exact up to one rounding of the final division
    assert sublinear_expectation(S) <= sublinear_expectation(X) + sublinear_expectation(Y) + 1e-9
    bigger = X.map(lambda v: v + 1.0)
    assert sublinear_expectation(bigger) >= sublinear_expectation(X)
    const = X.map(lambda v: np.full_like(v, 2.5))
    assert sublinear_expectation(const) == 2.5


def test_stable_mean_compensated():
    vals = [1e16, 1.0, -1e16, 1.0]
    assert stable_mean(vals) == 0.5
    assert scenario_means(ScenarioSamples({3: vals})) == {3: 0.5}
