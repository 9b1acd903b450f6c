import numpy as np
import pytest
from hypothesis import given, strategies as st
from numpy.testing import assert_allclose

from crashsev.domain import SEVERITY_CLASSES, Dataset
from crashsev.errors import ArgumentError
from crashsev.inference import (marginal_effect_point, marginal_effects_average,
                                predicted_probabilities, random_parameter_shares,
                                share_positive)

MAJOR, MINOR, POSSIBLE = SEVERITY_CLASSES
P = (0.1, 0.2, 0.7)


def test_point_examples():
    assert marginal_effect_point(P, 0.5, "Minor", "Minor") == pytest.approx(0.08, abs=1e-15)
    assert marginal_effect_point(P, 0.5, "Minor", "Major") == pytest.approx(-0.01, abs=1e-15)
    for i in SEVERITY_CLASSES:
        assert marginal_effect_point(P, 0.0, MINOR, i) == 0.0


@given(st.lists(st.floats(0.01, 1.0), min_size=3, max_size=3),
       st.floats(-5, 5, allow_subnormal=False), st.sampled_from(SEVERITY_CLASSES))
def test_point_zero_sum_and_signs(w, beta, home):
    p = np.array(w) / sum(w)
    eff = [marginal_effect_point(p, beta, home, i) for i in SEVERITY_CLASSES]
    assert abs(sum(eff)) <= 1e-12
    for i, e in zip(SEVERITY_CLASSES, eff):
        if beta == 0:
            assert e == 0
        elif i is home:
            assert np.sign(e) in (np.sign(beta), 0)
        else:
            assert np.sign(e) in (-np.sign(beta), 0)


def test_point_validation():
    with pytest.raises(ArgumentError):
        marginal_effect_point((0.5, 0.5), 1.0, MAJOR, MAJOR)
    with pytest.raises(ArgumentError):
        marginal_effect_point((0.5, 0.4, 0.4), 1.0, MAJOR, MAJOR)


def test_average_zero_sum(mnl_fit, mnl_data, mixed_fit, mixed_data):
    for f, (_, d) in ((mnl_fit, mnl_data), (mixed_fit, mixed_data)):
        tab = marginal_effects_average(d, f)
        assert len(tab.rows) > 0
        assert np.all(np.abs(tab.as_array().sum(axis=1)) <= 1e-10)


def test_single_observation_equals_point(mnl_fit, mnl_data):
    _, d = mnl_data
    one = d.subset(np.arange(len(d)) == 7)
    p = predicted_probabilities(one, mnl_fit)[0]
    tab = marginal_effects_average(one, mnl_fit)
    for row in tab.rows:
        beta = mnl_fit.estimates.coefficient(row.coef)
        for i in SEVERITY_CLASSES:
            assert row.effects[i] == pytest.approx(
                marginal_effect_point(p, beta, row.home, i), abs=1e-15)


def _shifted(d, var, h):
    X = d.X.copy()
    X[:, d.names.index(var)] += h
    return Dataset(d.severity, d.area, d.lighting, X, d.names, d.kinds)


@pytest.mark.parametrize("var,home", [("x1", "Major"), ("x2", "Minor")])
def test_average_matches_finite_difference(mnl_fit, mnl_data, var, home):
    _, d = mnl_data
    h = 1e-5
    fd = (predicted_probabilities(_shifted(d, var, h), mnl_fit).mean(axis=0)
          - predicted_probabilities(_shifted(d, var, -h), mnl_fit).mean(axis=0)) / (2 * h)
    row = marginal_effects_average(d, mnl_fit).row(var, home)
    got = np.array([row.effects[a] for a in SEVERITY_CLASSES])
    assert_allclose(got, fd, rtol=0.02)


def test_discrete_mode_for_indicator(mnl_fit, mnl_data):
    _, d = mnl_data
    deriv = marginal_effects_average(d, mnl_fit, "derivative").row("d1", "Major")
    disc = marginal_effects_average(d, mnl_fit, "discrete").row("d1", "Major")
    assert sum(disc.effects.values()) == pytest.approx(0.0, abs=1e-12)
    assert np.sign(disc.effects[MAJOR]) == np.sign(deriv.effects[MAJOR])
    j = d.names.index("d1")
    p1 = predicted_probabilities(_set(d, j, 1.0), mnl_fit).mean(axis=0)
    p0 = predicted_probabilities(_set(d, j, 0.0), mnl_fit).mean(axis=0)
    assert_allclose([disc.effects[a] for a in SEVERITY_CLASSES], p1 - p0, atol=1e-14)
    with pytest.raises(ArgumentError):
        marginal_effects_average(d, mnl_fit, "elasticity")


def _set(d, j, v):
    X = d.X.copy()
    X[:, j] = v
    return Dataset(d.severity, d.area, d.lighting, X, d.names, d.kinds)


@pytest.mark.parametrize("mu,sigma,pos", [(-1.36, 2.56, 0.298), (-5.99, 3.65, 0.050),
                                           (1.72, 2.02, 0.803), (3.80, 3.13, 0.888),
                                           (-6.71, 3.72, 0.036)])
def test_share_anchors(mu, sigma, pos):
    s = share_positive(mu, sigma)
    assert abs(s.positive - pos) <= 0.001
    assert s.positive + s.negative == pytest.approx(1.0, abs=1e-15)


@given(st.floats(-30, 30), st.floats(0.01, 20))
def test_share_symmetry(mu, sigma):
    assert share_positive(mu, sigma).positive + share_positive(-mu, sigma).positive \
        == pytest.approx(1.0, abs=1e-12)


@given(st.floats(-10, 10), st.floats(0.01, 0.5), st.floats(0.1, 10))
def test_share_monotone(mu, dmu, sigma):
    assert share_positive(mu + dmu, sigma).positive >= share_positive(mu, sigma).positive
    if mu < 0:
        assert share_positive(mu, sigma + dmu).positive >= share_positive(mu, sigma).positive


def test_share_zero_mean_and_errors():
    assert share_positive(0.0, 3.0).positive == 0.5
    for s in (0.0, -1.0, float("nan")):
        with pytest.raises(ArgumentError):
            share_positive(1.0, s)


def test_fit_shares_use_absolute_spread(mixed_fit):
    shares = random_parameter_shares(mixed_fit)
    mu, sigma = mixed_fit.estimates.random["Major:x1"]
    assert shares["Major:x1"] == share_positive(mu, abs(sigma))
