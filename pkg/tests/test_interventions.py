import numpy as np
import pytest

from trapscope import synth
from trapscope.errors import ArgumentError
from trapscope.estimation import TransitionModel
from trapscope.interventions import (lowest_welfare_states, percentile_bin, poverty_return_risk, retention_curve,
                                     run_arms, weighted_median, welfare_rank)
from trapscope.landscape import stationary_distribution
from trapscope.simulate import mean_and_se, visits_within


@pytest.fixture(scope="module")
def space():
    return synth.income_health_space(5)


def test_welfare_rank(space):
    rank = welfare_rank(space)
    assert rank.min() == 0 and rank.max() == 1
    grid = rank.reshape(space.shape)
    assert (np.diff(grid, axis=0) > 0).all() and (np.diff(grid, axis=1) > 0).all()
    assert lowest_welfare_states(space) == [0]
    only_income = welfare_rank(space, {"income": 1.0})
    assert np.ptp(only_income.reshape(space.shape), axis=1).max() == 0
    with pytest.raises(ArgumentError):
        welfare_rank(space, {"income": 0.0})


def test_weighted_median():
    assert weighted_median([0, 1, 2], [0.2, 0.2, 0.6]) == 2
    assert weighted_median([0, 1, 2], [0.5, 0.0, 0.5]) == 0


def test_risk_inside_poverty_set():
    assert poverty_return_risk(np.full((2, 2), 0.5), 0, [0]) == 1.0


def test_risk_geometric():
    for b in (0.1, 0.3, 0.7):
        P = np.array([[0.5, 0.5], [b, 1 - b]])
        assert poverty_return_risk(P, 1, [0], 5) == pytest.approx(1 - (1 - b) ** 5, abs=1e-14)


def test_risk_unreachable():
    from trapscope.estimation import regularize_irreducible
    P = regularize_irreducible(np.array([[1.0, 0.0, 0.0], [0.0, 0.5, 0.5], [0.0, 0.5, 0.5]]), 1e-8)
    assert poverty_return_risk(P, 1, [0], 5) < 1e-7


def test_risk_occupancy_variant_below_hitting(rng):
    P = rng.dirichlet(np.ones(5), size=5)
    for s in range(1, 5):
        assert poverty_return_risk(P, s, [0], 5, variant="occupancy") <= poverty_return_risk(P, s, [0], 5) + 1e-15


def test_risk_errors():
    with pytest.raises(ArgumentError):
        poverty_return_risk(np.eye(2), 0, [1], horizon=0)


def test_factorized_null(space):
    P = synth.factorized_kernel(5, 5)
    report = run_arms(P, space)
    assert abs(report.super_additivity_gap) < 1e-9
    assert abs(report.delta["health_only"]) < 1e-9
    curve = retention_curve(P, space)
    assert np.ptp(curve["values"], axis=0).max() < 1e-9


def test_interaction_super_additive(space):
    P = synth.interaction_kernel()
    report = run_arms(P, space)
    assert report.super_additivity_gap > 0
    for arm, d in report.delta.items():
        assert d <= report.risks["baseline"]
    assert all(0 <= r <= 1 for r in report.risks.values())
    curve = retention_curve(P, space)
    values = curve["values"]
    assert (np.diff(values, axis=0) > 0).all()  # better health retains more at every boost
    spread = values[-1] - values[0]
    assert (np.diff(spread) > 0).all()
    assert (np.diff(values, axis=1) >= -1e-12).all()


def test_arms_start_states(space):
    P = synth.interaction_kernel()
    report = run_arms(P, space)
    pi = stationary_distribution(P)
    b_inc = percentile_bin(pi, space, "income", 0.25)
    b_h = percentile_bin(pi, space, "health", 0.25)
    assert report.starts["baseline"] == 0
    assert report.starts["income_only"] == space.encode(np.array([b_inc, 0]))
    assert report.starts["health_only"] == space.encode(np.array([0, b_h]))
    assert report.starts["combined"] == space.encode(np.array([b_inc, b_h]))


def test_arms_errors(space):
    P = synth.interaction_kernel()
    with pytest.raises(ArgumentError):
        run_arms(P, space, percentile=1.0)
    with pytest.raises(ArgumentError):
        run_arms(P, synth.income_space(25))


def test_retention_clamp_and_absorbing(space):
    P = 0.999 * np.eye(25) + 0.001 / 25
    curve = retention_curve(P, space, boost_sizes=(5, 150))
    assert curve["clamped"] == [False, True]
    assert curve["income_bins"][1] == 4
    # clamped to the top income bin with health at or above the second quintile: above the median
    assert curve["values"][1:, 1].min() > 0.99
    assert curve["values"][:, 0].max() < 0.01


def test_exact_matches_monte_carlo(space):
    rng = np.random.default_rng(7)
    P = synth.interaction_kernel()
    report = run_arms(TransitionModel.from_matrix(P), space)
    for arm, start in report.starts.items():
        mean, se = mean_and_se(visits_within(P, start, report.poverty_set, report.horizon, 100_000, rng))
        assert abs(mean - report.risks[arm]) < 3 * se + 1e-12, arm
