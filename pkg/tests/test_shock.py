import math

import numpy as np
import pytest

from trapscope import synth
from trapscope.errors import ArgumentError
from trapscope.estimation import TransitionModel
from trapscope.landscape import stationary_distribution
from trapscope.shock import mfpt_ratio, net_flow, net_mobility_change, recovery_time, shock_report


def pre_kernel():
    return synth.birth_death([0.3, 0.3, 0.3, 0.3, 0.0], [0.0, 0.1, 0.1, 0.1, 0.1])


def test_null_shock():
    P = pre_kernel()
    r = recovery_time(P, P)
    assert r.recovery_time == 0
    np.testing.assert_allclose(r.perturbed, stationary_distribution(P), atol=1e-12)


def test_memoryless_pre_recovers_in_one_step(rng):
    pi = rng.dirichlet(np.ones(5))
    pre = np.tile(pi, (5, 1))
    for _ in range(5):
        shock = rng.dirichlet(np.ones(5), size=5)
        assert recovery_time(pre, shock).recovery_time <= 1


def test_recovery_monotone_in_severity():
    P = pre_kernel()
    times = [recovery_time(P, synth.shock_family(P, s)).recovery_time for s in np.linspace(0, 1, 11)]
    assert times[0] == 0
    assert all(a <= b for a, b in zip(times, times[1:]))
    assert times[-1] > times[1]


def test_recovery_monotone_in_epsilon():
    P = pre_kernel()
    S = synth.shock_family(P, 0.6)
    times = [recovery_time(P, S, epsilon=e).recovery_time for e in (1e-1, 1e-2, 1e-3, 1e-4, 1e-6)]
    assert all(a <= b for a, b in zip(times, times[1:]))


def test_recovery_cap_flags_infinity():
    P = np.array([[0.999, 0.001], [0.001, 0.999]])
    S = np.array([[0.99, 0.01], [0.99, 0.01]])
    r = recovery_time(P, S, cap=10)
    assert r.recovery_time == math.inf
    assert r.to_dict()["recovery_time"] is None and r.to_dict()["recovery_time_infinite"]
    assert np.isfinite(r.kl_path).all() and len(r.kl_path) == 11


def test_emptied_state_counts_as_unrecovered():
    P = np.array([[0.5, 0.5], [0.5, 0.5]])
    S = np.array([[1.0, 0.0], [1.0, 0.0]])
    r = recovery_time(P, S)
    assert r.kl_path[0] == math.inf and r.recovery_time == 1


def test_perturbed_is_probability_vector(rng):
    P, S = rng.dirichlet(np.ones(6), size=6), rng.dirichlet(np.ones(6), size=6)
    r = recovery_time(P, S)
    assert r.perturbed.min() >= 0 and r.perturbed.sum() == pytest.approx(1.0)


def test_mfpt_ratio():
    P = pre_kernel()
    assert mfpt_ratio(P, P, [0], [1, 2, 3, 4]) == pytest.approx(1.0)
    a = 0.4
    pre = np.array([[1 - a, a], [0.3, 0.7]])
    shock = np.array([[1 - a / 2, a / 2], [0.3, 0.7]])
    assert mfpt_ratio(pre, shock, [0], [1]) == pytest.approx(2.0)


def test_net_mobility():
    P = pre_kernel()
    rank = np.arange(5) / 4
    assert net_mobility_change(P, P, rank) == 0.0
    up = np.array([[0.5, 0.5], [0.1, 0.9]])
    reversed_ = np.array([[0.9, 0.1], [0.5, 0.5]])
    assert net_mobility_change(up, reversed_, [0.0, 1.0]) < 0
    S = synth.shock_family(P, 0.5)
    value = net_mobility_change(P, S, rank)
    assert -1 <= value < 0
    assert net_mobility_change(S, P, rank) == pytest.approx(-value, abs=1e-15)


def test_own_stationary_flow_cancels_on_reversible_chains(rng):
    for _ in range(5):
        P = synth.birth_death(rng.uniform(0.05, 0.4, 6), rng.uniform(0.05, 0.4, 6))
        flow, mass = net_flow(P, np.arange(6))
        assert abs(flow) < 1e-15 and mass > 0
        S = synth.shock_family(P, 0.5)
        assert net_mobility_change(P, S, np.arange(6)) < 0


def test_net_mobility_bounded_when_pre_barely_moves():
    pre = np.array([[0.999, 0.001], [0.001, 0.999]])
    shock = np.array([[1.0, 0.0], [0.9, 0.1]])
    value = net_mobility_change(pre, shock, [0.0, 1.0])
    assert -1 <= value < -0.9


def test_mismatched_spaces():
    with pytest.raises(ArgumentError):
        recovery_time(np.eye(2), np.eye(3))
    a = TransitionModel.from_matrix(np.full((2, 2), 0.5))
    b = TransitionModel.from_matrix(np.full((2, 2), 0.5))
    b.space_hash = "different"
    if a.space_hash:
        with pytest.raises(ArgumentError):
            recovery_time(a, b)


def test_shock_report_fields():
    P = pre_kernel()
    r = shock_report(P, synth.shock_family(P, 0.4), [0], [1, 2, 3, 4], np.arange(5) / 4)
    d = r.to_dict()
    assert d["mfpt_ratio"] > 1 and d["net_mobility_change"] < 0 and d["recovery_time"] > 0
