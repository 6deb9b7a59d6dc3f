import math

import numpy as np
import pytest

from trapscope import synth
from trapscope.errors import ArgumentError, ConfigurationError, DomainError
from trapscope.estimation import TransitionModel, regularize_irreducible
from trapscope.landscape import stationary_distribution
from trapscope.metrics import (compute_metrics, entropy_rate, escape_time_distribution, hitting_times,
                               kemeny_constants, kl_divergence, mfpt, mfpt_set, mixing_time, shorrocks,
                               tau_mix_transform)


def mixing_by_stepping(P, eps, norm="tv", cap=10_000):
    pi = stationary_distribution(P)
    Q = np.eye(len(P))
    for t in range(cap + 1):
        d = np.abs(Q - pi)
        dist = {"tv": 0.5 * d.sum(1), "l1": d.sum(1), "l2": np.sqrt((d**2).sum(1))}[norm]
        if dist.max() < eps:
            return t
        Q = Q @ P
    return math.inf


def test_periodic_chain_never_mixes():
    assert mixing_time(np.array([[0.0, 1.0], [1.0, 0.0]]), cap=10**6) == math.inf


def test_identical_rows_mix_in_one_step(rng):
    pi = rng.dirichlet(np.ones(5))
    assert mixing_time(np.tile(pi, (5, 1))) == 1


@pytest.mark.parametrize("norm", ["tv", "l1", "l2"])
def test_mixing_matches_stepping(rng, norm):
    for _ in range(15):
        n = int(rng.integers(2, 9))
        P = regularize_irreducible(0.85 * np.eye(n) + 0.15 * rng.dirichlet(np.ones(n), size=n), 1e-8)
        for eps in (0.2, 0.05, 0.01):
            assert mixing_time(P, eps, norm) == mixing_by_stepping(P, eps, norm)


def test_mixing_nonincreasing_in_epsilon():
    P = synth.make_double_well(9, 2.0)
    taus = [mixing_time(P, e) for e in (0.01, 0.02, 0.05, 0.1, 0.3)]
    assert all(a >= b for a, b in zip(taus, taus[1:]))


def test_mixing_cap():
    P = regularize_irreducible(np.eye(3), 1e-8)
    assert mixing_time(P, cap=1000) == math.inf
    assert mixing_time(P) == math.inf  # needs ~1e8 steps, above the default cap


def test_tau_mix_transform():
    assert tau_mix_transform(0) == 0.0
    assert tau_mix_transform(math.inf) == 1.0
    assert tau_mix_transform(42.44, 0.1) == pytest.approx(1 - math.exp(-4.244))
    assert tau_mix_transform(42.44, 0.1) == pytest.approx(0.9857, abs=1e-4)
    with pytest.raises(ConfigurationError):
        tau_mix_transform(3, 0)
    taus = [tau_mix_transform(t) for t in range(50)]
    assert all(a < b for a, b in zip(taus, taus[1:]))


def test_mfpt_two_state():
    a, b = 0.3, 0.6
    M = mfpt(np.array([[1 - a, a], [b, 1 - b]]))
    assert M[0, 1] == pytest.approx(1 / a, abs=1e-12)
    assert M[1, 0] == pytest.approx(1 / b, abs=1e-12)
    assert M[0, 0] == 0 and M[1, 1] == 0


def test_mfpt_memoryless(rng):
    pi = rng.dirichlet(np.ones(6))
    M = mfpt(np.tile(pi, (6, 1)))
    expected = np.tile(1 / pi, (6, 1))
    np.fill_diagonal(expected, 0)
    np.testing.assert_allclose(M, expected, rtol=1e-10)


def test_kemeny_constant(rng):
    for n in (3, 6, 10):
        P = rng.dirichlet(np.ones(n), size=n)
        k = kemeny_constants(mfpt(P), stationary_distribution(P))
        assert np.ptp(k) < 1e-6


def test_mfpt_set_reduces_to_mfpt():
    a = 0.25
    assert mfpt_set(np.array([[1 - a, a], [0.4, 0.6]]), [0], [1]) == pytest.approx(1 / a)


def brute_force_escape(P, A, B, w, horizon=60):
    """Sum of survival probabilities over explicitly enumerated short paths plus a geometric tail."""
    rest = [s for s in range(len(P)) if s not in B]
    expect = 0.0
    for a, wa in zip(A, w):
        surv = {(a,): 1.0}
        t = 0
        total = 0.0
        while t < horizon:
            total += sum(surv.values())
            nxt = {}
            for path, p in surv.items():
                for s in rest:
                    q = p * P[path[-1], s]
                    if q > 0:
                        nxt[path[-1:] + (s,)] = nxt.get(path[-1:] + (s,), 0.0) + q
            surv = nxt
            t += 1
        expect += wa * total
    return expect


def test_mfpt_set_brute_force_three_states():
    P = np.array([[0.6, 0.3, 0.1], [0.2, 0.5, 0.3], [0.1, 0.2, 0.7]])
    pi = stationary_distribution(P)
    A, B = [0, 1], [2]
    w = pi[A] / pi[A].sum()
    assert mfpt_set(P, A, B) == pytest.approx(brute_force_escape(P, A, B, w, 400), rel=1e-9)
    assert mfpt_set(P, A, B, weighting="uniform") == pytest.approx(
        brute_force_escape(P, A, B, [0.5, 0.5], 400), rel=1e-9)


def test_mfpt_set_identical_rows():
    pi = np.array([0.5, 0.3, 0.2])
    P = np.tile(pi, (3, 1))
    assert mfpt_set(P, [0, 1], [2]) == pytest.approx(1 / 0.2)
    assert mfpt_set(P, [0], [1, 2]) == pytest.approx(1 / (1 - 0.5))


def test_mfpt_set_errors():
    P = np.full((3, 3), 1 / 3)
    with pytest.raises(ArgumentError):
        mfpt_set(P, [0, 1], [1, 2])
    with pytest.raises(ArgumentError):
        mfpt_set(P, [], [1])


def test_hitting_times_zero_inside_target():
    h = hitting_times(np.full((3, 3), 1 / 3), [1])
    assert h[1] == 0 and h[0] == pytest.approx(3.0)


def test_escape_deterministic_one_step():
    P = np.array([[0.0, 1.0], [0.5, 0.5]])
    d = escape_time_distribution(P, [0], [1], horizon=10)
    assert d.pmf[0] == 1.0 and d.lower == 1 and d.upper == 1 and d.mean == 1.0


def test_escape_geometric():
    P = np.array([[0.5, 0.5], [0.5, 0.5]])
    d = escape_time_distribution(P, [0], [1], horizon=80)
    np.testing.assert_allclose(d.pmf[:10], 0.5 ** np.arange(1, 11))
    assert d.mean == pytest.approx(2.0, abs=1e-15 + 81 * 0.5**80)
    assert d.lower == 1 and d.upper == 5  # P(T<=4)=0.9375, P(T<=5)=0.96875


def test_escape_mean_matches_mfpt_set(rng):
    for _ in range(10):
        P = regularize_irreducible(0.7 * np.eye(6) + 0.3 * rng.dirichlet(np.ones(6), size=6), 1e-8)
        d = escape_time_distribution(P, [0, 1], [2, 3, 4, 5], horizon=2000)
        assert d.tail_mass < 1e-12
        assert d.mean == pytest.approx(mfpt_set(P, [0, 1], [2, 3, 4, 5]), rel=1e-9)


def test_escape_horizon_error():
    with pytest.raises(ArgumentError):
        escape_time_distribution(np.full((2, 2), 0.5), [0], [1], horizon=0)


def test_escape_unreached_quantile_is_inf():
    P = np.array([[0.99, 0.01], [0.5, 0.5]])
    d = escape_time_distribution(P, [0], [1], horizon=3)
    assert d.upper == math.inf and d.tail_mass > 0.9


def test_shorrocks():
    assert shorrocks(np.eye(4)) == 0.0
    P = (np.ones((3, 3)) - np.eye(3)) / 2
    assert shorrocks(P) == pytest.approx(1.5)
    report = compute_metrics(TransitionModel.from_matrix(P))
    assert report.shorrocks == 1.0 and report.shorrocks_raw == pytest.approx(1.5)
    assert shorrocks(np.full((2, 2), 0.5)) == 1.0
    with pytest.raises(ArgumentError):
        shorrocks(np.ones((1, 1)))


def test_shorrocks_relabel_invariant(rng):
    P = rng.dirichlet(np.ones(5), size=5)
    perm = rng.permutation(5)
    assert shorrocks(P[np.ix_(perm, perm)]) == pytest.approx(shorrocks(P))


def test_kl():
    assert kl_divergence([0.2, 0.8], [0.2, 0.8]) == 0.0
    assert kl_divergence([1, 0], [0.5, 0.5]) == pytest.approx(math.log(2))
    with pytest.raises(DomainError):
        kl_divergence([0.5, 0.5], [1.0, 0.0])


def test_entropy_rate_uniform():
    assert entropy_rate(np.full((4, 4), 0.25)) == pytest.approx(math.log(4))
    assert entropy_rate(np.eye(3)) == 0.0


def test_metrics_report_serialises_infinity():
    report = compute_metrics(np.array([[0.0, 1.0], [1.0, 0.0]]), cap=1000)
    d = report.to_dict()
    assert d["mixing_time"] is None and d["mixing_time_infinite"] and d["tau_mix"] == 1.0
