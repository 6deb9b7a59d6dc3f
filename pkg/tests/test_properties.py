import numpy as np
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from trapscope import synth
from trapscope.errors import DegenerateRangeError
from trapscope.estimation import estimate_mle, regularize_irreducible
from trapscope.interventions import poverty_return_risk, welfare_rank
from trapscope.landscape import curl_diagnostic, potential, stationary_distribution, stationary_direct
from trapscope.metrics import kemeny_constants, mfpt, mixing_time
from trapscope.shock import net_mobility_change, recovery_time
from trapscope.states import StateSpace, fit_equidistant, fit_ordinal

from conftest import index_space, records_from_pairs

SETTINGS = settings(max_examples=40, deadline=None)


@st.composite
def chains(draw, min_n=2, max_n=7):
    n = draw(st.integers(min_n, max_n))
    raw = draw(arrays(float, (n, n), elements=st.floats(0.0, 1.0)))
    raw = raw + 1e-3
    return raw / raw.sum(axis=1, keepdims=True)


@st.composite
def birth_death_chains(draw):
    n = draw(st.integers(2, 8))
    up = draw(arrays(float, n, elements=st.floats(0.01, 0.45)))
    down = draw(arrays(float, n, elements=st.floats(0.01, 0.45)))
    return synth.birth_death(up, down)


@SETTINGS
@given(st.lists(st.tuples(st.integers(0, 4), st.integers(0, 4)), min_size=1, max_size=60))
def test_estimates_are_stochastic(pairs):
    m = estimate_mle(records_from_pairs(pairs), index_space(5))
    np.testing.assert_allclose(m.P.sum(axis=1), 1.0, atol=1e-12)
    assert (m.P > 0).all()


@SETTINGS
@given(chains(), st.floats(1e-10, 1e-2))
def test_regularisation_keeps_rows_stochastic(P, eta):
    Q = regularize_irreducible(P, eta)
    np.testing.assert_allclose(Q.sum(axis=1), 1.0, atol=1e-12)
    assert (Q > 0).all()


@SETTINGS
@given(chains())
def test_stationary_is_fixed_point(P):
    pi = stationary_distribution(P)
    assert abs(pi.sum() - 1) < 1e-12 and (pi >= 0).all()
    np.testing.assert_allclose(pi @ P, pi, atol=1e-10)
    np.testing.assert_allclose(pi, stationary_direct(P), atol=1e-9)
    assert (potential(pi) >= 0).all()


@SETTINGS
@given(birth_death_chains())
def test_reversible_chains_have_no_curl(P):
    assert curl_diagnostic(P)["total"] < 1e-12


@SETTINGS
@given(chains())
def test_kemeny_constancy(P):
    k = kemeny_constants(mfpt(P), stationary_distribution(P))
    assert np.ptp(k) < 1e-6


@SETTINGS
@given(chains(), st.floats(0.01, 0.4), st.floats(0.01, 0.4))
def test_mixing_monotone_in_epsilon(P, e1, e2):
    lo, hi = sorted((e1, e2))
    assert mixing_time(P, lo) >= mixing_time(P, hi)


@SETTINGS
@given(chains(), chains())
def test_net_mobility_antisymmetric(P, S):
    if P.shape != S.shape:
        return
    rank = np.linspace(0, 1, P.shape[0])
    a, b = net_mobility_change(P, S, rank), net_mobility_change(S, P, rank)
    assert abs(a + b) < 1e-12 and abs(a) <= 1


@SETTINGS
@given(chains(3, 5), st.floats(1e-5, 1e-2))
def test_recovery_monotone_in_epsilon(P, eps):
    S = np.roll(np.eye(P.shape[0]), 1, axis=1) * 0.5 + P * 0.5
    assert recovery_time(P, S, epsilon=eps / 10).recovery_time >= recovery_time(P, S, epsilon=eps).recovery_time


@SETTINGS
@given(chains(2, 6), st.integers(1, 8))
def test_risk_is_probability_and_grows_with_horizon(P, h):
    n = P.shape[0]
    r1 = poverty_return_risk(P, n - 1, [0], h)
    r2 = poverty_return_risk(P, n - 1, [0], h + 1)
    assert 0 <= r1 <= r2 <= 1


@SETTINGS
@given(st.lists(st.integers(2, 5), min_size=1, max_size=3), st.data())
def test_encode_decode_round_trip(ks, data):
    space = StateSpace(tuple(fit_ordinal(name=f"d{i}", levels=list(range(k))) for i, k in enumerate(ks)))
    flat = data.draw(arrays(np.int64, 10, elements=st.integers(0, space.n_states - 1)))
    np.testing.assert_array_equal(space.encode(space.decode(flat)), flat)
    rank = welfare_rank(space)
    assert rank.min() >= 0 and rank.max() <= 1
    grid = rank.reshape(space.shape)
    for axis in range(grid.ndim):
        assert (np.diff(grid, axis=axis) > 0).all()


@SETTINGS
@given(st.lists(st.floats(0, 1e6, allow_nan=False), min_size=20, max_size=200), st.integers(2, 6))
def test_bin_assignment_is_total(values, k):
    try:
        d = fit_equidistant(values, k)
    except DegenerateRangeError:
        assert max(values) - min(values) < 1e-300 * k
        return
    bins = d.bin_of(np.asarray(values))
    assert bins.min() >= 0 and bins.max() <= k - 1
