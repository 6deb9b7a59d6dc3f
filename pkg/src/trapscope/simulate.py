"""Monte Carlo walkers on a transition matrix.

These are the simulation oracles used to cross-check the linear-algebra
routines; nothing here shares code with :mod:`trapscope.metrics`.
"""

from __future__ import annotations

import math

import numpy as np


def _step(cum, states, rng):
    """Inverse-CDF draw; row s of ``cum`` is offset by s so one searchsorted serves every walker."""
    n = math.isqrt(cum.size)
    u = rng.random(states.size)
    pos = np.searchsorted(cum, states + u, side="right")
    return np.minimum(pos - states * n, n - 1)


def _cumulative(P):
    """Flattened row CDFs, row s shifted by s."""
    cum = np.cumsum(np.asarray(P, dtype=float), axis=1)
    cum[:, -1] = 1.0
    return (cum + np.arange(cum.shape[0])[:, None]).ravel()


def first_passage_times(P, start: int, n_walkers: int, rng, max_steps: int = 10**6) -> np.ndarray:
    """First hitting time of every state for ``n_walkers`` chains started at ``start``.

    Returns an ``(n_walkers, N)`` int array; the start column is 0 and
    unreached states after ``max_steps`` are -1.
    """
    n = np.asarray(P).shape[0]
    cum = _cumulative(P)
    hits = np.full(n_walkers * n, -1, dtype=np.int64)
    hits[start::n] = 0
    remaining = np.full(n_walkers, n - 1)
    states = np.full(n_walkers, start, dtype=np.int64)
    active = np.arange(n_walkers)
    for t in range(1, max_steps + 1):
        if active.size == 0:
            break
        states = _step(cum, states, rng)
        flat = active * n + states
        fresh = hits[flat] < 0
        hits[flat[fresh]] = t
        remaining[active[fresh]] -= 1
        keep = remaining[active] > 0
        active, states = active[keep], states[keep]
    return hits.reshape(n_walkers, n)


def simulate_paths(P, start, steps: int, n_walkers: int, rng) -> np.ndarray:
    """State of each walker at times 0..steps, shape ``(n_walkers, steps + 1)``."""
    cum = _cumulative(P)
    paths = np.empty((n_walkers, steps + 1), dtype=np.int64)
    paths[:, 0] = start
    for t in range(1, steps + 1):
        paths[:, t] = _step(cum, paths[:, t - 1], rng)
    return paths


def visits_within(P, start: int, targets, horizon: int, n_walkers: int, rng) -> np.ndarray:
    """Whether each walker enters ``targets`` at some step 1..horizon."""
    paths = simulate_paths(P, start, horizon, n_walkers, rng)
    return np.isin(paths[:, 1:], np.asarray(list(targets))).any(axis=1)


def mean_and_se(samples) -> tuple[float, float]:
    x = np.asarray(samples, dtype=float)
    return float(x.mean()), float(x.std(ddof=1) / np.sqrt(x.size))
