"""Transition-matrix estimation from household transition records."""

from __future__ import annotations

import itertools
import json
import logging
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ArgumentError, ConfigurationError, EstimationError
from .panel import PanelDataset, TransitionRecord, extract_transitions, household_runs
from .states import StateSpace

logger = logging.getLogger(__name__)

DEFAULT_ETA = 1e-8


@dataclass
class TransitionModel:
    """Row-stochastic transition matrix with its provenance.

    ``counts`` are the weighted transition counts the matrix was estimated
    from (``None`` for a model built from a known kernel). For ``order`` k > 1
    the states are k-tuples of base states, flattened row-major, so
    ``n_states == base_states ** order``.
    """

    P: np.ndarray
    counts: np.ndarray | None = None
    order: int = 1
    period: str | None = None
    eta: float = 0.0
    base_states: int | None = None
    space_hash: str | None = None
    zero_rows: list[int] = field(default_factory=list)

    def __post_init__(self):
        self.P = np.asarray(self.P, dtype=float)
        if self.P.ndim != 2 or self.P.shape[0] != self.P.shape[1]:
            raise ArgumentError(f"P must be square, got shape {self.P.shape}")
        if self.base_states is None:
            self.base_states = self.P.shape[0] if self.order == 1 else round(self.P.shape[0] ** (1 / self.order))

    @property
    def n_states(self) -> int:
        return self.P.shape[0]

    N = n_states

    @property
    def P_mle(self) -> np.ndarray:
        """Unregularised maximum-likelihood matrix from ``counts``."""
        if self.counts is None:
            raise EstimationError("model has no counts")
        return mle_matrix(self.counts)[0]

    @classmethod
    def from_matrix(cls, P, order: int = 1, period=None, **kw) -> "TransitionModel":
        P = np.asarray(P, dtype=float)
        check_stochastic(P)
        return cls(P=P, order=order, period=period, **kw)

    def to_dict(self) -> dict:
        return {
            "n_states": self.n_states,
            "order": self.order,
            "base_states": self.base_states,
            "period": self.period,
            "eta": self.eta,
            "space_hash": self.space_hash,
            "zero_rows": list(self.zero_rows),
            "P": self.P.ravel().tolist(),
            "counts": None if self.counts is None else self.counts.ravel().tolist(),
        }

    @classmethod
    def from_dict(cls, d) -> "TransitionModel":
        n = d["n_states"]
        counts = d.get("counts")
        return cls(
            P=np.asarray(d["P"], dtype=float).reshape(n, n),
            counts=None if counts is None else np.asarray(counts, dtype=float).reshape(n, n),
            order=d.get("order", 1),
            period=d.get("period"),
            eta=d.get("eta", 0.0),
            base_states=d.get("base_states"),
            space_hash=d.get("space_hash"),
            zero_rows=list(d.get("zero_rows", [])),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def check_stochastic(P, atol: float = 1e-12):
    P = np.asarray(P)
    if P.ndim != 2 or P.shape[0] != P.shape[1]:
        raise ArgumentError(f"transition matrix must be square, got shape {P.shape}")
    if (P < 0).any():
        raise ArgumentError("transition matrix has negative entries")
    err = np.abs(P.sum(axis=1) - 1.0).max()
    if err > atol:
        raise ArgumentError(f"rows do not sum to 1 (max deviation {err:.2e})")


def count_transitions(from_states, to_states, n_states: int, weights=None) -> np.ndarray:
    """Weighted ``n_ij`` count matrix."""
    from_states = np.asarray(from_states, dtype=np.int64)
    to_states = np.asarray(to_states, dtype=np.int64)
    flat = np.bincount(from_states * n_states + to_states, weights=weights, minlength=n_states * n_states)
    return flat.astype(float).reshape(n_states, n_states)


def mle_matrix(counts) -> tuple[np.ndarray, list[int]]:
    """Row-normalised counts; rows without departures become uniform.

    Returns the matrix and the list of rows that were filled in.
    """
    counts = np.asarray(counts, dtype=float)
    n = counts.shape[0]
    totals = counts.sum(axis=1)
    empty = totals <= 0
    P = np.empty_like(counts)
    P[~empty] = counts[~empty] / totals[~empty, None]
    P[empty] = 1.0 / n
    return P, np.flatnonzero(empty).tolist()


def regularize_irreducible(P, eta: float = DEFAULT_ETA) -> np.ndarray:
    """Add ``eta`` to every entry and renormalise, making P strictly positive."""
    if not eta > 0:
        raise ArgumentError("eta must be positive")
    Q = np.asarray(P, dtype=float) + eta
    return Q / Q.sum(axis=1, keepdims=True)


def _record_states(records: Sequence[TransitionRecord], space: StateSpace):
    src = space.assign_many([r.from_values for r in records])
    dst = space.assign_many([r.to_values for r in records])
    w = np.array([r.weight for r in records], dtype=float)
    return src, dst, w


def augmented_transitions(records: Sequence[TransitionRecord], space: StateSpace, order: int):
    """Transitions between k-tuples of consecutive base states.

    Only household runs with at least ``order + 1`` consecutive waves
    contribute. Returns augmented ``(from, to, weight)`` arrays.
    """
    n = space.n_states
    frm, to, wts = [], [], []
    pos = {id(r): i for i, r in enumerate(records)}
    base_src, base_dst, base_w = _record_states(records, space)
    radix = n ** np.arange(order - 1, -1, -1)
    for run in household_runs(records):
        if len(run) < order:
            continue
        idx = [pos[id(r)] for r in run]
        seq = [int(base_src[idx[0]])] + [int(base_dst[i]) for i in idx]
        for t in range(order - 1, len(seq) - 1):
            frm.append(int(np.dot(seq[t - order + 1:t + 1], radix)))
            to.append(int(np.dot(seq[t - order + 2:t + 2], radix)))
            wts.append(float(base_w[idx[t]]))
    return np.array(frm, dtype=np.int64), np.array(to, dtype=np.int64), np.array(wts, dtype=float)


def estimate_mle(records: Sequence[TransitionRecord], space: StateSpace, order: int = 1,
                 eta: float = DEFAULT_ETA, period: str | None = None) -> TransitionModel:
    """Maximum-likelihood transition matrix, regularised to irreducibility.

    Parameters
    ----------
    records : sequence of TransitionRecord
        Observed transitions; each is weighted by its origin observation.
    space : StateSpace
        Grid used to map dimension values to state indices.
    order : int
        Markov order. Orders above 1 work on tuples of consecutive states.
    eta : float
        Additive regularisation applied after row normalisation.

    Returns
    -------
    TransitionModel
    """
    if order < 1:
        raise ArgumentError("order must be >= 1")
    if not records:
        raise EstimationError("no valid transition records")
    if order == 1:
        n = space.n_states
        src, dst, w = _record_states(records, space)
    else:
        n = space.n_states ** order
        src, dst, w = augmented_transitions(records, space, order)
        if src.size == 0:
            raise EstimationError(f"no household run long enough for order {order}")
    counts = count_transitions(src, dst, n, w)
    P, zero_rows = mle_matrix(counts)
    if zero_rows:
        logger.debug("%d of %d states have no departures; uniform rows used", len(zero_rows), n)
    return TransitionModel(
        P=regularize_irreducible(P, eta),
        counts=counts,
        order=order,
        period=period,
        eta=eta,
        base_states=space.n_states,
        space_hash=space.digest(),
        zero_rows=zero_rows,
    )


@dataclass
class BootstrapSummary:
    std: np.ndarray
    frobenius_of_std: float
    mean_relative_std: float
    replicates: int
    omit_fraction: float
    seed: int | None = None

    def to_dict(self) -> dict:
        return {
            "frobenius_of_std": self.frobenius_of_std,
            "mean_relative_std": self.mean_relative_std,
            "replicates": self.replicates,
            "omit_fraction": self.omit_fraction,
            "seed": self.seed,
            "std": self.std.ravel().tolist(),
        }


def bootstrap_matrices(records: Sequence[TransitionRecord], space: StateSpace, omit_fraction: float = 0.10,
                       replicates: int = 200, seed: int | None = None, eta: float = DEFAULT_ETA):
    """Delete-a-fraction bootstrap over households.

    Each replicate drops a uniformly random ``omit_fraction`` of households
    and re-estimates P. Replicate ``r`` draws from its own child seed, so
    the result does not depend on evaluation order.

    Returns
    -------
    full : ndarray
        Regularised estimate on all records.
    samples : ndarray, shape (replicates, N, N)
    """
    if replicates < 2:
        raise ConfigurationError("bootstrap needs at least 2 replicates")
    if not 0 < omit_fraction < 1:
        raise ConfigurationError("omit_fraction must lie in (0, 1)")
    if not records:
        raise EstimationError("no valid transition records")
    n = space.n_states
    src, dst, w = _record_states(records, space)
    hh_ids = list(dict.fromkeys(r.household_id for r in records))
    hh_index = {h: i for i, h in enumerate(hh_ids)}
    rec_hh = np.array([hh_index[r.household_id] for r in records])
    n_hh = len(hh_ids)
    n_drop = int(round(omit_fraction * n_hh))

    full_raw, full_empty = mle_matrix(count_transitions(src, dst, n, w))
    full = regularize_irreducible(full_raw, eta)
    children = np.random.SeedSequence(seed).spawn(replicates)
    samples = np.empty((replicates, n, n))
    sparse = 0
    for r, child in enumerate(children):
        rng = np.random.default_rng(child)
        dropped = np.zeros(n_hh, dtype=bool)
        dropped[rng.choice(n_hh, size=n_drop, replace=False)] = True
        keep = ~dropped[rec_hh]
        counts = count_transitions(src[keep], dst[keep], n, w[keep])
        P, zero_rows = mle_matrix(counts)
        sparse += bool(set(zero_rows) - set(full_empty))
        samples[r] = regularize_irreducible(P, eta)
    if sparse:
        warnings.warn(f"{sparse} bootstrap replicates lost every departure from some visited state", RuntimeWarning)
    return full, samples


def bootstrap_uncertainty(records: Sequence[TransitionRecord], space: StateSpace, omit_fraction: float = 0.10,
                          replicates: int = 200, seed: int | None = None, eta: float = DEFAULT_ETA,
                          floor: float = 1e-6) -> BootstrapSummary:
    """Entry-wise spread of P over :func:`bootstrap_matrices` replicates."""
    full, samples = bootstrap_matrices(records, space, omit_fraction, replicates, seed, eta)
    std = samples.std(axis=0, ddof=1)
    mask = full > floor
    rel = std[mask] / np.maximum(full[mask], floor)
    return BootstrapSummary(
        std=std,
        frobenius_of_std=float(np.linalg.norm(std)),
        mean_relative_std=float(rel.mean()) if rel.size else 0.0,
        replicates=replicates,
        omit_fraction=omit_fraction,
        seed=seed,
    )


def bootstrap_interval(records: Sequence[TransitionRecord], space: StateSpace, statistic, level: float = 0.90,
                       omit_fraction: float = 0.10, replicates: int = 200, seed: int | None = None,
                       eta: float = DEFAULT_ETA) -> dict:
    """Percentile interval of ``statistic(P)`` over bootstrap replicates."""
    if not 0 < level < 1:
        raise ConfigurationError("level must lie in (0, 1)")
    _, samples = bootstrap_matrices(records, space, omit_fraction, replicates, seed, eta)
    values = np.array([statistic(P) for P in samples], dtype=float)
    tail = (1 - level) / 2
    lo, hi = np.quantile(values, [tail, 1 - tail])
    return {"lower": float(lo), "upper": float(hi), "level": level, "replicates": replicates, "seed": seed}


def homogeneity_check(panel: PanelDataset, space: StateSpace, interval_years: int = 5,
                      eta: float = DEFAULT_ETA, step: int = 1) -> dict:
    """Frobenius distance between transition matrices of disjoint time intervals.

    Transitions are assigned to intervals by their origin wave. The mean
    pairwise distance serves as the stationarity-violation error estimate.
    """
    if interval_years < 1:
        raise ConfigurationError("interval_years must be >= 1")
    records = extract_transitions(panel, step=step, dimensions=space.names)
    start, end = panel.span
    intervals = []
    lo = start
    while lo < end:
        intervals.append((lo, min(lo + interval_years - 1, end)))
        lo += interval_years
    models, skipped = {}, []
    for a, b in intervals:
        sub = [r for r in records if a <= r.from_wave <= b]
        if not sub:
            skipped.append([a, b])
            continue
        models[(a, b)] = estimate_mle(sub, space, eta=eta, period=f"{a}-{b}")
    pairs = []
    for (ia, ma), (ib, mb) in itertools.combinations(models.items(), 2):
        pairs.append({"a": list(ia), "b": list(ib), "frobenius": float(np.linalg.norm(ma.P - mb.P))})
    if not pairs:
        warnings.warn("homogeneity check needs at least two populated intervals", RuntimeWarning)
    norms = [p["frobenius"] for p in pairs]
    return {
        "interval_years": interval_years,
        "intervals": [list(k) for k in models],
        "transitions": {f"{a}-{b}": int(m.counts.sum()) for (a, b), m in models.items()},
        "skipped": skipped,
        "pairs": pairs,
        "max": max(norms) if norms else None,
        "mean": float(np.mean(norms)) if norms else None,
    }


def memory_length_comparison(panel: PanelDataset, space: StateSpace, orders: Sequence[int] = (1, 2, 3),
                             holdout_sequences: int = 5000, seed: int | None = None,
                             eta: float = DEFAULT_ETA) -> dict[int, float]:
    """Mean per-step sequence probability under Markov models of several orders.

    Household sequences are drawn with replacement from runs long enough for
    the highest usable order. Every order scores the same target steps, and
    a sequence's score is the geometric mean of its per-step probabilities.
    """
    records = extract_transitions(panel, dimensions=space.names)
    runs = household_runs(records)
    src, dst, _ = _record_states(records, space)
    pos = {id(r): i for i, r in enumerate(records)}
    seqs = []
    for run in runs:
        idx = [pos[id(r)] for r in run]
        seqs.append([int(src[idx[0]])] + [int(dst[i]) for i in idx])
    longest = max((len(s) for s in seqs), default=0)
    usable = sorted(k for k in orders if longest >= k + 1)
    for k in sorted(set(orders) - set(usable)):
        logger.warning("order %d skipped: no household run of %d waves", k, k + 1)
    if not usable:
        return {}
    kmax = usable[-1]
    models = {k: estimate_mle(records, space, order=k, eta=eta) for k in usable}
    pool = [s for s in seqs if len(s) >= kmax + 1]
    rng = np.random.default_rng(seed)
    picks = rng.integers(len(pool), size=holdout_sequences)
    n = space.n_states
    scores = {k: np.empty(holdout_sequences) for k in usable}
    for j, p in enumerate(picks):
        seq = pool[p]
        for k in usable:
            radix = n ** np.arange(k - 1, -1, -1)
            logp = 0.0
            for t in range(kmax, len(seq)):
                a = int(np.dot(seq[t - k:t], radix))
                b = int(np.dot(seq[t - k + 1:t + 1], radix))
                logp += np.log(models[k].P[a, b])
            scores[k][j] = np.exp(logp / (len(seq) - kmax))
    return {k: float(v.mean()) for k, v in scores.items()}
