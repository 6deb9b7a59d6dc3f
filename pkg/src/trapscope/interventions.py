"""Counterfactual interventions: move households in welfare space and propagate them."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import ArgumentError
from .landscape import as_matrix, stationary_distribution
from .states import StateSpace

DEFAULT_HORIZON = 5
DEFAULT_PERCENTILE = 0.25
DEFAULT_BOOSTS = (5, 10, 20, 40)


def welfare_rank(space: StateSpace, weights: Mapping[str, float] | None = None) -> np.ndarray:
    """Weighted mean of normalised bin indices, one value in [0, 1] per state."""
    if weights is None:
        weights = {n: 1.0 / len(space.dims) for n in space.names}
    total = sum(weights.values())
    if total <= 0:
        raise ArgumentError("welfare weights must sum to a positive number")
    coords = space.decode(np.arange(space.n_states))
    rank = np.zeros(space.n_states)
    for axis, d in enumerate(space.dims):
        rank += weights.get(d.name, 0.0) / total * coords[:, axis] / (d.k - 1)
    return rank


def lowest_welfare_states(space: StateSpace, rank=None) -> list[int]:
    if rank is None:
        rank = welfare_rank(space)
    return np.flatnonzero(np.isclose(rank, rank.min(), rtol=0, atol=1e-12)).tolist()


def weighted_median(values, weights) -> float:
    order = np.argsort(values, kind="stable")
    cum = np.cumsum(np.asarray(weights)[order])
    return float(np.asarray(values)[order][np.searchsorted(cum, 0.5 * cum[-1] - 1e-12)])


def poverty_return_risk(model, start: int, poverty_set: Sequence[int], horizon: int = DEFAULT_HORIZON,
                        include_start: bool = True, variant: str = "hitting") -> float:
    """Probability of being in ``poverty_set`` within ``horizon`` steps.

    ``variant="hitting"`` counts any visit at steps 1..horizon (the poverty
    set is made absorbing after the first step); ``"occupancy"`` counts only
    the state at step ``horizon``. With ``include_start`` a start inside the
    set counts as a visit at t = 0 and the risk is 1.
    """
    if horizon < 1:
        raise ArgumentError("horizon must be >= 1")
    P = as_matrix(model)
    poor = np.zeros(P.shape[0], dtype=bool)
    poor[list(poverty_set)] = True
    if include_start and poor[start]:
        return 1.0
    if variant == "occupancy":
        u = np.linalg.matrix_power(P, horizon)[start]
        return float(u[poor].sum())
    if variant != "hitting":
        raise ArgumentError(f"unknown risk variant {variant!r}")
    absorbing = P.copy()
    absorbing[poor] = 0.0
    absorbing[poor, poor] = 1.0
    u = P[start].copy()
    for _ in range(horizon - 1):
        u = u @ absorbing
    return float(min(1.0, u[poor].sum()))


@dataclass
class InterventionArm:
    name: str
    overrides: dict[str, int] = field(default_factory=dict)


@dataclass
class InterventionReport:
    risks: dict[str, float]
    delta: dict[str, float]
    super_additivity_gap: float
    arms: list[InterventionArm]
    starts: dict[str, int]
    poverty_set: list[int]
    percentile: float
    horizon: int
    retention: dict | None = None

    def to_dict(self) -> dict:
        return {
            "risks": self.risks,
            "delta": self.delta,
            "super_additivity_gap": self.super_additivity_gap,
            "arms": [{"name": a.name, "overrides": a.overrides} for a in self.arms],
            "starts": self.starts,
            "poverty_set": self.poverty_set,
            "percentile": self.percentile,
            "horizon": self.horizon,
            "retention": self.retention,
        }


def marginal(pi, space: StateSpace, dim: str) -> np.ndarray:
    axis = space.axis(dim)
    grid = np.asarray(pi).reshape(space.shape)
    other = tuple(a for a in range(grid.ndim) if a != axis)
    return grid.sum(axis=other)


def percentile_bin(pi, space: StateSpace, dim: str, q: float) -> int:
    """Bin containing quantile ``q`` of a dimension's stationary marginal."""
    cdf = np.cumsum(marginal(pi, space, dim))
    return int(min(np.searchsorted(cdf, q - 1e-12), len(cdf) - 1))


def run_arms(model, space: StateSpace, poverty_set: Sequence[int] | None = None,
             percentile: float = DEFAULT_PERCENTILE, horizon: int = DEFAULT_HORIZON,
             income_dim: str = "income", health_dim: str = "health", variant: str = "hitting") -> InterventionReport:
    """Baseline, income-only, health-only and combined arms.

    Every arm starts from the lowest-welfare state; treated dimensions are
    moved to the bin holding ``percentile`` of their stationary marginal.
    Risk is the probability of being back in the poverty set at some step
    1..horizon, so the baseline carries its genuine return probability.
    """
    if not 0 < percentile < 1:
        raise ArgumentError("percentile must lie in (0, 1)")
    if getattr(model, "order", 1) != 1:
        raise ArgumentError("interventions need a first-order model")
    for d in (income_dim, health_dim):
        if d not in space.names:
            raise ArgumentError(f"state space has no {d!r} dimension")
    pi = stationary_distribution(model)
    rank = welfare_rank(space)
    if poverty_set is None:
        poverty_set = lowest_welfare_states(space, rank)
    poverty_set = sorted(int(s) for s in poverty_set)
    base = space.decode(int(np.argmin(rank))).astype(int)
    targets = {d: percentile_bin(pi, space, d, percentile) for d in (income_dim, health_dim)}
    arms = [
        InterventionArm("baseline"),
        InterventionArm("income_only", {income_dim: targets[income_dim]}),
        InterventionArm("health_only", {health_dim: targets[health_dim]}),
        InterventionArm("combined", {income_dim: targets[income_dim], health_dim: targets[health_dim]}),
    ]
    risks, starts = {}, {}
    for arm in arms:
        multi = base.copy()
        for d, b in arm.overrides.items():
            multi[space.axis(d)] = b
        start = int(space.encode(multi))
        starts[arm.name] = start
        risks[arm.name] = poverty_return_risk(model, start, poverty_set, horizon, include_start=False, variant=variant)
    delta = {a.name: risks["baseline"] - risks[a.name] for a in arms[1:]}
    gap = delta["combined"] - (delta["income_only"] + delta["health_only"])
    return InterventionReport(risks=risks, delta=delta, super_additivity_gap=gap, arms=arms, starts=starts,
                              poverty_set=poverty_set, percentile=percentile, horizon=horizon)


def retention_curve(model, space: StateSpace, boost_sizes: Sequence[float] = DEFAULT_BOOSTS,
                    health_quintiles: Sequence[int] = (1, 2, 3, 4, 5), horizon: int = DEFAULT_HORIZON,
                    income_dim: str = "income", health_dim: str = "health", variant: str = "occupancy") -> dict:
    """Probability of sitting above median welfare after an income boost.

    Rows are starting health quintiles, columns boost sizes in percentile
    points added to the midpoint percentile of the lowest income bin.
    ``variant="occupancy"`` looks at step ``horizon`` only; ``"survival"``
    requires being above the median at every step 1..horizon.
    """
    if horizon < 1:
        raise ArgumentError("horizon must be >= 1")
    if space.dim(health_dim).k != 5:
        raise ArgumentError("retention curves need a health dimension with 5 bins")
    P = as_matrix(model)
    pi = stationary_distribution(P)
    rank = welfare_rank(space)
    above = rank > weighted_median(rank, pi) + 1e-12
    cdf = np.cumsum(marginal(pi, space, income_dim))
    base_pct = 0.5 * cdf[0]
    Ph = np.linalg.matrix_power(P, horizon)
    low = space.decode(int(np.argmin(rank))).astype(int)
    values = np.zeros((len(health_quintiles), len(boost_sizes)))
    income_bins, clamped = [], []
    for c, s in enumerate(boost_sizes):
        p = base_pct + s / 100.0
        clamped.append(bool(p > 1.0))
        b = int(min(np.searchsorted(cdf, min(p, 1.0) - 1e-12), len(cdf) - 1))
        income_bins.append(b)
        for r, q in enumerate(health_quintiles):
            multi = low.copy()
            multi[space.axis(income_dim)] = b
            multi[space.axis(health_dim)] = q - 1
            start = int(space.encode(multi))
            if variant == "occupancy":
                values[r, c] = Ph[start, above].sum()
            elif variant == "survival":
                u = P[start] * above
                for _ in range(horizon - 1):
                    u = (u @ P) * above
                values[r, c] = u.sum()
            else:
                raise ArgumentError(f"unknown retention variant {variant!r}")
    return {
        "values": values,
        "health_quintiles": list(health_quintiles),
        "boost_sizes": list(boost_sizes),
        "income_bins": income_bins,
        "clamped": clamped,
        "baseline_percentile": float(base_pct),
        "horizon": horizon,
        "variant": variant,
    }


def retention_csv(curve: dict) -> str:
    lines = ["health_quintile," + ",".join(f"boost_{s:g}" for s in curve["boost_sizes"])]
    for q, row in zip(curve["health_quintiles"], curve["values"]):
        lines.append(f"{q}," + ",".join(repr(float(x)) for x in row))
    return "\n".join(lines) + "\n"
