"""Discretisation of welfare dimensions into a finite product state space."""

from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import (
    ArgumentError,
    DegenerateRangeError,
    IncompleteObservationError,
    ResolutionError,
)

logger = logging.getLogger(__name__)

BINNING_MODES = ("equidistant", "percentile", "ordinal", "fixed")


@dataclass(frozen=True)
class DimensionSpec:
    """A binned dimension.

    ``edges`` holds K+1 strictly increasing reals. Bins are right-open
    except the last, which is closed. Ordinal dimensions also keep their
    ``levels``; their edges sit halfway between consecutive levels.
    """

    name: str
    binning: str
    edges: tuple[float, ...]
    levels: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.binning not in BINNING_MODES:
            raise ArgumentError(f"unknown binning mode {self.binning!r}")
        e = np.asarray(self.edges, dtype=float)
        if e.ndim != 1 or len(e) < 2 or not np.all(np.diff(e) > 0):
            raise ResolutionError(f"{self.name}: edges must be strictly increasing, got {list(self.edges)}")

    @property
    def k(self) -> int:
        return len(self.edges) - 1

    def bin_of(self, values):
        """Bin index for each value, clamping out-of-range values to the end bins."""
        v = np.asarray(values, dtype=float)
        if np.isnan(v).any():
            raise IncompleteObservationError(f"{self.name}: missing value")
        idx = np.searchsorted(np.asarray(self.edges), v, side="right") - 1
        return np.clip(idx, 0, self.k - 1)

    def midpoints(self) -> np.ndarray:
        if self.levels is not None:
            return np.asarray(self.levels, dtype=float)
        e = np.asarray(self.edges)
        return 0.5 * (e[:-1] + e[1:])

    def to_dict(self) -> dict:
        d = {"name": self.name, "binning": self.binning, "k": self.k, "edges": [float(x) for x in self.edges]}
        if self.levels is not None:
            d["levels"] = [float(x) for x in self.levels]
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "DimensionSpec":
        levels = d.get("levels")
        return cls(d["name"], d["binning"], tuple(float(x) for x in d["edges"]),
                   tuple(float(x) for x in levels) if levels is not None else None)


def _clean_sample(values) -> np.ndarray:
    v = np.asarray(values, dtype=float).ravel()
    return v[~np.isnan(v)]


def fit_equidistant(values, k: int, name: str = "x") -> DimensionSpec:
    """K equal-width bins spanning the sample range."""
    if k < 2:
        raise ArgumentError("k must be >= 2")
    v = _clean_sample(values)
    if v.size == 0:
        raise DegenerateRangeError(f"{name}: empty sample")
    lo, hi = float(v.min()), float(v.max())
    if not lo < hi:
        raise DegenerateRangeError(f"{name}: constant sample ({lo})")
    width = (hi - lo) / k
    edges = [lo + i * width for i in range(k)] + [hi]
    if not all(a < b for a, b in zip(edges, edges[1:])):
        raise DegenerateRangeError(f"{name}: range [{lo}, {hi}] is too narrow for {k} bins")
    return DimensionSpec(name, "equidistant", tuple(edges))


def fit_percentile(values, k: int, name: str = "x") -> DimensionSpec:
    """Equal-mass bins at the empirical i/K quantiles.

    Quantiles falling between two order statistics take their midpoint.
    """
    if k < 2:
        raise ArgumentError("k must be >= 2")
    v = _clean_sample(values)
    if np.unique(v).size < k:
        raise ResolutionError(f"{name}: need at least {k} distinct values, got {np.unique(v).size}")
    inner = np.quantile(v, np.arange(1, k) / k, method="midpoint")
    edges = np.concatenate([[v.min()], inner, [v.max()]])
    if not np.all(np.diff(edges) > 0):
        raise ResolutionError(f"{name}: ties collapse percentile edges {edges.tolist()}")
    return DimensionSpec(name, "percentile", tuple(float(x) for x in edges))


def fit_ordinal(values=None, name: str = "x", levels: Sequence[float] | None = None) -> DimensionSpec:
    """One bin per ordinal level (health 1-5, ISCED levels, ...)."""
    if levels is None:
        levels = np.unique(_clean_sample(values))
    levels = np.asarray(sorted(float(x) for x in levels))
    if levels.size < 2:
        raise ResolutionError(f"{name}: ordinal dimension needs at least 2 levels")
    mids = 0.5 * (levels[:-1] + levels[1:])
    edges = np.concatenate([[levels[0] - 0.5 * (levels[1] - levels[0])], mids,
                            [levels[-1] + 0.5 * (levels[-1] - levels[-2])]])
    return DimensionSpec(name, "ordinal", tuple(float(x) for x in edges), tuple(float(x) for x in levels))


def fit_dimension(values, name: str, binning: str = "percentile", k: int = 5, levels=None) -> DimensionSpec:
    if binning == "equidistant":
        return fit_equidistant(values, k, name)
    if binning == "percentile":
        return fit_percentile(values, k, name)
    if binning == "ordinal":
        return fit_ordinal(values, name, levels)
    raise ArgumentError(f"cannot fit binning mode {binning!r}")


@dataclass(frozen=True)
class StateSpace:
    """Row-major product of binned dimensions."""

    dims: tuple[DimensionSpec, ...]
    _shape: tuple[int, ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "dims", tuple(self.dims))
        object.__setattr__(self, "_shape", tuple(d.k for d in self.dims))
        if not self.dims:
            raise ArgumentError("state space needs at least one dimension")
        if len({d.name for d in self.dims}) != len(self.dims):
            raise ArgumentError("duplicate dimension names")
        if self.n_states < 2:
            raise ArgumentError("state space needs N >= 2")

    @property
    def shape(self) -> tuple[int, ...]:
        return self._shape

    @property
    def n_states(self) -> int:
        return int(np.prod(self._shape))

    N = n_states

    @property
    def names(self) -> list[str]:
        return [d.name for d in self.dims]

    def dim(self, name: str) -> DimensionSpec:
        for d in self.dims:
            if d.name == name:
                return d
        raise KeyError(name)

    def axis(self, name: str) -> int:
        return self.names.index(name)

    def encode(self, multi_index) -> np.ndarray | int:
        return np.ravel_multi_index(tuple(np.asarray(multi_index).T), self._shape)

    def decode(self, flat) -> np.ndarray:
        """Multi-index for each flat index, shape ``(..., ndim)``."""
        return np.stack(np.unravel_index(np.asarray(flat), self._shape), axis=-1)

    def assign_state(self, values: Mapping[str, float]) -> int:
        multi = []
        for d in self.dims:
            if d.name not in values:
                raise IncompleteObservationError(f"missing dimension {d.name!r}")
            multi.append(int(d.bin_of(values[d.name])))
        return int(np.ravel_multi_index(tuple(multi), self._shape))

    def assign_many(self, values: Sequence[Mapping[str, float]] | np.ndarray) -> np.ndarray:
        """Vectorised :meth:`assign_state`; accepts maps or an ``(n, ndim)`` array."""
        if isinstance(values, np.ndarray):
            arr = values.reshape(len(values), -1)
        else:
            try:
                arr = np.array([[v[d.name] for d in self.dims] for v in values], dtype=float)
            except KeyError as exc:
                raise IncompleteObservationError(f"missing dimension {exc.args[0]!r}") from None
            arr = arr.reshape(len(values), len(self.dims))
        bins = [d.bin_of(arr[:, i]) for i, d in enumerate(self.dims)]
        return np.ravel_multi_index(tuple(bins), self._shape).astype(np.int64)

    def subspace(self, names: Sequence[str]) -> "StateSpace":
        return StateSpace(tuple(self.dim(n) for n in names))

    def to_dict(self) -> dict:
        return {"dims": [d.to_dict() for d in self.dims], "n_states": self.n_states}

    @classmethod
    def from_dict(cls, d: Mapping) -> "StateSpace":
        return cls(tuple(DimensionSpec.from_dict(x) for x in d["dims"]))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_json(cls, text: str) -> "StateSpace":
        return cls.from_dict(json.loads(text))

    def digest(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()[:16]


def fit_state_space(panel, specs: Sequence[Mapping]) -> StateSpace:
    """Fit one shared grid on every complete observation of ``panel``.

    ``specs`` entries look like ``{"name": "income", "binning": "percentile", "k": 5}``.
    """
    names = [s["name"] for s in specs]
    complete = [o for o in panel.observations if o.is_complete(names)]
    dims = []
    for s in specs:
        sample = [o.values[s["name"]] for o in complete]
        dims.append(fit_dimension(sample, s["name"], s.get("binning", "percentile"), int(s.get("k", 5)),
                                  s.get("levels")))
    return StateSpace(tuple(dims))


def binning_diagnostics(panel, dim: str, k_list: Sequence[int], reference_k: int = 5, eta: float = 1e-8):
    """Resolution diagnostics for one dimension under percentile binning.

    For each K the 1-D chain is estimated; its flows are merged into
    ``reference_k`` percentile groups and the stationary distribution of the
    merged chain is compared (KL) with the ``reference_k`` chain. The entropy
    rate is reported divided by ``log K``.
    """
    from .estimation import estimate_mle
    from .landscape import stationary_distribution
    from .metrics import entropy_rate, kl_divergence
    from .panel import extract_transitions

    records = extract_transitions(panel, dimensions=[dim])
    sample = [o.values[dim] for o in panel.observations if o.is_complete([dim])]

    def fit(k):
        space = StateSpace((fit_percentile(sample, k, dim),))
        model = estimate_mle(records, space, eta=eta)
        return model, stationary_distribution(model)

    if any(k < reference_k for k in k_list):
        raise ArgumentError(f"every K must be >= {reference_k} for the KL projection")
    _, pi_ref = fit(reference_k)
    report = {}
    for k in k_list:
        model, pi = fit(k)
        if k == reference_k:
            pi_agg = pi
        else:
            groups = np.arange(k) * reference_k // k
            agg = np.zeros((k, reference_k))
            agg[np.arange(k), groups] = 1.0
            flows = agg.T @ (pi[:, None] * model.P) @ agg
            pi_agg = stationary_distribution(flows / flows.sum(axis=1, keepdims=True))
        n = len(records)
        reliable = n >= 30 * k * k
        if not reliable:
            logger.warning("%s K=%d: %d transitions < 30*K^2, diagnostic unreliable", dim, k, n)
        report[int(k)] = {
            "kl_to_reference": float(kl_divergence(pi_agg, pi_ref)),
            "normalized_entropy_rate": float(entropy_rate(model.P, pi) / math.log(k)),
            "transitions": n,
            "reliable": reliable,
        }
    return report
