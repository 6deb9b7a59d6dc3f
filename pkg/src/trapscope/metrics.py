"""Mobility and trappedness measures on a transition matrix."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ArgumentError, ConfigurationError, DomainError, NumericalError
from .landscape import as_matrix, stationary_distribution

DEFAULT_EPSILON = 0.05
DEFAULT_RATE = 0.1
MIXING_CAP = 10**6
NORMS = ("tv", "l1", "l2")


def _distance(rows, pi, norm):
    diff = rows - pi[None, :]
    if norm == "tv":
        return 0.5 * np.abs(diff).sum(axis=1)
    if norm == "l1":
        return np.abs(diff).sum(axis=1)
    if norm == "l2":
        return np.sqrt((diff**2).sum(axis=1))
    raise ArgumentError(f"unknown norm {norm!r}; expected one of {NORMS}")


def mixing_time(model, epsilon: float = DEFAULT_EPSILON, norm: str = "tv", cap: int = MIXING_CAP, pi=None):
    """Smallest t with max_x ||P^t(x, .) - pi|| < epsilon.

    Returns an int, or ``math.inf`` when the chain has not mixed by ``cap``
    steps. For the TV and L1 norms the worst-case distance is nonincreasing
    in t, so P^t is located by repeated squaring followed by binary lifting.
    The L2 norm is stepped one power at a time.
    """
    P = as_matrix(model)
    if pi is None:
        pi = stationary_distribution(P)
    n = P.shape[0]

    def worst(Q):
        return _distance(Q, pi, norm).max()

    if worst(np.eye(n)) < epsilon:
        return 0
    if norm == "l2":
        Q = P.copy()
        for t in range(1, cap + 1):
            if worst(Q) < epsilon:
                return t
            Q = Q @ P
        return math.inf

    powers = [P]  # powers[j] = P^(2^j)
    while worst(powers[-1]) >= epsilon:
        if 2 ** (len(powers) - 1) >= cap:
            return math.inf
        Q = powers[-1] @ powers[-1]
        powers.append(Q / Q.sum(axis=1, keepdims=True))
    if len(powers) == 1:
        return 1
    lo = 2 ** (len(powers) - 2)
    Q = powers[-2]
    for j in range(len(powers) - 3, -1, -1):
        cand = Q @ powers[j]
        if worst(cand) >= epsilon:
            Q = cand
            lo += 2**j
    tau = lo + 1
    return tau if tau <= cap else math.inf


def tau_mix_transform(tau, k: float = DEFAULT_RATE) -> float:
    """Bounded transform 1 - exp(-k tau); an infinite tau maps to 1."""
    if not k > 0:
        raise ConfigurationError("transform rate k must be positive")
    if tau is None or math.isinf(tau):
        return 1.0
    if tau < 0:
        raise ArgumentError("tau must be nonnegative")
    return -math.expm1(-k * tau)


def mfpt(model) -> np.ndarray:
    """Mean first-passage times M[i, j] (steps); the diagonal is 0.

    Column j solves m_i = 1 + sum_{l != j} p_il m_l for every i != j.
    """
    P = as_matrix(model)
    n = P.shape[0]
    M = np.zeros((n, n))
    for j in range(n):
        others = np.r_[0:j, j + 1:n]
        A = np.eye(n - 1) - P[np.ix_(others, others)]
        try:
            M[others, j] = np.linalg.solve(A, np.ones(n - 1))
        except np.linalg.LinAlgError as exc:
            raise NumericalError(f"singular first-passage system for target {j}") from exc
    return M


def _start_weights(P, A, weighting, pi):
    A = np.asarray(A, dtype=int)
    if weighting == "uniform":
        return np.full(A.size, 1.0 / A.size)
    if weighting != "stationary":
        raise ArgumentError(f"unknown start weighting {weighting!r}")
    if pi is None:
        pi = stationary_distribution(P)
    w = np.asarray(pi)[A]
    return w / w.sum()


def _check_sets(n, A, B):
    A = np.unique(np.asarray(A, dtype=int))
    B = np.unique(np.asarray(B, dtype=int))
    if A.size == 0 or B.size == 0:
        raise ArgumentError("start and target sets must be nonempty")
    if np.intersect1d(A, B).size:
        raise ArgumentError("start and target sets must be disjoint")
    if A.min() < 0 or B.min() < 0 or max(A.max(), B.max()) >= n:
        raise ArgumentError("state index out of range")
    return A, B


def hitting_times(model, B) -> np.ndarray:
    """Expected steps to first reach set B from every state (0 inside B)."""
    P = as_matrix(model)
    n = P.shape[0]
    B = np.unique(np.asarray(B, dtype=int))
    rest = np.setdiff1d(np.arange(n), B)
    h = np.zeros(n)
    if rest.size:
        A = np.eye(rest.size) - P[np.ix_(rest, rest)]
        try:
            h[rest] = np.linalg.solve(A, np.ones(rest.size))
        except np.linalg.LinAlgError as exc:
            raise NumericalError("singular hitting-time system") from exc
    return h


def mfpt_set(model, A, B, weighting: str = "stationary", pi=None) -> float:
    """Expected first-passage time from set A into set B.

    Starting states are drawn from the stationary distribution restricted to
    A (or uniformly over A with ``weighting="uniform"``).
    """
    P = as_matrix(model)
    A, B = _check_sets(P.shape[0], A, B)
    h = hitting_times(P, B)
    return float(_start_weights(P, A, weighting, pi) @ h[A])


@dataclass
class EscapeDistribution:
    pmf: np.ndarray  # pmf[t-1] = P(T = t)
    mean: float
    tail_mass: float
    lower: float
    upper: float
    quantiles: tuple[float, float] = (0.05, 0.95)

    def to_dict(self) -> dict:
        return {
            "pmf": self.pmf.tolist(),
            "mean": self.mean,
            "tail_mass": self.tail_mass,
            "lower": self.lower,
            "upper": self.upper,
            "quantiles": list(self.quantiles),
        }


def escape_time_distribution(model, A, B, horizon: int, weighting: str = "stationary", pi=None,
                             quantiles=(0.05, 0.95)) -> EscapeDistribution:
    """First-passage time distribution from A into B up to ``horizon`` steps.

    ``mean`` is the truncated mean sum_{t<=H} t P(T=t); ``tail_mass`` is the
    probability of not having escaped by the horizon. Quantiles that are not
    reached within the horizon are reported as ``inf``.
    """
    if horizon < 1:
        raise ArgumentError("horizon must be >= 1")
    P = as_matrix(model)
    n = P.shape[0]
    A, B = _check_sets(n, A, B)
    rest = np.setdiff1d(np.arange(n), B)
    Q = P[np.ix_(rest, rest)]
    exit_prob = P[np.ix_(rest, B)].sum(axis=1)
    u = np.zeros(rest.size)
    u[np.searchsorted(rest, A)] = _start_weights(P, A, weighting, pi)
    pmf = np.empty(horizon)
    for t in range(horizon):
        pmf[t] = u @ exit_prob
        u = u @ Q
    cdf = np.cumsum(pmf)
    steps = np.arange(1, horizon + 1)

    def q(level):
        hit = np.flatnonzero(cdf >= level - 1e-12)
        return float(steps[hit[0]]) if hit.size else math.inf

    return EscapeDistribution(pmf=pmf, mean=float(steps @ pmf), tail_mass=float(max(0.0, 1.0 - cdf[-1])),
                              lower=q(quantiles[0]), upper=q(quantiles[1]), quantiles=tuple(quantiles))


def shorrocks(model) -> float:
    """Shorrocks mobility index (N - trace P) / (N - 1), unclamped."""
    if getattr(model, "order", 1) != 1:
        raise ArgumentError("Shorrocks index needs a first-order model")
    P = as_matrix(model)
    n = P.shape[0]
    if n < 2:
        raise ArgumentError("Shorrocks index undefined for N = 1")
    return float((n - np.trace(P)) / (n - 1))


def kl_divergence(p, q) -> float:
    """D_KL(p || q) with 0 log 0 = 0."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape:
        raise ArgumentError("distributions differ in length")
    support = p > 0
    if (q[support] <= 0).any():
        raise DomainError("q must be positive wherever p is")
    return float(max(0.0, np.sum(p[support] * np.log(p[support] / q[support]))))


def entropy_rate(model, pi=None) -> float:
    """-sum_i pi_i sum_j p_ij log p_ij (nats)."""
    P = as_matrix(model)
    if pi is None:
        pi = stationary_distribution(P)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(P > 0, P * np.log(P), 0.0)
    return float(-(np.asarray(pi) @ terms.sum(axis=1)))


def kemeny_constants(M, pi) -> np.ndarray:
    """sum_j pi_j M_ij for every start i; constant in i for a correct MFPT matrix."""
    return np.asarray(M) @ np.asarray(pi)


@dataclass
class MetricsReport:
    mixing_time: float
    tau_mix: float
    k: float
    epsilon: float
    norm: str
    shorrocks_raw: float
    shorrocks: float
    entropy_rate: float
    mfpt: np.ndarray
    stationarity_error: float | None = None
    extras: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        inf = math.isinf(self.mixing_time)
        return {
            "mixing_time": None if inf else self.mixing_time,
            "mixing_time_infinite": inf,
            "tau_mix": self.tau_mix,
            "k": self.k,
            "epsilon": self.epsilon,
            "norm": self.norm,
            "shorrocks": self.shorrocks,
            "shorrocks_raw": self.shorrocks_raw,
            "entropy_rate": self.entropy_rate,
            "stationarity_error": self.stationarity_error,
            "mfpt": self.mfpt.ravel().tolist(),
            **self.extras,
        }


def compute_metrics(model, epsilon: float = DEFAULT_EPSILON, k: float = DEFAULT_RATE, norm: str = "tv",
                    cap: int = MIXING_CAP, stationarity_error: float | None = None) -> MetricsReport:
    pi = stationary_distribution(model)
    tau = mixing_time(model, epsilon, norm, cap, pi=pi)
    raw = shorrocks(model)
    return MetricsReport(
        mixing_time=tau,
        tau_mix=tau_mix_transform(tau, k),
        k=k,
        epsilon=epsilon,
        norm=norm,
        shorrocks_raw=raw,
        shorrocks=min(max(raw, 0.0), 1.0),
        entropy_rate=entropy_rate(model, pi),
        mfpt=mfpt(model),
        stationarity_error=stationarity_error,
    )
