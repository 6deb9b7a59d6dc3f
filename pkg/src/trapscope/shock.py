"""Shock impact and recovery between a pre-shock and a shock-period kernel."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ArgumentError
from .landscape import as_matrix, stationary_distribution
from .metrics import kl_divergence, mfpt_set

DEFAULT_KL_EPSILON = 1e-3
DEFAULT_APPLICATIONS = 3
DEFAULT_RECOVERY_CAP = 500


def _pair(pre, shock):
    P, S = as_matrix(pre), as_matrix(shock)
    if P.shape != S.shape:
        raise ArgumentError(f"models differ in state count: {P.shape[0]} vs {S.shape[0]}")
    h1, h2 = getattr(pre, "space_hash", None), getattr(shock, "space_hash", None)
    if h1 and h2 and h1 != h2:
        raise ArgumentError("models were estimated on different state spaces")
    return P, S


@dataclass
class ShockReport:
    recovery_time: float
    epsilon: float
    applications: int
    cap: int
    perturbed: np.ndarray
    kl_path: np.ndarray
    mfpt_ratio: float | None = None
    net_mobility_change: float | None = None

    def to_dict(self) -> dict:
        inf = math.isinf(self.recovery_time)
        return {
            "recovery_time": None if inf else int(self.recovery_time),
            "recovery_time_infinite": inf,
            "epsilon": self.epsilon,
            "shock_applications": self.applications,
            "cap": self.cap,
            "perturbed_pi": self.perturbed.tolist(),
            "kl_path": self.kl_path.tolist(),
            "mfpt_ratio": self.mfpt_ratio,
            "net_mobility_change": self.net_mobility_change,
            "net_mobility_definition": "sign-weighted welfare-rank flow of the shock kernel minus the pre kernel, "
                                       "both applied to the mean of their stationary distributions and normalised "
                                       "by the combined moving mass",
        }


def recovery_time(pre, shock, epsilon: float = DEFAULT_KL_EPSILON, applications: int = DEFAULT_APPLICATIONS,
                  cap: int = DEFAULT_RECOVERY_CAP) -> ShockReport:
    """Steps the pre-shock kernel needs to bring the shocked distribution back.

    The pre-shock steady state is pushed through the shock kernel
    ``applications`` times, then iterated under the pre-shock kernel until
    D_KL(pi || pi_t) < epsilon.
    """
    P, S = _pair(pre, shock)
    pi = stationary_distribution(P)
    perturbed = pi @ np.linalg.matrix_power(S, applications)
    current = perturbed
    path = []
    t_star = math.inf
    for t in range(cap + 1):
        # a shock that empties a state makes the divergence infinite until the pre kernel refills it
        d = kl_divergence(pi, current) if (current[pi > 0] > 0).all() else math.inf
        path.append(d)
        if d < epsilon:
            t_star = t
            break
        current = current @ P
    return ShockReport(recovery_time=t_star, epsilon=epsilon, applications=applications, cap=cap,
                       perturbed=perturbed, kl_path=np.array(path))


def mfpt_ratio(pre, shock, A, B, weighting: str = "stationary") -> float:
    """Set-escape time under the shock kernel relative to the pre-shock kernel."""
    P, S = _pair(pre, shock)
    return mfpt_set(S, A, B, weighting) / mfpt_set(P, A, B, weighting)


def net_flow(model, rank) -> tuple[float, float]:
    """Own-stationary sign-weighted flow in welfare rank and the total moving mass.

    For a reversible chain pi_i p_ij = pi_j p_ji, so the signed sum is exactly
    zero; every 2-state and every birth-death chain is reversible.
    """
    P = as_matrix(model)
    pi = stationary_distribution(P)
    rank = np.asarray(rank, dtype=float)
    sign = np.sign(rank[None, :] - rank[:, None])
    flows = pi[:, None] * P
    return float((flows * sign).sum()), float((flows * np.abs(sign)).sum())


def net_mobility_change(pre, shock, welfare_rank) -> float:
    """Normalised change in net upward flow from pre to shock.

    Both kernels act on the same population, the mean of their stationary
    distributions w, so the value reflects how the kernel moves people and
    not where each kernel's own steady state sits (weighting each kernel by
    its own pi cancels all net flow on reversible chains). The result is

        sum_ij w_i (s_ij - p_ij) sign(r_j - r_i) / sum_ij w_i (s_ij + p_ij) |sign(r_j - r_i)|

    which lies in [-1, 1], is negative for net downward movement and is
    antisymmetric under swapping the two kernels.
    """
    P, S = _pair(pre, shock)
    w = 0.5 * (stationary_distribution(P) + stationary_distribution(S))
    rank = np.asarray(welfare_rank, dtype=float)
    if rank.shape != (P.shape[0],):
        raise ArgumentError("welfare rank needs one value per state")
    sign = np.sign(rank[None, :] - rank[:, None])
    moved = w[:, None] * (S - P)
    mass = (w[:, None] * (S + P) * np.abs(sign)).sum()
    return 0.0 if mass == 0 else float((moved * sign).sum() / mass)


def shock_report(pre, shock, A, B, welfare_rank, epsilon: float = DEFAULT_KL_EPSILON,
                 applications: int = DEFAULT_APPLICATIONS, cap: int = DEFAULT_RECOVERY_CAP) -> ShockReport:
    report = recovery_time(pre, shock, epsilon, applications, cap)
    report.mfpt_ratio = mfpt_ratio(pre, shock, A, B)
    report.net_mobility_change = net_mobility_change(pre, shock, welfare_rank)
    return report
