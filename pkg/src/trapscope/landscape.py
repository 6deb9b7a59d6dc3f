"""Stationary distributions, potential landscapes, basins and the curl diagnostic."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .errors import ArgumentError, DomainError, NumericalError

TIE_DECIMALS = 12


def as_matrix(model) -> np.ndarray:
    """Accept a :class:`TransitionModel` or anything array-like."""
    return np.asarray(getattr(model, "P", model), dtype=float)


def stationary_distribution(model, tol: float = 1e-12, max_iter: int = 200) -> np.ndarray:
    """Left fixed vector of P by power iteration from the uniform vector.

    The iterate is advanced by P, P^2, P^4, ... (repeated squaring) so that
    nearly decomposable chains converge in a few dozen steps. Iteration
    stops once the infinity-norm residual ``|pi P - pi|`` is below ``tol``;
    otherwise ``(P^T - I) pi = 0`` with the normalisation row is solved
    directly.
    """
    P = as_matrix(model)
    n = P.shape[0]
    pi = np.full(n, 1.0 / n)
    Q = P.copy()
    residual = np.abs(pi @ P - pi).max()
    polish = 0
    for _ in range(max_iter):
        if residual < tol:
            # the error in pi can exceed the residual by 1/(1 - lambda_2); squaring is cheap, so keep
            # going until the residual stops shrinking
            polish += 1
            if polish > 3 or residual == 0:
                return pi
        nxt = pi @ Q
        nxt /= nxt.sum()
        nxt_residual = np.abs(nxt @ P - nxt).max()
        if polish and nxt_residual >= residual:
            return pi
        pi, residual = nxt, nxt_residual
        Q = Q @ Q
        Q /= Q.sum(axis=1, keepdims=True)
    A = np.vstack([P.T - np.eye(n), np.ones((1, n))])
    b = np.zeros(n + 1)
    b[-1] = 1.0
    direct, *_ = np.linalg.lstsq(A, b, rcond=None)
    direct = np.clip(direct, 0.0, None)
    direct /= direct.sum()
    direct_residual = np.abs(direct @ P - direct).max()
    if direct_residual > 1e-10:
        raise NumericalError("stationary distribution did not converge", min(residual, direct_residual))
    return direct


def stationary_direct(model) -> np.ndarray:
    """Stationary distribution from the eigenvector of P^T at eigenvalue 1."""
    P = as_matrix(model)
    w, v = np.linalg.eig(P.T)
    vec = np.real(v[:, np.argmin(np.abs(w - 1.0))])
    return vec / vec.sum()


def potential(pi) -> np.ndarray:
    """Phi_i = -log pi_i."""
    pi = np.asarray(pi, dtype=float)
    if (pi <= 0).any():
        raise DomainError("potential needs a strictly positive distribution")
    return -np.log(pi)


def _runs(values):
    """Maximal runs of equal (rounded) values as ``(start, stop_inclusive, value)``."""
    v = np.round(np.asarray(values, dtype=float), TIE_DECIMALS)
    runs = []
    start = 0
    for i in range(1, len(v) + 1):
        if i == len(v) or v[i] != v[start]:
            runs.append((start, i - 1, v[start]))
            start = i
    return runs


def find_fixed_points_1d(phi) -> list[dict]:
    """Stable (local minimum) and unstable (local maximum) bins of a 1-D potential.

    Plateaus collapse to their midpoint bin. An end bin counts as stable
    when it lies below its only neighbour and is never reported unstable.
    """
    phi = np.asarray(phi, dtype=float)
    if phi.ndim != 1 or phi.size < 3:
        raise ArgumentError("need a 1-D potential with at least 3 bins")
    runs = _runs(phi)
    points = []
    for r, (lo, hi, val) in enumerate(runs):
        left = runs[r - 1][2] if r > 0 else None
        right = runs[r + 1][2] if r + 1 < len(runs) else None
        neighbours = [x for x in (left, right) if x is not None]
        mid = (lo + hi) // 2
        if all(val < x for x in neighbours):
            points.append({"index": mid, "kind": "stable"})
        elif left is not None and right is not None and val > left and val > right:
            points.append({"index": mid, "kind": "unstable"})
    return points


def _neighbours(shape, connectivity=4):
    """Neighbour lists for every flat index of a grid."""
    ndim = len(shape)
    offsets = []
    if connectivity == 4 or ndim == 1:
        for ax in range(ndim):
            for step in (-1, 1):
                off = [0] * ndim
                off[ax] = step
                offsets.append(off)
    elif connectivity == 8:
        for off in np.ndindex(*([3] * ndim)):
            off = [o - 1 for o in off]
            if any(off):
                offsets.append(off)
    else:
        raise ArgumentError("connectivity must be 4 or 8")
    n = int(np.prod(shape))
    coords = np.stack(np.unravel_index(np.arange(n), shape), axis=-1)
    nbrs = []
    for c in coords:
        lst = []
        for off in offsets:
            q = c + off
            if np.all(q >= 0) and np.all(q < shape):
                lst.append(int(np.ravel_multi_index(tuple(q), shape)))
        nbrs.append(lst)
    return nbrs


def descend(phi, shape, connectivity: int = 4) -> np.ndarray:
    """Terminal local minimum of the steepest-descent path from every cell.

    Cells of equal potential (rounded to 1e-12) that touch form a plateau.
    A plateau with a strictly lower neighbour drains to its lowest
    neighbour (ties broken by flat index); a plateau without one is a
    minimum and is labelled by its smallest flat index. Potentials strictly
    decrease along a path, so no cycles are possible.
    """
    phi = np.round(np.asarray(phi, dtype=float).ravel(), TIE_DECIMALS)
    n = phi.size
    nbrs = _neighbours(tuple(shape), connectivity)
    comp = np.arange(n)

    def find(i):
        while comp[i] != i:
            comp[i] = comp[comp[i]]
            i = comp[i]
        return i

    for i in range(n):
        for j in nbrs[i]:
            if phi[j] == phi[i]:
                a, b = find(i), find(j)
                if a != b:
                    comp[max(a, b)] = min(a, b)
    root = np.array([find(i) for i in range(n)])  # smallest index of each plateau
    exit_to = {}
    for i in range(n):
        for j in nbrs[i]:
            if phi[j] < phi[i]:
                r = root[i]
                if r not in exit_to or (phi[j], j) < (phi[exit_to[r]], exit_to[r]):
                    exit_to[r] = j
    terminal = np.empty(n, dtype=np.int64)
    memo = {}
    for i in range(n):
        path = []
        r = root[i]
        while r in exit_to and r not in memo:
            path.append(r)
            r = root[exit_to[r]]
        end = memo.get(r, r)
        for q in path:
            memo[q] = end
        memo[r] = end
        terminal[i] = end
    return terminal


def basins_2d(phi, shape=None, connectivity: int = 4, quantiles=None):
    """Basin label per cell and equipotential contour levels.

    Parameters
    ----------
    phi : array_like
        Potential on the grid, flat row-major or already shaped.
    shape : tuple, optional
        Grid shape when ``phi`` is flat.
    connectivity : {4, 8}
    quantiles : sequence of float, optional
        Quantiles of phi used as contour levels (default deciles).

    Returns
    -------
    labels : ndarray of int
        Flat index of the local minimum each cell drains to.
    levels : ndarray
    """
    phi = np.asarray(phi, dtype=float)
    if shape is None:
        shape = phi.shape
    if len(shape) != 2:
        raise ArgumentError("basins_2d needs a 2-D grid")
    labels = descend(phi, shape, connectivity)
    if quantiles is None:
        quantiles = np.arange(1, 10) / 10
    levels = np.quantile(phi.ravel(), quantiles)
    return labels, levels


def basins_1d(phi) -> np.ndarray:
    """Basin label per bin, naming the stable fixed point it drains to."""
    phi = np.asarray(phi, dtype=float)
    terminal = descend(phi, phi.shape)
    mid_of = {}
    for lo, hi, _ in _runs(phi):
        for i in range(lo, hi + 1):
            mid_of[i] = (lo + hi) // 2
    return np.array([mid_of[int(t)] for t in terminal])


def unstable_points_nd(phi, shape, connectivity: int = 4) -> list[int]:
    phi = np.round(np.asarray(phi, dtype=float).ravel(), TIE_DECIMALS)
    nbrs = _neighbours(tuple(shape), connectivity)
    return [i for i in range(phi.size) if nbrs[i] and all(phi[i] > phi[j] for j in nbrs[i])]


def curl_diagnostic(model, pi=None) -> dict:
    """Net circulating probability flow.

    ``total`` is sum over i<j of |pi_i p_ij - pi_j p_ji|; ``normalized``
    divides it by the gross exchanged flow sum over i<j of
    (pi_i p_ij + pi_j p_ji).
    """
    P = as_matrix(model)
    if pi is None:
        pi = stationary_distribution(P)
    flows = np.asarray(pi)[:, None] * P
    iu = np.triu_indices_from(P, k=1)
    net = np.abs(flows - flows.T)[iu]
    gross = (flows + flows.T)[iu]
    total = float(net.sum())
    denom = float(gross.sum())
    return {"total": total, "normalized": total / denom if denom > 0 else 0.0}


@dataclass
class Landscape:
    pi: np.ndarray
    phi: np.ndarray
    shape: tuple[int, ...]
    names: list[str]
    fixed_points: list[dict] = field(default_factory=list)
    basin_label: np.ndarray | None = None
    contour_levels: np.ndarray | None = None
    curl: dict | None = None
    space_hash: str | None = None

    def to_dict(self) -> dict:
        return {
            "dims": self.names,
            "shape": list(self.shape),
            "space_hash": self.space_hash,
            "pi": self.pi.tolist(),
            "phi": self.phi.tolist(),
            "fixed_points": self.fixed_points,
            "basin_label": None if self.basin_label is None else self.basin_label.tolist(),
            "contour_levels": None if self.contour_levels is None else self.contour_levels.tolist(),
            "curl": self.curl,
        }

    def grid_csv(self) -> str:
        """Plot-ready ``dim1_bin[, dim2_bin], phi, basin`` rows."""
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow([f"{n}_bin" for n in self.names] + ["pi", "phi", "basin"])
        coords = np.stack(np.unravel_index(np.arange(self.phi.size), self.shape), axis=-1)
        for i, c in enumerate(coords):
            writer.writerow([*map(int, c), repr(float(self.pi[i])), repr(float(self.phi[i])),
                             int(self.basin_label[i]) if self.basin_label is not None else ""])
        return buf.getvalue()


def build_landscape(model, space, connectivity: int = 4) -> Landscape:
    """Stationary distribution, potential, fixed points, basins and curl for a first-order model."""
    if getattr(model, "order", 1) != 1:
        raise ArgumentError("landscapes need a first-order model")
    pi = stationary_distribution(model)
    phi = potential(pi)
    shape = space.shape
    if len(shape) == 1:
        fixed = find_fixed_points_1d(phi) if shape[0] >= 3 else []
        labels = basins_1d(phi)
        levels = np.quantile(phi, np.arange(1, 10) / 10)
    else:
        labels = descend(phi, shape, connectivity)
        levels = np.quantile(phi, np.arange(1, 10) / 10)
        fixed = [{"index": int(i), "kind": "stable"} for i in sorted(set(labels.tolist()))]
        fixed += [{"index": i, "kind": "unstable"} for i in unstable_points_nd(phi, shape, connectivity)]
        fixed.sort(key=lambda p: p["index"])
    return Landscape(pi=pi, phi=phi, shape=tuple(shape), names=space.names, fixed_points=fixed,
                     basin_label=labels, contour_levels=levels, curl=curl_diagnostic(model, pi),
                     space_hash=space.digest())
