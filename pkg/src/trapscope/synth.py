"""Synthetic household panels drawn from known ground-truth kernels."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.stats import norm

from .errors import ArgumentError
from .estimation import check_stochastic
from .landscape import stationary_distribution
from .panel import Observation, PanelDataset, write_panel_csv
from .states import DimensionSpec, StateSpace, fit_ordinal

KERNELS = ("random-stochastic", "double-well", "factorized", "interaction", "order-2")

FIXTURE_SEED = 42
FIXTURE_HOUSEHOLDS = 1000
FIXTURE_WAVES = 10
FIXTURE_START = 2014
FIXTURE_SWITCH = 2019
FIXTURE_MISSINGNESS = 0.01


# -- kernels -----------------------------------------------------------------

def random_stochastic(n: int, seed=None, concentration: float = 1.0) -> np.ndarray:
    """Dirichlet rows; strictly positive, hence irreducible and aperiodic."""
    rng = np.random.default_rng(seed)
    return rng.dirichlet(np.full(n, concentration), size=n)


def birth_death(up, down) -> np.ndarray:
    """Nearest-neighbour kernel from per-state up/down probabilities."""
    up = np.asarray(up, dtype=float)
    down = np.asarray(down, dtype=float)
    k = up.size
    P = np.zeros((k, k))
    for i in range(k):
        u = up[i] if i < k - 1 else 0.0
        d = down[i] if i > 0 else 0.0
        if u + d > 1:
            raise ArgumentError(f"state {i}: up + down exceeds 1")
        if i < k - 1:
            P[i, i + 1] = u
        if i > 0:
            P[i, i - 1] = d
        P[i, i] = 1.0 - u - d
    return P


def double_well_potential(k: int) -> np.ndarray:
    """(x^2 - 1)^2 on a grid placing the wells at bins 1 and k - 2."""
    c = (k - 1) / 2
    x = (np.arange(k) - c) / (c - 1)
    return (x**2 - 1) ** 2


def make_double_well(k: int, depth: float) -> np.ndarray:
    """Metropolis birth-death kernel with stationary law proportional to exp(-depth * V).

    V is a symmetric double well with minima at bins 1 and k - 2, so
    ``depth`` scales the barrier between the two wells.
    """
    if k < 5:
        raise ArgumentError("double-well kernel needs k >= 5")
    target = -depth * double_well_potential(k)
    ratio = np.exp(np.diff(target))
    up = 0.5 * np.minimum(1.0, ratio)
    down = 0.5 * np.minimum(1.0, 1.0 / ratio)
    return birth_death(np.append(up, 0.0), np.insert(down, 0, 0.0))


def factorized_kernel(k_income: int = 5, k_health: int = 5, up: float = 0.25, down: float = 0.25,
                      health_law=None) -> np.ndarray:
    """Income birth-death chain blind to health; health redrawn i.i.d. each step.

    Next-period state never depends on current health, so health carries
    no information about future welfare.
    """
    P_income = birth_death(np.full(k_income, up), np.full(k_income, down))
    if health_law is None:
        health_law = np.full(k_health, 1.0 / k_health)
    health_law = np.asarray(health_law, dtype=float)
    return np.kron(P_income, np.tile(health_law, (k_health, 1)))


def interaction_kernel(k_income: int = 5, k_health: int = 5, up: float = 0.3, down: float = 0.1,
                       poor_health_down: float = 0.8, health_up: float = 0.3, health_down: float = 0.2,
                       poor_income_health_down: float = 0.5) -> np.ndarray:
    """Income x health kernel with a two-way trap at the bottom of both ladders.

    In the lowest health bin income falls with probability
    ``poor_health_down`` (and rises with ``up * (1 - poor_health_down)``);
    in the lowest income bin health falls with ``poor_income_health_down``.
    Elsewhere both dimensions follow independent birth-death steps, so the
    kernel factorizes except where one dimension is at its floor.
    """
    n = k_income * k_health
    P = np.zeros((n, n))
    for i in range(k_income):
        for h in range(k_health):
            d, u = (poor_health_down, up * (1 - poor_health_down)) if h == 0 else (down, up)
            dh, uh = ((poor_income_health_down, health_up * (1 - poor_income_health_down)) if i == 0
                      else (health_down, health_up))
            row_i = birth_death(np.full(k_income, min(u, 1 - d)), np.full(k_income, d))[i]
            row_h = birth_death(np.full(k_health, min(uh, 1 - dh)), np.full(k_health, dh))[h]
            P[i * k_health + h] = np.outer(row_i, row_h).ravel()
    return P


def order2_kernel(n: int, strength: float = 0.8, seed=None) -> np.ndarray:
    """Second-order chain on pairs (previous, current) flattened row-major.

    With probability ``strength`` the chain jumps back to the previous
    state; otherwise it follows a random first-order row of the current state.
    """
    base = random_stochastic(n, seed)
    P = np.zeros((n * n, n * n))
    for a in range(n):
        for b in range(n):
            law = (1 - strength) * base[b]
            law[a] += strength
            P[a * n + b, b * n:(b + 1) * n] = law
    return P


def shock_family(P_pre, severity: float, down_shift: np.ndarray | None = None) -> np.ndarray:
    """Blend a kernel with a one-bin-down kernel; severity 0 returns it unchanged."""
    n = P_pre.shape[0]
    if down_shift is None:
        down_shift = np.zeros((n, n))
        down_shift[0, 0] = 1.0
        down_shift[np.arange(1, n), np.arange(n - 1)] = 1.0
    return (1 - severity) * np.asarray(P_pre) + severity * down_shift


# -- state spaces ------------------------------------------------------------

def default_income_edges(k: int, median: float = 30000.0, sigma: float = 0.6) -> tuple[float, ...]:
    """Lognormal-quantile income edges, trimmed at the 0.5% / 99.5% quantiles."""
    p = np.concatenate([[0.005], np.arange(1, k) / k, [0.995]])
    return tuple(float(round(x, 2)) for x in median * np.exp(sigma * norm.ppf(p)))


def income_dim(k: int) -> DimensionSpec:
    return DimensionSpec("income", "fixed", default_income_edges(k))


def health_dim() -> DimensionSpec:
    return fit_ordinal(name="health", levels=[1, 2, 3, 4, 5])


def education_dim() -> DimensionSpec:
    return fit_ordinal(name="education", levels=[2, 4, 6])


def income_space(k: int) -> StateSpace:
    return StateSpace((income_dim(k),))


def income_health_space(k_income: int = 5) -> StateSpace:
    return StateSpace((income_dim(k_income), health_dim()))


# -- generation --------------------------------------------------------------

@dataclass
class SynthSpec:
    space: StateSpace
    P: np.ndarray
    households: int = 1000
    waves: int = 10
    seed: int = 0
    start_year: int = 2010
    missingness: float = 0.0
    order: int = 1
    switch_year: int | None = None
    P_after: np.ndarray | None = None

    def __post_init__(self):
        self.P = np.asarray(self.P, dtype=float)
        n = self.space.n_states ** self.order
        if self.P.shape != (n, n):
            raise ArgumentError(f"kernel shape {self.P.shape} does not match {n} states")
        check_stochastic(self.P, atol=1e-9)
        if self.P_after is not None:
            self.P_after = np.asarray(self.P_after, dtype=float)
            if self.P_after.shape != self.P.shape:
                raise ArgumentError("regime-switch kernel has the wrong shape")
            check_stochastic(self.P_after, atol=1e-9)
        if not 0 <= self.missingness < 1:
            raise ArgumentError("missingness must lie in [0, 1)")
        if self.households < 1 or self.waves < 1:
            raise ArgumentError("need at least one household and one wave")


@dataclass
class GroundTruth:
    space: StateSpace
    P: np.ndarray
    states: np.ndarray  # (households, waves) base-state index
    years: list[int]
    household_ids: list[str]
    complete: np.ndarray  # (households, waves) all dimensions observed
    P_after: np.ndarray | None = None
    switch_year: int | None = None
    order: int = 1

    def transition_log(self, step: int = 1) -> list[tuple]:
        """``(household_id, from_year, to_year, from_state, to_state)`` for every complete pair."""
        log = []
        for h, hh in enumerate(self.household_ids):
            for w in range(len(self.years) - step):
                if self.complete[h, w] and self.complete[h, w + step]:
                    log.append((hh, self.years[w], self.years[w + step],
                                int(self.states[h, w]), int(self.states[h, w + step])))
        return log

    def to_dict(self) -> dict:
        return {
            "space": self.space.to_dict(),
            "order": self.order,
            "P": self.P.ravel().tolist(),
            "P_after": None if self.P_after is None else self.P_after.ravel().tolist(),
            "switch_year": self.switch_year,
            "years": self.years,
            "transition_log": [list(t) for t in self.transition_log()],
        }


def _household_uniforms(seed: int, households: int, waves: int, width: int) -> np.ndarray:
    """Counter-keyed uniforms: household h always gets the same block for a seed."""
    out = np.empty((households, waves, width))
    for h in range(households):
        bitgen = np.random.Philox(np.random.SeedSequence(seed, spawn_key=(h,)))
        out[h] = np.random.Generator(bitgen).random((waves, width))
    return out


def _draw(cum, rows, u):
    idx = (u[:, None] > cum[rows]).sum(axis=1)
    return np.minimum(idx, cum.shape[1] - 1)


def _cum(P):
    c = np.cumsum(P, axis=1)
    c[:, -1] = 1.0
    return c


def decode_values(space: StateSpace, states, u) -> np.ndarray:
    """Representative values for state indices: jittered inside continuous bins, levels for ordinal ones."""
    coords = space.decode(states)
    out = np.empty(coords.shape, dtype=float)
    for a, d in enumerate(space.dims):
        b = coords[..., a]
        if d.levels is not None:
            out[..., a] = np.asarray(d.levels)[b]
        else:
            e = np.asarray(d.edges)
            out[..., a] = e[b] + (0.05 + 0.9 * u[..., a]) * (e[b + 1] - e[b])
    return out


def generate_panel(spec: SynthSpec):
    """Simulate ``spec.households`` chains for ``spec.waves`` annual waves.

    Households start i.i.d. from the stationary law of the (pre-switch)
    kernel. Returns ``(PanelDataset, GroundTruth)``.
    """
    space = spec.space
    nd = len(space.dims)
    n = space.n_states
    H, W = spec.households, spec.waves
    u = _household_uniforms(spec.seed, H, W, 1 + 2 * nd)
    years = [spec.start_year + w for w in range(W)]
    cum = _cum(spec.P)
    cum_after = _cum(spec.P_after) if spec.P_after is not None else cum
    pi0 = stationary_distribution(spec.P)
    cum0 = np.cumsum(pi0)
    cum0[-1] = 1.0

    states = np.empty((H, W), dtype=np.int64)
    if spec.order == 1:
        states[:, 0] = np.minimum((u[:, 0, 0][:, None] > cum0[None, :]).sum(axis=1), n - 1)
        current = states[:, 0]
        first = 1
    else:
        if W < 2:
            raise ArgumentError("order-2 panels need at least 2 waves")
        pair = np.minimum((u[:, 0, 0][:, None] > cum0[None, :]).sum(axis=1), n * n - 1)
        states[:, 0], states[:, 1] = pair // n, pair % n
        current = pair
        first = 2
    for w in range(first, W):
        switched = spec.switch_year is not None and years[w - 1] >= spec.switch_year
        current = _draw(cum_after if switched else cum, current, u[:, w, 0])
        states[:, w] = current if spec.order == 1 else current % n

    values = decode_values(space, states, u[:, :, 1:1 + nd])
    missing = u[:, :, 1 + nd:] < spec.missingness
    values[missing] = np.nan
    complete = ~missing.any(axis=2)

    ids = [f"hh_{h:05d}" for h in range(H)]
    names = space.names
    obs = [Observation(ids[h], years[w], dict(zip(names, values[h, w].tolist())))
           for h in range(H) for w in range(W)]
    panel = PanelDataset(obs, list(names))
    truth = GroundTruth(space=space, P=spec.P, states=states, years=years, household_ids=ids, complete=complete,
                        P_after=spec.P_after, switch_year=spec.switch_year, order=spec.order)
    return panel, truth


def panel_rows(panel: PanelDataset):
    for o in panel.observations:
        yield [o.household_id, o.wave, *[o.values[d] for d in panel.dimensions]]


def mover_stayer_panel(households: int = 2000, waves: int = 10, stay: float = 0.7, seed: int = 0,
                       start_year: int = 2010) -> PanelDataset:
    """Continuous income panel: stayers keep their income, movers redraw it.

    A mover-stayer process has rank persistence that sharpens as the
    binning gets finer.
    """
    u = _household_uniforms(seed, households, waves, 2)
    income = np.empty((households, waves))
    income[:, 0] = 30000.0 * np.exp(0.6 * norm.ppf(u[:, 0, 1]))
    for w in range(1, waves):
        redraw = u[:, w, 0] >= stay
        income[:, w] = np.where(redraw, 30000.0 * np.exp(0.6 * norm.ppf(u[:, w, 1])), income[:, w - 1])
    obs = [Observation(f"hh_{h:05d}", start_year + w, {"income": float(income[h, w])})
           for h in range(households) for w in range(waves)]
    return PanelDataset(obs, ["income"])


# -- bundled fixture ---------------------------------------------------------

def fixture_space() -> StateSpace:
    return StateSpace((income_dim(5), health_dim(), education_dim()))


def fixture_kernels() -> tuple[np.ndarray, np.ndarray]:
    """Pre-switch and post-switch kernels over income x health x education."""
    education = birth_death([0.03, 0.02, 0.0], [0.0, 0.0, 0.0])
    pre = np.kron(interaction_kernel(5, 5), education)
    during = np.kron(interaction_kernel(5, 5, up=0.25, down=0.13, poor_health_down=0.85), education)
    return pre, during


def fixture_spec() -> SynthSpec:
    pre, during = fixture_kernels()
    return SynthSpec(space=fixture_space(), P=pre, households=FIXTURE_HOUSEHOLDS, waves=FIXTURE_WAVES,
                     seed=FIXTURE_SEED, start_year=FIXTURE_START, missingness=FIXTURE_MISSINGNESS,
                     switch_year=FIXTURE_SWITCH, P_after=during)


def data_dir() -> Path:
    return Path(__file__).resolve().parent / "data"


def fixture_path() -> Path:
    return data_dir() / "fixture.csv"


def fixture_space_path() -> Path:
    return data_dir() / "fixture_space.json"


def write_synth(out_dir, panel: PanelDataset, truth: GroundTruth, name: str = "panel"):
    """Write ``<name>.csv``, ``<name>_space.json`` and ``<name>_truth.json``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_panel_csv(out_dir / f"{name}.csv", panel_rows(panel), panel.dimensions)
    (out_dir / f"{name}_space.json").write_text(json.dumps(truth.space.to_dict(), indent=1, sort_keys=True) + "\n")
    (out_dir / f"{name}_truth.json").write_text(json.dumps(truth.to_dict(), sort_keys=True) + "\n")
    return out_dir / f"{name}.csv"


def write_fixture(out_dir=None) -> Path:
    panel, truth = generate_panel(fixture_spec())
    return write_synth(out_dir or data_dir(), panel, truth, name="fixture")


def build_kernel(kind: str, k: int = 5, seed: int = 0, depth: float = 2.0):
    """Kernel and matching state space for a named synthetic family."""
    if kind == "random-stochastic":
        return random_stochastic(k, seed), income_space(k), 1
    if kind == "double-well":
        return make_double_well(k, depth), income_space(k), 1
    if kind == "factorized":
        return factorized_kernel(k, 5), income_health_space(k), 1
    if kind == "interaction":
        return interaction_kernel(k, 5), income_health_space(k), 1
    if kind == "order-2":
        return order2_kernel(k, seed=seed), income_space(k), 2
    raise ArgumentError(f"unknown kernel {kind!r}; expected one of {KERNELS}")
