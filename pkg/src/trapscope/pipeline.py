"""Staged, reproducible analysis runs and cross-country summaries."""

from __future__ import annotations

import copy
import csv
import hashlib
import io
import json
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import __version__
from .errors import ComparabilityError, StageError, TrapscopeError, ValidationError
from .estimation import bootstrap_interval, bootstrap_uncertainty, estimate_mle, homogeneity_check
from .interventions import lowest_welfare_states, retention_curve, run_arms, welfare_rank
from .landscape import build_landscape, stationary_distribution
from .metrics import compute_metrics, escape_time_distribution, mfpt_set, mixing_time, tau_mix_transform
from .panel import PanelSchema, extract_transitions, load_panel
from .shock import recovery_time, shock_report
from .states import StateSpace, fit_state_space

logger = logging.getLogger(__name__)

STAGES = ("ingest", "bins", "estimate", "landscape", "metrics", "escape", "shock", "intervene")
REQUIRES = {
    "ingest": (),
    "bins": ("ingest",),
    "estimate": ("ingest", "bins"),
    "landscape": ("ingest", "bins", "estimate"),
    "metrics": ("ingest", "bins", "estimate"),
    "escape": ("ingest", "bins", "estimate"),
    "shock": ("ingest", "bins", "estimate"),
    "intervene": ("ingest", "bins", "estimate"),
}
BINNINGS = ("equidistant", "percentile", "ordinal", "fixed")

DEFAULT_PARAMETERS = {
    "epsilon": 0.05,
    "k": 0.1,
    "norm": "tv",
    "eta": 1e-8,
    "order": 1,
    "step": 1,
    "connectivity": 4,
    "horizon": 5,
    "escape_horizon": 60,
    "weighting": "stationary",
    "percentile": 0.25,
    "boosts": [5, 10, 20, 40],
    "kl_epsilon": 1e-3,
    "shock_applications": 3,
    "recovery_cap": 500,
    "bootstrap_replicates": 0,
    "omit_fraction": 0.1,
    "homogeneity_interval": 5,
}


def canonical_json(obj) -> str:
    """Sorted keys, no NaN, shortest round-trip floats; the byte format of every artifact."""
    return json.dumps(_plain(obj), sort_keys=True, indent=1, allow_nan=False) + "\n"


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return None if not math.isfinite(x) else x
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


@dataclass
class RunConfig:
    """Everything a run depends on; serialisable and hashed into every artifact.

    ``dimensions`` entries: ``{"name", "binning", "k"}`` (plus ``levels`` for
    ordinal, ``edges`` for fixed). ``periods`` maps a label to an inclusive
    ``[start, end]`` year window; the first label is the pre-shock period.
    ``state_space`` may point to a saved grid used instead of fitting.
    """

    input: str
    country: str = "XX"
    schema: dict | None = None
    dimensions: list[dict] = field(default_factory=lambda: [
        {"name": "income", "binning": "percentile", "k": 5},
        {"name": "health", "binning": "ordinal", "levels": [1, 2, 3, 4, 5]},
    ])
    state_space: str | None = None
    periods: dict[str, list[int]] = field(default_factory=dict)
    stages: list[str] = field(default_factory=lambda: list(STAGES))
    parameters: dict = field(default_factory=dict)
    seed: int = 0
    out: str = "out"
    deprivation_rate: float | None = None
    base_dir: str | None = None  # resolves relative paths; not hashed

    @classmethod
    def from_dict(cls, data: Mapping, base_dir=None) -> "RunConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ValidationError(unknown[0], "unknown configuration field")
        if "input" not in data:
            raise ValidationError("input", "required")
        cfg = cls(**copy.deepcopy(dict(data)))
        if base_dir is not None and cfg.base_dir is None:
            cfg.base_dir = str(base_dir)
        env = os.environ.get("TRAPSCOPE_SEED")
        if env is not None:
            try:
                cfg.seed = int(env)
            except ValueError as exc:
                raise ValidationError("TRAPSCOPE_SEED", f"not an integer: {env!r}") from exc
        return cfg

    @classmethod
    def load(cls, path) -> "RunConfig":
        path = Path(path)
        return cls.from_dict(json.loads(path.read_text(encoding="utf-8")), base_dir=path.parent)

    def resolve(self, p) -> Path:
        p = Path(p)
        if not p.is_absolute() and self.base_dir is not None:
            p = Path(self.base_dir) / p
        return p

    @property
    def params(self) -> dict:
        merged = dict(DEFAULT_PARAMETERS)
        merged.update(self.parameters)
        return merged

    def to_dict(self) -> dict:
        return {
            "input": self.input,
            "country": self.country,
            "schema": self.schema,
            "dimensions": self.dimensions,
            "state_space": self.state_space,
            "periods": self.periods,
            "stages": self.stages,
            "parameters": self.params,
            "seed": self.seed,
            "deprivation_rate": self.deprivation_rate,
        }

    @property
    def config_hash(self) -> str:
        """Hash of the analysis-relevant fields; the output directory is excluded."""
        return hashlib.sha256(canonical_json(self.to_dict()).encode()).hexdigest()[:16]

    def panel_schema(self) -> PanelSchema:
        base = PanelSchema.from_dict(self.schema or {})
        mapping = dict(base.dimensions)
        dims = {d["name"]: mapping.get(d["name"], d["name"]) for d in self.dimensions}
        return PanelSchema(base.household_id, base.wave, dims, base.weight, base.delimiter)

    def validate(self) -> None:
        """Raise :class:`ValidationError` naming the first offending field."""
        if not self.stages:
            raise ValidationError("stages", "at least one stage is required")
        for i, s in enumerate(self.stages):
            if s not in STAGES:
                raise ValidationError(f"stages[{i}]", f"unknown stage {s!r}; expected one of {STAGES}")
        if not self.dimensions:
            raise ValidationError("dimensions", "at least one dimension is required")
        for key in self.parameters:
            if key not in DEFAULT_PARAMETERS:
                raise ValidationError(f"parameters.{key}", "unknown parameter")
        p = self.params
        if not p["epsilon"] > 0:
            raise ValidationError("parameters.epsilon", "must be positive")
        if not p["k"] > 0:
            raise ValidationError("parameters.k", "must be positive")
        if not p["eta"] > 0:
            raise ValidationError("parameters.eta", "must be positive")
        if int(p["horizon"]) < 1 or int(p["escape_horizon"]) < 1:
            raise ValidationError("parameters.horizon", "must be >= 1")
        if not 0 < p["percentile"] < 1:
            raise ValidationError("parameters.percentile", "must lie in (0, 1)")
        if not 0 < p["omit_fraction"] < 1:
            raise ValidationError("parameters.omit_fraction", "must lie in (0, 1)")

        schema = self.schema or {}
        declared = schema.get("dimensions")
        if isinstance(declared, (list, tuple)):
            declared = {d: d for d in declared}
        header = self._header()
        mapping = self.panel_schema().dimensions
        names = []
        for i, d in enumerate(self.dimensions):
            name = d.get("name")
            if not name:
                raise ValidationError(f"dimensions[{i}].name", "missing")
            if declared is not None and name not in declared:
                raise ValidationError(f"dimensions[{i}].name", f"unknown dimension {name!r}")
            if header is not None and mapping[name] not in header:
                raise ValidationError(f"dimensions[{i}].name", f"unknown dimension {name!r}: no column {mapping[name]!r}")
            if d.get("binning", "percentile") not in BINNINGS:
                raise ValidationError(f"dimensions[{i}].binning", f"expected one of {BINNINGS}")
            names.append(name)
        if len(set(names)) != len(names):
            raise ValidationError("dimensions", "duplicate dimension names")
        needs_pair = "shock" in self.stages
        if needs_pair and len(self.periods) < 2:
            raise ValidationError("periods", "the shock stage needs a pre and a shock period")
        for label, win in self.periods.items():
            if len(win) != 2 or int(win[0]) >= int(win[1]):
                raise ValidationError(f"periods.{label}", "expected [start, end] with start < end")
        if "intervene" in self.stages:
            for d in ("income", "health"):
                if d not in names:
                    raise ValidationError("dimensions", f"the intervene stage needs a {d!r} dimension")

    def _header(self):
        path = self.resolve(self.input)
        if not path.exists():
            raise ValidationError("input", f"file not found: {path}")
        delim = (self.schema or {}).get("delimiter", ",")
        with path.open(newline="", encoding="utf-8") as fh:
            return next(csv.reader(fh, delimiter=delim), [])


class Run:
    """Executes stages for one config and collects the artifacts in memory."""

    def __init__(self, config: RunConfig):
        self.config = config
        self.p = config.params
        self.artifacts: dict[str, str] = {}  # file name -> text
        self.state: dict = {}

    def meta(self, stage: str) -> dict:
        p = self.p
        return {
            "stage": stage,
            "country": self.config.country,
            "config_hash": self.config.config_hash,
            "version": __version__,
            "seed": self.config.seed,
            "parameters": {key: p[key] for key in ("epsilon", "k", "eta", "horizon", "norm", "order")} | {
                "escape_horizon": p["escape_horizon"]},
        }

    def emit_json(self, stage, body):
        self.artifacts[f"{stage}.json"] = canonical_json({"meta": self.meta(stage), **body})

    def emit_csv(self, stage, header, rows):
        buf = io.StringIO()
        buf.write(f"# config_hash={self.config.config_hash} version={__version__} stage={stage}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
        self.artifacts[f"{stage}.csv"] = buf.getvalue()

    # -- stages --------------------------------------------------------------

    def ingest(self):
        panel, report = load_panel(self.config.resolve(self.config.input), self.config.panel_schema())
        self.state["panel"] = panel
        if not self.config.periods:
            lo, hi = panel.span
            self.state["periods"] = {"all": [lo, hi]}
        else:
            self.state["periods"] = {k: [int(v[0]), int(v[1])] for k, v in self.config.periods.items()}
        return {"report": report.to_dict(), "waves": panel.waves, "households": len(panel.households())}

    def bins(self):
        panel = self.state["panel"]
        if self.config.state_space:
            text = self.config.resolve(self.config.state_space).read_text(encoding="utf-8")
            space = StateSpace.from_json(text)
            missing = [d["name"] for d in self.config.dimensions if d["name"] not in space.names]
            if missing:
                raise ValidationError("state_space", f"saved grid lacks dimension(s) {missing}")
            space = space.subspace([d["name"] for d in self.config.dimensions])
        else:
            space = fit_state_space(panel, self.config.dimensions)
        self.state["space"] = space
        return {"state_space": space.to_dict(), "space_hash": space.digest(), "n_states": space.n_states}

    def estimate(self):
        panel, space, p = self.state["panel"], self.state["space"], self.p
        names = space.names
        models, out, by_period = {}, {}, {}
        for label, win in self.state["periods"].items():
            records = extract_transitions(panel, window=win, step=int(p["step"]), dimensions=names)
            by_period[label] = records
            model = estimate_mle(records, space, order=int(p["order"]), eta=float(p["eta"]), period=label)
            models[label] = model
            entry = {"window": win, "transitions": len(records), "model": model.to_dict()}
            if int(p["bootstrap_replicates"]) > 0:
                summary = bootstrap_uncertainty(records, space, omit_fraction=float(p["omit_fraction"]),
                                                replicates=int(p["bootstrap_replicates"]), seed=self.config.seed,
                                                eta=float(p["eta"]))
                entry["bootstrap"] = summary.to_dict()
            out[label] = entry
        self.state["models"] = models
        self.state["records"] = by_period
        homog = None
        lo, hi = panel.span
        if hi - lo > int(p["homogeneity_interval"]):
            homog = homogeneity_check(panel, space, interval_years=int(p["homogeneity_interval"]),
                                      eta=float(p["eta"]), step=int(p["step"]))
        rows = []
        for label, m in models.items():
            for i in range(m.n_states):
                for j in range(m.n_states):
                    c = 0.0 if m.counts is None else float(m.counts[i, j])
                    rows.append([label, i, j, c, float(m.P[i, j])])
        self.emit_csv("estimate", ["period", "from_state", "to_state", "count", "p"], rows)
        return {"periods": out, "homogeneity": homog}

    def _first_order(self):
        if int(self.p["order"]) != 1:
            raise ValidationError("parameters.order", "this stage needs a first-order model")
        return self.state["models"]

    def landscape(self):
        space, models = self.state["space"], self._first_order()
        out, rows = {}, []
        for label, m in models.items():
            ls = build_landscape(m, space, connectivity=int(self.p["connectivity"]))
            out[label] = ls.to_dict()
            coords = space.decode(np.arange(space.n_states))
            for i in range(space.n_states):
                rows.append([label, *map(int, coords[i]), float(ls.pi[i]), float(ls.phi[i]), int(ls.basin_label[i])])
        self.emit_csv("landscape", ["period", *[f"{n}_bin" for n in space.names], "pi", "phi", "basin"], rows)
        return {"periods": out}

    def _income_model(self, label):
        """First-order income-only chain for the same period (the 1-D comparison)."""
        space = self.state["space"]
        if "income" not in space.names:
            return None
        sub = space.subspace(["income"])
        win = self.state["periods"][label]
        recs = extract_transitions(self.state["panel"], window=win, step=int(self.p["step"]), dimensions=["income"])
        return estimate_mle(recs, sub, eta=float(self.p["eta"]), period=label)

    def metrics(self):
        models, p = self._first_order(), self.p
        out, rows = {}, []
        for label, m in models.items():
            rep = compute_metrics(m, epsilon=float(p["epsilon"]), k=float(p["k"]), norm=p["norm"])
            body = rep.to_dict()
            m1 = self._income_model(label)
            if m1 is not None and len(self.state["space"].dims) > 1:
                tau1 = mixing_time(m1, float(p["epsilon"]), p["norm"])
                body["mixing_time_income"] = None if math.isinf(tau1) else tau1
                body["tau_mix_income"] = tau_mix_transform(tau1, float(p["k"]))
            out[label] = body
            n = m.n_states
            for i in range(n):
                rows.append([label, i, *map(float, rep.mfpt[i])])
        n = next(iter(models.values())).n_states
        self.emit_csv("metrics", ["period", "from_state", *[f"to_{j}" for j in range(n)]], rows)
        return {"periods": out}

    def _sets(self):
        space = self.state["space"]
        A = lowest_welfare_states(space)
        B = sorted(set(range(space.n_states)) - set(A))
        return A, B

    def escape(self):
        models, p = self._first_order(), self.p
        A, B = self._sets()
        out, rows = {}, []
        for label, m in models.items():
            dist = escape_time_distribution(m, A, B, int(p["escape_horizon"]), weighting=p["weighting"])
            body = dist.to_dict()
            body["mfpt_set"] = mfpt_set(m, A, B, weighting=p["weighting"])
            if int(p["bootstrap_replicates"]) > 0:
                records = self.state["records"][label]
                body["bootstrap_interval"] = bootstrap_interval(
                    records, self.state["space"], lambda P: mfpt_set(P, A, B, weighting=p["weighting"]),
                    omit_fraction=float(p["omit_fraction"]), replicates=int(p["bootstrap_replicates"]),
                    seed=self.config.seed, eta=float(p["eta"]))
            out[label] = body
            rows += [[label, t + 1, float(x)] for t, x in enumerate(dist.pmf)]
        self.emit_csv("escape", ["period", "step", "probability"], rows)
        return {"from": A, "to": "complement", "weighting": p["weighting"], "periods": out}

    def shock(self):
        models, p = self._first_order(), self.p
        labels = list(models)
        pre, during = models[labels[0]], models[labels[1]]
        A, B = self._sets()
        rep = shock_report(pre, during, A, B, welfare_rank(self.state["space"]), epsilon=float(p["kl_epsilon"]),
                           applications=int(p["shock_applications"]), cap=int(p["recovery_cap"]))
        self.emit_csv("shock", ["step", "kl"], [[t, float(x)] for t, x in enumerate(rep.kl_path)])
        return {"pre": labels[0], "shock": labels[1], "report": rep.to_dict()}

    def intervene(self):
        models, p, space = self._first_order(), self.p, self.state["space"]
        out = {}
        csv_rows = []
        for label, m in models.items():
            rep = run_arms(m, space, percentile=float(p["percentile"]), horizon=int(p["horizon"]))
            body = rep.to_dict()
            if space.dim("health").k == 5:
                curve = retention_curve(m, space, boost_sizes=p["boosts"], horizon=int(p["horizon"]))
                body["retention"] = {k: v for k, v in curve.items()}
                for q, row in zip(curve["health_quintiles"], curve["values"]):
                    csv_rows.append([label, q, *map(float, row)])
            out[label] = body
        if csv_rows:
            self.emit_csv("intervene", ["period", "health_quintile", *[f"boost_{s:g}" for s in p["boosts"]]], csv_rows)
        return {"periods": out}

    def execute(self) -> dict[str, str]:
        requested = list(dict.fromkeys(self.config.stages))
        needed = set(requested)
        for s in requested:
            needed.update(REQUIRES[s])
        for stage in STAGES:
            if stage not in needed:
                continue
            try:
                body = getattr(self, stage)()
            except TrapscopeError as exc:
                if isinstance(exc, (StageError, ValidationError)):
                    raise
                raise StageError(stage, exc) from exc
            except (ValueError, ArithmeticError, KeyError, OSError) as exc:
                raise StageError(stage, exc) from exc
            if stage in requested:
                self.emit_json(stage, body)
            else:
                self.artifacts.pop(f"{stage}.csv", None)
        return self.artifacts


def run_pipeline(config: RunConfig | Mapping, out_dir=None, write: bool = True) -> dict[str, str]:
    """Run the requested stages and write ``<out>/<country>/<stage>.{json,csv}``.

    Returns the artifact texts keyed by file name. Module errors are raised
    as :class:`StageError` carrying the stage label.
    """
    if not isinstance(config, RunConfig):
        config = RunConfig.from_dict(config)
    config.validate()
    artifacts = Run(config).execute()
    if write:
        target = Path(out_dir if out_dir is not None else config.resolve(config.out)) / config.country
        target.mkdir(parents=True, exist_ok=True)
        for name in sorted(artifacts):
            (target / name).write_text(artifacts[name], encoding="utf-8")
    return artifacts


COMPARABLE = ("epsilon", "k", "norm", "eta", "order", "step", "escape_horizon", "weighting", "kl_epsilon",
              "shock_applications", "recovery_cap")


def _country_row(config: RunConfig) -> dict:
    cfg = copy.deepcopy(config)
    cfg.stages = ["estimate"]
    run = Run(cfg)
    run.execute()
    p = run.p
    models = run.state["models"]
    labels = list(models)
    model = models[labels[0]]
    A, B = run._sets()
    pi = stationary_distribution(model)
    tau = mixing_time(model, float(p["epsilon"]), p["norm"])
    m1 = run._income_model(labels[0])
    tau1 = mixing_time(m1, float(p["epsilon"]), p["norm"]) if m1 is not None else math.inf
    row = {
        "country": config.country,
        "period": labels[0],
        "escape_time": mfpt_set(model, A, B, weighting=p["weighting"]),
        "poverty_mass": float(pi[A].sum()),
        "mixing_time_joint": tau,
        "mixing_time_income": tau1 if m1 is not None else None,
        "shorrocks": compute_metrics(model, float(p["epsilon"]), float(p["k"]), p["norm"]).shorrocks,
        "recovery_time": None,
        "deprivation_rate": config.deprivation_rate,
        "deprivation_missing": config.deprivation_rate is None,
        "config_hash": config.config_hash,
    }
    if len(labels) >= 2:
        rec = recovery_time(models[labels[0]], models[labels[1]], float(p["kl_epsilon"]),
                            int(p["shock_applications"]), int(p["recovery_cap"]))
        row["recovery_time"] = rec.recovery_time
    return row


def compare_countries(configs: Sequence[RunConfig | Mapping], deprivation: Mapping[str, float] | None = None,
                      workers: int | None = None) -> list[dict]:
    """One summary row per country, in input order.

    Countries run in a thread pool; rows are merged back in the order the
    configs were given. ``deprivation`` (e.g. AROPE rates keyed by country
    code) overrides each config's ``deprivation_rate``.
    """
    configs = [c if isinstance(c, RunConfig) else RunConfig.from_dict(c) for c in configs]
    if len(configs) < 2:
        raise ComparabilityError("need at least two countries to compare")
    ref = {k: configs[0].params[k] for k in COMPARABLE}
    for c in configs[1:]:
        diff = [k for k in COMPARABLE if c.params[k] != ref[k]]
        if diff:
            raise ComparabilityError(f"{c.country}: metric parameters differ from {configs[0].country}: {diff}")
    for c in configs:
        if deprivation is not None:
            c.deprivation_rate = deprivation.get(c.country)
        c.validate()
    with ThreadPoolExecutor(max_workers=workers) as pool:
        rows = list(pool.map(_country_row, configs))
    return [_plain(r) for r in rows]


def comparison_csv(rows: Sequence[dict]) -> str:
    cols = ["country", "period", "escape_time", "poverty_mass", "mixing_time_income", "mixing_time_joint",
            "shorrocks", "recovery_time", "deprivation_rate", "config_hash"]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for r in rows:
        w.writerow(["" if r.get(c) is None else (repr(r[c]) if isinstance(r[c], float) else r[c]) for c in cols])
    return buf.getvalue()
