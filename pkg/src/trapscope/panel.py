"""Loading, validating and windowing longitudinal household panels."""

from __future__ import annotations

import csv
import logging
import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .errors import ConfigurationError, SchemaError

logger = logging.getLogger(__name__)

DEFAULT_DIMENSIONS = ("income", "health", "education")


@dataclass(frozen=True)
class Observation:
    household_id: str
    wave: int
    values: Mapping[str, float]
    weight: float = 1.0

    def is_complete(self, dimensions: Iterable[str]) -> bool:
        return all(d in self.values and not math.isnan(self.values[d]) for d in dimensions)


@dataclass(frozen=True)
class TransitionRecord:
    household_id: str
    from_wave: int
    to_wave: int
    from_values: Mapping[str, float]
    to_values: Mapping[str, float]
    weight: float = 1.0


@dataclass
class PanelDataset:
    """Observations keyed by ``(household_id, wave)``.

    ``dimensions`` is the ordered list of active welfare dimensions and
    ``waves`` the sorted distinct survey years present.
    """

    observations: list[Observation]
    dimensions: list[str]
    waves: list[int] = field(default_factory=list)

    def __post_init__(self):
        seen = set()
        for obs in self.observations:
            key = (obs.household_id, obs.wave)
            if key in seen:
                raise ValueError(f"duplicate observation for household {obs.household_id!r} in {obs.wave}")
            seen.add(key)
        self.waves = sorted({o.wave for o in self.observations})
        self._by_household = None

    def __len__(self):
        return len(self.observations)

    @property
    def span(self) -> tuple[int, int]:
        if not self.waves:
            raise ValueError("empty panel has no span")
        return self.waves[0], self.waves[-1]

    def by_household(self) -> dict[str, dict[int, Observation]]:
        if self._by_household is None:
            grouped: dict[str, dict[int, Observation]] = defaultdict(dict)
            for obs in self.observations:
                grouped[obs.household_id][obs.wave] = obs
            self._by_household = dict(grouped)
        return self._by_household

    def households(self) -> list[str]:
        # first-appearance order keeps everything downstream deterministic
        return list(dict.fromkeys(o.household_id for o in self.observations))

    def complete_count(self) -> int:
        return sum(o.is_complete(self.dimensions) for o in self.observations)

    def restrict(self, households: Iterable[str]) -> "PanelDataset":
        keep = set(households)
        return PanelDataset([o for o in self.observations if o.household_id in keep], list(self.dimensions))

    def window(self, start: int, end: int) -> "PanelDataset":
        return PanelDataset([o for o in self.observations if start <= o.wave <= end], list(self.dimensions))


@dataclass(frozen=True)
class PanelSchema:
    """Maps canonical field names onto the columns of a delimited file.

    Survey weights are read only when ``weight`` names a column; by default
    every observation counts once.
    """

    household_id: str = "household_id"
    wave: str = "year"
    dimensions: Mapping[str, str] = field(default_factory=lambda: {d: d for d in DEFAULT_DIMENSIONS})
    weight: str | None = None
    delimiter: str = ","

    @classmethod
    def from_dict(cls, data: Mapping) -> "PanelSchema":
        dims = data.get("dimensions", {d: d for d in DEFAULT_DIMENSIONS})
        if isinstance(dims, (list, tuple)):
            dims = {d: d for d in dims}
        return cls(
            household_id=data.get("household_id", "household_id"),
            wave=data.get("wave", data.get("year", "year")),
            dimensions=dict(dims),
            weight=data.get("weight"),
            delimiter=data.get("delimiter", ","),
        )

    def to_dict(self) -> dict:
        return {
            "household_id": self.household_id,
            "wave": self.wave,
            "dimensions": dict(self.dimensions),
            "weight": self.weight,
            "delimiter": self.delimiter,
        }


@dataclass
class LoadReport:
    rows_read: int = 0
    rows_accepted: int = 0
    rejects: list[dict] = field(default_factory=list)
    incomplete: int = 0
    coverage: dict[str, float] = field(default_factory=dict)

    @property
    def reject_count(self) -> int:
        return len(self.rejects)

    def reasons(self) -> dict[str, int]:
        return dict(sorted(Counter(r["reason"] for r in self.rejects).items()))

    def to_dict(self) -> dict:
        return {
            "rows_read": self.rows_read,
            "rows_accepted": self.rows_accepted,
            "reject_count": self.reject_count,
            "reject_reasons": self.reasons(),
            "rejects": self.rejects,
            "incomplete_observations": self.incomplete,
            "coverage": self.coverage,
        }


def _parse_float(text: str) -> float:
    text = text.strip()
    if text == "" or text.upper() in ("NA", "NAN"):
        return math.nan
    return float(text)


def load_panel(path, schema: PanelSchema | Mapping | None = None, window=None):
    """Read a delimited panel file into a :class:`PanelDataset`.

    Rows with an unparseable numeric field or a duplicated
    ``(household, wave)`` key are dropped and listed in the returned
    :class:`LoadReport`; blank dimension fields make the observation
    incomplete but keep it.

    Returns
    -------
    (PanelDataset, LoadReport)
    """
    if schema is None:
        schema = PanelSchema()
    elif not isinstance(schema, PanelSchema):
        schema = PanelSchema.from_dict(schema)
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)

    report = LoadReport()
    observations: list[Observation] = []
    seen: set[tuple[str, int]] = set()
    dims = list(schema.dimensions)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh, delimiter=schema.delimiter)
        header = reader.fieldnames or []
        required = [schema.household_id, schema.wave, *schema.dimensions.values()]
        missing = [c for c in required if c not in header]
        if missing:
            raise SchemaError(f"missing column(s) {missing} in {path.name}")
        has_weight = schema.weight is not None and schema.weight in header

        for lineno, row in enumerate(reader, start=2):
            report.rows_read += 1
            hh = (row[schema.household_id] or "").strip()
            try:
                wave = int(row[schema.wave])
            except (TypeError, ValueError):
                report.rejects.append({"line": lineno, "reason": "unparseable wave", "field": schema.wave})
                continue
            if window is not None and not (window[0] <= wave <= window[1]):
                report.rejects.append({"line": lineno, "reason": "wave outside study window", "field": schema.wave})
                continue
            values = {}
            bad = None
            for dim, col in schema.dimensions.items():
                try:
                    values[dim] = _parse_float(row[col] or "")
                except ValueError:
                    bad = col
                    break
            weight = 1.0
            if bad is None and has_weight and (row[schema.weight] or "").strip():
                try:
                    weight = float(row[schema.weight])
                    if weight < 0 or math.isnan(weight):
                        raise ValueError
                except ValueError:
                    bad = schema.weight
            if bad is not None:
                report.rejects.append({"line": lineno, "reason": "unparseable numeric", "field": bad})
                continue
            if not hh:
                report.rejects.append({"line": lineno, "reason": "missing household id", "field": schema.household_id})
                continue
            key = (hh, wave)
            if key in seen:
                report.rejects.append({"line": lineno, "reason": "duplicate household-wave", "field": schema.wave})
                continue
            seen.add(key)
            observations.append(Observation(hh, wave, values, weight))

    panel = PanelDataset(observations, dims)
    report.rows_accepted = len(observations)
    report.incomplete = len(observations) - panel.complete_count()
    n = max(len(observations), 1)
    report.coverage = {d: sum(not math.isnan(o.values[d]) for o in observations) / n for d in dims}
    if report.rejects:
        logger.warning("%s: %d of %d rows rejected %s", path.name, report.reject_count, report.rows_read, report.reasons())
    return panel, report


def extract_transitions(panel: PanelDataset, window=None, step: int = 1,
                        dimensions: Sequence[str] | None = None) -> list[TransitionRecord]:
    """One record per household per ``step``-spaced wave pair inside ``window``.

    Both endpoints must be complete in every active dimension. Records come
    out grouped by household (first-appearance order) and sorted by wave.
    """
    if step < 1:
        raise ConfigurationError("step must be >= 1")
    dims = list(dimensions) if dimensions is not None else panel.dimensions
    if not panel.observations:
        return []
    start, end = window if window is not None else panel.span
    records = []
    for hh, obs_by_wave in panel.by_household().items():
        for wave in sorted(obs_by_wave):
            to_wave = wave + step
            if wave < start or to_wave > end or to_wave not in obs_by_wave:
                continue
            a, b = obs_by_wave[wave], obs_by_wave[to_wave]
            if not (a.is_complete(dims) and b.is_complete(dims)):
                continue
            records.append(TransitionRecord(
                hh, wave, to_wave,
                {d: a.values[d] for d in dims},
                {d: b.values[d] for d in dims},
                a.weight,
            ))
    return records


def split_periods(panel: PanelDataset, boundaries: Sequence[int]) -> list[PanelDataset]:
    """Cut a panel at the given years.

    A boundary year closes the earlier period and opens the later one, so
    an annual transition ending on the boundary stays in the earlier period.
    """
    if not boundaries:
        return [panel]
    start, end = panel.span
    if list(boundaries) != sorted(boundaries) or len(set(boundaries)) != len(boundaries):
        raise ConfigurationError(f"period boundaries must be strictly increasing: {list(boundaries)}")
    for b in boundaries:
        if not start <= b <= end:
            raise ConfigurationError(f"boundary {b} outside panel span {start}-{end}")
    edges = [start, *boundaries, end]
    return [panel.window(lo, hi) for lo, hi in zip(edges[:-1], edges[1:])]


def household_runs(records: Sequence[TransitionRecord]) -> list[list[TransitionRecord]]:
    """Chain records into maximal runs of consecutive transitions per household."""
    runs: list[list[TransitionRecord]] = []
    by_hh: dict[str, list[TransitionRecord]] = defaultdict(list)
    for rec in records:
        by_hh[rec.household_id].append(rec)
    for recs in by_hh.values():
        recs = sorted(recs, key=lambda r: r.from_wave)
        current = [recs[0]]
        for rec in recs[1:]:
            if rec.from_wave == current[-1].to_wave:
                current.append(rec)
            else:
                runs.append(current)
                current = [rec]
        runs.append(current)
    return runs


def write_panel_csv(path, rows: Iterable[Sequence], dimensions: Sequence[str], weight: bool = False):
    """Write ``(household_id, year, *values[, weight])`` rows in the canonical schema.

    Floats are written with ``repr`` so a reload is bit-exact; NaN is blank.
    """
    header = ["household_id", "year", *dimensions] + (["weight"] if weight else [])
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow(["" if isinstance(v, float) and math.isnan(v) else (repr(v) if isinstance(v, float) else v)
                             for v in row])
