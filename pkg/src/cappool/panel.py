"""Forecast and truth ingestion: file parsing, alignment, and persistence.

The canonical forecast file is one row per forecast: region, target,
model_id, issue_epiweek, then 131 probability columns. A converter from the
per-bin long format used by public forecast archives is also provided.
Missing forecasts are data, not errors: the assembled panel answers which
models are absent at any key without imputing anything.
"""

from __future__ import annotations

import csv
import io
import json
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .epiweek import Epiweek, season_of, season_weeks
from .pmf import N_BINS, normalize_pmf

__all__ = [
    "REGIONS",
    "TARGETS",
    "ForecastDataError",
    "ForecastKey",
    "TruthTable",
    "StatePopulationTable",
    "Panel",
    "canonical_region",
    "parse_component_csv",
    "convert_flusight_csv",
    "ingest_flusight_tree",
    "parse_truth_csv",
    "parse_population_csv",
    "parse_state_ili_csv",
    "compute_wili",
    "truth_from_state_ili",
    "write_panel",
    "load_panel",
]

REGIONS = tuple(f"HHS{i}" for i in range(1, 11)) + ("Nat",)
TARGETS = (1, 2, 3, 4)

_COMPONENT_HEADER = ["region", "target", "model_id", "issue_epiweek"] + [
    f"bin_{i}" for i in range(1, N_BINS + 1)
]


class ForecastDataError(ValueError):
    """A submission or truth file is malformed."""


def canonical_region(token: str) -> str:
    """Map a region token to its canonical form (HHS1..HHS10, Nat)."""
    t = token.strip().lower()
    if t in ("nat", "us national", "national", "us"):
        return "Nat"
    m = re.fullmatch(r"hhs\s*(?:region\s*)?(\d{1,2})", t)
    if m and 1 <= int(m.group(1)) <= 10:
        return f"HHS{int(m.group(1))}"
    raise ForecastDataError(f"unknown region token {token!r}")


def _parse_target(token: str) -> int:
    try:
        value = int(token)
    except ValueError:
        raise ForecastDataError(f"unknown target token {token!r}") from None
    if value not in TARGETS:
        raise ForecastDataError(f"unknown target token {token!r}")
    return value


@dataclass(frozen=True, order=True)
class ForecastKey:
    """Identifies one forecast: where, how far ahead, by whom, and when."""

    region: str
    target: int
    model_id: str
    issue: Epiweek


class TruthTable:
    """Observed percent ILI per (region, observation week)."""

    def __init__(self, values: dict[tuple[str, Epiweek], float] | None = None):
        self._values = dict(values or {})

    def wili(self, region: str, week: Epiweek) -> float | None:
        return self._values.get((region, week))

    def add(self, region: str, week: Epiweek, value: float) -> None:
        if not 0.0 <= value <= 100.0:
            raise ForecastDataError(f"wILI {value} outside [0, 100]")
        key = (region, week)
        if key in self._values:
            raise ForecastDataError(f"duplicate truth entry for {region} {week}")
        self._values[key] = value

    def items(self):
        return sorted(self._values.items())

    def __len__(self) -> int:
        return len(self._values)

    def __eq__(self, other) -> bool:
        return isinstance(other, TruthTable) and self._values == other._values


def parse_component_csv(stream, renormalize: bool = True) -> dict[ForecastKey, np.ndarray]:
    """Parse canonical wide-format forecasts into a panel fragment.

    Each data row becomes one (key, pmf) pair; row order is irrelevant.
    Malformed rows fail hard with their row number.
    """
    if isinstance(stream, (str, Path)):
        with open(stream, newline="") as fh:
            return parse_component_csv(fh, renormalize)
    reader = csv.reader(stream)
    try:
        header = next(reader)
    except StopIteration:
        raise ForecastDataError("empty forecast file: header row missing") from None
    if [h.strip() for h in header] != _COMPONENT_HEADER:
        raise ForecastDataError("unexpected forecast header; expected canonical wide format")
    fragment: dict[ForecastKey, np.ndarray] = {}
    for row_no, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != len(_COMPONENT_HEADER):
            raise ForecastDataError(f"row {row_no}: expected {len(_COMPONENT_HEADER)} fields")
        try:
            region = canonical_region(row[0])
            target = _parse_target(row[1])
            issue = Epiweek.parse(row[3])
            probs = np.array([float(v) for v in row[4:]])
            pmf = normalize_pmf(probs) if renormalize else probs
        except ValueError as exc:
            raise ForecastDataError(f"row {row_no}: {exc}") from None
        model_id = row[2].strip()
        if not model_id:
            raise ForecastDataError(f"row {row_no}: empty model_id")
        key = ForecastKey(region, target, model_id, issue)
        if key in fragment:
            raise ForecastDataError(f"row {row_no}: duplicate forecast for {key}")
        pmf.setflags(write=False)
        fragment[key] = pmf
    return fragment


_WEEK_AHEAD = re.compile(r"(\d)\s*wk\s*ahead", re.IGNORECASE)


def convert_flusight_csv(
    stream, model_id: str, issue: Epiweek
) -> dict[ForecastKey, np.ndarray]:
    """Convert a per-bin long-format submission file to a panel fragment.

    Expects the public archive layout: Location, Target, Type, Unit,
    Bin_start_incl, Bin_end_notincl, Value. Only percent-ILI week-ahead
    bin rows are used; week-based targets and point estimates are skipped.
    """
    if isinstance(stream, (str, Path)):
        with open(stream, newline="") as fh:
            return convert_flusight_csv(fh, model_id, issue)
    reader = csv.DictReader(stream)
    needed = {"Location", "Target", "Type", "Bin_start_incl", "Value"}
    fields = {f.strip().lower(): f for f in reader.fieldnames or []}
    missing = [f for f in needed if f.lower() not in fields]
    if missing:
        raise ForecastDataError(f"long-format file missing columns {missing}")

    def get(row, name):
        return row[fields[name.lower()]]

    bins: dict[tuple[str, int], dict[int, float]] = {}
    for row_no, row in enumerate(reader, start=2):
        m = _WEEK_AHEAD.search(get(row, "Target"))
        if not m or get(row, "Type").strip().lower() != "bin":
            continue
        try:
            region = canonical_region(get(row, "Location"))
            target = _parse_target(m.group(1))
            start = float(get(row, "Bin_start_incl"))
            value = float(get(row, "Value"))
        except ValueError as exc:
            raise ForecastDataError(f"row {row_no}: {exc}") from None
        idx = int(round(start * 10.0))
        if abs(start * 10.0 - idx) > 1e-6 or not 0 <= idx <= N_BINS - 1:
            raise ForecastDataError(f"row {row_no}: bin start {start} off the grid")
        cell = bins.setdefault((region, target), {})
        if idx in cell:
            raise ForecastDataError(f"row {row_no}: duplicate bin {start} for {region}")
        cell[idx] = value

    fragment: dict[ForecastKey, np.ndarray] = {}
    for (region, target), cell in sorted(bins.items()):
        if len(cell) != N_BINS:
            raise ForecastDataError(
                f"{region} target {target}: {len(cell)} bins present, expected {N_BINS}"
            )
        pmf = normalize_pmf(np.array([cell[i] for i in range(N_BINS)]))
        pmf.setflags(write=False)
        fragment[ForecastKey(region, target, model_id, issue)] = pmf
    return fragment


_FLUSIGHT_NAME = re.compile(r"EW(\d{2})-(\d{4})", re.IGNORECASE)


def ingest_flusight_tree(root) -> tuple[dict[ForecastKey, np.ndarray], list[str]]:
    """Walk an archive tree of per-model directories of long-format files.

    Each subdirectory names a model; files are matched by the EW<ww>-<yyyy>
    filename convention for their issue week. Returns the merged fragment
    plus the names of files that were skipped.
    """
    root = Path(root)
    fragment: dict[ForecastKey, np.ndarray] = {}
    skipped: list[str] = []
    for model_dir in sorted(p for p in root.iterdir() if p.is_dir()):
        for path in sorted(model_dir.glob("*.csv")):
            m = _FLUSIGHT_NAME.search(path.name)
            if not m:
                skipped.append(str(path))
                continue
            issue = Epiweek(int(m.group(2)), int(m.group(1)))
            piece = convert_flusight_csv(path, model_dir.name, issue)
            overlap = fragment.keys() & piece.keys()
            if overlap:
                raise ForecastDataError(f"{path}: duplicate forecast for {sorted(overlap)[0]}")
            fragment.update(piece)
    return fragment, skipped


def parse_truth_csv(stream) -> TruthTable:
    """Parse observed wILI rows (region, epiweek, wili); duplicates rejected."""
    if isinstance(stream, (str, Path)):
        with open(stream, newline="") as fh:
            return parse_truth_csv(fh)
    reader = csv.DictReader(stream)
    fields = {f.strip().lower(): f for f in reader.fieldnames or []}
    for name in ("region", "epiweek", "wili"):
        if name not in fields:
            raise ForecastDataError(f"truth file missing column {name!r}")
    table = TruthTable()
    for row_no, row in enumerate(reader, start=2):
        try:
            region = canonical_region(row[fields["region"]])
            week = Epiweek.parse(row[fields["epiweek"]])
            table.add(region, week, float(row[fields["wili"]]))
        except ValueError as exc:
            raise ForecastDataError(f"row {row_no}: {exc}") from None
    return table


@dataclass(frozen=True)
class StatePopulationTable:
    """Resident counts and region membership for states."""

    population: dict[str, float]
    region: dict[str, str]

    def states_of(self, region: str) -> list[str]:
        if region == "Nat":
            return sorted(self.population)
        return sorted(s for s, r in self.region.items() if r == region)


def parse_population_csv(stream) -> StatePopulationTable:
    if isinstance(stream, (str, Path)):
        with open(stream, newline="") as fh:
            return parse_population_csv(fh)
    reader = csv.DictReader(stream)
    fields = {f.strip().lower(): f for f in reader.fieldnames or []}
    for name in ("state", "region", "population"):
        if name not in fields:
            raise ForecastDataError(f"population file missing column {name!r}")
    population: dict[str, float] = {}
    region: dict[str, str] = {}
    for row_no, row in enumerate(reader, start=2):
        state = row[fields["state"]].strip()
        if state in population:
            raise ForecastDataError(f"row {row_no}: duplicate state {state}")
        try:
            population[state] = float(row[fields["population"]])
            region[state] = canonical_region(row[fields["region"]])
        except ValueError as exc:
            raise ForecastDataError(f"row {row_no}: {exc}") from None
    return StatePopulationTable(population, region)


def parse_state_ili_csv(stream) -> dict[tuple[str, Epiweek], float]:
    if isinstance(stream, (str, Path)):
        with open(stream, newline="") as fh:
            return parse_state_ili_csv(fh)
    reader = csv.DictReader(stream)
    fields = {f.strip().lower(): f for f in reader.fieldnames or []}
    for name in ("state", "epiweek", "ili"):
        if name not in fields:
            raise ForecastDataError(f"state ILI file missing column {name!r}")
    out: dict[tuple[str, Epiweek], float] = {}
    for row_no, row in enumerate(reader, start=2):
        state = row[fields["state"]].strip()
        try:
            week = Epiweek.parse(row[fields["epiweek"]])
            value = float(row[fields["ili"]])
        except ValueError as exc:
            raise ForecastDataError(f"row {row_no}: {exc}") from None
        if (state, week) in out:
            raise ForecastDataError(f"row {row_no}: duplicate ILI for {state} {week}")
        out[(state, week)] = value
    return out


def compute_wili(
    state_ili: dict[str, float], pops: StatePopulationTable, region: str
) -> float:
    """Population-weighted percent ILI for a region from state-level values."""
    states = pops.states_of(region)
    if not states:
        raise ForecastDataError(f"no states assigned to region {region}")
    missing = [s for s in states if s not in state_ili]
    if missing:
        raise ForecastDataError(f"region {region} missing state ILI for {missing}")
    total = sum(pops.population[s] for s in states)
    if total <= 0.0:
        raise ForecastDataError(f"region {region} has zero total population")
    return sum(pops.population[s] / total * state_ili[s] for s in states)


def truth_from_state_ili(
    state_ili: dict[tuple[str, Epiweek], float], pops: StatePopulationTable
) -> TruthTable:
    """Build the regional truth table from state-level ILI observations."""
    weeks = sorted({week for _, week in state_ili})
    table = TruthTable()
    for week in weeks:
        per_state = {s: v for (s, w), v in state_ili.items() if w == week}
        for region in REGIONS:
            states = pops.states_of(region)
            if states and all(s in per_state for s in states):
                table.add(region, week, compute_wili(per_state, pops, region))
    return table


class Panel:
    """Aligned collection of component forecasts with explicit missingness."""

    def __init__(self, entries: dict[ForecastKey, np.ndarray], truth: TruthTable):
        self.entries = entries
        self.truth = truth
        self.roster: tuple[str, ...] = tuple(sorted({k.model_id for k in entries}))
        self.regions: tuple[str, ...] = tuple(sorted({k.region for k in entries}))
        self.targets: tuple[int, ...] = tuple(sorted({k.target for k in entries}))
        self._by_cell: dict[tuple[str, int, Epiweek], dict[str, np.ndarray]] = {}
        for key, pmf in entries.items():
            cell = self._by_cell.setdefault((key.region, key.target, key.issue), {})
            cell[key.model_id] = pmf

    @classmethod
    def assemble(cls, fragments, truth: TruthTable) -> "Panel":
        entries: dict[ForecastKey, np.ndarray] = {}
        for fragment in fragments:
            overlap = entries.keys() & fragment.keys()
            if overlap:
                raise ForecastDataError(f"duplicate forecast for {sorted(overlap)[0]}")
            entries.update(fragment)
        return cls(entries, truth)

    def available(self, region: str, target: int, issue: Epiweek) -> dict[str, np.ndarray]:
        cell = self._by_cell.get((region, target, issue), {})
        return dict(sorted(cell.items()))

    def missing(self, region: str, target: int, issue: Epiweek) -> frozenset[str]:
        cell = self._by_cell.get((region, target, issue), {})
        return frozenset(self.roster) - cell.keys()

    def realized_truth(self, region: str, target: int, issue: Epiweek) -> float | None:
        return self.truth.wili(region, issue.add_weeks(target))

    def seasons(self) -> tuple[int, ...]:
        found = set()
        for key in self.entries:
            season = season_of(key.issue)
            if season is None:
                raise ForecastDataError(f"forecast issued off-season at {key.issue}")
            found.add(season)
        return tuple(sorted(found))

    def __eq__(self, other) -> bool:
        if not isinstance(other, Panel) or self.entries.keys() != other.entries.keys():
            return False
        return all(np.array_equal(self.entries[k], other.entries[k]) for k in self.entries)


def _season_csv(directory: Path, season: int) -> Path:
    return directory / f"season-{season}.csv"


def _season_sidecar(directory: Path, season: int) -> Path:
    return directory / f"season-{season}.json"


def write_panel(panel: Panel, directory) -> None:
    """Persist a panel: one forecasts CSV per season plus a JSON sidecar
    carrying the roster and explicit missingness, and the truth table."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    by_season: dict[int, list[ForecastKey]] = {}
    for key in panel.entries:
        season = season_of(key.issue)
        if season is None:
            raise ForecastDataError(f"forecast issued off-season at {key.issue}")
        by_season.setdefault(season, []).append(key)

    for season, keys in sorted(by_season.items()):
        with open(_season_csv(directory, season), "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(_COMPONENT_HEADER)
            for key in sorted(keys):
                pmf = panel.entries[key]
                writer.writerow(
                    [key.region, key.target, key.model_id, str(key.issue)]
                    + [repr(float(v)) for v in pmf]
                )
        missing: dict[str, list[str]] = {}
        season_region = sorted({k.region for k in keys})
        season_target = sorted({k.target for k in keys})
        for region in season_region:
            for target in season_target:
                for week in season_weeks(season):
                    absent = sorted(panel.missing(region, target, week))
                    if absent:
                        missing[f"{region}|{target}|{week}"] = absent
        sidecar = {
            "season": season,
            "roster": list(panel.roster),
            "regions": season_region,
            "targets": season_target,
            "missing": missing,
        }
        _season_sidecar(directory, season).write_text(
            json.dumps(sidecar, indent=1, sort_keys=True) + "\n"
        )

    with open(directory / "truth.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["region", "epiweek", "wili"])
        for (region, week), value in panel.truth.items():
            writer.writerow([region, str(week), repr(float(value))])


def load_panel(directory, seasons=None) -> Panel:
    """Load a persisted panel, optionally restricted to given seasons.

    Stored probabilities are read back exactly (no renormalization), so a
    write/load cycle is bit-exact.
    """
    directory = Path(directory)
    truth_path = directory / "truth.csv"
    if not truth_path.exists():
        raise ForecastDataError(f"no truth table at {truth_path}")
    truth = parse_truth_csv(truth_path)
    entries: dict[ForecastKey, np.ndarray] = {}
    rosters: list[tuple[str, ...]] = []
    paths = sorted(directory.glob("season-*.csv"))
    if seasons is not None:
        wanted = {int(s) for s in seasons}
        paths = [p for p in paths if int(p.stem.split("-")[1]) in wanted]
        found = {int(p.stem.split("-")[1]) for p in paths}
        if found != wanted:
            raise ForecastDataError(f"panel missing seasons {sorted(wanted - found)}")
    for path in paths:
        fragment = parse_component_csv(path, renormalize=False)
        for key, pmf in fragment.items():
            total = float(pmf.sum())
            if abs(total - 1.0) > 1e-6:
                raise ForecastDataError(f"{path}: stored pmf for {key} sums to {total}")
        entries.update(fragment)
        season = int(path.stem.split("-")[1])
        sidecar = json.loads(_season_sidecar(directory, season).read_text())
        rosters.append(tuple(sidecar["roster"]))
    if rosters and len(set(rosters)) != 1:
        raise ForecastDataError("inconsistent rosters across season sidecars")
    panel = Panel(entries, truth)
    if rosters and set(panel.roster) - set(rosters[0]):
        raise ForecastDataError("stored forecasts reference models outside the roster")
    if rosters:
        panel.roster = rosters[0]
    return panel
