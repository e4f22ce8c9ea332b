"""Season replay: walk weeks in order, build every ensemble variant, score
forecasts as their target weeks realize, and persist artifacts incrementally.

At week t a variant sees only forecasts issued at or before t and truths for
weeks at or before t. Week artifacts are written atomically (CSV of pooled
pmfs first, then the JSON bundle that marks the week complete), so an
interrupted run resumes at the first incomplete week and reproduces exactly
what an uninterrupted run would have written.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .ensembles import (
    DEFAULT_PHI_GRID,
    VARIANTS,
    EnsembleRun,
    HistoryStore,
    SeasonData,
    make_variant,
    stratum_sort_key,
)
from .epiweek import Epiweek
from .panel import (
    Panel,
    ForecastDataError,
    ingest_flusight_tree,
    load_panel,
    parse_component_csv,
    parse_population_csv,
    parse_state_ili_csv,
    parse_truth_csv,
    truth_from_state_ili,
    write_panel,
)
from .pmf import N_BINS
from .scoring import ScoreRecord, brier_integral, log_score, pit_value

__all__ = ["ConfigError", "RunConfig", "ingest", "replay", "load_run_artifacts"]


class ConfigError(ValueError):
    """The run configuration file is malformed."""


_CONFIG_KEYS = {
    "forecasts",
    "flusight_dir",
    "truth",
    "state_ili",
    "populations",
    "seasons",
    "targets",
    "variants",
    "phi_grid",
    "delta",
    "seed",
    "brier_mode",
}


@dataclass(frozen=True)
class RunConfig:
    """Replay settings parsed from a flat key = value file."""

    forecasts: tuple[str, ...] = ()
    flusight_dir: str | None = None
    truth: str | None = None
    state_ili: str | None = None
    populations: str | None = None
    seasons: tuple[int, ...] = ()
    targets: tuple[int, ...] = (1, 2, 3, 4)
    variants: tuple[str, ...] = VARIANTS
    phi_grid: tuple[float, ...] = DEFAULT_PHI_GRID
    delta: float = 5.0
    seed: int = 0
    brier_mode: str = "standard"
    source_text: str = field(default="", compare=False)

    @classmethod
    def parse(cls, text: str) -> "RunConfig":
        values: dict[str, str] = {}
        for line_no, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {line_no}: expected key = value")
            key, _, value = line.partition("=")
            key = key.strip()
            if key not in _CONFIG_KEYS:
                raise ConfigError(f"line {line_no}: unknown config key {key!r}")
            if key in values:
                raise ConfigError(f"line {line_no}: duplicate config key {key!r}")
            values[key] = value.strip()

        def split(key: str) -> list[str]:
            return [v.strip() for v in values[key].split(",") if v.strip()]

        kwargs: dict = {"source_text": text}
        try:
            if "forecasts" in values:
                kwargs["forecasts"] = tuple(split("forecasts"))
            for key in ("flusight_dir", "truth", "state_ili", "populations"):
                if key in values:
                    kwargs[key] = values[key]
            if "seasons" in values:
                kwargs["seasons"] = tuple(int(v) for v in split("seasons"))
            if "targets" in values:
                kwargs["targets"] = tuple(sorted(int(v) for v in split("targets")))
            if "variants" in values:
                kwargs["variants"] = tuple(split("variants"))
            if "phi_grid" in values:
                kwargs["phi_grid"] = tuple(float(v) for v in split("phi_grid"))
            if "delta" in values:
                kwargs["delta"] = float(values["delta"])
            if "seed" in values:
                kwargs["seed"] = int(values["seed"])
            if "brier_mode" in values:
                kwargs["brier_mode"] = values["brier_mode"]
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        config = cls(**kwargs)
        config.validate()
        return config

    @classmethod
    def load(cls, path) -> "RunConfig":
        return cls.parse(Path(path).read_text())

    def validate(self) -> None:
        unknown = set(self.variants) - set(VARIANTS)
        if unknown:
            raise ConfigError(f"unknown variants {sorted(unknown)}")
        if not self.variants:
            raise ConfigError("at least one ensemble variant is required")
        bad = [t for t in self.targets if t not in (1, 2, 3, 4)]
        if bad:
            raise ConfigError(f"targets {bad} outside 1..4")
        if not self.targets:
            raise ConfigError("at least one target is required")
        if self.delta < 0.0:
            raise ConfigError("delta must be >= 0")
        if not self.phi_grid:
            raise ConfigError("phi_grid must not be empty")
        if self.brier_mode not in ("standard", "strict"):
            raise ConfigError(f"unknown brier_mode {self.brier_mode!r}")


def _panel_dir(out_dir: Path) -> Path:
    return out_dir / "panel"


def ingest(config: RunConfig, out_dir) -> Path:
    """Build the persisted panel (per-season forecasts, sidecars, truth)."""
    out_dir = Path(out_dir)
    fragments = []
    for path in config.forecasts:
        fragments.append(parse_component_csv(path))
    if config.flusight_dir:
        fragment, _skipped = ingest_flusight_tree(config.flusight_dir)
        fragments.append(fragment)
    if not fragments:
        raise ForecastDataError("no forecast sources configured")
    if config.truth:
        truth = parse_truth_csv(config.truth)
    elif config.state_ili and config.populations:
        truth = truth_from_state_ili(
            parse_state_ili_csv(config.state_ili), parse_population_csv(config.populations)
        )
    else:
        raise ForecastDataError("no truth source configured")
    panel = Panel.assemble(fragments, truth)
    write_panel(panel, _panel_dir(out_dir))
    return _panel_dir(out_dir)


def _atomic_write(path: Path, text: str) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def _week_paths(out_dir: Path, variant: str, season: int, week: Epiweek) -> tuple[Path, Path]:
    base = out_dir / "runs" / variant / str(season)
    return base / f"week-{week}.csv", base / f"week-{week}.json"


def _run_to_json(run: EnsembleRun) -> dict:
    return {
        "region": run.region,
        "target": run.target,
        "issue_week": run.issue_week,
        "week_index": run.week_index,
        "has_pmf": run.pmf is not None,
        "weights": run.weights,
        "entropy": run.entropy,
        "phi": run.phi,
        "clusters": [list(c) for c in run.clusters] if run.clusters is not None else None,
        "leaders": list(run.leaders) if run.leaders is not None else None,
        "n_clusters": run.n_clusters,
        "missing_models": list(run.missing_models),
        "note": run.note,
    }


def _run_from_json(variant: str, season: int, item: dict, pmf) -> EnsembleRun:
    return EnsembleRun(
        variant=variant,
        season=season,
        region=item["region"],
        target=item["target"],
        issue_week=item["issue_week"],
        week_index=item["week_index"],
        pmf=pmf,
        weights=item["weights"],
        entropy=item["entropy"],
        phi=item["phi"],
        clusters=tuple(tuple(c) for c in item["clusters"]) if item["clusters"] is not None else None,
        leaders=tuple(item["leaders"]) if item["leaders"] is not None else None,
        n_clusters=item["n_clusters"],
        missing_models=tuple(item["missing_models"]),
        note=item["note"],
    )


def _score_to_json(record: ScoreRecord) -> dict:
    return {
        "region": record.region,
        "target": record.target,
        "issue_week": record.issue_week,
        "target_week": record.target_week,
        "log_score": record.log_score,
        "pit": record.pit,
        "brier_integral": record.brier_integral,
    }


def _write_week(
    out_dir: Path,
    variant: str,
    season: int,
    week: Epiweek,
    runs: list[EnsembleRun],
    scores: list[ScoreRecord],
) -> None:
    csv_path, json_path = _week_paths(out_dir, variant, season, week)
    csv_path.parent.mkdir(parents=True, exist_ok=True)
    lines = [",".join(["region", "target"] + [f"bin_{i}" for i in range(1, N_BINS + 1)])]
    for run in runs:
        if run.pmf is not None:
            lines.append(",".join([run.region, str(run.target)] + [repr(float(v)) for v in run.pmf]))
    _atomic_write(csv_path, "\n".join(lines) + "\n")
    payload = {
        "variant": variant,
        "season": season,
        "issue_week": week.to_int(),
        "runs": [_run_to_json(r) for r in runs],
        "scores": [_score_to_json(s) for s in scores],
    }
    _atomic_write(json_path, json.dumps(payload, indent=1, sort_keys=True) + "\n")


def _load_week(
    out_dir: Path, variant: str, season: int, week: Epiweek
) -> tuple[list[EnsembleRun], list[ScoreRecord]] | None:
    csv_path, json_path = _week_paths(out_dir, variant, season, week)
    if not json_path.exists():
        return None
    payload = json.loads(json_path.read_text())
    pmfs: dict[tuple[str, int], np.ndarray] = {}
    if csv_path.exists():
        with open(csv_path, newline="") as fh:
            reader = csv.reader(fh)
            next(reader, None)
            for row in reader:
                if not row:
                    continue
                pmf = np.array([float(v) for v in row[2:]])
                pmf.setflags(write=False)
                pmfs[(row[0], int(row[1]))] = pmf
    runs = [
        _run_from_json(variant, season, item, pmfs.get((item["region"], item["target"])))
        for item in payload["runs"]
    ]
    scores = [
        ScoreRecord(
            variant=variant,
            region=item["region"],
            target=item["target"],
            issue_week=item["issue_week"],
            target_week=item["target_week"],
            log_score=item["log_score"],
            pit=item["pit"],
            brier_integral=item["brier_integral"],
        )
        for item in payload["scores"]
    ]
    return runs, scores


def _score_runs_targeting(
    data: SeasonData,
    season_runs: dict[int, dict[tuple[str, int], EnsembleRun]],
    t: int,
    targets,
    strict: bool,
) -> list[ScoreRecord]:
    """Score every stored run whose target week realizes at week index t."""
    records = []
    week_int = (
        data.weeks[t - 1].to_int() if t <= data.n_weeks
        else data.weeks[-1].add_weeks(t - data.n_weeks).to_int()
    )
    for target in sorted(targets):
        j = t - target
        if j < 1 or j not in season_runs:
            continue
        for stratum in sorted(season_runs[j], key=stratum_sort_key):
            region, run_target = stratum
            if run_target != target:
                continue
            run = season_runs[j][stratum]
            if run.pmf is None:
                continue
            truth = data.strata[stratum].truth_target[j]
            if truth is None:
                continue
            records.append(
                ScoreRecord(
                    variant=run.variant,
                    region=region,
                    target=target,
                    issue_week=run.issue_week,
                    target_week=week_int,
                    log_score=log_score(run.pmf, truth),
                    pit=pit_value(run.pmf, truth),
                    brier_integral=brier_integral(run.pmf, truth, strict_orientation=strict),
                )
            )
    return records


def replay(config: RunConfig, out_dir) -> None:
    """Replay all configured seasons for all configured variants."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if config.source_text:
        cfg_path = out_dir / "run.cfg"
        if not cfg_path.exists():
            _atomic_write(cfg_path, config.source_text)
    panel_dir = _panel_dir(out_dir)
    if not panel_dir.exists():
        ingest(config, out_dir)
    available = sorted(int(p.stem.split("-")[1]) for p in panel_dir.glob("season-*.csv"))
    if not config.seasons:
        raise ConfigError("no seasons configured")
    missing = set(config.seasons) - set(available)
    if missing:
        raise ForecastDataError(f"panel has no data for seasons {sorted(missing)}")

    history = HistoryStore()
    variants = [
        make_variant(name, phi_grid=config.phi_grid, delta=config.delta)
        for name in config.variants
    ]
    last = max(config.seasons)
    for season in available:
        if season > last:
            break
        panel = load_panel(panel_dir, seasons=[season])
        data = SeasonData(panel, season, config.targets, history)
        if season in config.seasons:
            _replay_season_runs(data, variants, config, out_dir)
        history.absorb(data)


def _replay_season_runs(
    data: SeasonData, variants, config: RunConfig, out_dir: Path
) -> None:
    strict = config.brier_mode == "strict"
    horizon = max(config.targets)
    for variant in variants:
        season_runs: dict[int, dict[tuple[str, int], EnsembleRun]] = {}
        for t in range(1, data.n_weeks + horizon + 1):
            in_season = t <= data.n_weeks
            week = (
                data.weeks[t - 1]
                if in_season
                else data.weeks[-1].add_weeks(t - data.n_weeks)
            )
            cached = _load_week(out_dir, variant.name, data.season, week)
            if cached is not None:
                runs = cached[0]
            elif in_season:
                runs = variant.week_runs(data, t)
            else:
                runs = []
            season_runs[t] = {(r.region, r.target): r for r in runs}
            if cached is None:
                scores = _score_runs_targeting(
                    data, season_runs, t, config.targets, strict
                )
                _write_week(out_dir, variant.name, data.season, week, runs, scores)


def load_run_artifacts(out_dir) -> tuple[list[EnsembleRun], list[ScoreRecord]]:
    """Read every persisted run and score record under a run directory."""
    out_dir = Path(out_dir)
    runs_root = out_dir / "runs"
    if not runs_root.exists():
        raise FileNotFoundError(f"no runs directory under {out_dir}")
    all_runs: list[EnsembleRun] = []
    all_scores: list[ScoreRecord] = []
    for variant_dir in sorted(runs_root.iterdir()):
        if not variant_dir.is_dir():
            continue
        for season_dir in sorted(variant_dir.iterdir()):
            if not season_dir.is_dir():
                continue
            season = int(season_dir.name)
            for json_path in sorted(season_dir.glob("week-*.json")):
                week = Epiweek.from_int(int(json_path.stem.split("-")[1]))
                loaded = _load_week(out_dir, variant_dir.name, season, week)
                if loaded is None:
                    continue
                all_runs.extend(loaded[0])
                all_scores.extend(loaded[1])
    return all_runs, all_scores
