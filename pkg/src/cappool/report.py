"""Report generation: plot-ready tables summarizing a completed replay.

Reports are pure functions of the persisted artifacts plus the truth table;
regenerating them never changes run outputs. Aggregates are offered both
per week-ahead target and pooled over all targets, keyed consistently.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .diagnostics import cluster_trajectory, peak_week
from .ensembles import EnsembleRun
from .epiweek import Epiweek, season_of
from .panel import TruthTable, parse_truth_csv
from .replay import load_run_artifacts
from .scoring import BRIER_THRESHOLDS, ScoreRecord, brier_score, pit_calibration_auc

__all__ = ["ReportBundle", "emit_report", "write_report"]

_GROUP_ALL = "all"

_PIT_GRID = [round(0.01 * k, 2) for k in range(101)]


@dataclass(frozen=True)
class ReportBundle:
    """All report tables, as header + row lists ready for CSV emission."""

    scores: list[list]
    logscore_quantiles: list[list]
    pit_cdf: list[list]
    brier_by_threshold: list[list]
    logscore_by_offset: list[list]
    trajectory: list[list]
    summary: list[list]

    def tables(self) -> dict[str, list[list]]:
        return {
            "scores": self.scores,
            "logscore_quantiles": self.logscore_quantiles,
            "pit_cdf": self.pit_cdf,
            "brier_by_threshold": self.brier_by_threshold,
            "logscore_by_offset": self.logscore_by_offset,
            "trajectory": self.trajectory,
            "summary": self.summary,
        }


def _groups(targets) -> list:
    return sorted(targets) + [_GROUP_ALL]


def _in_group(record, group) -> bool:
    return group == _GROUP_ALL or record.target == group


def emit_report(
    runs: list[EnsembleRun],
    scores: list[ScoreRecord],
    truth: TruthTable,
    strict_brier: bool = False,
) -> ReportBundle:
    if not scores:
        raise ValueError("no scored weeks: nothing to report")
    variants = sorted({s.variant for s in scores})
    targets = sorted({s.target for s in scores})
    runs_by_key = {(r.variant, r.region, r.target, r.issue_week): r for r in runs}

    score_rows = [
        [
            "variant",
            "season",
            "region",
            "target",
            "issue_week",
            "target_week",
            "log_score",
            "pit",
            "brier_integral",
        ]
    ]
    for s in sorted(
        scores, key=lambda s: (s.variant, s.issue_week, s.region, s.target)
    ):
        season = season_of(Epiweek.from_int(s.issue_week))
        score_rows.append(
            [
                s.variant,
                season,
                s.region,
                s.target,
                s.issue_week,
                s.target_week,
                repr(s.log_score),
                repr(s.pit),
                repr(s.brier_integral),
            ]
        )

    quantile_rows = [["variant", "target", "q10", "q25", "q50", "q75", "q90", "n"]]
    pit_rows = [["variant", "target", "x", "cdf"]]
    brier_rows = [["variant", "target", "threshold", "mean_brier"]]
    offset_rows = [["variant", "target", "weeks_from_peak", "mean_log_score", "n"]]
    summary_rows = [
        [
            "variant",
            "target",
            "mean_log_score",
            "mean_brier_integral",
            "pit_auc_pooled",
            "pit_auc_mean_stratum",
            "n",
        ]
    ]

    peaks: dict[tuple[str, int], Epiweek | None] = {}
    for variant in variants:
        for group in _groups(targets):
            subset = [s for s in scores if s.variant == variant and _in_group(s, group)]
            if not subset:
                continue
            logs = np.array([s.log_score for s in subset])
            pits = [s.pit for s in subset]
            briers = np.array([s.brier_integral for s in subset])
            qs = np.quantile(logs, [0.10, 0.25, 0.50, 0.75, 0.90])
            quantile_rows.append(
                [variant, group] + [repr(float(q)) for q in qs] + [len(subset)]
            )
            # Empirical CDF of PIT values on a fixed grid.
            sorted_pits = np.sort(pits)
            for x in _PIT_GRID:
                cdf = float(np.searchsorted(sorted_pits, x, side="right")) / len(sorted_pits)
                pit_rows.append([variant, group, x, repr(cdf)])
            # Mean Brier score per cutpoint, recomputed from the pooled pmfs.
            acc = np.zeros(BRIER_THRESHOLDS.size)
            count = 0
            for s in subset:
                run = runs_by_key.get((variant, s.region, s.target, s.issue_week))
                if run is None or run.pmf is None:
                    continue
                truth_value = truth.wili(s.region, Epiweek.from_int(s.target_week))
                if truth_value is None:
                    continue
                acc += np.array(
                    [
                        brier_score(run.pmf, truth_value, float(x), strict_orientation=strict_brier)
                        for x in BRIER_THRESHOLDS
                    ]
                )
                count += 1
            if count:
                for x, value in zip(BRIER_THRESHOLDS, acc / count):
                    brier_rows.append([variant, group, repr(float(x)), repr(float(value))])
            # Log score by weeks from the regional peak of the issue week.
            buckets: dict[int, list[float]] = {}
            for s in subset:
                issue = Epiweek.from_int(s.issue_week)
                season = season_of(issue)
                if season is None:
                    continue
                key = (s.region, season)
                if key not in peaks:
                    peaks[key] = peak_week(truth, s.region, season)
                peak = peaks[key]
                if peak is None:
                    continue
                buckets.setdefault(issue.diff(peak), []).append(s.log_score)
            for offset in sorted(buckets):
                values = buckets[offset]
                offset_rows.append(
                    [variant, group, offset, repr(float(np.mean(values))), len(values)]
                )
            # Scalar summaries: pooled AUC plus the mean of per-stratum AUCs.
            strata: dict[tuple[str, int], list[float]] = {}
            for s in subset:
                strata.setdefault((s.region, s.target), []).append(s.pit)
            stratum_aucs = [pit_calibration_auc(v) for _, v in sorted(strata.items())]
            summary_rows.append(
                [
                    variant,
                    group,
                    repr(float(logs.mean())),
                    repr(float(briers.mean())),
                    repr(pit_calibration_auc(pits)),
                    repr(float(np.mean(stratum_aucs))),
                    len(subset),
                ]
            )

    trajectory_rows = [["variant", "weeks_from_peak", "mean_clusters", "mean_entropy", "n"]]
    for variant in variants:
        cap_runs = [r for r in runs if r.variant == variant and r.n_clusters is not None]
        if not cap_runs:
            continue
        for point in cluster_trajectory(cap_runs, truth):
            trajectory_rows.append(
                [
                    variant,
                    point.weeks_from_peak,
                    repr(point.mean_clusters),
                    repr(point.mean_entropy),
                    point.n,
                ]
            )

    return ReportBundle(
        scores=score_rows,
        logscore_quantiles=quantile_rows,
        pit_cdf=pit_rows,
        brier_by_threshold=brier_rows,
        logscore_by_offset=offset_rows,
        trajectory=trajectory_rows,
        summary=summary_rows,
    )


def write_report(out_dir, strict_brier: bool = False) -> Path:
    """Generate all report CSVs for a completed run directory."""
    out_dir = Path(out_dir)
    runs, scores = load_run_artifacts(out_dir)
    truth_path = out_dir / "panel" / "truth.csv"
    if not truth_path.exists():
        raise FileNotFoundError(f"no truth table at {truth_path}")
    truth = parse_truth_csv(truth_path)
    bundle = emit_report(runs, scores, truth, strict_brier=strict_brier)
    report_dir = out_dir / "reports"
    report_dir.mkdir(parents=True, exist_ok=True)
    for name, rows in bundle.tables().items():
        with open(report_dir / f"{name}.csv", "w", newline="") as fh:
            csv.writer(fh).writerows(rows)
    return report_dir
