import io

import numpy as np
import pytest

from cappool.epiweek import Epiweek
from cappool.panel import (
    ForecastDataError,
    ForecastKey,
    Panel,
    StatePopulationTable,
    TruthTable,
    canonical_region,
    compute_wili,
    convert_flusight_csv,
    load_panel,
    parse_component_csv,
    parse_population_csv,
    parse_state_ili_csv,
    parse_truth_csv,
    truth_from_state_ili,
    write_panel,
)
from cappool.pmf import N_BINS
from cappool.synthetic import synthetic_archive

HEADER = ",".join(
    ["region", "target", "model_id", "issue_epiweek"] + [f"bin_{i}" for i in range(1, N_BINS + 1)]
)


def _row(region="Nat", target="1", model="7", week="201040", probs=None):
    if probs is None:
        probs = [1.0 / N_BINS] * N_BINS
    return ",".join([region, target, model, week] + [str(p) for p in probs])


class TestCanonicalRegion:
    def test_tokens(self):
        assert canonical_region("nat") == "Nat"
        assert canonical_region("US National") == "Nat"
        assert canonical_region("HHS Region 3") == "HHS3"
        assert canonical_region("hhs10") == "HHS10"

    def test_unknown(self):
        with pytest.raises(ForecastDataError):
            canonical_region("HHS11")
        with pytest.raises(ForecastDataError):
            canonical_region("Europe")


class TestParseComponentCsv:
    def test_single_row(self):
        fragment = parse_component_csv(io.StringIO(HEADER + "\n" + _row()))
        key = ForecastKey("Nat", 1, "7", Epiweek(2010, 40))
        assert set(fragment) == {key}
        assert fragment[key].sum() == pytest.approx(1.0, abs=1e-9)

    def test_empty_file_with_header(self):
        assert parse_component_csv(io.StringIO(HEADER + "\n")) == {}

    def test_under_unit_sum_renormalized(self):
        probs = [0.97 / N_BINS] * N_BINS
        fragment = parse_component_csv(io.StringIO(HEADER + "\n" + _row(probs=probs)))
        pmf = next(iter(fragment.values()))
        assert pmf.sum() == pytest.approx(1.0, abs=1e-9)

    def test_unknown_region(self):
        with pytest.raises(ForecastDataError, match="row 2"):
            parse_component_csv(io.StringIO(HEADER + "\n" + _row(region="Mars")))

    def test_bad_target(self):
        with pytest.raises(ForecastDataError, match="row 2"):
            parse_component_csv(io.StringIO(HEADER + "\n" + _row(target="5")))

    def test_non_numeric_probability(self):
        probs = ["x"] + [str(1.0 / N_BINS)] * (N_BINS - 1)
        with pytest.raises(ForecastDataError, match="row 2"):
            parse_component_csv(io.StringIO(HEADER + "\n" + _row(probs=probs)))

    def test_duplicate_key(self):
        text = HEADER + "\n" + _row() + "\n" + _row()
        with pytest.raises(ForecastDataError, match="row 3"):
            parse_component_csv(io.StringIO(text))

    def test_wrong_header(self):
        with pytest.raises(ForecastDataError):
            parse_component_csv(io.StringIO("a,b,c\n1,2,3"))


class TestFlusightConverter:
    def _long_text(self):
        lines = ["Location,Target,Type,Unit,Bin_start_incl,Bin_end_notincl,Value"]
        lines.append("US National,1 wk ahead,Point,percent,,,2.1")
        for i in range(N_BINS):
            start = "13.0" if i == 130 else f"{i / 10:.1f}"
            end = "100" if i == 130 else f"{(i + 1) / 10:.1f}"
            lines.append(f"US National,1 wk ahead,Bin,percent,{start},{end},{1 / N_BINS}")
        lines.append("US National,Season onset,Bin,week,40,41,0.5")
        return "\n".join(lines)

    def test_conversion(self):
        fragment = convert_flusight_csv(
            io.StringIO(self._long_text()), "modelA", Epiweek(2016, 43)
        )
        key = ForecastKey("Nat", 1, "modelA", Epiweek(2016, 43))
        assert set(fragment) == {key}
        assert fragment[key].sum() == pytest.approx(1.0, abs=1e-9)
        assert np.allclose(fragment[key], 1.0 / N_BINS)

    def test_incomplete_bins_rejected(self):
        text = "\n".join(self._long_text().splitlines()[:-2])
        with pytest.raises(ForecastDataError, match="bins present"):
            convert_flusight_csv(io.StringIO(text), "m", Epiweek(2016, 43))


class TestParseTruthCsv:
    def test_direct(self):
        table = parse_truth_csv(io.StringIO("region,epiweek,wili\nNat,201743,2.3\n"))
        assert table.wili("Nat", Epiweek(2017, 43)) == 2.3

    def test_duplicate_rejected(self):
        text = "region,epiweek,wili\nNat,201743,2.3\nNat,201743,2.4\n"
        with pytest.raises(ForecastDataError):
            parse_truth_csv(io.StringIO(text))

    def test_range_rejected(self):
        with pytest.raises(ForecastDataError):
            parse_truth_csv(io.StringIO("region,epiweek,wili\nHHS3,201801,-1.0\n"))

    def test_extra_columns_tolerated(self):
        text = "release_date,region,epiweek,lag,wili\n2018-01-01,nat,201743,0,2.3\n"
        assert parse_truth_csv(io.StringIO(text)).wili("Nat", Epiweek(2017, 43)) == 2.3


POPS = StatePopulationTable(
    population={"aa": 1_000_000, "bb": 3_000_000, "cc": 500_000},
    region={"aa": "HHS1", "bb": "HHS1", "cc": "HHS2"},
)


class TestComputeWili:
    def test_single_state_region(self):
        assert compute_wili({"cc": 3.0}, POPS, "HHS2") == 3.0

    def test_two_state_weighting(self):
        assert compute_wili({"aa": 2.0, "bb": 4.0}, POPS, "HHS1") == pytest.approx(3.5)

    def test_constant_fixed_point(self):
        ili = {"aa": 1.7, "bb": 1.7, "cc": 1.7}
        assert compute_wili(ili, POPS, "Nat") == pytest.approx(1.7)

    def test_convex_bounds(self, rng):
        for _ in range(20):
            ili = {s: float(rng.uniform(0, 10)) for s in POPS.population}
            value = compute_wili(ili, POPS, "Nat")
            assert min(ili.values()) <= value <= max(ili.values())

    def test_missing_state(self):
        with pytest.raises(ForecastDataError):
            compute_wili({"aa": 2.0}, POPS, "HHS1")

    def test_zero_population(self):
        pops = StatePopulationTable({"aa": 0.0}, {"aa": "HHS1"})
        with pytest.raises(ForecastDataError):
            compute_wili({"aa": 2.0}, pops, "HHS1")

    def test_population_and_state_ili_parsers(self):
        pops = parse_population_csv(
            io.StringIO("state,region,population\naa,HHS1,1000000\nbb,HHS1,3000000\n")
        )
        ili = parse_state_ili_csv(
            io.StringIO("state,epiweek,ili\naa,201040,2.0\nbb,201040,4.0\n")
        )
        truth = truth_from_state_ili(ili, pops)
        assert truth.wili("HHS1", Epiweek(2010, 40)) == pytest.approx(3.5)
        # Nat needs every state; both are present here
        assert truth.wili("Nat", Epiweek(2010, 40)) == pytest.approx(3.5)


class TestPanel:
    def _small_panel(self):
        fragment, truth = synthetic_archive(
            seasons=(2010,), regions=("Nat",), targets=(1, 4), seed=11
        )
        return Panel.assemble([fragment], truth)

    def test_missing_set(self):
        fragment, truth = synthetic_archive(seasons=(2010,), regions=("Nat",), seed=1)
        drop = next(k for k in fragment if k.model_id == "m4" and k.target == 1)
        del fragment[drop]
        panel = Panel.assemble([fragment], truth)
        assert panel.missing(drop.region, drop.target, drop.issue) == {"m4"}

    def test_available_plus_missing_covers_roster(self):
        panel = self._small_panel()
        for key in panel.entries:
            avail = panel.available(key.region, key.target, key.issue)
            miss = panel.missing(key.region, key.target, key.issue)
            assert len(avail) + len(miss) == len(panel.roster)
            assert not set(avail) & miss

    def test_unobserved_truth(self):
        fragment, truth = synthetic_archive(seasons=(2010,), regions=("Nat",), seed=2)
        panel = Panel.assemble([fragment], TruthTable())
        key = next(iter(fragment))
        assert panel.realized_truth(key.region, key.target, key.issue) is None

    def test_target_week_arithmetic(self):
        panel = self._small_panel()
        issue = Epiweek(2010, 40)
        truth_value = panel.truth.wili("Nat", Epiweek(2010, 44))
        assert panel.realized_truth("Nat", 4, issue) == truth_value
        assert truth_value is not None

    def test_duplicate_across_fragments(self):
        fragment, truth = synthetic_archive(seasons=(2010,), regions=("Nat",), seed=3)
        with pytest.raises(ForecastDataError):
            Panel.assemble([fragment, dict(list(fragment.items())[:1])], truth)

    def test_roundtrip_bit_exact(self, tmp_path):
        panel = self._small_panel()
        write_panel(panel, tmp_path / "panel")
        loaded = load_panel(tmp_path / "panel")
        assert loaded == panel
        assert loaded.roster == panel.roster
        assert loaded.truth == panel.truth
        # a second write/load cycle is byte-stable
        write_panel(loaded, tmp_path / "panel2")
        a = sorted((tmp_path / "panel").glob("*"))
        b = sorted((tmp_path / "panel2").glob("*"))
        for pa, pb in zip(a, b):
            assert pa.read_bytes() == pb.read_bytes()

    def test_load_missing_season_rejected(self, tmp_path):
        panel = self._small_panel()
        write_panel(panel, tmp_path / "panel")
        with pytest.raises(ForecastDataError):
            load_panel(tmp_path / "panel", seasons=[1999])

    def test_off_season_forecast_rejected_at_persist(self, tmp_path):
        pmf = np.full(N_BINS, 1.0 / N_BINS)
        key = ForecastKey("Nat", 1, "m1", Epiweek(2010, 25))  # summer week
        panel = Panel.assemble([{key: pmf}], TruthTable())
        with pytest.raises(ForecastDataError, match="off-season"):
            write_panel(panel, tmp_path / "panel")
        with pytest.raises(ForecastDataError, match="off-season"):
            panel.seasons()

    def test_row_order_irrelevant(self, tmp_path):
        panel = self._small_panel()
        write_panel(panel, tmp_path / "panel")
        path = next((tmp_path / "panel").glob("season-*.csv"))
        lines = path.read_text().splitlines()
        reversed_text = "\n".join([lines[0]] + lines[:0:-1]) + "\n"
        shuffled = parse_component_csv(io.StringIO(reversed_text))
        straight = parse_component_csv(path)
        assert shuffled.keys() == straight.keys()
        assert all(np.array_equal(shuffled[k], straight[k]) for k in straight)
