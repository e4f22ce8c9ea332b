import datetime as dt

import pytest

from cappool.epiweek import (
    Epiweek,
    season_length,
    season_of,
    season_weeks,
    weeks_in_year,
)


def _oracle_weeks_in_year(year: int) -> int:
    # Independent re-derivation: week 1 starts on the Sunday of the first
    # week with at least four days in the new calendar year.
    def week1_start(y: int) -> dt.date:
        jan1 = dt.date(y, 1, 1)
        dow = (jan1.weekday() + 1) % 7
        start = jan1 - dt.timedelta(days=dow)
        if dow > 3:
            start += dt.timedelta(days=7)
        return start

    return (week1_start(year + 1) - week1_start(year)).days // 7


class TestCalendar:
    def test_table_matches_date_arithmetic(self):
        for year in range(1990, 2041):
            assert weeks_in_year(year) == _oracle_weeks_in_year(year)

    def test_known_53_week_years(self):
        assert weeks_in_year(2014) == 53
        assert weeks_in_year(2020) == 53
        assert weeks_in_year(2015) == 52

    def test_outside_calendar(self):
        with pytest.raises(ValueError):
            weeks_in_year(1900)


class TestEpiweek:
    def test_ordering_lexicographic(self):
        assert Epiweek(2010, 40) < Epiweek(2010, 41) < Epiweek(2011, 1)

    def test_int_roundtrip(self):
        assert Epiweek.from_int(201040).to_int() == 201040
        assert str(Epiweek(2011, 3)) == "201103"

    def test_parse_errors(self):
        with pytest.raises(ValueError):
            Epiweek.parse("2010-40")
        with pytest.raises(ValueError):
            Epiweek.parse("20104")

    def test_invalid_week(self):
        with pytest.raises(ValueError):
            Epiweek(2015, 53)
        Epiweek(2014, 53)  # valid in a 53-week year

    def test_add_weeks_within_year(self):
        assert Epiweek(2010, 40).add_weeks(4) == Epiweek(2010, 44)

    def test_add_weeks_across_year(self):
        assert Epiweek(2010, 52).add_weeks(1) == Epiweek(2011, 1)
        assert Epiweek(2014, 52).add_weeks(1) == Epiweek(2014, 53)
        assert Epiweek(2014, 53).add_weeks(1) == Epiweek(2015, 1)

    def test_add_weeks_negative(self):
        assert Epiweek(2011, 1).add_weeks(-1) == Epiweek(2010, 52)

    def test_four_week_ahead_target(self):
        assert Epiweek.from_int(201040).add_weeks(4).to_int() == 201044

    def test_diff_inverts_add(self, rng):
        for _ in range(100):
            base = Epiweek(int(rng.integers(2005, 2030)), int(rng.integers(1, 53)))
            n = int(rng.integers(-120, 120))
            assert base.add_weeks(n).diff(base) == n


class TestSeason:
    def test_membership(self):
        assert season_of(Epiweek(2010, 40)) == 2010
        assert season_of(Epiweek(2011, 20)) == 2010
        assert season_of(Epiweek(2011, 21)) is None
        assert season_of(Epiweek(2011, 39)) is None

    def test_week_53_belongs_to_its_start_year_season(self):
        assert season_of(Epiweek(2014, 53)) == 2014

    def test_season_weeks_contiguous(self):
        weeks = season_weeks(2010)
        assert weeks[0] == Epiweek(2010, 40)
        assert weeks[-1] == Epiweek(2011, 20)
        assert len(weeks) == season_length(2010) == 33
        for a, b in zip(weeks, weeks[1:]):
            assert a.add_weeks(1) == b

    def test_season_length_53_week_year(self):
        assert season_length(2014) == 34
