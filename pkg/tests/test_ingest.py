from datetime import date, datetime, timedelta, timezone

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stintensity.ingest import (
    EventRecord,
    SlotMapper,
    bin_events,
    parse_timestamp,
    read_counts,
    read_events,
    read_intensity,
    scale_kind3,
    write_counts,
    write_intensity,
)
from stintensity.model import NO_LOCATION, PRECISE, SELF_DECLARED, CountVector, DetectorLayout, SourceGrid, ValidationError

GRID = SourceGrid(("A", "B", "C"), 24)
T0 = datetime(2012, 1, 2, tzinfo=timezone.utc)


def rec(kind="precise", region="A", hour=0, target=True):
    return EventRecord(T0 + timedelta(hours=hour), kind, None if kind == "none" else region, target)


def test_empty_stream():
    x, report = bin_events([], GRID)
    assert x.total == 0 and report.total == 0


def test_single_record():
    x, report = bin_events([rec("precise", "A", 3)], GRID)
    layout = DetectorLayout(GRID)
    expected = np.zeros(layout.m, dtype=int)
    expected[layout.index(PRECISE, "A", 3)] = 1
    assert np.array_equal(x.x, expected)
    assert report.accepted == report.counted == 1


def test_kind_mix():
    rng = np.random.default_rng(0)
    kinds = rng.choice(["precise", "self_declared", "none"], 100_000, p=[0.03, 0.47, 0.50])
    regions = rng.choice(list(GRID.regions), kinds.size)
    hours = rng.integers(0, 24, kinds.size)
    records = [rec(k, r, int(h)) for k, r, h in zip(kinds, regions, hours)]
    x, report = bin_events(records, GRID)
    assert report.counted == 100_000
    # oracle: tally the generated labels directly
    for kind, name in ((PRECISE, "precise"), (SELF_DECLARED, "self_declared"), (NO_LOCATION, "none")):
        assert x.kind(kind).sum() == np.sum(kinds == name)
    for kind, p in ((PRECISE, 0.03), (SELF_DECLARED, 0.47), (NO_LOCATION, 0.50)):
        assert abs(x.kind(kind).sum() / 1e5 - p) <= 0.01 * p + 3 * np.sqrt(p * (1 - p) / 1e5)


def test_filters():
    records = [rec("precise", "A", 1, True), rec("precise", "B", 2, False), rec("self_declared", "C", 3, False)]
    x, report = bin_events(records, GRID, filter="target")
    assert x.total == 1 and report.accepted == 3
    z, _ = bin_events(records, GRID, filter="all")
    assert z.total == 2 and z.kind(SELF_DECLARED).sum() == 0
    with pytest.raises(ValidationError):
        bin_events(records, GRID, filter="some")


def test_unknown_region_reported(tmp_path):
    path = tmp_path / "events.csv"
    path.write_text(
        "timestamp,location_kind,region,is_target\n"
        "2012-01-02T05:00:00Z,precise,A,1\n"
        "2012-01-02T05:00:00Z,precise,ZZ,1\n"
        "not-a-time,none,,1\n"
        "2012-01-02T06:00:00Z,none,,0\n"
        "2012-01-02T07:00:00Z,none,B,1\n"
    )
    x, report = bin_events(read_events(path), GRID)
    assert report.accepted == 2 and report.counted == 1
    assert [ln for ln, _ in report.rejected] == [3, 4, 6]
    assert "ZZ" in report.rejected[0][1]
    assert report.total == 5


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.sampled_from(["precise", "self_declared", "none", "bogus"]), st.sampled_from(["A", "B", "Q"]), st.integers(0, 47))))
def test_records_conserved(rows):
    items = []
    for k, (kind, region, hour) in enumerate(rows):
        try:
            items.append((k, EventRecord(T0 + timedelta(hours=hour), kind, None if kind == "none" else region, True)))
        except ValidationError as err:
            items.append((k, err))
    x, report = bin_events(items, GRID)
    assert report.accepted + len(report.rejected) == len(rows)
    assert x.total == report.counted == report.accepted


class TestSlots:
    def test_hour_utc(self):
        assert SlotMapper()(parse_timestamp("2012-03-01T23:30:00Z")) == 23

    def test_timezone(self):
        mapper = SlotMapper(tz="America/Chicago")
        # 2012-01-15 03:00 UTC is 21:00 the previous evening in Chicago (UTC-6)
        assert mapper(parse_timestamp("2012-01-15T03:00:00+00:00")) == 21
        # daylight saving: UTC-5 in July
        assert mapper(parse_timestamp("2012-07-15T03:00:00Z")) == 22

    def test_naive_timestamps_are_utc(self):
        assert parse_timestamp("2012-01-01 04:10:00") == datetime(2012, 1, 1, 4, 10, tzinfo=timezone.utc)

    def test_day_mode(self):
        mapper = SlotMapper("day", start=date(2012, 1, 1), time_slots=70)
        assert mapper(parse_timestamp("2012-01-11T12:00:00Z")) == 10
        with pytest.raises(ValidationError):
            mapper(parse_timestamp("2012-04-01T00:00:00Z"))

    def test_invalid(self):
        with pytest.raises(ValidationError):
            SlotMapper(tz="Mars/Olympus")
        with pytest.raises(ValidationError):
            SlotMapper("hour", time_slots=12)
        with pytest.raises(ValidationError):
            SlotMapper("day")


def test_record_invariants():
    with pytest.raises(ValidationError):
        EventRecord(T0, "none", "A", True)
    with pytest.raises(ValidationError):
        EventRecord(T0, "precise", None, True)


def test_counts_roundtrip(tmp_path, rng):
    layout = DetectorLayout(GRID)
    x = CountVector(rng.poisson(2.0, layout.m), layout)
    write_counts(tmp_path / "c.csv", x)
    assert np.array_equal(read_counts(tmp_path / "c.csv", layout).x, x.x)
    lines = (tmp_path / "c.csv").read_text().splitlines()
    assert lines[0] == "kind,region,slot,count"
    assert lines[-1].startswith("3,,23,")


def test_counts_errors(tmp_path):
    layout = DetectorLayout(GRID)
    path = tmp_path / "c.csv"
    path.write_text("kind,region,slot,count\n1,A,0,2\n1,Q,0,1\n")
    with pytest.raises(ValidationError, match=":3:"):
        read_counts(path, layout)
    path.write_text("kind,region,slot,count\n1,A,0,-2\n")
    with pytest.raises(ValidationError):
        read_counts(path, layout)


def test_scale_kind3():
    layout = DetectorLayout(SourceGrid(("A",), 2))
    x = scale_kind3(CountVector([1, 2, 3, 4, 5, 7], layout), 1.5)
    assert x.x.tolist() == [1, 2, 3, 4, 8, 10]


def test_intensity_outputs(tmp_path, rng):
    f = rng.lognormal(0, 2, GRID.n)
    main, spatial, temporal = write_intensity(tmp_path / "f", GRID, f)
    assert np.array_equal(read_intensity(main, GRID), f)
    s = np.loadtxt(spatial, delimiter=",", skiprows=1, usecols=1)
    t = np.loadtxt(temporal, delimiter=",", skiprows=1, usecols=1)
    assert s.size == 3 and t.size == 24
    total = f.sum()
    assert abs(s.sum() - total) <= 1e-9 * total
    assert abs(t.sum() - total) <= 1e-9 * total
