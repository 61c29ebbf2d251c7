"""Event-record ingestion and count/intensity CSV formats.

Events CSV columns: ``timestamp,location_kind,region,is_target`` with
``location_kind`` one of ``precise``, ``self_declared``, ``none``.
Counts CSV columns: ``kind,region,slot,count`` (region empty for kind 3).
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from datetime import date, datetime, timezone
from typing import Iterable, Iterator
from zoneinfo import ZoneInfo

import numpy as np

from .model import (
    NO_LOCATION,
    PRECISE,
    SELF_DECLARED,
    CountVector,
    DetectorLayout,
    SourceGrid,
    ValidationError,
)

KIND_NAMES = {"precise": PRECISE, "self_declared": SELF_DECLARED, "none": NO_LOCATION}
_TRUE = {"1", "true", "yes", "y", "t"}
_FALSE = {"0", "false", "no", "n", "f"}


@dataclass(frozen=True)
class EventRecord:
    timestamp: datetime
    location_kind: str
    region: str | None
    is_target: bool

    def __post_init__(self):
        if self.location_kind not in KIND_NAMES:
            raise ValidationError(f"unknown location kind {self.location_kind!r}", "location_kind")
        has_region = self.region not in (None, "")
        if has_region != (self.location_kind != "none"):
            raise ValidationError("region must be present iff location_kind is not 'none'", "region")
        if self.timestamp.tzinfo is None:
            object.__setattr__(self, "timestamp", self.timestamp.replace(tzinfo=timezone.utc))

    @property
    def kind(self) -> int:
        return KIND_NAMES[self.location_kind]


class SlotMapper:
    """Map timestamps to slots: hour of day, or day offset from ``start``."""

    def __init__(self, mode: str = "hour", tz: str = "UTC", start: date | None = None, time_slots: int = 24):
        if mode not in ("hour", "day"):
            raise ValidationError(f"unknown slot mode {mode!r}", "slot_mode")
        if mode == "hour" and time_slots != 24:
            raise ValidationError("hour-of-day slots need time_slots = 24", "time_slots")
        if mode == "day" and start is None:
            raise ValidationError("day slots need a start date", "start_date")
        try:
            self.tz = ZoneInfo(tz)
        except Exception:
            raise ValidationError(f"unknown timezone {tz!r}", "timezone") from None
        self.mode, self.start, self.time_slots = mode, start, time_slots

    def __call__(self, ts: datetime) -> int:
        local = ts.astimezone(self.tz)
        if self.mode == "hour":
            return local.hour
        slot = (local.date() - self.start).days
        if not 0 <= slot < self.time_slots:
            raise ValidationError(f"timestamp {ts.isoformat()} outside the study period", "timestamp")
        return slot


@dataclass
class BinReport:
    accepted: int = 0
    counted: int = 0
    rejected: list = field(default_factory=list)  # (line, reason)

    @property
    def total(self) -> int:
        return self.accepted + len(self.rejected)

    def to_dict(self):
        return {
            "input": self.total,
            "accepted": self.accepted,
            "counted": self.counted,
            "rejected": [{"line": ln, "reason": why} for ln, why in self.rejected],
        }


def parse_timestamp(text: str) -> datetime:
    text = text.strip()
    if text.endswith("Z"):
        text = text[:-1] + "+00:00"
    ts = datetime.fromisoformat(text)
    return ts if ts.tzinfo else ts.replace(tzinfo=timezone.utc)


def _parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in _TRUE:
        return True
    if t in _FALSE:
        return False
    raise ValueError(f"bad boolean {text!r}")


def read_events(path) -> Iterator[tuple[int, EventRecord | Exception]]:
    """Yield ``(line_number, record_or_error)`` for each data row."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for rec in reader:
            line = reader.line_num
            try:
                yield line, EventRecord(
                    parse_timestamp(rec["timestamp"]),
                    rec["location_kind"].strip(),
                    (rec.get("region") or "").strip() or None,
                    _parse_bool(rec.get("is_target", "1") or "1"),
                )
            except (ValueError, KeyError, TypeError) as err:
                yield line, err


def bin_events(
    records: Iterable,
    grid: SourceGrid,
    layout: DetectorLayout | None = None,
    filter: str = "target",
    slot_of=None,
):
    """Accumulate records into detector-bin counts.

    ``records`` yields :class:`EventRecord` or ``(line, record_or_error)``.
    With ``filter="target"`` only target posts are counted; with ``"all"``
    every post is counted but only precise-location bins are retained.
    Returns ``(CountVector, BinReport)``.
    """
    if filter not in ("target", "all"):
        raise ValidationError(f"unknown filter {filter!r}", "filter")
    layout = layout or DetectorLayout(grid)
    slot_of = slot_of or SlotMapper(time_slots=grid.time_slots)
    x = np.zeros(layout.m, dtype=np.int64)
    report = BinReport()
    for k, item in enumerate(records, 1):
        line, rec = item if isinstance(item, tuple) else (k, item)
        if isinstance(rec, Exception):
            report.rejected.append((line, str(rec)))
            continue
        try:
            i = layout.index(rec.kind, rec.region, slot_of(rec.timestamp))
        except ValidationError as err:
            report.rejected.append((line, str(err)))
            continue
        report.accepted += 1
        if filter == "target" and not rec.is_target:
            continue
        if filter == "all" and rec.kind != PRECISE:
            continue
        x[i] += 1
        report.counted += 1
    return CountVector(x, layout), report


def scale_kind3(counts: CountVector, factor: float) -> CountVector:
    """Multiply no-location counts by ``factor`` (rounded to integers)."""
    if factor < 0:
        raise ValidationError("kind-3 multiplier must be non-negative", "kind3_multiplier")
    if factor == 1.0:
        return counts
    x = counts.x.copy()
    sl = counts.layout.kind_slice(NO_LOCATION)
    x[sl] = np.rint(x[sl] * factor).astype(np.int64)
    return CountVector(x, counts.layout)


def write_counts(path, counts: CountVector, kinds=(PRECISE, SELF_DECLARED, NO_LOCATION)):
    layout = counts.layout
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["kind", "region", "slot", "count"])
        for i in range(layout.m):
            kind, region, slot = layout.unindex(i)
            if kind in kinds:
                w.writerow([kind, region or "", slot, int(counts.x[i])])


def read_counts(path, layout: DetectorLayout) -> CountVector:
    """Read a counts CSV; absent bins are zero and repeated bins add up."""
    x = np.zeros(layout.m, dtype=np.int64)
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for rec in reader:
            try:
                kind = int(rec["kind"])
                slot = int(rec["slot"])
                count = int(rec["count"])
                region = (rec.get("region") or "").strip() or None
            except (KeyError, TypeError, ValueError):
                raise ValidationError(f"{path}:{reader.line_num}: malformed counts row", "counts") from None
            if count < 0:
                raise ValidationError(f"{path}:{reader.line_num}: negative count", "count")
            try:
                x[layout.index(kind, region, slot)] += count
            except ValidationError as err:
                raise ValidationError(f"{path}:{reader.line_num}: {err}", err.field) from None
    return CountVector(x, layout)


def write_intensity(path_stem, grid: SourceGrid, f_hat):
    """Write ``<stem>.csv`` plus spatial and temporal aggregates.

    Returns the three paths written.
    """
    F = grid.as_matrix(np.asarray(f_hat, dtype=float))
    main = f"{path_stem}.csv"
    spatial = f"{path_stem}_spatial.csv"
    temporal = f"{path_stem}_temporal.csv"
    with open(main, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["region", "slot", "intensity"])
        for r, region in enumerate(grid.regions):
            for t in range(grid.time_slots):
                w.writerow([region, t, repr(float(F[r, t]))])
    with open(spatial, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["region", "intensity"])
        for region, v in zip(grid.regions, F.sum(axis=1)):
            w.writerow([region, repr(float(v))])
    with open(temporal, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["slot", "intensity"])
        for t, v in enumerate(F.sum(axis=0)):
            w.writerow([t, repr(float(v))])
    return main, spatial, temporal


def read_intensity(path, grid: SourceGrid) -> np.ndarray:
    f = np.full(grid.n, np.nan)
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            f[grid.index(rec["region"], int(rec["slot"]))] = float(rec["intensity"])
    if np.any(np.isnan(f)):
        raise ValidationError(f"{path}: missing source bins", "intensity")
    return f
