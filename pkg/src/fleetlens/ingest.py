"""Snapshot-stream ingestion: parsing, validation, per-vehicle timeline assembly.

The interchange format is UTF-8 line-delimited JSON, one parked-vehicle
observation per line::

    {"ts": "2015-05-17T10:23:00+00:00", "vid": "v0012", "lat": 48.1371,
     "lon": 11.5754, "fuel": 73.5, "city": "munich"}

``fuel`` is optional, everything else is required. A line that does not
decode, lacks a required field, or carries out-of-domain values (latitude
beyond +/-90, fuel outside 0..100) counts as malformed and is skipped; it
never aborts a run.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, replace
from datetime import datetime, timedelta, timezone
from pathlib import Path
from typing import IO, Iterable, Iterator

from .geo import GeoBounds, GeoPoint, fast_distance_m

logger = logging.getLogger(__name__)

DEFAULT_JITTER_RADIUS_M = 25.0


@dataclass(frozen=True, slots=True)
class SnapshotRecord:
    """One observation of one parked vehicle at one poll instant."""

    timestamp: datetime
    vehicle_id: str
    position: GeoPoint
    fuel_level: float | None
    city_id: str

    def __post_init__(self) -> None:
        lat, lon = self.position
        if not (-90.0 <= lat <= 90.0 and -180.0 <= lon <= 180.0):
            raise ValueError(f"coordinates out of domain: ({lat}, {lon})")
        if self.fuel_level is not None and not (0.0 <= self.fuel_level <= 100.0):
            raise ValueError(f"fuel level out of domain: {self.fuel_level}")


@dataclass(frozen=True, slots=True)
class PresenceInterval:
    """Maximal span during which a vehicle sat parked at one spot."""

    start: datetime
    end: datetime
    position: GeoPoint
    fuel_start: float | None = None
    fuel_end: float | None = None

    def duration_s(self) -> float:
        return (self.end - self.start).total_seconds()


@dataclass(frozen=True, slots=True)
class VehicleTimeline:
    vehicle_id: str
    intervals: tuple[PresenceInterval, ...]
    first_seen: datetime
    last_seen: datetime


@dataclass(frozen=True, slots=True)
class ParseReport:
    records_read: int
    records_parsed: int
    records_discarded_malformed: int
    records_discarded_invalid_coords: int = 0


def _parse_ts(raw: str) -> datetime:
    # Tolerate a trailing 'Z', which fromisoformat rejects before 3.11.
    dt = datetime.fromisoformat(raw.replace("Z", "+00:00"))
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt.astimezone(timezone.utc)


def record_from_json(line: str) -> SnapshotRecord:
    """Decode one interchange line; raises on any malformation."""
    obj = json.loads(line)
    fuel = obj.get("fuel")
    return SnapshotRecord(
        timestamp=_parse_ts(obj["ts"]),
        vehicle_id=str(obj["vid"]),
        position=GeoPoint(float(obj["lat"]), float(obj["lon"])),
        fuel_level=None if fuel is None else float(fuel),
        city_id=str(obj["city"]),
    )


def record_to_json(rec: SnapshotRecord) -> str:
    obj = {
        "ts": rec.timestamp.astimezone(timezone.utc).isoformat(),
        "vid": rec.vehicle_id,
        "lat": rec.position.lat,
        "lon": rec.position.lon,
        "city": rec.city_id,
    }
    if rec.fuel_level is not None:
        obj["fuel"] = rec.fuel_level
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def parse_snapshot_stream(lines: Iterable[str] | IO[str]) -> tuple[list[SnapshotRecord], ParseReport]:
    """Parse a line-delimited record stream, counting and skipping bad lines."""
    records: list[SnapshotRecord] = []
    read = 0
    malformed = 0
    for line in lines:
        if not line.strip():
            continue
        read += 1
        try:
            records.append(record_from_json(line))
        except (ValueError, KeyError, TypeError):
            malformed += 1
    if read and not records:
        logger.warning("snapshot stream yielded no parseable records")
    return records, ParseReport(read, len(records), malformed)


def parse_snapshot_file(path: str | Path) -> tuple[list[SnapshotRecord], ParseReport]:
    with open(path, encoding="utf-8") as fh:
        return parse_snapshot_stream(fh)


def validate_records(
    records: Iterable[SnapshotRecord], bounds: GeoBounds
) -> tuple[list[SnapshotRecord], list[SnapshotRecord]]:
    """Split records into (inside bounds, outside bounds). Nothing is dropped silently."""
    valid: list[SnapshotRecord] = []
    rejected: list[SnapshotRecord] = []
    for rec in records:
        (valid if bounds.contains(rec.position) else rejected).append(rec)
    return valid, rejected


def load_validated(path: str | Path, bounds: GeoBounds) -> tuple[list[SnapshotRecord], ParseReport]:
    """Parse a file and apply bounds filtering, returning the combined report."""
    records, report = parse_snapshot_file(path)
    valid, rejected = validate_records(records, bounds)
    return valid, replace(report, records_discarded_invalid_coords=len(rejected))


def build_timelines(
    records: Iterable[SnapshotRecord],
    poll_period: timedelta,
    gap_tolerance: timedelta | None = None,
    jitter_radius_m: float = DEFAULT_JITTER_RADIUS_M,
) -> dict[str, VehicleTimeline]:
    """Merge per-vehicle observations into parked presence intervals.

    Consecutive observations of a vehicle merge into one interval while the
    inter-observation gap stays within ``gap_tolerance`` (default three poll
    periods, tolerating two missed polls) and the position stays within
    ``jitter_radius_m`` of the interval's first observation. A larger gap or
    a real position change closes the interval.

    Records must be chronological per vehicle (any interleaving across
    vehicles is fine); the stream is consumed once, so generators work.
    """
    poll_s = poll_period.total_seconds()
    if poll_s <= 0:
        raise ValueError("poll_period must be positive")
    gap_s = 3.0 * poll_s if gap_tolerance is None else gap_tolerance.total_seconds()
    if gap_s < poll_s:
        raise ValueError("gap_tolerance must be at least one poll period")

    # state per vehicle: [first_t, last_t, cur_start, cur_last, lat, lon,
    #                     fuel_first, fuel_last, intervals]
    state: dict[str, list] = {}
    dist = fast_distance_m

    for rec in records:
        t = rec.timestamp.timestamp()
        lat, lon = rec.position
        st = state.get(rec.vehicle_id)
        if st is None:
            state[rec.vehicle_id] = [t, t, t, t, lat, lon, rec.fuel_level, rec.fuel_level, []]
            continue
        if t < st[3]:
            raise ValueError(f"records for vehicle {rec.vehicle_id!r} are out of order")
        same_spot = (lat == st[4] and lon == st[5]) or dist(st[4], st[5], lat, lon) <= jitter_radius_m
        if t - st[3] <= gap_s and same_spot:
            st[3] = t
            if rec.fuel_level is not None:
                st[7] = rec.fuel_level
        else:
            st[8].append((st[2], st[3], st[4], st[5], st[6], st[7]))
            st[2], st[3] = t, t
            st[4], st[5] = lat, lon
            st[6] = st[7] = rec.fuel_level
        st[1] = t

    out: dict[str, VehicleTimeline] = {}
    for vid, st in state.items():
        st[8].append((st[2], st[3], st[4], st[5], st[6], st[7]))
        intervals = tuple(
            PresenceInterval(
                start=_from_epoch(s),
                end=_from_epoch(e),
                position=GeoPoint(la, lo),
                fuel_start=fs,
                fuel_end=fe,
            )
            for s, e, la, lo, fs, fe in st[8]
        )
        out[vid] = VehicleTimeline(
            vehicle_id=vid,
            intervals=intervals,
            first_seen=_from_epoch(st[0]),
            last_seen=_from_epoch(st[1]),
        )
    return out


def _from_epoch(t: float) -> datetime:
    return datetime.fromtimestamp(t, tz=timezone.utc)


# ---------------------------------------------------------------------------
# Timeline store: JSONL handoff between the ingest stage and everything else.
# First line is a header object; each following line is one vehicle.

STORE_SCHEMA_VERSION = 1


def write_timeline_store(timelines: dict[str, VehicleTimeline], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps({"schema_version": STORE_SCHEMA_VERSION, "kind": "timelines"}) + "\n")
        for vid in sorted(timelines):
            tl = timelines[vid]
            obj = {
                "vid": vid,
                "window": [tl.first_seen.timestamp(), tl.last_seen.timestamp()],
                "intervals": [
                    [
                        iv.start.timestamp(),
                        iv.end.timestamp(),
                        iv.position.lat,
                        iv.position.lon,
                        iv.fuel_start,
                        iv.fuel_end,
                    ]
                    for iv in tl.intervals
                ],
            }
            fh.write(json.dumps(obj, sort_keys=True, separators=(",", ":")) + "\n")


def read_timeline_store(path: str | Path) -> dict[str, VehicleTimeline]:
    timelines: dict[str, VehicleTimeline] = {}
    with open(path, encoding="utf-8") as fh:
        header = json.loads(next(fh))
        if header.get("kind") != "timelines":
            raise ValueError(f"{path} is not a timeline store")
        for line in fh:
            obj = json.loads(line)
            intervals = tuple(
                PresenceInterval(
                    start=_from_epoch(s),
                    end=_from_epoch(e),
                    position=GeoPoint(la, lo),
                    fuel_start=fs,
                    fuel_end=fe,
                )
                for s, e, la, lo, fs, fe in obj["intervals"]
            )
            timelines[obj["vid"]] = VehicleTimeline(
                vehicle_id=obj["vid"],
                intervals=intervals,
                first_seen=_from_epoch(obj["window"][0]),
                last_seen=_from_epoch(obj["window"][1]),
            )
    return timelines


def iter_positions(timelines: Iterable[VehicleTimeline]) -> Iterator[GeoPoint]:
    """All parked positions, in deterministic per-vehicle interval order."""
    for tl in timelines:
        for iv in tl.intervals:
            yield iv.position
