"""Trip inference from timeline gaps, enrichment, and trip-kind classification.

A rental is observable only as a hole in a vehicle's presence record: the car
disappears from spot A and reappears at spot B. Everything here works off
that signal.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from enum import Enum
from pathlib import Path
from typing import Iterable, Protocol

from .geo import GeoPoint, haversine_km
from .ingest import VehicleTimeline

logger = logging.getLogger(__name__)


class TripKind(Enum):
    ONE_WAY = "one_way"
    ONE_WAY_WITH_STOPS = "one_way_with_stops"
    ROUND_TRIP = "round_trip"


@dataclass(frozen=True, slots=True)
class RouteEstimate:
    """A routing provider's answer for one origin/destination pair."""

    travel_time_s: float
    distance_km: float
    provider: str

    def __post_init__(self) -> None:
        if self.travel_time_s <= 0 or self.distance_km <= 0:
            raise ValueError("route estimate must be positive for distinct endpoints")


@dataclass(slots=True)
class Trip:
    vehicle_id: str
    origin: GeoPoint
    destination: GeoPoint
    pickup: datetime
    dropoff: datetime
    geodesic_km: float
    fuel_delta: float | None = None
    route_estimate: RouteEstimate | None = None
    kind: TripKind | None = None
    maintenance_flag: bool = False

    def __post_init__(self) -> None:
        if self.dropoff <= self.pickup:
            raise ValueError("dropoff must be after pickup")

    @property
    def rental_duration_s(self) -> float:
        return (self.dropoff - self.pickup).total_seconds()


@dataclass(frozen=True)
class ClassifierParams:
    """Tunables for the three-way trip classifier.

    ``low_tolerance``/``high_tolerance`` widen the accepted match between the
    rental duration and the expected direct travel time; a rental counts as a
    plain one-way trip while duration stays within
    [expected * (1 - low), expected * (1 + high)].
    """

    low_tolerance: float = 0.1
    high_tolerance: float = 0.2
    proximity_radius_m: float = 500.0
    reference_speed_kmh: float = 50.0
    dwell_factor: float = 2.0
    min_dwell_s: float = 300.0

    def __post_init__(self) -> None:
        if not (0.0 <= self.low_tolerance < 1.0):
            raise ValueError("low_tolerance must be in [0, 1)")
        if self.high_tolerance < 0:
            raise ValueError("high_tolerance must be non-negative")
        if self.proximity_radius_m <= 0 or self.reference_speed_kmh <= 0:
            raise ValueError("radius and reference speed must be positive")
        if self.dwell_factor <= 0:
            raise ValueError("dwell_factor must be positive")


@dataclass(frozen=True)
class ConsumptionTable:
    """Fuel-percent consumed per km, by vehicle model."""

    rates: dict[str, float]

    def __post_init__(self) -> None:
        for model, rate in self.rates.items():
            if rate <= 0:
                raise ValueError(f"consumption rate for {model!r} must be positive")


class RoutingProvider(Protocol):
    name: str

    def route(self, origin: GeoPoint, destination: GeoPoint, departure: datetime) -> RouteEstimate:
        ...


@dataclass(frozen=True)
class OfflineProvider:
    """Deterministic offline routing: detour-scaled geodesic at urban speed."""

    detour_factor: float = 1.3
    urban_speed_kmh: float = 30.0
    name: str = "offline"

    def route(self, origin: GeoPoint, destination: GeoPoint, departure: datetime) -> RouteEstimate:
        geodesic = haversine_km(origin, destination)
        if geodesic == 0.0:
            raise ValueError("identical endpoints cannot be routed")
        distance = self.detour_factor * geodesic
        return RouteEstimate(
            travel_time_s=distance / self.urban_speed_kmh * 3600.0,
            distance_km=distance,
            provider=self.name,
        )


class FixtureProvider:
    """Replays canned route responses from a JSON fixture.

    Fixture format: ``{"routes": [{"from": [lat, lon], "to": [lat, lon],
    "time_s": ..., "distance_km": ...}, ...]}``. Endpoints are matched after
    rounding to 5 decimal places (about one metre).
    """

    name = "fixture"

    def __init__(self, path: str | Path):
        with open(path, encoding="utf-8") as fh:
            table = json.load(fh)
        self._routes: dict[tuple, tuple[float, float]] = {}
        for row in table["routes"]:
            key = self._key(GeoPoint(*row["from"]), GeoPoint(*row["to"]))
            self._routes[key] = (float(row["time_s"]), float(row["distance_km"]))

    @staticmethod
    def _key(a: GeoPoint, b: GeoPoint) -> tuple:
        return (round(a.lat, 5), round(a.lon, 5), round(b.lat, 5), round(b.lon, 5))

    def route(self, origin: GeoPoint, destination: GeoPoint, departure: datetime) -> RouteEstimate:
        try:
            time_s, distance_km = self._routes[self._key(origin, destination)]
        except KeyError:
            raise LookupError(f"no fixture route for {origin} -> {destination}") from None
        return RouteEstimate(travel_time_s=time_s, distance_km=distance_km, provider=self.name)


def infer_trips(
    timeline: VehicleTimeline,
    min_trip_duration: timedelta = timedelta(minutes=5),
    min_displacement_m: float = 50.0,
) -> list[Trip]:
    """Turn gaps between presence intervals into trips.

    A gap becomes a trip when it lasts at least ``min_trip_duration`` or the
    vehicle reappears at least ``min_displacement_m`` away. Short same-spot
    gaps are polling glitches: the flanking intervals are merged and no trip
    is emitted.
    """
    intervals = timeline.intervals
    if len(intervals) < 2:
        return []
    min_dur = min_trip_duration.total_seconds()
    trips: list[Trip] = []
    cur = intervals[0]
    for nxt in intervals[1:]:
        gap_s = (nxt.start - cur.end).total_seconds()
        displacement_m = haversine_km(cur.position, nxt.position) * 1000.0
        if gap_s >= min_dur or displacement_m >= min_displacement_m:
            fuel_delta = None
            if cur.fuel_end is not None and nxt.fuel_start is not None:
                fuel_delta = cur.fuel_end - nxt.fuel_start
            trips.append(
                Trip(
                    vehicle_id=timeline.vehicle_id,
                    origin=cur.position,
                    destination=nxt.position,
                    pickup=cur.end,
                    dropoff=nxt.start,
                    geodesic_km=displacement_m / 1000.0,
                    fuel_delta=fuel_delta,
                )
            )
            cur = nxt
        else:
            # Glitch: extend the current interval over the hole.
            cur = type(cur)(
                start=cur.start,
                end=nxt.end,
                position=cur.position,
                fuel_start=cur.fuel_start,
                fuel_end=nxt.fuel_end if nxt.fuel_end is not None else cur.fuel_end,
            )
    return trips


def estimate_route(trip: Trip, provider: RoutingProvider) -> RouteEstimate | None:
    """Ask the provider for an estimate; on any provider failure the trip simply
    stays unenriched and the pipeline continues."""
    try:
        estimate = provider.route(trip.origin, trip.destination, trip.pickup)
    except Exception as exc:
        logger.debug("routing failed for %s: %s", trip.vehicle_id, exc)
        return None
    trip.route_estimate = estimate
    return estimate


def fuel_distance_km(trip: Trip, table: ConsumptionTable, model: str) -> float | None:
    """Distance implied by fuel burn, or None when it cannot be computed.

    A negative fuel delta means the car came back with more fuel than it
    left with (refuelled mid-trip); the trip is flagged as a possible
    maintenance trip and no distance is derived.
    """
    if trip.fuel_delta is None:
        return None
    rate = table.rates.get(model)
    if rate is None:
        logger.warning("unknown vehicle model %r, cannot derive fuel distance", model)
        return None
    if trip.fuel_delta < 0:
        trip.maintenance_flag = True
        return None
    return trip.fuel_delta / rate


def _band_branch(duration_s: float, expected_s: float, params: ClassifierParams) -> int:
    """Which side of the tolerance band the rental duration falls on.

    1 = inside the band, 2 = above it, 3 = below it. The test is ratio-based,
    so scaling duration and expectation together never changes the branch.
    """
    lo = expected_s * (1.0 - params.low_tolerance)
    hi = expected_s * (1.0 + params.high_tolerance)
    if lo <= duration_s <= hi:
        return 1
    return 2 if duration_s > hi else 3


def _dwell_threshold_s(distance_km: float, params: ClassifierParams) -> float:
    direct_s = distance_km / params.reference_speed_kmh * 3600.0
    return max(params.dwell_factor * direct_s, params.min_dwell_s)


def classify_trip(trip: Trip, params: ClassifierParams = ClassifierParams()) -> TripKind | None:
    """Classify a trip as one-way, one-way with stops, or round trip.

    Rules, given the rental duration and the expected direct travel time:

    * duration inside the tolerance band: plain one-way;
    * duration above the band: round trip when the endpoints sit within the
      proximity radius and the rental lasted far longer than driving the
      separation would take, otherwise one-way with intermediate stops;
    * duration below the band: still one-way (a fast driver).

    Without a route estimate the band cannot be evaluated: near endpoints are
    resolved by the dwell test alone, far endpoints are unclassifiable and
    None is returned (excluded from kind histograms).
    """
    duration_s = trip.rental_duration_s
    distance_m = trip.geodesic_km * 1000.0
    if trip.route_estimate is None:
        if distance_m < params.proximity_radius_m:
            near_kind = (
                TripKind.ROUND_TRIP
                if duration_s > _dwell_threshold_s(trip.geodesic_km, params)
                else TripKind.ONE_WAY
            )
            trip.kind = near_kind
            return near_kind
        return None

    branch = _band_branch(duration_s, trip.route_estimate.travel_time_s, params)
    if branch == 2:
        if distance_m < params.proximity_radius_m and duration_s > _dwell_threshold_s(
            trip.geodesic_km, params
        ):
            kind = TripKind.ROUND_TRIP
        else:
            kind = TripKind.ONE_WAY_WITH_STOPS
    else:
        kind = TripKind.ONE_WAY
    trip.kind = kind
    return kind


def trip_kind_shares(trips: Iterable[Trip]) -> dict[TripKind, float]:
    """Fraction of classified trips per kind; fractions sum to 1."""
    counts = {kind: 0 for kind in TripKind}
    total = 0
    for trip in trips:
        if trip.kind is not None:
            counts[trip.kind] += 1
            total += 1
    if total == 0:
        raise ValueError("no classified trips")
    return {kind: n / total for kind, n in counts.items()}


# ---------------------------------------------------------------------------
# JSONL handoff for the trips stage.

TRIPS_SCHEMA_VERSION = 1


def trip_to_obj(trip: Trip) -> dict:
    obj = {
        "vid": trip.vehicle_id,
        "from": [trip.origin.lat, trip.origin.lon],
        "to": [trip.destination.lat, trip.destination.lon],
        "pickup": trip.pickup.timestamp(),
        "dropoff": trip.dropoff.timestamp(),
        "geodesic_km": trip.geodesic_km,
        "fuel_delta": trip.fuel_delta,
        "kind": trip.kind.value if trip.kind else None,
        "maintenance": trip.maintenance_flag,
    }
    if trip.route_estimate is not None:
        obj["route"] = {
            "time_s": trip.route_estimate.travel_time_s,
            "distance_km": trip.route_estimate.distance_km,
            "provider": trip.route_estimate.provider,
        }
    return obj


def trip_from_obj(obj: dict) -> Trip:
    trip = Trip(
        vehicle_id=obj["vid"],
        origin=GeoPoint(*obj["from"]),
        destination=GeoPoint(*obj["to"]),
        pickup=datetime.fromtimestamp(obj["pickup"], tz=timezone.utc),
        dropoff=datetime.fromtimestamp(obj["dropoff"], tz=timezone.utc),
        geodesic_km=obj["geodesic_km"],
        fuel_delta=obj.get("fuel_delta"),
        maintenance_flag=obj.get("maintenance", False),
    )
    if obj.get("route"):
        route = obj["route"]
        trip.route_estimate = RouteEstimate(
            travel_time_s=route["time_s"],
            distance_km=route["distance_km"],
            provider=route["provider"],
        )
    if obj.get("kind"):
        trip.kind = TripKind(obj["kind"])
    return trip


def write_trips_jsonl(trips: Iterable[Trip], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps({"schema_version": TRIPS_SCHEMA_VERSION, "kind": "trips"}) + "\n")
        for trip in trips:
            fh.write(json.dumps(trip_to_obj(trip), sort_keys=True, separators=(",", ":")) + "\n")


def read_trips_jsonl(path: str | Path) -> list[Trip]:
    trips: list[Trip] = []
    with open(path, encoding="utf-8") as fh:
        header = json.loads(next(fh))
        if header.get("kind") != "trips":
            raise ValueError(f"{path} is not a trips file")
        for line in fh:
            trips.append(trip_from_obj(json.loads(line)))
    return trips
