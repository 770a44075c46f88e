"""Fleet-level KPIs: utilization, idle time, operational area, durations, correlations."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .geo import GeoPoint, local_xy_m
from .ingest import SnapshotRecord, VehicleTimeline, iter_positions
from .trips import Trip

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class DurationStats:
    q05: float
    q25: float
    q50: float
    q75: float
    q95: float
    mean: float
    share_under_1h: float


@dataclass(frozen=True)
class FleetKpis:
    city_id: str
    fleet_size: int
    trips: int
    observation_days: float
    utilization_rate: float
    mean_idle_fraction: float
    operational_area_km2: float
    fleet_density: float


def utilization_rate(trips: int, fleet_size: int, days: float) -> float:
    """Daily trips per vehicle, the headline fleet KPI."""
    if fleet_size <= 0 or days <= 0:
        raise ValueError("fleet size and observation days must be positive")
    return trips / (fleet_size * days)


def idle_fraction(timeline: VehicleTimeline) -> float:
    """Fraction of a vehicle's observation window spent parked."""
    window_s = (timeline.last_seen - timeline.first_seen).total_seconds()
    if window_s <= 0:
        raise ValueError("timeline must span a positive window")
    parked_s = sum(iv.duration_s() for iv in timeline.intervals)
    return parked_s / window_s


def _hull(points: list[tuple[float, float]]) -> list[tuple[float, float]]:
    """Convex hull by monotone chain, counter-clockwise, no duplicate endpoint."""
    pts = sorted(set(points))
    if len(pts) <= 2:
        return pts

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    lower: list[tuple[float, float]] = []
    for p in pts:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    upper: list[tuple[float, float]] = []
    for p in reversed(pts):
        while len(upper) >= 2 and cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    return lower[:-1] + upper[:-1]


def _shoelace(hull: Sequence[tuple[float, float]]) -> float:
    area = 0.0
    n = len(hull)
    for i in range(n):
        x1, y1 = hull[i]
        x2, y2 = hull[(i + 1) % n]
        area += x1 * y2 - x2 * y1
    return abs(area) / 2.0


def operational_area_km2(records: Iterable[SnapshotRecord | GeoPoint]) -> float:
    """Convex-hull area of all parked positions, km^2.

    Positions are projected onto a local plane anchored at their centroid;
    at city scale the projection error is negligible. Degenerate point sets
    (fewer than three distinct non-collinear positions) yield 0.
    """
    positions = [r.position if isinstance(r, SnapshotRecord) else GeoPoint(*r) for r in records]
    if not positions:
        logger.warning("no positions, operational area undefined, returning 0")
        return 0.0
    anchor = GeoPoint(
        sum(p.lat for p in positions) / len(positions),
        sum(p.lon for p in positions) / len(positions),
    )
    xy = [local_xy_m(p, anchor) for p in positions]
    hull = _hull(xy)
    if len(hull) < 3:
        logger.warning("degenerate position set, operational area 0")
        return 0.0
    return _shoelace(hull) / 1e6


def fleet_density(fleet_size: int, area_km2: float) -> float:
    """Vehicles per square kilometre of operational area."""
    if area_km2 <= 0:
        raise ValueError("operational area must be positive")
    return fleet_size / area_km2


def rental_duration_stats(trips: Sequence[Trip]) -> DurationStats:
    if not trips:
        raise ValueError("no trips")
    durations = np.asarray([t.rental_duration_s for t in trips], dtype=float)
    q05, q25, q50, q75, q95 = np.percentile(durations, [5, 25, 50, 75, 95])
    return DurationStats(
        q05=float(q05),
        q25=float(q25),
        q50=float(q50),
        q75=float(q75),
        q95=float(q95),
        mean=float(durations.mean()),
        share_under_1h=float(np.mean(durations < 3600.0)),
    )


def pearson_correlation(x: Sequence[float], y: Sequence[float]) -> float:
    xa = np.asarray(x, dtype=float)
    ya = np.asarray(y, dtype=float)
    if xa.shape != ya.shape or xa.ndim != 1 or len(xa) < 3:
        raise ValueError("need two equal-length vectors of at least 3 values")
    xc = xa - xa.mean()
    yc = ya - ya.mean()
    denom = np.sqrt((xc @ xc) * (yc @ yc))
    if denom == 0.0:
        raise ValueError("zero variance")
    return float(np.clip((xc @ yc) / denom, -1.0, 1.0))


def compute_fleet_kpis(
    city_id: str,
    trips: Sequence[Trip],
    timelines: dict[str, VehicleTimeline],
) -> FleetKpis:
    """Assemble the per-city KPI record from inferred trips and timelines."""
    if not timelines:
        raise ValueError("no timelines")
    first = min(tl.first_seen for tl in timelines.values())
    last = max(tl.last_seen for tl in timelines.values())
    days = (last - first).total_seconds() / 86400.0
    area = operational_area_km2(iter_positions(timelines.values()))
    fleet = len(timelines)
    return FleetKpis(
        city_id=city_id,
        fleet_size=fleet,
        trips=len(trips),
        observation_days=days,
        utilization_rate=utilization_rate(len(trips), fleet, days) if days > 0 else 0.0,
        mean_idle_fraction=float(np.mean([idle_fraction(tl) for tl in timelines.values()])),
        operational_area_km2=area,
        fleet_density=fleet_density(fleet, area) if area > 0 else 0.0,
    )
