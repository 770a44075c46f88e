"""Spatio-temporal grid: 500 m cells, availability series, pickup regularity.

Cells discretize the operational area on a local plane anchored at the city
centroid. A vehicle contributes to a cell's time bin when its presence
interval covers the bin midpoint and its parked position falls in the cell;
midpoint counting is deterministic and unbiased for bins much longer than
the polling period.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from datetime import date, datetime, timedelta, timezone
from typing import Iterable, Mapping, NamedTuple, Sequence

import numpy as np

from .geo import GeoPoint, local_xy_m
from .ingest import VehicleTimeline
from .trips import Trip

logger = logging.getLogger(__name__)

DEFAULT_CELL_SIDE_M = 500.0
DEFAULT_BIN_S = 600


class CellId(NamedTuple):
    ix: int
    iy: int


@dataclass(frozen=True)
class GridSpec:
    anchor: GeoPoint
    cell_side_m: float = DEFAULT_CELL_SIDE_M

    def __post_init__(self) -> None:
        if self.cell_side_m <= 0:
            raise ValueError("cell side must be positive")


@dataclass(frozen=True)
class CellSeries:
    cell_id: CellId
    counts: np.ndarray  # one integer count per bin
    bin_s: int
    start: datetime


@dataclass(frozen=True)
class RegularityStats:
    cell_id: CellId | None
    mean: float
    cv: float | None
    has_outlier: bool
    n_days: int
    active: bool


def cell_of(p: GeoPoint, spec: GridSpec) -> CellId:
    """Cell containing a point: floor division of projected meters by the side."""
    x, y = local_xy_m(p, spec.anchor)
    return CellId(math.floor(x / spec.cell_side_m), math.floor(y / spec.cell_side_m))


def _window_epochs(
    timelines: Iterable[VehicleTimeline],
    window: tuple[datetime, datetime] | None,
) -> tuple[float, float]:
    if window is not None:
        return window[0].timestamp(), window[1].timestamp()
    tls = list(timelines)
    if not tls:
        raise ValueError("no timelines")
    return (
        min(tl.first_seen for tl in tls).timestamp(),
        max(tl.last_seen for tl in tls).timestamp(),
    )


def _midpoint_bin_range(start_s: float, end_s: float, t0: float, bin_s: float, n_bins: int):
    """Bins whose midpoint falls inside [start_s, end_s], clamped to the grid window."""
    lo = math.ceil((start_s - t0) / bin_s - 0.5)
    hi = math.floor((end_s - t0) / bin_s - 0.5)
    return max(lo, 0), min(hi, n_bins - 1)


def availability_series(
    timelines: Mapping[str, VehicleTimeline] | Iterable[VehicleTimeline],
    spec: GridSpec,
    bin_s: int = DEFAULT_BIN_S,
    window: tuple[datetime, datetime] | None = None,
) -> dict[CellId, CellSeries]:
    """Per-cell vehicle counts over time. Only ever-occupied cells appear."""
    tls = list(timelines.values() if isinstance(timelines, Mapping) else timelines)
    t0, t1 = _window_epochs(tls, window)
    n_bins = int((t1 - t0) // bin_s)
    if n_bins <= 0:
        raise ValueError("window shorter than one bin")
    start_dt = datetime.fromtimestamp(t0, tz=timezone.utc)
    counts: dict[CellId, np.ndarray] = {}
    for tl in tls:
        for iv in tl.intervals:
            lo, hi = _midpoint_bin_range(
                iv.start.timestamp(), iv.end.timestamp(), t0, bin_s, n_bins
            )
            if lo > hi:
                continue
            cell = cell_of(iv.position, spec)
            arr = counts.get(cell)
            if arr is None:
                arr = counts[cell] = np.zeros(n_bins, dtype=np.int32)
            arr[lo : hi + 1] += 1
    return {
        cell: CellSeries(cell_id=cell, counts=arr, bin_s=bin_s, start=start_dt)
        for cell, arr in counts.items()
    }


def parked_per_bin(
    timelines: Mapping[str, VehicleTimeline] | Iterable[VehicleTimeline],
    bin_s: int = DEFAULT_BIN_S,
    window: tuple[datetime, datetime] | None = None,
) -> np.ndarray:
    """Total parked vehicles per bin, midpoint semantics, cells ignored."""
    tls = list(timelines.values() if isinstance(timelines, Mapping) else timelines)
    t0, t1 = _window_epochs(tls, window)
    n_bins = int((t1 - t0) // bin_s)
    if n_bins <= 0:
        raise ValueError("window shorter than one bin")
    total = np.zeros(n_bins, dtype=np.int32)
    for tl in tls:
        for iv in tl.intervals:
            lo, hi = _midpoint_bin_range(
                iv.start.timestamp(), iv.end.timestamp(), t0, bin_s, n_bins
            )
            if lo <= hi:
                total[lo : hi + 1] += 1
    return total


def empty_cell_fraction(
    series: Mapping[CellId, CellSeries],
    t: int,
    active_cells: Iterable[CellId] | None = None,
) -> float:
    """Share of active cells holding zero vehicles at bin ``t``.

    The active universe defaults to cells occupied at least once in the
    window (exactly the keys of ``series``); a full bounding-box grid would
    dilute the statistic arbitrarily.
    """
    active = list(series.keys() if active_cells is None else active_cells)
    if not active:
        raise ValueError("empty active-cell set")
    empty = sum(1 for c in active if c not in series or series[c].counts[t] == 0)
    return empty / len(active)


def available_vehicle_fraction(
    timelines: Mapping[str, VehicleTimeline],
    t: int,
    bin_s: int = DEFAULT_BIN_S,
    window: tuple[datetime, datetime] | None = None,
) -> float:
    """Share of the fleet parked (available) at bin ``t``."""
    fleet = len(timelines)
    if fleet == 0:
        raise ValueError("no timelines")
    return float(parked_per_bin(timelines, bin_s, window)[t]) / fleet


@dataclass(frozen=True)
class WorkdayCalendar:
    """Local working days: Monday to Friday minus an explicit holiday list."""

    utc_offset_h: float = 0.0
    holidays: frozenset[date] = frozenset()

    def local_date(self, dt: datetime) -> date:
        return (dt + timedelta(hours=self.utc_offset_h)).date()

    def is_working_day(self, d: date) -> bool:
        return d.weekday() < 5 and d not in self.holidays


def working_days(calendar: WorkdayCalendar, first: date, last: date) -> list[date]:
    days = []
    d = first
    while d <= last:
        if calendar.is_working_day(d):
            days.append(d)
        d += timedelta(days=1)
    return days


def pickup_counts(
    trips: Sequence[Trip],
    spec: GridSpec,
    calendar: WorkdayCalendar = WorkdayCalendar(),
    window: tuple[date, date] | None = None,
) -> tuple[dict[CellId, np.ndarray], list[date]]:
    """Working-day pickup counts per cell.

    Returns a map cell -> per-day counts aligned with the returned list of
    working days; weekend and holiday pickups are excluded entirely.
    """
    if window is not None:
        first, last = window
    elif trips:
        local_dates = [calendar.local_date(t.pickup) for t in trips]
        first, last = min(local_dates), max(local_dates)
    else:
        return {}, []
    days = working_days(calendar, first, last)
    index = {d: i for i, d in enumerate(days)}
    out: dict[CellId, np.ndarray] = {}
    for trip in trips:
        i = index.get(calendar.local_date(trip.pickup))
        if i is None:
            continue
        cell = cell_of(trip.origin, spec)
        arr = out.get(cell)
        if arr is None:
            arr = out[cell] = np.zeros(len(days), dtype=np.int64)
        arr[i] += 1
    return out, days


def regularity_stats(counts: Sequence[int], cell_id: CellId | None = None) -> RegularityStats:
    """Mean, coefficient of variation, and IQR-outlier flag of daily pickups.

    Cells that never see a pickup are inactive: their variability is
    undefined and they should be ignored when ranking predictability.
    """
    arr = np.asarray(counts, dtype=float)
    if arr.size < 5:
        raise ValueError("need at least 5 working days of counts")
    mean = float(arr.mean())
    if mean == 0.0:
        return RegularityStats(cell_id, 0.0, None, False, arr.size, active=False)
    cv = float(arr.std(ddof=1) / mean)
    q1, q3 = np.percentile(arr, [25, 75])
    iqr = q3 - q1
    lo, hi = q1 - 1.5 * iqr, q3 + 1.5 * iqr
    has_outlier = bool(np.any((arr < lo) | (arr > hi)))
    return RegularityStats(cell_id, mean, cv, has_outlier, arr.size, active=True)
