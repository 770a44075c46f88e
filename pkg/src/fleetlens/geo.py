"""Geographic primitives shared by every pipeline stage."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

EARTH_RADIUS_KM = 6371.0

_RAD = math.pi / 180.0


class GeoPoint(NamedTuple):
    lat: float
    lon: float


@dataclass(frozen=True)
class GeoBounds:
    """Axis-aligned latitude/longitude box used to reject implausible coordinates."""

    min_lat: float
    max_lat: float
    min_lon: float
    max_lon: float

    def __post_init__(self) -> None:
        if not (-90.0 <= self.min_lat < self.max_lat <= 90.0):
            raise ValueError(f"bad latitude bounds [{self.min_lat}, {self.max_lat}]")
        if not (-180.0 <= self.min_lon < self.max_lon <= 180.0):
            raise ValueError(f"bad longitude bounds [{self.min_lon}, {self.max_lon}]")

    def contains(self, p: GeoPoint) -> bool:
        return (
            self.min_lat <= p.lat <= self.max_lat
            and self.min_lon <= p.lon <= self.max_lon
        )


def haversine_km(a: GeoPoint, b: GeoPoint) -> float:
    """Great-circle distance in km on a sphere of radius 6371 km."""
    phi_a = a.lat * _RAD
    phi_b = b.lat * _RAD
    dphi = (b.lat - a.lat) * _RAD
    dlam = (b.lon - a.lon) * _RAD
    h = math.sin(dphi / 2.0) ** 2 + math.cos(phi_a) * math.cos(phi_b) * math.sin(dlam / 2.0) ** 2
    return 2.0 * EARTH_RADIUS_KM * math.asin(min(1.0, math.sqrt(h)))


def local_xy_m(p: GeoPoint, anchor: GeoPoint) -> tuple[float, float]:
    """Project to meters east/north of ``anchor`` (equirectangular, anchored cosine).

    Good to well under 0.1% over a city-scale extent (< 50 km); not for
    continental distances.
    """
    x = (p.lon - anchor.lon) * _RAD * math.cos(anchor.lat * _RAD) * EARTH_RADIUS_KM * 1000.0
    y = (p.lat - anchor.lat) * _RAD * EARTH_RADIUS_KM * 1000.0
    return x, y


def offset_point(anchor: GeoPoint, dx_m: float, dy_m: float) -> GeoPoint:
    """Inverse of :func:`local_xy_m`: the point ``dx_m`` east / ``dy_m`` north of anchor."""
    lat = anchor.lat + dy_m / (EARTH_RADIUS_KM * 1000.0) / _RAD
    lon = anchor.lon + dx_m / (EARTH_RADIUS_KM * 1000.0 * math.cos(anchor.lat * _RAD)) / _RAD
    return GeoPoint(lat, lon)


def fast_distance_m(lat1: float, lon1: float, lat2: float, lon2: float) -> float:
    """Equirectangular small-distance approximation, meters.

    Only valid for sub-kilometre separations (GPS-jitter checks); use
    :func:`haversine_km` otherwise.
    """
    ky = EARTH_RADIUS_KM * 1000.0 * _RAD
    kx = ky * math.cos(lat1 * _RAD)
    dx = (lon2 - lon1) * kx
    dy = (lat2 - lat1) * ky
    return math.hypot(dx, dy)
