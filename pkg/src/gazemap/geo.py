"""Geographic primitives shared by every stage.

Planar work uses a local equirectangular projection about a reference point,
which is accurate to well under a meter at route scale (< 50 km).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

EARTH_RADIUS_M = 6_378_137.0
M_PER_DEG = EARTH_RADIUS_M * math.pi / 180.0


@dataclass(frozen=True, order=True)
class GeoPoint:
    lat: float
    lon: float

    def __post_init__(self):
        lat, lon = float(self.lat), float(self.lon)
        if math.isnan(lat) or math.isnan(lon):
            raise ValueError("GeoPoint coordinates must not be NaN")
        if not -90.0 <= lat <= 90.0:
            raise ValueError(f"latitude {lat} outside [-90, 90]")
        if not -180.0 <= lon <= 180.0:
            raise ValueError(f"longitude {lon} outside [-180, 180]")
        object.__setattr__(self, "lat", lat)
        object.__setattr__(self, "lon", lon)


@dataclass(frozen=True)
class BBox:
    min_lat: float
    min_lon: float
    max_lat: float
    max_lon: float
    offset_m: float = 0.0

    def __post_init__(self):
        if self.offset_m < 0:
            raise ValueError("offset_m must be >= 0")
        # zero extent is legal (a single route point); the offset widens it later
        if self.min_lat > self.max_lat or self.min_lon > self.max_lon:
            raise ValueError(f"inverted bbox {self}")

    @classmethod
    def around(cls, points, offset_m: float = 0.0) -> "BBox":
        """Bounding box of ``points`` grown by ``offset_m`` meters on every side."""
        pts = list(points)
        if not pts:
            raise ValueError("cannot build a bbox from zero points")
        lats = [p.lat for p in pts]
        lons = [p.lon for p in pts]
        return cls(min(lats), min(lons), max(lats), max(lons), offset_m)

    def expanded(self) -> "BBox":
        """Apply ``offset_m`` and return an equivalent box with offset 0."""
        if self.offset_m == 0:
            return self
        lat_ref = 0.5 * (self.min_lat + self.max_lat)
        dlat = self.offset_m / M_PER_DEG
        dlon = self.offset_m / (M_PER_DEG * math.cos(math.radians(lat_ref)))
        return BBox(
            max(-90.0, self.min_lat - dlat),
            max(-180.0, self.min_lon - dlon),
            min(90.0, self.max_lat + dlat),
            min(180.0, self.max_lon + dlon),
        )

    @property
    def center(self) -> GeoPoint:
        return GeoPoint(0.5 * (self.min_lat + self.max_lat), 0.5 * (self.min_lon + self.max_lon))

    def contains(self, p: GeoPoint) -> bool:
        return self.min_lat <= p.lat <= self.max_lat and self.min_lon <= p.lon <= self.max_lon


class LocalProjection:
    """Equirectangular projection about ``ref``: x east, y north, meters."""

    def __init__(self, ref: GeoPoint):
        self.ref = ref
        self._kx = M_PER_DEG * math.cos(math.radians(ref.lat))
        self._ky = M_PER_DEG

    def forward(self, lat, lon):
        x = (np.asarray(lon, dtype=float) - self.ref.lon) * self._kx
        y = (np.asarray(lat, dtype=float) - self.ref.lat) * self._ky
        return x, y

    def inverse(self, x, y):
        lat = self.ref.lat + np.asarray(y, dtype=float) / self._ky
        lon = self.ref.lon + np.asarray(x, dtype=float) / self._kx
        return lat, lon

    def to_xy(self, p: GeoPoint) -> tuple[float, float]:
        x, y = self.forward(p.lat, p.lon)
        return float(x), float(y)

    def to_geo(self, x: float, y: float) -> GeoPoint:
        lat, lon = self.inverse(x, y)
        return GeoPoint(float(lat), float(lon))


def wrap360(deg: float) -> float:
    d = deg % 360.0
    return 0.0 if d >= 360.0 else d


def haversine_m(a: GeoPoint, b: GeoPoint) -> float:
    """Great-circle distance in meters."""
    phi1, phi2 = math.radians(a.lat), math.radians(b.lat)
    dphi = phi2 - phi1
    dlam = math.radians(b.lon - a.lon)
    h = math.sin(dphi / 2) ** 2 + math.cos(phi1) * math.cos(phi2) * math.sin(dlam / 2) ** 2
    return 2 * EARTH_RADIUS_M * math.asin(min(1.0, math.sqrt(h)))


def haversine_many(lat1, lon1, lat2, lon2) -> np.ndarray:
    phi1, phi2 = np.radians(lat1), np.radians(lat2)
    dphi = phi2 - phi1
    dlam = np.radians(np.asarray(lon2) - np.asarray(lon1))
    h = np.sin(dphi / 2) ** 2 + np.cos(phi1) * np.cos(phi2) * np.sin(dlam / 2) ** 2
    return 2 * EARTH_RADIUS_M * np.arcsin(np.minimum(1.0, np.sqrt(h)))


def bearing_deg(a: GeoPoint, b: GeoPoint) -> float:
    """Initial bearing from ``a`` to ``b``, clockwise from north, in [0, 360)."""
    phi1, phi2 = math.radians(a.lat), math.radians(b.lat)
    dlam = math.radians(b.lon - a.lon)
    y = math.sin(dlam) * math.cos(phi2)
    x = math.cos(phi1) * math.sin(phi2) - math.sin(phi1) * math.cos(phi2) * math.cos(dlam)
    return wrap360(math.degrees(math.atan2(y, x)))


def planar_bearing_deg(dx: float, dy: float) -> float:
    """Bearing of a planar (east, north) displacement, clockwise from north."""
    return wrap360(math.degrees(math.atan2(dx, dy)))


def destination(p: GeoPoint, bearing: float, dist_m: float) -> GeoPoint:
    """Point reached travelling ``dist_m`` along a great circle from ``p``."""
    delta = dist_m / EARTH_RADIUS_M
    theta = math.radians(bearing)
    phi1, lam1 = math.radians(p.lat), math.radians(p.lon)
    phi2 = math.asin(math.sin(phi1) * math.cos(delta) + math.cos(phi1) * math.sin(delta) * math.cos(theta))
    lam2 = lam1 + math.atan2(
        math.sin(theta) * math.sin(delta) * math.cos(phi1),
        math.cos(delta) - math.sin(phi1) * math.sin(phi2),
    )
    return GeoPoint(math.degrees(phi2), (math.degrees(lam2) + 540.0) % 360.0 - 180.0)
