"""Metric-scaled rasterization of the street graph and of route polylines.

Pixel ``(col, row)`` covers ``[col, col+1) x [row, row+1)``; the transform
origin is the north-west corner of pixel (0, 0).  Lines are drawn with a
coverage approximation from the distance of each pixel center to the line:
round joins everywhere, round caps at junctions and flat (butt) caps at the
free ends of a polyline.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .formats import read_json, read_pgm, sidecar, write_json, write_pgm
from .geo import M_PER_DEG, BBox, GeoPoint
from .osm_graph import StreetGraph

MAX_RASTER_PX = 50_000
DEFAULT_LINE_WIDTH_PX = 2.0


class RasterSizeError(ValueError):
    pass


@dataclass(frozen=True)
class GeoTransform:
    origin: GeoPoint
    m_per_px: float
    width_px: int
    height_px: int
    lat_ref: float

    def __post_init__(self):
        if self.m_per_px <= 0:
            raise ValueError("m_per_px must be positive")
        if self.width_px < 1 or self.height_px < 1:
            raise ValueError("raster dimensions must be >= 1")

    @property
    def _kx(self) -> float:
        return M_PER_DEG * math.cos(math.radians(self.lat_ref)) / self.m_per_px

    @property
    def _ky(self) -> float:
        return M_PER_DEG / self.m_per_px

    def to_pixels(self, lat, lon):
        """Vectorized geo -> (x, y) pixel coordinates."""
        x = (np.asarray(lon, dtype=float) - self.origin.lon) * self._kx
        y = (self.origin.lat - np.asarray(lat, dtype=float)) * self._ky
        return x, y

    def to_geo(self, x, y):
        lon = self.origin.lon + np.asarray(x, dtype=float) / self._kx
        lat = self.origin.lat - np.asarray(y, dtype=float) / self._ky
        return lat, lon

    def to_dict(self) -> dict:
        return {
            "origin_lat": self.origin.lat, "origin_lon": self.origin.lon, "m_per_px": self.m_per_px,
            "width_px": self.width_px, "height_px": self.height_px, "lat_ref": self.lat_ref,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GeoTransform":
        return cls(GeoPoint(d["origin_lat"], d["origin_lon"]), float(d["m_per_px"]),
                   int(d["width_px"]), int(d["height_px"]), float(d["lat_ref"]))


class PixelCoord(NamedTuple):
    x: float
    y: float
    inside: bool


@dataclass(frozen=True)
class RasterMap:
    grid: np.ndarray
    transform: GeoTransform

    def __post_init__(self):
        if self.grid.shape != (self.transform.height_px, self.transform.width_px):
            raise ValueError(f"grid shape {self.grid.shape} disagrees with transform")


def build_geo_transform(bbox: BBox, m_per_px: float = 1.0) -> GeoTransform:
    if m_per_px <= 0:
        raise ValueError("m_per_px must be positive")
    b = bbox.expanded()
    lat_ref = 0.5 * (b.min_lat + b.max_lat)
    width_m = (b.max_lon - b.min_lon) * M_PER_DEG * math.cos(math.radians(lat_ref))
    height_m = (b.max_lat - b.min_lat) * M_PER_DEG
    # the epsilon keeps an exact 1000 m box at 1000 px despite float noise
    w = max(1, math.ceil(width_m / m_per_px - 1e-6))
    h = max(1, math.ceil(height_m / m_per_px - 1e-6))
    if w > MAX_RASTER_PX or h > MAX_RASTER_PX:
        raise RasterSizeError(f"raster would be {w} x {h} px (limit {MAX_RASTER_PX})")
    return GeoTransform(GeoPoint(b.max_lat, b.min_lon), m_per_px, w, h, lat_ref)


def geo_to_pixel(transform: GeoTransform, p: GeoPoint) -> PixelCoord:
    x, y = transform.to_pixels(p.lat, p.lon)
    x, y = float(x), float(y)
    inside = 0.0 <= x <= transform.width_px and 0.0 <= y <= transform.height_px
    return PixelCoord(x, y, inside)


def pixel_to_geo(transform: GeoTransform, x: float, y: float) -> GeoPoint:
    lat, lon = transform.to_geo(x, y)
    return GeoPoint(float(lat), float(lon))


# -- drawing ---------------------------------------------------------------

def _dedupe(xy: np.ndarray) -> np.ndarray:
    keep = np.ones(len(xy), dtype=bool)
    keep[1:] = np.any(np.diff(xy, axis=0) != 0, axis=1)
    return xy[keep]


def _stroke(grid: np.ndarray, xy, width: float, butt_start: bool = True, butt_end: bool = True) -> None:
    """Max-composite an anti-aliased polyline into ``grid`` in place."""
    xy = _dedupe(np.asarray(xy, dtype=float).reshape(-1, 2))
    h, w = grid.shape
    half = width / 2.0
    reach = half + 1.0
    if len(xy) == 1:
        segs = [(xy[0], xy[0], False, False)]
    else:
        n = len(xy) - 1
        segs = [(xy[k], xy[k + 1], butt_start and k == 0, butt_end and k == n - 1) for k in range(n)]
    for a, b, cut_a, cut_b in segs:
        c0 = max(0, int(math.floor(min(a[0], b[0]) - reach)))
        c1 = min(w, int(math.ceil(max(a[0], b[0]) + reach)) + 1)
        r0 = max(0, int(math.floor(min(a[1], b[1]) - reach)))
        r1 = min(h, int(math.ceil(max(a[1], b[1]) + reach)) + 1)
        if c0 >= c1 or r0 >= r1:
            continue
        px = np.arange(c0, c1) + 0.5
        py = (np.arange(r0, r1) + 0.5)[:, None]
        d = b - a
        L = math.hypot(d[0], d[1])
        if L == 0:
            dist = np.hypot(px - a[0], py - a[1])
            cov = np.clip(half + 0.5 - dist, 0.0, 1.0)
        else:
            ux, uy = d / L
            t = (px - a[0]) * ux + (py - a[1]) * uy
            perp = np.abs((px - a[0]) * uy - (py - a[1]) * ux)
            da = np.hypot(px - a[0], py - a[1])
            db = np.hypot(px - b[0], py - b[1])
            dist = np.where(t < 0, perp if cut_a else da, np.where(t > L, perp if cut_b else db, perp))
            cov = np.clip(half + 0.5 - dist, 0.0, 1.0)
            if cut_a:
                cov = cov * np.clip(t + 0.5, 0.0, 1.0)
            if cut_b:
                cov = cov * np.clip(L - t + 0.5, 0.0, 1.0)
        win = grid[r0:r1, c0:c1]
        np.maximum(win, cov, out=win)


def draw_polyline(raster: RasterMap, points, line_width_px: float = DEFAULT_LINE_WIDTH_PX) -> RasterMap:
    """Return a copy of ``raster`` with the pixel-space polyline drawn in."""
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    if len(pts) == 0:
        raise ValueError("need at least one point")
    grid = raster.grid.copy()
    _stroke(grid, pts, line_width_px)
    return RasterMap(grid, raster.transform)


def empty_raster(transform: GeoTransform) -> RasterMap:
    return RasterMap(np.zeros((transform.height_px, transform.width_px)), transform)


def rasterize_graph(graph: StreetGraph, transform: GeoTransform,
                    line_width_px: float = DEFAULT_LINE_WIDTH_PX) -> RasterMap:
    """White streets on black; dead ends get flat caps, junctions round ones."""
    grid = np.zeros((transform.height_px, transform.width_px))
    degree = Counter()
    for e in graph.edges:
        degree[e.u] += 1
        degree[e.v] += 1
    for e in graph.edges:
        x, y = transform.to_pixels([p.lat for p in e.geometry], [p.lon for p in e.geometry])
        _stroke(grid, np.column_stack([x, y]), line_width_px,
                butt_start=degree[e.u] == 1, butt_end=degree[e.v] == 1)
    return RasterMap(grid, transform)


def save_raster(raster: RasterMap, path) -> None:
    write_pgm(path, raster.grid)
    write_json(sidecar(path), raster.transform.to_dict())


def load_raster(path) -> RasterMap:
    return RasterMap(read_pgm(path), GeoTransform.from_dict(read_json(sidecar(path))))
