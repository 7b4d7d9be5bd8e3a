"""Heading-up map + route patches around the ego vehicle."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .formats import read_tensor, write_tensor
from .geo import GeoPoint, LocalProjection, planar_bearing_deg
from .imaging import bilinear_sample, resize_bilinear
from .raster import DEFAULT_LINE_WIDTH_PX, RasterMap, _stroke

CLIP_LEN = 16
OUT_SIZE = 128
MIN_RADIUS_M, MAX_RADIUS_M = 25.0, 200.0
DEFAULT_RADIUS_M = 100.0
STOPPED_DISPLACEMENT_M = 0.5
CHANNELS = ("map", "route")


@dataclass(frozen=True)
class PatchRequest:
    center: GeoPoint
    heading_deg: float
    radius_m: float = DEFAULT_RADIUS_M
    route_points: tuple[GeoPoint, ...] = ()
    out_size_px: int = OUT_SIZE

    def __post_init__(self):
        if not MIN_RADIUS_M <= self.radius_m <= MAX_RADIUS_M:
            raise ValueError(f"radius_m={self.radius_m} outside [{MIN_RADIUS_M}, {MAX_RADIUS_M}]")
        if len(self.route_points) != CLIP_LEN:
            raise ValueError(f"route needs exactly {CLIP_LEN} points, got {len(self.route_points)}")
        if self.out_size_px < 1:
            raise ValueError("out_size_px must be >= 1")
        object.__setattr__(self, "route_points", tuple(self.route_points))


@dataclass(frozen=True)
class MapPatch:
    channels: np.ndarray          # (2, out, out): [map, route]
    meta: dict = field(default_factory=dict)

    @property
    def map(self) -> np.ndarray:
        return self.channels[0]

    @property
    def route(self) -> np.ndarray:
        return self.channels[1]


def heading_from_route(route_points, prior_heading: float | None = None) -> float:
    """Bearing of travel over the clip, clockwise from north.

    Uses the displacement from the first point to the latest point at least
    0.5 m away from it; a stopped vehicle keeps ``prior_heading`` (or 0).
    """
    pts = list(route_points)
    if len(pts) < 2:
        raise ValueError("need at least two route points")
    proj = LocalProjection(pts[0])
    for p in reversed(pts[1:]):
        dx, dy = proj.to_xy(p)
        if math.hypot(dx, dy) >= STOPPED_DISPLACEMENT_M:
            return planar_bearing_deg(dx, dy)
    return float(prior_heading) % 360.0 if prior_heading is not None else 0.0


def _window(grid: np.ndarray, x0: int, y0: int, size: int) -> np.ndarray:
    """``size`` x ``size`` crop starting at (x0, y0), zero-padded outside the grid."""
    h, w = grid.shape
    out = np.zeros((size, size))
    sx0, sy0 = max(x0, 0), max(y0, 0)
    sx1, sy1 = min(x0 + size, w), min(y0 + size, h)
    if sx0 < sx1 and sy0 < sy1:
        out[sy0 - y0:sy1 - y0, sx0 - x0:sx1 - x0] = grid[sy0:sy1, sx0:sx1]
    return out


def rotate_crop(img: np.ndarray, pivot_x: float, pivot_y: float, heading_deg: float,
                size: int, scale: float = 1.0) -> np.ndarray:
    """Square ``size`` crop about the pivot with ``heading_deg`` turned to image-up.

    ``scale`` is source pixels per output pixel.
    """
    h = math.radians(heading_deg)
    c, s = math.cos(h), math.sin(h)
    off = (np.arange(size) + 0.5 - size / 2.0) * scale
    dx = off[None, :]
    dy = off[:, None]
    src_x = pivot_x + dx * c - dy * s
    src_y = pivot_y + dx * s + dy * c
    return bilinear_sample(img, src_x, src_y)


def heading_up_crop(raster: RasterMap, request: PatchRequest,
                    line_width_px: float = DEFAULT_LINE_WIDTH_PX) -> np.ndarray:
    """The (2, 2r, 2r)-meter patch before resizing, in raster pixels.

    An oversized square (side 2 r sqrt 2) is cut around the ego position so the
    rotation never reaches past its corners; the route is drawn into an empty
    square of the same extent and goes through the identical rotation.
    """
    tf = raster.transform
    side_px = 2.0 * request.radius_m / tf.m_per_px
    crop_px = max(1, int(round(side_px)))
    big = 2 * math.ceil(crop_px * math.sqrt(2) / 2 + 2)
    cx, cy = tf.to_pixels(request.center.lat, request.center.lon)
    cx, cy = float(cx), float(cy)
    x0 = math.floor(cx) - big // 2
    y0 = math.floor(cy) - big // 2

    map_win = _window(raster.grid, x0, y0, big)
    route_win = np.zeros((big, big))
    rx, ry = tf.to_pixels([p.lat for p in request.route_points], [p.lon for p in request.route_points])
    _stroke(route_win, np.column_stack([rx - x0, ry - y0]), line_width_px)

    px, py = cx - x0, cy - y0
    scale = side_px / crop_px
    return np.stack([
        rotate_crop(map_win, px, py, request.heading_deg, crop_px, scale),
        rotate_crop(route_win, px, py, request.heading_deg, crop_px, scale),
    ])


def sample_patch(raster: RasterMap, request: PatchRequest,
                 line_width_px: float = DEFAULT_LINE_WIDTH_PX) -> MapPatch:
    """Model-ready [map, route] patch, heading-up, resized to ``out_size_px``."""
    crop = heading_up_crop(raster, request, line_width_px)
    n = request.out_size_px
    channels = np.clip(resize_bilinear(crop, n, n), 0.0, 1.0)
    meta = {
        "center": [request.center.lat, request.center.lon],
        "heading_deg": request.heading_deg,
        "radius_m": request.radius_m,
        "crop_px": crop.shape[-1],
        "m_per_px": raster.transform.m_per_px,
        "channels": list(CHANNELS),
    }
    return MapPatch(channels, meta)


def save_patch(patch: MapPatch, path) -> None:
    write_tensor(path, patch.channels, patch.meta)


def load_patch(path) -> MapPatch:
    a, meta = read_tensor(path)
    meta = {k: v for k, v in meta.items() if k not in ("shape", "dtype")}
    return MapPatch(a, meta)
