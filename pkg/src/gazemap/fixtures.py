"""Synthetic worlds: grid towns, simulated drives and the bundled toy dataset.

Everything is seeded and written with fixed float formatting so two calls
with the same arguments produce byte-identical files.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .formats import write_pgm
from .geo import GeoPoint, LocalProjection
from .harness import FrameLabel, generate_segments, synthetic_gaze_map, write_labels_csv
from .map_match import GpsSample, GpsTrace, write_trace_csv

TOWN_ORIGIN = GeoPoint(44.6500, 10.9200)


def grid_node_id(i: int, j: int, n: int) -> int:
    """Node id of the intersection at row ``i`` (south to north), column ``j``."""
    return 1 + i * (n + 1) + j


def grid_town_osm(n_blocks: int = 10, block_m: float = 100.0, origin: GeoPoint = TOWN_ORIGIN,
                  with_paths: bool = True) -> bytes:
    """OSM XML for an ``n_blocks`` x ``n_blocks`` street grid.

    Each full row and column is one residential way through every
    intersection.  With ``with_paths`` a footway and a cycleway run mid-block
    so the drivable filter has something to drop.
    """
    proj = LocalProjection(origin)
    lines = ['<?xml version="1.0" encoding="UTF-8"?>', '<osm version="0.6" generator="gazemap-fixture">']
    n = n_blocks
    for i in range(n + 1):
        for j in range(n + 1):
            p = proj.to_geo(j * block_m, i * block_m)
            lines.append(f'  <node id="{grid_node_id(i, j, n)}" lat="{p.lat:.9f}" lon="{p.lon:.9f}"/>')
    way = 1000
    for i in range(n + 1):
        refs = [grid_node_id(i, j, n) for j in range(n + 1)]
        lines += _way(way, refs, {"highway": "residential", "name": f"Row {i}"})
        way += 1
    for j in range(n + 1):
        refs = [grid_node_id(i, j, n) for i in range(n + 1)]
        lines += _way(way, refs, {"highway": "residential", "name": f"Column {j}"})
        way += 1
    if with_paths:
        extra = 900_000
        for k, (hw, y) in enumerate((("footway", 0.5), ("cycleway", 1.5))):
            a = proj.to_geo(0.0, y * block_m)
            b = proj.to_geo(n * block_m, y * block_m)
            ids = [extra + 2 * k, extra + 2 * k + 1]
            lines.append(f'  <node id="{ids[0]}" lat="{a.lat:.9f}" lon="{a.lon:.9f}"/>')
            lines.append(f'  <node id="{ids[1]}" lat="{b.lat:.9f}" lon="{b.lon:.9f}"/>')
            lines += _way(way, ids, {"highway": hw})
            way += 1
    lines.append("</osm>")
    return ("\n".join(lines) + "\n").encode()


def _way(way_id, refs, tags):
    out = [f'  <way id="{way_id}">']
    out += [f'    <nd ref="{r}"/>' for r in refs]
    out += [f'    <tag k="{k}" v="{v}"/>' for k, v in tags.items()]
    out.append("  </way>")
    return out


def random_grid_route(n_blocks: int, n_legs: int, seed: int, start=(2, 2)) -> list[tuple[int, int]]:
    """Random walk over grid intersections without U-turns."""
    rng = np.random.default_rng(seed)
    path = [start]
    prev = None
    for _ in range(n_legs):
        i, j = path[-1]
        options = [(i + di, j + dj) for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1))
                   if 0 <= i + di <= n_blocks and 0 <= j + dj <= n_blocks and (i + di, j + dj) != prev]
        nxt = options[int(rng.integers(len(options)))]
        prev = path[-1]
        path.append(nxt)
    return path


@dataclass
class Drive:
    trace: GpsTrace                 # noisy 1 Hz fixes
    truth_xy: np.ndarray            # (k, 2) planar polyline of the driven path
    true_fixes: list[GeoPoint]      # noise-free position at each fix time
    projection: LocalProjection

    def distance_to_path(self, p: GeoPoint) -> float:
        x, y = self.projection.to_xy(p)
        a, b = self.truth_xy[:-1], self.truth_xy[1:]
        d = b - a
        L2 = np.maximum((d * d).sum(axis=1), 1e-12)
        t = np.clip(((x - a[:, 0]) * d[:, 0] + (y - a[:, 1]) * d[:, 1]) / L2, 0, 1)
        return float(np.min(np.hypot(a[:, 0] + t * d[:, 0] - x, a[:, 1] + t * d[:, 1] - y)))


def simulate_drive(route_nodes, block_m: float = 100.0, speed_mps: float = 10.0, duration_s: float = 60.0,
                   noise_m: float = 5.0, seed: int = 0, origin: GeoPoint = TOWN_ORIGIN,
                   stops: dict[int, float] | None = None, rate_hz: float = 1.0) -> Drive:
    """Constant-speed drive along grid intersections with Gaussian GPS noise.

    ``stops`` maps a route vertex index to a dwell time in seconds.
    """
    proj = LocalProjection(origin)
    xy = np.array([(j * block_m, i * block_m) for i, j in route_nodes], dtype=float)
    stops = stops or {}
    # piecewise schedule: (t0, t1, s0, s1) in time and arc length
    seg_len = np.hypot(*np.diff(xy, axis=0).T)
    cum = np.concatenate([[0.0], np.cumsum(seg_len)])
    knots_t, knots_s = [0.0], [0.0]
    for k in range(len(xy)):
        if k > 0:
            knots_t.append(knots_t[-1] + seg_len[k - 1] / speed_mps)
            knots_s.append(cum[k])
        if stops.get(k):
            knots_t.append(knots_t[-1] + stops[k])
            knots_s.append(cum[k])
    n = int(math.floor(duration_s * rate_hz + 1e-9))
    if knots_t[-1] < (n - 1) / rate_hz:
        raise ValueError("route too short for the requested duration")
    rng = np.random.default_rng(seed)
    samples, truth = [], []
    for k in range(n):
        t = k / rate_hz
        s = float(np.interp(t, knots_t, knots_s))
        i = min(int(np.searchsorted(cum, s, side="right")) - 1, len(seg_len) - 1)
        f = (s - cum[i]) / seg_len[i]
        x, y = xy[i] + f * (xy[i + 1] - xy[i])
        truth.append(proj.to_geo(x, y))
        nx, ny = rng.normal(0.0, noise_m, size=2)
        samples.append(GpsSample(round(t, 3), proj.to_geo(x + nx, y + ny)))
    return Drive(GpsTrace(tuple(samples), rate_hz), xy, truth, proj)


# -- bundled toy dataset ---------------------------------------------------

TOY_VIDEO = "01"
TOY_FPS = 25.0
TOY_SECONDS = 60
TOY_ROUTE = [(2, 1), (2, 2), (2, 3), (3, 3), (4, 3), (4, 4), (4, 5), (4, 6), (5, 6)]
TOY_STOP_AT = 5            # route vertex where the car waits
TOY_STOP_S = 4.0
TOY_REVERSING_FRAME = 3    # inside only the first clip
TOY_GT_SIZE = 224

TOY_CONFIG = """\
# toy pipeline over the bundled synthetic grid town
seed = 7
video_id = "{video}"
frame_rate_hz = {fps}
crop_offset_m = 500.0
m_per_px = 1.0
line_width_px = 2.0
radius_m = 100.0
enc_blocks = [3]
fuse = true

[match]
sigma_z_m = 4.07
beta_m = 20.0
candidate_radius_m = 50.0
max_candidates_per_obs = 8

[pyramid]
channels = [8, 16, 32, 64]
base_hw = 16
frames = 16

[paths]
osm = "town.osm"
trace = "trace.csv"
labels = "labels"
gt = "gt"
"""


def _toy_labels(drive: Drive, n_frames: int, block_m: float) -> dict[int, FrameLabel]:
    """Hand-written rules: near a turn -> Lat, dwell -> Stop, near an intersection -> context."""
    proj = drive.projection
    fix_xy = np.array([proj.to_xy(p) for p in drive.true_fixes])
    pts = drive.truth_xy
    turn_xy = []
    for k in range(1, len(pts) - 1):
        (ax, ay), (bx, by) = pts[k] - pts[k - 1], pts[k + 1] - pts[k]
        if ax * by - ay * bx != 0:
            turn_xy.append(pts[k])
    labels = {}
    for f in range(n_frames):
        t = f / TOY_FPS
        k = min(int(t), len(fix_xy) - 2)
        x, y = fix_xy[k] + (t - k) * (fix_xy[k + 1] - fix_xy[k])
        moving = np.hypot(*(fix_xy[k + 1] - fix_xy[k])) > 0.1
        gx, gy = round(x / block_m) * block_m, round(y / block_m) * block_m
        near = math.hypot(x - gx, y - gy) < 20.0
        if not moving:
            action = "Stop"
        elif any(math.hypot(x - tx, y - ty) < 15.0 for tx, ty in turn_xy):
            action = "Lat"
        else:
            action = "None"
        if near:
            signal = (int(gx / block_m) + int(gy / block_m)) % 2 == 0
            itype, prio = ("Signalized", "RoW") if signal else ("Unsignalized", "Yield")
        else:
            itype, prio = "none", "n/a"
        flags = {"reversing"} if f == TOY_REVERSING_FRAME else set()
        labels[f] = FrameLabel(f, action, itype, prio, frozenset(flags))
    return labels


def write_toy_fixture(directory, seed: int = 7) -> Path:
    """Write the toy dataset (OSM, trace, labels, ground truth, config.toml)."""
    d = Path(directory)
    (d / "labels").mkdir(parents=True, exist_ok=True)
    (d / "gt").mkdir(exist_ok=True)
    n = 10
    (d / "town.osm").write_bytes(grid_town_osm(n))
    drive = simulate_drive(TOY_ROUTE, duration_s=TOY_SECONDS, noise_m=5.0, seed=seed,
                           stops={TOY_STOP_AT: TOY_STOP_S})
    write_trace_csv(drive.trace, d / "trace.csv")
    n_frames = int(TOY_SECONDS * TOY_FPS)
    labels = _toy_labels(drive, n_frames, 100.0)
    write_labels_csv(labels, d / "labels" / f"{TOY_VIDEO}.csv")
    rng = np.random.default_rng(seed + 1)
    for seg in generate_segments(n_frames, video_id=TOY_VIDEO):
        r, c = rng.normal([TOY_GT_SIZE * 0.45, TOY_GT_SIZE * 0.5], [12.0, 20.0])
        gt = synthetic_gaze_map(TOY_GT_SIZE, TOY_GT_SIZE, (r, c), sigma_px=14.0)
        write_pgm(d / "gt" / f"{seg.name}.pgm", gt)
    (d / "config.toml").write_text(TOY_CONFIG.format(video=TOY_VIDEO, fps=TOY_FPS))
    return d
