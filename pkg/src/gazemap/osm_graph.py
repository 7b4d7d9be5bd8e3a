"""Drivable street network extracted from OpenStreetMap XML.

Ways are split at junctions (nodes shared by two or more drivable ways, or
way endpoints), so graph nodes are intersections and dead ends while the
intermediate OSM nodes survive only as edge geometry.
"""

from __future__ import annotations

import io
import json
import logging
import math
import os
import xml.parsers.expat
from collections import defaultdict
from dataclasses import dataclass, field
from functools import cached_property
from typing import NamedTuple

import numpy as np
from scipy.spatial import cKDTree

from .geo import BBox, GeoPoint, LocalProjection, haversine_m

log = logging.getLogger(__name__)

DRIVABLE_HIGHWAYS = frozenset({
    "motorway", "trunk", "primary", "secondary", "tertiary", "unclassified",
    "residential", "service", "living_street", "motorway_link", "trunk_link",
    "primary_link", "secondary_link", "tertiary_link",
})

ONEWAY_FORWARD = frozenset({"yes", "true", "1"})
ONEWAY_REVERSE = frozenset({"-1", "reverse"})


class OSMParseError(ValueError):
    def __init__(self, msg: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {msg}" if line is not None else msg)


class EmptyGraphError(ValueError):
    pass


@dataclass(frozen=True)
class Edge:
    edge_id: str
    u: int
    v: int
    geometry: tuple[GeoPoint, ...]
    highway: str
    oneway: bool

    @property
    def way_id(self) -> int:
        return int(self.edge_id.rsplit("-", 1)[0])

    @property
    def part(self) -> int:
        return int(self.edge_id.rsplit("-", 1)[1])


class SegmentTable(NamedTuple):
    """Every straight piece of every edge, flattened for vectorized queries."""
    x0: np.ndarray
    y0: np.ndarray
    x1: np.ndarray
    y1: np.ndarray
    edge: np.ndarray      # owning edge index
    start: np.ndarray     # arc length of the segment start along its edge
    length: np.ndarray


@dataclass(frozen=True)
class StreetGraph:
    nodes: dict[int, GeoPoint]
    edges: tuple[Edge, ...]
    bbox: BBox
    dropped_ways: int = field(default=0, compare=False)

    def __post_init__(self):
        for e in self.edges:
            if e.u not in self.nodes or e.v not in self.nodes:
                raise ValueError(f"edge {e.edge_id} references a missing node")
            if len(e.geometry) < 2:
                raise ValueError(f"edge {e.edge_id} has fewer than 2 geometry points")
            if e.geometry[0] != self.nodes[e.u] or e.geometry[-1] != self.nodes[e.v]:
                raise ValueError(f"edge {e.edge_id} geometry does not meet its end nodes")
            if e.highway not in DRIVABLE_HIGHWAYS:
                raise ValueError(f"edge {e.edge_id} has non-drivable class {e.highway!r}")

    @classmethod
    def build(cls, nodes, edges, dropped_ways: int = 0, bbox: BBox | None = None) -> "StreetGraph":
        edges = tuple(edges)
        pts = list(nodes.values()) + [p for e in edges for p in e.geometry]
        if pts:
            bbox = BBox.around(pts)
        elif bbox is None:
            raise EmptyGraphError("an empty graph needs an explicit bbox")
        return cls(dict(nodes), edges, bbox, dropped_ways)

    def __len__(self):
        return len(self.edges)

    @cached_property
    def projection(self) -> LocalProjection:
        return LocalProjection(self.bbox.center)

    @cached_property
    def edge_index(self) -> dict[str, int]:
        return {e.edge_id: i for i, e in enumerate(self.edges)}

    def edge(self, edge_id: str) -> Edge:
        return self.edges[self.edge_index[edge_id]]

    @cached_property
    def edge_xy(self) -> list[np.ndarray]:
        """Planar (k, 2) vertex array of every edge."""
        out = []
        for e in self.edges:
            x, y = self.projection.forward([p.lat for p in e.geometry], [p.lon for p in e.geometry])
            out.append(np.column_stack([x, y]))
        return out

    @cached_property
    def edge_cumlen(self) -> list[np.ndarray]:
        out = []
        for xy in self.edge_xy:
            seg = np.hypot(*np.diff(xy, axis=0).T)
            out.append(np.concatenate([[0.0], np.cumsum(seg)]))
        return out

    @cached_property
    def edge_lengths(self) -> np.ndarray:
        return np.array([c[-1] for c in self.edge_cumlen])

    @cached_property
    def segments(self) -> SegmentTable:
        parts = []
        for i, (xy, cum) in enumerate(zip(self.edge_xy, self.edge_cumlen)):
            n = len(xy) - 1
            parts.append((xy[:-1], xy[1:], np.full(n, i), cum[:-1], np.diff(cum)))
        if not parts:
            z = np.zeros(0)
            return SegmentTable(z, z, z, z, z.astype(int), z, z)
        a = np.concatenate([p[0] for p in parts])
        b = np.concatenate([p[1] for p in parts])
        return SegmentTable(
            a[:, 0], a[:, 1], b[:, 0], b[:, 1],
            np.concatenate([p[2] for p in parts]),
            np.concatenate([p[3] for p in parts]),
            np.concatenate([p[4] for p in parts]),
        )

    @cached_property
    def segment_tree(self) -> tuple[cKDTree, float]:
        """KD-tree over segment midpoints plus the largest segment half-length."""
        seg = self.segments
        mid = np.column_stack([(seg.x0 + seg.x1) / 2, (seg.y0 + seg.y1) / 2])
        half = float(seg.length.max() / 2) if len(seg.length) else 0.0
        return cKDTree(mid if len(mid) else np.zeros((0, 2))), half

    def point_at(self, edge_idx: int, offset_m: float) -> tuple[float, float]:
        """Planar position ``offset_m`` along edge ``edge_idx`` (clamped)."""
        xy, cum = self.edge_xy[edge_idx], self.edge_cumlen[edge_idx]
        s = min(max(offset_m, 0.0), cum[-1])
        k = int(np.searchsorted(cum, s, side="right")) - 1
        k = min(max(k, 0), len(xy) - 2)
        seg = cum[k + 1] - cum[k]
        t = 0.0 if seg == 0 else (s - cum[k]) / seg
        p = xy[k] + t * (xy[k + 1] - xy[k])
        return float(p[0]), float(p[1])

    def direction_at(self, edge_idx: int, offset_m: float) -> tuple[float, float]:
        """Unit planar tangent of the edge (in geometry order) at ``offset_m``."""
        xy, cum = self.edge_xy[edge_idx], self.edge_cumlen[edge_idx]
        k = int(np.searchsorted(cum, offset_m, side="right")) - 1
        k = min(max(k, 0), len(xy) - 2)
        d = xy[k + 1] - xy[k]
        n = math.hypot(*d)
        return float(d[0] / n), float(d[1] / n)


class EdgeProjection(NamedTuple):
    distance_m: float
    projected: GeoPoint
    offset_along_m: float


def _closest_on_polyline(xy: np.ndarray, px: float, py: float):
    a, b = xy[:-1], xy[1:]
    d = b - a
    L2 = (d * d).sum(axis=1)
    t = np.where(L2 > 0, ((px - a[:, 0]) * d[:, 0] + (py - a[:, 1]) * d[:, 1]) / np.where(L2 > 0, L2, 1), 0.0)
    t = np.clip(t, 0.0, 1.0)
    cx = a[:, 0] + t * d[:, 0]
    cy = a[:, 1] + t * d[:, 1]
    dist2 = (cx - px) ** 2 + (cy - py) ** 2
    k = int(np.argmin(dist2))
    seglen = np.sqrt(L2)
    offset = float(seglen[:k].sum() + t[k] * seglen[k])
    return float(cx[k]), float(cy[k]), offset


def project_point_to_edge(edge: Edge, p: GeoPoint, projection: LocalProjection | None = None) -> EdgeProjection:
    """Closest point on ``edge`` to ``p`` under a local planar projection.

    Pass the owning graph's ``projection`` so offsets agree with its edge
    lengths; by default the projection is centered on the edge start.
    """
    proj = projection or LocalProjection(edge.geometry[0])
    x, y = proj.forward([q.lat for q in edge.geometry], [q.lon for q in edge.geometry])
    xy = np.column_stack([x, y])
    px, py = proj.to_xy(p)
    cx, cy, offset = _closest_on_polyline(xy, px, py)
    total = float(np.hypot(*np.diff(xy, axis=0).T).sum())
    q = proj.to_geo(cx, cy)
    return EdgeProjection(haversine_m(p, q), q, min(max(offset, 0.0), total))


# -- parsing ---------------------------------------------------------------

def _read_bytes(source) -> bytes:
    if isinstance(source, bytes):
        return source
    if isinstance(source, (str, os.PathLike)):
        with open(source, "rb") as fh:
            return fh.read()
    return source.read()


def _oneway(tags: dict) -> tuple[bool, bool]:
    """(is_oneway, geometry_must_be_reversed)."""
    v = tags.get("oneway", "").strip().lower()
    if v in ONEWAY_FORWARD:
        return True, False
    if v in ONEWAY_REVERSE:
        return True, True
    return False, False


def parse_osm(source) -> StreetGraph:
    """Parse OSM XML (bytes, path or binary file) into a drivable ``StreetGraph``."""
    data = _read_bytes(source)
    coords: dict[int, GeoPoint] = {}
    ways: list[tuple[int, list[int], dict]] = []
    current: list | None = None

    parser = xml.parsers.expat.ParserCreate()

    def fail(msg):
        raise OSMParseError(msg, parser.CurrentLineNumber)

    def start(name, attrs):
        nonlocal current
        try:
            if name == "node":
                coords[int(attrs["id"])] = GeoPoint(float(attrs["lat"]), float(attrs["lon"]))
            elif name == "way":
                current = [int(attrs["id"]), [], {}]
            elif name == "nd" and current is not None:
                current[1].append(int(attrs["ref"]))
            elif name == "tag" and current is not None:
                current[2][attrs["k"]] = attrs.get("v", "")
        except (KeyError, ValueError) as exc:
            fail(f"bad <{name}> element: {exc}")

    def end(name):
        nonlocal current
        if name == "way" and current is not None:
            ways.append(tuple(current))
            current = None

    parser.StartElementHandler = start
    parser.EndElementHandler = end
    try:
        parser.Parse(data, True)
    except xml.parsers.expat.ExpatError as exc:
        raise OSMParseError(xml.parsers.expat.ErrorString(exc.code), exc.lineno) from None

    kept: list[tuple[int, list[int], str, bool]] = []
    dropped = 0
    for way_id, refs, tags in ways:
        hw = tags.get("highway")
        if hw not in DRIVABLE_HIGHWAYS:
            continue
        if any(r not in coords for r in refs):
            dropped += 1
            continue
        clean: list[int] = []
        for r in refs:
            if clean and (r == clean[-1] or coords[r] == coords[clean[-1]]):
                continue
            clean.append(r)
        if len(clean) < 2:
            continue
        oneway, reverse = _oneway(tags)
        if reverse:
            clean.reverse()
        kept.append((way_id, clean, hw, oneway))
    if dropped:
        log.warning("dropped %d way(s) referencing undefined nodes", dropped)
    if not kept:
        raise EmptyGraphError("document contains no drivable ways")
    return _split_ways(kept, coords, dropped)


def _split_ways(kept, coords, dropped: int = 0) -> StreetGraph:
    uses: dict[int, int] = defaultdict(int)
    for _, refs, _, _ in kept:
        for r in refs:
            uses[r] += 1
    nodes: dict[int, GeoPoint] = {}
    edges: list[Edge] = []
    for way_id, refs, hw, oneway in kept:
        junction = [i for i, r in enumerate(refs) if i in (0, len(refs) - 1) or uses[r] > 1]
        for k, (i, j) in enumerate(zip(junction[:-1], junction[1:])):
            u, v = refs[i], refs[j]
            nodes[u] = coords[u]
            nodes[v] = coords[v]
            geom = tuple(coords[r] for r in refs[i:j + 1])
            edges.append(Edge(f"{way_id}-{k}", u, v, geom, hw, oneway))
    return StreetGraph.build(nodes, edges, dropped)


# -- cropping --------------------------------------------------------------

def crop_to_bbox(graph: StreetGraph, route, offset_m: float = 500.0) -> StreetGraph:
    """Keep edges with any geometry point inside the route bbox grown by ``offset_m``."""
    route = list(route)
    if not route:
        raise ValueError("route must contain at least one point")
    if not 0.0 <= offset_m <= 10_000.0:
        raise ValueError(f"offset_m={offset_m} outside [0, 10000]")
    box = BBox.around(route, offset_m).expanded()
    keep = [e for e in graph.edges if any(box.contains(p) for p in e.geometry)]
    nodes = {}
    for e in keep:
        nodes[e.u] = graph.nodes[e.u]
        nodes[e.v] = graph.nodes[e.v]
    return StreetGraph.build(nodes, keep, graph.dropped_ways, bbox=box)


# -- serialization ---------------------------------------------------------

def graph_to_dict(graph: StreetGraph) -> dict:
    b = graph.bbox
    return {
        "bbox": {"min_lat": b.min_lat, "min_lon": b.min_lon, "max_lat": b.max_lat, "max_lon": b.max_lon},
        "nodes": [{"id": k, "lat": p.lat, "lon": p.lon} for k, p in sorted(graph.nodes.items())],
        "edges": [
            {
                "id": e.edge_id, "u": e.u, "v": e.v, "highway": e.highway, "oneway": e.oneway,
                "geometry": [[p.lat, p.lon] for p in e.geometry],
            }
            for e in graph.edges
        ],
    }


def graph_from_dict(d: dict) -> StreetGraph:
    nodes = {int(n["id"]): GeoPoint(n["lat"], n["lon"]) for n in d["nodes"]}
    edges = [
        Edge(e["id"], int(e["u"]), int(e["v"]), tuple(GeoPoint(a, b) for a, b in e["geometry"]),
             e["highway"], bool(e["oneway"]))
        for e in d["edges"]
    ]
    b = d["bbox"]
    return StreetGraph(nodes, tuple(edges), BBox(b["min_lat"], b["min_lon"], b["max_lat"], b["max_lon"]))


def save_graph(graph: StreetGraph, path) -> None:
    with open(path, "w") as fh:
        json.dump(graph_to_dict(graph), fh, indent=1)
        fh.write("\n")


def load_graph(path) -> StreetGraph:
    with open(path) as fh:
        return graph_from_dict(json.load(fh))


def graph_to_osm_xml(graph: StreetGraph) -> bytes:
    """Write the graph back as OSM XML, one way per contiguous chain of edges.

    Intermediate geometry points get fresh negative node ids.  Re-parsing the
    output of a freshly parsed graph reproduces it exactly.
    """
    by_way: dict[int, list[Edge]] = defaultdict(list)
    for e in graph.edges:
        by_way[e.way_id].append(e)

    next_id = min([0, *graph.nodes]) - 1
    node_lines: dict[int, GeoPoint] = dict(graph.nodes)
    way_chunks: list[tuple[int, list[int], Edge]] = []
    fresh_way = min([0, *by_way]) - 1
    for way_id in sorted(by_way):
        parts = sorted(by_way[way_id], key=lambda e: e.part)
        chains: list[list[Edge]] = [[parts[0]]]
        for e in parts[1:]:
            prev = chains[-1][-1]
            if e.part == prev.part + 1 and e.u == prev.v:
                chains[-1].append(e)
            else:
                chains.append([e])
        for n, chain in enumerate(chains):
            refs = [chain[0].u]
            for e in chain:
                for p in e.geometry[1:-1]:
                    node_lines[next_id] = p
                    refs.append(next_id)
                    next_id -= 1
                refs.append(e.v)
            wid = way_id
            if n > 0:
                wid, fresh_way = fresh_way, fresh_way - 1
            way_chunks.append((wid, refs, chain[0]))

    buf = io.StringIO()
    buf.write('<?xml version="1.0" encoding="UTF-8"?>\n<osm version="0.6" generator="gazemap">\n')
    for nid, p in sorted(node_lines.items()):
        buf.write(f'  <node id="{nid}" lat="{p.lat!r}" lon="{p.lon!r}"/>\n')
    for wid, refs, proto in way_chunks:
        buf.write(f'  <way id="{wid}">\n')
        for r in refs:
            buf.write(f'    <nd ref="{r}"/>\n')
        buf.write(f'    <tag k="highway" v="{proto.highway}"/>\n')
        if proto.oneway:
            buf.write('    <tag k="oneway" v="yes"/>\n')
        buf.write("  </way>\n")
    buf.write("</osm>\n")
    return buf.getvalue().encode()
