"""Hidden-Markov map matching of 1 Hz GPS traces onto a ``StreetGraph``.

Emission: zero-mean Gaussian in the GPS-to-road distance.  Transition:
exponential in the gap between the great-circle distance of consecutive
fixes and the on-road route distance of the candidate pair.  Decoding is
Viterbi; observations without candidates split the trace into independently
matched pieces.
"""

from __future__ import annotations

import bisect
import csv
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import dijkstra

from .geo import GeoPoint, haversine_m, haversine_many, planar_bearing_deg
from .osm_graph import StreetGraph

log = logging.getLogger(__name__)

NEG_INF = -math.inf
ROUTE_CUTOFF_SLACK_M = 2000.0
HEADING_HALF_WINDOW_S = 0.5


class MatchError(RuntimeError):
    pass


@dataclass(frozen=True)
class GpsSample:
    t: float
    point: GeoPoint


@dataclass(frozen=True)
class GpsTrace:
    samples: tuple[GpsSample, ...]
    nominal_rate_hz: float = 1.0

    def __post_init__(self):
        ts = [s.t for s in self.samples]
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise ValueError("trace timestamps must be strictly increasing")
        if self.nominal_rate_hz <= 0:
            raise ValueError("nominal_rate_hz must be positive")

    def __len__(self):
        return len(self.samples)

    @property
    def times(self) -> list[float]:
        return [s.t for s in self.samples]

    @property
    def points(self) -> list[GeoPoint]:
        return [s.point for s in self.samples]


def read_trace_csv(path, nominal_rate_hz: float = 1.0) -> GpsTrace:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    samples = tuple(GpsSample(float(r["t"]), GeoPoint(float(r["lat"]), float(r["lon"]))) for r in rows)
    return GpsTrace(samples, nominal_rate_hz)


def write_trace_csv(trace: GpsTrace, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "lat", "lon"])
        for s in trace.samples:
            w.writerow([f"{s.t:.3f}", f"{s.point.lat:.9f}", f"{s.point.lon:.9f}"])


@dataclass(frozen=True)
class MatchParams:
    sigma_z_m: float = 4.07
    beta_m: float = 20.0
    candidate_radius_m: float = 50.0
    max_candidates_per_obs: int = 8

    def __post_init__(self):
        if min(self.sigma_z_m, self.beta_m, self.candidate_radius_m) <= 0:
            raise ValueError("match parameters must be strictly positive")
        if self.max_candidates_per_obs < 1:
            raise ValueError("max_candidates_per_obs must be >= 1")


@dataclass(frozen=True)
class CandidateState:
    edge_id: str
    offset_along_m: float
    projected: GeoPoint
    emission_dist_m: float
    edge_idx: int = field(default=-1, compare=False, repr=False)


# -- probabilities ---------------------------------------------------------

def emission_log_prob(dist_m: float, sigma_z_m: float) -> float:
    if sigma_z_m <= 0:
        raise ValueError("sigma_z_m must be positive")
    return -0.5 * (dist_m / sigma_z_m) ** 2 - math.log(math.sqrt(2 * math.pi) * sigma_z_m)


def transition_log_prob(gc_dist_m: float, route_dist_m: float, beta_m: float) -> float:
    """Exponential transition density; an unreachable pair (infinite route) gives -inf."""
    if beta_m <= 0:
        raise ValueError("beta_m must be positive")
    if not math.isfinite(route_dist_m):
        return NEG_INF
    return -abs(gc_dist_m - route_dist_m) / beta_m - math.log(beta_m)


# -- candidates ------------------------------------------------------------

def candidate_states(graph: StreetGraph, p: GeoPoint, params: MatchParams = MatchParams()) -> list[CandidateState]:
    """Closest point on every edge within the candidate radius, nearest first."""
    if not graph.edges:
        raise ValueError("graph has no edges")
    tree, half = graph.segment_tree
    px, py = graph.projection.to_xy(p)
    r = params.candidate_radius_m
    idx = np.asarray(tree.query_ball_point([px, py], r * 1.01 + half + 1e-6), dtype=int)
    if idx.size == 0:
        return []
    seg = graph.segments
    x0, y0, dx, dy = seg.x0[idx], seg.y0[idx], seg.x1[idx] - seg.x0[idx], seg.y1[idx] - seg.y0[idx]
    L2 = dx * dx + dy * dy
    t = np.clip(((px - x0) * dx + (py - y0) * dy) / np.where(L2 > 0, L2, 1.0), 0.0, 1.0)
    cx, cy = x0 + t * dx, y0 + t * dy
    d2 = (cx - px) ** 2 + (cy - py) ** 2
    edges = seg.edge[idx]
    order = np.lexsort((idx, d2, edges))
    first = np.ones(len(order), dtype=bool)
    first[1:] = edges[order][1:] != edges[order][:-1]
    best = order[first]
    lat, lon = graph.projection.inverse(cx[best], cy[best])
    dist = haversine_many(p.lat, p.lon, lat, lon)
    offsets = seg.start[idx][best] + t[best] * seg.length[idx][best]
    e_idx = edges[best]
    keep = dist <= r
    rank = np.lexsort((e_idx[keep], dist[keep]))[: params.max_candidates_per_obs]
    lat, lon, dist, offsets, e_idx = (a[keep][rank] for a in (lat, lon, dist, offsets, e_idx))
    lengths = graph.edge_lengths
    return [
        CandidateState(
            graph.edges[e].edge_id,
            float(min(max(o, 0.0), lengths[e])),
            GeoPoint(float(la), float(lo)),
            float(d),
            int(e),
        )
        for la, lo, d, o, e in zip(lat, lon, dist, offsets, e_idx)
    ]


# -- routing ---------------------------------------------------------------

class Router:
    """Shortest on-road distances between candidate positions."""

    def __init__(self, graph: StreetGraph):
        self.graph = graph
        self.node_ids = sorted(graph.nodes)
        self.node_pos = {n: i for i, n in enumerate(self.node_ids)}
        best: dict[tuple[int, int], tuple[float, int, bool]] = {}
        for i, e in enumerate(graph.edges):
            L = float(graph.edge_lengths[i])
            u, v = self.node_pos[e.u], self.node_pos[e.v]
            if u == v:
                continue
            arcs = [((u, v), True)] + ([] if e.oneway else [((v, u), False)])
            for key, fwd in arcs:
                if key not in best or L < best[key][0]:
                    best[key] = (L, i, fwd)
        self.arcs = best
        n = len(self.node_ids)
        if best:
            keys = list(best)
            rows = [k[0] for k in keys]
            cols = [k[1] for k in keys]
            vals = [best[k][0] for k in keys]
            self.matrix = csr_matrix((vals, (rows, cols)), shape=(n, n))
        else:
            self.matrix = csr_matrix((n, n))
        e_u = np.array([self.node_pos[e.u] for e in graph.edges], dtype=int)
        e_v = np.array([self.node_pos[e.v] for e in graph.edges], dtype=int)
        oneway = np.array([e.oneway for e in graph.edges], dtype=bool)
        self._e_u, self._e_v, self._oneway = e_u, e_v, oneway

    def _exits(self, cands):
        """(n, 2) exit node positions and costs to reach them from each candidate."""
        e = np.array([c.edge_idx for c in cands], dtype=int)
        o = np.array([c.offset_along_m for c in cands])
        L = self.graph.edge_lengths[e]
        nodes = np.column_stack([self._e_v[e], self._e_u[e]])
        cost = np.column_stack([L - o, np.where(self._oneway[e], np.inf, o)])
        return nodes, cost

    def _entries(self, cands):
        e = np.array([c.edge_idx for c in cands], dtype=int)
        o = np.array([c.offset_along_m for c in cands])
        L = self.graph.edge_lengths[e]
        nodes = np.column_stack([self._e_u[e], self._e_v[e]])
        cost = np.column_stack([o, np.where(self._oneway[e], np.inf, L - o)])
        return nodes, cost

    def _direct(self, a: CandidateState, b: CandidateState) -> float:
        if a.edge_idx != b.edge_idx:
            return math.inf
        if b.offset_along_m >= a.offset_along_m:
            return b.offset_along_m - a.offset_along_m
        if self._oneway[a.edge_idx]:
            return math.inf
        return a.offset_along_m - b.offset_along_m

    def distances(self, prev, cur, limit: float = math.inf) -> np.ndarray:
        """Route-distance matrix (len(prev), len(cur)); inf beyond ``limit``."""
        xn, xc = self._exits(prev)
        nn, nc = self._entries(cur)
        sources = np.unique(xn)
        D = dijkstra(self.matrix, directed=True, indices=sources, limit=limit)
        row = np.searchsorted(sources, xn)
        sub = D[row[:, :, None, None], nn[None, None, :, :]]
        total = xc[:, :, None, None] + sub + nc[None, None, :, :]
        out = total.min(axis=(1, 3))
        for i, a in enumerate(prev):
            for j, b in enumerate(cur):
                if a.edge_idx == b.edge_idx:
                    out[i, j] = min(out[i, j], self._direct(a, b))
        out[out > limit] = np.inf
        return out

    def path(self, a: CandidateState, b: CandidateState, limit: float = math.inf):
        """Shortest route as ``(length, pieces)``; pieces are ``(edge_idx, from_off, to_off)``."""
        direct = self._direct(a, b)
        xn, xc = self._exits([a])
        nn, nc = self._entries([b])
        sources = np.unique(xn)
        D, pred = dijkstra(self.matrix, directed=True, indices=sources, limit=limit, return_predecessors=True)
        best = (direct, None)
        for i in range(2):
            for j in range(2):
                r = int(np.searchsorted(sources, xn[0, i]))
                total = xc[0, i] + D[r, nn[0, j]] + nc[0, j]
                if total < best[0]:
                    best = (total, (i, j, r))
        length, how = best
        if not math.isfinite(length) or length > limit:
            return math.inf, []
        if how is None:
            return length, [(a.edge_idx, a.offset_along_m, b.offset_along_m)]
        i, j, r = how
        La = float(self.graph.edge_lengths[a.edge_idx])
        Lb = float(self.graph.edge_lengths[b.edge_idx])
        pieces = [(a.edge_idx, a.offset_along_m, La if i == 0 else 0.0)]
        chain = [int(nn[0, j])]
        src = int(sources[r])
        while chain[-1] != src:
            chain.append(int(pred[r, chain[-1]]))
        chain.reverse()
        for u, v in zip(chain, chain[1:]):
            L, e, fwd = self.arcs[(u, v)]
            pieces.append((e, 0.0, L) if fwd else (e, L, 0.0))
        pieces.append((b.edge_idx, 0.0 if j == 0 else Lb, b.offset_along_m))
        return length, pieces


# -- decoding --------------------------------------------------------------

def viterbi(emissions, transitions):
    """Max-sum decoding over a layered trellis.

    ``emissions[t]`` has shape (n_t,), ``transitions[t]`` shape (n_t, n_{t+1}).
    Ties go to the lowest state index.  Returns ``(path, score)``.
    """
    score = np.asarray(emissions[0], dtype=float)
    back = []
    for em, tr in zip(emissions[1:], transitions):
        cand = score[:, None] + np.asarray(tr, dtype=float)
        arg = np.argmax(cand, axis=0)
        score = cand[arg, np.arange(cand.shape[1])] + np.asarray(em, dtype=float)
        back.append(arg)
    last = int(np.argmax(score))
    path = [last]
    for arg in reversed(back):
        path.append(int(arg[path[-1]]))
    path.reverse()
    return path, float(score[last])


@dataclass
class MatchResult:
    states: list[CandidateState | None]
    breaks: list[int]               # observation indices that start a new HMM piece
    gaps: list[int]                 # observations without any candidate
    log_prob: float
    pieces: list[tuple[int, int]]   # inclusive observation ranges matched together

    def __len__(self):
        return len(self.states)


def _route_limit(gc: float) -> float:
    return 2.0 * gc + ROUTE_CUTOFF_SLACK_M


def viterbi_match(graph: StreetGraph, trace: GpsTrace, params: MatchParams = MatchParams(),
                  router: Router | None = None) -> MatchResult:
    if len(trace) == 0:
        raise ValueError("trace is empty")
    if not graph.edges:
        raise ValueError("graph has no edges")
    router = router or Router(graph)
    pts = trace.points
    cands = [candidate_states(graph, p, params) for p in pts]
    if not any(cands):
        raise MatchError("no observation has a candidate road within the search radius")

    states: list[CandidateState | None] = [None] * len(pts)
    breaks: list[int] = []
    gaps = [i for i, c in enumerate(cands) if not c]
    pieces: list[tuple[int, int]] = []
    total = 0.0

    def em(i):
        return np.array([emission_log_prob(c.emission_dist_m, params.sigma_z_m) for c in cands[i]])

    def close(start, idxs, ems, trs):
        nonlocal total
        path, score = viterbi(ems, trs)
        for i, k in zip(idxs, path):
            states[i] = cands[i][k]
        total += score
        pieces.append((start, idxs[-1]))

    idxs: list[int] = []
    ems: list[np.ndarray] = []
    trs: list[np.ndarray] = []
    score = None
    for i in range(len(pts)):
        if not cands[i]:
            if idxs:
                close(idxs[0], idxs, ems, trs)
                idxs, ems, trs, score = [], [], [], None
            continue
        e = em(i)
        if idxs:
            prev = idxs[-1]
            gc = haversine_m(pts[prev], pts[i])
            limit = _route_limit(gc)
            route = router.distances(cands[prev], cands[i], limit)
            tr = np.where(np.isfinite(route), -np.abs(gc - route) / params.beta_m - math.log(params.beta_m), NEG_INF)
            nxt = (score[:, None] + tr).max(axis=0) + e
            if np.all(np.isneginf(nxt)):
                log.info("HMM break at observation %d: no reachable candidate pair", i)
                close(idxs[0], idxs, ems, trs)
                idxs, ems, trs = [], [], []
                breaks.append(i)
                score = e
            else:
                trs.append(tr)
                score = nxt
        else:
            if pieces:
                breaks.append(i)
            score = e
        idxs.append(i)
        ems.append(e)
    if idxs:
        close(idxs[0], idxs, ems, trs)
    return MatchResult(states, sorted(set(breaks)), gaps, total, pieces)


# -- per-frame interpolation -----------------------------------------------

@dataclass(frozen=True)
class FrameRecord:
    frame_idx: int
    point: GeoPoint
    edge_id: str
    heading_deg: float
    arc_m: float = math.nan


@dataclass(frozen=True)
class MatchedTrace:
    records: tuple[FrameRecord, ...]

    def __post_init__(self):
        for i, r in enumerate(self.records):
            if r.frame_idx != i:
                raise ValueError("frame indices must be contiguous from 0")
            if not 0.0 <= r.heading_deg < 360.0:
                raise ValueError(f"heading {r.heading_deg} outside [0, 360)")

    def __len__(self):
        return len(self.records)

    def __getitem__(self, i):
        return self.records[i]


class _Track:
    """Arc-length parametrized path through one HMM piece."""

    def __init__(self, graph: StreetGraph, router: Router, times, states, fixes):
        self.graph = graph
        self.times = np.asarray(times, dtype=float)
        self.anchor = states[0]
        self.pieces: list[tuple[int, float, float]] = []
        starts: list[float] = []
        knots = [0.0]
        s = 0.0
        for k, (a, b) in enumerate(zip(states, states[1:])):
            length, pieces = router.path(a, b, _route_limit(haversine_m(fixes[k], fixes[k + 1])))
            if not pieces:
                raise MatchError(f"no route between matched states {a.edge_id} and {b.edge_id}")
            for e, o0, o1 in pieces:
                if o1 != o0:
                    self.pieces.append((e, o0, o1))
                    starts.append(s)
                    s += abs(o1 - o0)
            knots.append(s)
        self.starts = starts
        self.knots = np.asarray(knots)

    def arc(self, t: float) -> float:
        return float(np.interp(t, self.times, self.knots))

    def locate(self, s: float):
        """(planar x, y, edge_idx, unit direction of travel) at arc length ``s``."""
        if not self.pieces:
            a = self.anchor
            x, y = self.graph.projection.to_xy(a.projected)
            dx, dy = self.graph.direction_at(a.edge_idx, a.offset_along_m)
            return x, y, a.edge_idx, (dx, dy)
        k = max(0, bisect.bisect_right(self.starts, s) - 1)
        e, o0, o1 = self.pieces[k]
        sign = 1.0 if o1 >= o0 else -1.0
        off = o0 + sign * (s - self.starts[k])
        off = min(max(off, min(o0, o1)), max(o0, o1))
        x, y = self.graph.point_at(e, off)
        # direction is sampled just inside the piece so vertices take the outgoing segment
        probe = off + sign * 1e-6 if min(o0, o1) < off + sign * 1e-6 < max(o0, o1) else off
        dx, dy = self.graph.direction_at(e, probe)
        return x, y, e, (sign * dx, sign * dy)


def interpolate_to_frames(graph: StreetGraph, result: MatchResult, trace: GpsTrace,
                          frame_rate_hz: float, n_frames: int,
                          router: Router | None = None) -> MatchedTrace:
    """Resample the matched path at video frame times ``frame_idx / frame_rate_hz``.

    Positions are linear in arc length along the matched route between
    consecutive fixes; heading is the path direction over a centered ±0.5 s
    window (one-sided at the ends).
    """
    if frame_rate_hz <= 0:
        raise ValueError("frame_rate_hz must be positive")
    matched = [i for i, s in enumerate(result.states) if s is not None]
    if len(matched) < 2:
        raise ValueError("need at least two matched observations")
    router = router or Router(graph)
    times = trace.times
    period = 1.0 / trace.nominal_rate_hz
    t_first, t_last = times[matched[0]], times[matched[-1]]
    t_end = (n_frames - 1) / frame_rate_hz
    if n_frames < 1 or t_end > t_last + period + 1e-9 or t_first > period + 1e-9:
        raise ValueError(
            f"{n_frames} frames at {frame_rate_hz} Hz span [0, {t_end:.3f}] s, beyond matched "
            f"observations [{t_first:.3f}, {t_last:.3f}] s by more than one sample period"
        )

    tracks = []
    for a, b in result.pieces:
        idx = [i for i in range(a, b + 1) if result.states[i] is not None]
        tracks.append(_Track(graph, router, [times[i] for i in idx], [result.states[i] for i in idx],
                             [trace.samples[i].point for i in idx]))
    spans = [(tr.times[0], tr.times[-1]) for tr in tracks]

    def track_for(t):
        for k, (t0, t1) in enumerate(spans):
            if t0 <= t <= t1:
                return tracks[k], t
        # outside every piece: hold the nearest piece end
        k = min(range(len(spans)), key=lambda k: min(abs(t - spans[k][0]), abs(t - spans[k][1])))
        t0, t1 = spans[k]
        return tracks[k], min(max(t, t0), t1)

    proj = graph.projection
    records = []
    prev_heading = 0.0
    for f in range(n_frames):
        tr, t = track_for(f / frame_rate_hz)
        s = tr.arc(t)
        x, y, e, (tx, ty) = tr.locate(s)
        lo = max(t - HEADING_HALF_WINDOW_S, tr.times[0])
        hi = min(t + HEADING_HALF_WINDOW_S, tr.times[-1])
        xa, ya, _, _ = tr.locate(tr.arc(lo))
        xb, yb, _, _ = tr.locate(tr.arc(hi))
        if math.hypot(xb - xa, yb - ya) > 1e-3:
            heading = planar_bearing_deg(xb - xa, yb - ya)
        elif tr.pieces:
            heading = planar_bearing_deg(tx, ty)
        else:
            heading = prev_heading
        prev_heading = heading
        records.append(FrameRecord(f, proj.to_geo(x, y), graph.edges[e].edge_id, heading, s))
    return MatchedTrace(tuple(records))


def write_matched_csv(matched: MatchedTrace, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["frame", "lat", "lon", "edge_id", "heading_deg"])
        for r in matched.records:
            w.writerow([r.frame_idx, f"{r.point.lat:.9f}", f"{r.point.lon:.9f}", r.edge_id, f"{r.heading_deg:.4f}"])


def read_matched_csv(path) -> MatchedTrace:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return MatchedTrace(tuple(
        FrameRecord(int(r["frame"]), GeoPoint(float(r["lat"]), float(r["lon"])), r["edge_id"], float(r["heading_deg"]))
        for r in rows
    ))
