import itertools
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import stats

from gazemap.fixtures import grid_town_osm, random_grid_route, simulate_drive
from gazemap.geo import haversine_m
from gazemap.map_match import (GpsSample, GpsTrace, MatchParams, Router, candidate_states, emission_log_prob,
                               interpolate_to_frames, read_matched_csv, read_trace_csv, transition_log_prob,
                               viterbi, viterbi_match, write_matched_csv, write_trace_csv)
from gazemap.osm_graph import parse_osm, project_point_to_edge

from instances import SMALL_PARAMS, small_hmm_instance
from oracles import brute_force_best, joint_log_prob, nx_road_graph, route_distance


@given(st.floats(0, 100), st.floats(0.5, 50))
def test_emission_matches_scipy_normal(d, sigma):
    assert emission_log_prob(d, sigma) == pytest.approx(stats.norm.logpdf(d, scale=sigma), rel=1e-12, abs=1e-12)


@given(st.floats(0, 500), st.floats(0, 500), st.floats(1, 100))
def test_transition_matches_scipy_exponential(gc, route, beta):
    expected = stats.expon.logpdf(abs(gc - route), scale=beta)
    assert transition_log_prob(gc, route, beta) == pytest.approx(expected, rel=1e-12, abs=1e-12)


def test_unreachable_transition_is_neg_inf():
    assert transition_log_prob(10.0, math.inf, 20.0) == -math.inf


def test_params_validation():
    with pytest.raises(ValueError):
        MatchParams(sigma_z_m=0)
    with pytest.raises(ValueError):
        MatchParams(max_candidates_per_obs=0)


@given(st.lists(st.lists(st.integers(-9, 0), min_size=1, max_size=3), min_size=1, max_size=5), st.data())
def test_viterbi_against_enumeration(ems, data):
    # integer scores keep every sum exact, so the optimum must match bit for bit
    trs = [np.array(data.draw(st.lists(st.lists(st.integers(-9, 0), min_size=len(b), max_size=len(b)),
                                       min_size=len(a), max_size=len(a))), dtype=float)
           for a, b in zip(ems, ems[1:])]
    path, score = viterbi([np.array(e, dtype=float) for e in ems], trs)
    best = max(
        sum(ems[t][k] for t, k in enumerate(seq)) + sum(trs[t][seq[t], seq[t + 1]] for t in range(len(seq) - 1))
        for seq in itertools.product(*[range(len(e)) for e in ems])
    )
    assert score == best
    realized = sum(ems[t][k] for t, k in enumerate(path)) + sum(trs[t][path[t], path[t + 1]]
                                                                for t in range(len(path) - 1))
    assert realized == best


def test_viterbi_tie_break_prefers_lowest_index():
    path, _ = viterbi([np.zeros(3), np.zeros(3)], [np.zeros((3, 3))])
    assert path == [0, 0]


@pytest.mark.parametrize("seed", range(10))
def test_viterbi_match_is_hmm_optimum(seed):
    graph, trace, cands = small_hmm_instance(seed)
    res = viterbi_match(graph, trace, SMALL_PARAMS)
    best, _ = brute_force_best(graph, trace.points, cands, SMALL_PARAMS.sigma_z_m, SMALL_PARAMS.beta_m, haversine_m)
    if res.breaks:
        assert best == -math.inf
        return
    assert res.log_prob == pytest.approx(best, abs=1e-9)
    got = joint_log_prob(graph, trace.points, res.states, SMALL_PARAMS.sigma_z_m, SMALL_PARAMS.beta_m, haversine_m)
    assert got == pytest.approx(best, abs=1e-9)


@pytest.mark.parametrize("seed", range(8))
def test_router_matches_networkx(seed):
    graph, trace, cands = small_hmm_instance(seed + 100)
    G = nx_road_graph(graph)
    router = Router(graph)
    for prev, cur in zip(cands, cands[1:]):
        D = router.distances(prev, cur)
        for i, a in enumerate(prev):
            for j, b in enumerate(cur):
                expected = route_distance(graph, G, a, b)
                if math.isinf(expected):
                    assert math.isinf(D[i, j])
                else:
                    assert D[i, j] == pytest.approx(expected, abs=1e-9)
                length, pieces = router.path(a, b)
                assert length == pytest.approx(D[i, j], abs=1e-9) or (math.isinf(length) and math.isinf(D[i, j]))
                if pieces:
                    assert sum(abs(o1 - o0) for _, o0, o1 in pieces) == pytest.approx(length, abs=1e-6)


def test_candidates_sorted_within_radius(grid_town):
    proj = grid_town.projection
    params = MatchParams(candidate_radius_m=45.0, max_candidates_per_obs=4)
    rng = np.random.default_rng(3)
    for _ in range(50):
        p = proj.to_geo(*rng.uniform(0, 1000, size=2))
        cs = candidate_states(grid_town, p, params)
        assert len(cs) <= 4
        d = [c.emission_dist_m for c in cs]
        assert d == sorted(d) and all(x <= 45.0 for x in d)
        assert len({c.edge_id for c in cs}) == len(cs)
        for c in cs:
            ref = project_point_to_edge(grid_town.edge(c.edge_id), p, proj)
            assert c.emission_dist_m == pytest.approx(ref.distance_m, abs=1e-6)
            assert c.offset_along_m == pytest.approx(ref.offset_along_m, abs=1e-6)


def _matched_fraction(block_m, seed, noise_ratio=0.05, params=MatchParams()):
    graph = parse_osm(grid_town_osm(10, block_m))
    route = random_grid_route(10, 80, seed)
    drive = simulate_drive(route, block_m, speed_mps=10.0 * block_m / 100, duration_s=300,
                           noise_m=noise_ratio * block_m, seed=seed)
    res = viterbi_match(graph, drive.trace, params)
    return graph, drive, res


def test_scale_coherence():
    # doubling the world, the noise and every distance parameter leaves the decoded roads unchanged
    p1 = MatchParams(4.07, 20.0, 50.0, 8)
    p2 = MatchParams(8.14, 40.0, 100.0, 8)
    g1, _, r1 = _matched_fraction(100.0, 5, params=p1)
    g2, _, r2 = _matched_fraction(200.0, 5, params=p2)
    assert [s.edge_id for s in r1.states] == [s.edge_id for s in r2.states]


def test_gap_observation_is_left_unmatched(grid_town):
    proj = grid_town.projection
    pts = [proj.to_geo(0, 5), proj.to_geo(10, 5), proj.to_geo(50, 50_000), proj.to_geo(30, 2), proj.to_geo(40, 1)]
    trace = GpsTrace(tuple(GpsSample(float(i), p) for i, p in enumerate(pts)))
    res = viterbi_match(grid_town, trace)
    assert res.gaps == [2]
    assert res.states[2] is None
    assert res.pieces == [(0, 1), (3, 4)]


def _straight_trace(graph, xs, ys, times):
    proj = graph.projection
    return GpsTrace(tuple(GpsSample(t, proj.to_geo(x, y)) for t, x, y in zip(times, xs, ys)))


def test_interpolation_knots_and_midpoints(grid_town):
    # fixture coordinates carry 9 decimals, about 0.1 mm; noise-free fixes along row 0 at 10 m/s, 25 frames per second
    trace = _straight_trace(grid_town, [5, 15, 25, 35, 45], [0] * 5, [0.0, 1.0, 2.0, 3.0, 4.0])
    res = viterbi_match(grid_town, trace)
    m = interpolate_to_frames(grid_town, res, trace, 25.0, 101)
    proj = grid_town.projection
    for f in (0, 25, 50, 75, 100):
        x, y = proj.to_xy(m[f].point)
        assert x == pytest.approx(5 + 10 * f / 25, abs=1e-3)
        assert y == pytest.approx(0.0, abs=1e-3)
    x, _ = proj.to_xy(m[12].point)
    assert x == pytest.approx(5 + 10 * 12 / 25, abs=1e-3)
    assert all(abs(r.heading_deg - 90.0) < 1e-6 for r in m.records)


def test_interpolation_follows_turn(grid_town):
    # east along row 0 into the junction with column 1, then north
    proj = grid_town.projection
    cx, cy = proj.to_xy(grid_town.nodes[2])
    xs, ys = [cx - 40, cx - 20, cx, cx, cx], [cy, cy, cy, cy + 20, cy + 40]
    trace = _straight_trace(grid_town, xs, ys, [0.0, 2.0, 4.0, 6.0, 8.0])
    res = viterbi_match(grid_town, trace)
    m = interpolate_to_frames(grid_town, res, trace, 10.0, 81)
    arcs = [r.arc_m for r in m.records]
    assert all(b >= a - 1e-9 for a, b in zip(arcs, arcs[1:]))
    x, y = proj.to_xy(m[50].point)   # t = 5 s: 10 m past the corner
    assert (x, y) == pytest.approx((cx, cy + 10.0), abs=1e-3)
    assert m[10].heading_deg == pytest.approx(90.0, abs=1e-6)
    assert m[70].heading_deg == pytest.approx(0.0, abs=1e-6)


def test_interpolation_refuses_to_extrapolate(grid_town):
    trace = _straight_trace(grid_town, [5, 15, 25], [0, 0, 0], [0.0, 1.0, 2.0])
    res = viterbi_match(grid_town, trace)
    interpolate_to_frames(grid_town, res, trace, 25.0, 76)
    with pytest.raises(ValueError):
        interpolate_to_frames(grid_town, res, trace, 25.0, 200)


def test_csv_round_trips(grid_town, tmp_path):
    trace = _straight_trace(grid_town, [5, 15, 25], [0, 0, 0], [0.0, 1.0, 2.0])
    write_trace_csv(trace, tmp_path / "t.csv")
    again = read_trace_csv(tmp_path / "t.csv")
    assert [s.t for s in again.samples] == [0.0, 1.0, 2.0]
    assert all(haversine_m(a, b) < 1e-3 for a, b in zip(trace.points, again.points))
    res = viterbi_match(grid_town, trace)
    m = interpolate_to_frames(grid_town, res, trace, 25.0, 50)
    write_matched_csv(m, tmp_path / "m.csv")
    m2 = read_matched_csv(tmp_path / "m.csv")
    assert [r.edge_id for r in m2.records] == [r.edge_id for r in m.records]
    assert all(abs(a.heading_deg - b.heading_deg) < 1e-3 for a, b in zip(m.records, m2.records))


def test_timestamps_must_increase(grid_town):
    p = grid_town.nodes[1]
    with pytest.raises(ValueError):
        GpsTrace((GpsSample(1.0, p), GpsSample(1.0, p)))
