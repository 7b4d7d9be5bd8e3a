"""Acceptance gate: one test per criterion, one PASS/FAIL line each.

Run with ``pytest tests/test_acceptance.py`` (lines appear in the terminal
summary) or directly with ``python tests/test_acceptance.py``.
"""

import math
import time
from pathlib import Path

import numpy as np
import pytest

from gazemap import metrics
from gazemap.fixtures import grid_town_osm, random_grid_route, simulate_drive, write_toy_fixture
from gazemap.fusion import (PyramidConfig, align_map_features, attention_weights, cross_attention_forward,
                            decoder_forward, init_weights, map_encoder_forward, synthetic_scene_features,
                            zero_like)
from gazemap.geo import BBox, GeoPoint, LocalProjection, haversine_m
from gazemap.harness import generate_segments
from gazemap.map_match import MatchParams, viterbi_match
from gazemap.osm_graph import crop_to_bbox, parse_osm
from gazemap.patches import PatchRequest, heading_up_crop, sample_patch
from gazemap.pipeline import PipelineConfig, run_pipeline
from gazemap.raster import build_geo_transform, geo_to_pixel, pixel_to_geo, rasterize_graph

from instances import SMALL_PARAMS, small_hmm_instance
from oracles import (brute_force_best, naive_cc, naive_conv2d_same, naive_cross_attention, naive_kld, naive_leaky,
                     naive_nss, naive_sim, ndimage_heading_up)

RESULTS: dict[int, tuple[bool, str]] = {}


def record(n: int, ok: bool, detail: str):
    RESULTS[n] = (ok, detail)
    assert ok, detail


def report_lines() -> list[str]:
    return [f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}" for n, (ok, detail) in sorted(RESULTS.items())]


def test_criterion_1_metric_oracles():
    rng = np.random.default_rng(2024)
    worst = 0.0
    elapsed = 0.0
    for _ in range(1000):
        h, w = (int(v) for v in rng.integers(8, 65, size=2))
        pred, gt = rng.random((h, w)) ** 2, rng.random((h, w)) ** 2
        fix = [(int(rng.integers(h)), int(rng.integers(w))) for _ in range(5)]
        t0 = time.perf_counter()
        got = (metrics.kld(pred, gt), metrics.cc(pred, gt), metrics.nss(pred, fix), metrics.sim(pred, gt))
        elapsed += time.perf_counter() - t0
        ref = (naive_kld(pred, gt), naive_cc(pred, gt), naive_nss(pred, fix), naive_sim(pred, gt))
        worst = max(worst, *(abs(a - b) for a, b in zip(got, ref)))
    record(1, worst <= 1e-9 and elapsed < 5.0, f"max |diff| {worst:.2e} (<= 1e-9), metric time {elapsed:.2f} s (< 5 s)")


def test_criterion_2_metric_identities():
    rng = np.random.default_rng(7)
    P = rng.random((32, 32))
    checks = {
        "KLD(P,P)": metrics.kld(P, P) <= 1e-6,
        "CC(P,P)": abs(metrics.cc(P, P) - 1) <= 1e-9,
        "SIM(P,P)": abs(metrics.sim(P, P) - 1) <= 1e-9,
        "NSS(uniform)": metrics.nss(np.full((32, 32), 0.25), [(3, 4), (20, 9)]) == 0.0,
        "KLD one-hot vs two-cell": abs(metrics.kld(np.array([[0.5, 0.5], [0.0, 0.0]]),
                                                   np.array([[1.0, 0.0], [0.0, 0.0]])) - math.log(2)) <= 1e-4,
    }
    failed = [k for k, v in checks.items() if not v]
    record(2, not failed, "all identities hold" if not failed else f"failed: {failed}")


def test_criterion_3_viterbi_optimum():
    n_done, worst, seq_mismatch, seed = 0, 0.0, 0, 0
    while n_done < 50:
        graph, trace, cands = small_hmm_instance(seed)
        seed += 1
        best, best_seq = brute_force_best(graph, trace.points, cands, SMALL_PARAMS.sigma_z_m,
                                          SMALL_PARAMS.beta_m, haversine_m)
        if not math.isfinite(best):
            continue     # no feasible state sequence at all
        res = viterbi_match(graph, trace, SMALL_PARAMS)
        worst = max(worst, abs(res.log_prob - best))
        got_seq = tuple(c.index(s) for c, s in zip(cands, res.states))
        seq_mismatch += got_seq != best_seq
        n_done += 1
    ok = worst <= 1e-9 and seq_mismatch == 0
    record(3, ok, f"50 instances (seeds 0..{seed - 1}), max |score diff| {worst:.1e}, "
                  f"{seq_mismatch} argmax mismatches")


def test_criterion_4_matching_recovery():
    graph = parse_osm(grid_town_osm(10, 100.0))
    route = random_grid_route(10, 140, seed=11)
    drive = simulate_drive(route, 100.0, speed_mps=10.0, duration_s=1000, noise_m=5.0, seed=11)
    t0 = time.perf_counter()
    res = viterbi_match(graph, drive.trace, MatchParams())
    dt = time.perf_counter() - t0
    good = sum(s is not None and drive.distance_to_path(s.projected) <= 5.0 for s in res.states)
    frac = good / len(res.states)
    rate = len(res.states) / dt
    record(4, frac >= 0.95 and rate >= 1000, f"{100 * frac:.1f}% within 5 m (>= 95%), {rate:.0f} pts/s (>= 1000)")


def test_criterion_5_raster_scale():
    origin = GeoPoint(45.0, 7.0)
    end = LocalProjection(origin).to_geo(1000.0, 0.0)
    doc = (f'<osm><node id="1" lat="{origin.lat!r}" lon="{origin.lon!r}"/>'
           f'<node id="2" lat="{end.lat!r}" lon="{end.lon!r}"/>'
           '<way id="1"><nd ref="1"/><nd ref="2"/><tag k="highway" v="primary"/></way></osm>')
    g = parse_osm(doc.encode())
    g = crop_to_bbox(g, list(g.nodes.values()), 20.0)
    r = rasterize_graph(g, build_geo_transform(g.bbox, 1.0))
    run = max(max((len(s) for s in "".join("1" if v else "0" for v in row).split("0")), default=0)
              for row in r.grid >= 0.5)
    tf = build_geo_transform(BBox(45.0, 7.0, 45.02, 7.03))
    rng = np.random.default_rng(5)
    err = 0.0
    for x, y in zip(rng.uniform(0, tf.width_px, 1000), rng.uniform(0, tf.height_px, 1000)):
        q = geo_to_pixel(tf, pixel_to_geo(tf, x, y))
        err = max(err, math.hypot(q.x - x, q.y - y))
    record(5, abs(run - 1000) <= 2 and err < 0.01, f"lit run {run} px (1000 +- 2), round trip max {err:.1e} px (< 0.01)")


def test_criterion_6_patch_geometry():
    graph = parse_osm(grid_town_osm(10, 100.0))
    raster = rasterize_graph(graph, build_geo_transform(graph.bbox, 1.0))
    px = py = 420
    c = pixel_to_geo(raster.transform, px, py)
    sizes_ok = True
    errs = {}
    for h in (0.0, 37.0, 90.0, 180.0, 271.0):
        req = PatchRequest(c, h, 100.0, (c,) * 16)
        crop = heading_up_crop(raster, req)
        sizes_ok &= crop.shape == (2, 200, 200) and sample_patch(raster, req).channels.shape == (2, 128, 128)
        win = raster.grid[py - 144:py + 144, px - 144:px + 144]
        errs[h] = float(np.abs(crop[0] - ndimage_heading_up(win, h, 200)).mean())
    worst = max(errs.values())
    record(6, sizes_ok and worst <= 0.05, f"sizes 200->128 {'ok' if sizes_ok else 'WRONG'}, "
                                          f"worst mean abs error {worst:.2e} (<= 0.05)")


def test_criterion_7_fusion_invariants():
    cfg = PyramidConfig(channels=(4, 8, 8, 16), base_hw=8, frames=16)
    w64 = init_weights(3, cfg, dtype=np.float64)
    rng = np.random.default_rng(9)
    patch = rng.random((2, 7, 6))
    ref = patch
    for k, b in zip(w64.encoder.kernels, w64.encoder.biases):
        ref = naive_leaky(naive_conv2d_same(ref, k, b))
    enc_err = float(np.abs(map_encoder_forward(patch, w64.encoder) - ref).max())
    f_v = rng.normal(size=(8, 2, 2, 3))
    f_m = rng.normal(size=(8, 2, 2, 3))
    p = w64.attention[2]
    ca_err = float(np.abs(cross_attention_forward(f_v, f_m, p, chunk=5)
                          - naive_cross_attention(f_v, f_m, p.wq, p.wk, p.wv, p.wo)).max())
    w = init_weights(3, cfg)
    scene = synthetic_scene_features(4, cfg)
    f_ms = align_map_features(rng.random((1, 32, 32)).astype(np.float32), cfg.shapes)
    row_err = max(float(np.abs(attention_weights(scene[n].data, f_ms[n], w.attention[n + 1], h).sum(1) - 1).max())
                  for n in range(4) for h in range(2))
    out = decoder_forward(scene, w.decoder)
    in_range = out.shape == (224, 224) and bool(np.all((out > 0) & (out < 1)))
    half = bool(np.all(decoder_forward(scene, zero_like(w).decoder) == 0.5))
    ok = row_err <= 1e-6 and enc_err <= 1e-6 and ca_err <= 1e-6 and in_range and half
    record(7, ok, f"rows {row_err:.1e}, encoder {enc_err:.1e}, attention {ca_err:.1e}, "
                  f"decoder in (0,1) {in_range}, zero weights -> 0.5 {half}")


def test_criterion_8_segment_counts():
    bad = [L for L in range(16, 1001) if len(generate_segments(L)) != (L - 16) // 8 + 1]
    n100 = len(generate_segments(100))
    record(8, not bad and n100 == 11, f"closed form holds for L in 16..1000 ({len(bad)} misses), L=100 -> {n100}")


def _tree(root: Path):
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_criterion_9_end_to_end(tmp_path):
    toy = write_toy_fixture(tmp_path / "toy")
    times = []
    for name in ("a", "b"):
        t0 = time.perf_counter()
        status = run_pipeline(PipelineConfig.from_toml(toy / "config.toml", out=tmp_path / name))
        times.append(time.perf_counter() - t0)
        assert status == 0
    same = _tree(tmp_path / "a") == _tree(tmp_path / "b")
    record(9, same and max(times) < 60.0, f"runs {times[0]:.1f} s / {times[1]:.1f} s (< 60 s), "
                                          f"byte-identical {same}")


if __name__ == "__main__":
    import sys
    sys.exit(pytest.main([__file__, "-q"]))
