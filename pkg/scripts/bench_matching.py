"""Matching accuracy and throughput on simulated grid-town drives.

Usage: python3 scripts/bench_matching.py [--noise-m 5] [--seconds 1000] [--seeds 5]
"""
import argparse
import time

from gazemap.fixtures import grid_town_osm, random_grid_route, simulate_drive
from gazemap.map_match import MatchParams, viterbi_match
from gazemap.osm_graph import parse_osm


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--noise-m", type=float, default=5.0)
    ap.add_argument("--seconds", type=int, default=1000)
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--tolerance-m", type=float, default=5.0)
    a = ap.parse_args()
    graph = parse_osm(grid_town_osm(10, 100.0))
    print("seed  within_tol  pts/s  pieces")
    for seed in range(a.seeds):
        route = random_grid_route(10, a.seconds // 8, seed=seed)
        drive = simulate_drive(route, 100.0, duration_s=a.seconds, noise_m=a.noise_m, seed=seed)
        t0 = time.perf_counter()
        res = viterbi_match(graph, drive.trace, MatchParams())
        dt = time.perf_counter() - t0
        ok = sum(s is not None and drive.distance_to_path(s.projected) <= a.tolerance_m for s in res.states)
        print(f"{seed:4d}  {ok / len(res.states):10.3f}  {len(res.states) / dt:5.0f}  {len(res.pieces):6d}")


if __name__ == "__main__":
    main()
