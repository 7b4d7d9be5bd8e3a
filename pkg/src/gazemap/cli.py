"""``gazemap`` command line: one subcommand per stage plus the end-to-end run."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import BUILD_ID
from .fusion import PyramidConfig, init_weights, save_checkpoint
from .map_match import MatchParams
from .patches import DEFAULT_RADIUS_M
from . import pipeline as pl


def _read_exclusions(path) -> list[str]:
    if path is None:
        return []
    lines = Path(path).read_text().splitlines()
    return [ln.split("#", 1)[0].strip() for ln in lines if ln.split("#", 1)[0].strip()]


def _match_params(a) -> MatchParams:
    return MatchParams(a.sigma_z_m, a.beta_m, a.candidate_radius_m, a.max_candidates)


def _add_match_flags(p):
    d = MatchParams()
    p.add_argument("--sigma-z-m", type=float, default=d.sigma_z_m)
    p.add_argument("--beta-m", type=float, default=d.beta_m)
    p.add_argument("--candidate-radius-m", type=float, default=d.candidate_radius_m)
    p.add_argument("--max-candidates", type=int, default=d.max_candidates_per_obs)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="gazemap", description=__doc__)
    ap.add_argument("--version", action="version", version=BUILD_ID)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract-graph", help="parse OSM XML and crop to the trace bbox")
    p.add_argument("--osm", required=True)
    p.add_argument("--trace", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--offset-m", type=float, default=500.0)

    p = sub.add_parser("match", help="HMM map matching and per-frame interpolation")
    p.add_argument("--graph", required=True)
    p.add_argument("--trace", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--frame-rate-hz", type=float, default=25.0)
    p.add_argument("--n-frames", type=int, required=True)
    _add_match_flags(p)

    p = sub.add_parser("rasterize", help="render the road graph to a PGM raster")
    p.add_argument("--graph", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--m-per-px", type=float, default=1.0)
    p.add_argument("--line-width-px", type=float, default=2.0)

    p = sub.add_parser("segments", help="sliding-window clips with exclusion filtering")
    p.add_argument("--labels", required=True)
    p.add_argument("--video-id", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("sample", help="heading-up route-overlaid patches per clip")
    p.add_argument("--raster", required=True)
    p.add_argument("--matched", required=True)
    p.add_argument("--segments", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--radius-m", type=float, default=DEFAULT_RADIUS_M)
    p.add_argument("--line-width-px", type=float, default=2.0)
    p.add_argument("--jobs", type=int, default=1)

    p = sub.add_parser("fuse", help="map encoder + cross-attention + decoder forward")
    p.add_argument("--patches", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--enc-blocks", default="3", help="2,3,4 | 2 | 3 | 4")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--checkpoint")
    p.add_argument("--channels", default=None, help="comma-separated pyramid channels")
    p.add_argument("--base-hw", type=int, default=None)
    p.add_argument("--jobs", type=int, default=1)

    p = sub.add_parser("init-checkpoint", help="write seeded random weights")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--channels", default=None)
    p.add_argument("--base-hw", type=int, default=None)

    p = sub.add_parser("evaluate", help="score predictions against ground truth")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--labels", required=True, help="labels CSV or a directory of <video>.csv")
    p.add_argument("--out", required=True)
    p.add_argument("--fixations", help="directory of <sample>.csv fixation lists")
    p.add_argument("--exclude-list", help="file with one video id per line")

    p = sub.add_parser("pipeline", help="run every stage from a TOML config")
    p.add_argument("--config", required=True)
    p.add_argument("--out")
    p.add_argument("--seed", type=int)
    p.add_argument("--radius-m", type=float)
    p.add_argument("--m-per-px", type=float)
    p.add_argument("--enc-blocks")
    p.add_argument("--jobs", type=int)
    p.add_argument("--no-fuse", action="store_true")

    p = sub.add_parser("make-fixture", help="write the bundled synthetic toy dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=7)
    return ap


def _pyramid(a) -> PyramidConfig:
    d = PyramidConfig()
    ch = tuple(int(c) for c in a.channels.split(",")) if a.channels else d.channels
    return PyramidConfig(ch, a.base_hw or d.base_hw, d.frames)


def main(argv=None) -> int:
    a = build_parser().parse_args(argv)
    logging.basicConfig(stream=sys.stderr, level=logging.DEBUG if a.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    log = logging.getLogger("gazemap")
    try:
        if a.command == "extract-graph":
            pl.stage_extract_graph(a.osm, a.trace, a.out, a.offset_m)
        elif a.command == "match":
            pl.stage_match(a.graph, a.trace, a.out, a.frame_rate_hz, a.n_frames, _match_params(a))
        elif a.command == "rasterize":
            pl.stage_rasterize(a.graph, a.out, a.m_per_px, a.line_width_px)
        elif a.command == "segments":
            kept, excluded = pl.stage_segments(a.labels, a.out, a.video_id)
            print(f"{len(kept)} kept, {len(excluded)} excluded")
        elif a.command == "sample":
            names = pl.stage_sample(a.raster, a.matched, a.segments, a.out, a.radius_m, a.line_width_px, a.jobs)
            print(f"{len(names)} patches")
        elif a.command == "fuse":
            names = pl.stage_fuse(a.patches, a.out, a.enc_blocks, a.seed, _pyramid(a), a.checkpoint, a.jobs)
            print(f"{len(names)} saliency maps")
        elif a.command == "init-checkpoint":
            save_checkpoint(init_weights(a.seed, _pyramid(a)), a.out)
        elif a.command == "evaluate":
            report = pl.stage_evaluate(a.pred, a.gt, a.labels, a.out, a.fixations, _read_exclusions(a.exclude_list))
            print(f"{report.n_evaluated} evaluated, {len(report.missing)} missing, {len(report.errors)} errors")
            for e in report.errors:
                log.error("sample %s: %s", e["sample"], e["error"])
            return 1 if report.errors else 0
        elif a.command == "pipeline":
            cfg = pl.PipelineConfig.from_toml(a.config, out=Path(a.out) if a.out else None, seed=a.seed,
                                              radius_m=a.radius_m, m_per_px=a.m_per_px,
                                              enc_blocks=a.enc_blocks, jobs=a.jobs,
                                              fuse=False if a.no_fuse else None)
            return pl.run_pipeline(cfg)
        elif a.command == "make-fixture":
            from .fixtures import write_toy_fixture
            write_toy_fixture(a.out, a.seed)
    except pl.StageError as exc:
        log.error("%s", exc)
        return 2
    except (OSError, ValueError, KeyError) as exc:
        log.error("[%s]: %s", a.command, exc)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
