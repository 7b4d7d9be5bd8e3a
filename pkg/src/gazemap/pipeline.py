"""Stage functions composing files on disk, and the end-to-end driver.

Every stage reads its inputs from files and writes its outputs to files, so
each one can be invoked alone from the CLI.  Nothing written depends on
wall-clock time, absolute paths or worker count.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import sys
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import BUILD_ID
from .formats import read_json, write_json, write_tensor
from .fusion import PyramidConfig, fuse_forward, init_weights, load_checkpoint, parse_enc_blocks, synthetic_scene_features
from .harness import SegmentSpec, evaluate_run, filter_segments, generate_segments, read_labels_csv
from .map_match import (MatchParams, Router, interpolate_to_frames, read_matched_csv, read_trace_csv,
                        viterbi_match, write_matched_csv)
from .osm_graph import crop_to_bbox, load_graph, parse_osm, save_graph
from .patches import PatchRequest, heading_from_route, load_patch, sample_patch, save_patch
from .raster import build_geo_transform, load_raster, rasterize_graph, save_raster

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

log = logging.getLogger(__name__)

STAGE_VERSIONS = {
    "extract-graph": "1", "match": "1", "rasterize": "1", "segments": "1",
    "sample": "1", "fuse": "1", "evaluate": "1",
}


class StageError(RuntimeError):
    def __init__(self, stage: str, msg: str, sample: str | None = None):
        self.stage, self.sample = stage, sample
        where = f"[{stage}]" + (f" sample {sample}" if sample else "")
        super().__init__(f"{where}: {msg}")


@dataclass
class PipelineConfig:
    osm: Path | None = None
    trace: Path | None = None
    labels: Path | None = None
    gt: Path | None = None
    out: Path = Path("run")
    fixations: Path | None = None
    checkpoint: Path | None = None
    video_id: str = "01"
    frame_rate_hz: float = 25.0
    n_frames: int | None = None
    crop_offset_m: float = 500.0
    m_per_px: float = 1.0
    line_width_px: float = 2.0
    radius_m: float = 100.0
    match: MatchParams = field(default_factory=MatchParams)
    enc_blocks: tuple[int, ...] = (3,)
    pyramid: PyramidConfig = field(default_factory=PyramidConfig)
    fuse: bool = True
    seed: int = 0
    jobs: int = 1

    def __post_init__(self):
        if self.frame_rate_hz <= 0:
            raise ValueError("frame_rate_hz must be positive")
        if not 0 <= self.crop_offset_m <= 10_000:
            raise ValueError("crop_offset_m must lie in [0, 10000]")
        if self.m_per_px <= 0 or self.line_width_px <= 0:
            raise ValueError("m_per_px and line_width_px must be positive")
        if not 25 <= self.radius_m <= 200:
            raise ValueError("radius_m must lie in [25, 200]")
        if self.jobs < 1:
            raise ValueError("jobs must be >= 1")
        self.enc_blocks = parse_enc_blocks(self.enc_blocks)

    @classmethod
    def from_toml(cls, path, **overrides) -> "PipelineConfig":
        """Load a TOML config; relative paths resolve against the file's directory."""
        path = Path(path)
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
        base = path.parent
        kw = {k: v for k, v in raw.items() if k not in ("paths", "match", "pyramid")}
        for k, v in raw.get("paths", {}).items():
            kw[k] = base / v
        if "match" in raw:
            kw["match"] = MatchParams(**raw["match"])
        if "pyramid" in raw:
            p = raw["pyramid"]
            kw["pyramid"] = PyramidConfig(tuple(p.get("channels", PyramidConfig.channels)),
                                          p.get("base_hw", PyramidConfig.base_hw), p.get("frames", 16))
        kw.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**kw)

    def fingerprint(self) -> dict:
        """Settings that shape the outputs; paths are replaced by content digests."""
        out = {}
        for f in dataclasses.fields(self):
            if f.name in ("out", "jobs"):
                continue
            v = getattr(self, f.name)
            if isinstance(v, Path):
                v = _digest_path(v)
            elif dataclasses.is_dataclass(v):
                v = dataclasses.asdict(v)
            out[f.name] = v
        return json.loads(json.dumps(out, default=list))


def _digest_path(p: Path) -> str:
    h = hashlib.sha256()
    files = [p] if p.is_file() else sorted(q for q in p.rglob("*") if q.is_file())
    for q in files:
        h.update(str(q.relative_to(p.parent if p.is_file() else p)).encode())
        h.update(q.read_bytes())
    return h.hexdigest()


def _map(fn, items, jobs: int):
    if jobs <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


# -- stages ----------------------------------------------------------------

def stage_extract_graph(osm_path, trace_path, out_path, offset_m: float = 500.0):
    graph = parse_osm(osm_path)
    trace = read_trace_csv(trace_path)
    cropped = crop_to_bbox(graph, trace.points, offset_m)
    save_graph(cropped, out_path)
    log.info("graph: %d nodes, %d edges (from %d)", len(cropped.nodes), len(cropped.edges), len(graph.edges))
    return cropped


def stage_match(graph_path, trace_path, out_path, frame_rate_hz: float, n_frames: int,
                params: MatchParams = MatchParams()):
    graph = load_graph(graph_path)
    trace = read_trace_csv(trace_path)
    router = Router(graph)
    result = viterbi_match(graph, trace, params, router)
    if result.gaps:
        log.warning("%d observation(s) had no candidate road", len(result.gaps))
    matched = interpolate_to_frames(graph, result, trace, frame_rate_hz, n_frames, router)
    write_matched_csv(matched, out_path)
    return matched


def stage_rasterize(graph_path, out_path, m_per_px: float = 1.0, line_width_px: float = 2.0):
    graph = load_graph(graph_path)
    raster = rasterize_graph(graph, build_geo_transform(graph.bbox, m_per_px), line_width_px)
    save_raster(raster, out_path)
    return raster


def stage_segments(labels_path, out_path, video_id: str):
    labels = read_labels_csv(labels_path)
    segs = generate_segments(len(labels), video_id=video_id)
    kept, excluded = filter_segments(segs, labels)
    write_json(out_path, {
        "video_id": video_id,
        "kept": [dataclasses.asdict(s) for s in kept],
        "excluded": [dataclasses.asdict(s) for s in excluded],
    })
    return kept, excluded


def stage_sample(raster_path, matched_path, segments_path, out_dir, radius_m: float = 100.0,
                 line_width_px: float = 2.0, jobs: int = 1) -> list[str]:
    raster = load_raster(raster_path)
    matched = read_matched_csv(matched_path)
    segs = [SegmentSpec(**s) for s in read_json(segments_path)["kept"]]
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    requests = []
    prior = None
    for seg in segs:
        if seg.last_frame >= len(matched):
            raise StageError("sample", f"needs frame {seg.last_frame}, trace has {len(matched)}", seg.name)
        route = tuple(matched[f].point for f in seg.frames)
        heading = heading_from_route(route, prior if prior is not None else matched[seg.last_frame].heading_deg)
        prior = heading
        requests.append((seg.name, PatchRequest(route[-1], heading, radius_m, route)))

    def work(item):
        name, req = item
        try:
            save_patch(sample_patch(raster, req, line_width_px), out_dir / f"{name}.bin")
        except Exception as exc:
            raise StageError("sample", str(exc), name) from exc
        return name

    return _map(work, requests, jobs)


def stage_fuse(patch_dir, out_dir, enc_blocks=(3,), seed: int = 0, pyramid: PyramidConfig = PyramidConfig(),
               checkpoint=None, jobs: int = 1) -> list[str]:
    """Fuse every patch with seeded synthetic scene features; write 224x224 maps."""
    weights = load_checkpoint(checkpoint) if checkpoint else init_weights(seed, pyramid)
    pyramid = weights.config
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    names = sorted(p.stem for p in Path(patch_dir).glob("*.bin"))

    def work(name):
        try:
            patch = load_patch(Path(patch_dir) / f"{name}.bin")
            scene = synthetic_scene_features((seed * 1_000_003 + zlib.crc32(name.encode())) % 2**32, pyramid)
            sal = fuse_forward(patch, scene, weights, enc_blocks)
        except Exception as exc:
            raise StageError("fuse", str(exc), name) from exc
        write_tensor(out_dir / f"{name}.bin", sal[None].astype(np.float32), {"enc_blocks": list(parse_enc_blocks(enc_blocks))})
        return name

    return _map(work, names, jobs)


def load_labels_dir(path) -> dict:
    p = Path(path)
    files = [p] if p.is_file() else sorted(p.glob("*.csv"))
    return {f.stem: read_labels_csv(f) for f in files}


def stage_evaluate(pred_dir, gt_dir, labels_path, out_path, fixation_dir=None, exclude_videos=()):
    report = evaluate_run(pred_dir, gt_dir, load_labels_dir(labels_path), fixation_dir,
                          exclude_videos=exclude_videos)
    write_json(out_path, report.to_dict())
    return report


# -- end to end ------------------------------------------------------------

def _tree_digests(root: Path) -> dict[str, str]:
    return {
        str(p.relative_to(root)): hashlib.sha256(p.read_bytes()).hexdigest()
        for p in sorted(root.rglob("*")) if p.is_file() and p.name != "manifest.json"
    }


def run_pipeline(config: PipelineConfig) -> int:
    """extract-graph -> match -> rasterize -> segments -> sample -> fuse -> evaluate."""
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    graph_p, matched_p, raster_p = out / "graph.json", out / "matched.csv", out / "raster.pgm"
    segs_p, patch_d, pred_d, report_p = out / "segments.json", out / "patches", out / "predictions", out / "report.json"
    labels_file = Path(config.labels)
    if labels_file.is_dir():
        labels_file = labels_file / f"{config.video_id}.csv"
    status = 0
    stage = "extract-graph"
    try:
        stage_extract_graph(config.osm, config.trace, graph_p, config.crop_offset_m)
        stage = "segments"
        n_frames = config.n_frames or len(read_labels_csv(labels_file))
        kept, excluded = stage_segments(labels_file, segs_p, config.video_id)
        stage = "match"
        stage_match(graph_p, config.trace, matched_p, config.frame_rate_hz, n_frames, config.match)
        stage = "rasterize"
        stage_rasterize(graph_p, raster_p, config.m_per_px, config.line_width_px)
        stage = "sample"
        stage_sample(raster_p, matched_p, segs_p, patch_d, config.radius_m, config.line_width_px, config.jobs)
        if config.fuse:
            stage = "fuse"
            stage_fuse(patch_d, pred_d, config.enc_blocks, config.seed, config.pyramid, config.checkpoint, config.jobs)
            if config.gt is not None:
                stage = "evaluate"
                report = stage_evaluate(pred_d, config.gt, labels_file, report_p, config.fixations)
                if report.errors:
                    status = 1
        log.info("pipeline finished: %d clips kept, %d excluded", len(kept), len(excluded))
    except StageError as exc:
        log.error("%s", exc)
        status = 2
    except Exception as exc:
        log.error("[%s]: %s", stage, exc)
        status = 2
    fp = config.fingerprint()
    write_json(out / "manifest.json", {
        "build": BUILD_ID,
        "config": fp,
        "config_hash": hashlib.sha256(json.dumps(fp, sort_keys=True).encode()).hexdigest(),
        "stages": STAGE_VERSIONS,
        "status": status,
        "artifacts": _tree_digests(out),
    })
    return status
