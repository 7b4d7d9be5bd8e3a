"""Clip segmentation, exclusion filtering and per-subset metric reports."""

from __future__ import annotations

import csv
import logging
import math
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import metrics
from .formats import read_map

log = logging.getLogger(__name__)

CLIP_LEN = 16
STRIDE = 8

ACTIONS = ("None", "Acc", "Dec", "Lat", "Lat/Lon", "Stop")
INTERSECTIONS = ("Signalized", "Unsignalized", "Roundabout", "Highway")
NO_INTERSECTION = "none"
PRIORITIES = ("RoW", "Yield")
NO_PRIORITY = "n/a"
EXCLUSION_FLAGS = frozenset({"u-turn", "reversing", "bad-gaze", "bad-gps"})
METRIC_NAMES = ("KLD", "CC", "NSS", "SIM")

# default DR(eye)VE split: videos 1-34 train, 35-37 validation, the rest test
DEFAULT_SPLIT = {"train": (1, 34), "val": (35, 37), "test": (38, 74)}


def split_of(video_number: int, split=DEFAULT_SPLIT) -> str:
    for name, (lo, hi) in split.items():
        if lo <= video_number <= hi:
            return name
    raise KeyError(f"video {video_number} is outside every split range")


@dataclass(frozen=True)
class SegmentSpec:
    video_id: str
    start_frame: int
    length: int = CLIP_LEN
    stride: int = STRIDE

    @property
    def last_frame(self) -> int:
        return self.start_frame + self.length - 1

    @property
    def frames(self) -> range:
        return range(self.start_frame, self.start_frame + self.length)

    @property
    def name(self) -> str:
        return f"{self.video_id}_{self.last_frame}"


@dataclass(frozen=True)
class FrameLabel:
    frame: int
    action: str = "None"
    intersection_type: str = NO_INTERSECTION
    priority: str = NO_PRIORITY
    flags: frozenset = frozenset()

    def __post_init__(self):
        if self.action not in ACTIONS:
            raise ValueError(f"frame {self.frame}: unknown action {self.action!r}")
        if self.intersection_type not in INTERSECTIONS + (NO_INTERSECTION,):
            raise ValueError(f"frame {self.frame}: unknown intersection type {self.intersection_type!r}")
        if self.intersection_type == NO_INTERSECTION:
            if self.priority != NO_PRIORITY:
                raise ValueError(f"frame {self.frame}: priority without an intersection")
        elif self.priority not in PRIORITIES:
            raise ValueError(f"frame {self.frame}: intersection needs a priority, got {self.priority!r}")
        unknown = set(self.flags) - EXCLUSION_FLAGS
        if unknown:
            raise ValueError(f"frame {self.frame}: unknown flags {sorted(unknown)}")
        object.__setattr__(self, "flags", frozenset(self.flags))

    @property
    def context(self) -> str | None:
        if self.intersection_type == NO_INTERSECTION:
            return None
        return f"{self.intersection_type}/{self.priority}"


def read_labels_csv(path) -> dict[int, FrameLabel]:
    """``frame,action,intersection_type,priority,flags`` (flags ';'-separated)."""
    out = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            flags = frozenset(f for f in (row.get("flags") or "").split(";") if f)
            lab = FrameLabel(int(row["frame"]), row["action"], row["intersection_type"] or NO_INTERSECTION,
                             row["priority"] or NO_PRIORITY, flags)
            out[lab.frame] = lab
    return out


def write_labels_csv(labels, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["frame", "action", "intersection_type", "priority", "flags"])
        for f in sorted(labels):
            lab = labels[f]
            w.writerow([lab.frame, lab.action, lab.intersection_type, lab.priority, ";".join(sorted(lab.flags))])


def generate_segments(video_length: int, clip_len: int = CLIP_LEN, stride: int = STRIDE,
                      video_id: str = "") -> list[SegmentSpec]:
    if clip_len < 1 or stride < 1:
        raise ValueError("clip_len and stride must be positive")
    if video_length < clip_len:
        log.warning("video %r has %d frames, shorter than one %d-frame clip", video_id, video_length, clip_len)
        return []
    return [SegmentSpec(video_id, s, clip_len, stride) for s in range(0, video_length - clip_len + 1, stride)]


def filter_segments(segments, labels: dict[int, FrameLabel]):
    """Split into (kept, excluded); a segment is excluded if any frame carries a flag."""
    kept, excluded = [], []
    for seg in segments:
        flagged = False
        for f in seg.frames:
            if f not in labels:
                raise KeyError(f"no label for frame {f} of video {seg.video_id!r}")
            flagged = flagged or bool(labels[f].flags)
        (excluded if flagged else kept).append(seg)
    return kept, excluded


# -- evaluation ------------------------------------------------------------

@dataclass
class MetricsReport:
    overall: dict = field(default_factory=dict)
    per_action: dict = field(default_factory=dict)
    per_context: dict = field(default_factory=dict)
    samples: list = field(default_factory=list)
    n_evaluated: int = 0
    n_excluded: int = 0
    missing: list = field(default_factory=list)
    errors: list = field(default_factory=list)
    nan_counts: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "overall": self.overall,
            "per_action": self.per_action,
            "per_context": self.per_context,
            "counts": {
                "evaluated": self.n_evaluated,
                "excluded": self.n_excluded,
                "missing": len(self.missing),
                "errors": len(self.errors),
                "nan": self.nan_counts,
            },
            "missing": self.missing,
            "errors": self.errors,
            "samples": self.samples,
        }


def _mean(values) -> tuple[float | None, int, int]:
    """(mean over finite values, count used, count of NaN dropped)."""
    vals = [v for v in values if not math.isnan(v)]
    dropped = len(values) - len(vals)
    if not vals:
        return None, 0, dropped
    return math.fsum(vals) / len(vals), len(vals), dropped


def aggregate(samples: list[dict]) -> tuple[dict, dict, dict, dict]:
    """Overall means of every metric plus per-action / per-context KLD means."""
    overall, nan_counts = {}, {}
    for m in METRIC_NAMES:
        mean, n, dropped = _mean([s[m] for s in samples])
        overall[m] = mean
        nan_counts[m] = dropped
    overall["count"] = len(samples)

    def grouped(key, order):
        out = {}
        for g in order:
            vals = [s["KLD"] for s in samples if s[key] == g]
            if vals:
                mean, n, _ = _mean(vals)
                if n:
                    out[g] = {"KLD": mean, "count": n}
        return out

    contexts = [f"{i}/{p}" for i in INTERSECTIONS for p in PRIORITIES]
    return overall, grouped("action", ACTIONS), grouped("context", contexts), nan_counts


_NAME = re.compile(r"^(?P<video>.+)_(?P<frame>\d+)$")


def _index_maps(directory) -> dict[str, Path]:
    out = {}
    d = Path(directory)
    for p in sorted(d.iterdir()) if d.is_dir() else []:
        if p.suffix in (".pgm", ".bin") and _NAME.match(p.stem):
            out.setdefault(p.stem, p)
    return out


def evaluate_run(pred_dir, gt_dir, labels: dict[str, dict[int, FrameLabel]], fixation_dir=None,
                 fixation_percentile: float = metrics.FIXATION_PERCENTILE,
                 exclude_videos=(), clip_len: int = CLIP_LEN, stride: int = STRIDE) -> MetricsReport:
    """Score every kept segment's last frame and aggregate per action / context.

    ``labels`` maps video id -> per-frame labels; the video length is the
    number of labelled frames.  Fixations come from ``<fixation_dir>/<name>.csv``
    when given, otherwise from thresholding the ground truth map.
    """
    preds = _index_maps(pred_dir)
    gts = _index_maps(gt_dir)
    report = MetricsReport()
    samples = []
    excluded_videos = set(exclude_videos)
    for video in sorted(labels):
        if video in excluded_videos:
            continue
        labs = labels[video]
        segs = generate_segments(len(labs), clip_len, stride, video)
        kept, excluded = filter_segments(segs, labs)
        report.n_excluded += len(excluded)
        for seg in kept:
            name = seg.name
            if name not in preds or name not in gts:
                report.missing.append({"sample": name, "prediction": name in preds, "ground_truth": name in gts})
                continue
            try:
                pred = read_map(preds[name])
                gt = read_map(gts[name])
                if pred.shape != gt.shape:
                    raise ValueError(f"prediction shape {pred.shape} != ground truth shape {gt.shape}")
                if fixation_dir is not None:
                    fix = metrics.read_fixations_csv(Path(fixation_dir) / f"{name}.csv")
                else:
                    fix = metrics.fixations_from_map(gt, fixation_percentile)
                scores = metrics.all_metrics(pred, gt, fix)
            except (ValueError, OSError, KeyError) as exc:
                report.errors.append({"sample": name, "error": str(exc)})
                continue
            last = labs[seg.last_frame]
            samples.append({"sample": name, "video": video, "frame": seg.last_frame,
                            "action": last.action, "context": last.context, **scores})
    report.samples = samples
    report.n_evaluated = len(samples)
    report.overall, report.per_action, report.per_context, report.nan_counts = aggregate(samples)
    return report


def synthetic_gaze_map(h: int, w: int, center_rc, sigma_px: float) -> np.ndarray:
    """Isotropic Gaussian blob scaled to peak 1, used for fixture ground truth."""
    r = np.arange(h)[:, None]
    c = np.arange(w)[None, :]
    g = np.exp(-((r - center_rc[0]) ** 2 + (c - center_rc[1]) ** 2) / (2.0 * sigma_px ** 2))
    return g / g.max()
