import logging
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from gazemap.formats import write_pgm, write_tensor
from gazemap.harness import (FrameLabel, SegmentSpec, aggregate, evaluate_run, filter_segments, generate_segments,
                             read_labels_csv, split_of, synthetic_gaze_map, write_labels_csv)


@given(st.integers(16, 1000))
def test_segment_count_closed_form(L):
    segs = generate_segments(L)
    assert len(segs) == (L - 16) // 8 + 1
    assert all(s.last_frame < L for s in segs)
    assert [s.start_frame for s in segs] == list(range(0, 8 * len(segs), 8))


def test_hundred_frames_give_eleven_segments():
    segs = generate_segments(100)
    assert len(segs) == 11
    assert segs[-1].frames == range(80, 96)


def test_short_video_warns(caplog):
    with caplog.at_level(logging.WARNING):
        assert generate_segments(15, video_id="07") == []
    assert "shorter than one" in caplog.text


def test_segment_naming():
    assert SegmentSpec("05", 8).name == "05_23"


@given(st.integers(16, 200), st.sets(st.integers(0, 199), max_size=6))
def test_filter_matches_enumeration(L, flagged):
    labels = {f: FrameLabel(f, flags={"bad-gps"} if f in flagged else set()) for f in range(L)}
    kept, excluded = filter_segments(generate_segments(L), labels)
    expected = [s for s in range(0, L - 15, 8) if not any(f in flagged for f in range(s, s + 16))]
    assert [s.start_frame for s in kept] == expected
    assert len(kept) + len(excluded) == (L - 16) // 8 + 1


def test_filter_missing_label():
    with pytest.raises(KeyError):
        filter_segments(generate_segments(20), {f: FrameLabel(f) for f in range(10)})


def test_label_validation():
    with pytest.raises(ValueError):
        FrameLabel(0, action="Jump")
    with pytest.raises(ValueError):
        FrameLabel(0, intersection_type="Signalized")
    with pytest.raises(ValueError):
        FrameLabel(0, priority="RoW")
    with pytest.raises(ValueError):
        FrameLabel(0, flags={"sneezing"})
    assert FrameLabel(0, "Lat", "Roundabout", "Yield").context == "Roundabout/Yield"


def test_labels_csv_round_trip(tmp_path):
    labels = {0: FrameLabel(0), 1: FrameLabel(1, "Stop", "Signalized", "RoW", {"u-turn", "reversing"})}
    write_labels_csv(labels, tmp_path / "l.csv")
    assert read_labels_csv(tmp_path / "l.csv") == labels


def test_split_ranges():
    assert split_of(1) == "train" and split_of(34) == "train"
    assert split_of(35) == "val" and split_of(38) == "test" and split_of(74) == "test"
    with pytest.raises(KeyError):
        split_of(75)


def test_aggregate_by_hand():
    samples = [
        {"action": "Lat", "context": "Signalized/RoW", "KLD": 1.0, "CC": 0.5, "NSS": 2.0, "SIM": 0.4},
        {"action": "Lat", "context": None, "KLD": 3.0, "CC": math.nan, "NSS": 1.0, "SIM": 0.2},
        {"action": "None", "context": "Signalized/RoW", "KLD": 2.0, "CC": 0.1, "NSS": 0.0, "SIM": 0.3},
    ]
    overall, per_action, per_context, nan = aggregate(samples)
    assert overall["KLD"] == pytest.approx(2.0)
    assert overall["CC"] == pytest.approx(0.3)
    assert nan["CC"] == 1 and nan["KLD"] == 0
    assert per_action == {"Lat": {"KLD": 2.0, "count": 2}, "None": {"KLD": 2.0, "count": 1}}
    assert per_context == {"Signalized/RoW": {"KLD": 1.5, "count": 2}}


def _run_dir(tmp_path, L=48, flagged=(), corrupt=None, skip=None):
    labels = {f: FrameLabel(f, "Lat" if f >= 30 else "None", flags={"u-turn"} if f in flagged else set())
              for f in range(L)}
    pred, gt = tmp_path / "pred", tmp_path / "gt"
    pred.mkdir()
    gt.mkdir()
    rng = np.random.default_rng(0)
    for seg in generate_segments(L, video_id="03"):
        g = synthetic_gaze_map(32, 32, rng.uniform(8, 24, 2), 4.0)
        write_pgm(gt / f"{seg.name}.pgm", g)
        if seg.name != skip:
            p = g if seg.name != corrupt else np.zeros((16, 16))
            write_tensor(pred / f"{seg.name}.bin", p.astype(np.float32)[None])
    return pred, gt, {"03": labels}


def test_evaluate_run_perfect_predictions(tmp_path):
    pred, gt, labels = _run_dir(tmp_path, flagged={20})
    rep = evaluate_run(pred, gt, labels)
    # 5 clips over 48 frames; those covering frame 20 (starts 8 and 16) are excluded
    assert rep.n_evaluated == 3 and rep.n_excluded == 2
    assert [s["sample"] for s in rep.samples] == ["03_15", "03_39", "03_47"]
    assert rep.overall["KLD"] < 0.01 and rep.overall["CC"] > 0.99
    assert set(rep.per_action) == {"None", "Lat"}
    assert rep.to_dict()["counts"]["errors"] == 0


def test_evaluate_run_reports_missing_and_errors(tmp_path):
    pred, gt, labels = _run_dir(tmp_path, corrupt="03_23", skip="03_31")
    rep = evaluate_run(pred, gt, labels)
    assert [m["sample"] for m in rep.missing] == ["03_31"]
    assert [e["sample"] for e in rep.errors] == ["03_23"]
    assert rep.n_evaluated == 3


def test_evaluate_run_excludes_videos(tmp_path):
    pred, gt, labels = _run_dir(tmp_path)
    assert evaluate_run(pred, gt, labels, exclude_videos=["03"]).n_evaluated == 0
