"""Sequence loading, normalization, noise, clips, annotations."""

from __future__ import annotations

import logging
import math

import numpy as np
import pytest

from tofvad import frameio
from tofvad.frameio import (Annotation, Category, Frame, FrameKind, InputMode,
                            Modality)


def _write_seq(directory, arrays, start=0):
    directory.mkdir(parents=True, exist_ok=True)
    for i, arr in enumerate(arrays, start=start):
        frameio.write_frame16(directory / f"{i:06d}.png", arr)


def _raw_frame(values, kind=FrameKind.DEPTH_RAW):
    values = np.asarray(values, dtype=np.float64)
    return Frame(values=values, validity=values > 0, kind=kind)


# --------------------------------------------------------------------------
# loading


def test_load_sequence_roundtrip(tmp_path, rng):
    arrays = [rng.integers(1, 4000, (16, 12)).astype(np.uint16) for _ in range(3)]
    _write_seq(tmp_path / "seq0", arrays)
    seq = frameio.load_sequence(tmp_path / "seq0", Modality.DEPTH)
    assert len(seq) == 3
    assert (seq.height, seq.width) == (16, 12)
    assert seq.kind is FrameKind.DEPTH_RAW
    assert seq.sequence_id == "seq0"
    for f, arr in zip(seq.frames, arrays):
        assert np.array_equal(f.values, arr.astype(np.float64))


def test_load_sequence_zero_pixels_are_invalid(tmp_path):
    arr = np.full((4, 4), 1000, dtype=np.uint16)
    arr[1, 2] = 0
    _write_seq(tmp_path / "s", [arr])
    seq = frameio.load_sequence(tmp_path / "s", "depth")
    assert not seq[0].validity[1, 2]
    assert seq[0].validity.sum() == 15


def test_load_sequence_gap_detection(tmp_path):
    d = tmp_path / "s"
    _write_seq(d, [np.ones((4, 4))] * 2)           # 000000, 000001
    frameio.write_frame16(d / "000003.png", np.ones((4, 4)))
    with pytest.raises(ValueError, match="gap at index 2"):
        frameio.load_sequence(d, "depth")


def test_load_sequence_inconsistent_size_names_file(tmp_path):
    d = tmp_path / "s"
    _write_seq(d, [np.ones((4, 4)), np.ones((5, 4))])
    with pytest.raises(ValueError, match="000001"):
        frameio.load_sequence(d, "depth")


def test_load_sequence_missing_directory(tmp_path):
    with pytest.raises(FileNotFoundError):
        frameio.load_sequence(tmp_path / "nope", "depth")


def test_load_sequence_ir_kind(tmp_path):
    _write_seq(tmp_path / "s", [np.ones((4, 4))])
    seq = frameio.load_sequence(tmp_path / "s", Modality.IR)
    assert seq.kind is FrameKind.IR_RAW


def test_write_frame16_is_16bit(tmp_path, rng):
    arr = rng.integers(0, 65536, (8, 8)).astype(np.uint16)
    frameio.write_frame16(tmp_path / "f.png", arr)
    back = frameio.read_frame16(tmp_path / "f.png")
    assert np.array_equal(back, arr.astype(np.float64))


# --------------------------------------------------------------------------
# normalization


def test_normalize_depth_reference_points():
    f = _raw_frame([[3500.0, 0.0], [5500.0, 7000.0]])
    top_down = frameio.normalize_depth(f, 3.5)
    assert top_down.values[0, 0] == 1.0
    assert top_down.values[0, 1] == 0.0      # invalid pixel
    assert top_down.values[1, 1] == 1.0      # clamped above the maximum
    tilted = frameio.normalize_depth(f, 11.0)
    assert tilted.values[1, 0] == 0.5
    assert tilted.kind is FrameKind.NORMALIZED


def test_normalize_depth_linear_and_monotone(rng):
    raw = np.sort(rng.integers(1, 3500, 256).astype(np.float64)).reshape(16, 16)
    out = frameio.normalize_depth(_raw_frame(raw), 3.5).values.reshape(-1)
    assert (np.diff(out) >= 0).all()
    expected = raw.reshape(-1) / 1000.0 / 3.5
    assert np.abs(out - expected).max() <= 1e-6


def test_normalize_depth_rejects_bad_inputs():
    f = _raw_frame([[1.0]])
    with pytest.raises(ValueError, match="positive"):
        frameio.normalize_depth(f, 0.0)
    with pytest.raises(ValueError, match="raw depth"):
        frameio.normalize_depth(frameio.normalize_depth(f, 3.5), 3.5)


def test_normalize_ir_formula_values():
    f = _raw_frame([[0.0, 65535.0, math.e - 1.0]], kind=FrameKind.IR_RAW)
    out = frameio.normalize_ir(f).values
    assert out[0, 0] == 0.0
    assert abs(out[0, 1] - math.log(65536.0) / 65535.0) <= 1e-9
    assert abs(out[0, 2] - 1.0 / 65535.0) <= 1e-9


def test_normalize_ir_full_scale_variant():
    f = _raw_frame([[65535.0]], kind=FrameKind.IR_RAW)
    out = frameio.normalize_ir(f, full_scale=True).values
    assert abs(out[0, 0] - 1.0) <= 1e-6


def test_normalize_ir_monotone():
    xs = np.array([[0.0, 1.0, 10.0, 1000.0, 65534.0, 65535.0]])
    f = Frame(values=xs, validity=np.ones_like(xs, dtype=bool), kind=FrameKind.IR_RAW)
    out = frameio.normalize_ir(f).values.ravel()
    assert (np.diff(out) > 0).all()


def test_normalize_ir_rejects_depth():
    with pytest.raises(ValueError, match="raw IR"):
        frameio.normalize_ir(_raw_frame([[1.0]]))


# --------------------------------------------------------------------------
# noise


def _norm_frame(values):
    values = np.asarray(values, dtype=np.float32)
    return Frame(values=values, validity=np.ones_like(values, dtype=bool),
                 kind=FrameKind.NORMALIZED)


def test_add_noise_zero_sigma_identity(rng):
    f = _norm_frame(rng.random((8, 8)))
    out = frameio.add_noise(f, 0.0, seed=1)
    assert np.array_equal(out.values, f.values)


def test_add_noise_deterministic(rng):
    f = _norm_frame(rng.random((8, 8)))
    a = frameio.add_noise(f, 0.01, seed=42)
    b = frameio.add_noise(f, 0.01, seed=42)
    c = frameio.add_noise(f, 0.01, seed=43)
    assert np.array_equal(a.values, b.values)
    assert not np.array_equal(a.values, c.values)


def test_add_noise_std_matches_sigma():
    f = _norm_frame(np.full((64, 64), 0.5))  # far from the clamp boundaries
    out = frameio.add_noise(f, 0.01, seed=7)
    delta = out.values.astype(np.float64) - 0.5
    assert abs(delta.std() - 0.01) <= 0.15 * 0.01


def test_add_noise_stays_in_range():
    f = _norm_frame(np.zeros((32, 32)))
    out = frameio.add_noise(f, 0.5, seed=3)
    assert out.values.min() >= 0.0 and out.values.max() <= 1.0


# --------------------------------------------------------------------------
# clips


def _depth_seq(n, h=4, w=4):
    frames = [_raw_frame(np.full((h, w), 1000.0 + t)) for t in range(n)]
    return frameio.FrameSequence(frames=frames, sequence_id="s")


def test_make_clips_prediction_targets():
    clips = frameio.make_clips(_depth_seq(10), InputMode.PREDICTION, clip_len=4)
    assert [c.target_index for c in clips] == list(range(4, 10))
    for c in clips:
        assert len(c.inputs) == 4
        assert c.inputs[-1].values[0, 0] == c.target.values[0, 0] - 1


def test_make_clips_reconstruction_one_per_frame():
    clips = frameio.make_clips(_depth_seq(10), "reconstruction")
    assert len(clips) == 10
    for i, c in enumerate(clips):
        assert c.target_index == i
        assert c.inputs[0] is c.target


def test_make_clips_too_short():
    with pytest.raises(ValueError, match="too short"):
        frameio.make_clips(_depth_seq(4), InputMode.PREDICTION, clip_len=4)


def test_make_clips_target_indices_unique_complete(rng):
    n = int(rng.integers(5, 40))
    clips = frameio.make_clips(_depth_seq(n), "prediction", clip_len=4)
    assert sorted(c.target_index for c in clips) == list(range(4, n))


# --------------------------------------------------------------------------
# annotations


def test_annotation_to_labels_span():
    a = Annotation("s", 3, 5, "falling", Category.MEDICAL_ISSUE)
    labels = a.to_labels(8)
    assert labels.tolist() == [0, 0, 0, 1, 1, 1, 0, 0]
    assert labels.sum() == 5 - 3 + 1


def test_annotation_normal_sequence():
    a = Annotation("s", -1, -1, "", Category.OTHER)
    assert a.is_normal
    assert a.to_labels(5).sum() == 0


def test_annotation_rejects_reversed_span():
    with pytest.raises(ValueError):
        Annotation("s", 7, 3, "x", Category.OTHER)


def test_load_annotations_basic(tmp_path):
    p = tmp_path / "ann.csv"
    p.write_text("A0405,120,310,arguing,aggressive\n"
                 "B0001,-1,-1,,normal\n")
    anns = frameio.load_annotations(p)
    assert anns[0].sequence_id == "A0405"
    assert anns[0].first_anomalous == 120
    assert anns[0].last_anomalous == 310
    assert anns[0].category is Category.AGGRESSIVE_BEHAVIOR
    assert anns[1].is_normal


def test_load_annotations_header_and_unknown_token(tmp_path, caplog):
    p = tmp_path / "ann.csv"
    p.write_text("sequence_id,first,last,anomaly_type,category\n"
                 "S1,2,4,thing,unknown_thing\n")
    with caplog.at_level(logging.WARNING, logger="tofvad.frameio"):
        anns = frameio.load_annotations(p)
    assert anns[0].category is Category.OTHER
    assert any("unknown_thing" in rec.message for rec in caplog.records)


def test_load_annotations_bad_span_names_row(tmp_path):
    p = tmp_path / "ann.csv"
    p.write_text("S1,9,2,thing,other\n")
    with pytest.raises(ValueError, match=":1"):
        frameio.load_annotations(p)


def test_load_annotations_category_map_takes_precedence(tmp_path):
    ann = tmp_path / "ann.csv"
    ann.write_text("S1,2,4,fall over,other\n")
    cmap = tmp_path / "categories.txt"
    cmap.write_text("# anomaly types\nfall over = medical\n")
    anns = frameio.load_annotations(ann, frameio.load_category_map(cmap))
    assert anns[0].category is Category.MEDICAL_ISSUE


def test_load_category_map_rejects_unknown_target(tmp_path):
    cmap = tmp_path / "categories.txt"
    cmap.write_text("x = not_a_category\n")
    with pytest.raises(ValueError, match="not_a_category"):
        frameio.load_category_map(cmap)


def test_normalized_frame_invariant_enforced():
    bad = np.array([[1.5]], dtype=np.float32)
    with pytest.raises(ValueError, match="outside"):
        Frame(values=bad, validity=np.ones((1, 1), dtype=bool), kind=FrameKind.NORMALIZED)
