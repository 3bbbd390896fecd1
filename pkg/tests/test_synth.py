"""Synthetic scene rendering, anomaly directives, and corpus trees."""

from __future__ import annotations

import hashlib

import numpy as np
import pytest

from tofvad.fgmask import MaskParams, mask_sequence
from tofvad.frameio import load_annotations, load_sequence
from tofvad.synth import (
    WARMUP_FRAMES,
    Actor,
    AnomalyKind,
    CorpusSpec,
    SceneSpec,
    corpus_spec_from_text,
    corpus_spec_to_text,
    load_corpus_spec,
    make_corpus,
    render,
)


def _actor(**kw):
    kw.setdefault("shape", "disk")
    kw.setdefault("depth_mm", 1500.0)
    kw.setdefault("half_extent", 3)
    kw.setdefault("start", (20.0, 20.0))
    kw.setdefault("velocity", (0.8, -0.5))
    return Actor(**kw)


def _spec(**kw):
    kw.setdefault("width", 40)
    kw.setdefault("height", 40)
    kw.setdefault("frames", 60)
    kw.setdefault("seed", 11)
    return SceneSpec(**kw)


# --------------------------------------------------------------------------
# rendering


def test_same_spec_renders_bit_identically():
    spec = _spec(actors=(_actor(),), anomaly=AnomalyKind.SPEED_CHANGE, onset=45)
    seq_a, truth_a, labels_a = render(spec)
    seq_b, truth_b, labels_b = render(spec)
    assert np.array_equal(truth_a, truth_b)
    assert np.array_equal(labels_a, labels_b)
    for fa, fb in zip(seq_a.frames, seq_b.frames):
        assert np.array_equal(fa.values, fb.values)
        assert np.array_equal(fa.validity, fb.validity)


def test_empty_scene_is_background_plus_noise():
    spec = _spec(background_mm=2500.0)
    seq, truth, labels = render(spec)
    assert not truth.any()
    assert not labels.any()
    for frame in seq.frames:
        valid = frame.values[frame.validity]
        # sensor noise at 2.5 m is ~1.3 mm; 10 mm bounds it generously
        assert np.abs(valid - 2500.0).max() < 10.0
        # dropouts only ever hit the frame border
        assert frame.validity[1:-1, 1:-1].all()


def test_actors_enter_only_after_warmup():
    seq, truth, _ = render(_spec(actors=(_actor(),)))
    assert not truth[:WARMUP_FRAMES].any()
    assert truth[WARMUP_FRAMES].any()
    near = seq.frames[WARMUP_FRAMES].values[truth[WARMUP_FRAMES] == 1]
    assert np.median(near) < 1600.0  # actor depth, not background


def test_moving_actor_without_anomaly_has_no_anomalous_labels():
    _, _, labels = render(_spec(actors=(_actor(),)))
    assert not labels.any()


def test_extra_actor_labels_span_onset_to_end():
    spec = _spec(frames=120, actors=(_actor(),), anomaly=AnomalyKind.EXTRA_ACTOR,
                 onset=60, extra_actor=_actor(depth_mm=900.0, start=(10.0, 10.0)))
    _, _, labels = render(spec)
    assert np.array_equal(np.flatnonzero(labels), np.arange(60, 120))


def test_actor_stops_freezes_the_footprint():
    spec = _spec(frames=90, actors=(_actor(),), anomaly=AnomalyKind.ACTOR_STOPS,
                 onset=60)
    _, truth, labels = render(spec)
    assert labels[59] == 0 and labels[60] == 1
    for t in range(61, 90):
        assert np.array_equal(truth[t], truth[60])


def test_speed_change_moves_actors_faster():
    spec = _spec(frames=80, actors=(_actor(velocity=(0.5, 0.0)),),
                 anomaly=AnomalyKind.SPEED_CHANGE, onset=50, speed_factor=4.0)
    _, truth, _ = render(spec)

    def centroid(t):
        rows, cols = np.nonzero(truth[t])
        return np.array([rows.mean(), cols.mean()])

    def path_length(t0, t1):
        return sum(np.linalg.norm(centroid(t + 1) - centroid(t))
                   for t in range(t0, t1))

    slow = path_length(44, 49)
    fast = path_length(52, 57)
    assert fast > 2.0 * slow


def test_non_bouncing_actor_leaving_bounds_is_an_error():
    spec = _spec(actors=(_actor(start=(36.0, 20.0), velocity=(1.5, 0.0),
                                bounce=False),))
    with pytest.raises(ValueError, match="leaves image bounds"):
        render(spec)


def test_bouncing_actor_stays_inside():
    spec = _spec(frames=150, actors=(_actor(start=(30.0, 30.0),
                                            velocity=(2.1, 1.7)),))
    _, truth, _ = render(spec)  # would raise if the path escaped
    assert truth[WARMUP_FRAMES:].any(axis=(1, 2)).all()


# --------------------------------------------------------------------------
# spec validation


def test_scene_rejects_actor_behind_background():
    with pytest.raises(ValueError, match="not in front of the background"):
        _spec(actors=(_actor(depth_mm=2600.0),))


def test_scene_rejects_onset_in_warmup():
    with pytest.raises(ValueError, match="onset"):
        _spec(actors=(_actor(),), anomaly=AnomalyKind.SPEED_CHANGE, onset=10)


def test_scene_rejects_missing_extra_actor():
    with pytest.raises(ValueError, match="needs an extra_actor"):
        _spec(actors=(_actor(),), anomaly=AnomalyKind.EXTRA_ACTOR, onset=40)


def test_scene_rejects_too_few_frames():
    with pytest.raises(ValueError, match="need more than"):
        _spec(frames=WARMUP_FRAMES)


def test_actor_validates_its_fields():
    with pytest.raises(ValueError, match="unknown actor shape"):
        _actor(shape="triangle")
    with pytest.raises(ValueError, match="half_extent"):
        _actor(half_extent=0)


# --------------------------------------------------------------------------
# generator/detector consistency


def test_foreground_masks_find_the_rendered_actors():
    seq, truth, _ = render(_spec(frames=80, actors=(_actor(),), seed=3))
    masks = mask_sequence(seq, MaskParams(), smoothed=False)
    ious = []
    for t in range(WARMUP_FRAMES + 5, len(seq)):
        got = masks[t] > 0
        want = truth[t] > 0
        union = np.logical_or(got, want).sum()
        if union:
            ious.append(np.logical_and(got, want).sum() / union)
    assert np.mean(ious) >= 0.7


# --------------------------------------------------------------------------
# corpus trees


def _tiny_corpus_spec(**kw):
    kw.setdefault("width", 24)
    kw.setdefault("height", 24)
    kw.setdefault("frames", 40)
    kw.setdefault("train_sequences", 2)
    kw.setdefault("test_normal", 1)
    kw.setdefault("test_anomalous", 2)
    kw.setdefault("seed", 5)
    return CorpusSpec(**kw)


def test_corpus_tree_is_a_loadable_dataset(tmp_path):
    spec = _tiny_corpus_spec()
    paths = make_corpus(spec, tmp_path / "corpus")
    train_dirs = sorted(paths.train_dir.iterdir())
    test_dirs = sorted(paths.test_dir.iterdir())
    assert [d.name for d in train_dirs] == ["train000", "train001"]
    assert [d.name for d in test_dirs] == ["test_n000", "test_a000", "test_a001"] \
        or [d.name for d in test_dirs] == ["test_a000", "test_a001", "test_n000"]

    anns = {a.sequence_id: a for a in load_annotations(paths.annotations)}
    assert set(anns) == {"test_n000", "test_a000", "test_a001"}
    assert anns["test_n000"].is_normal
    for d in test_dirs:
        seq = load_sequence(d, "depth")
        assert len(seq) == spec.frames
        assert (seq.height, seq.width) == (spec.height, spec.width)
        truth = load_sequence(paths.truth_dir / d.name, "depth")
        assert len(truth) == spec.frames
    for ann in anns.values():
        if not ann.is_normal:
            assert WARMUP_FRAMES <= ann.first_anomalous < spec.frames
            assert ann.last_anomalous == spec.frames - 1


def test_corpus_generation_is_bit_reproducible(tmp_path):
    spec = _tiny_corpus_spec()

    def tree_digest(root):
        h = hashlib.sha256()
        for p in sorted(root.rglob("*")):
            if p.is_file():
                h.update(str(p.relative_to(root)).encode())
                h.update(p.read_bytes())
        return h.hexdigest()

    a = make_corpus(spec, tmp_path / "a")
    b = make_corpus(spec, tmp_path / "b")
    assert tree_digest(a.root) == tree_digest(b.root)


def test_corpus_spec_text_round_trip():
    spec = _tiny_corpus_spec()
    assert corpus_spec_from_text(corpus_spec_to_text(spec)) == spec


def test_corpus_spec_rejects_unknown_and_untyped_keys():
    with pytest.raises(ValueError, match="unknown key 'depth'"):
        corpus_spec_from_text("depth = 3\n")
    with pytest.raises(ValueError, match="expects an integer"):
        corpus_spec_from_text("frames = many\n")


def test_corpus_spec_validates_counts():
    with pytest.raises(ValueError, match="must be >= 0"):
        CorpusSpec(train_sequences=-1)
    with pytest.raises(ValueError, match="need more than"):
        CorpusSpec(frames=10)


def test_load_corpus_spec_from_file(tmp_path):
    spec = _tiny_corpus_spec()
    path = tmp_path / "corpus.spec"
    path.write_text(corpus_spec_to_text(spec) + "# trailing comment\n")
    assert load_corpus_spec(path) == spec
    with pytest.raises(FileNotFoundError):
        load_corpus_spec(tmp_path / "missing.spec")
