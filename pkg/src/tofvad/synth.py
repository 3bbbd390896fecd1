"""Deterministic synthetic depth video with known anomalies.

Scenes are a static background field plus moving foreground actors
(rectangles / disks at fixed depths nearer than the background). Every
sequence opens with an empty warm-up stretch so the background model can
bootstrap, then the actors enter and move along reflecting paths. Per-pixel
Gaussian noise grows quadratically with depth — the same law the foreground
threshold assumes — and a sprinkle of border pixels drops out each frame the
way real time-of-flight edges do.

Three anomaly directives cover the interesting behaviours: an extra actor
at a depth never seen in training, a sudden speed-up of the existing actors,
and all actors freezing in place (a left-behind object, in effect). Each
render also returns the exact actor footprints (ground-truth masks) and the
per-frame anomaly labels, so detector output can be judged without any
manual annotation.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .frameio import Frame, FrameKind, FrameSequence, write_frame16
from .ioutil import atomic_write_text

WARMUP_FRAMES = 30      # every sequence starts with this many empty frames
NOISE_REF_MM = 2000.0   # depth at which noise_std_mm applies as-is


class AnomalyKind(enum.Enum):
    NONE = "none"
    SPEED_CHANGE = "speed_change"
    EXTRA_ACTOR = "extra_actor"
    ACTOR_STOPS = "actor_stops"

    @classmethod
    def coerce(cls, value: "AnomalyKind | str") -> "AnomalyKind":
        return value if isinstance(value, cls) else cls(str(value).lower())


@dataclass(frozen=True)
class Actor:
    """One moving foreground object.

    ``start`` is the centre (row, col) when the actor enters after warm-up;
    ``velocity`` is px/frame. With ``bounce`` the centre reflects off the
    band that keeps the whole footprint inside the image; without it, a
    path that would leave that band is a spec error.
    """

    shape: str                      # "rectangle" | "disk"
    depth_mm: float
    half_extent: int                # footprint radius in px
    start: tuple[float, float]
    velocity: tuple[float, float]
    bounce: bool = True

    def __post_init__(self):
        if self.shape not in ("rectangle", "disk"):
            raise ValueError(f"unknown actor shape {self.shape!r}")
        if self.half_extent < 1:
            raise ValueError(f"actor half_extent must be >= 1, got {self.half_extent}")
        if not self.depth_mm > 0:
            raise ValueError(f"actor depth must be positive, got {self.depth_mm}")


@dataclass(frozen=True)
class SceneSpec:
    width: int = 64
    height: int = 64
    frames: int = 150
    background_mm: float = 2500.0
    background_tilt_mm: float = 0.0   # added linearly top row -> bottom row
    actors: tuple[Actor, ...] = ()
    anomaly: AnomalyKind = AnomalyKind.NONE
    onset: int = 0                    # first anomalous frame (absolute index)
    extra_actor: Actor | None = None
    speed_factor: float = 4.0
    invalid_edge_prob: float = 0.02   # per border pixel per frame
    noise_std_mm: float = 0.8         # at NOISE_REF_MM, scaled by (z/ref)^2
    seed: int = 0

    def __post_init__(self):
        if self.width < 8 or self.height < 8:
            raise ValueError(f"scene too small: {self.width}x{self.height}")
        if self.frames <= WARMUP_FRAMES:
            raise ValueError(f"need more than {WARMUP_FRAMES} frames, "
                             f"got {self.frames}")
        if self.anomaly is not AnomalyKind.NONE:
            if not WARMUP_FRAMES <= self.onset < self.frames:
                raise ValueError(f"anomaly onset {self.onset} outside "
                                 f"[{WARMUP_FRAMES}, {self.frames})")
        if self.anomaly is AnomalyKind.EXTRA_ACTOR and self.extra_actor is None:
            raise ValueError("extra_actor anomaly needs an extra_actor")
        bg_min = self.background_mm - abs(self.background_tilt_mm)
        cast = list(self.actors)
        if self.extra_actor is not None:
            cast.append(self.extra_actor)
        for i, a in enumerate(cast):
            if a.depth_mm >= bg_min:
                raise ValueError(f"actor {i} depth {a.depth_mm} is not in front "
                                 f"of the background (min {bg_min})")
            if 2 * a.half_extent + 1 > min(self.width, self.height):
                raise ValueError(f"actor {i} does not fit in the scene")

    def background_field(self) -> np.ndarray:
        rows = np.arange(self.height, dtype=np.float64)[:, None]
        tilt = self.background_tilt_mm * rows / max(self.height - 1, 1)
        return np.broadcast_to(self.background_mm + tilt,
                               (self.height, self.width)).copy()


class _ActorState:
    def __init__(self, actor: Actor, spec: SceneSpec):
        self.actor = actor
        self.pos = np.array(actor.start, dtype=np.float64)
        self.vel = np.array(actor.velocity, dtype=np.float64)
        e = actor.half_extent
        self.lo = np.array([e, e], dtype=np.float64)
        self.hi = np.array([spec.height - 1 - e, spec.width - 1 - e],
                           dtype=np.float64)
        if np.any(self.lo > self.hi):
            raise ValueError("actor does not fit in the scene")

    def check_inside(self, t: int) -> None:
        if np.any(self.pos < self.lo) or np.any(self.pos > self.hi):
            raise ValueError(f"actor leaves image bounds at frame {t}")

    def advance(self, speed_scale: float) -> None:
        self.pos += self.vel * speed_scale
        if not self.actor.bounce:
            return
        for k in range(2):
            # reflect until inside (velocities are small vs the band)
            while self.pos[k] < self.lo[k] or self.pos[k] > self.hi[k]:
                if self.pos[k] < self.lo[k]:
                    self.pos[k] = 2 * self.lo[k] - self.pos[k]
                else:
                    self.pos[k] = 2 * self.hi[k] - self.pos[k]
                self.vel[k] = -self.vel[k]

    def footprint(self, height: int, width: int) -> np.ndarray:
        r, c = np.rint(self.pos).astype(int)
        e = self.actor.half_extent
        mask = np.zeros((height, width), dtype=bool)
        r0, r1 = max(r - e, 0), min(r + e, height - 1)
        c0, c1 = max(c - e, 0), min(c + e, width - 1)
        if self.actor.shape == "rectangle":
            mask[r0:r1 + 1, c0:c1 + 1] = True
        else:
            rr = np.arange(height)[:, None] - r
            cc = np.arange(width)[None, :] - c
            mask[rr * rr + cc * cc <= e * e] = True
        return mask


def render(spec: SceneSpec) -> tuple[FrameSequence, np.ndarray, np.ndarray]:
    """Render a scene: (raw depth sequence, (N,H,W) truth footprints,
    (N,) anomaly labels). Bit-identical for the same spec."""
    rng = np.random.default_rng(spec.seed)
    bg = spec.background_field()
    h, w = spec.height, spec.width

    states = [_ActorState(a, spec) for a in spec.actors]
    extra = (_ActorState(spec.extra_actor, spec)
             if spec.extra_actor is not None else None)

    border = np.zeros((h, w), dtype=bool)
    border[0, :] = border[-1, :] = True
    border[:, 0] = border[:, -1] = True
    n_border = int(border.sum())

    frames: list[Frame] = []
    truth = np.zeros((spec.frames, h, w), dtype=np.uint8)
    labels = np.zeros(spec.frames, dtype=np.uint8)

    for t in range(spec.frames):
        anomalous = (spec.anomaly is not AnomalyKind.NONE and t >= spec.onset)
        labels[t] = 1 if anomalous else 0
        z = bg.copy()
        if t >= WARMUP_FRAMES:
            active = list(states)
            if extra is not None and anomalous:
                active.append(extra)
            for st in active:
                st.check_inside(t)
                fp = st.footprint(h, w)
                z = np.where(fp, np.minimum(z, st.actor.depth_mm), z)
                truth[t][fp] = 1
            # move everyone for the next frame
            frozen = (spec.anomaly is AnomalyKind.ACTOR_STOPS and anomalous)
            scale = (spec.speed_factor
                     if spec.anomaly is AnomalyKind.SPEED_CHANGE and anomalous
                     else 1.0)
            if not frozen:
                for st in states:
                    st.advance(scale)
            if extra is not None and anomalous and not frozen:
                extra.advance(1.0)

        sigma = spec.noise_std_mm * (z / NOISE_REF_MM) ** 2
        z = z + rng.normal(0.0, 1.0, size=z.shape) * sigma
        values = np.clip(np.rint(z), 1, 65535)
        dropped = border & (rng.random((h, w)) < spec.invalid_edge_prob)
        assert dropped.sum() <= n_border
        values[dropped] = 0
        frames.append(Frame(values=values, validity=values > 0,
                            kind=FrameKind.DEPTH_RAW))

    seq = FrameSequence(frames=frames, sequence_id=f"scene{spec.seed:04d}")
    return seq, truth, labels


# --------------------------------------------------------------------------
# corpus generation (drop-in dataset trees)


@dataclass(frozen=True)
class CorpusSpec:
    width: int = 64
    height: int = 64
    frames: int = 150
    train_sequences: int = 20
    test_normal: int = 10
    test_anomalous: int = 10
    seed: int = 7

    def __post_init__(self):
        if self.frames <= WARMUP_FRAMES:
            raise ValueError(f"need more than {WARMUP_FRAMES} frames, "
                             f"got {self.frames}")
        for name in ("train_sequences", "test_normal", "test_anomalous"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")


_CORPUS_FIELDS = {
    "width": int, "height": int, "frames": int, "train_sequences": int,
    "test_normal": int, "test_anomalous": int, "seed": int,
}


def corpus_spec_to_text(spec: CorpusSpec) -> str:
    return "".join(f"{k} = {getattr(spec, k)}\n" for k in _CORPUS_FIELDS)


def corpus_spec_from_text(text: str, where: str = "<spec>") -> CorpusSpec:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{where}:{lineno}: expected 'key = value'")
        key, _, val = line.partition("=")
        key, val = key.strip(), val.strip()
        if key not in _CORPUS_FIELDS:
            raise ValueError(f"{where}:{lineno}: unknown key {key!r}")
        try:
            values[key] = _CORPUS_FIELDS[key](val)
        except ValueError:
            raise ValueError(f"{where}:{lineno}: key {key!r} expects an "
                             f"integer, got {val!r}") from None
    return CorpusSpec(**values)


def load_corpus_spec(path: str | Path) -> CorpusSpec:
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"corpus spec not found: {p}")
    return corpus_spec_from_text(p.read_text(encoding="utf-8"), where=str(p))


# how anomaly kinds map to annotation categories
_ANOMALY_CATEGORY = {
    AnomalyKind.EXTRA_ACTOR: "other",
    AnomalyKind.SPEED_CHANGE: "aggressive_behavior",
    AnomalyKind.ACTOR_STOPS: "left_behind_object",
}

# the fixed mix of anomalous test sequences, cycled
_ANOMALY_MIX = (
    AnomalyKind.EXTRA_ACTOR, AnomalyKind.EXTRA_ACTOR, AnomalyKind.SPEED_CHANGE,
    AnomalyKind.EXTRA_ACTOR, AnomalyKind.ACTOR_STOPS, AnomalyKind.EXTRA_ACTOR,
    AnomalyKind.SPEED_CHANGE, AnomalyKind.EXTRA_ACTOR, AnomalyKind.EXTRA_ACTOR,
    AnomalyKind.ACTOR_STOPS,
)


def _random_actor(rng: np.random.Generator, spec: CorpusSpec) -> Actor:
    e = int(rng.integers(2, 5))
    lo_r, hi_r = e, spec.height - 1 - e
    lo_c, hi_c = e, spec.width - 1 - e
    speed = rng.uniform(0.6, 1.4)
    angle = rng.uniform(0.0, 2.0 * np.pi)
    return Actor(
        shape="rectangle" if rng.random() < 0.5 else "disk",
        depth_mm=float(rng.uniform(1300.0, 1900.0)),
        half_extent=e,
        start=(float(rng.uniform(lo_r, hi_r)), float(rng.uniform(lo_c, hi_c))),
        velocity=(float(speed * np.sin(angle)), float(speed * np.cos(angle))),
    )


def _intruder(rng: np.random.Generator, spec: CorpusSpec) -> Actor:
    """The extra actor: nearer than anything in training, and fast."""
    e = int(rng.integers(3, 6))
    speed = rng.uniform(2.2, 3.2)
    angle = rng.uniform(0.0, 2.0 * np.pi)
    return Actor(
        shape="disk",
        depth_mm=float(rng.uniform(850.0, 1000.0)),
        half_extent=e,
        start=(spec.height / 2.0, spec.width / 2.0),
        velocity=(float(speed * np.sin(angle)), float(speed * np.cos(angle))),
    )


def _scene(rng: np.random.Generator, spec: CorpusSpec,
           anomaly: AnomalyKind) -> SceneSpec:
    n_actors = int(rng.integers(1, 3))
    actors = tuple(_random_actor(rng, spec) for _ in range(n_actors))
    onset = 0
    extra = None
    if anomaly is not AnomalyKind.NONE:
        # aim for the middle fifth, but never inside the warm-up stretch
        lo = max(spec.frames * 2 // 5, WARMUP_FRAMES)
        hi = max(spec.frames * 3 // 5, lo + 1)
        onset = int(rng.integers(lo, hi))
        if anomaly is AnomalyKind.EXTRA_ACTOR:
            extra = _intruder(rng, spec)
    return SceneSpec(
        width=spec.width, height=spec.height, frames=spec.frames,
        background_mm=float(rng.uniform(2400.0, 2600.0)),
        background_tilt_mm=float(rng.uniform(-60.0, 60.0)),
        actors=actors, anomaly=anomaly, onset=onset, extra_actor=extra,
        speed_factor=4.0, seed=int(rng.integers(0, 2 ** 31 - 1)),
    )


def write_sequence_dir(seq: FrameSequence, out_dir: str | Path) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for t, frame in enumerate(seq.frames):
        write_frame16(out / f"{t:06d}.png", frame.values)
    return out


def _write_truth(masks: np.ndarray, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    for t, m in enumerate(masks):
        write_frame16(out_dir / f"{t:06d}.png", m.astype(np.float64) * 65535.0)


@dataclass
class CorpusPaths:
    root: Path
    train_dir: Path
    test_dir: Path
    truth_dir: Path
    annotations: Path


def make_corpus(spec: CorpusSpec, out_dir: str | Path) -> CorpusPaths:
    """Write a complete dataset tree: train/, test/, truth/ (test-sequence
    ground-truth footprints), and annotations.csv covering the test split."""
    root = Path(out_dir)
    train_dir, test_dir, truth_dir = root / "train", root / "test", root / "truth"
    rng = np.random.default_rng(spec.seed)

    for i in range(spec.train_sequences):
        scene = _scene(rng, spec, AnomalyKind.NONE)
        seq, _, _ = render(scene)
        seq.sequence_id = f"train{i:03d}"
        write_sequence_dir(seq, train_dir / seq.sequence_id)

    rows = ["sequence_id,first_anomalous,last_anomalous,anomaly_type,category"]
    for i in range(spec.test_normal):
        scene = _scene(rng, spec, AnomalyKind.NONE)
        seq, truth, _ = render(scene)
        seq.sequence_id = f"test_n{i:03d}"
        write_sequence_dir(seq, test_dir / seq.sequence_id)
        _write_truth(truth, truth_dir / seq.sequence_id)
        rows.append(f"{seq.sequence_id},-1,-1,none,normal")

    for i in range(spec.test_anomalous):
        kind = _ANOMALY_MIX[i % len(_ANOMALY_MIX)]
        scene = _scene(rng, spec, kind)
        seq, truth, labels = render(scene)
        seq.sequence_id = f"test_a{i:03d}"
        write_sequence_dir(seq, test_dir / seq.sequence_id)
        _write_truth(truth, truth_dir / seq.sequence_id)
        first = int(np.argmax(labels))
        last = int(len(labels) - 1)
        rows.append(f"{seq.sequence_id},{first},{last},{kind.value},"
                    f"{_ANOMALY_CATEGORY[kind]}")

    annotations = root / "annotations.csv"
    atomic_write_text(annotations, "\n".join(rows) + "\n")
    return CorpusPaths(root=root, train_dir=train_dir, test_dir=test_dir,
                       truth_dir=truth_dir, annotations=annotations)
