"""Training, scoring, and evaluation.

Training runs a seeded, shuffled pass over every clip of every training
sequence (one clip per optimizer step), feeding noised inputs against clean
targets, with per-sequence foreground masks folded into the loss where the
objective calls for them.

Scoring replays a sequence in time order — the background model sees frames
strictly causally — and emits one loss value per scorable frame (the first
``clip_len`` frames of every sequence are skipped for all model families so
that reconstruction and prediction scores cover identical frames).

Evaluation pools scores across sequences into an overall frame-level
ROC-AUC, adds per-category AUCs over each category's own sequences, and
carries both raw and smoothed numbers side by side.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autograd as ag
from . import checkpoint, nn
from .config import RunConfig, config_to_text
from .fgmask import cached_mask_sequence
from .frameio import (
    Annotation,
    Category,
    FrameKind,
    FrameSequence,
    InputMode,
    Modality,
    add_noise,
    make_clips,
    normalize_depth,
    normalize_ir,
)
from .ioutil import atomic_write_text
from .losses import FOREGROUND_WEIGHT, LossKind
from .models import Model, build_model, clip_to_input

CHECKPOINT_FORMAT = "tofvad-model"

# frames scored per forward pass when the architecture allows batching; the
# value only trades memory against speed, scores are identical for any choice
# (small chunks keep the layer intermediates cache-resident)
SCORE_CHUNK = 2


# --------------------------------------------------------------------------
# data plumbing


@dataclass
class SequenceData:
    """One sequence as the run sees it: the scored modality plus the depth
    stream the foreground masks are derived from (the same object for depth
    runs, a paired recording for IR runs)."""

    frames: FrameSequence
    depth_frames: FrameSequence | None = None

    @property
    def sequence_id(self) -> str:
        return self.frames.sequence_id

    def mask_source(self) -> FrameSequence:
        if self.depth_frames is not None:
            return self.depth_frames
        if self.frames.kind is FrameKind.DEPTH_RAW:
            return self.frames
        raise ValueError(f"sequence {self.sequence_id!r}: foreground masks need "
                         f"a depth stream, but none was provided for this "
                         f"{self.frames.kind.value} sequence")


def normalize_sequence(seq: FrameSequence, cfg: RunConfig) -> FrameSequence:
    if cfg.modality_kind is Modality.DEPTH:
        frames = [normalize_depth(f, cfg.max_depth_m) for f in seq.frames]
    else:
        frames = [normalize_ir(f, cfg.ir_full_scale) for f in seq.frames]
    return FrameSequence(frames=frames, sequence_id=seq.sequence_id)


def _sequence_masks(data: SequenceData, cfg: RunConfig) -> np.ndarray:
    cache = cfg.mask_cache_dir or None
    return cached_mask_sequence(data.mask_source(), cfg.mask, cache)


def _check_uniform_dims(sequences: list[SequenceData]) -> tuple[int, int]:
    h, w = sequences[0].frames.height, sequences[0].frames.width
    for d in sequences[1:]:
        if (d.frames.height, d.frames.width) != (h, w):
            raise ValueError(
                f"sequences of differing dimensions in one run: "
                f"{d.sequence_id!r} is {d.frames.width}x{d.frames.height}, "
                f"expected {w}x{h}")
    return h, w


# --------------------------------------------------------------------------
# training


def train(cfg: RunConfig, sequences: list[SequenceData]) -> Model:
    """One (or more) seeded passes over all clips; returns the fitted model
    with its per-step loss curve attached as ``model.loss_history``."""
    if not sequences:
        raise ValueError("empty training set")
    h, w = _check_uniform_dims(sequences)
    loss_kind = cfg.loss_kind
    model = build_model(cfg.model, h, w, seed=cfg.seed)

    prepared = []  # (normalized clips, masks or None)
    for d in sequences:
        norm = normalize_sequence(d.frames, cfg)
        clips = make_clips(norm, model.input_mode, cfg.clip_len)
        masks = _sequence_masks(d, cfg) if loss_kind.uses_mask else None
        prepared.append((clips, masks))

    flat = [(si, clip) for si, (clips, _) in enumerate(prepared) for clip in clips]
    opt = nn.Adam(model.parameters(), lr=cfg.lr)
    rng = np.random.default_rng(cfg.seed)
    history: list[float] = []
    for _epoch in range(cfg.epochs):
        order = rng.permutation(len(flat))
        noise_seeds = rng.integers(0, 2 ** 31 - 1,
                                   size=(len(flat), model.clip_len))
        for step, j in enumerate(order):
            si, clip = flat[int(j)]
            inputs = [add_noise(f, cfg.noise_sigma, int(noise_seeds[step, i]))
                      for i, f in enumerate(clip.inputs)]
            x = clip_to_input([f.values for f in inputs])
            target = clip.target.values[None, None, :, :]
            masks = prepared[si][1]
            mask = masks[clip.target_index] if masks is not None else None
            loss = loss_kind.compute(model(x), target, mask)
            history.append(loss.item())
            ag.backward(loss)
            opt.step()
            opt.zero_grad()
    model.loss_history = history
    return model


# --------------------------------------------------------------------------
# scoring


@dataclass
class ScoreSeries:
    """Per-frame anomaly scores of one sequence at strictly increasing
    frame indices (the first clip_len frames are never scored)."""

    sequence_id: str
    indices: np.ndarray
    scores: np.ndarray

    def __post_init__(self):
        self.indices = np.asarray(self.indices, dtype=np.int64)
        self.scores = np.asarray(self.scores, dtype=np.float64)
        if self.indices.shape != self.scores.shape or self.indices.ndim != 1:
            raise ValueError("indices and scores must be parallel 1-D arrays")
        if self.indices.size and np.any(np.diff(self.indices) <= 0):
            raise ValueError("score indices must be strictly increasing")
        if self.scores.size and float(self.scores.min()) < 0:
            raise ValueError("scores must be non-negative")

    def __len__(self) -> int:
        return int(self.indices.size)


def _frame_scores_batched(kind: LossKind, pred: np.ndarray, target: np.ndarray,
                          masks: np.ndarray | None) -> np.ndarray:
    """Per-frame loss values for a (B, 1, H, W) batch.

    Applies the same operations in the same order and dtypes as the scalar
    loss functions do for a single frame, so each entry is bit-identical to
    scoring that frame on its own.
    """
    b = pred.shape[0]
    npix = pred[0].size
    d = pred - target
    dd = d * d
    mse_b = dd.reshape(b, -1).sum(axis=1) * np.asarray(1.0 / npix, dtype=dd.dtype)
    if kind is LossKind.MSE:
        return mse_b.astype(np.float64)
    m = np.asarray(masks)
    if m.dtype not in (np.float32, np.float64):
        m = m.astype(np.float64)
    md = m.reshape(dd.shape) * dd
    f_b = md.reshape(b, -1).sum(axis=1) * np.asarray(1.0 / npix, dtype=md.dtype)
    if kind is LossKind.F_MSE:
        return f_b.astype(np.float64)
    w_b = mse_b + f_b * np.asarray(FOREGROUND_WEIGHT, dtype=f_b.dtype)
    return w_b.astype(np.float64)


def score_sequence(model: Model, data: SequenceData, cfg: RunConfig) -> ScoreSeries:
    if model.kind is not cfg.model_kind:
        raise ValueError(f"model/config mismatch: model is {model.kind.value!r}, "
                         f"config says {cfg.model!r}")
    seq = data.frames
    if (seq.height, seq.width) != (model.height, model.width):
        raise ValueError(f"sequence {data.sequence_id!r} is "
                         f"{seq.width}x{seq.height}, model expects "
                         f"{model.width}x{model.height}")
    if model.input_mode is InputMode.PREDICTION and cfg.clip_len != model.clip_len:
        raise ValueError(f"model/config mismatch: {model.kind.value} consumes "
                         f"{model.clip_len} frames per clip, config says "
                         f"{cfg.clip_len}")
    skip = cfg.clip_len
    n = len(seq)
    if n < skip + 1:
        raise ValueError(f"sequence {data.sequence_id!r} too short to score: "
                         f"{n} frames, need at least {skip + 1}")

    loss_kind = cfg.loss_kind
    masks = _sequence_masks(data, cfg) if loss_kind.uses_mask else None
    norm = normalize_sequence(seq, cfg)

    indices = np.arange(skip, n, dtype=np.int64)
    scores = np.empty(indices.size, dtype=np.float64)
    with ag.no_grad():
        if model.batch_flexible:
            for start in range(0, indices.size, SCORE_CHUNK):
                ts = [int(t) for t in indices[start:start + SCORE_CHUNK]]
                if model.input_mode is InputMode.PREDICTION:
                    clips = [[norm[i].values for i in range(t - model.clip_len, t)]
                             for t in ts]
                else:
                    clips = [[norm[t].values] for t in ts]
                x = ag.Tensor(np.ascontiguousarray(np.asarray(clips), dtype=np.float32))
                y = model(x).data
                targets = np.asarray([norm[t].values for t in ts],
                                     dtype=np.float32)[:, None, :, :]
                chunk_masks = masks[ts] if masks is not None else None
                scores[start:start + len(ts)] = _frame_scores_batched(
                    loss_kind, y, targets, chunk_masks)
        else:
            for pos, t in enumerate(indices):
                t = int(t)
                if model.input_mode is InputMode.PREDICTION:
                    frames = [norm[i].values for i in range(t - model.clip_len, t)]
                else:
                    frames = [norm[t].values]
                x = clip_to_input(frames)
                target = norm[t].values[None, None, :, :]
                mask = masks[t] if masks is not None else None
                scores[pos] = loss_kind.compute(model(x), target, mask).item()
    return ScoreSeries(sequence_id=data.sequence_id, indices=indices, scores=scores)


def smooth_scores(series: ScoreSeries, window: int = 10) -> ScoreSeries:
    """Trailing moving average over the scorable entries: each value becomes
    the mean of the up-to-`window` most recent scores (indices unchanged)."""
    if window < 1:
        raise ValueError(f"window must be >= 1, got {window}")
    s = series.scores
    out = np.empty_like(s)
    for i in range(s.size):
        out[i] = np.mean(s[max(0, i - window + 1):i + 1])
    return ScoreSeries(sequence_id=series.sequence_id,
                       indices=series.indices.copy(), scores=out)


# --------------------------------------------------------------------------
# metrics


def auc_roc(scores, labels) -> float:
    """Frame-level ROC-AUC in percent: the probability that a random
    anomalous frame outscores a random normal frame, ties counted half.
    Computed from tie-averaged ranks after one sort."""
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel()
    if s.size != y.size:
        raise ValueError(f"{s.size} scores vs {y.size} labels")
    if s.size == 0:
        raise ValueError("no frames to evaluate")
    if not np.isin(y, (0, 1)).all():
        raise ValueError("labels must be 0 (normal) or 1 (anomalous)")
    pos = int(np.sum(y == 1))
    neg = int(np.sum(y == 0))
    if pos == 0 or neg == 0:
        raise ValueError("labels contain only one class; AUC is undefined")

    order = np.argsort(s, kind="stable")
    ranks = np.empty(s.size, dtype=np.float64)
    sorted_s = s[order]
    i = 0
    while i < s.size:
        j = i
        while j + 1 < s.size and sorted_s[j + 1] == sorted_s[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0  # average 1-based rank
        i = j + 1
    rank_sum = float(np.sum(ranks[y == 1]))
    # rank_sum and the correction are exact multiples of 0.5, so scaling
    # before the single division keeps the result bit-identical to counting
    # the pairs one by one
    favorable = rank_sum - pos * (pos + 1) / 2.0
    return 100.0 * favorable / (pos * neg)


# --------------------------------------------------------------------------
# evaluation reports


@dataclass
class SequenceTrace:
    sequence_id: str
    indices: np.ndarray
    raw: np.ndarray
    smoothed: np.ndarray
    labels: np.ndarray
    annotation: Annotation


@dataclass
class CategoryResult:
    sequences: int
    frames: int
    auc_raw: float | None       # None when every frame shares one label
    auc_smoothed: float | None


@dataclass
class EvalReport:
    overall_auc_raw: float
    overall_auc_smoothed: float
    categories: dict[str, CategoryResult]
    traces: list[SequenceTrace]
    metadata: dict[str, str] = field(default_factory=dict)

    def to_text(self) -> str:
        lines = ["tofvad evaluation report", "=" * 24, ""]
        lines.append(f"overall_auc_raw_percent = {self.overall_auc_raw:.6f}")
        lines.append(f"overall_auc_smoothed_percent = {self.overall_auc_smoothed:.6f}")
        lines.append(f"sequences = {len(self.traces)}")
        lines.append(f"scored_frames = {sum(len(t.indices) for t in self.traces)}")
        for key, value in self.metadata.items():
            lines.append(f"{key} = {value}")
        lines.append("")
        lines.append("[categories]")
        lines.append("category | sequences | frames | auc_raw | auc_smoothed")
        for name, c in self.categories.items():
            raw = "n/a" if c.auc_raw is None else f"{c.auc_raw:.6f}"
            smo = "n/a" if c.auc_smoothed is None else f"{c.auc_smoothed:.6f}"
            lines.append(f"{name} | {c.sequences} | {c.frames} | {raw} | {smo}")
        lines.append("")
        lines.append("[sequences]")
        lines.append("sequence_id | scored_frames | anomalous_frames | "
                      "mean_raw | mean_smoothed")
        for t in self.traces:
            lines.append(f"{t.sequence_id} | {len(t.indices)} | "
                          f"{int(np.sum(t.labels))} | "
                          f"{float(np.mean(t.raw)):.9e} | "
                          f"{float(np.mean(t.smoothed)):.9e}")
        return "\n".join(lines) + "\n"


def trace_to_csv(trace: SequenceTrace) -> str:
    lines = ["frame_index,raw_score,smoothed_score,label"]
    for i in range(trace.indices.size):
        lines.append(f"{int(trace.indices[i])},{trace.raw[i]:.12e},"
                     f"{trace.smoothed[i]:.12e},{int(trace.labels[i])}")
    return "\n".join(lines) + "\n"


def write_report(report: EvalReport, out_dir: str | Path) -> Path:
    """Report text plus one score-trace CSV per sequence; returns the
    report path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    report_path = out / "report.txt"
    atomic_write_text(report_path, report.to_text())
    traces = out / "traces"
    traces.mkdir(exist_ok=True)
    for t in report.traces:
        atomic_write_text(traces / f"{t.sequence_id}.csv", trace_to_csv(t))
    return report_path


def render_score_curves(report: EvalReport, out_dir: str | Path) -> list[Path]:
    """Optional per-sequence score plots with the anomalous span shaded.
    Needs matplotlib; everything else in the package runs without it."""
    try:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError as exc:
        raise RuntimeError("score-curve rendering needs matplotlib") from exc
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for t in report.traces:
        fig, ax = plt.subplots(figsize=(8, 3))
        ax.plot(t.indices, t.raw, lw=0.8, alpha=0.6, label="raw")
        ax.plot(t.indices, t.smoothed, lw=1.4, label="smoothed")
        a = t.annotation
        if not a.is_normal:
            ax.axvspan(a.first_anomalous, a.last_anomalous, color="red",
                       alpha=0.15, label="anomalous span")
        ax.set_xlabel("frame")
        ax.set_ylabel("score")
        ax.set_title(t.sequence_id)
        ax.legend(loc="upper left", fontsize=8)
        fig.tight_layout()
        p = out / f"{t.sequence_id}.png"
        fig.savefig(p, dpi=110)
        plt.close(fig)
        paths.append(p)
    return paths


_CATEGORY_ORDER = (Category.AGGRESSIVE_BEHAVIOR, Category.MEDICAL_ISSUE,
                   Category.LEFT_BEHIND_OBJECT, Category.OTHER)


def evaluate(model: Model, test_data: list[SequenceData],
             annotations: dict[str, Annotation] | list[Annotation],
             cfg: RunConfig) -> EvalReport:
    if not test_data:
        raise ValueError("empty test set")
    if not isinstance(annotations, dict):
        annotations = {a.sequence_id: a for a in annotations}

    traces: list[SequenceTrace] = []
    for d in test_data:
        ann = annotations.get(d.sequence_id)
        if ann is None:
            raise ValueError(f"missing annotation for sequence {d.sequence_id!r}")
        raw = score_sequence(model, d, cfg)
        smoothed = smooth_scores(raw, cfg.window)
        labels = ann.to_labels(len(d.frames))[raw.indices]
        traces.append(SequenceTrace(sequence_id=d.sequence_id, indices=raw.indices,
                                    raw=raw.scores, smoothed=smoothed.scores,
                                    labels=labels, annotation=ann))

    all_raw = np.concatenate([t.raw for t in traces])
    all_smoothed = np.concatenate([t.smoothed for t in traces])
    all_labels = np.concatenate([t.labels for t in traces])

    categories: dict[str, CategoryResult] = {}
    for cat in _CATEGORY_ORDER:
        members = [t for t in traces
                   if not t.annotation.is_normal and t.annotation.category is cat]
        if not members:
            continue
        cat_raw = np.concatenate([t.raw for t in members])
        cat_smoothed = np.concatenate([t.smoothed for t in members])
        cat_labels = np.concatenate([t.labels for t in members])
        frames = int(cat_labels.size)
        if len(set(cat_labels.tolist())) < 2:
            categories[cat.value] = CategoryResult(len(members), frames, None, None)
        else:
            categories[cat.value] = CategoryResult(
                len(members), frames,
                auc_roc(cat_raw, cat_labels), auc_roc(cat_smoothed, cat_labels))

    metadata = {
        "model": cfg.model,
        "loss": cfg.loss,
        "modality": cfg.modality,
        "window": str(cfg.window),
        "seed": str(cfg.seed),
    }
    return EvalReport(
        overall_auc_raw=auc_roc(all_raw, all_labels),
        overall_auc_smoothed=auc_roc(all_smoothed, all_labels),
        categories=categories,
        traces=traces,
        metadata=metadata,
    )


# --------------------------------------------------------------------------
# model persistence


def save_model(path: str | Path, model: Model, cfg: RunConfig) -> None:
    meta = {
        "format": CHECKPOINT_FORMAT,
        "kind": model.kind.value,
        "height": model.height,
        "width": model.width,
        "arch_digest": model.arch_digest(),
        "config": config_to_text(cfg),
    }
    checkpoint.save(path, meta, model.state_arrays())


def load_model(path: str | Path) -> tuple[Model, RunConfig]:
    from .config import config_from_text

    meta, arrays = checkpoint.load(path)
    if meta.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path}: not a model checkpoint")
    model = build_model(meta["kind"], int(meta["height"]), int(meta["width"]))
    if model.arch_digest() != meta["arch_digest"]:
        raise ValueError(f"{path}: checkpoint architecture digest "
                         f"{meta['arch_digest']} does not match the "
                         f"{meta['kind']} model built for "
                         f"{meta['width']}x{meta['height']}")
    model.load_state(arrays)
    cfg = config_from_text(meta["config"], where=f"{path}:<embedded config>")
    return model, cfg
