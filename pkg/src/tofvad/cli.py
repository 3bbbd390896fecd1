"""Command-line entry point: `tofvad <command> ...`.

Commands cover the full pipeline — foreground masks, training, scoring,
evaluation, synthetic data, and cross-run comparison tables. Every run is
reproducible from the config snapshot written next to its outputs, and all
file outputs are written atomically.

Exit codes: 0 success, 1 runtime failure (single-line ``tofvad: error: ...``
on stderr), 2 usage error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import engine
from .config import RunConfig, load_config, save_config
from .engine import SequenceData
from .fgmask import export_mask_pngs, mask_sequence
from .frameio import load_annotations, load_sequence
from .ioutil import atomic_write_text
from .losses import LossKind
from .models import ModelKind
from .synth import load_corpus_spec, make_corpus


def _load_sequence_dirs(parent: Path, modality: str,
                        depth_parent: str | None = None) -> list[SequenceData]:
    parent = Path(parent)
    if not parent.is_dir():
        raise FileNotFoundError(f"sequence directory not found: {parent}")
    dirs = sorted(p for p in parent.iterdir() if p.is_dir())
    if not dirs:
        raise ValueError(f"{parent}: no sequence directories found")
    out = []
    for d in dirs:
        depth = None
        if depth_parent is not None:
            paired = Path(depth_parent) / d.name
            if not paired.is_dir():
                raise FileNotFoundError(
                    f"paired depth sequence not found: {paired}")
            depth = load_sequence(paired, "depth")
        out.append(SequenceData(load_sequence(d, modality), depth))
    return out


# --------------------------------------------------------------------------
# commands


def _cmd_mask(args) -> int:
    cfg = load_config(args.params) if args.params else RunConfig()
    seq = load_sequence(args.seq_dir, "depth")
    masks = mask_sequence(seq, cfg.mask)
    out = Path(args.out) if args.out else Path(args.seq_dir).parent / (
        Path(args.seq_dir).name + "_masks")
    paths = export_mask_pngs(masks, out)
    print(f"wrote {len(paths)} masks to {out}")
    return 0


def _cmd_train(args) -> int:
    cfg = load_config(args.config)
    if args.train_dir:
        cfg = cfg.replace(train_dir=str(args.train_dir))
    if not cfg.train_dir:
        raise ValueError("no training data: set train_dir in the config "
                         "or pass --train-dir")
    sequences = _load_sequence_dirs(Path(cfg.train_dir), cfg.modality,
                                    args.depth_dir)
    model = engine.train(cfg, sequences)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ckpt = out / "model.ckpt"
    engine.save_model(ckpt, model, cfg)
    save_config(cfg, out / "config.txt")
    print(f"trained {cfg.model} on {len(sequences)} sequences "
          f"({len(model.loss_history)} steps); checkpoint: {ckpt}")
    return 0


def _cmd_score(args) -> int:
    model, cfg = engine.load_model(args.checkpoint)
    depth = load_sequence(args.depth_dir, "depth") if args.depth_dir else None
    data = SequenceData(load_sequence(args.seq_dir, cfg.modality), depth)
    raw = engine.score_sequence(model, data, cfg)
    smoothed = engine.smooth_scores(raw, cfg.window)
    lines = ["frame_index,raw_score,smoothed_score"]
    for i in range(len(raw)):
        lines.append(f"{int(raw.indices[i])},{raw.scores[i]:.12e},"
                     f"{smoothed.scores[i]:.12e}")
    text = "\n".join(lines) + "\n"
    if args.out:
        atomic_write_text(Path(args.out), text)
        print(f"wrote {len(raw)} scores to {args.out}")
    else:
        sys.stdout.write(text)
    return 0


def _cmd_eval(args) -> int:
    model, cfg = engine.load_model(args.checkpoint)
    test_data = _load_sequence_dirs(Path(args.test), cfg.modality,
                                    args.depth_dir)
    annotations = load_annotations(args.annotations)
    report = engine.evaluate(model, test_data, annotations, cfg)
    report_path = engine.write_report(report, args.out)
    if args.plots:
        engine.render_score_curves(report, Path(args.out) / "plots")
    print(f"overall AUC: raw {report.overall_auc_raw:.2f}%, "
          f"smoothed {report.overall_auc_smoothed:.2f}%; report: {report_path}")
    return 0


def _cmd_synth(args) -> int:
    spec = load_corpus_spec(args.spec)
    paths = make_corpus(spec, args.out)
    print(f"wrote synthetic corpus to {paths.root} "
          f"({spec.train_sequences} train, "
          f"{spec.test_normal + spec.test_anomalous} test sequences)")
    return 0


# fixed grid layout: rows in architecture order, columns in loss order
_GRID_ROWS = tuple(kind.value for kind in ModelKind)
_GRID_COLS = tuple(kind.value for kind in LossKind)


def _parse_report(path: Path) -> dict[str, str]:
    values: dict[str, str] = {}
    for line in path.read_text().splitlines():
        if line.startswith("["):
            break
        if "=" in line:
            key, _, value = line.partition("=")
            values[key.strip()] = value.strip()
    for key in ("model", "loss", "overall_auc_raw_percent",
                "overall_auc_smoothed_percent"):
        if key not in values:
            raise ValueError(f"{path}: not an evaluation report "
                             f"(missing {key!r})")
    return values


def comparison_grid(runs: dict[tuple[str, str], dict[str, str]]) -> str:
    """Networks-by-losses table; each cell is raw/smoothed AUC in percent."""
    rows = [r for r in _GRID_ROWS if any(k[0] == r for k in runs)]
    cols = [c for c in _GRID_COLS if any(k[1] == c for k in runs)]
    header = ["network"] + [c.upper() for c in cols]
    table = [header]
    for r in rows:
        row = [r]
        for c in cols:
            hit = runs.get((r, c))
            if hit is None:
                row.append("-")
            else:
                row.append(f"{float(hit['overall_auc_raw_percent']):.2f}"
                           f"/{float(hit['overall_auc_smoothed_percent']):.2f}")
        table.append(row)
    widths = [max(len(row[i]) for row in table) for i in range(len(header))]
    lines = []
    for i, row in enumerate(table):
        lines.append("  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip())
        if i == 0:
            lines.append("  ".join("-" * w for w in widths))
    lines.append("")
    lines.append("cells: overall frame-level AUC % as raw/smoothed")
    return "\n".join(lines) + "\n"


def _cmd_report(args) -> int:
    runs_dir = Path(args.runs)
    if not runs_dir.is_dir():
        raise FileNotFoundError(f"runs directory not found: {runs_dir}")
    report_files = sorted(runs_dir.glob("*/report.txt"))
    if not report_files:
        raise ValueError(f"{runs_dir}: no run directories with report.txt found")
    runs: dict[tuple[str, str], dict[str, str]] = {}
    for path in report_files:
        values = _parse_report(path)
        key = (values["model"], values["loss"])
        if key in runs:
            raise ValueError(f"{path}: duplicate run for model={key[0]} "
                             f"loss={key[1]}")
        runs[key] = values
    text = comparison_grid(runs)
    if args.out:
        atomic_write_text(Path(args.out), text)
        print(f"wrote comparison of {len(runs)} runs to {args.out}")
    else:
        sys.stdout.write(text)
    return 0


# --------------------------------------------------------------------------
# argument plumbing


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tofvad",
        description="Anomaly detection for time-of-flight depth video.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("mask", help="write foreground masks for one sequence")
    p.add_argument("seq_dir", help="directory of 16-bit depth frames")
    p.add_argument("--params", help="config file providing mask.* parameters")
    p.add_argument("--out", help="output directory (default: <seq_dir>_masks)")
    p.set_defaults(func=_cmd_mask)

    depth_dir_help = ("paired depth recordings for IR runs whose loss "
                      "needs foreground masks")

    p = sub.add_parser("train", help="train a model from a config file")
    p.add_argument("--config", required=True, help="run config file")
    p.add_argument("--train-dir", help="override the config's train_dir")
    p.add_argument("--depth-dir", help=depth_dir_help)
    p.add_argument("--out", required=True,
                   help="output directory for checkpoint + config snapshot")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("score", help="score one sequence with a checkpoint")
    p.add_argument("seq_dir", help="directory of frames to score")
    p.add_argument("--checkpoint", required=True, help="model checkpoint")
    p.add_argument("--depth-dir",
                   help="paired depth sequence for IR runs whose loss "
                        "needs foreground masks")
    p.add_argument("--out", help="trace CSV path (default: stdout)")
    p.set_defaults(func=_cmd_score)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a test split")
    p.add_argument("--checkpoint", required=True, help="model checkpoint")
    p.add_argument("--test", required=True,
                   help="directory of test sequence directories")
    p.add_argument("--annotations", required=True, help="annotations CSV")
    p.add_argument("--depth-dir", help=depth_dir_help)
    p.add_argument("--out", required=True, help="report output directory")
    p.add_argument("--plots", action="store_true",
                   help="also render per-sequence score curves (needs matplotlib)")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--spec", required=True, help="corpus spec file")
    p.add_argument("--out", required=True, help="dataset output directory")
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("report",
                       help="aggregate evaluation runs into a networks-by-losses grid")
    p.add_argument("--runs", required=True,
                   help="directory containing one run directory per evaluation")
    p.add_argument("--out", help="grid output path (default: stdout)")
    p.set_defaults(func=_cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse prints usage itself
        return int(exc.code or 0)
    try:
        return args.func(args)
    except BrokenPipeError:
        return 1
    except Exception as exc:
        message = " ".join(str(exc).split())  # keep the error on one line
        print(f"tofvad: error: {message}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
