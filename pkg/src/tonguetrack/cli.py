"""Command-line entry points: ``train``, ``extract``, ``eval``, ``experiment``, ``synth``.

Exit codes: 0 success, 2 invalid input (config, checkpoint, paths), 3 training
divergence. Device selection comes from ``$TONGUETRACK_DEVICE`` only.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from .config import ConfigError, ExperimentConfig
from .contour import (DEFAULT_PX_PER_MM, load_frame_png, read_annotation_dir,
                      write_annotation_json)
from .data import SyntheticConfig, generate_synthetic, split_indices, write_dataset
from .experiment import run_experiment, train_run
from .metrics import evaluate_contours, write_report
from .models import default_device, load_checkpoint, save_checkpoint
from .pipeline import extract_frames
from .postprocess import PostprocessConfig
from .training import TrainingDiverged

log = logging.getLogger("tonguetrack")

EXIT_OK, EXIT_INPUT, EXIT_DIVERGED = 0, 2, 3


class UsageError(Exception):
    pass


def _override_train(cfg: ExperimentConfig, args) -> ExperimentConfig:
    train = cfg.train
    if args.epochs is not None:
        train = replace(train, epochs=args.epochs)
    if args.batch_size is not None:
        train = replace(train, batch_size=args.batch_size)
    if args.lr is not None:
        train = replace(train, learning_rate=args.lr)
    if args.seed is not None:
        train = replace(train, seed=args.seed)
    model = cfg.model
    if args.arch is not None or args.input_size is not None:
        model = replace(model, arch=args.arch or model.arch, input_size=args.input_size or model.input_size)
    return replace(cfg, train=train, model=model)


def cmd_train(args) -> int:
    cfg = _override_train(ExperimentConfig.load(args.config), args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg.save(out / "config.json")
    model, ckpt, history, _ = train_run(cfg)
    save_checkpoint(ckpt, out / "model")
    history.to_csv(out / "training_log.csv")
    print(f"best epoch {ckpt.training_meta['best_epoch']} "
          f"val loss {ckpt.training_meta['best_val_loss']:.6f}; wrote {out}")
    return EXIT_OK


def _frame_paths(directory) -> list[Path]:
    d = Path(directory)
    if not d.is_dir():
        raise UsageError(f"input directory not found: {d}")
    paths = sorted(p for p in d.iterdir() if p.suffix.lower() in (".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff"))
    if not paths:
        raise UsageError(f"no frames in {d}")
    return paths


def _draw_overlay(path, frame, contour) -> None:
    from PIL import Image, ImageDraw

    img = Image.fromarray(np.round(255 * np.clip(frame, 0, 1)).astype(np.uint8)).convert("RGB")
    ImageDraw.Draw(img).line([tuple(p) for p in contour.points], fill=(255, 0, 0), width=1)
    img.save(path)


def cmd_extract(args) -> int:
    try:
        model, ckpt = load_checkpoint(args.checkpoint)
    except (OSError, ValueError, KeyError, RuntimeError) as err:
        raise UsageError(f"cannot load checkpoint {args.checkpoint}: {err}") from err
    model.to(default_device())
    pp = PostprocessConfig(**ckpt.training_meta.get("postprocess", {}))
    pp = replace(pp, threshold=args.threshold if args.threshold is not None else pp.threshold,
                 n_points=args.n_points if args.n_points is not None else pp.n_points,
                 spline_smoothing=args.smoothing if args.smoothing is not None else pp.spline_smoothing)
    paths = _frame_paths(args.input)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    t0 = time.perf_counter()
    frames = [load_frame_png(p) for p in paths]
    ids = [p.stem for p in paths]
    contours, failures = extract_frames(model, frames, pp, ids)
    elapsed = time.perf_counter() - t0

    for fid, frame in zip(ids, frames):
        if fid in contours:
            write_annotation_json(out / f"{fid}.json", contours[fid])
            if args.overlay:
                _draw_overlay(out / f"{fid}_overlay.png", frame, contours[fid])
    with open(out / "failures.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["frame_id", "error"])
        for fid, msg in failures.items():
            w.writerow([fid, msg])
    fps = len(paths) / elapsed if elapsed > 0 else float("inf")
    print(f"extracted {len(contours)}/{len(paths)} frames, {len(failures)} failed; "
          f"{fps:.1f} frames/s")
    return EXIT_OK


def cmd_eval(args) -> int:
    pred = read_annotation_dir(args.pred, args.px_per_mm)
    gold = read_annotation_dir(args.gold, args.px_per_mm)
    if not set(pred) & set(gold):
        raise UsageError("no frame ids in common between predicted and gold directories")
    report = evaluate_contours(pred, gold, args.px_per_mm)
    out = write_report(report, args.out, plot=args.plot)
    agg = report.aggregate
    print(f"MSD {agg.mean:.3f} ({agg.std:.3f}) px = {agg.mean / args.px_per_mm:.3f} mm "
          f"over {len(report.per_frame)} frames, {report.n_failed} failed; wrote {out}")
    return EXIT_OK


def cmd_experiment(args) -> int:
    cfg = ExperimentConfig.load(args.config)
    if not cfg.sweep:
        raise ConfigError("experiment config needs a non-empty 'sweep'")
    rows = run_experiment(cfg, args.out, plot=not args.no_plot)
    for r in rows:
        print(json.dumps({k: r[k] for k in r if k != "error" or r[k]}))
    return EXIT_OK


def cmd_synth(args) -> int:
    cfg = SyntheticConfig(n_frames=args.n_frames, image_size=args.image_size, noise=args.noise,
                          distractor_edges=args.distractors, seed=args.seed)
    ds = generate_synthetic(cfg)
    splits = None
    if args.split:
        parts = split_indices(len(ds), args.split, args.seed)
        splits = {ds.contours[i].frame_id: name for ix, name in zip(parts, ("train", "val", "test"))
                  for i in ix}
    try:
        path = write_dataset(ds, args.out, splits)
    except OSError as err:
        raise UsageError(f"cannot write to {args.out}: {err}") from err
    print(f"wrote {len(ds)} frames and {path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tonguetrack", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one model from a JSON config")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--arch", choices=["unet", "dense_unet"])
    p.add_argument("--input-size", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("extract", help="trace contours in a directory of frames")
    p.add_argument("--checkpoint", required=True, help="checkpoint path or run directory")
    p.add_argument("--input", required=True, help="directory of grayscale frames")
    p.add_argument("--out", required=True)
    p.add_argument("--threshold", type=float)
    p.add_argument("--smoothing", type=float, help="spline smoothing factor (default: point count)")
    p.add_argument("--n-points", type=int)
    p.add_argument("--overlay", action="store_true", help="also write contour-on-frame PNGs")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("eval", help="MSD between predicted and gold contours")
    p.add_argument("--pred", required=True)
    p.add_argument("--gold", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--px-per-mm", type=float, default=DEFAULT_PX_PER_MM)
    p.add_argument("--plot", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("experiment", help="run a sweep of train+eval cells")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--no-plot", action="store_true")
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("synth", help="write a synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--n-frames", type=int, default=200)
    p.add_argument("--image-size", type=int, default=128)
    p.add_argument("--noise", type=float, default=0.4)
    p.add_argument("--distractors", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--split", type=float, nargs=3, metavar=("TRAIN", "VAL", "TEST"),
                   help="tag items with a random train/val/test split")
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except TrainingDiverged as err:
        print(f"error: training diverged: {err}", file=sys.stderr)
        return EXIT_DIVERGED
    except (ConfigError, UsageError, ValueError, FileNotFoundError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
