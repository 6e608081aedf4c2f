"""Config-driven training runs and Cartesian-product sweeps."""
from __future__ import annotations

import csv
import itertools
import logging
import time
from dataclasses import replace
from pathlib import Path

from .config import ExperimentConfig
from .data import (AugmentationConfig, Dataset, generate_synthetic, read_manifest,
                   split_dataset, subsample_training)
from .losses import LossConfig
from .models import build_model, default_device
from .pipeline import evaluate_model
from .training import train

log = logging.getLogger(__name__)


def load_splits(cfg: ExperimentConfig) -> tuple[Dataset, Dataset, Dataset]:
    """Train/val/test datasets at their stored resolution."""
    seed = cfg.seeds()["split"]
    if cfg.data.synthetic is not None:
        return split_dataset(generate_synthetic(cfg.data.synthetic), cfg.data.split, seed)
    groups = read_manifest(cfg.data.manifest)
    if {"train", "val", "test"} <= set(groups):
        return groups["train"], groups["val"], groups["test"]
    merged = [ds for ds in groups.values()]
    if len(merged) != 1:
        raise ValueError("manifest must tag items train/val/test or leave them all untagged")
    return split_dataset(merged[0], cfg.data.split, seed)


def train_run(cfg: ExperimentConfig, splits=None, progress=None):
    """Build, train and return ``(model, checkpoint, log, test_set)``."""
    tr, va, te = splits or load_splits(cfg)
    model = build_model(cfg.model, cfg.seeds()["init"]).to(default_device())
    ckpt, history = train(model, tr, va, cfg.train, progress)
    ckpt.training_meta["postprocess"] = cfg.postprocess.to_dict()
    return model, ckpt, history, te


def cell_config(cfg: ExperimentConfig, cell: dict) -> ExperimentConfig:
    model = cfg.model
    if "arch" in cell or "input_size" in cell:
        model = replace(model, arch=cell.get("arch", model.arch),
                        input_size=int(cell.get("input_size", model.input_size)))
    train_cfg = cfg.train
    if "loss" in cell:
        kind = cell["loss"]
        loss = LossConfig(kind=kind, epsilon=train_cfg.loss.epsilon, lam=train_cfg.loss.lam,
                          reduction=train_cfg.loss.reduction)
        train_cfg = replace(train_cfg, loss=loss)
    if "augment" in cell:
        aug = (train_cfg.augmentation or AugmentationConfig()) if cell["augment"] else None
        train_cfg = replace(train_cfg, augmentation=aug)
    return replace(cfg, model=model, train=train_cfg)


def sweep_cells(sweep: dict) -> list[dict]:
    axes = [a for a in sweep]
    return [dict(zip(axes, combo)) for combo in itertools.product(*(sweep[a] for a in axes))]


def run_experiment(cfg: ExperimentConfig, out_dir, plot: bool = True) -> list[dict]:
    """One train + test evaluation per sweep cell; failures are recorded and
    the sweep continues. Writes ``results.csv`` and one plot per swept axis."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg.save(out / "config.json")
    tr, va, te = load_splits(cfg)
    axes = list(cfg.sweep)
    rows = []
    for i, cell in enumerate(sweep_cells(cfg.sweep)):
        t0 = time.perf_counter()
        row = dict(cell)
        try:
            cc = cell_config(cfg, cell)
            sub = subsample_training(tr, float(cell["fraction"]), cfg.seeds()["subsample"]) \
                if "fraction" in cell else tr
            model, ckpt, history, _ = train_run(cc, (sub, va, te))
            report = evaluate_model(model, te, cc.postprocess, cfg.px_per_mm)
            agg = report.aggregate
            row.update(arch=cc.model.arch, input_size=cc.model.input_size, n_train=len(sub),
                       mean_msd=agg.mean if agg else float("nan"),
                       std_msd=agg.std if agg else float("nan"),
                       n_failed=report.n_failed, best_epoch=ckpt.training_meta["best_epoch"],
                       error="")
        except Exception as err:  # noqa: BLE001 - a failed cell must not stop the sweep
            log.exception("sweep cell %s failed", cell)
            row.update(mean_msd=float("nan"), std_msd=float("nan"), error=f"{type(err).__name__}: {err}")
        row["seconds"] = round(time.perf_counter() - t0, 3)
        rows.append(row)
        log.info("cell %d/%d %s -> %s", i + 1, len(sweep_cells(cfg.sweep)), cell, row.get("mean_msd"))

    columns = axes + [c for c in ("arch", "input_size", "n_train", "mean_msd", "std_msd", "n_failed",
                                  "best_epoch", "seconds", "error") if c not in axes]
    with open(out / "results.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=columns, extrasaction="ignore")
        w.writeheader()
        for r in rows:
            w.writerow({c: r.get(c, "") for c in columns})
    if plot:
        plot_sweep(rows, axes, out)
    return rows


def plot_sweep(rows: list[dict], axes: list[str], out_dir) -> list[Path]:
    """Mean MSD against each swept axis, one line per setting of the other axes."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    paths = []
    for axis in axes:
        others = [a for a in axes if a != axis]
        fig, ax = plt.subplots(figsize=(5, 3.5))
        groups: dict = {}
        for r in rows:
            groups.setdefault(tuple(r[a] for a in others), []).append(r)
        for key, group in groups.items():
            xs = [str(r[axis]) for r in group]
            label = ", ".join(f"{a}={v}" for a, v in zip(others, key)) or None
            ax.errorbar(xs, [r["mean_msd"] for r in group], yerr=[r["std_msd"] for r in group],
                        marker="o", capsize=3, label=label)
        ax.set_xlabel(axis)
        ax.set_ylabel("MSD (px)")
        if others:
            ax.legend(fontsize=7)
        fig.tight_layout()
        path = Path(out_dir) / f"sweep_{axis}.png"
        fig.savefig(path, dpi=100)
        plt.close(fig)
        paths.append(path)
    return paths
