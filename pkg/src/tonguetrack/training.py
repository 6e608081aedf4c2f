"""Adam training loop with best-validation-loss checkpoint selection."""
from __future__ import annotations

import csv
import logging
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
import torch

from .contour import MaskConfig, contour_to_mask
from .data import AugmentationConfig, Dataset, augment_pair
from .losses import LossConfig, class_weights_from_dataset, loss_fn
from .models import Checkpoint, make_checkpoint, model_device

log = logging.getLogger(__name__)

ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    batch_size: int = 32
    learning_rate: float = 1e-4
    epochs: int = 30
    optimizer: str = "adam"
    loss: LossConfig = field(default_factory=LossConfig)
    augmentation: AugmentationConfig | None = None
    mask: MaskConfig = field(default_factory=MaskConfig)
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.optimizer != "adam":
            raise ValueError("only the adam optimizer is supported")


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    seconds: float


@dataclass
class TrainingLog:
    records: list = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    @property
    def train_losses(self) -> list:
        return [r.train_loss for r in self.records]

    @property
    def val_losses(self) -> list:
        return [r.val_loss for r in self.records]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "train_loss", "val_loss", "seconds"])
            for r in self.records:
                w.writerow([r.epoch, repr(r.train_loss), repr(r.val_loss), f"{r.seconds:.3f}"])

    @classmethod
    def from_csv(cls, path) -> "TrainingLog":
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        return cls([EpochRecord(int(r["epoch"]), float(r["train_loss"]), float(r["val_loss"]),
                                float(r["seconds"])) for r in rows])


def dataset_masks(dataset: Dataset, mask: MaskConfig) -> np.ndarray:
    h, w = dataset.frames.shape[1:]
    return np.stack([contour_to_mask(c, mask, w, h) for c in dataset.contours]).astype(np.float32)


def _at_model_size(model, dataset: Dataset) -> Dataset:
    return dataset.resized(model.spec.input_size)


@torch.no_grad()
def evaluate_loss(model, dataset: Dataset, loss: LossConfig, mask: MaskConfig = MaskConfig(),
                  batch_size: int = 32, masks: np.ndarray | None = None) -> float:
    """Mean per-frame loss in inference mode, without augmentation."""
    if len(dataset) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    dataset = _at_model_size(model, dataset)
    if masks is None:
        masks = dataset_masks(dataset, mask)
    fn = loss_fn(loss)
    model.eval()
    dev = model_device(model)
    total = 0.0
    for start in range(0, len(dataset), batch_size):
        x = torch.from_numpy(dataset.frames[start:start + batch_size]).unsqueeze(1).to(dev)
        y = torch.from_numpy(masks[start:start + batch_size]).unsqueeze(1).to(dev)
        total += float(fn(model(x), y)) * len(x)
    return total / len(dataset)


def _epoch_streams(seed: int, epoch: int):
    order_seq, aug_seq = np.random.SeedSequence([seed, epoch]).spawn(2)
    return np.random.default_rng(order_seq), np.random.default_rng(aug_seq)


def train(model, train_set: Dataset, val_set: Dataset, cfg: TrainConfig = TrainConfig(),
          progress=None) -> tuple[Checkpoint, TrainingLog]:
    """Train for ``cfg.epochs`` epochs, keeping the weights with the lowest
    validation loss.

    The model is left holding the selected weights. ``progress`` is an
    optional callable receiving each ``EpochRecord``.
    """
    if len(train_set) == 0:
        raise ValueError("training set is empty")
    if len(val_set) == 0:
        raise ValueError("validation set is empty")
    train_set = _at_model_size(model, train_set)
    val_set = _at_model_size(model, val_set)
    train_masks = dataset_masks(train_set, cfg.mask)
    val_masks = dataset_masks(val_set, cfg.mask)

    loss_cfg = cfg.loss
    if loss_cfg.kind == "weighted_ce" and (loss_cfg.w_pos is None or loss_cfg.w_neg is None):
        w_pos, w_neg = class_weights_from_dataset(train_masks)
        loss_cfg = replace(loss_cfg, w_pos=w_pos, w_neg=w_neg)
    fn = loss_fn(loss_cfg)

    torch.manual_seed(cfg.seed)
    dev = model_device(model)
    opt = torch.optim.Adam(model.parameters(), lr=cfg.learning_rate, betas=ADAM_BETAS, eps=ADAM_EPS)
    history = TrainingLog()
    best_val, best_state, best_epoch = float("inf"), None, 0
    n = len(train_set)

    for epoch in range(1, cfg.epochs + 1):
        t0 = time.perf_counter()
        order_rng, aug_rng = _epoch_streams(cfg.seed, epoch)
        order = order_rng.permutation(n)
        model.train()
        running = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            frames, masks = train_set.frames[idx], train_masks[idx]
            if cfg.augmentation is not None:
                pairs = [augment_pair(f, m, cfg.augmentation, aug_rng) for f, m in zip(frames, masks)]
                frames = np.stack([p[0] for p in pairs]).astype(np.float32)
                masks = np.stack([p[1] for p in pairs]).astype(np.float32)
            x = torch.from_numpy(np.ascontiguousarray(frames)).unsqueeze(1).to(dev)
            y = torch.from_numpy(np.ascontiguousarray(masks)).unsqueeze(1).to(dev)
            loss = fn(model(x), y)
            if not torch.isfinite(loss):
                raise TrainingDiverged(f"non-finite training loss {float(loss.detach())} at epoch {epoch}, "
                                       f"batch starting at {start}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            running += float(loss.detach()) * len(idx)

        val = evaluate_loss(model, val_set, loss_cfg, cfg.mask, cfg.batch_size, val_masks)
        if not np.isfinite(val):
            raise TrainingDiverged(f"non-finite validation loss at epoch {epoch}")
        rec = EpochRecord(epoch, running / n, val, time.perf_counter() - t0)
        history.records.append(rec)
        log.info("epoch %d train %.5f val %.5f (%.1fs)", epoch, rec.train_loss, val, rec.seconds)
        if progress is not None:
            progress(rec)
        if val < best_val:
            best_val, best_epoch = val, epoch
            best_state = {k: v.detach().clone() for k, v in model.state_dict().items()}

    model.load_state_dict(best_state)
    meta = {
        "loss": loss_cfg.to_dict(),
        "mask": asdict(cfg.mask),
        "epochs": cfg.epochs,
        "best_epoch": best_epoch,
        "best_val_loss": best_val,
        "batch_size": cfg.batch_size,
        "learning_rate": cfg.learning_rate,
        "optimizer": {"name": "adam", "betas": list(ADAM_BETAS), "eps": ADAM_EPS},
        "augmentation": asdict(cfg.augmentation) if cfg.augmentation else None,
        "seed": cfg.seed,
        "n_train": len(train_set),
        "n_val": len(val_set),
    }
    return make_checkpoint(model, meta), history


def save_training_log(history: TrainingLog, path) -> Path:
    path = Path(path)
    history.to_csv(path)
    return path
