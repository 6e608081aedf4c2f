"""Training objectives: soft Dice, (weighted) binary crossentropy and their sum.

All losses take ``pred`` (sigmoid outputs) and ``target`` (soft masks in
[0, 1]) of identical shape. Inputs with ``ndim <= 2`` are one sample; for
higher ranks the first axis is the batch and per-sample values are averaged.

``reduction="sum"`` sums crossentropy over pixels exactly as the textbook
formula is written; ``"mean"`` divides by the pixel count, which keeps the
scale independent of image size and is the training default.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np
import torch

CLAMP = 1e-7
KINDS = ("dice", "weighted_ce", "compound")


@dataclass
class LossConfig:
    kind: str = "compound"
    epsilon: float = 1.0
    lam: float = 5.0
    w_pos: float | None = None
    w_neg: float | None = None
    reduction: str = "mean"

    def __post_init__(self):
        if self.kind == "wc":
            self.kind = "weighted_ce"
        if self.kind not in KINDS:
            raise ValueError(f"unknown loss kind {self.kind!r}; expected one of {KINDS}")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.lam < 0:
            raise ValueError("lambda must be non-negative")
        for w in (self.w_pos, self.w_neg):
            if w is not None and not w > 0:
                raise ValueError("class weights must be positive")
        if self.reduction not in ("sum", "mean"):
            raise ValueError("reduction must be 'sum' or 'mean'")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["lambda"] = d.pop("lam")
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "LossConfig":
        d = dict(d)
        if "lambda" in d:
            d["lam"] = d.pop("lambda")
        return cls(**d)


def _check(pred, target):
    pred = torch.as_tensor(pred)
    target = torch.as_tensor(target, dtype=pred.dtype)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: pred {tuple(pred.shape)} vs target {tuple(target.shape)}")
    if pred.ndim <= 2:
        return pred.reshape(1, -1), target.reshape(1, -1)
    return pred.reshape(pred.shape[0], -1), target.reshape(target.shape[0], -1)


def dice_loss(pred, target, epsilon: float = 1.0) -> torch.Tensor:
    """``-(2 sum(s r) + eps) / (sum(s) + sum(r) + eps)``; -1 is a perfect match."""
    s, r = _check(pred, target)
    per_sample = -(2 * (s * r).sum(1) + epsilon) / (s.sum(1) + r.sum(1) + epsilon)
    return per_sample.mean()


def weighted_crossentropy_loss(pred, target, w_pos: float = 1.0, w_neg: float = 1.0,
                               reduction: str = "sum") -> torch.Tensor:
    p, y = _check(pred, target)
    p = p.clamp(CLAMP, 1 - CLAMP)
    per_px = -(w_pos * y * torch.log(p) + w_neg * (1 - y) * torch.log(1 - p))
    if reduction == "sum":
        return per_px.sum(1).mean()
    if reduction == "mean":
        return per_px.mean()
    raise ValueError("reduction must be 'sum' or 'mean'")


def crossentropy_loss(pred, target, reduction: str = "sum") -> torch.Tensor:
    return weighted_crossentropy_loss(pred, target, 1.0, 1.0, reduction)


def compound_loss(pred, target, epsilon: float = 1.0, lam: float = 5.0,
                  reduction: str = "sum") -> torch.Tensor:
    return dice_loss(pred, target, epsilon) + lam * crossentropy_loss(pred, target, reduction)


def loss_fn(cfg: LossConfig):
    """Bind a ``LossConfig`` into a ``(pred, target) -> scalar`` callable."""
    if cfg.kind == "dice":
        return lambda p, t: dice_loss(p, t, cfg.epsilon)
    if cfg.kind == "compound":
        return lambda p, t: compound_loss(p, t, cfg.epsilon, cfg.lam, cfg.reduction)
    if cfg.w_pos is None or cfg.w_neg is None:
        raise ValueError("weighted_ce needs w_pos and w_neg (see class_weights_from_dataset)")
    return lambda p, t: weighted_crossentropy_loss(p, t, cfg.w_pos, cfg.w_neg, cfg.reduction)


def compute_loss(pred, target, cfg: LossConfig) -> float:
    return float(loss_fn(cfg)(pred, target))


def class_weights_from_dataset(masks: Sequence[np.ndarray]) -> tuple[float, float]:
    """Inverse-frequency weights ``(w_pos, w_neg)`` for the two pixel classes.

    Masks are binarised at 0.5. The weights are scaled so that the average
    per-pixel weight over the dataset is one.
    """
    if len(masks) == 0:
        raise ValueError("need at least one mask")
    pos = total = 0
    for m in masks:
        m = np.asarray(m)
        pos += int(np.count_nonzero(m >= 0.5))
        total += m.size
    neg = total - pos
    if pos == 0:
        raise ValueError("no positive pixels in dataset")
    if neg == 0:
        raise ValueError("no negative pixels in dataset")
    pos_frac, neg_frac = pos / total, neg / total
    # w_pos * pos_frac + w_neg * neg_frac == 1
    return 0.5 / pos_frac, 0.5 / neg_frac


# ------------------------------------------------------------ closed-form grads
# Gradients with respect to the prediction for a single sample, written out by
# hand. They cover the unclamped interior (CLAMP < p < 1 - CLAMP).

def dice_loss_grad(s: np.ndarray, r: np.ndarray, epsilon: float = 1.0) -> np.ndarray:
    s, r = np.asarray(s, np.float64), np.asarray(r, np.float64)
    num = 2 * np.sum(s * r) + epsilon
    den = np.sum(s) + np.sum(r) + epsilon
    return -(2 * r * den - num) / den ** 2


def weighted_crossentropy_grad(p: np.ndarray, y: np.ndarray, w_pos: float = 1.0,
                               w_neg: float = 1.0, reduction: str = "sum") -> np.ndarray:
    p, y = np.asarray(p, np.float64), np.asarray(y, np.float64)
    g = -(w_pos * y / p - w_neg * (1 - y) / (1 - p))
    return g / p.size if reduction == "mean" else g


def crossentropy_grad(p, y, reduction: str = "sum") -> np.ndarray:
    return weighted_crossentropy_grad(p, y, 1.0, 1.0, reduction)


def compound_loss_grad(p, y, epsilon: float = 1.0, lam: float = 5.0,
                       reduction: str = "sum") -> np.ndarray:
    return dice_loss_grad(p, y, epsilon) + lam * crossentropy_grad(p, y, reduction)
