"""JSON experiment configuration with explicit defaults.

A config file looks like::

    {
      "seed": 0,
      "model": {"arch": "unet", "input_size": 64},
      "train": {"epochs": 10, "batch_size": 4, "loss": {"kind": "compound", "lambda": 5}},
      "mask": {"sigma": 4, "floor_threshold": 0.4},
      "postprocess": {"threshold": 0.5},
      "data": {"synthetic": {"n_frames": 200}, "split": [0.45, 0.05, 0.5]},
      "sweep": {"loss": ["dice", "weighted_ce", "compound"]}
    }

``data`` holds either ``"synthetic"`` (a ``SyntheticConfig``) or
``"manifest"`` (path to a dataset manifest, relative to the config file).
Every missing field takes its documented default, and ``to_dict`` echoes
the fully resolved config.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .contour import DEFAULT_PX_PER_MM, MaskConfig
from .data import AugmentationConfig, SyntheticConfig
from .losses import LossConfig
from .models import ModelSpec
from .postprocess import PostprocessConfig
from .training import TrainConfig

SWEEP_AXES = ("arch", "loss", "fraction", "input_size", "augment")
DEFAULT_SPLIT = (0.45, 0.05, 0.50)


class ConfigError(ValueError):
    pass


def derived_seeds(seed: int) -> dict:
    """Independent child seeds for each random consumer, all derived from one seed."""
    s = np.random.SeedSequence(seed).generate_state(4)
    return {"split": int(s[0]), "init": int(s[1]), "train": int(s[2]), "subsample": int(s[3])}


def _build(cls, d: dict | None, what: str):
    d = dict(d or {})
    known = {f.name for f in fields(cls)}
    unknown = set(d) - known - ({"lambda"} if cls is LossConfig else set())
    if unknown:
        raise ConfigError(f"unknown {what} field(s): {sorted(unknown)}")
    try:
        return cls.from_dict(d) if hasattr(cls, "from_dict") else cls(**d)
    except (TypeError, ValueError) as err:
        raise ConfigError(f"invalid {what}: {err}") from err


@dataclass
class DataConfig:
    synthetic: SyntheticConfig | None = None
    manifest: Path | None = None
    split: tuple = DEFAULT_SPLIT

    def to_dict(self) -> dict:
        out = {"split": list(self.split)}
        if self.synthetic is not None:
            out["synthetic"] = self.synthetic.to_dict()
        if self.manifest is not None:
            out["manifest"] = str(self.manifest)
        return out


@dataclass
class ExperimentConfig:
    model: ModelSpec = field(default_factory=ModelSpec)
    train: TrainConfig = field(default_factory=TrainConfig)
    mask: MaskConfig = field(default_factory=MaskConfig)
    postprocess: PostprocessConfig = field(default_factory=PostprocessConfig)
    data: DataConfig = field(default_factory=lambda: DataConfig(SyntheticConfig()))
    sweep: dict = field(default_factory=dict)
    seed: int = 0
    px_per_mm: float = DEFAULT_PX_PER_MM

    def seeds(self) -> dict:
        return derived_seeds(self.seed)

    def to_dict(self) -> dict:
        train = asdict(self.train)
        train["loss"] = self.train.loss.to_dict()
        train.pop("mask")
        return {
            "seed": self.seed,
            "px_per_mm": self.px_per_mm,
            "model": self.model.to_dict(),
            "train": train,
            "mask": asdict(self.mask),
            "postprocess": self.postprocess.to_dict(),
            "data": self.data.to_dict(),
            "sweep": self.sweep,
        }

    @classmethod
    def from_dict(cls, d: dict, base_dir=None) -> "ExperimentConfig":
        d = dict(d)
        unknown = set(d) - {"seed", "px_per_mm", "model", "train", "mask", "postprocess", "data", "sweep"}
        if unknown:
            raise ConfigError(f"unknown top-level field(s): {sorted(unknown)}")
        seed = int(d.get("seed", 0))
        model = _build(ModelSpec, d.get("model"), "model")
        mask = _build(MaskConfig, d.get("mask"), "mask")
        post = _build(PostprocessConfig, d.get("postprocess"), "postprocess")

        tr = dict(d.get("train") or {})
        loss = _build(LossConfig, tr.pop("loss", None), "loss")
        aug = tr.pop("augmentation", None)
        if aug is True:
            aug = {}
        aug = None if aug in (None, False) else _build(AugmentationConfig, aug, "augmentation")
        tr.setdefault("seed", derived_seeds(seed)["train"])
        try:
            train = TrainConfig(loss=loss, augmentation=aug, mask=mask, **tr)
        except (TypeError, ValueError) as err:
            raise ConfigError(f"invalid train config: {err}") from err

        data = cls._data(d.get("data"), base_dir)
        sweep = dict(d.get("sweep") or {})
        for axis, values in sweep.items():
            if axis not in SWEEP_AXES:
                raise ConfigError(f"unknown sweep axis {axis!r}; expected one of {SWEEP_AXES}")
            if not isinstance(values, list) or not values:
                raise ConfigError(f"sweep axis {axis!r} must be a non-empty list")
        return cls(model, train, mask, post, data, sweep, seed, float(d.get("px_per_mm", DEFAULT_PX_PER_MM)))

    @staticmethod
    def _data(d: dict | None, base_dir) -> DataConfig:
        d = dict(d or {"synthetic": {}})
        split = tuple(d.get("split", DEFAULT_SPLIT))
        if len(split) != 3 or abs(sum(split) - 1) > 1e-9 or min(split) < 0:
            raise ConfigError(f"data.split must be three fractions summing to 1, got {list(split)}")
        if ("synthetic" in d) == ("manifest" in d):
            raise ConfigError("data needs exactly one of 'synthetic' or 'manifest'")
        if "manifest" in d:
            path = Path(d["manifest"])
            if base_dir is not None and not path.is_absolute():
                path = Path(base_dir) / path
            if not path.exists():
                raise ConfigError(f"manifest not found: {path}")
            return DataConfig(None, path, split)
        return DataConfig(_build(SyntheticConfig, d["synthetic"], "synthetic data"), None, split)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        path = Path(path)
        try:
            raw = json.loads(path.read_text())
        except FileNotFoundError as err:
            raise ConfigError(f"config not found: {path}") from err
        except json.JSONDecodeError as err:
            raise ConfigError(f"config is not valid JSON: {err}") from err
        return cls.from_dict(raw, path.parent)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")
