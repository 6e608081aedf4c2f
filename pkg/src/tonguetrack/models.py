"""U-Net and Dense U-Net segmentation networks (PyTorch), inference and checkpoints.

Both networks map a ``(N, 1, S, S)`` grayscale batch in [0, 1] to a
``(N, 1, S, S)`` heatmap through a final 1x1 convolution and a sigmoid.

Inference on a model in ``eval()`` mode does not mutate state, but PyTorch
gives no formal guarantee for concurrent calls on one module from several
threads; callers that want parallel extraction should serialise
``predict_heatmap`` and parallelise the post-processing instead.
"""
from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

DEVICE_ENV = "TONGUETRACK_DEVICE"

SUPPORTED_SIZES = (32, 64, 128, 224)
ARCHS = ("unet", "dense_unet")

DENSE_STEM = 64  # DenseNet-121 initial feature count
DENSE_BN_SIZE = 4  # bottleneck width multiplier of the 1x1 conv
DENSE_COMPRESSION = 0.5  # transition layers halve the channel count


@dataclass
class ModelSpec:
    arch: str = "unet"
    input_size: int = 128
    unet_channels: list = field(default_factory=lambda: [32, 64, 128, 256, 512])
    densenet_block_sizes: list = field(default_factory=lambda: [6, 12, 24, 16])
    densenet_growth: int = 32
    up_growth_rates: list = field(default_factory=lambda: [16, 24, 12, 6, 6])

    def __post_init__(self):
        if self.arch not in ARCHS:
            raise ValueError(f"unknown arch {self.arch!r}; expected one of {ARCHS}")
        for seq in (self.unet_channels, self.densenet_block_sizes, self.up_growth_rates):
            if not seq or any(int(v) <= 0 for v in seq):
                raise ValueError("channel, block and growth entries must be positive")
        if self.densenet_growth <= 0:
            raise ValueError("densenet_growth must be positive")
        if self.input_size % self.downsampling != 0:
            raise ValueError(f"input_size {self.input_size} is not divisible by "
                             f"{self.downsampling} as required by {self.arch}")

    @property
    def downsampling(self) -> int:
        if self.arch == "unet":
            return 2 ** (len(self.unet_channels) - 1)
        # stem conv /2, stem pool /2, one /2 per transition layer
        return 2 ** (2 + len(self.densenet_block_sizes) - 1)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        return cls(**d)


def _init_weights(module: nn.Module) -> None:
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d)):
            nn.init.kaiming_uniform_(m.weight, nonlinearity="relu")
            if m.bias is not None:
                nn.init.zeros_(m.bias)


# --------------------------------------------------------------------- U-Net

def _double_conv(cin: int, cout: int) -> nn.Sequential:
    return nn.Sequential(
        nn.Conv2d(cin, cout, 3, padding=1), nn.ReLU(inplace=True),
        nn.Conv2d(cout, cout, 3, padding=1), nn.ReLU(inplace=True),
    )


class UNet(nn.Module):
    def __init__(self, channels=(32, 64, 128, 256, 512), in_channels: int = 1):
        super().__init__()
        channels = list(channels)
        self.encoder = nn.ModuleList()
        c = in_channels
        for width in channels:
            self.encoder.append(_double_conv(c, width))
            c = width
        self.upconvs = nn.ModuleList()
        self.decoder = nn.ModuleList()
        for width in reversed(channels[:-1]):
            self.upconvs.append(nn.ConvTranspose2d(c, width, 2, stride=2))
            self.decoder.append(_double_conv(2 * width, width))
            c = width
        self.head = nn.Conv2d(c, 1, 1)

    def forward(self, x):
        skips = []
        for i, block in enumerate(self.encoder):
            x = block(x)
            if i < len(self.encoder) - 1:
                skips.append(x)
                x = F.max_pool2d(x, 2)
        for up, block in zip(self.upconvs, self.decoder):
            x = block(torch.cat([up(x), skips.pop()], dim=1))
        return torch.sigmoid(self.head(x))


# ---------------------------------------------------------------- Dense U-Net

class DenseLayer(nn.Module):
    """BN-ReLU-1x1 conv-BN-ReLU-3x3 conv; output is the input with
    ``growth`` new channels concatenated."""

    def __init__(self, cin: int, growth: int, bn_size: int = DENSE_BN_SIZE):
        super().__init__()
        self.body = nn.Sequential(
            nn.BatchNorm2d(cin), nn.ReLU(inplace=True),
            nn.Conv2d(cin, bn_size * growth, 1, bias=False),
            nn.BatchNorm2d(bn_size * growth), nn.ReLU(inplace=True),
            nn.Conv2d(bn_size * growth, growth, 3, padding=1, bias=False),
        )

    def forward(self, x):
        return torch.cat([x, self.body(x)], dim=1)


class DenseBlock(nn.Sequential):
    def __init__(self, n_layers: int, cin: int, growth: int):
        super().__init__(*[DenseLayer(cin + i * growth, growth) for i in range(n_layers)])
        self.out_channels = cin + n_layers * growth


class Transition(nn.Sequential):
    def __init__(self, cin: int, cout: int):
        super().__init__(
            nn.BatchNorm2d(cin), nn.ReLU(inplace=True),
            nn.Conv2d(cin, cout, 1, bias=False),
            nn.AvgPool2d(2, stride=2),
        )


class DenseUNet(nn.Module):
    """DenseNet-121 encoder (no classifier) with a five-stage dense decoder.

    The stem downsamples by 4 and every transition by 2, so the bottleneck is
    at 1/32 resolution. Each decoder stage is a stride-2 transposed conv whose
    width equals the skip it is concatenated with, followed by a single dense
    layer. The deepest stage has no encoder skip at full resolution.
    """

    def __init__(self, block_sizes=(6, 12, 24, 16), growth: int = 32,
                 up_growth=(16, 24, 12, 6, 6), in_channels: int = 1):
        super().__init__()
        if len(up_growth) != len(block_sizes) + 1:
            raise ValueError("need one decoder growth rate per encoder resolution")
        self.stem = nn.Sequential(
            nn.Conv2d(in_channels, DENSE_STEM, 7, stride=2, padding=3, bias=False),
            nn.BatchNorm2d(DENSE_STEM), nn.ReLU(inplace=True),
        )
        self.pool = nn.MaxPool2d(3, stride=2, padding=1)
        self.blocks = nn.ModuleList()
        self.transitions = nn.ModuleList()
        c = DENSE_STEM
        skip_widths = [DENSE_STEM]
        for i, n in enumerate(block_sizes):
            block = DenseBlock(n, c, growth)
            self.blocks.append(block)
            c = block.out_channels
            if i < len(block_sizes) - 1:
                skip_widths.append(c)
                self.transitions.append(Transition(c, int(c * DENSE_COMPRESSION)))
                c = int(c * DENSE_COMPRESSION)
        self.bottleneck = nn.Sequential(nn.BatchNorm2d(c), nn.ReLU(inplace=True))

        # decoder skips run deepest first; the final stage has none
        targets = list(reversed(skip_widths)) + [None]
        self.upconvs = nn.ModuleList()
        self.up_blocks = nn.ModuleList()
        for skip_c, g in zip(targets, up_growth):
            up_c = skip_c if skip_c is not None else DENSE_STEM // 2
            self.upconvs.append(nn.ConvTranspose2d(c, up_c, 2, stride=2))
            c = up_c + (skip_c or 0)
            self.up_blocks.append(DenseLayer(c, g))
            c += g
        self.head = nn.Sequential(
            nn.BatchNorm2d(c), nn.ReLU(inplace=True), nn.Conv2d(c, 1, 1),
        )

    def forward(self, x):
        x = self.stem(x)
        skips = [x]
        x = self.pool(x)
        for i, block in enumerate(self.blocks):
            x = block(x)
            if i < len(self.transitions):
                skips.append(x)
                x = self.transitions[i](x)
        x = self.bottleneck(x)
        for up, block in zip(self.upconvs, self.up_blocks):
            x = up(x)
            if skips:
                x = torch.cat([x, skips.pop()], dim=1)
            x = block(x)
        return torch.sigmoid(self.head(x))


# ---------------------------------------------------------------- builders

def build_unet(spec: ModelSpec, seed: int = 0) -> UNet:
    if spec.arch != "unet":
        raise ValueError("build_unet needs arch='unet'")
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        model = UNet(spec.unet_channels)
        _init_weights(model)
    model.spec = spec
    return model


def build_dense_unet(spec: ModelSpec, seed: int = 0) -> DenseUNet:
    if spec.arch != "dense_unet":
        raise ValueError("build_dense_unet needs arch='dense_unet'")
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        model = DenseUNet(spec.densenet_block_sizes, spec.densenet_growth, spec.up_growth_rates)
        _init_weights(model)
    model.spec = spec
    return model


def build_model(spec: ModelSpec, seed: int = 0) -> nn.Module:
    return build_unet(spec, seed) if spec.arch == "unet" else build_dense_unet(spec, seed)


def count_parameters(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters() if p.requires_grad)


def expected_parameter_count(spec: ModelSpec) -> int:
    """Trainable parameter count derived from the architecture description
    alone, layer by layer, without instantiating any module."""

    def conv(k, cin, cout, bias=True):
        return k * k * cin * cout + (cout if bias else 0)

    def bn(c):
        return 2 * c

    if spec.arch == "unet":
        total, c = 0, 1
        for w in spec.unet_channels:
            total += conv(3, c, w) + conv(3, w, w)
            c = w
        for w in reversed(spec.unet_channels[:-1]):
            total += conv(2, c, w) + conv(3, 2 * w, w) + conv(3, w, w)
            c = w
        return total + conv(1, c, 1)

    def dense_layer(cin, g):
        return bn(cin) + conv(1, cin, DENSE_BN_SIZE * g, False) + bn(DENSE_BN_SIZE * g) \
            + conv(3, DENSE_BN_SIZE * g, g, False)

    g = spec.densenet_growth
    total = conv(7, 1, DENSE_STEM, False) + bn(DENSE_STEM)
    c, skips = DENSE_STEM, [DENSE_STEM]
    for i, n in enumerate(spec.densenet_block_sizes):
        for j in range(n):
            total += dense_layer(c + j * g, g)
        c += n * g
        if i < len(spec.densenet_block_sizes) - 1:
            skips.append(c)
            total += bn(c) + conv(1, c, c // 2, False)
            c //= 2
    total += bn(c)
    for skip_c, gu in zip(list(reversed(skips)) + [None], spec.up_growth_rates):
        up_c = skip_c if skip_c is not None else DENSE_STEM // 2
        total += conv(2, c, up_c)
        c = up_c + (skip_c or 0)
        total += dense_layer(c, gu)
        c += gu
    return total + bn(c) + conv(1, c, 1)


# ---------------------------------------------------------------- inference

def default_device() -> torch.device:
    """Device named by ``$TONGUETRACK_DEVICE`` (e.g. ``cpu``, ``cuda:0``); CPU if unset."""
    return torch.device(os.environ.get(DEVICE_ENV, "cpu"))


def model_device(model: nn.Module) -> torch.device:
    return next(model.parameters()).device


def _check_weights(model: nn.Module) -> None:
    if getattr(model, "spec", None) is None:
        raise ValueError("model has no ModelSpec attached; build it with build_model()")
    for name, p in model.named_parameters():
        if not torch.isfinite(p).all():
            raise ValueError(f"parameter {name} is uninitialised or non-finite")


@torch.no_grad()
def predict_batch(model: nn.Module, frames: np.ndarray) -> np.ndarray:
    """Heatmaps for a ``(N, S, S)`` stack of frames already at the model size."""
    _check_weights(model)
    size = model.spec.input_size
    frames = np.asarray(frames, dtype=np.float32)
    if frames.ndim != 3 or frames.shape[1:] != (size, size):
        raise ValueError(f"expected frames of shape (N, {size}, {size}), got {frames.shape}")
    model.eval()
    out = model(torch.from_numpy(frames).unsqueeze(1).to(model_device(model)))
    return out[:, 0].cpu().numpy()


def predict_heatmap(model: nn.Module, frame: np.ndarray) -> np.ndarray:
    """Heatmap for one grayscale frame in [0, 1] of the model's input size."""
    frame = np.asarray(frame, dtype=np.float32)
    if frame.ndim != 2:
        raise ValueError(f"expected a 2-D frame, got shape {frame.shape}")
    return predict_batch(model, frame[None])[0]


# ---------------------------------------------------------------- checkpoints

@dataclass
class Checkpoint:
    spec: ModelSpec
    weights: dict
    preprocessing: dict = field(default_factory=dict)
    training_meta: dict = field(default_factory=dict)

    def build(self) -> nn.Module:
        model = build_model(self.spec)
        try:
            model.load_state_dict(self.weights, strict=True)
        except RuntimeError as err:
            raise ValueError(f"checkpoint weights do not match the model spec: {err}") from err
        model.eval()
        return model


def make_checkpoint(model: nn.Module, training_meta: dict | None = None) -> Checkpoint:
    spec = model.spec
    weights = {k: v.detach().cpu().clone() for k, v in model.state_dict().items()}
    bn = next((m for m in model.modules() if isinstance(m, nn.BatchNorm2d)), None)
    pre = {"input_size": spec.input_size, "intensity_range": [0.0, 1.0]}
    if bn is not None:
        pre["batchnorm"] = {"momentum": bn.momentum, "eps": bn.eps}
    return Checkpoint(spec, weights, pre, dict(training_meta or {}))


def save_checkpoint(ckpt: Checkpoint, path) -> Path:
    """Write ``<path>.pt`` (state dict) and the ``<path>.json`` sidecar."""
    path = Path(path)
    if path.suffix in (".pt", ".json"):
        path = path.with_suffix("")
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(ckpt.weights, path.with_suffix(".pt"))
    sidecar = {"spec": ckpt.spec.to_dict(), "preprocessing": ckpt.preprocessing,
               "training_meta": ckpt.training_meta}
    path.with_suffix(".json").write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")
    return path.with_suffix(".pt")


def load_checkpoint(path) -> tuple[nn.Module, Checkpoint]:
    path = Path(path)
    if path.is_dir():
        path = path / "model"
    if path.suffix in (".pt", ".json"):
        path = path.with_suffix("")
    sidecar = json.loads(path.with_suffix(".json").read_text())
    weights = torch.load(path.with_suffix(".pt"), map_location="cpu", weights_only=True)
    ckpt = Checkpoint(ModelSpec.from_dict(sidecar["spec"]), weights,
                      sidecar.get("preprocessing", {}), sidecar.get("training_meta", {}))
    return ckpt.build(), ckpt
