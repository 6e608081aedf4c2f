"""Datasets: splitting, subsampling, paired augmentation, synthetic frames, manifests."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree
from skimage.transform import resize

from .contour import (Contour, N_CANONICAL, load_frame_png, read_annotations,
                      resample_contour, save_frame_png, write_annotation_json)

SPLITS = ("train", "val", "test", "all")


@dataclass
class Dataset:
    """Frames (``(n, S, S)`` float32 in [0, 1]) paired with one contour each."""

    frames: np.ndarray
    contours: list
    split: str = "all"
    image_size: int | None = None

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float32)
        if self.frames.ndim != 3:
            raise ValueError("frames must be a (n, height, width) stack")
        if len(self.contours) != len(self.frames):
            raise ValueError("every frame needs exactly one annotation")
        if self.split not in SPLITS:
            raise ValueError(f"split must be one of {SPLITS}")
        if self.image_size is None:
            self.image_size = self.frames.shape[2]

    def __len__(self) -> int:
        return len(self.frames)

    @property
    def frame_ids(self) -> list:
        return [c.frame_id for c in self.contours]

    def subset(self, indices, split: str | None = None) -> "Dataset":
        idx = np.asarray(indices, dtype=int)
        return Dataset(self.frames[idx], [self.contours[i] for i in idx],
                       split or self.split, self.image_size)

    def resized(self, size: int) -> "Dataset":
        """Rescale frames (bilinear) and contour coordinates to ``size x size``."""
        h, w = self.frames.shape[1:]
        if (h, w) == (size, size):
            return self
        frames = np.stack([resize(f, (size, size), order=1, anti_aliasing=size < h,
                                  preserve_range=True) for f in self.frames]) if len(self) else \
            np.zeros((0, size, size), np.float32)
        contours = [c.scaled(size / w, size / h) for c in self.contours]
        return Dataset(frames, contours, self.split, size)


def split_indices(n: int, fractions=(0.45, 0.05, 0.50), seed: int = 0):
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3 or any(f < 0 for f in fractions) or abs(sum(fractions) - 1) > 1e-9:
        raise ValueError(f"fractions must be three non-negative numbers summing to 1, got {fractions}")
    if n < 3:
        raise ValueError("need at least 3 items to split")
    perm = np.random.default_rng(seed).permutation(n)
    n_train = min(n, round(fractions[0] * n))
    n_val = min(n - n_train, round(fractions[1] * n))
    return perm[:n_train], perm[n_train:n_train + n_val], perm[n_train + n_val:]


def split_dataset(dataset: Dataset, fractions=(0.45, 0.05, 0.50), seed: int = 0):
    """Random disjoint train/val/test partition; sizes are rounded shares."""
    parts = split_indices(len(dataset), fractions, seed)
    return tuple(dataset.subset(np.sort(ix), name) for ix, name in zip(parts, ("train", "val", "test")))


def subsample_training(dataset: Dataset, fraction: float, seed: int = 0) -> Dataset:
    """Random subset of ``round(fraction * n)`` items (at least one).

    Subsets are prefixes of a single seeded shuffle, so for a fixed seed a
    smaller fraction always yields a subset of a larger one.
    """
    if not 0 < fraction <= 1:
        raise ValueError("fraction must lie in (0, 1]")
    k = max(1, round(fraction * len(dataset)))
    perm = np.random.default_rng(seed).permutation(len(dataset))
    return dataset.subset(np.sort(perm[:k]))


# ---------------------------------------------------------------- augmentation

@dataclass
class AugmentationConfig:
    hflip: bool = True
    rotation_deg: tuple = (-15.0, 15.0)
    zoom: tuple = (0.9, 1.1)
    shift_frac: tuple = (-0.1, 0.1)
    seed: int = 0

    def __post_init__(self):
        self.rotation_deg = tuple(self.rotation_deg)
        self.zoom = tuple(self.zoom)
        self.shift_frac = tuple(self.shift_frac)
        lo, hi = self.rotation_deg
        if not -90 <= lo <= hi <= 90:
            raise ValueError("rotation range must lie within [-90, 90]")
        if not 0 < self.zoom[0] <= self.zoom[1]:
            raise ValueError("zoom range must be strictly positive")
        if self.shift_frac[0] > self.shift_frac[1]:
            raise ValueError("shift range is inverted")


@dataclass(frozen=True)
class AffineParams:
    flip: bool = False
    angle_deg: float = 0.0
    zoom: float = 1.0
    shift_x: float = 0.0  # pixels
    shift_y: float = 0.0

    @property
    def is_identity(self) -> bool:
        return not self.flip and self.angle_deg == 0 and self.zoom == 1 \
            and self.shift_x == 0 and self.shift_y == 0


def draw_augmentation(cfg: AugmentationConfig, rng: np.random.Generator,
                      shape: tuple[int, int]) -> AffineParams:
    h, w = shape
    flip = bool(cfg.hflip and rng.random() < 0.5)
    return AffineParams(
        flip=flip,
        angle_deg=float(rng.uniform(*cfg.rotation_deg)),
        zoom=float(rng.uniform(*cfg.zoom)),
        shift_x=float(rng.uniform(*cfg.shift_frac) * w),
        shift_y=float(rng.uniform(*cfg.shift_frac) * h),
    )


def affine_matrix(params: AffineParams, shape: tuple[int, int]) -> np.ndarray:
    """Homogeneous 3x3 map taking source (x, y) to augmented (x, y).

    Flip, rotation and zoom act about the image centre; the shift is applied
    last.
    """
    h, w = shape
    cx, cy = (w - 1) / 2, (h - 1) / 2
    to_centre = np.array([[1, 0, -cx], [0, 1, -cy], [0, 0, 1]], float)
    back = np.array([[1, 0, cx + params.shift_x], [0, 1, cy + params.shift_y], [0, 0, 1]], float)
    flip = np.diag([-1.0 if params.flip else 1.0, 1.0, 1.0])
    t = math.radians(params.angle_deg)
    rot = np.array([[math.cos(t), -math.sin(t), 0], [math.sin(t), math.cos(t), 0], [0, 0, 1]])
    zoom = np.diag([params.zoom, params.zoom, 1.0])
    return back @ rot @ zoom @ flip @ to_centre


def apply_affine(image: np.ndarray, params: AffineParams) -> np.ndarray:
    """Warp an image with bilinear interpolation; uncovered pixels become 0."""
    image = np.asarray(image)
    if params.is_identity:
        return image.copy()
    inv = np.linalg.inv(affine_matrix(params, image.shape))
    # scipy indexes (row, col) = (y, x): permute the (x, y) matrix accordingly
    perm = np.array([[0, 1], [1, 0]])
    matrix = perm @ inv[:2, :2] @ perm
    offset = perm @ inv[:2, 2]
    return ndimage.affine_transform(image, matrix, offset, order=1, mode="constant", cval=0.0)


def transform_points(points: np.ndarray, params: AffineParams, shape: tuple[int, int]) -> np.ndarray:
    pts = np.asarray(points, dtype=np.float64)
    m = affine_matrix(params, shape)
    return pts @ m[:2, :2].T + m[:2, 2]


def augment_pair(frame: np.ndarray, mask: np.ndarray, cfg: AugmentationConfig,
                 rng: np.random.Generator):
    """Apply one random geometric transform identically to a frame and its mask."""
    frame, mask = np.asarray(frame), np.asarray(mask)
    if frame.shape != mask.shape:
        raise ValueError(f"frame {frame.shape} and mask {mask.shape} differ in shape")
    params = draw_augmentation(cfg, rng, frame.shape)
    out_frame = apply_affine(frame, params).astype(frame.dtype, copy=False)
    out_mask = np.clip(apply_affine(mask, params), 0.0, 1.0)
    return out_frame, out_mask


# ---------------------------------------------------------------- synthetic data

@dataclass
class SyntheticConfig:
    """Tongue-like ultrasound frames. Lengths are fractions of the image size."""

    n_frames: int = 200
    image_size: int = 128
    noise: float = 0.4
    distractor_edges: int = 1
    arc_height: tuple = (0.12, 0.28)
    half_span: tuple = (0.28, 0.40)
    apex_y: tuple = (0.28, 0.48)
    wiggle: tuple = (0.0, 0.025)
    seed: int = 0

    def __post_init__(self):
        if self.n_frames < 1:
            raise ValueError("n_frames must be at least 1")
        if self.image_size < 16:
            raise ValueError("image_size must be at least 16")
        if self.noise < 0 or self.distractor_edges < 0:
            raise ValueError("noise and distractor_edges must be non-negative")
        for name in ("arc_height", "half_span", "apex_y", "wiggle"):
            setattr(self, name, tuple(getattr(self, name)))

    def to_dict(self) -> dict:
        return asdict(self)


def _tongue_curve(cfg: SyntheticConfig, rng: np.random.Generator, n: int = 400) -> np.ndarray:
    s = cfg.image_size
    half = rng.uniform(*cfg.half_span) * s
    xc = s / 2 + rng.uniform(-0.06, 0.06) * s
    apex = rng.uniform(*cfg.apex_y) * s
    height = rng.uniform(*cfg.arc_height) * s
    amp = rng.uniform(*cfg.wiggle) * s
    freq = rng.uniform(0.5, 1.5)
    phase = rng.uniform(0, 2 * np.pi)
    u = np.linspace(-1, 1, n)
    x = xc + half * u
    y = apex + height * u ** 2 + amp * np.sin(np.pi * freq * (u + 1) + phase)
    x = np.clip(x, 1, s - 2)
    y = np.clip(y, 1, s - 2)
    return np.column_stack([x, y])


def _distractor_curve(cfg: SyntheticConfig, rng: np.random.Generator, tongue: cKDTree,
                      n: int = 100) -> np.ndarray | None:
    s = cfg.image_size
    for _ in range(50):
        length = rng.uniform(0.10, 0.25) * s
        cx, cy = rng.uniform(0.1 * s, 0.9 * s, size=2)
        angle = rng.uniform(-0.5, 0.5)
        bend = rng.uniform(-0.3, 0.3) * length
        u = np.linspace(-0.5, 0.5, n)
        local = np.column_stack([u * length, bend * (4 * u ** 2 - 1) / 2])
        rot = np.array([[np.cos(angle), -np.sin(angle)], [np.sin(angle), np.cos(angle)]])
        pts = local @ rot.T + [cx, cy]
        if pts.min() < 1 or pts.max() > s - 2:
            continue
        if tongue.query(pts)[0].min() >= 0.12 * s:
            return pts
    return None


def render_frame(curve: np.ndarray, distractors: Sequence[np.ndarray], size: int,
                 noise: float, rng: np.random.Generator, distractor_gain=()) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size]
    pix = np.column_stack([xx.ravel(), yy.ravel()]).astype(float)
    width = max(1.0, 1.2 * size / 128)

    dist = cKDTree(curve).query(pix)[0].reshape(size, size)
    ridge = np.exp(-dist ** 2 / (2 * width ** 2))
    # tissue texture below the surface, dark air above it
    surface_y = np.interp(xx, curve[:, 0], curve[:, 1], left=np.nan, right=np.nan)
    below = np.nan_to_num(yy - surface_y, nan=-1.0)
    tissue = np.where(below > 0, 0.25 * np.exp(-below / (0.15 * size)), 0.0)
    img = 0.04 + tissue + ridge

    for pts, gain in zip(distractors, distractor_gain):
        d = cKDTree(pts).query(pix)[0].reshape(size, size)
        img = np.maximum(img, gain * np.exp(-d ** 2 / (2 * width ** 2)))

    if noise > 0:
        k = 1.0 / noise ** 2
        img = img * rng.gamma(k, 1.0 / k, size=img.shape)
    return np.clip(img, 0, 1).astype(np.float32)


def generate_synthetic(cfg: SyntheticConfig) -> Dataset:
    """Seeded synthetic frames with their 100-point ground-truth contours.

    Each frame holds a bright ridge along a downward-opening arc with a
    low-frequency wiggle, a dim tissue band under it, ``distractor_edges``
    fainter arcs away from the tongue, and multiplicative gamma speckle with
    standard deviation ``noise``.
    """
    rng = np.random.default_rng(cfg.seed)
    frames, contours = [], []
    width = len(str(cfg.n_frames - 1))
    for i in range(cfg.n_frames):
        curve = _tongue_curve(cfg, rng)
        tree = cKDTree(curve)
        distractors = [d for d in (_distractor_curve(cfg, rng, tree)
                                   for _ in range(cfg.distractor_edges)) if d is not None]
        gains = rng.uniform(0.5, 0.8, size=len(distractors))
        frames.append(render_frame(curve, distractors, cfg.image_size, cfg.noise, rng, gains))
        fid = f"frame_{i:0{max(4, width)}d}"
        contours.append(resample_contour(Contour(curve, fid), N_CANONICAL))
    return Dataset(np.stack(frames), contours, "all", cfg.image_size)


# ---------------------------------------------------------------- manifests

def write_dataset(dataset: Dataset, out_dir, splits: dict | None = None) -> Path:
    """Write ``frames/*.png``, ``annotations/*.json`` and ``manifest.json``.

    ``splits`` optionally maps frame id to a split tag; otherwise the
    dataset's own split is used.
    """
    out = Path(out_dir)
    (out / "frames").mkdir(parents=True, exist_ok=True)
    (out / "annotations").mkdir(parents=True, exist_ok=True)
    items = []
    for frame, contour in zip(dataset.frames, dataset.contours):
        fid = contour.frame_id
        save_frame_png(out / "frames" / f"{fid}.png", frame)
        write_annotation_json(out / "annotations" / f"{fid}.json", contour)
        items.append({"frame_id": fid, "frame": f"frames/{fid}.png",
                      "annotation": f"annotations/{fid}.json",
                      "split": (splits or {}).get(fid, dataset.split)})
    manifest = {"image_size": dataset.image_size, "items": items}
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return path


def read_manifest(path) -> dict[str, Dataset]:
    """Load a manifest into one ``Dataset`` per split tag present."""
    path = Path(path)
    root = path.parent
    manifest = json.loads(path.read_text())
    groups: dict[str, list] = {}
    for item in manifest["items"]:
        groups.setdefault(item.get("split", "all"), []).append(item)
    out = {}
    for split, items in groups.items():
        frames, contours = [], []
        for item in items:
            frames.append(load_frame_png(root / item["frame"]))
            found = read_annotations(root / item["annotation"])
            fid = item.get("frame_id")
            match = [c for c in found if c.frame_id == fid] or found[:1]
            if not match:
                raise ValueError(f"no annotation for {fid}")
            c = match[0]
            c.frame_id = fid or c.frame_id
            contours.append(c)
        out[split] = Dataset(np.stack(frames), contours, split, manifest.get("image_size"))
    return out
