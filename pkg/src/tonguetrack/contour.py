"""Contour geometry and conversion between contours and probability masks.

Coordinates are (x, y) in pixels with pixel centres on integer positions:
``x`` indexes columns and ``y`` indexes rows, so a heatmap value for the
point (x, y) lives at ``heatmap[y, x]``.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image

N_CANONICAL = 100
DEFAULT_PX_PER_MM = 4.0  # 1 px ~ 0.25 mm


@dataclass
class Contour:
    """Ordered sequence of (x, y) points tracing a tongue surface."""

    points: np.ndarray
    frame_id: str | None = None
    px_per_mm: float = DEFAULT_PX_PER_MM
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim == 1 and pts.size == 2:
            pts = pts.reshape(1, 2)
        if pts.ndim != 2 or pts.shape[1] != 2:
            raise ValueError(f"contour points must have shape (n, 2), got {pts.shape}")
        if pts.shape[0] == 0:
            raise ValueError("contour is empty")
        if not np.all(np.isfinite(pts)):
            raise ValueError("contour has non-finite coordinates")
        self.points = pts

    def __len__(self) -> int:
        return self.points.shape[0]

    @property
    def x(self) -> np.ndarray:
        return self.points[:, 0]

    @property
    def y(self) -> np.ndarray:
        return self.points[:, 1]

    def replace(self, points) -> "Contour":
        return Contour(points, self.frame_id, self.px_per_mm, dict(self.meta))

    def canonical(self) -> "Contour":
        """Points sorted by increasing x (stable, so ties keep input order)."""
        order = np.argsort(self.points[:, 0], kind="stable")
        return self.replace(self.points[order])

    def clamp(self, width: int, height: int) -> "Contour":
        pts = self.points.copy()
        pts[:, 0] = np.clip(pts[:, 0], 0, width - 1)
        pts[:, 1] = np.clip(pts[:, 1], 0, height - 1)
        return self.replace(pts)

    def scaled(self, sx: float, sy: float | None = None) -> "Contour":
        """Map coordinates onto a grid resized by ``(sx, sy)``.

        Pixel centres are kept aligned, i.e. ``x' = (x + 0.5) * sx - 0.5``.
        """
        sy = sx if sy is None else sy
        pts = self.points.copy()
        pts[:, 0] = (pts[:, 0] + 0.5) * sx - 0.5
        pts[:, 1] = (pts[:, 1] + 0.5) * sy - 0.5
        return self.replace(pts)


def as_points(contour) -> np.ndarray:
    if isinstance(contour, Contour):
        return contour.points
    return Contour(contour).points


@dataclass(frozen=True)
class MaskConfig:
    sigma: float = 4.0
    floor_threshold: float = 0.4

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")
        if not 0 <= self.floor_threshold < 1:
            raise ValueError("floor_threshold must lie in [0, 1)")


def contour_to_mask(contour, cfg: MaskConfig = MaskConfig(), width: int = 128,
                    height: int = 128) -> np.ndarray:
    """Render a contour as a probability heatmap of shape ``(height, width)``.

    Every point contributes an unnormalised isotropic Gaussian of width
    ``cfg.sigma``. The summed field is divided by its maximum, and values
    below ``cfg.floor_threshold`` are set to zero; the rest are kept as is.
    """
    if width <= 0 or height <= 0:
        raise ValueError("mask dimensions must be positive")
    pts = as_points(contour)
    two_s2 = 2.0 * cfg.sigma ** 2
    # the kernel is separable: field[y, x] = sum_i gy[i, y] * gx[i, x]
    gx = np.exp(-(np.arange(width)[None, :] - pts[:, 0:1]) ** 2 / two_s2)
    gy = np.exp(-(np.arange(height)[None, :] - pts[:, 1:2]) ** 2 / two_s2)
    field_ = gy.T @ gx
    peak = field_.max()
    if peak <= 0:
        # every point is so far off-grid that the field underflows
        return np.zeros((height, width))
    mask = field_ / peak
    mask[mask < cfg.floor_threshold] = 0.0
    return mask


def resample_contour(contour, n_out: int = N_CANONICAL) -> Contour:
    """Resample to ``n_out`` points at equal arc-length spacing.

    The input is treated as a polyline in its given order; both endpoints are
    preserved exactly.
    """
    src = contour if isinstance(contour, Contour) else Contour(contour)
    if n_out < 2:
        raise ValueError("n_out must be at least 2")
    pts = src.points
    if len(pts) < 2:
        raise ValueError("need at least two points to resample")
    seg = np.hypot(*np.diff(pts, axis=0).T)
    arc = np.concatenate([[0.0], np.cumsum(seg)])
    total = arc[-1]
    if total <= 0:
        raise ValueError("degenerate contour: all points coincide")
    keep = np.concatenate([[True], seg > 0])  # drop repeated points so arc is strictly increasing
    arc, pts = arc[keep], pts[keep]
    target = np.linspace(0.0, total, n_out)
    out = np.column_stack([np.interp(target, arc, pts[:, 0]), np.interp(target, arc, pts[:, 1])])
    out[0], out[-1] = pts[0], pts[-1]
    return src.replace(out)


def arc_length(contour) -> float:
    return float(np.hypot(*np.diff(as_points(contour), axis=0).T).sum())


def px_to_mm(distance, px_per_mm: float = DEFAULT_PX_PER_MM):
    if not px_per_mm > 0:
        raise ValueError("px_per_mm must be positive")
    if np.ndim(distance):
        return np.asarray(distance, dtype=np.float64) / px_per_mm
    return float(distance) / px_per_mm


# ---------------------------------------------------------------- file formats

def _csv_header(n: int) -> list[str]:
    cols = ["frame_id"]
    for i in range(n):
        cols += [f"x{i}", f"y{i}"]
    return cols


def write_annotations_csv(path, contours: Sequence[Contour]) -> None:
    """One row per frame: ``frame_id, x0, y0, ..., x{n-1}, y{n-1}``."""
    contours = list(contours)
    n = len(contours[0]) if contours else N_CANONICAL
    if any(len(c) != n for c in contours):
        raise ValueError("all contours in one CSV must have the same length")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(_csv_header(n))
        for c in contours:
            writer.writerow([c.frame_id or ""] + [repr(float(v)) for v in c.points.ravel()])


def read_annotations_csv(path, px_per_mm: float = DEFAULT_PX_PER_MM) -> list[Contour]:
    out = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        xs = sorted((k for k in reader.fieldnames if k.startswith("x") and k[1:].isdigit()),
                    key=lambda k: int(k[1:]))
        if not xs:  # not an annotation table (e.g. a failures log)
            return out
        for row in reader:
            pts = [(float(row[k]), float(row["y" + k[1:]])) for k in xs]
            fid = row.get("frame_id") or None
            out.append(Contour(pts, fid, px_per_mm))
    return out


def write_annotation_json(path, contour: Contour) -> None:
    rec = {"frame_id": contour.frame_id, "points": contour.points.tolist()}
    Path(path).write_text(json.dumps(rec, indent=1) + "\n")


def read_annotation_json(path, px_per_mm: float = DEFAULT_PX_PER_MM) -> list[Contour]:
    """Accepts a bare array of ``[x, y]`` pairs, a ``{frame_id, points}``
    record, or a list of such records."""
    path = Path(path)
    data = json.loads(path.read_text())
    if isinstance(data, dict):
        data = [data]
    if data and isinstance(data[0], dict):
        return [Contour(r["points"], r.get("frame_id") or path.stem, px_per_mm) for r in data]
    return [Contour(data, path.stem, px_per_mm)]


def read_annotations(path, px_per_mm: float = DEFAULT_PX_PER_MM) -> list[Contour]:
    path = Path(path)
    if path.suffix.lower() == ".csv":
        return read_annotations_csv(path, px_per_mm)
    if path.suffix.lower() == ".json":
        return read_annotation_json(path, px_per_mm)
    raise ValueError(f"unsupported annotation format: {path.suffix}")


def read_annotation_dir(directory, px_per_mm: float = DEFAULT_PX_PER_MM) -> dict[str, Contour]:
    """All contours found in ``*.json`` / ``*.csv`` files, keyed by frame id."""
    found = {}
    for p in sorted(Path(directory).iterdir()):
        if p.suffix.lower() not in (".json", ".csv"):
            continue
        for c in read_annotations(p, px_per_mm):
            found[c.frame_id or p.stem] = c
    return found


def save_mask_png(path, heatmap: np.ndarray) -> None:
    values = np.clip(np.asarray(heatmap, dtype=np.float64), 0, 1)
    Image.fromarray(np.round(255 * values).astype(np.uint8), mode="L").save(path)


def load_mask_png(path) -> np.ndarray:
    return np.asarray(Image.open(path).convert("L"), dtype=np.float64) / 255.0


def save_frame_png(path, frame: np.ndarray) -> None:
    save_mask_png(path, frame)


def load_frame_png(path) -> np.ndarray:
    return load_mask_png(path).astype(np.float32)


