"""Heatmap -> contour: threshold, Zhang-Suen thinning, column ordering, spline."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy import ndimage
from scipy.interpolate import UnivariateSpline

from .contour import Contour


class NoContourError(ValueError):
    """Raised when a heatmap holds too few foreground pixels to trace."""

    def __init__(self, msg: str = "no contour detected"):
        super().__init__(msg)


@dataclass
class PostprocessConfig:
    threshold: float = 0.5
    spline_smoothing: float | None = None  # None: number of input points
    n_points: int = 100
    component_policy: str = "largest"

    def __post_init__(self):
        if not 0 < self.threshold < 1:
            raise ValueError("threshold must lie in (0, 1)")
        if self.n_points < 2:
            raise ValueError("n_points must be at least 2")
        if self.spline_smoothing is not None and self.spline_smoothing < 0:
            raise ValueError("spline_smoothing must be >= 0")
        if self.component_policy not in ("largest", "all"):
            raise ValueError("component_policy must be 'largest' or 'all'")

    def to_dict(self) -> dict:
        return asdict(self)


def binarize(heatmap: np.ndarray, threshold: float = 0.5) -> np.ndarray:
    return np.asarray(heatmap) >= threshold


def _neighbours(img: np.ndarray):
    """P2..P9 of every pixel (N, NE, E, SE, S, SW, W, NW), zero outside."""
    p = np.pad(img, 1)
    h, w = img.shape
    at = lambda dy, dx: p[1 + dy:1 + dy + h, 1 + dx:1 + dx + w]
    return (at(-1, 0), at(-1, 1), at(0, 1), at(1, 1),
            at(1, 0), at(1, -1), at(0, -1), at(-1, -1))


def skeletonize(binary: np.ndarray) -> np.ndarray:
    """Zhang-Suen parallel thinning, iterated until nothing changes.

    Pixels outside the image count as background.
    """
    img = np.asarray(binary).astype(np.uint8)
    if img.ndim != 2:
        raise ValueError("skeletonize expects a 2-D image")
    img = img.copy()
    while True:
        changed = False
        for step in (0, 1):
            nb = _neighbours(img)
            p2, p3, p4, p5, p6, p7, p8, p9 = nb
            b = sum(n.astype(np.int16) for n in nb)
            ring = nb + (p2,)
            a = sum(((ring[k] == 0) & (ring[k + 1] == 1)).astype(np.int16) for k in range(8))
            if step == 0:
                c1, c2 = p2 & p4 & p6, p4 & p6 & p8
            else:
                c1, c2 = p2 & p4 & p8, p2 & p6 & p8
            delete = (img == 1) & (b >= 2) & (b <= 6) & (a == 1) & (c1 == 0) & (c2 == 0)
            if delete.any():
                img[delete] = 0
                changed = True
        if not changed:
            return img.astype(bool)


def order_skeleton(skeleton: np.ndarray, policy: str = "largest") -> Contour:
    """One point per occupied column at the mean row of the kept pixels."""
    sk = np.asarray(skeleton).astype(bool)
    if np.count_nonzero(sk) < 2:
        raise NoContourError()
    if policy == "largest":
        labels, n = ndimage.label(sk, structure=np.ones((3, 3), int))
        sizes = np.bincount(labels.ravel())[1:]
        sk = labels == (1 + int(np.argmax(sizes)))  # first label wins ties
    elif policy != "all":
        raise ValueError("policy must be 'largest' or 'all'")
    rows, cols = np.nonzero(sk)
    if len(rows) < 2:
        raise NoContourError()
    xs = np.unique(cols)
    ys = np.bincount(cols, weights=rows)[xs] / np.bincount(cols)[xs]
    return Contour(np.column_stack([xs, ys]).astype(float))


def fit_contour(points, cfg: PostprocessConfig = PostprocessConfig()) -> Contour:
    """Cubic smoothing spline ``y(x)`` evaluated at ``cfg.n_points`` evenly
    spaced x positions between the extreme columns.

    With fewer than four distinct x values the points are linearly
    interpolated instead and ``meta["fallback"]`` is set.
    """
    src = points if isinstance(points, Contour) else Contour(points)
    src = src.canonical()
    xs, inverse = np.unique(src.x, return_inverse=True)
    ys = np.bincount(inverse, weights=src.y) / np.bincount(inverse)
    xq = np.linspace(xs[0], xs[-1], cfg.n_points)
    meta = dict(src.meta)
    if len(xs) < 4:
        yq = np.interp(xq, xs, ys)
        meta["fallback"] = "linear"
    else:
        s = len(xs) if cfg.spline_smoothing is None else cfg.spline_smoothing
        yq = UnivariateSpline(xs, ys, k=3, s=s)(xq)
        meta["fallback"] = None
    return Contour(np.column_stack([xq, yq]), src.frame_id, src.px_per_mm, meta)


def extract_contour(heatmap: np.ndarray, cfg: PostprocessConfig = PostprocessConfig(),
                    frame_id: str | None = None) -> Contour:
    """Threshold, thin, order and spline a heatmap into ``cfg.n_points`` points."""
    heatmap = np.asarray(heatmap)
    h, w = heatmap.shape
    skeleton = skeletonize(binarize(heatmap, cfg.threshold))
    ordered = order_skeleton(skeleton, cfg.component_policy)
    ordered.frame_id = frame_id
    return fit_contour(ordered, cfg).clamp(w, h)
