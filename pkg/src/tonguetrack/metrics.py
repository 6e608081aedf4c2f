"""Mean sum of distance (MSD) between contours, and evaluation reports."""
from __future__ import annotations

import csv
import json
import math
import statistics
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .contour import DEFAULT_PX_PER_MM, as_points, px_to_mm

EXCLUSION_POLICY = "frames without a detected contour are excluded from statistics and counted in n_failed"


def msd(u, v) -> float:
    """Symmetric mean nearest-point distance between two point sequences.

    ``(sum_i min_j |v_i - u_j| + sum_i min_j |u_i - v_j|) / (|U| + |V|)``;
    for equal lengths this is the usual ``1 / (2n)`` form. Distances are
    point-to-point, not point-to-segment.
    """
    a, b = as_points(u), as_points(v)
    dx = a[:, None, 0] - b[None, :, 0]
    dy = a[:, None, 1] - b[None, :, 1]
    d = np.sqrt(dx * dx + dy * dy)
    # fsum keeps the result independent of summation order
    return (math.fsum(d.min(axis=0)) + math.fsum(d.min(axis=1))) / (len(a) + len(b))


@dataclass
class Summary:
    mean: float
    std: float
    median: float
    max: float
    n: int

    def to_dict(self) -> dict:
        return {"mean": self.mean, "std": self.std, "median": self.median,
                "max": self.max, "n": self.n}


def summarize(values: Sequence[float]) -> Summary:
    """Mean, population std, median and max."""
    x = np.asarray(values, dtype=np.float64)
    if x.size == 0:
        raise ValueError("cannot summarise an empty list")
    vals = x.tolist()
    # statistics works in exact rationals, so the order of values never matters
    return Summary(statistics.mean(vals), statistics.pstdev(vals), float(np.median(x)),
                   float(x.max()), int(x.size))


def agreement_matrix(annotations: Mapping[str, Sequence]) -> dict:
    """Pairwise per-frame MSD statistics between annotators.

    ``annotations`` maps an annotator name to its contours. Contours are
    matched by ``frame_id`` when every contour has one, otherwise by
    position. Returns ``{"names", "mean", "std"}`` with square matrices.
    """
    names = list(annotations)
    keyed = {}
    for name in names:
        cs = list(annotations[name])
        ids = [getattr(c, "frame_id", None) for c in cs]
        keyed[name] = dict(zip(ids, cs)) if all(i is not None for i in ids) and len(set(ids)) == len(ids) \
            else dict(enumerate(cs))
    frames = set(keyed[names[0]]) if names else set()
    for name in names[1:]:
        if set(keyed[name]) != frames:
            raise ValueError(f"annotator {name!r} does not cover the same frames as {names[0]!r}")
    order = sorted(frames, key=str)
    k = len(names)
    mean, std = np.zeros((k, k)), np.zeros((k, k))
    for i in range(k):
        for j in range(i + 1, k):
            s = summarize([msd(keyed[names[i]][f], keyed[names[j]][f]) for f in order])
            mean[i, j] = mean[j, i] = s.mean
            std[i, j] = std[j, i] = s.std
    return {"names": names, "mean": mean, "std": std}


@dataclass
class EvalReport:
    per_frame: list  # (frame_id, msd_px, msd_mm)
    failed: list = field(default_factory=list)
    px_per_mm: float = DEFAULT_PX_PER_MM

    @property
    def n_failed(self) -> int:
        return len(self.failed)

    @property
    def aggregate(self) -> Summary | None:
        if not self.per_frame:
            return None
        return summarize([r[1] for r in self.per_frame])

    def to_dict(self) -> dict:
        agg = self.aggregate
        out = {"n_frames": len(self.per_frame), "n_failed": self.n_failed,
               "failed": list(self.failed), "px_per_mm": self.px_per_mm,
               "policy": EXCLUSION_POLICY}
        if agg is not None:
            out["msd_px"] = agg.to_dict()
            out["msd_mm"] = {k: (px_to_mm(v, self.px_per_mm) if k != "n" else v)
                             for k, v in agg.to_dict().items()}
        return out


def evaluate_contours(predicted: Mapping, gold: Mapping, px_per_mm: float = DEFAULT_PX_PER_MM) -> EvalReport:
    """Score predicted contours against gold ones, both keyed by frame id.

    Gold frames whose prediction is missing or ``None`` count as failures.
    """
    rows, failed = [], []
    for fid in sorted(gold, key=str):
        pred = predicted.get(fid)
        if pred is None:
            failed.append(fid)
            continue
        d = msd(pred, gold[fid])
        rows.append((fid, d, px_to_mm(d, px_per_mm)))
    return EvalReport(rows, failed, px_per_mm)


def write_report(report: EvalReport, out_dir, plot: bool = False) -> Path:
    """``per_frame.csv`` + ``summary.json`` (+ ``msd_boxplot.png`` if ``plot``)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "per_frame.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["frame_id", "msd_px", "msd_mm"])
        for fid, px, mm in report.per_frame:
            w.writerow([fid, repr(float(px)), repr(float(mm))])
    (out / "summary.json").write_text(json.dumps(report.to_dict(), indent=2) + "\n")
    if plot and report.per_frame:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt

        fig, ax = plt.subplots(figsize=(4, 4))
        ax.boxplot([r[1] for r in report.per_frame])
        ax.set_ylabel("MSD (px)")
        fig.tight_layout()
        fig.savefig(out / "msd_boxplot.png", dpi=100)
        plt.close(fig)
    return out
