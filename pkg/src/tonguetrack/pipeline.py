"""Frame-level extraction and dataset-level evaluation with a trained model."""
from __future__ import annotations

import time

import numpy as np
from skimage.transform import resize

from .contour import Contour
from .data import Dataset
from .metrics import EvalReport, evaluate_contours
from .models import predict_batch
from .postprocess import NoContourError, PostprocessConfig, extract_contour


def to_model_input(frame: np.ndarray, size: int) -> np.ndarray:
    frame = np.asarray(frame, dtype=np.float32)
    if frame.shape == (size, size):
        return frame
    return resize(frame, (size, size), order=1, anti_aliasing=size < frame.shape[0],
                  preserve_range=True).astype(np.float32)


def contour_from_heatmap(heatmap: np.ndarray, frame_shape: tuple[int, int],
                         pp: PostprocessConfig, frame_id=None) -> Contour:
    """Trace a heatmap and express the contour in the original frame's pixels."""
    contour = extract_contour(heatmap, pp, frame_id)
    size = heatmap.shape[0]
    h, w = frame_shape
    if (h, w) != heatmap.shape:
        contour = contour.scaled(w / size, h / size).clamp(w, h)
    return contour


def extract_frames(model, frames, pp: PostprocessConfig = PostprocessConfig(), frame_ids=None,
                   batch_size: int = 16) -> tuple[dict, dict]:
    """Contours for a sequence of frames.

    Returns ``(contours, failures)``: frame id -> ``Contour`` and frame id ->
    error message. Failures on one frame never stop the batch.
    """
    size = model.spec.input_size
    frame_ids = list(frame_ids) if frame_ids is not None else list(range(len(frames)))
    contours, failures = {}, {}
    for start in range(0, len(frames), batch_size):
        chunk = frames[start:start + batch_size]
        heatmaps = predict_batch(model, np.stack([to_model_input(f, size) for f in chunk]))
        for fid, frame, hm in zip(frame_ids[start:start + batch_size], chunk, heatmaps):
            try:
                contours[fid] = contour_from_heatmap(hm, np.shape(frame), pp, fid)
            except NoContourError as err:
                failures[fid] = str(err)
    return contours, failures


def evaluate_model(model, dataset: Dataset, pp: PostprocessConfig = PostprocessConfig(),
                   px_per_mm: float | None = None) -> EvalReport:
    """MSD of extracted contours against the dataset's annotations."""
    ids = [c.frame_id if c.frame_id is not None else i for i, c in enumerate(dataset.contours)]
    gold = dict(zip(ids, dataset.contours))
    pred, _ = extract_frames(model, dataset.frames, pp, ids)
    scale = px_per_mm if px_per_mm is not None else dataset.contours[0].px_per_mm
    return evaluate_contours(pred, gold, scale)


def frame_latency(model, frames, pp: PostprocessConfig = PostprocessConfig()) -> np.ndarray:
    """Seconds spent per frame on single-frame extraction (inference + tracing)."""
    size = model.spec.input_size
    out = []
    for frame in frames:
        t0 = time.perf_counter()
        hm = predict_batch(model, to_model_input(frame, size)[None])[0]
        try:
            contour_from_heatmap(hm, np.shape(frame), pp)
        except NoContourError:
            pass
        out.append(time.perf_counter() - t0)
    return np.asarray(out)
