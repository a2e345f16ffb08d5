"""IoU training loss and the J / F / J&F evaluation metrics.

Degenerate conventions: two empty masks give J = 1, F = 1 and loss 0.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, ParameterError

CSV_COLUMNS = ("sequence", "frame", "J", "F", "JF")


def _pair(a, b) -> tuple[np.ndarray, np.ndarray]:
    a, b = np.asarray(a), np.asarray(b)
    if a.shape[-2:] != b.shape[-2:]:
        raise DimensionError(f"mask shapes differ: {a.shape} vs {b.shape}")
    return a, b


def iou_loss(pred, gt):
    """``1 - sum(min(pred, gt)) / sum(max(pred, gt))`` over the last two axes."""
    pred, gt = _pair(pred, gt)
    pred = pred.astype(np.float64)
    gt = gt.astype(np.float64)
    inter = np.minimum(pred, gt).sum(axis=(-2, -1))
    union = np.maximum(pred, gt).sum(axis=(-2, -1))
    safe = np.where(union > 0, union, 1.0)
    loss = np.where(union > 0, 1.0 - inter / safe, 0.0)
    return float(loss) if np.ndim(loss) == 0 else loss


def region_j(pred_bin, gt) -> float:
    pred_bin, gt = _pair(pred_bin, gt)
    p, g = pred_bin.astype(bool), gt.astype(bool)
    union = np.count_nonzero(p | g)
    if union == 0:
        return 1.0
    return np.count_nonzero(p & g) / union


def f_measure(pred_bin, gt) -> float:
    """Harmonic mean of region precision and recall.

    Evaluated as ``2|P&G| / (|P| + |G|)``, the same value with a single rounding.
    """
    pred_bin, gt = _pair(pred_bin, gt)
    p, g = pred_bin.astype(bool), gt.astype(bool)
    total = np.count_nonzero(p) + np.count_nonzero(g)
    if total == 0:
        return 1.0
    return 2 * np.count_nonzero(p & g) / total


@dataclass
class MetricsRecord:
    frames: list = field(default_factory=list)  # (J, F) per frame
    j: float = 0.0
    f: float = 0.0
    jf: float = 0.0


def sequence_metrics(pairs, threshold: float = 0.5) -> MetricsRecord:
    """Per-frame J and F for ``(pred, gt)`` pairs; soft predictions are thresholded."""
    pairs = list(pairs)
    if not pairs:
        raise ParameterError("sequence_metrics needs at least one frame")
    frames = []
    for pred, gt in pairs:
        pred = np.asarray(pred)
        pb = pred >= threshold if pred.dtype != bool else pred
        frames.append((region_j(pb, gt), f_measure(pb, gt)))
    j = float(np.mean([x[0] for x in frames]))
    f = float(np.mean([x[1] for x in frames]))
    return MetricsRecord(frames, j, f, (j + f) / 2)


def metrics_csv(records: dict[str, MetricsRecord]) -> str:
    """CSV with columns ``sequence,frame,J,F,JF``.

    One row per frame, then a ``mean`` row per sequence; a final
    ``ALL,mean`` row averages the per-sequence means.
    """
    buf = io.StringIO()
    out = csv.writer(buf, lineterminator="\n")
    out.writerow(CSV_COLUMNS)
    for name, rec in records.items():
        for t, (j, f) in enumerate(rec.frames):
            out.writerow([name, t, f"{j:.6f}", f"{f:.6f}", f"{(j + f) / 2:.6f}"])
        out.writerow([name, "mean", f"{rec.j:.6f}", f"{rec.f:.6f}", f"{rec.jf:.6f}"])
    if records:
        j = float(np.mean([r.j for r in records.values()]))
        f = float(np.mean([r.f for r in records.values()]))
        out.writerow(["ALL", "mean", f"{j:.6f}", f"{f:.6f}", f"{(j + f) / 2:.6f}"])
    return buf.getvalue()
