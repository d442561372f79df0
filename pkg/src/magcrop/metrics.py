"""Referring-segmentation and word-overlap metrics.

Mask metrics reduce a per-sample IoU two ways: MIoU averages the
per-sample values, OIoU pools intersections and unions over the whole
set before dividing (large samples dominate). P@0.5 counts samples at
or above IoU 0.5.

Convention: two empty masks count as IoU 1 (a correct rejection). This
is pinned here, not universal, and shifts MIoU on rejection-style sets.
"""

from __future__ import annotations

import string
from dataclasses import dataclass

import numpy as np

from .errors import EmptyEvaluation, EmptyGroundTruth, SizeMismatch


@dataclass(frozen=True)
class MetricReport:
    n_samples: int
    p_at_50: float
    oiou: float
    miou: float

    def lines(self) -> list[str]:
        return [
            f"samples {self.n_samples:>10d}",
            f"P@0.5   {self.p_at_50:>10.4f}",
            f"OIoU    {self.oiou:>10.4f}",
            f"MIoU    {self.miou:>10.4f}",
        ]


def _as_mask(m, what: str) -> np.ndarray:
    arr = np.asarray(m)
    if arr.ndim != 2:
        raise SizeMismatch(f"{what} must be a 2D mask")
    return arr.astype(bool)


def iou(pred, gt) -> float:
    """Intersection over union; 1.0 when both masks are empty."""
    p = _as_mask(pred, "prediction")
    g = _as_mask(gt, "ground truth")
    if p.shape != g.shape:
        raise SizeMismatch(f"mask shapes differ: {p.shape} vs {g.shape}")
    union = int(np.logical_or(p, g).sum())
    if union == 0:
        return 1.0
    return int(np.logical_and(p, g).sum()) / union


def evaluate(pairs) -> MetricReport:
    """Aggregate (prediction, ground truth) pairs into a MetricReport."""
    inter_total = 0
    union_total = 0
    ious = []
    for pred, gt in pairs:
        p = _as_mask(pred, "prediction")
        g = _as_mask(gt, "ground truth")
        if p.shape != g.shape:
            raise SizeMismatch(f"mask shapes differ: {p.shape} vs {g.shape}")
        inter = int(np.logical_and(p, g).sum())
        union = int(np.logical_or(p, g).sum())
        inter_total += inter
        union_total += union
        ious.append(1.0 if union == 0 else inter / union)
    if not ious:
        raise EmptyEvaluation("no mask pairs to evaluate")
    return MetricReport(
        n_samples=len(ious),
        p_at_50=sum(1 for v in ious if v >= 0.5) / len(ious),
        oiou=1.0 if union_total == 0 else inter_total / union_total,
        miou=sum(ious) / len(ious),
    )


_PUNCT_TABLE = str.maketrans("", "", string.punctuation)


def _word_set(label: str) -> set[str]:
    return set(label.lower().translate(_PUNCT_TABLE).split())


def siou(pred_label: str, gt_label: str) -> float:
    """Word-set intersection over union between two labels."""
    gt_words = _word_set(gt_label)
    if not gt_words:
        raise EmptyGroundTruth("ground-truth label has no words")
    pred_words = _word_set(pred_label)
    union = pred_words | gt_words
    return len(pred_words & gt_words) / len(union)
