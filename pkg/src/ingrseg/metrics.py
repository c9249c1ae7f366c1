"""Confusion-matrix accumulation and mIoU / mAcc / aAcc.

Counts are exact int64; ratios are computed in double precision only at
summarize time, so sharded accumulation + merge is bit-identical to
sequential accumulation.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from . import DataError, IGNORE_INDEX
from .masks import LabelMap


@dataclass(frozen=True)
class ConfusionMatrix:
    """counts[g][p] = pixels with ground truth g predicted p (IGNORE excluded)."""

    counts: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.counts, dtype=np.int64)
        if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
            raise DataError(f"confusion matrix must be square, got {arr.shape}")
        if (arr < 0).any():
            raise DataError("confusion matrix entries must be non-negative")
        arr = np.ascontiguousarray(arr)
        arr.setflags(write=False)
        object.__setattr__(self, "counts", arr)

    @property
    def num_classes(self) -> int:
        return self.counts.shape[0]

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @classmethod
    def zero(cls, num_classes: int) -> "ConfusionMatrix":
        return cls(np.zeros((num_classes, num_classes), dtype=np.int64))


@dataclass(frozen=True)
class MetricReport:
    """Per-class IoU/Acc plus the three dataset-level means.

    Classes with zero denominator carry NaN and are excluded from the means;
    a wholly empty matrix yields NaN means with defined=False.
    """

    per_class_iou: np.ndarray
    per_class_acc: np.ndarray
    miou: float
    macc: float
    aacc: float
    present_classes: frozenset[int]

    @property
    def defined(self) -> bool:
        return not math.isnan(self.aacc)


def confusion_from_pair(
    pred: LabelMap,
    gt: LabelMap,
    num_classes: int,
    ignore: int = IGNORE_INDEX,
) -> ConfusionMatrix:
    """Accumulate one (prediction, ground truth) raster pair."""
    if pred.data.shape != gt.data.shape:
        raise DataError(f"shape mismatch: pred {pred.data.shape} vs gt {gt.data.shape}")
    g = gt.data.ravel().astype(np.int64)
    p = pred.data.ravel().astype(np.int64)
    keep = g != ignore
    g, p = g[keep], p[keep]
    if ((g >= num_classes) | (p >= num_classes) | (p == ignore)).any():
        raise DataError(f"pixel values exceed num_classes={num_classes}")
    counts = np.bincount(g * num_classes + p, minlength=num_classes * num_classes)
    return ConfusionMatrix(counts.reshape(num_classes, num_classes))


def merge(a: ConfusionMatrix, b: ConfusionMatrix) -> ConfusionMatrix:
    """Element-wise sum; the reduction for sharded evaluation."""
    if a.num_classes != b.num_classes:
        raise DataError(f"class count mismatch: {a.num_classes} vs {b.num_classes}")
    return ConfusionMatrix(a.counts + b.counts)


def summarize(cm: ConfusionMatrix, include_background: bool = True) -> MetricReport:
    """Reduce a confusion matrix to per-class IoU/Acc and mIoU/mAcc/aAcc.

    IoU_k = TP/(TP+FP+FN), Acc_k = TP/(TP+FN); classes with a zero
    denominator are NaN and excluded from the means. With
    include_background=False, class 0 is additionally excluded from the
    means (it keeps its per-class entries).
    """
    c = cm.counts.astype(np.float64)
    tp = np.diag(c)
    fn = c.sum(axis=1) - tp
    fp = c.sum(axis=0) - tp
    with np.errstate(invalid="ignore", divide="ignore"):
        iou = tp / (tp + fp + fn)
        acc = tp / (tp + fn)
    present = frozenset(int(k) for k in np.flatnonzero(cm.counts.sum(axis=1) > 0))

    sel = np.ones(cm.num_classes, dtype=bool)
    if not include_background:
        sel[0] = False
    iou_sel = iou[sel]
    acc_sel = acc[sel]
    miou = float(np.nanmean(iou_sel)) if np.isfinite(iou_sel).any() else float("nan")
    macc = float(np.nanmean(acc_sel)) if np.isfinite(acc_sel).any() else float("nan")
    total = cm.total
    aacc = float(tp.sum() / total) if total > 0 else float("nan")
    return MetricReport(
        per_class_iou=iou,
        per_class_acc=acc,
        miou=miou,
        macc=macc,
        aacc=aacc,
        present_classes=present,
    )


REPORT_FIELDS = ["class_id", "class_name", "iou", "acc", "aacc"]


def write_report_csv(report: MetricReport, class_names: list[str], path) -> None:
    """Per-class rows then one summary row (class_id=-1) in fixed field order."""

    def fmt(x: float) -> str:
        return "nan" if math.isnan(x) else f"{x:.6f}"

    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(REPORT_FIELDS)
        for k, name in enumerate(class_names):
            w.writerow([k, name, fmt(report.per_class_iou[k]), fmt(report.per_class_acc[k]), ""])
        w.writerow([-1, "summary", fmt(report.miou), fmt(report.macc), fmt(report.aacc)])


def report_to_dict(report: MetricReport) -> dict:
    def val(x: float):
        return None if math.isnan(x) else x

    return {
        "miou": val(report.miou),
        "macc": val(report.macc),
        "aacc": val(report.aacc),
        "per_class_iou": [val(float(x)) for x in report.per_class_iou],
        "per_class_acc": [val(float(x)) for x in report.per_class_acc],
        "present_classes": sorted(report.present_classes),
    }
