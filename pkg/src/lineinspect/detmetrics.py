"""Bounding-box geometry, IoU, NMS, detection matching, and evaluation metrics.

Matching rules: a prediction is a true positive when it has the right class
and IoU strictly above the threshold against an unmatched ground-truth box.
IoU exactly at the threshold counts as a false positive, as does a duplicate
hit on an already-matched box. Precision/recall with a zero denominator are
an explicit None (rendered as "n/a" in reports), never a silent zero.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, ValidationError


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned box in pixel coordinates; must have positive area."""

    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self):
        for v in (self.x_min, self.y_min, self.x_max, self.y_max):
            if not np.isfinite(v):
                raise ValidationError(f"non-finite box coordinate in {self}")
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise ValidationError(
                f"degenerate box ({self.x_min}, {self.y_min}, {self.x_max}, {self.y_max})"
            )

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def center(self) -> tuple[float, float]:
        return (self.x_min + self.x_max) / 2.0, (self.y_min + self.y_max) / 2.0

    def union_bounds(self, other: "BoundingBox") -> "BoundingBox":
        return BoundingBox(
            min(self.x_min, other.x_min),
            min(self.y_min, other.y_min),
            max(self.x_max, other.x_max),
            max(self.y_max, other.y_max),
        )

    def as_list(self) -> list[float]:
        return [self.x_min, self.y_min, self.x_max, self.y_max]


@dataclass(frozen=True)
class Detection:
    box: BoundingBox
    class_id: int
    probability: float

    def __post_init__(self):
        if not (0.0 <= self.probability <= 1.0):
            raise ValidationError(f"probability {self.probability} outside [0, 1]")


def iou(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection area over union area; 0 for disjoint, 1 for identical boxes."""
    ix = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    iy = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    if ix <= 0.0 or iy <= 0.0:
        return 0.0
    inter = ix * iy
    return inter / (a.area + b.area - inter)


def _det_order(d: Detection):
    # probability desc, then spatial coordinates for a deterministic tie-break
    return (-d.probability, d.box.x_min, d.box.y_min, d.box.x_max, d.box.y_max, d.class_id)


def nms(dets: list[Detection], iou_threshold: float) -> list[Detection]:
    """Greedy per-class non-maximum suppression, highest probability first."""
    if not (0.0 <= iou_threshold <= 1.0):
        raise ValidationError(f"iou_threshold {iou_threshold} outside [0, 1]")
    kept: list[Detection] = []
    for det in sorted(dets, key=_det_order):
        redundant = any(
            k.class_id == det.class_id and iou(k.box, det.box) > iou_threshold for k in kept
        )
        if not redundant:
            kept.append(det)
    return kept


class MatchReport:
    """Per-class TP/FP/FN tallies; mergeable across images."""

    def __init__(self):
        self._counts: dict[int, list[int]] = {}

    def _row(self, class_id: int) -> list[int]:
        return self._counts.setdefault(int(class_id), [0, 0, 0])

    def add_tp(self, class_id: int, n: int = 1) -> None:
        self._row(class_id)[0] += n

    def add_fp(self, class_id: int, n: int = 1) -> None:
        self._row(class_id)[1] += n

    def add_fn(self, class_id: int, n: int = 1) -> None:
        self._row(class_id)[2] += n

    def tp(self, class_id: int) -> int:
        return self._counts.get(class_id, [0, 0, 0])[0]

    def fp(self, class_id: int) -> int:
        return self._counts.get(class_id, [0, 0, 0])[1]

    def fn(self, class_id: int) -> int:
        return self._counts.get(class_id, [0, 0, 0])[2]

    def classes(self) -> list[int]:
        return sorted(self._counts)

    def merge(self, other: "MatchReport") -> "MatchReport":
        for c, (tp, fp, fn) in other._counts.items():
            row = self._row(c)
            row[0] += tp
            row[1] += fp
            row[2] += fn
        return self

    @classmethod
    def from_counts(cls, counts: dict[int, tuple[int, int, int]]) -> "MatchReport":
        r = cls()
        for c, (tp, fp, fn) in counts.items():
            if min(tp, fp, fn) < 0:
                raise ValidationError(f"negative counter for class {c}")
            r._counts[int(c)] = [tp, fp, fn]
        return r

    def __repr__(self):
        rows = ", ".join(
            f"{c}: tp={v[0]} fp={v[1]} fn={v[2]}" for c, v in sorted(self._counts.items())
        )
        return f"MatchReport({rows})"


def match_detections(
    preds: list[Detection],
    gts: list[tuple[int, BoundingBox]],
    iou_min: float = 0.5,
) -> MatchReport:
    """Greedily match predictions (probability desc) to ground truth.

    A ground-truth box can absorb one TP; further hits on it are FPs.
    """
    if not (0.0 < iou_min < 1.0):
        raise ValidationError(f"iou_min {iou_min} outside (0, 1)")
    report = MatchReport()
    matched = [False] * len(gts)
    for det in sorted(preds, key=_det_order):
        best_i, best_iou = -1, iou_min
        for i, (gt_class, gt_box) in enumerate(gts):
            if matched[i] or gt_class != det.class_id:
                continue
            v = iou(det.box, gt_box)
            if v > best_iou:
                best_i, best_iou = i, v
        if best_i >= 0:
            matched[best_i] = True
            report.add_tp(det.class_id)
        else:
            report.add_fp(det.class_id)
    for i, (gt_class, _) in enumerate(gts):
        report._row(gt_class)
        if not matched[i]:
            report.add_fn(gt_class)
    return report


def precision(report: MatchReport, class_id: int) -> float | None:
    """TP / (TP + FP); None when no predictions exist for the class."""
    tp, fp = report.tp(class_id), report.fp(class_id)
    if tp + fp == 0:
        return None
    return tp / (tp + fp)


def recall(report: MatchReport, class_id: int) -> float | None:
    """TP / (TP + FN); None when the class has no ground truth."""
    tp, fn = report.tp(class_id), report.fn(class_id)
    if tp + fn == 0:
        return None
    return tp / (tp + fn)


@dataclass
class SweepRow:
    threshold: float
    report: MatchReport = field(default_factory=MatchReport)

    def precision(self, class_id: int) -> float | None:
        return precision(self.report, class_id)

    def recall(self, class_id: int) -> float | None:
        return recall(self.report, class_id)


def pr_sweep(
    preds_per_image: list[list[Detection]],
    gts_per_image: list[list[tuple[int, BoundingBox]]],
    thresholds: list[float],
    iou_min: float = 0.5,
) -> list[SweepRow]:
    """Re-match the dataset at each probability threshold (ascending)."""
    if not thresholds:
        raise ValidationError("threshold list is empty")
    if sorted(thresholds) != list(thresholds):
        raise ValidationError("thresholds must be sorted ascending")
    if len(preds_per_image) != len(gts_per_image):
        raise DimensionError(
            f"{len(preds_per_image)} prediction lists vs {len(gts_per_image)} ground-truth lists"
        )
    rows = []
    for t in thresholds:
        row = SweepRow(threshold=t)
        for preds, gts in zip(preds_per_image, gts_per_image):
            surviving = [d for d in preds if d.probability >= t]
            row.report.merge(match_detections(surviving, gts, iou_min=iou_min))
        rows.append(row)
    return rows


# --- pixel-level metrics -------------------------------------------------


def label_confusion(pred, gt, num_classes: int) -> np.ndarray:
    """[num_classes, num_classes] confusion counts; rows are gt, cols prediction."""
    p = _label_array(pred)
    g = _label_array(gt)
    if p.shape != g.shape:
        raise DimensionError(f"label shape mismatch {p.shape} vs {g.shape}")
    if p.max(initial=0) >= num_classes or g.max(initial=0) >= num_classes:
        raise ValidationError(f"labels exceed num_classes={num_classes}")
    if p.min(initial=0) < 0 or g.min(initial=0) < 0:
        raise ValidationError("negative labels")
    idx = g.ravel() * num_classes + p.ravel()
    return np.bincount(idx, minlength=num_classes * num_classes).reshape(num_classes, num_classes)


def miou_from_confusion(confusion: np.ndarray) -> float:
    """Mean per-class IoU over classes present in gt or prediction."""
    inter = np.diag(confusion).astype(np.float64)
    union = confusion.sum(axis=0) + confusion.sum(axis=1) - inter
    present = union > 0
    if not present.any():
        raise ValidationError("no labels present")
    return float(np.mean(inter[present] / union[present]))


def miou(pred, gt, num_classes: int) -> float:
    """Mean IoU between two label maps, averaged over classes present in either."""
    return miou_from_confusion(label_confusion(pred, gt, num_classes))


def _label_array(x) -> np.ndarray:
    arr = np.asarray(getattr(x, "labels", x))
    if not np.issubdtype(arr.dtype, np.integer):
        raise ValidationError(f"labels must be integers, got dtype {arr.dtype}")
    return arr


# --- annotation files and reports ----------------------------------------


@dataclass(frozen=True)
class AnnotatedObject:
    class_id: int
    box: BoundingBox
    probability: float | None  # None marks ground truth

    def to_detection(self) -> Detection:
        if self.probability is None:
            raise ValidationError("ground-truth object has no probability")
        return Detection(self.box, self.class_id, self.probability)


def save_annotations(path, image_name: str, objects: list[AnnotatedObject]) -> None:
    doc = {
        "image": image_name,
        "objects": [
            {"class": o.class_id, "box": o.box.as_list(), "prob": o.probability}
            for o in objects
        ],
    }
    with open(path, "w") as f:
        json.dump(doc, f, indent=1)


def load_annotations(path) -> tuple[str, list[AnnotatedObject]]:
    with open(path) as f:
        doc = json.load(f)
    objects = [
        AnnotatedObject(
            class_id=int(o["class"]),
            box=BoundingBox(*[float(v) for v in o["box"]]),
            probability=None if o.get("prob") is None else float(o["prob"]),
        )
        for o in doc["objects"]
    ]
    return doc["image"], objects


def ground_truth_pairs(objects: list[AnnotatedObject]) -> list[tuple[int, BoundingBox]]:
    return [(o.class_id, o.box) for o in objects]


def write_metrics_csv(rows: list[SweepRow], path: str | os.PathLike) -> None:
    """CSV report: threshold,class,tp,fp,fn,precision,recall ("n/a" when undefined)."""

    def fmt(v: float | None) -> str:
        return "n/a" if v is None else f"{v:.6f}"

    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["threshold", "class", "tp", "fp", "fn", "precision", "recall"])
        for row in rows:
            for c in row.report.classes():
                w.writerow(
                    [
                        f"{row.threshold:g}",
                        c,
                        row.report.tp(c),
                        row.report.fp(c),
                        row.report.fn(c),
                        fmt(row.precision(c)),
                        fmt(row.recall(c)),
                    ]
                )
