"""Detection-style evaluation: IoU matching and average precision at 0.5.

Detections are routed proposals carrying their classifier confidence.
Matching is the standard greedy scheme: per class, detections in descending
confidence order claim the unmatched same-image ground truth with the
highest overlap at or above the IoU threshold. AP is the all-point
interpolation (area under the precision envelope).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

IOU_THRESHOLD_DEFAULT = 0.5


@dataclass(frozen=True)
class Detection:
    image: str
    box: tuple[float, float, float, float]
    label: str
    confidence: float
    det_id: int = 0


@dataclass(frozen=True)
class GroundTruth:
    image: str
    box: tuple[float, float, float, float]
    label: str


class EvalWarning(UserWarning):
    """A class had ground truth missing or empty; its AP was skipped."""


def iou(a, b) -> float:
    ax1, ay1, ax2, ay2 = a
    bx1, by1, bx2, by2 = b
    ix1, iy1 = max(ax1, bx1), max(ay1, by1)
    ix2, iy2 = min(ax2, bx2), min(ay2, by2)
    iw, ih = max(0.0, ix2 - ix1), max(0.0, iy2 - iy1)
    inter = iw * ih
    if inter == 0.0:
        return 0.0
    union = (ax2 - ax1) * (ay2 - ay1) + (bx2 - bx1) * (by2 - by1) - inter
    return inter / union


def _sorted_dets(dets: list[Detection]) -> list[Detection]:
    return sorted(dets, key=lambda d: (-d.confidence, d.det_id))


def match_detections(dets: list[Detection], gts: list[GroundTruth],
                     iou_threshold: float = IOU_THRESHOLD_DEFAULT) -> list[bool]:
    """True/false positive flags for detections of ONE class, sorted by
    confidence. Each ground truth can be claimed once."""
    flags: list[bool] = []
    claimed: set[int] = set()
    for det in _sorted_dets(dets):
        best_iou, best_gt = 0.0, None
        for gi, gt in enumerate(gts):
            if gi in claimed or gt.image != det.image:
                continue
            ov = iou(det.box, gt.box)
            if ov > best_iou:
                best_iou, best_gt = ov, gi
        if best_gt is not None and best_iou >= iou_threshold:
            claimed.add(best_gt)
            flags.append(True)
        else:
            flags.append(False)
    return flags


def average_precision(dets: list[Detection], gts: list[GroundTruth],
                      iou_threshold: float = IOU_THRESHOLD_DEFAULT) -> float | None:
    """All-point interpolated AP for one class; None when there is no gt."""
    if not gts:
        return None
    if not dets:
        return 0.0
    tp = np.array(match_detections(dets, gts, iou_threshold), dtype=np.float64)
    cum_tp = np.cumsum(tp)
    cum_fp = np.cumsum(1.0 - tp)
    recall = cum_tp / len(gts)
    precision = cum_tp / (cum_tp + cum_fp)

    mrec = np.concatenate([[0.0], recall, [1.0]])
    mpre = np.concatenate([[0.0], precision, [0.0]])
    for i in range(len(mpre) - 2, -1, -1):
        mpre[i] = max(mpre[i], mpre[i + 1])
    idx = np.where(mrec[1:] != mrec[:-1])[0] + 1
    return float(((mrec[idx] - mrec[idx - 1]) * mpre[idx]).sum())


@dataclass
class EvalResult:
    per_class_ap: dict[str, float] = field(default_factory=dict)
    map_previous_known: float | None = None
    map_current_known: float | None = None
    map_both: float | None = None
    skipped_classes: list[str] = field(default_factory=list)
    t_threshold: float | None = None
    # optional extra: fraction of eval proposals of still-unlearned classes
    # that were routed to unknown
    unknown_recall: float | None = None

    def to_json(self) -> dict:
        return {
            "per_class_ap": self.per_class_ap,
            "map_previous_known": self.map_previous_known,
            "map_current_known": self.map_current_known,
            "map_both": self.map_both,
            "skipped_classes": self.skipped_classes,
            "t_threshold": self.t_threshold,
            "unknown_recall": self.unknown_recall,
        }


def evaluate_detections(dets: list[Detection], gts: list[GroundTruth],
                        current_labels: list[str], previous_labels: list[str],
                        iou_threshold: float = IOU_THRESHOLD_DEFAULT) -> EvalResult:
    """Per-class AP plus group means over previous / current / all classes."""
    result = EvalResult()
    labels = list(previous_labels) + [l for l in current_labels if l not in previous_labels]
    gts_by_label: dict[str, list[GroundTruth]] = {l: [] for l in labels}
    for gt in gts:
        gts_by_label.setdefault(gt.label, []).append(gt)
    dets_by_label: dict[str, list[Detection]] = {l: [] for l in labels}
    for det in dets:
        dets_by_label.setdefault(det.label, []).append(det)

    for label in labels:
        ap = average_precision(dets_by_label[label], gts_by_label[label], iou_threshold)
        if ap is None:
            warnings.warn(f"class '{label}' has no ground truth; AP skipped",
                          EvalWarning, stacklevel=2)
            result.skipped_classes.append(label)
        else:
            result.per_class_ap[label] = ap

    def group_mean(group: list[str]) -> float | None:
        vals = [result.per_class_ap[l] for l in group if l in result.per_class_ap]
        return float(np.mean(vals)) if vals else None

    result.map_previous_known = group_mean(previous_labels)
    result.map_current_known = group_mean(current_labels)
    result.map_both = group_mean(labels)
    return result
