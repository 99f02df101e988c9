"""Turning class-labeled detections into class-agnostic proposals."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .data import BoxTable
from .metrics import score_order

NMS_MODES = ("per-class", "cross-class")


@dataclass(frozen=True)
class FusionConfig:
    nms_threshold: float = 0.5
    score_threshold: float = 0.0
    per_image_cap: int = 1000
    nms_mode: str = "per-class"
    # which box-regression variant produced the detections; recorded only
    regression: str | None = None

    def __post_init__(self):
        if not 0.0 < self.nms_threshold <= 1.0:
            raise ValueError("nms_threshold must lie in (0, 1]")
        if self.score_threshold < 0:
            raise ValueError("score_threshold must be >= 0")
        if self.per_image_cap <= 0:
            raise ValueError("per_image_cap must be positive")
        if self.nms_mode not in NMS_MODES:
            raise ValueError(f"nms_mode must be one of {NMS_MODES}")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass(frozen=True, eq=False)
class ProposalSet(BoxTable):
    """Fused proposals; ``labels`` hold the source (provenance) class.

    Rows are grouped by ascending image id, descending score within image.
    """

    meta: dict = field(default_factory=dict)

    @classmethod
    def from_table(cls, t: BoxTable, meta: dict | None = None) -> ProposalSet:
        return cls(t.image_ids, t.boxes, t.labels, t.scores, dict(meta or {}))


def _iou_one(box: np.ndarray, others: np.ndarray) -> np.ndarray:
    # same operation order as metrics.iou_matrix
    area_a = (box[2] - box[0]) * (box[3] - box[1])
    area_b = (others[:, 2] - others[:, 0]) * (others[:, 3] - others[:, 1])
    iw = np.minimum(box[2], others[:, 2]) - np.maximum(box[0], others[:, 0])
    ih = np.minimum(box[3], others[:, 3]) - np.maximum(box[1], others[:, 1])
    inter = np.clip(iw, 0.0, None) * np.clip(ih, 0.0, None)
    return inter / (area_a + area_b - inter)


def nms(boxes: np.ndarray, scores: np.ndarray, threshold: float) -> np.ndarray:
    """Greedy NMS. Returns kept indices in descending-score order.

    A box is suppressed when its IoU with a kept box is strictly above
    ``threshold``; equal scores resolve by input index.
    """
    if not 0.0 < threshold <= 1.0:
        raise ValueError("threshold must lie in (0, 1]")
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    order = score_order(scores)
    keep = []
    while order.size:
        i = order[0]
        keep.append(i)
        rest = order[1:]
        if not rest.size:
            break
        order = rest[_iou_one(boxes[i], boxes[rest]) <= threshold]
    return np.asarray(keep, dtype=np.int64)


def _fuse_image(boxes, scores, labels, config: FusionConfig) -> np.ndarray:
    keep_mask = scores >= config.score_threshold
    idx = np.flatnonzero(keep_mask)
    if config.nms_mode == "cross-class":
        kept = idx[nms(boxes[idx], scores[idx], config.nms_threshold)]
    else:
        parts = []
        for c in sorted(set(labels[idx].tolist())):
            ci = idx[labels[idx] == c]
            parts.append(ci[nms(boxes[ci], scores[ci], config.nms_threshold)])
        kept = np.sort(np.concatenate(parts)) if parts else idx[:0]
    kept = kept[score_order(scores[kept])]
    return kept[: config.per_image_cap]


def fuse_detections_to_proposals(dets: BoxTable, config: FusionConfig | None = None) -> ProposalSet:
    """Score-threshold, NMS (per class or pooled), pool, sort and cap per image.

    Each surviving box keeps its detector class as provenance.
    """
    config = config or FusionConfig()
    meta = {"fusion": config.to_dict()}
    if not len(dets):
        return ProposalSet.from_table(BoxTable.empty(scored=True), meta)
    if dets.scores is None:
        raise ValueError("detections need scores")
    rows = []
    for img, idx in dets.groups.items():
        k = _fuse_image(dets.boxes[idx], dets.scores[idx], dets.labels[idx], config)
        rows.append(idx[k])
    sel = np.concatenate(rows) if rows else np.zeros(0, np.int64)
    return ProposalSet.from_table(dets.select(sel), meta)


def nms_sweep(dets: BoxTable, thresholds: Sequence[float], config: FusionConfig | None = None) -> dict[float, ProposalSet]:
    """One proposal set per NMS threshold, every other setting held fixed."""
    if not len(thresholds):
        raise ValueError("thresholds must be non-empty")
    config = config or FusionConfig()
    return {
        float(t): fuse_detections_to_proposals(dets, dataclasses.replace(config, nms_threshold=float(t)))
        for t in thresholds
    }
