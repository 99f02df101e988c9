"""Box matching, detection AP (incl. cross-class AP^i(j)) and average recall AR@k."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .data import Box, BoxTable

DEFAULT_IOU_THRESHOLDS = tuple(round(0.5 + 0.05 * i, 2) for i in range(10))
DEFAULT_KS = (10, 20, 50, 100, 1000)
# k/100 for k = 0..100, each the correctly rounded double
RECALL_POINTS = np.arange(101) / 100.0


@dataclass(frozen=True)
class MetricConfig:
    iou_thresholds: tuple[float, ...] = DEFAULT_IOU_THRESHOLDS
    max_detections: int = 100
    ks: tuple[int, ...] = DEFAULT_KS

    def __post_init__(self):
        t = tuple(float(x) for x in self.iou_thresholds)
        object.__setattr__(self, "iou_thresholds", t)
        object.__setattr__(self, "ks", tuple(int(k) for k in self.ks))
        if not t:
            raise ValueError("iou_thresholds must be non-empty")
        if any(b <= a for a, b in zip(t, t[1:])):
            raise ValueError("iou_thresholds must be strictly increasing")
        if not all(0.0 < x <= 1.0 for x in t):
            raise ValueError("iou_thresholds must lie in (0, 1]")
        if any(k <= 0 for k in self.ks):
            raise ValueError("k values must be positive")
        if self.max_detections <= 0:
            raise ValueError("max_detections must be positive")

    def to_dict(self) -> dict:
        return {"iou_thresholds": list(self.iou_thresholds), "max_detections": self.max_detections, "ks": list(self.ks)}


def _as_array(b) -> np.ndarray:
    if isinstance(b, Box):
        return np.array(b.as_tuple(), dtype=np.float64)
    return np.asarray(b, dtype=np.float64)


def iou(a, b) -> float:
    """Intersection over union of two corner boxes."""
    return float(iou_matrix(_as_array(a)[None], _as_array(b)[None])[0, 0])


def iou_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise IoU, shape ``(len(a), len(b))``."""
    a = np.asarray(a, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 4)
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    iw = np.minimum(a[:, None, 2], b[None, :, 2]) - np.maximum(a[:, None, 0], b[None, :, 0])
    ih = np.minimum(a[:, None, 3], b[None, :, 3]) - np.maximum(a[:, None, 1], b[None, :, 1])
    inter = np.clip(iw, 0.0, None) * np.clip(ih, 0.0, None)
    union = area_a[:, None] + area_b[None, :] - inter
    return inter / union


@dataclass(frozen=True)
class MatchResult:
    """Greedy matching at one or more IoU thresholds.

    ``det_to_gt[t, d]`` is the GT index matched by detection ``d`` (original
    input order) at threshold ``t``, or -1. ``gt_to_det`` is the inverse.
    """

    thresholds: tuple[float, ...]
    det_to_gt: np.ndarray
    gt_to_det: np.ndarray
    order: np.ndarray  # detection indices in processing (score) order

    @property
    def gt_covered(self) -> np.ndarray:
        return self.gt_to_det >= 0


def score_order(scores: np.ndarray) -> np.ndarray:
    """Descending score order; equal scores keep input order."""
    return np.argsort(-np.asarray(scores, dtype=np.float64), kind="stable")


def _greedy(ious: np.ndarray, thresholds: np.ndarray) -> np.ndarray:
    """Match rows (already score-sorted detections) to columns (GT).

    Returns ``(T, D)`` matched GT index or -1.
    """
    n_det, n_gt = ious.shape
    T = len(thresholds)
    out = np.full((T, n_det), -1, dtype=np.int64)
    if n_gt == 0 or n_det == 0:
        return out
    taken = np.zeros((T, n_gt), dtype=bool)
    rows = np.arange(T)
    for d in range(n_det):
        cand = np.where(taken, -1.0, ious[d][None, :])
        best = cand.argmax(axis=1)  # first max -> lowest GT index on ties
        ok = cand[rows, best] >= thresholds
        out[ok, d] = best[ok]
        taken[rows[ok], best[ok]] = True
    return out


def greedy_match(gts, dets, scores, threshold: float | Sequence[float]) -> MatchResult:
    """COCO-style greedy matching of scored detections to GT boxes."""
    thr = np.atleast_1d(np.asarray(threshold, dtype=np.float64))
    gts = np.asarray(gts, dtype=np.float64).reshape(-1, 4)
    dets = np.asarray(dets, dtype=np.float64).reshape(-1, 4)
    order = score_order(scores)
    sorted_match = _greedy(iou_matrix(dets[order], gts), thr)
    det_to_gt = np.full_like(sorted_match, -1)
    det_to_gt[:, order] = sorted_match
    gt_to_det = np.full((len(thr), len(gts)), -1, dtype=np.int64)
    for t in range(len(thr)):
        m = det_to_gt[t]
        hit = np.flatnonzero(m >= 0)
        gt_to_det[t, m[hit]] = hit
    return MatchResult(tuple(thr.tolist()), det_to_gt, gt_to_det, order)


# --------------------------------------------------------------------------
# Average precision


def _interpolated_ap(tp: np.ndarray, n_gt: int) -> np.ndarray:
    """101-point interpolated AP per threshold from score-ranked TP flags ``(T, D)``."""
    T, D = tp.shape
    if D == 0:
        return np.zeros(T)
    tps = np.cumsum(tp, axis=1, dtype=np.float64)
    fps = np.cumsum(~tp, axis=1, dtype=np.float64)
    recall = tps / n_gt
    precision = tps / (tps + fps)
    envelope = np.maximum.accumulate(precision[:, ::-1], axis=1)[:, ::-1]
    out = np.empty(T)
    for t in range(T):
        idx = np.searchsorted(recall[t], RECALL_POINTS, side="left")
        q = np.zeros(len(RECALL_POINTS))
        hit = idx < D
        q[hit] = envelope[t, idx[hit]]
        out[t] = q.mean()
    return out


@dataclass(frozen=True, eq=False)
class _FlatDets:
    """One class's detections concatenated in image order, score order precomputed."""

    spans: dict[int, tuple[int, int]]
    boxes: np.ndarray
    scores: np.ndarray
    order: np.ndarray

    @classmethod
    def build(cls, det_groups: dict[int, tuple[np.ndarray, np.ndarray]]) -> _FlatDets:
        spans, boxes, scores, start = {}, [], [], 0
        for img in sorted(det_groups):
            b, sc = det_groups[img]
            spans[img] = (start, start + len(sc))
            start += len(sc)
            boxes.append(b)
            scores.append(sc)
        if not scores:
            return cls({}, np.zeros((0, 4)), np.zeros(0), np.zeros(0, dtype=np.int64))
        s = np.concatenate(scores)
        return cls(spans, np.concatenate(boxes), s, score_order(s))


def _ap_flat(gt_groups: dict[int, np.ndarray], flat: _FlatDets, thresholds: np.ndarray) -> float | None:
    n_gt = sum(len(g) for g in gt_groups.values())
    if n_gt == 0:
        return None
    if not len(flat.scores):
        return 0.0
    tp = np.zeros((len(thresholds), len(flat.scores)), dtype=bool)
    for img, g in gt_groups.items():
        span = flat.spans.get(img)
        if span is None or not len(g):
            continue
        a, b = span
        ious = iou_matrix(flat.boxes[a:b], g)
        if ious.max() >= thresholds.min():
            tp[:, a:b] = _greedy(ious, thresholds) >= 0
    return float(_interpolated_ap(tp[:, flat.order], n_gt).mean())


def _ap_from_groups(
    gt_groups: dict[int, np.ndarray],
    det_groups: dict[int, tuple[np.ndarray, np.ndarray]],
    thresholds: np.ndarray,
) -> float | None:
    return _ap_flat(gt_groups, _FlatDets.build(det_groups), thresholds)


def _gt_groups(gt: BoxTable) -> dict[int, np.ndarray]:
    return {img: gt.boxes[idx] for img, idx in gt.groups.items()}


def _det_groups(dets: BoxTable, max_det: int) -> dict[int, tuple[np.ndarray, np.ndarray]]:
    out = {}
    for img, idx in dets.groups.items():
        s = dets.scores[idx]
        o = score_order(s)[:max_det]
        out[img] = (dets.boxes[idx][o], s[o])
    return out


def average_precision(gt: BoxTable, dets: BoxTable, config: MetricConfig | None = None) -> float | None:
    """Single-class AP averaged over the IoU grid; labels on both sides are ignored.

    Returns ``None`` when there is no ground truth (AP undefined).
    """
    config = config or MetricConfig()
    if dets.scores is None:
        raise ValueError("detections need scores")
    thr = np.asarray(config.iou_thresholds)
    return _ap_from_groups(_gt_groups(gt), _det_groups(dets, config.max_detections), thr)


def cross_class_ap(gt: BoxTable, dets: BoxTable, i: str, j: str, config: MetricConfig | None = None) -> float | None:
    """AP^i(j): class ``j``'s ground truth scored with class ``i``'s detections."""
    return average_precision(gt.for_class(j), dets.for_class(i), config)


@dataclass(frozen=True, eq=False)
class ApTable:
    """``values[a, b]`` = AP of class ``classes[b]`` using detections of ``classes[a]``.

    Undefined entries (no ground truth for the column class) are NaN.
    """

    classes: tuple[str, ...]
    values: np.ndarray
    config: MetricConfig = field(default_factory=MetricConfig)

    def index(self, c: str) -> int:
        return self.classes.index(c)

    def get(self, i: str, j: str) -> float | None:
        v = self.values[self.index(i), self.index(j)]
        return None if math.isnan(v) else float(v)

    def to_dict(self) -> dict:
        return {
            "classes": list(self.classes),
            "values": [[None if math.isnan(v) else float(v) for v in row] for row in self.values],
            "config": self.config.to_dict(),
        }

    @classmethod
    def from_dict(cls, obj: dict) -> ApTable:
        vals = np.array([[np.nan if v is None else v for v in row] for row in obj["values"]], dtype=np.float64)
        cfg = MetricConfig(**obj["config"]) if "config" in obj else MetricConfig()
        return cls(tuple(obj["classes"]), vals, cfg)


def ap_table(gt: BoxTable, dets: BoxTable, classes: Sequence[str] | None = None, config: MetricConfig | None = None) -> ApTable:
    """All ordered-pair cross-class APs over ``classes``."""
    config = config or MetricConfig()
    classes = tuple(classes) if classes is not None else tuple(sorted(set(gt.classes) | set(dets.classes)))
    thr = np.asarray(config.iou_thresholds)
    gt_by = {c: _gt_groups(gt.for_class(c)) for c in classes}
    det_by = {c: _FlatDets.build(_det_groups(dets.for_class(c), config.max_detections)) for c in classes}
    vals = np.full((len(classes), len(classes)), np.nan)
    for a, ci in enumerate(classes):
        for b, cj in enumerate(classes):
            ap = _ap_flat(gt_by[cj], det_by[ci], thr)
            if ap is not None:
                vals[a, b] = ap
    return ApTable(classes, vals, config)


# --------------------------------------------------------------------------
# Average recall


@dataclass(frozen=True, eq=False)
class ArTable:
    """Recall of top-k proposals per k (rows) and IoU threshold (columns).

    ``recall`` pools all GT boxes; ``per_class_recall`` pools within a class.
    """

    ks: tuple[int, ...]
    iou_thresholds: tuple[float, ...]
    recall: np.ndarray
    n_gt: int
    per_class_recall: dict[str, np.ndarray]
    per_class_n_gt: dict[str, int]

    def ar(self, k: int) -> float:
        return float(self.recall[self.ks.index(k)].mean())

    @property
    def ar_at(self) -> dict[int, float]:
        return {k: self.ar(k) for k in self.ks}

    def class_ar(self, c: str, k: int) -> float:
        return float(self.per_class_recall[c][self.ks.index(k)].mean())

    def class_mean_ar(self, k: int) -> float:
        if not self.per_class_recall:
            return 0.0
        return float(np.mean([self.class_ar(c, k) for c in sorted(self.per_class_recall)]))

    def to_dict(self) -> dict:
        return {
            "ks": list(self.ks),
            "iou_thresholds": list(self.iou_thresholds),
            "n_gt": self.n_gt,
            "recall": self.recall.tolist(),
            "ar": {str(k): self.ar(k) for k in self.ks},
            "ar_class_mean": {str(k): self.class_mean_ar(k) for k in self.ks},
            "per_class_ar": {c: {str(k): self.class_ar(c, k) for k in self.ks} for c in sorted(self.per_class_recall)},
            "headline": "pooled",
        }


def best_overlaps(
    gt: BoxTable,
    proposals: BoxTable,
    ks: Sequence[int],
    exclude_labels: Iterable[str] = (),
) -> np.ndarray:
    """Best IoU of every GT box (in ``gt`` row order) over each image's top-k proposals.

    Proposals whose label is in ``exclude_labels`` are removed *after* top-k
    truncation, so removal can only lower coverage. Shape ``(len(ks), len(gt))``.
    """
    ks = list(ks)
    exclude = set(exclude_labels)
    out = np.zeros((len(ks), len(gt)))
    if not len(gt) or not len(proposals):
        return out
    if proposals.scores is None:
        raise ValueError("proposals need scores")
    kmax = max(ks)
    pgroups = proposals.groups
    for img, gidx in gt.groups.items():
        pidx = pgroups.get(img)
        if pidx is None:
            continue
        o = score_order(proposals.scores[pidx])[:kmax]
        rows = pidx[o]
        ious = iou_matrix(proposals.boxes[rows], gt.boxes[gidx])
        if exclude:
            ious[np.isin(proposals.labels[rows], list(exclude))] = 0.0
        cum = np.maximum.accumulate(ious, axis=0)
        for a, k in enumerate(ks):
            out[a, gidx] = cum[min(k, len(rows)) - 1]
    return out


def average_recall_at_k(
    gt: BoxTable,
    proposals: BoxTable,
    config: MetricConfig | None = None,
    ks: Sequence[int] | None = None,
    exclude_labels: Iterable[str] = (),
) -> ArTable:
    """AR@k over the IoU grid; a GT box counts as covered at threshold t if
    any of its image's top-k proposals overlaps it with IoU >= t."""
    config = config or MetricConfig()
    ks = tuple(int(k) for k in (ks if ks is not None else config.ks))
    if any(k <= 0 for k in ks):
        raise ValueError("k must be positive")
    thr = np.asarray(config.iou_thresholds)
    best = best_overlaps(gt, proposals, ks, exclude_labels)
    covered = best[:, :, None] >= thr[None, None, :]  # (K, G, T)
    n = len(gt)
    recall = covered.sum(axis=1) / n if n else np.zeros((len(ks), len(thr)))
    per_class, per_n = {}, {}
    for c in gt.classes:
        m = gt.labels == c
        per_class[c] = covered[:, m, :].mean(axis=1)
        per_n[c] = int(m.sum())
    return ArTable(ks, config.iou_thresholds, recall, n, per_class, per_n)
