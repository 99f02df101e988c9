"""Study orchestration: budget-matched datasets, sufficiency and necessity of a
prototypical subset, label-granularity tables, and pseudo-GT mining."""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .data import BoxTable, Dataset, SemanticTree, level_class_counts, relabel_to_level
from .errors import DataError
from .metrics import MetricConfig, average_recall_at_k, iou_matrix, score_order
from .selection import ProtoSelection
from .similarity import SimilarityMatrix, most_similar_class

log = logging.getLogger(__name__)

# reference scale of the budget-matched OIV4 subsets; used in report text only
REFERENCE_BUDGET = {"images": 920_000, "boxes": 5_200_000}


@dataclass(frozen=True)
class BudgetConfig:
    image_budget: int
    box_budget: int
    seed: int

    def __post_init__(self):
        if self.image_budget <= 0 or self.box_budget <= 0:
            raise ValueError("budgets must be positive")


@dataclass(frozen=True)
class BudgetedDataset:
    dataset: Dataset
    n_images: int
    n_boxes: int
    under_budget: tuple[str, ...]  # subset of {"images", "boxes"}
    config: BudgetConfig

    def report(self) -> dict:
        return {
            "images": self.n_images,
            "boxes": self.n_boxes,
            "image_budget": self.config.image_budget,
            "box_budget": self.config.box_budget,
            "seed": self.config.seed,
            "under_budget": list(self.under_budget),
        }


def build_budgeted_dataset(dataset: Dataset, selection: ProtoSelection | Sequence[str], budget: BudgetConfig) -> BudgetedDataset:
    """Fixed-size training set restricted to the selected classes.

    Images holding a selected-class box are sampled uniformly down to the image
    budget; among their selected-class boxes, one per image is kept and the
    rest of the box budget is drawn uniformly. Boxes outside the selection are
    discarded. Short supply keeps everything and flags the shortfall.
    """
    chosen = set(selection.classes if isinstance(selection, ProtoSelection) else selection)
    if not chosen:
        raise DataError("selection is empty")
    rng = np.random.default_rng(budget.seed)
    by_image = dataset.annotations_by_image
    eligible = sorted(
        im.image_id for im in dataset.images if any(a.class_id in chosen for a in by_image.get(im.image_id, ()))
    )
    flags = []
    if len(eligible) > budget.image_budget:
        pick = rng.choice(len(eligible), size=budget.image_budget, replace=False)
        images = sorted(eligible[i] for i in pick)
    else:
        images = eligible
        if len(eligible) < budget.image_budget:
            flags.append("images")

    pool = [a for img in images for a in by_image[img] if a.class_id in chosen]
    if len(pool) > budget.box_budget:
        if budget.box_budget >= len(images):
            # one guaranteed box per image, remainder uniform over what is left
            owner = np.array([a.image_id for a in pool])
            starts = np.flatnonzero(np.r_[True, owner[1:] != owner[:-1]])
            sizes = np.diff(np.r_[starts, len(pool)])
            first = starts + (rng.random(len(starts)) * sizes).astype(np.int64)
            rest = np.setdiff1d(np.arange(len(pool)), first)
            extra = rng.choice(rest, size=budget.box_budget - len(first), replace=False)
            keep = np.sort(np.concatenate([first, extra]))
        else:
            keep = np.sort(rng.choice(len(pool), size=budget.box_budget, replace=False))
        boxes = [pool[i] for i in keep]
    else:
        boxes = pool
        if len(pool) < budget.box_budget:
            flags.append("boxes")
    if flags:
        log.warning("budgeted dataset under budget: %s", ", ".join(flags))
    out = dataset.subset(image_ids=images, classes=chosen).replace_annotations(boxes)
    out = dataclasses.replace(out, categories=tuple(c for c in dataset.categories if c.name in chosen))
    return BudgetedDataset(out, len(images), len(boxes), tuple(flags), budget)


# --------------------------------------------------------------------------
# Sufficiency


@dataclass(frozen=True)
class Condition:
    method: str
    p: int


@dataclass
class StudyReport:
    """A table plus the provenance it was computed from.

    ``columns``/``rows`` is the canonical tabular payload rendered by the CLI.
    """

    kind: str
    columns: list[str]
    rows: list[list]
    extra: dict = field(default_factory=dict)
    provenance: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "columns": self.columns, "rows": self.rows, "extra": self.extra, "provenance": self.provenance}

    def column(self, name: str) -> list:
        i = self.columns.index(name)
        return [r[i] for r in self.rows]


def sufficiency_eval(
    proposals: Mapping[Condition, BoxTable],
    target_gt: BoxTable,
    config: MetricConfig | None = None,
    *,
    baseline: BoxTable | None = None,
    ks: Sequence[int] = (100, 1000),
) -> StudyReport:
    """AR@k on target classes for each (method, P) condition.

    With a baseline (all source classes) each row also carries the absolute
    AR drop against it.
    """
    config = config or MetricConfig()
    ks = tuple(ks)
    base = average_recall_at_k(target_gt, baseline, config, ks=ks).ar_at if baseline is not None else None
    columns = ["method", "P"] + [f"AR@{k}" for k in ks]
    if base is not None:
        columns += [f"drop@{k}" for k in ks]
    rows = []
    for cond in sorted(proposals, key=lambda c: (c.method, c.p)):
        ar = average_recall_at_k(target_gt, proposals[cond], config, ks=ks).ar_at
        row = [cond.method, cond.p] + [ar[k] for k in ks]
        if base is not None:
            row += [base[k] - ar[k] for k in ks]
        rows.append(row)
    extra = {"baseline": None if base is None else {f"AR@{k}": base[k] for k in ks}}
    return StudyReport("sufficiency", columns, rows, extra, {"metric_config": config.to_dict()})


def curve(report: StudyReport, method: str, column: str) -> list[tuple[int, float]]:
    mi, pi, ci = (report.columns.index(x) for x in ("method", "P", column))
    return sorted((r[pi], r[ci]) for r in report.rows if r[mi] == method)


# --------------------------------------------------------------------------
# Necessity


def necessity_eval(
    proposals: BoxTable,
    target_gt: BoxTable,
    S: SimilarityMatrix,
    selection: ProtoSelection | Sequence[str],
    config: MetricConfig | None = None,
    *,
    ks: Sequence[int] = (100, 1000),
) -> StudyReport:
    """Mean relative AR drop on target classes when the most similar selected
    class's proposals are removed (after top-k truncation).

    Classes whose AR before removal is 0 are excluded from the mean and listed.
    """
    config = config or MetricConfig()
    ks = tuple(ks)
    pool = list(selection.classes if isinstance(selection, ProtoSelection) else selection)
    before = average_recall_at_k(target_gt, proposals, config, ks=ks)
    columns = ["class", "removed"] + [f"AR@{k}" for k in ks] + [f"AR_after@{k}" for k in ks] + [f"rel@{k}" for k in ks]
    rows = []
    rel: dict[int, list[float]] = {k: [] for k in ks}
    excluded = {k: [] for k in ks}
    for t in target_gt.classes:
        removed = most_similar_class(S, t, pool)
        gt_t = target_gt.for_class(t)
        after = average_recall_at_k(gt_t, proposals, config, ks=ks, exclude_labels=[removed])
        b = [before.class_ar(t, k) for k in ks]
        a = [after.ar(k) for k in ks]
        r = []
        for k, bk, ak in zip(ks, b, a):
            if bk > 0:
                r.append((bk - ak) / bk)
                rel[k].append(r[-1])
            else:
                r.append(None)
                excluded[k].append(t)
        rows.append([t, removed] + b + a + r)
    score = {k: (float(np.mean(rel[k])) if rel[k] else None) for k in ks}
    extra = {
        "necessity": {str(k): score[k] for k in ks},
        "excluded_zero_ar": {str(k): excluded[k] for k in ks},
        "P": len(pool),
    }
    prov = {"metric_config": config.to_dict(), "removal": "provenance match, after top-k truncation",
            "similarity": S.provenance}
    return StudyReport("necessity", columns, rows, extra, prov)


# --------------------------------------------------------------------------
# Granularity


def granularity_study(
    dataset: Dataset,
    tree: SemanticTree,
    levels: Sequence[int],
    proposals: Mapping[int, BoxTable | None],
    target_gt: BoxTable,
    config: MetricConfig | None = None,
    *,
    ks: Sequence[int] = (100, 1000),
) -> StudyReport:
    """level -> (class count after relabeling, AR@k of that level's proposals)."""
    config = config or MetricConfig()
    ks = tuple(ks)
    columns = ["level", "classes"] + [f"AR@{k}" for k in ks]
    rows = []
    for lv in levels:
        _, count = relabel_to_level(dataset.annotations, tree, lv)
        props = proposals.get(lv)
        if props is None:
            rows.append([lv, count] + [None] * len(ks))
            continue
        ar = average_recall_at_k(target_gt, props, config, ks=ks).ar_at
        rows.append([lv, count] + [ar[k] for k in ks])
    extra = {"absent_levels": [lv for lv in levels if proposals.get(lv) is None],
             "tree_level_counts": {str(k): v for k, v in level_class_counts(tree).items()}}
    return StudyReport("granularity", columns, rows, extra, {"metric_config": config.to_dict()})


# --------------------------------------------------------------------------
# Pseudo ground truth for weak supervision


@dataclass(frozen=True)
class WeakLabelConfig:
    candidate_pool: int = 100
    positive_iou: float = 0.7
    ignore_iou_low: float = 0.5

    def __post_init__(self):
        if self.candidate_pool <= 0:
            raise ValueError("candidate_pool must be positive")
        if not 0 < self.ignore_iou_low < self.positive_iou <= 1:
            raise ValueError("need 0 < ignore_iou_low < positive_iou <= 1")


ANCHOR, POSITIVE, IGNORED, NEGATIVE = "anchor", "positive", "ignored", "negative"


@dataclass(frozen=True)
class PseudoLabel:
    image_id: int
    class_id: str
    anchor: int  # row in the image's score-sorted proposal list
    roles: tuple[str, ...]  # one per proposal in score order
    boxes: np.ndarray = field(repr=False, compare=False)

    def indices(self, role: str) -> list[int]:
        return [i for i, r in enumerate(self.roles) if r == role]


@dataclass(frozen=True)
class PseudoGT:
    labels: tuple[PseudoLabel, ...]
    warnings: tuple[dict, ...]

    def to_dict(self) -> dict:
        return {
            "pseudo_gt": [
                {
                    "image_id": p.image_id,
                    "class": p.class_id,
                    "anchor": p.anchor,
                    "anchor_bbox": _xywh(p.boxes[p.anchor]),
                    "positive": p.indices(POSITIVE),
                    "ignored": p.indices(IGNORED),
                    "n_negative": len(p.indices(NEGATIVE)),
                }
                for p in self.labels
            ],
            "warnings": list(self.warnings),
        }


def _xywh(b: np.ndarray) -> list[float]:
    x1, y1, x2, y2 = (float(v) for v in b)
    return [x1, y1, round(x2 - x1, 6), round(y2 - y1, 6)]


def pseudo_ground_truth(
    proposals: BoxTable,
    weak_labels: Mapping[int, Sequence[str]],
    config: WeakLabelConfig | None = None,
    class_scores: Mapping[int, Mapping[str, np.ndarray]] | None = None,
) -> PseudoGT:
    """Per image and weak class, the top-scoring proposal among the candidate
    pool becomes the anchor; others are positive (IoU > positive_iou),
    ignored (IoU in (ignore_iou_low, positive_iou]) or negative-eligible.

    ``class_scores[image][class]`` optionally re-scores the image's proposals
    (in score-sorted order) for anchor choice; the proposal score is used
    otherwise. The candidate pool is always the top proposals by proposal score.
    """
    config = config or WeakLabelConfig()
    out, warnings = [], []
    for img in sorted(weak_labels):
        classes = sorted(set(weak_labels[img]))
        idx = proposals.groups.get(int(img))
        if idx is None or not len(idx):
            for c in classes:
                warnings.append({"image_id": int(img), "class": c, "warning": "no proposals"})
            continue
        o = score_order(proposals.scores[idx])
        boxes = proposals.boxes[idx][o]
        base = proposals.scores[idx][o]
        pool = min(config.candidate_pool, len(boxes))
        for c in classes:
            s = base
            if class_scores is not None and c in class_scores.get(img, {}):
                s = np.asarray(class_scores[img][c], dtype=np.float64)
            anchor = int(score_order(s[:pool])[0])
            ov = iou_matrix(boxes[anchor][None], boxes)[0]
            roles = np.where(ov > config.positive_iou, POSITIVE, np.where(ov > config.ignore_iou_low, IGNORED, NEGATIVE)).astype(object)
            roles[anchor] = ANCHOR
            out.append(PseudoLabel(int(img), c, anchor, tuple(roles.tolist()), boxes))
    return PseudoGT(tuple(out), tuple(warnings))
