"""End-to-end studies on the simulator.

Each function stands in for a trained-detector experiment: the simulator
plays the detector, everything downstream (fusion, metrics, similarity,
selection, budgets) is the real toolkit path.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Sequence

from .data import Dataset, build_source_target_split, class_frequencies
from .fusion import FusionConfig, fuse_detections_to_proposals, nms_sweep
from .metrics import MetricConfig, ap_table, average_recall_at_k
from .selection import METHODS, oracle_visual_clustering, select
from .sim import DetectorModel, SimConfig, SimWorld, adjusted_rand_index, generate_world, group_heads, simulate_detections
from .similarity import SimilarityMatrix, similarity_matrix
from .study import BudgetConfig, Condition, StudyReport, build_budgeted_dataset, granularity_study, necessity_eval, sufficiency_eval


@dataclass(frozen=True)
class SimStudyConfig:
    # many target classes so the pooled AR is not dominated by one of them
    sim: SimConfig = field(default_factory=lambda: SimConfig(n_blocks=4, subgroups_per_block=4, classes_per_subgroup=6, n_images=5000))
    n_target: int = 32
    fractions: tuple[float, ...] = (0.1, 0.25, 0.5, 1.0)
    methods: tuple[str, ...] = METHODS
    detector: dict = field(default_factory=lambda: {"data_half": 5.0})  # DetectorModel overrides
    fusion: FusionConfig = field(default_factory=FusionConfig)
    ks: tuple[int, ...] = (100, 1000)
    image_budget: int = 600
    box_budget: int = 2400
    eval_images: int | None = 400  # first N target images; None for all
    similarity_images: int | None = 600
    seed: int = 0

    def to_dict(self) -> dict:
        return {
            "sim": self.sim.to_dict(),
            "n_target": self.n_target,
            "fractions": list(self.fractions),
            "methods": list(self.methods),
            "detector": dict(self.detector),
            "fusion": self.fusion.to_dict(),
            "ks": list(self.ks),
            "image_budget": self.image_budget,
            "box_budget": self.box_budget,
            "eval_images": self.eval_images,
            "similarity_images": self.similarity_images,
            "seed": self.seed,
        }


def detector(cfg: SimStudyConfig, train: Sequence[str], **kw) -> DetectorModel:
    return DetectorModel(tuple(train), **{**cfg.detector, "seed": cfg.seed, **kw})


def oracle_similarity(world: SimWorld, model_kw: dict | None = None, seed: int = 0, n_images: int | None = None) -> SimilarityMatrix:
    """Replaceability matrix of a detector trained on every class.

    Scored on the first ``n_images`` world images (all by default).
    """
    model = DetectorModel(world.classes, **{**(model_kw or {}), "seed": seed})
    ids = [im.image_id for im in world.dataset.images][:n_images]
    dets = simulate_detections(world, model, ids)
    table = ap_table(world.dataset.subset(ids).ground_truth(), dets, world.classes)
    S = similarity_matrix(table)
    S.provenance["split"] = f"first {len(ids)} images of all classes"
    return S


def planted_recovery(config: SimConfig | None = None, seed: int = 0) -> dict:
    """ARI between oracle-visual clusters (P = #blocks) and the planted blocks."""
    world = generate_world(config or SimConfig(), seed=seed)
    S = oracle_similarity(world, seed=seed)
    freq = Counter(a.class_id for a in world.dataset.annotations)
    sel = oracle_visual_clustering(S, freq, world.config.n_blocks)
    lab = {c: i for i, cl in enumerate(sel.clusters) for c in cl}
    ari = adjusted_rand_index([lab[c] for c in world.classes], world.planted_partition())
    return {"seed": seed, "ari": ari, "clusters": [list(c) for c in sel.clusters], "selection": list(sel.classes)}


@dataclass
class PrototypeStudy:
    world: SimWorld
    source: Dataset
    target: Dataset
    similarity: SimilarityMatrix
    p_grid: list[int]
    sufficiency: StudyReport
    necessity: dict[str, dict[int, StudyReport]]
    selections: dict[Condition, tuple[str, ...]]
    budgets: dict[Condition, dict]


def p_grid(n_source: int, fractions: Sequence[float]) -> list[int]:
    return sorted({max(1, round(f * n_source)) for f in fractions})


def prototype_study(cfg: SimStudyConfig | None = None, necessity_methods: Sequence[str] = ("oracle-visual", "semantic-frequency")) -> PrototypeStudy:
    """Sufficiency and necessity curves over the P grid for every selection method."""
    cfg = cfg or SimStudyConfig()
    world = generate_world(cfg.sim, seed=cfg.seed)
    split = build_source_target_split(world.dataset, world.tree, n_target=cfg.n_target, seed=cfg.seed)
    source = split.source_dataset(world.dataset)
    target = split.target_dataset(world.dataset)
    if cfg.eval_images:
        target = target.subset([im.image_id for im in target.images][: cfg.eval_images])
    target_gt = target.ground_truth()
    freq = class_frequencies(source.annotations, world.tree.restrict(split.source_classes))
    S = oracle_similarity(world, cfg.detector, seed=cfg.seed, n_images=cfg.similarity_images)
    grid = p_grid(len(split.source_classes), cfg.fractions)
    metric = MetricConfig(ks=cfg.ks)

    def proposals_for(train, counts):
        dets = simulate_detections(world, detector(cfg, train, train_counts=counts), [im.image_id for im in target.images])
        return fuse_detections_to_proposals(dets, cfg.fusion)

    budget = BudgetConfig(cfg.image_budget, cfg.box_budget, cfg.seed)
    props, selections, budgets = {}, {}, {}
    for method in cfg.methods:
        for p in grid:
            sel = select(method, p, freq=freq, classes=split.source_classes, similarity=S.subset(split.source_classes),
                         tree=world.tree, seed=cfg.seed)
            bd = build_budgeted_dataset(source, sel, budget)
            counts = Counter(a.class_id for a in bd.dataset.annotations)
            train = tuple(sorted(counts))
            cond = Condition(method, p)
            props[cond] = proposals_for(train, counts)
            selections[cond] = train
            budgets[cond] = bd.report()
    # reference: every source class with all of its source data
    baseline = proposals_for(split.source_classes, Counter(a.class_id for a in source.annotations))
    suff = sufficiency_eval(props, target_gt, metric, baseline=baseline, ks=cfg.ks)
    suff.provenance.update({"study": cfg.to_dict(), "split_seed": cfg.seed})
    nec = {
        m: {p: necessity_eval(props[Condition(m, p)], target_gt, S, selections[Condition(m, p)], metric, ks=cfg.ks) for p in grid}
        for m in necessity_methods
        if m in cfg.methods
    }
    return PrototypeStudy(world, source, target, S, grid, suff, nec, selections, budgets)


def necessity_curve(study: PrototypeStudy, method: str, k: int) -> list[tuple[int, float | None]]:
    return [(p, r.extra["necessity"][str(k)]) for p, r in sorted(study.necessity[method].items())]


# crowded images, many same-block heads and duplicated firings: far more than
# 100 proposals per image survive a 0.5 NMS
HIGH_OVERLAP_SIM = SimConfig(
    n_blocks=4, subgroups_per_block=4, classes_per_subgroup=6, n_images=80, mean_objects=12.0, max_objects=24, box_scale=(0.1, 0.5)
)
HIGH_OVERLAP_DETECTOR = {"copies": 6}


def nms_tradeoff(
    seed: int = 0,
    thresholds: Sequence[float] = (0.1, 0.3, 0.5, 0.7, 0.9),
    ks: Sequence[int] = (10, 100, 1000),
    sim: SimConfig = HIGH_OVERLAP_SIM,
    detector_kw: dict | None = None,
    n_target: int = 32,
) -> dict[float, dict[int, float]]:
    """AR@k on target classes for each NMS threshold on a crowded, redundant scene."""
    world = generate_world(sim, seed=seed)
    split = build_source_target_split(world.dataset, world.tree, n_target=n_target, seed=seed)
    target = split.target_dataset(world.dataset)
    model = DetectorModel(split.source_classes, **{**HIGH_OVERLAP_DETECTOR, **(detector_kw or {}), "seed": seed})
    dets = simulate_detections(world, model, target.image_ids)
    sweep = nms_sweep(dets, thresholds, FusionConfig(per_image_cap=max(ks)))
    gt = target.ground_truth()
    metric = MetricConfig(ks=tuple(ks))
    return {t: average_recall_at_k(gt, ps, metric).ar_at for t, ps in sweep.items()}


def granularity_sim(seed: int = 0, sim: SimConfig | None = None, n_target: int = 8, ks: Sequence[int] = (100, 1000)) -> StudyReport:
    """Train with labels collapsed to each tree level; AR of the fused proposals on targets."""
    world = generate_world(sim or SimConfig(n_images=400), seed=seed)
    split = build_source_target_split(world.dataset, world.tree, n_target=n_target, seed=seed)
    source = split.source_dataset(world.dataset)
    target = split.target_dataset(world.dataset)
    levels = list(range(world.tree.max_level + 1))
    props = {}
    for lv in levels:
        heads = group_heads(world, split.source_classes, lv)
        model = DetectorModel(split.source_classes, head_groups=heads, seed=seed)
        dets = simulate_detections(world, model, target.image_ids)
        props[lv] = fuse_detections_to_proposals(dets)
    return granularity_study(source, world.tree, levels, props, target.ground_truth(), MetricConfig(ks=tuple(ks)), ks=ks)
