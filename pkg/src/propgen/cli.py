"""Command-line entry point: one subcommand per pipeline stage.

Every subcommand takes ``--config FILE`` (JSON or TOML), explicit flags and
``--set key=value`` overrides, validates the merged config against a schema,
and writes its outputs plus ``manifest.json`` into a run directory named after
the config and input hashes. ``report`` renders a finished run's table.

Exit codes: 0 success, 2 config error, 3 data error, 4 internal error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

from . import __version__
from .data import (
    Dataset,
    class_frequencies,
    dumps_annotations,
    level_class_counts,
    load_annotations,
    load_results,
    load_tree,
    parse_results,
    read_json,
    relabel_dataset,
    results_to_obj,
    validate_tree,
)
from .errors import ConfigError, DataError, ParseError, ValidationError
from .fusion import NMS_MODES, FusionConfig, fuse_detections_to_proposals, nms_sweep
from .metrics import DEFAULT_IOU_THRESHOLDS, ApTable, MetricConfig, ap_table, average_precision, average_recall_at_k
from .runs import RESULTS, Run, load_config_file, load_run, merge_config, resolve, run_root, sha256_file, validate_config
from .selection import METHODS, ProtoSelection, select
from .similarity import SimilarityMatrix, similarity_matrix
from .sim import DetectorModel, SimConfig, generate_world, simulate_detections
from .study import (
    BudgetConfig,
    Condition,
    WeakLabelConfig,
    build_budgeted_dataset,
    granularity_study,
    necessity_eval,
    pseudo_ground_truth,
    sufficiency_eval,
)

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_INTERNAL = 0, 2, 3, 4

# --------------------------------------------------------------------------
# schema fragments

PATH = {"type": "string", "minLength": 1}
UNIT = {"type": "number", "exclusiveMinimum": 0, "maximum": 1}
COUNT = {"type": "integer", "minimum": 1}
SEED = {"type": "integer", "minimum": 0}
KS = {"type": "array", "items": COUNT, "minItems": 1}
IOUS = {"type": "array", "items": UNIT, "minItems": 1}
NAMES = {"type": "array", "items": {"type": "string"}, "minItems": 1}
FUSION = {
    "nms_threshold": UNIT,
    "score_threshold": {"type": "number", "minimum": 0},
    "per_image_cap": COUNT,
    "nms_mode": {"enum": list(NMS_MODES)},
    "regression": {"type": ["string", "null"]},
}
FUSION_DEFAULTS = {"nms_threshold": 0.5, "score_threshold": 0.0, "per_image_cap": 1000, "nms_mode": "per-class", "regression": None}
METRIC = {"iou_thresholds": IOUS, "max_detections": COUNT}
METRIC_DEFAULTS = {"iou_thresholds": list(DEFAULT_IOU_THRESHOLDS), "max_detections": 100}


def obj(props: dict, required: tuple[str, ...] = (), **extra) -> dict:
    return {"type": "object", "properties": props, "required": list(required), "additionalProperties": False, **extra}


# --------------------------------------------------------------------------
# run context


@dataclass
class Context:
    cfg: dict
    base: Path | None  # directory of the config file; relative paths resolve against it
    run: Run
    exit_code: int = EXIT_OK
    _cache: dict = field(default_factory=dict)

    def path(self, key: str, value: str | None = None, *, must_exist: bool = True) -> Path | None:
        value = self.cfg.get(key) if value is None else value
        if value is None:
            return None
        p = resolve(self.base, value)
        if not p.is_file():
            if must_exist:
                raise ConfigError(f"input file not found: {value}", f"config.{key}")
            return None
        self.run.inputs[key] = sha256_file(p)
        return p

    def annotations(self, key: str) -> Dataset:
        p = self.path(key)
        if p not in self._cache:
            self._cache[p] = load_annotations(p)
        return self._cache[p]

    def metric(self, ks=None) -> MetricConfig:
        return build(MetricConfig, iou_thresholds=tuple(self.cfg["iou_thresholds"]),
                     max_detections=self.cfg["max_detections"], ks=tuple(ks or self.cfg.get("ks", (100,))))

    def fusion(self) -> FusionConfig:
        return build(FusionConfig, **{k: self.cfg[k] for k in FUSION_DEFAULTS})


def build(cls, **kw):
    """Construct a config dataclass, turning its own validation into a config error."""
    try:
        return cls(**kw)
    except (TypeError, ValueError) as e:
        raise ConfigError(str(e), f"config({getattr(cls, '__qualname__', cls)})") from None


def table(kind: str, columns: list[str], rows: list[list], extra: dict | None = None, provenance: dict | None = None) -> dict:
    return {"kind": kind, "columns": columns, "rows": rows, "extra": extra or {}, "provenance": provenance or {}}


# --------------------------------------------------------------------------
# subcommands


def cmd_validate(ctx: Context) -> dict:
    rows = []
    ds = None
    if ctx.cfg.get("annotations"):
        try:
            ds = ctx.annotations("annotations")
        except ValidationError as e:
            rows += [["annotations", "invalid-record", "", msg] for msg in e.problems]
        except ParseError as e:
            rows.append(["annotations", "parse", "", str(e)])
    tree = None
    if ctx.cfg.get("tree"):
        try:
            tree = load_tree(ctx.path("tree"))
        except DataError as e:
            rows.append(["tree", "parse", "", str(e)])
    if tree is not None:
        if ds is not None:
            freq = Counter(a.class_id for a in ds.annotations)
            missing = sorted(c for c in freq if c not in tree.parent)
            rows += [["tree", "unknown-class", c, "annotated class not in tree"] for c in missing]
            tree = tree.with_frequencies({c: n for c, n in freq.items() if c in tree.parent})
        rows += [["tree", v.kind, v.node, v.detail] for v in validate_tree(tree).violations]
    if ctx.cfg.get("results"):
        try:
            parse_results(read_json(ctx.path("results")), ds)
        except ValidationError as e:
            rows += [["results", "invalid-record", "", msg] for msg in e.problems]
        except ParseError as e:
            rows.append(["results", "parse", "", str(e)])
    if rows:
        ctx.exit_code = EXIT_DATA
    return table("validate", ["file", "kind", "node", "detail"], rows, {"ok": not rows, "violations": len(rows)})


def _gt(ctx: Context, key: str = "gt"):
    ds = ctx.annotations(key)
    classes = ctx.cfg.get("classes")
    return ds, ds.ground_truth(classes)


def cmd_eval_ar(ctx: Context) -> dict:
    ds, gt = _gt(ctx)
    props = load_results(ctx.path("proposals"), ds)
    ks = ctx.cfg["ks"]
    ar = average_recall_at_k(gt, props, ctx.metric(ks), exclude_labels=ctx.cfg.get("exclude_labels") or ())
    rows = [[k, ar.ar(k), ar.class_mean_ar(k)] for k in ar.ks]
    extra = {"headline": "pooled", **{f"AR@{k}": ar.ar(k) for k in ar.ks}, "table": ar.to_dict()}
    return table("eval-ar", ["k", "AR", "AR_class_mean"], rows, extra, {"metric_config": ctx.metric(ks).to_dict()})


def cmd_eval_ap(ctx: Context) -> dict:
    ds, gt = _gt(ctx)
    dets = load_results(ctx.path("detections"), ds)
    cfg = ctx.metric()
    classes = tuple(ctx.cfg.get("classes") or sorted(set(gt.classes) | set(dets.classes)))
    if ctx.cfg["cross"]:
        ap = ap_table(gt, dets, classes, cfg)
        ctx.run.add_json("ap_table.json", ap.to_dict())
        rows = [[ci, cj, ap.get(ci, cj)] for ci in classes for cj in classes]
        return table("eval-ap", ["det_class", "gt_class", "AP"], rows, {"classes": list(classes)}, {"metric_config": cfg.to_dict()})
    rows = [[c, average_precision(gt.for_class(c), dets.for_class(c), cfg)] for c in classes]
    defined = [r[1] for r in rows if r[1] is not None]
    extra = {"mAP": sum(defined) / len(defined) if defined else None, "undefined": [r[0] for r in rows if r[1] is None]}
    return table("eval-ap", ["class", "AP"], rows, extra, {"metric_config": cfg.to_dict()})


def _detections(ctx: Context):
    ds = ctx.annotations("annotations") if ctx.cfg.get("annotations") else None
    return ds, load_results(ctx.path("detections"), ds)


def cmd_fuse(ctx: Context) -> dict:
    _, dets = _detections(ctx)
    fc = ctx.fusion()
    props = fuse_detections_to_proposals(dets, fc)
    ctx.run.add_json("proposals.json", results_to_obj(props, provenance=True))
    before, after = Counter(dets.labels), Counter(props.labels)
    rows = [[c, before[c], after[c]] for c in sorted(before)]
    extra = {"detections": len(dets), "proposals": len(props), "images": len(props.groups), "fusion": fc.to_dict(),
             "duplicates": "identical boxes from different classes are kept in per-class mode"}
    return table("fuse", ["source_class", "detections", "proposals"], rows, extra)


def cmd_nms_sweep(ctx: Context) -> dict:
    ds, gt = _gt(ctx)
    dets = load_results(ctx.path("detections"), ds)
    thresholds = ctx.cfg["thresholds"]
    ks = ctx.cfg["ks"]
    metric = ctx.metric(ks)
    sweep = nms_sweep(dets, thresholds, ctx.fusion())
    rows = []
    for t, props in sweep.items():
        ar = average_recall_at_k(gt, props, metric).ar_at
        rows.append([t, len(props)] + [ar[k] for k in ks])
        if ctx.cfg["write_proposals"]:
            ctx.run.add_json(f"proposals-nms{t:g}.json", results_to_obj(props, provenance=True))
    return table("nms-sweep", ["nms_threshold", "proposals"] + [f"AR@{k}" for k in ks], rows,
                 {"fusion": ctx.fusion().to_dict()}, {"metric_config": metric.to_dict()})


def _similarity_table(S: SimilarityMatrix) -> dict:
    rows = [[c] + [float(v) for v in S.values[i]] for i, c in enumerate(S.classes)]
    return table("similarity", ["class"] + list(S.classes), rows, {"undefined_pairs": int(S.undefined.sum())}, S.provenance)


def cmd_similarity(ctx: Context) -> dict:
    if ctx.cfg.get("ap_table"):
        ap = ApTable.from_dict(read_json(ctx.path("ap_table")))
    elif ctx.cfg.get("gt") and ctx.cfg.get("detections"):
        ds, gt = _gt(ctx)
        dets = load_results(ctx.path("detections"), ds)
        classes = ctx.cfg.get("classes") or sorted(set(gt.classes))
        ap = ap_table(gt, dets, classes, ctx.metric())
        ctx.run.add_json("ap_table.json", ap.to_dict())
    else:
        raise ConfigError("need ap_table, or gt and detections", "config")
    S = similarity_matrix(ap, clamp_max=ctx.cfg["clamp_max"])
    S.provenance["split"] = ctx.cfg.get("split_note") or "as supplied"
    ctx.run.add_json("similarity.json", S.to_dict())
    ctx.run.add("similarity.csv", S.to_csv())
    return _similarity_table(S)


def cmd_select(ctx: Context) -> dict:
    method, p = ctx.cfg["method"], ctx.cfg["p"]
    tree = load_tree(ctx.path("tree")) if ctx.cfg.get("tree") else None
    S = SimilarityMatrix.from_dict(read_json(ctx.path("similarity"))) if ctx.cfg.get("similarity") else None
    ds = ctx.annotations("annotations") if ctx.cfg.get("annotations") else None
    classes = ctx.cfg.get("classes")
    if classes is None:
        if tree is not None:
            classes = list(tree.leaves)
        elif S is not None:
            classes = list(S.classes)
        elif ds is not None:
            classes = list(ds.classes)
        else:
            raise ConfigError("need annotations, tree, similarity or classes to know the class list", "config")
    if ds is not None:
        freq = class_frequencies(ds.annotations, tree) if tree is not None else dict(Counter(a.class_id for a in ds.annotations))
    else:
        freq = {}
    if method in ("semantic-frequency", "most-frequent", "oracle-visual") and ds is None:
        raise ConfigError(f"{method} needs class frequencies from annotations", "config.annotations")
    if method == "semantic-frequency" and tree is None:
        raise ConfigError("semantic-frequency needs a tree", "config.tree")
    if method == "oracle-visual" and S is None:
        raise ConfigError("oracle-visual needs a similarity matrix", "config.similarity")
    sel = select(method, p, freq=freq, classes=classes, similarity=S, tree=tree, seed=ctx.cfg.get("seed"))
    if ctx.cfg.get("seed") is not None:
        ctx.run.seeds["selection"] = ctx.cfg["seed"]
    ctx.run.add_json("selection.json", sel.to_dict())
    clusters = sel.clusters or tuple((c,) for c in sel.classes)
    rep = {c for c in sel.classes}
    rows = []
    for members in clusters:
        chosen = [m for m in members if m in rep]
        rows.append([chosen[0] if chosen else None, list(members), sum(int(freq.get(m, 0)) for m in members)])
    return table("select", ["representative", "members", "frequency"], rows, {"method": method, "P": p, "classes": list(sel.classes)})


def cmd_build_dataset(ctx: Context) -> dict:
    ds = ctx.annotations("annotations")
    if ctx.cfg.get("selection"):
        classes = ProtoSelection.from_dict(read_json(ctx.path("selection"))).classes
    elif ctx.cfg.get("classes"):
        classes = tuple(ctx.cfg["classes"])
    else:
        raise ConfigError("need selection or classes", "config")
    budget = build(BudgetConfig, image_budget=ctx.cfg["image_budget"], box_budget=ctx.cfg["box_budget"], seed=ctx.cfg["seed"])
    ctx.run.seeds["budget"] = budget.seed
    out = build_budgeted_dataset(ds, classes, budget)
    ctx.run.add("dataset.json", dumps_annotations(out.dataset))
    rep = out.report()
    rows = [["images", rep["images"], rep["image_budget"]], ["boxes", rep["boxes"], rep["box_budget"]]]
    per_class = Counter(a.class_id for a in out.dataset.annotations)
    extra = {"under_budget": rep["under_budget"], "classes": {c: per_class[c] for c in sorted(per_class)}, "selection": list(classes)}
    return table("build-dataset", ["quantity", "value", "budget"], rows, extra)


def cmd_relabel(ctx: Context) -> dict:
    tree = load_tree(ctx.path("tree"))
    level = ctx.cfg.get("level")
    if ctx.cfg.get("annotations"):
        ds = ctx.annotations("annotations")
        if level is None:
            raise ConfigError("relabeling annotations needs a level", "config.level")
        if level > tree.max_level:
            raise DataError(f"level {level} exceeds tree depth {tree.max_level}")
        out = relabel_dataset(ds, tree, level)
        ctx.run.add("relabeled.json", dumps_annotations(out))
        rows = [[level, len(out.classes), len(out.annotations)]]
        return table("relabel", ["level", "classes", "boxes"], rows)
    counts = level_class_counts(tree)
    levels = [level] if level is not None else sorted(counts)
    for lv in levels:
        if lv not in counts:
            raise DataError(f"level {lv} exceeds tree depth {tree.max_level}")
    return table("relabel", ["level", "classes"], [[lv, counts[lv]] for lv in levels])


def _report_dict(report) -> dict:
    return table(report.kind, report.columns, report.rows, report.extra, report.provenance)


def cmd_sufficiency(ctx: Context) -> dict:
    ds, gt = _gt(ctx, "target_gt")
    props = {}
    for i, c in enumerate(ctx.cfg["conditions"]):
        props[Condition(c["method"], c["p"])] = load_results(ctx.path(f"conditions[{i}].proposals", c["proposals"]), ds)
    baseline = load_results(ctx.path("baseline"), ds) if ctx.cfg.get("baseline") else None
    rep = sufficiency_eval(props, gt, ctx.metric(ctx.cfg["ks"]), baseline=baseline, ks=ctx.cfg["ks"])
    return _report_dict(rep)


def cmd_necessity(ctx: Context) -> dict:
    ds, gt = _gt(ctx, "target_gt")
    S = SimilarityMatrix.from_dict(read_json(ctx.path("similarity")))
    ks = ctx.cfg["ks"]
    rows, per_condition = [], {}
    for i, c in enumerate(ctx.cfg["conditions"]):
        props = load_results(ctx.path(f"conditions[{i}].proposals", c["proposals"]), ds)
        sel = ProtoSelection.from_dict(read_json(ctx.path(f"conditions[{i}].selection", c["selection"])))
        rep = necessity_eval(props, gt, S, sel, ctx.metric(ks), ks=ks)
        per_condition[f"{c['method']}/{c['p']}"] = _report_dict(rep)
        rows.append([c["method"], c["p"]] + [rep.extra["necessity"][str(k)] for k in ks])
    rows.sort(key=lambda r: (r[0], r[1]))
    columns = ["method", "P"] + [f"necessity@{k}" for k in ks]
    return table("necessity", columns, rows, {"conditions": per_condition}, {"metric_config": ctx.metric(ks).to_dict()})


def cmd_granularity(ctx: Context) -> dict:
    tree = load_tree(ctx.path("tree"))
    ds, gt = _gt(ctx, "target_gt")
    source = ctx.annotations("annotations")
    levels, props = [], {}
    for i, entry in enumerate(ctx.cfg["levels"]):
        lv = entry["level"]
        levels.append(lv)
        p = ctx.path(f"levels[{i}].proposals", entry["proposals"], must_exist=False) if entry.get("proposals") else None
        props[lv] = load_results(p, ds) if p is not None else None
    rep = granularity_study(source, tree, levels, props, gt, ctx.metric(ctx.cfg["ks"]), ks=ctx.cfg["ks"])
    return _report_dict(rep)


def _weak_labels(obj: Any) -> dict[int, list[str]]:
    if isinstance(obj, dict):
        return {int(k): list(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return {int(r["image_id"]): list(r["labels"]) for r in obj}
    raise DataError("weak labels must map image ids to class lists")


def cmd_pseudo_gt(ctx: Context) -> dict:
    props = load_results(ctx.path("proposals"))
    weak = _weak_labels(read_json(ctx.path("weak_labels")))
    wc = build(WeakLabelConfig, candidate_pool=ctx.cfg["candidate_pool"], positive_iou=ctx.cfg["positive_iou"],
               ignore_iou_low=ctx.cfg["ignore_iou_low"])
    out = pseudo_ground_truth(props, weak, wc)
    payload = out.to_dict()
    ctx.run.add_json("pseudo_gt.json", payload)
    rows = [[r["image_id"], r["class"], r["anchor"], r["positive"], r["ignored"], r["n_negative"]] for r in payload["pseudo_gt"]]
    return table("pseudo-gt", ["image_id", "class", "anchor", "positive", "ignored", "negative"], rows, {"warnings": payload["warnings"]})


def cmd_simulate(ctx: Context) -> dict:
    seed = ctx.cfg["seed"]
    sim = build(SimConfig.from_dict, d={**ctx.cfg.get("sim", {}), "seed": seed})
    world = generate_world(sim)
    ctx.run.seeds["world"] = seed
    for name, text in world.files().items():
        ctx.run.add(name, text)
    det_cfg = ctx.cfg.get("detector")
    dets = None
    if det_cfg is not None:
        det_cfg = dict(det_cfg)
        train = det_cfg.pop("train_classes", "all")
        train = world.classes if train == "all" else tuple(train)
        model = build(DetectorModel, train_classes=train, **{"seed": seed, **det_cfg})
        ctx.run.seeds["detector"] = model.seed
        dets = simulate_detections(world, model)
        ctx.run.add_json("detections.json", results_to_obj(dets, world.dataset))
        ctx.run.add_json("detector.json", model.to_dict())
    gt_counts = Counter(a.class_id for a in world.dataset.annotations)
    det_counts = Counter(dets.labels) if dets is not None else Counter()
    rows = [[c, world.block_of[c], gt_counts[c], det_counts[c] if dets is not None else None] for c in world.classes]
    extra = {"images": sim.n_images, "boxes": len(world.dataset.annotations), "detections": None if dets is None else len(dets)}
    return table("simulate", ["class", "block", "gt_boxes", "detections"], rows, extra)


@dataclass(frozen=True)
class Flag:
    names: tuple[str, ...]
    key: str
    kwargs: dict = field(default_factory=dict)


@dataclass(frozen=True)
class Command:
    name: str
    help: str
    handler: Callable[[Context], dict]
    schema: dict
    defaults: dict
    flags: tuple[Flag, ...] = ()


def _f(names, key, **kw) -> Flag:
    return Flag(tuple(names.split()), key, kw)


def _gt_flags(key="gt"):
    return (_f(f"--{key.replace('_', '-')}", key, help="ground-truth annotation file"), _f("--classes", "classes", nargs="+"))


COND = obj({"method": {"type": "string"}, "p": COUNT, "proposals": PATH}, ("method", "p", "proposals"))
NEC_COND = obj({"method": {"type": "string"}, "p": COUNT, "proposals": PATH, "selection": PATH}, ("method", "p", "proposals", "selection"))

COMMANDS: tuple[Command, ...] = (
    Command(
        "validate", "check annotation, hierarchy and results files", cmd_validate,
        obj({"annotations": PATH, "tree": PATH, "results": PATH},
            anyOf=[{"required": ["annotations"]}, {"required": ["tree"]}, {"required": ["results"]}]),
        {},
        (_f("--annotations", "annotations"), _f("--tree", "tree"), _f("--results", "results")),
    ),
    Command(
        "eval-ar", "average recall of proposals at k", cmd_eval_ar,
        obj({"gt": PATH, "proposals": PATH, "ks": KS, "classes": NAMES, "exclude_labels": NAMES, **METRIC}, ("gt", "proposals")),
        {"ks": [10, 20, 50, 100, 1000], **METRIC_DEFAULTS},
        (*_gt_flags(), _f("--proposals", "proposals"), _f("--k", "ks", type=int, nargs="+")),
    ),
    Command(
        "eval-ap", "per-class or cross-class detection AP", cmd_eval_ap,
        obj({"gt": PATH, "detections": PATH, "cross": {"type": "boolean"}, "classes": NAMES, **METRIC}, ("gt", "detections")),
        {"cross": False, **METRIC_DEFAULTS},
        (*_gt_flags(), _f("--detections", "detections"), _f("--cross", "cross", action="store_const", const=True)),
    ),
    Command(
        "fuse", "turn class detections into proposals", cmd_fuse,
        obj({"detections": PATH, "annotations": PATH, **FUSION}, ("detections",)),
        dict(FUSION_DEFAULTS),
        (
            _f("--detections", "detections"),
            _f("--annotations", "annotations", help="maps category ids to names"),
            _f("--nms", "nms_threshold", type=float),
            _f("--score-thresh", "score_threshold", type=float),
            _f("--cap", "per_image_cap", type=int),
            _f("--mode", "nms_mode", choices=NMS_MODES),
        ),
    ),
    Command(
        "nms-sweep", "AR of fused proposals across NMS thresholds", cmd_nms_sweep,
        obj({"gt": PATH, "detections": PATH, "thresholds": IOUS, "ks": KS, "classes": NAMES,
             "write_proposals": {"type": "boolean"}, **FUSION, **METRIC}, ("gt", "detections")),
        {"thresholds": [0.1, 0.3, 0.5, 0.7, 0.9], "ks": [10, 100, 1000], "write_proposals": False, **FUSION_DEFAULTS, **METRIC_DEFAULTS},
        (*_gt_flags(), _f("--detections", "detections"), _f("--thresholds", "thresholds", type=float, nargs="+"),
         _f("--k", "ks", type=int, nargs="+"), _f("--score-thresh", "score_threshold", type=float),
         _f("--cap", "per_image_cap", type=int), _f("--mode", "nms_mode", choices=NMS_MODES)),
    ),
    Command(
        "similarity", "class replaceability matrix from cross-class AP", cmd_similarity,
        obj({"ap_table": PATH, "gt": PATH, "detections": PATH, "classes": NAMES, "clamp_max": {"type": "number", "exclusiveMinimum": 0},
             "split_note": {"type": "string"}, **METRIC}),
        {"clamp_max": 1.0, **METRIC_DEFAULTS},
        (_f("--ap-table", "ap_table"), *_gt_flags(), _f("--detections", "detections")),
    ),
    Command(
        "select", "choose P prototypical classes", cmd_select,
        obj({"method": {"enum": list(METHODS)}, "p": COUNT, "seed": SEED, "annotations": PATH, "tree": PATH,
             "similarity": PATH, "classes": NAMES},
            ("method", "p"),
            allOf=[{"if": {"properties": {"method": {"const": "random"}}}, "then": {"required": ["seed"]}}]),
        {},
        (_f("--method", "method", choices=METHODS), _f("--p", "p", type=int), _f("--seed", "seed", type=int),
         _f("--annotations", "annotations"), _f("--tree", "tree"), _f("--similarity", "similarity"),
         _f("--classes", "classes", nargs="+")),
    ),
    Command(
        "build-dataset", "fixed-budget training set over selected classes", cmd_build_dataset,
        obj({"annotations": PATH, "selection": PATH, "classes": NAMES, "image_budget": COUNT, "box_budget": COUNT, "seed": SEED},
            ("annotations", "image_budget", "box_budget", "seed")),
        {},
        (_f("--annotations", "annotations"), _f("--selection", "selection"), _f("--classes", "classes", nargs="+"),
         _f("--images", "image_budget", type=int), _f("--boxes", "box_budget", type=int), _f("--seed", "seed", type=int)),
    ),
    Command(
        "relabel", "collapse labels to a tree level, or count classes per level", cmd_relabel,
        obj({"tree": PATH, "annotations": PATH, "level": {"type": "integer", "minimum": 0}}, ("tree",)),
        {},
        (_f("--tree", "tree"), _f("--annotations", "annotations"), _f("--level", "level", type=int)),
    ),
    Command(
        "sufficiency", "target AR per (method, P) condition", cmd_sufficiency,
        obj({"target_gt": PATH, "conditions": {"type": "array", "items": COND, "minItems": 1}, "baseline": PATH, "ks": KS,
             "classes": NAMES, **METRIC}, ("target_gt", "conditions")),
        {"ks": [100, 1000], **METRIC_DEFAULTS},
        (*_gt_flags("target_gt"), _f("--baseline", "baseline"), _f("--k", "ks", type=int, nargs="+")),
    ),
    Command(
        "necessity", "relative AR drop when removing the most similar prototype", cmd_necessity,
        obj({"target_gt": PATH, "similarity": PATH, "conditions": {"type": "array", "items": NEC_COND, "minItems": 1}, "ks": KS,
             "classes": NAMES, **METRIC}, ("target_gt", "similarity", "conditions")),
        {"ks": [100, 1000], **METRIC_DEFAULTS},
        (*_gt_flags("target_gt"), _f("--similarity", "similarity"), _f("--k", "ks", type=int, nargs="+")),
    ),
    Command(
        "granularity", "target AR per label-space level", cmd_granularity,
        obj({"tree": PATH, "annotations": PATH, "target_gt": PATH, "ks": KS, "classes": NAMES,
             "levels": {"type": "array", "minItems": 1,
                        "items": obj({"level": {"type": "integer", "minimum": 0}, "proposals": {"type": ["string", "null"]}}, ("level",))},
             **METRIC}, ("tree", "annotations", "target_gt", "levels")),
        {"ks": [100, 1000], **METRIC_DEFAULTS},
        (_f("--tree", "tree"), _f("--annotations", "annotations"), *_gt_flags("target_gt"), _f("--k", "ks", type=int, nargs="+")),
    ),
    Command(
        "pseudo-gt", "pseudo boxes for weakly labelled images", cmd_pseudo_gt,
        obj({"proposals": PATH, "weak_labels": PATH, "candidate_pool": COUNT, "positive_iou": UNIT, "ignore_iou_low": UNIT},
            ("proposals", "weak_labels")),
        {"candidate_pool": 100, "positive_iou": 0.7, "ignore_iou_low": 0.5},
        (_f("--proposals", "proposals"), _f("--weak-labels", "weak_labels"), _f("--pool", "candidate_pool", type=int)),
    ),
    Command(
        "simulate", "synthetic world and simulated detector outputs", cmd_simulate,
        obj({"seed": SEED, "sim": {"type": "object"},
             "detector": {"type": "object", "properties": {"train_classes": {"oneOf": [{"const": "all"}, NAMES]}}}},
            ("seed",)),
        {},
        (_f("--seed", "seed", type=int),),
    ),
)
BY_NAME = {c.name: c for c in COMMANDS}


# --------------------------------------------------------------------------
# rendering


def cell(v: Any) -> str:
    """Stored value as text; numbers are copied as written in the JSON."""
    if v is None:
        return "n/a"
    if isinstance(v, str):
        return v
    return json.dumps(v)


def render(results: dict, fmt: str) -> str:
    cols, rows = results["columns"], results["rows"]
    if fmt == "json":
        return json.dumps({"columns": cols, "rows": rows}, indent=1) + "\n"
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(cols)
        for r in rows:
            w.writerow([cell(v) for v in r])
        return buf.getvalue()
    if fmt == "markdown":
        lines = ["| " + " | ".join(cols) + " |", "|" + "|".join("---" for _ in cols) + "|"]
        lines += ["| " + " | ".join(cell(v).replace("|", "\\|") for v in r) + " |" for r in rows]
        return "\n".join(lines) + "\n"
    raise ConfigError(f"unknown format {fmt!r}", "--format")


# --------------------------------------------------------------------------
# argument parsing and dispatch


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON or TOML config file")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config entry (dotted keys, JSON values)")
    common.add_argument("--run-root", help="parent of run directories (default $PROPGEN_RUN_ROOT or ./runs)")
    common.add_argument("--out", help="write the run into exactly this directory")

    parser = argparse.ArgumentParser(prog="propgen", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    for cmd in COMMANDS:
        sp = sub.add_parser(cmd.name, parents=[common], help=cmd.help, description=cmd.help)
        for fl in cmd.flags:
            sp.add_argument(*fl.names, dest=f"flag_{fl.key}", default=None, **fl.kwargs)
    rp = sub.add_parser("report", help="render a finished run's result table")
    rp.add_argument("run_dir")
    rp.add_argument("--format", choices=("markdown", "csv", "json"), default="markdown")
    rp.add_argument("--output", help="write to this file instead of stdout")
    return parser


def execute(cmd: Command, args: argparse.Namespace) -> tuple[int, Path]:
    file_cfg, base = {}, None
    if args.config:
        file_cfg = load_config_file(args.config)
        base = Path(args.config).resolve().parent
    flags = {fl.key: getattr(args, f"flag_{fl.key}") for fl in cmd.flags}
    cfg = merge_config(cmd.defaults, file_cfg, flags, args.overrides)
    validate_config(cfg, cmd.schema)
    run = Run(cmd.name, cfg, {}, run_root(args.run_root))
    ctx = Context(cfg, base, run)
    results = cmd.handler(ctx)
    results["provenance"] = {**results.get("provenance", {}), "run": run.provenance()}
    run.add_json(RESULTS, results)
    run.add("results.csv", render(results, "csv"))
    out = run.commit(Path(args.out) if args.out else None)
    return ctx.exit_code, out


def report(args: argparse.Namespace) -> int:
    _, results = load_run(args.run_dir)
    text = render(results, args.format)
    if args.output:
        Path(args.output).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def fail(kind: str, message: str, code: int, field_path: str = "") -> int:
    err = {"error": kind, "message": message}
    if field_path:
        err["field"] = field_path
    print(json.dumps(err), file=sys.stderr)
    return code


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "report":
            return report(args)
        code, out = execute(BY_NAME[args.command], args)
        print(out)
        return code
    except ConfigError as e:
        return fail("config", str(e), EXIT_CONFIG, e.field_path)
    except DataError as e:
        return fail("data", str(e), EXIT_DATA)
    except Exception as e:  # noqa: BLE001
        return fail("internal", f"{type(e).__name__}: {e}", EXIT_INTERNAL)


if __name__ == "__main__":
    sys.exit(main())
