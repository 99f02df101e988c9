"""Core data model: boxes, annotations, class taxonomy, and source/target splits.

Boxes are corner-convention floats ``(x1, y1, x2, y2)`` everywhere inside the
toolkit. COCO ``[x, y, w, h]`` only appears at the file boundary.

Class identity is the category *name*; integer COCO category ids are kept for
round-tripping files but never used for logic.
"""

from __future__ import annotations

import dataclasses
import json
import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from .errors import DataError, ParseError, ValidationError

# bbox widths are rounded to this many decimals on output so that
# dump(load(x)) is a fixed point for files carrying <= 6 decimals.
BBOX_DECIMALS = 6


@dataclass(frozen=True)
class Box:
    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        vals = (self.x1, self.y1, self.x2, self.y2)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError(f"non-finite box {vals}")
        if not (self.x2 > self.x1 and self.y2 > self.y1):
            raise ValueError(f"degenerate box {vals}")

    @classmethod
    def from_xywh(cls, x: float, y: float, w: float, h: float) -> Box:
        return cls(float(x), float(y), float(x) + float(w), float(y) + float(h))

    def to_xywh(self) -> list[float]:
        return [
            self.x1,
            self.y1,
            round(self.x2 - self.x1, BBOX_DECIMALS),
            round(self.y2 - self.y1, BBOX_DECIMALS),
        ]

    @property
    def area(self) -> float:
        return (self.x2 - self.x1) * (self.y2 - self.y1)

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x1, self.y1, self.x2, self.y2)


@dataclass(frozen=True)
class Annotation:
    image_id: int
    box: Box
    class_id: str
    ann_id: int | None = None


@dataclass(frozen=True)
class ImageRecord:
    image_id: int
    width: int
    height: int


@dataclass(frozen=True)
class Category:
    id: int
    name: str


@dataclass(frozen=True, eq=False)
class BoxTable:
    """Flat column store of boxes, grouped lazily by image.

    Used for ground truth (``scores is None``), raw detections (``labels`` are
    detector classes) and fused proposals (``labels`` are provenance classes).
    """

    image_ids: np.ndarray
    boxes: np.ndarray
    labels: np.ndarray
    scores: np.ndarray | None = None

    def __post_init__(self):
        ids = np.asarray(self.image_ids, dtype=np.int64).reshape(-1)
        boxes = np.asarray(self.boxes, dtype=np.float64).reshape(-1, 4)
        labels = np.asarray(self.labels, dtype=str).reshape(-1)
        object.__setattr__(self, "image_ids", ids)
        object.__setattr__(self, "boxes", boxes)
        object.__setattr__(self, "labels", labels)
        if self.scores is not None:
            scores = np.asarray(self.scores, dtype=np.float64).reshape(-1)
            object.__setattr__(self, "scores", scores)
            if len(scores) != len(ids):
                raise ValueError("scores length mismatch")
        if not (len(ids) == len(boxes) == len(labels)):
            raise ValueError("column length mismatch")

    def __len__(self) -> int:
        return len(self.image_ids)

    @classmethod
    def empty(cls, scored: bool = False) -> BoxTable:
        return cls(
            np.zeros(0, np.int64),
            np.zeros((0, 4)),
            np.zeros(0, str),
            np.zeros(0) if scored else None,
        )

    @classmethod
    def concat(cls, tables: Sequence[BoxTable]) -> BoxTable:
        tables = [t for t in tables if len(t)]
        if not tables:
            return cls.empty()
        scored = all(t.scores is not None for t in tables)
        return cls(
            np.concatenate([t.image_ids for t in tables]),
            np.concatenate([t.boxes for t in tables]),
            np.concatenate([t.labels for t in tables]),
            np.concatenate([t.scores for t in tables]) if scored else None,
        )

    @cached_property
    def groups(self) -> dict[int, np.ndarray]:
        """image_id -> row indices (ascending), images in ascending id order."""
        if not len(self):
            return {}
        order = np.argsort(self.image_ids, kind="stable")
        ids = self.image_ids[order]
        cuts = np.flatnonzero(np.diff(ids)) + 1
        return {
            int(chunk_ids[0]): chunk
            for chunk_ids, chunk in zip(np.split(ids, cuts), np.split(order, cuts))
        }

    @cached_property
    def classes(self) -> tuple[str, ...]:
        return tuple(sorted(set(self.labels.tolist())))

    def select(self, index) -> BoxTable:
        index = np.asarray(index)
        return dataclasses.replace(
            self,
            image_ids=self.image_ids[index],
            boxes=self.boxes[index],
            labels=self.labels[index],
            scores=None if self.scores is None else self.scores[index],
        )

    def for_image(self, image_id: int) -> BoxTable:
        return self.select(self.groups.get(int(image_id), np.zeros(0, np.int64)))

    def for_class(self, class_id: str) -> BoxTable:
        return self.select(self.labels == class_id)

    def for_classes(self, class_ids: Iterable[str]) -> BoxTable:
        return self.select(np.isin(self.labels, list(class_ids)))


@dataclass(frozen=True)
class Dataset:
    images: tuple[ImageRecord, ...]
    annotations: tuple[Annotation, ...]
    categories: tuple[Category, ...]

    @property
    def classes(self) -> tuple[str, ...]:
        return tuple(c.name for c in self.categories)

    @cached_property
    def image_ids(self) -> frozenset[int]:
        return frozenset(im.image_id for im in self.images)

    @cached_property
    def annotations_by_image(self) -> dict[int, list[Annotation]]:
        out: dict[int, list[Annotation]] = defaultdict(list)
        for a in self.annotations:
            out[a.image_id].append(a)
        return dict(out)

    def ground_truth(self, classes: Iterable[str] | None = None) -> BoxTable:
        anns = self.annotations
        if classes is not None:
            keep = set(classes)
            anns = tuple(a for a in anns if a.class_id in keep)
        if not anns:
            return BoxTable.empty()
        return BoxTable(
            [a.image_id for a in anns],
            [a.box.as_tuple() for a in anns],
            [a.class_id for a in anns],
        )

    def subset(
        self,
        image_ids: Iterable[int] | None = None,
        classes: Iterable[str] | None = None,
    ) -> Dataset:
        """Keep the given images, and among their boxes only the given classes.

        The category table is trimmed to ``classes`` when provided.
        """
        ids = self.image_ids if image_ids is None else frozenset(image_ids)
        cls = None if classes is None else frozenset(classes)
        images = tuple(im for im in self.images if im.image_id in ids)
        anns = tuple(
            a
            for a in self.annotations
            if a.image_id in ids and (cls is None or a.class_id in cls)
        )
        cats = self.categories
        if cls is not None:
            cats = tuple(c for c in cats if c.name in cls)
        return Dataset(images, anns, cats)

    def replace_annotations(
        self, annotations: Iterable[Annotation], categories: Iterable[Category] | None = None
    ) -> Dataset:
        return Dataset(
            self.images,
            tuple(annotations),
            self.categories if categories is None else tuple(categories),
        )


# --------------------------------------------------------------------------
# COCO-style JSON I/O


def _num(v: float) -> float | int:
    f = float(v)
    return int(f) if f.is_integer() and abs(f) < 2**53 else f


def _decode_json(raw: bytes, what: str) -> Any:
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise ParseError(f"{what}: invalid utf-8 at byte offset {exc.start}", exc.start)
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        offset = len(text[: exc.pos].encode("utf-8"))
        raise ParseError(f"{what}: malformed JSON at byte offset {offset}: {exc.msg}", offset)


def read_json(path: str | Path) -> Any:
    path = Path(path)
    return _decode_json(path.read_bytes(), str(path))


def parse_annotations(obj: Any) -> Dataset:
    """Validate a decoded COCO-style object and build a :class:`Dataset`."""
    if not isinstance(obj, dict):
        raise ValidationError("top level must be an object")
    missing = [k for k in ("images", "annotations", "categories") if k not in obj]
    if missing:
        raise ValidationError([f"missing top-level key {k!r}" for k in missing])

    problems: list[str] = []
    categories = []
    by_id: dict[int, str] = {}
    for i, c in enumerate(obj["categories"]):
        try:
            cat = Category(int(c["id"]), str(c["name"]))
        except (KeyError, TypeError, ValueError):
            problems.append(f"bad category at index {i}")
            continue
        if cat.id in by_id:
            problems.append(f"duplicate category id {cat.id}")
        if cat.name in by_id.values():
            problems.append(f"duplicate category name {cat.name!r}")
        by_id[cat.id] = cat.name
        categories.append(cat)

    images = []
    seen: set[int] = set()
    for i, im in enumerate(obj["images"]):
        try:
            rec = ImageRecord(int(im["id"]), int(im["width"]), int(im["height"]))
        except (KeyError, TypeError, ValueError):
            problems.append(f"bad image record at index {i}")
            continue
        if rec.width <= 0 or rec.height <= 0:
            problems.append(f"non-positive image size at index {i}")
        if rec.image_id in seen:
            problems.append(f"duplicate image id {rec.image_id}")
        seen.add(rec.image_id)
        images.append(rec)

    annotations = []
    unknown: dict[int, list[int]] = defaultdict(list)
    for i, a in enumerate(obj["annotations"]):
        try:
            bbox = [float(v) for v in a["bbox"]]
            image_id = int(a["image_id"])
            cat_id = int(a["category_id"])
            ann_id = int(a["id"]) if "id" in a else None
        except (KeyError, TypeError, ValueError):
            problems.append(f"bad annotation record at index {i}")
            continue
        if len(bbox) != 4:
            problems.append(f"bbox must have 4 values at index {i}")
            continue
        if cat_id not in by_id:
            unknown[cat_id].append(i)
            continue
        if image_id not in seen:
            problems.append(f"unknown image_id {image_id} at index {i}")
            continue
        try:
            box = Box.from_xywh(*bbox)
        except ValueError:
            problems.append(f"degenerate box at index {i}")
            continue
        annotations.append(Annotation(image_id, box, by_id[cat_id], ann_id))
    if unknown:
        listing = ", ".join(f"{cid} (indices {idx[:5]})" for cid, idx in sorted(unknown.items()))
        problems.append(f"unknown category_id: {listing}")
    if problems:
        raise ValidationError(problems)
    return Dataset(tuple(images), tuple(annotations), tuple(categories))


def load_annotations(path: str | Path) -> Dataset:
    """Load and validate a COCO-style annotation file."""
    return parse_annotations(read_json(path))


def annotations_to_obj(ds: Dataset) -> dict:
    name_to_id = {c.name: c.id for c in ds.categories}
    anns = []
    for i, a in enumerate(ds.annotations):
        anns.append(
            {
                "id": a.ann_id if a.ann_id is not None else i + 1,
                "image_id": a.image_id,
                "category_id": name_to_id[a.class_id],
                "bbox": [_num(v) for v in a.box.to_xywh()],
            }
        )
    return {
        "images": [{"id": im.image_id, "width": im.width, "height": im.height} for im in ds.images],
        "annotations": anns,
        "categories": [{"id": c.id, "name": c.name} for c in ds.categories],
    }


def dumps_annotations(ds: Dataset) -> str:
    return json.dumps(annotations_to_obj(ds), indent=1) + "\n"


def save_annotations(ds: Dataset, path: str | Path) -> None:
    Path(path).write_text(dumps_annotations(ds))


def load_results(path: str | Path, dataset: Dataset | None = None) -> BoxTable:
    """Read a COCO results file (list of scored boxes) into a :class:`BoxTable`.

    Category ids are mapped to names through ``dataset`` when given; an entry
    carrying ``source_class`` (fused proposals) uses that as its label.
    """
    return parse_results(read_json(path), dataset)


def parse_results(obj: Any, dataset: Dataset | None = None) -> BoxTable:
    if not isinstance(obj, list):
        raise ValidationError("results file must be a JSON list")
    by_id = {c.id: c.name for c in dataset.categories} if dataset else {}
    ids, boxes, labels, scores = [], [], [], []
    problems = []
    for i, r in enumerate(obj):
        try:
            x, y, w, h = (float(v) for v in r["bbox"])
            score = float(r["score"])
            image_id = int(r["image_id"])
        except (KeyError, TypeError, ValueError):
            problems.append(f"bad result record at index {i}")
            continue
        if not (w > 0 and h > 0) or not all(map(math.isfinite, (x, y, w, h, score))):
            problems.append(f"degenerate box at index {i}")
            continue
        if "source_class" in r:
            label = str(r["source_class"])
        elif "category_id" in r:
            cid = r["category_id"]
            label = by_id.get(int(cid), str(cid)) if by_id else str(cid)
        else:
            label = ""
        ids.append(image_id)
        boxes.append((x, y, x + w, y + h))
        labels.append(label)
        scores.append(score)
    if problems:
        raise ValidationError(problems)
    if not ids:
        return BoxTable.empty(scored=True)
    return BoxTable(ids, boxes, labels, scores)


def results_to_obj(table: BoxTable, dataset: Dataset | None = None, provenance: bool = False) -> list:
    name_to_id = {c.name: c.id for c in dataset.categories} if dataset else {}
    out = []
    scores = table.scores if table.scores is not None else np.ones(len(table))
    for img, b, lab, s in zip(table.image_ids, table.boxes, table.labels, scores):
        rec: dict[str, Any] = {"image_id": int(img)}
        if not provenance:
            rec["category_id"] = name_to_id.get(str(lab), str(lab))
        rec["bbox"] = [
            _num(b[0]),
            _num(b[1]),
            _num(round(b[2] - b[0], BBOX_DECIMALS)),
            _num(round(b[3] - b[1], BBOX_DECIMALS)),
        ]
        rec["score"] = float(s)
        if provenance:
            rec["source_class"] = str(lab)
        out.append(rec)
    return out


def save_results(table: BoxTable, path: str | Path, dataset: Dataset | None = None, provenance: bool = False) -> None:
    Path(path).write_text(json.dumps(results_to_obj(table, dataset, provenance)) + "\n")


# --------------------------------------------------------------------------
# Semantic tree


@dataclass(frozen=True)
class TreeNode:
    name: str
    parent: str | None
    level: int | None = None  # explicit level, if the source file carried one


@dataclass(frozen=True)
class Violation:
    kind: str
    node: str
    detail: str = ""


@dataclass(frozen=True)
class TreeReport:
    violations: tuple[Violation, ...]
    max_level: int | None

    @property
    def ok(self) -> bool:
        return not self.violations


@dataclass(frozen=True, eq=False)
class SemanticTree:
    """Rooted class hierarchy; levels are depths from the root (L0).

    Construction never fails so that :func:`validate_tree` can report on broken
    hierarchies; structural accessors assume a valid tree.
    """

    nodes: tuple[TreeNode, ...]
    frequencies: Mapping[str, int] = field(default_factory=dict)

    @classmethod
    def from_parents(cls, parents: Mapping[str, str | None], frequencies: Mapping[str, int] | None = None) -> SemanticTree:
        return cls(tuple(TreeNode(n, p) for n, p in parents.items()), dict(frequencies or {}))

    def with_frequencies(self, frequencies: Mapping[str, int]) -> SemanticTree:
        return SemanticTree(self.nodes, dict(frequencies))

    @cached_property
    def parent(self) -> dict[str, str | None]:
        return {n.name: n.parent for n in self.nodes}

    @cached_property
    def children(self) -> dict[str, tuple[str, ...]]:
        kids: dict[str, list[str]] = {n: [] for n in self.parent}
        for n, p in self.parent.items():
            if p is not None and p in kids and p != n:
                kids[p].append(n)
        return {n: tuple(sorted(k)) for n, k in kids.items()}

    @cached_property
    def root(self) -> str:
        roots = [n for n, p in self.parent.items() if p is None]
        if len(roots) != 1:
            raise DataError(f"tree must have exactly one root, found {len(roots)}")
        return roots[0]

    @cached_property
    def levels(self) -> dict[str, int]:
        out = {self.root: 0}
        stack = [self.root]
        while stack:
            n = stack.pop()
            for c in self.children[n]:
                if c not in out:
                    out[c] = out[n] + 1
                    stack.append(c)
        return out

    def level(self, name: str) -> int:
        return self.levels[name]

    @property
    def max_level(self) -> int:
        return max(self.levels.values())

    def is_leaf(self, name: str) -> bool:
        return not self.children[name]

    @cached_property
    def leaves(self) -> tuple[str, ...]:
        return tuple(sorted(n for n in self.levels if not self.children[n]))

    def nodes_at(self, level: int) -> tuple[str, ...]:
        return tuple(sorted(n for n, lv in self.levels.items() if lv == level))

    def path(self, name: str) -> list[str]:
        """Root-to-node path."""
        out = [name]
        while self.parent[out[-1]] is not None:
            out.append(self.parent[out[-1]])
        return out[::-1]

    def ancestor_at(self, name: str, level: int) -> str:
        """Ancestor of ``name`` at ``level``; a node at or above ``level`` maps to itself."""
        p = self.path(name)
        return p[level] if level < len(p) else name

    def lca(self, a: str, b: str) -> str:
        pa, pb = self.path(a), self.path(b)
        out = pa[0]
        for x, y in zip(pa, pb):
            if x != y:
                break
            out = x
        return out

    def restrict(self, leaves: Iterable[str]) -> SemanticTree:
        """Prune the tree to the given leaves and their ancestors."""
        keep: set[str] = set()
        for leaf in leaves:
            keep.update(self.path(leaf))
        nodes = tuple(n for n in self.nodes if n.name in keep)
        freq = {k: v for k, v in self.frequencies.items() if k in keep}
        return SemanticTree(nodes, freq)


def validate_tree(tree: SemanticTree) -> TreeReport:
    """Check tree invariants; violations are returned, never raised."""
    v: list[Violation] = []
    parents_of: dict[str, set] = defaultdict(set)
    explicit: dict[str, int] = {}
    for n in tree.nodes:
        parents_of[n.name].add(n.parent)
        if n.level is not None:
            explicit[n.name] = n.level
    for name, ps in sorted(parents_of.items()):
        if len(ps) > 1:
            v.append(Violation("multi-parent", name, f"parents {sorted(map(str, ps))}"))
    parent = tree.parent
    roots = sorted(n for n, p in parent.items() if p is None)
    if len(roots) != 1:
        v.append(Violation("root", ",".join(roots), f"expected one root, found {len(roots)}"))
    for name, p in sorted(parent.items()):
        if p is not None and p not in parent:
            v.append(Violation("missing-parent", name, f"parent {p!r} not defined"))

    # depth via memoised parent-chain walks; -1 marks "never reaches the root"
    depth: dict[str, int] = {}
    in_cycle: set[str] = set()
    for name in sorted(parent):
        chain: list[str] = []
        cur: str | None = name
        while cur is not None and cur in parent and cur not in depth and cur not in chain:
            chain.append(cur)
            cur = parent[cur]
        if cur is None:
            base = -1  # chain[-1] is a root
        elif cur in chain:
            in_cycle.update(chain[chain.index(cur):])
            base = None
        elif cur not in parent:
            base = None
        else:
            base = depth[cur] if depth[cur] >= 0 else None
        for k, node in enumerate(reversed(chain)):
            depth[node] = -1 if base is None else base + k + 1
    for name in sorted(in_cycle):
        v.append(Violation("cycle", name, f"parent chain of {name!r} loops"))
    for name, d in sorted(depth.items()):
        if d < 0 and name not in in_cycle and parent[name] in parent:
            v.append(Violation("unreachable", name, "does not reach the root"))

    for name, lv in sorted(explicit.items()):
        d = depth.get(name, -1)
        if d >= 0 and lv != d:
            v.append(Violation("level-gap", name, f"declared level {lv}, depth {d}"))

    has_child = {p for p in parent.values() if p is not None}
    for name, f in sorted(tree.frequencies.items()):
        if f < 0:
            v.append(Violation("negative-frequency", name, str(f)))
        if f > 0 and name in has_child:
            v.append(Violation("annotated-internal", name, f"frequency {f}"))

    valid_depths = [d for d in depth.values() if d >= 0]
    return TreeReport(tuple(v), max(valid_depths) if valid_depths else None)


def require_valid(tree: SemanticTree) -> SemanticTree:
    report = validate_tree(tree)
    if not report.ok:
        raise ValidationError([f"{x.kind} at {x.node!r}: {x.detail}" for x in report.violations])
    return tree


def parse_tree(obj: Any) -> SemanticTree:
    """Hierarchy JSON: a list of ``{id, name, parent}``; ``parent`` is an id or null."""
    if not isinstance(obj, list):
        raise ValidationError("hierarchy must be a JSON list")
    id_to_name: dict[Any, str] = {}
    for i, rec in enumerate(obj):
        try:
            id_to_name.setdefault(rec["id"], str(rec["name"]))
        except (KeyError, TypeError):
            raise ValidationError(f"bad hierarchy record at index {i}")
    nodes = []
    for rec in obj:
        p = rec.get("parent")
        nodes.append(TreeNode(id_to_name[rec["id"]], None if p is None else id_to_name.get(p, str(p)), rec.get("level")))
    return SemanticTree(tuple(nodes))


def load_tree(path: str | Path) -> SemanticTree:
    return parse_tree(read_json(path))


def tree_to_obj(tree: SemanticTree) -> list[dict]:
    ids = {name: i + 1 for i, name in enumerate(dict.fromkeys(x.name for x in tree.nodes))}
    out = []
    for n in tree.nodes:
        rec = {"id": ids[n.name], "name": n.name, "parent": None if n.parent is None else ids.get(n.parent, n.parent)}
        if n.level is not None:
            rec["level"] = n.level
        out.append(rec)
    return out


def save_tree(tree: SemanticTree, path: str | Path) -> None:
    Path(path).write_text(json.dumps(tree_to_obj(tree), indent=1) + "\n")


# --------------------------------------------------------------------------
# Dataset operations


def class_frequencies(annotations: Iterable[Annotation], tree: SemanticTree) -> dict[str, int]:
    """Box counts per leaf class; leaves without boxes report 0."""
    counts = Counter(a.class_id for a in annotations)
    bad = sorted(c for c in counts if c not in tree.parent or not tree.is_leaf(c))
    if bad:
        raise DataError(f"annotations on non-leaf or unknown classes: {bad}")
    return {leaf: counts.get(leaf, 0) for leaf in tree.leaves}


def remove_internal_node_images(dataset: Dataset, tree: SemanticTree) -> Dataset:
    """Drop every image holding a box labeled with an internal tree node."""
    bad = {a.image_id for a in dataset.annotations if a.class_id in tree.parent and not tree.is_leaf(a.class_id)}
    return dataset.subset(image_ids=dataset.image_ids - bad)


@dataclass(frozen=True)
class DatasetSplit:
    source_classes: tuple[str, ...]
    target_classes: tuple[str, ...]
    source_images: tuple[int, ...]
    target_images: tuple[int, ...]
    seed: int | None = None

    def source_dataset(self, dataset: Dataset) -> Dataset:
        return dataset.subset(self.source_images, self.source_classes)

    def target_dataset(self, dataset: Dataset) -> Dataset:
        return dataset.subset(self.target_images, self.target_classes)

    def to_obj(self) -> dict:
        return {
            "source_classes": list(self.source_classes),
            "target_classes": list(self.target_classes),
            "source_images": list(self.source_images),
            "target_images": list(self.target_images),
            "provenance": {"seed": self.seed, "n_source": len(self.source_classes), "n_target": len(self.target_classes)},
        }

    @classmethod
    def from_obj(cls, obj: dict) -> DatasetSplit:
        return cls(
            tuple(obj["source_classes"]),
            tuple(obj["target_classes"]),
            tuple(obj["source_images"]),
            tuple(obj["target_images"]),
            obj.get("provenance", {}).get("seed"),
        )


def build_source_target_split(
    dataset: Dataset,
    tree: SemanticTree,
    target_classes: Sequence[str] | None = None,
    *,
    n_target: int | None = None,
    seed: int = 0,
) -> DatasetSplit:
    """Split leaf classes into source/target and assign images.

    Any image holding a target-class box goes to the target side only;
    everything else is a source image. With ``target_classes=None``,
    ``n_target`` leaves are drawn at random using ``seed``.
    """
    leaves = tree.leaves
    if target_classes is None:
        if not n_target:
            raise DataError("need target_classes or a positive n_target")
        rng = np.random.default_rng(seed)
        target_classes = [leaves[i] for i in sorted(rng.choice(len(leaves), size=n_target, replace=False))]
    targets = tuple(sorted(set(target_classes)))
    if not targets:
        raise DataError("target class list is empty")
    outside = [t for t in targets if t not in leaves]
    if outside:
        raise DataError(f"target classes are not leaves: {outside}")
    sources = tuple(c for c in leaves if c not in set(targets))
    if not sources:
        raise DataError("source empty: every leaf is a target class")
    tset = set(targets)
    hit = {a.image_id for a in dataset.annotations if a.class_id in tset}
    src = tuple(sorted(im.image_id for im in dataset.images if im.image_id not in hit))
    tgt = tuple(sorted(im.image_id for im in dataset.images if im.image_id in hit))
    return DatasetSplit(sources, targets, src, tgt, seed)


def relabel_to_level(
    annotations: Iterable[Annotation], tree: SemanticTree, level: int
) -> tuple[list[Annotation], int]:
    """Replace each box label by its ancestor at ``level``.

    Returns the relabeled boxes and the number of distinct labels in use.
    """
    if level < 0 or level > tree.max_level:
        raise DataError(f"level {level} outside 0..{tree.max_level}")
    cache: dict[str, str] = {}
    out = []
    for a in annotations:
        if a.class_id not in cache:
            cache[a.class_id] = tree.ancestor_at(a.class_id, level)
        out.append(dataclasses.replace(a, class_id=cache[a.class_id]))
    return out, len({a.class_id for a in out})


def relabel_dataset(dataset: Dataset, tree: SemanticTree, level: int) -> Dataset:
    anns, _ = relabel_to_level(dataset.annotations, tree, level)
    names = sorted({a.class_id for a in anns})
    return dataset.replace_annotations(anns, [Category(i + 1, n) for i, n in enumerate(names)])


def level_class_counts(tree: SemanticTree, leaves: Iterable[str] | None = None) -> dict[int, int]:
    """Distinct relabeled classes per level when every given leaf carries a box."""
    leaves = tree.leaves if leaves is None else tuple(leaves)
    return {
        lv: len({tree.ancestor_at(leaf, lv) for leaf in leaves})
        for lv in range(tree.max_level + 1)
    }
