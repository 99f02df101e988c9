#!/usr/bin/env python3
"""Regenerate the JSON fixtures shipped in src/propgen/fixtures."""

from __future__ import annotations

import argparse
import json
from pathlib import Path

from propgen.data import Annotation, Box, Category, Dataset, ImageRecord, SemanticTree, TreeNode, dumps_annotations, tree_to_obj

OUT = Path(__file__).resolve().parents[1] / "src" / "propgen" / "fixtures"

# nodes and leaves per depth of the OIV4-like tree; relabeling to depth d
# yields (nodes at d) + (leaves above d) classes: 1, 86, 270, 398, 432
NODES_PER_DEPTH = (1, 86, 260, 288, 72)
LEAVES_PER_DEPTH = (0, 10, 100, 250, 72)


def oiv4_like_tree() -> SemanticTree:
    nodes = [TreeNode("entity", None)]
    prev_internal = ["entity"]
    for depth in range(1, len(NODES_PER_DEPTH)):
        names = [f"d{depth}n{i:03d}" for i in range(NODES_PER_DEPTH[depth])]
        for i, name in enumerate(names):
            # round-robin keeps every internal node of the previous depth non-empty
            nodes.append(TreeNode(name, prev_internal[i % len(prev_internal)]))
        n_leaves = LEAVES_PER_DEPTH[depth]
        prev_internal = names[n_leaves:]
    return SemanticTree(tuple(nodes))


def one_box_per_leaf(tree: SemanticTree) -> Dataset:
    leaves = sorted(tree.leaves)
    images, anns = [], []
    for i, leaf in enumerate(leaves):
        img = i // 8 + 1
        if not images or images[-1].image_id != img:
            images.append(ImageRecord(img, 640, 480))
        x = 70 * (i % 8)
        anns.append(Annotation(img, Box(x, 10, x + 60, 90), leaf, i + 1))
    cats = tuple(Category(i + 1, c) for i, c in enumerate(leaves))
    return Dataset(tuple(images), tuple(anns), cats)


def four_leaf():
    tree = SemanticTree((TreeNode("root", None),) + tuple(TreeNode(c, "root") for c in "ABCD"))
    counts = {"A": 10, "B": 5, "C": 3, "D": 2}
    images = tuple(ImageRecord(i, 100, 100) for i in range(1, 11))
    anns = []
    for c, n in counts.items():
        for j in range(n):
            anns.append(Annotation(j + 1, Box(5 * j, 5 * j, 5 * j + 20, 5 * j + 20), c, len(anns) + 1))
    cats = tuple(Category(i + 1, c) for i, c in enumerate("ABCD"))
    return tree, Dataset(images, tuple(anns), cats)


def tiny_gt() -> Dataset:
    images = (ImageRecord(1, 200, 100), ImageRecord(2, 200, 100))
    anns = (
        Annotation(1, Box(0, 0, 10, 10), "car", 1),
        Annotation(1, Box(50, 20, 90, 60), "boat", 2),
        Annotation(2, Box(10, 10, 60, 40), "car", 3),
    )
    return Dataset(images, anns, (Category(1, "car"), Category(2, "boat")))


def as_results(ds: Dataset) -> list[dict]:
    ids = {c.name: c.id for c in ds.categories}
    return [{"image_id": a.image_id, "category_id": ids[a.class_id], "bbox": a.box.to_xywh(), "score": 1.0} for a in ds.annotations]


def pseudo_scene() -> tuple[list[dict], dict]:
    # image 1: anchor [0,0,100,100]; IoUs against it are 0.8, 0.7, 0.6, 0.5, 0
    boxes = [
        ([0, 0, 100, 100], 0.9),
        ([0, 0, 100, 80], 0.5),
        ([0, 0, 100, 70], 0.45),
        ([0, 0, 100, 60], 0.4),
        ([0, 0, 100, 50], 0.35),
        ([200, 200, 50, 50], 0.3),
    ]
    props = [{"image_id": 1, "bbox": b, "score": s, "source_class": "det"} for b, s in boxes]
    # image 3: two disjoint proposals {0.9, 0.4}
    props += [
        {"image_id": 3, "bbox": [0, 0, 20, 20], "score": 0.4, "source_class": "det"},
        {"image_id": 3, "bbox": [100, 100, 20, 20], "score": 0.9, "source_class": "det"},
    ]
    weak = {"1": ["dog"], "2": ["cat"], "3": ["bird"]}
    return props, weak


def write(name: str, text: str) -> None:
    (OUT / name).write_text(text)
    print(OUT / name)


def main() -> None:
    argparse.ArgumentParser(description=__doc__).parse_args()
    OUT.mkdir(parents=True, exist_ok=True)
    tree = oiv4_like_tree()
    write("oiv4_like_hierarchy.json", json.dumps(tree_to_obj(tree), indent=1) + "\n")
    write("oiv4_like_annotations.json", dumps_annotations(one_box_per_leaf(tree)))
    t4, d4 = four_leaf()
    write("four_leaf_hierarchy.json", json.dumps(tree_to_obj(t4), indent=1) + "\n")
    write("four_leaf_annotations.json", dumps_annotations(d4))
    gt = tiny_gt()
    write("tiny_gt.json", dumps_annotations(gt))
    write("tiny_gt_as_proposals.json", json.dumps(as_results(gt)) + "\n")
    props, weak = pseudo_scene()
    write("pseudo_proposals.json", json.dumps(props) + "\n")
    write("weak_labels.json", json.dumps(weak) + "\n")


if __name__ == "__main__":
    main()
