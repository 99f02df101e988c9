"""Seeded random scenes shared by the oracle and acceptance tests."""

from __future__ import annotations

import random

import numpy as np

from propgen.data import BoxTable


def _box(rng: random.Random, grid: int = 20):
    x1, y1 = rng.randint(0, grid - 1), rng.randint(0, grid - 1)
    return (float(x1), float(y1), float(rng.randint(x1 + 1, grid)), float(rng.randint(y1 + 1, grid)))


def _near(rng: random.Random, b):
    # shift each corner by at most one unit, keeping the box valid
    x1, y1, x2, y2 = (v + rng.choice((-1, 0, 0, 1)) for v in b)
    return (x1, y1, max(x2, x1 + 1), max(y2, y1 + 1))


def random_scene(seed: int, max_gt: int = 5, max_det: int = 10, n_images: int = 3):
    """{image: (gt boxes, [(box, score), ...])} with at most ``max_gt`` GT and
    ``max_det`` detections overall. Scores are coarse so ties occur."""
    rng = random.Random(seed)
    n_gt, n_det = rng.randint(0, max_gt), rng.randint(0, max_det)
    images = list(range(1, rng.randint(1, n_images) + 1))
    scene = {img: ([], []) for img in images}
    for _ in range(n_gt):
        scene[rng.choice(images)][0].append(_box(rng))
    for _ in range(n_det):
        img = rng.choice(images)
        gts = scene[img][0]
        box = _near(rng, rng.choice(gts)) if gts and rng.random() < 0.7 else _box(rng)
        scene[img][1].append((box, rng.randint(1, 6) / 6))
    return scene


def scene_tables(scene) -> tuple[BoxTable, BoxTable]:
    gi, gb, di, db, ds = [], [], [], [], []
    for img, (gts, dets) in scene.items():
        for b in gts:
            gi.append(img)
            gb.append(b)
        for b, s in dets:
            di.append(img)
            db.append(b)
            ds.append(s)
    gt = BoxTable(gi, np.array(gb).reshape(-1, 4), ["x"] * len(gi)) if gi else BoxTable.empty()
    dt = BoxTable(di, np.array(db).reshape(-1, 4), ["x"] * len(di), ds) if di else BoxTable.empty(scored=True)
    return gt, dt


def random_nms_instance(seed: int, max_n: int = 50):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(0, max_n + 1))
    xy = rng.integers(0, 30, size=(n, 2)).astype(float)
    wh = rng.integers(1, 15, size=(n, 2)).astype(float)
    boxes = np.concatenate([xy, xy + wh], axis=1)
    scores = rng.integers(0, 8, size=n) / 8  # frequent ties
    thr = float(rng.choice([0.1, 0.3, 0.5, 0.7, 0.9, 1.0, rng.uniform(0.05, 1.0)]))
    return boxes, scores, thr


def budget_dataset(n_images: int, n_boxes: int, classes, seed: int = 0, even: bool = False):
    """Dataset with exactly ``n_boxes`` boxes spread over ``n_images`` images.

    Every image gets at least one box (``even`` spreads them evenly); labels
    are drawn uniformly from ``classes``.
    """
    from propgen.data import Annotation, Box, Category, Dataset, ImageRecord

    rng = np.random.default_rng(seed)
    if even:
        owners = np.arange(n_boxes) % n_images
    else:
        owners = np.concatenate([np.arange(n_images), rng.integers(0, n_images, n_boxes - n_images)])
    owners.sort()
    labels = rng.integers(0, len(classes), n_boxes)
    xy = rng.integers(0, 90, size=(n_boxes, 2))
    anns = tuple(
        Annotation(int(o) + 1, Box(float(x), float(y), float(x) + 10, float(y) + 10), classes[int(c)], i + 1)
        for i, (o, c, (x, y)) in enumerate(zip(owners, labels, xy))
    )
    images = tuple(ImageRecord(i + 1, 100, 100) for i in range(n_images))
    cats = tuple(Category(i + 1, c) for i, c in enumerate(classes))
    return Dataset(images, anns, cats)
