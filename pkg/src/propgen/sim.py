"""Synthetic world and detector simulator.

Classes get unit embeddings with planted block / sub-block structure that
mirrors a semantic tree ``object -> group -> subgroup -> leaf``. A simulated
detector trained on classes T has one head per training class (or per
coarse label group); head ``t`` responds to an object of class ``c`` according
to ``s = clamp(cos(c, t), 0, 1)``:

* it fires with probability ``p(s)``, rising from 0 at ``sim_floor`` to
  ``max_detect`` at 1;
* its box is the GT box with corner jitter of std ``sigma(s)`` (relative to
  box size), falling from ``sigma_max`` to ``sigma_min``;
* its score rises linearly in ``s`` plus Gaussian noise.

All randomness for image ``i`` comes from substreams keyed on
``(world seed, detector seed, i)`` and is indexed by world class, so adding a
training class never changes the output of an existing head.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from scipy.special import comb

from .data import (
    Annotation,
    Box,
    BoxTable,
    Category,
    Dataset,
    ImageRecord,
    SemanticTree,
    TreeNode,
    dumps_annotations,
    tree_to_obj,
)
from .errors import DataError

ROOT = "object"


@dataclass(frozen=True)
class SimConfig:
    n_blocks: int = 4
    subgroups_per_block: int = 2
    classes_per_subgroup: int = 3
    dim: int = 32
    # squared weights of block axis / subgroup axis in a leaf embedding;
    # the rest goes to a random per-leaf direction
    block_weight: float = 0.64
    subgroup_weight: float = 0.2
    n_images: int = 240
    image_size: tuple[int, int] = (640, 480)
    mean_objects: float = 4.0
    max_objects: int = 12
    box_scale: tuple[float, float] = (0.08, 0.45)  # fraction of the shorter side, log-uniform
    zipf: float = 0.8  # class frequency skew
    seed: int = 0

    def __post_init__(self):
        if self.n_images <= 0:
            raise DataError("n_images must be positive")
        if self.n_classes < 2:
            raise DataError("need at least two classes")
        if self.block_weight + self.subgroup_weight > 1:
            raise DataError("block_weight + subgroup_weight must be <= 1")
        if self.dim < self.n_blocks * (1 + self.subgroups_per_block) + 2:
            raise DataError("dim too small for the planted structure")

    @property
    def n_classes(self) -> int:
        return self.n_blocks * self.subgroups_per_block * self.classes_per_subgroup

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["image_size"] = list(self.image_size)
        d["box_scale"] = list(self.box_scale)
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> SimConfig:
        d = dict(d)
        for k in ("image_size", "box_scale"):
            if k in d:
                d[k] = tuple(d[k])
        return cls(**d)


DISTRIBUTIONS = {
    "objects_per_image": "1 + Poisson(mean_objects - 1), capped at max_objects",
    "object_class": "categorical, weight (rank+1)^-zipf over a seeded permutation of classes",
    "box_side": "scale ~ log-uniform(box_scale) * min(image side); aspect log-uniform(0.5, 2)",
    "box_position": "uniform, box fully inside the image; corners rounded to 0.01 px",
    "embedding": "e_block*sqrt(block_weight) + e_subgroup*sqrt(subgroup_weight) + random unit*sqrt(rest)",
}


@dataclass(frozen=True, eq=False)
class SimWorld:
    config: SimConfig
    classes: tuple[str, ...]
    embeddings: np.ndarray  # (n_classes, dim), unit rows, aligned with classes
    block_of: dict[str, int]
    tree: SemanticTree
    dataset: Dataset

    @cached_property
    def cosine(self) -> np.ndarray:
        return self.embeddings @ self.embeddings.T

    def class_index(self, c: str) -> int:
        return self.classes.index(c)

    def planted_partition(self, classes: Sequence[str] | None = None) -> list[int]:
        return [self.block_of[c] for c in (classes or self.classes)]

    def files(self) -> dict[str, str]:
        """File name -> content for the world's annotation, hierarchy and config files."""
        cfg = {"sim": self.config.to_dict(), "distributions": DISTRIBUTIONS}
        emb = {"classes": list(self.classes), "embeddings": np.round(self.embeddings, 12).tolist()}
        return {
            "annotations.json": dumps_annotations(self.dataset),
            "hierarchy.json": json.dumps(tree_to_obj(self.tree), indent=1) + "\n",
            "sim_config.json": json.dumps(cfg, indent=1, sort_keys=True) + "\n",
            "embeddings.json": json.dumps(emb) + "\n",
        }

    def write(self, directory: str | Path) -> dict[str, Path]:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        out = {}
        for name, text in self.files().items():
            (directory / name).write_text(text)
            out[name] = directory / name
        return out


def _orthonormal(rng: np.random.Generator, dim: int, n: int) -> np.ndarray:
    q, _ = np.linalg.qr(rng.standard_normal((dim, n)))
    return q.T[:n]


def _class_names(cfg: SimConfig) -> list[tuple[str, str, str]]:
    out = []
    for b in range(cfg.n_blocks):
        for s in range(cfg.subgroups_per_block):
            for k in range(cfg.classes_per_subgroup):
                out.append((f"g{b}", f"g{b}s{s}", f"g{b}s{s}c{k}"))
    return out


def generate_world(config: SimConfig | None = None, seed: int | None = None) -> SimWorld:
    """Build embeddings, tree and COCO-style ground truth, deterministically per seed."""
    config = config or SimConfig()
    if seed is not None:
        config = dataclasses.replace(config, seed=seed)
    master = np.random.default_rng([config.seed, 7])
    names = _class_names(config)
    n = len(names)
    nb, ns = config.n_blocks, config.subgroups_per_block

    axes = _orthonormal(master, config.dim, nb + nb * ns)
    block_axes, sub_axes = axes[:nb], axes[nb:]
    # per-leaf directions live in the orthogonal complement of the planted axes
    rest = master.standard_normal((n, config.dim))
    rest -= (rest @ axes.T) @ axes
    rest /= np.linalg.norm(rest, axis=1, keepdims=True)
    wb, ws = np.sqrt(config.block_weight), np.sqrt(config.subgroup_weight)
    wr = np.sqrt(max(0.0, 1.0 - config.block_weight - config.subgroup_weight))
    emb = np.empty((n, config.dim))
    for i, (g, sg, _) in enumerate(names):
        b, s = int(g[1:]), int(sg.split("s")[1])
        emb[i] = wb * block_axes[b] + ws * sub_axes[b * ns + s] + wr * rest[i]
    emb /= np.linalg.norm(emb, axis=1, keepdims=True)

    nodes = [TreeNode(ROOT, None)]
    for g, sg, leaf in names:
        if not any(x.name == g for x in nodes):
            nodes.append(TreeNode(g, ROOT))
        if not any(x.name == sg for x in nodes):
            nodes.append(TreeNode(sg, g))
        nodes.append(TreeNode(leaf, sg))
    tree = SemanticTree(tuple(nodes))

    classes = [leaf for _, _, leaf in names]
    weights = np.empty(n)
    weights[master.permutation(n)] = (np.arange(n) + 1.0) ** -config.zipf
    weights /= weights.sum()

    W, H = config.image_size
    side = min(W, H)
    lo, hi = np.log(config.box_scale[0]), np.log(config.box_scale[1])
    images, anns = [], []
    for img in range(1, config.n_images + 1):
        rng = np.random.default_rng([config.seed, 0, img])
        k = min(config.max_objects, 1 + rng.poisson(max(0.0, config.mean_objects - 1)))
        cls = rng.choice(n, size=k, p=weights)
        scale = np.exp(rng.uniform(lo, hi, size=k)) * side
        ar = np.exp(rng.uniform(np.log(0.5), np.log(2.0), size=k))
        w = np.minimum(scale * np.sqrt(ar), W - 1)
        h = np.minimum(scale / np.sqrt(ar), H - 1)
        x = rng.uniform(0, 1, size=k) * (W - w)
        y = rng.uniform(0, 1, size=k) * (H - h)
        images.append(ImageRecord(img, W, H))
        for j in range(k):
            x1, y1 = round(float(x[j]), 2), round(float(y[j]), 2)
            x2, y2 = round(x1 + float(w[j]), 2), round(y1 + float(h[j]), 2)
            anns.append(Annotation(img, Box(x1, y1, x2, y2), classes[cls[j]], len(anns) + 1))
    cats = tuple(Category(i + 1, c) for i, c in enumerate(classes))
    ds = Dataset(tuple(images), tuple(anns), cats)
    block_of = {leaf: int(g[1:]) for g, _, leaf in names}
    return SimWorld(config, tuple(classes), emb, block_of, tree, ds)


@dataclass(frozen=True)
class DetectorModel:
    """Simulated detector trained on ``train_classes``.

    ``head_groups`` optionally replaces per-class heads with coarse labels
    (name -> member leaves); a coarse head's similarity to a class is the max
    over its members. ``heads="nearest"`` keeps only the most similar head
    per object.

    ``train_counts`` (class -> training boxes) scales every head's strength
    by ``n / (n + data_half)``; without it all heads are fully trained.
    """

    train_classes: tuple[str, ...]
    head_groups: Mapping[str, tuple[str, ...]] | None = None
    train_counts: Mapping[str, int] | None = None
    data_half: float = 10.0
    heads: str = "all"
    sim_floor: float = 0.3
    detect_gamma: float = 1.0
    max_detect: float = 0.97
    sigma_min: float = 0.03
    sigma_max: float = 0.3
    score_noise: float = 0.08
    copies: int = 1
    fp_rate: float = 1.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "train_classes", tuple(sorted(set(self.train_classes))))
        if self.heads not in ("all", "nearest"):
            raise ValueError("heads must be 'all' or 'nearest'")
        if not 0 <= self.sim_floor < 1:
            raise ValueError("sim_floor must lie in [0, 1)")

    def head_members(self) -> dict[str, tuple[str, ...]]:
        if self.head_groups is None:
            return {c: (c,) for c in self.train_classes}
        return {h: tuple(sorted(m)) for h, m in sorted(self.head_groups.items())}

    def head_quality(self) -> dict[str, float]:
        if self.train_counts is None:
            return {h: 1.0 for h in self.head_members()}
        out = {}
        for h, members in self.head_members().items():
            n = sum(int(self.train_counts.get(c, 0)) for c in members)
            out[h] = n / (n + self.data_half)
        return out

    def normalized(self, s: np.ndarray, q: np.ndarray | float = 1.0) -> np.ndarray:
        return q * np.clip((s - self.sim_floor) / (1.0 - self.sim_floor), 0.0, 1.0)

    def p_detect(self, s: np.ndarray, q: np.ndarray | float = 1.0) -> np.ndarray:
        return self.max_detect * self.normalized(s, q) ** self.detect_gamma

    def miss_probability(self, s: np.ndarray, q: np.ndarray | float = 1.0) -> np.ndarray:
        return 1.0 - self.p_detect(s, q)

    def sigma(self, s: np.ndarray, q: np.ndarray | float = 1.0) -> np.ndarray:
        return self.sigma_max - (self.sigma_max - self.sigma_min) * self.normalized(s, q)

    def score_mean(self, s: np.ndarray, q: np.ndarray | float = 1.0) -> np.ndarray:
        return 0.05 + 0.9 * self.normalized(s, q)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["train_classes"] = list(self.train_classes)
        if self.head_groups is not None:
            d["head_groups"] = {k: list(v) for k, v in sorted(self.head_groups.items())}
        if self.train_counts is not None:
            d["train_counts"] = dict(sorted(self.train_counts.items()))
        return d


def kernel(world: SimWorld, c: str, train: Sequence[str]) -> float:
    """max over training classes of clamped cosine similarity to ``c``."""
    if not train:
        return 0.0
    i = world.class_index(c)
    js = [world.class_index(t) for t in train]
    return float(np.clip(world.cosine[i, js], 0.0, 1.0).max())


def simulate_detections(world: SimWorld, model: DetectorModel, images: Sequence[int] | None = None) -> BoxTable:
    """Detections on the given images (all by default), labeled by head name."""
    unknown = [c for c in model.train_classes if c not in world.classes]
    groups = model.head_members()
    for members in groups.values():
        unknown += [c for c in members if c not in world.classes]
    if unknown:
        raise DataError(f"training classes not in world: {sorted(set(unknown))}")
    head_names = list(groups)
    quality = model.head_quality()
    q = np.array([quality[h] for h in head_names])
    if not head_names:
        return BoxTable.empty(scored=True)
    member_idx = [[world.class_index(c) for c in groups[h]] for h in head_names]
    # draws for a head are keyed by the world index of its first member
    key = np.array([m[0] for m in member_idx])
    n_world = len(world.classes)
    C = world.cosine

    wanted = set(world.dataset.image_ids if images is None else images)
    by_image = world.dataset.annotations_by_image
    W, H = world.config.image_size
    out_ids, out_boxes, out_labels, out_scores = [], [], [], []
    for im in world.dataset.images:
        if im.image_id not in wanted:
            continue
        anns = by_image.get(im.image_id, [])
        rng = np.random.default_rng([world.config.seed, 1, model.seed, im.image_id])
        k, R = len(anns), model.copies
        U = rng.random((k, n_world, R))
        Zs = rng.standard_normal((k, n_world, R))
        Zj = rng.standard_normal((k, n_world, R, 4))
        if k:
            gt = np.array([a.box.as_tuple() for a in anns])
            ci = np.array([world.class_index(a.class_id) for a in anns])
            # s[o, h] = clamp(max cos between object class and head members)
            s = np.stack([np.clip(C[ci][:, m].max(axis=1), 0, 1) for m in member_idx], axis=1)
            active = np.ones_like(s, dtype=bool)
            if model.heads == "nearest":
                active[:] = False
                active[np.arange(k), s.argmax(axis=1)] = True
            p = model.p_detect(s, q)
            sig = model.sigma(s, q)
            mu = model.score_mean(s, q)
            wh = np.stack([gt[:, 2] - gt[:, 0], gt[:, 3] - gt[:, 1]], axis=1)
            scale = np.concatenate([wh, wh], axis=1)  # (k, 4)
            for h, name in enumerate(head_names):
                u = U[:, key[h], :]
                fire = (u < p[:, h, None]) & active[:, h, None]
                o_idx, r_idx = np.nonzero(fire)
                if not len(o_idx):
                    continue
                jit = Zj[o_idx, key[h], r_idx] * sig[o_idx, h, None] * scale[o_idx]
                b = gt[o_idx] + jit
                b[:, [0, 2]] = np.clip(b[:, [0, 2]], 0, W)
                b[:, [1, 3]] = np.clip(b[:, [1, 3]], 0, H)
                b = np.round(b, 2)
                sc = np.clip(mu[o_idx, h] + model.score_noise * Zs[o_idx, key[h], r_idx], 0.001, 1.0)
                ok = (b[:, 2] - b[:, 0] >= 1.0) & (b[:, 3] - b[:, 1] >= 1.0)
                out_ids += [im.image_id] * int(ok.sum())
                out_boxes.append(b[ok])
                out_labels += [name] * int(ok.sum())
                out_scores.append(np.round(sc[ok], 6))
        if model.fp_rate > 0:
            frng = np.random.default_rng([world.config.seed, 2, model.seed, im.image_id])
            nf = frng.poisson(model.fp_rate)
            if nf:
                side = min(W, H)
                sz = np.exp(frng.uniform(np.log(0.05), np.log(0.5), size=(nf, 2))) * side
                xy = frng.uniform(0, 1, size=(nf, 2)) * (np.array([W, H]) - sz)
                b = np.round(np.concatenate([xy, xy + sz], axis=1), 2)
                lab = frng.random(nf)
                sc = np.round(frng.uniform(0.001, 0.3, size=nf), 6)
                out_ids += [im.image_id] * nf
                out_boxes.append(b)
                out_labels += [head_names[int(x * len(head_names))] for x in lab]
                out_scores.append(sc)
    if not out_ids:
        return BoxTable.empty(scored=True)
    return BoxTable(out_ids, np.concatenate(out_boxes), out_labels, np.concatenate(out_scores))


def group_heads(world: SimWorld, train: Sequence[str], level: int) -> dict[str, tuple[str, ...]]:
    """Coarse heads for training with labels collapsed to tree ``level``."""
    out: dict[str, list[str]] = {}
    for c in sorted(train):
        out.setdefault(world.tree.ancestor_at(c, level), []).append(c)
    return {k: tuple(v) for k, v in out.items()}


def adjusted_rand_index(a: Sequence, b: Sequence) -> float:
    """Adjusted Rand index between two flat labelings."""
    a, b = np.asarray(a), np.asarray(b)
    if len(a) != len(b):
        raise ValueError("labelings differ in length")
    _, ai = np.unique(a, return_inverse=True)
    _, bi = np.unique(b, return_inverse=True)
    table = np.zeros((ai.max() + 1, bi.max() + 1), dtype=np.int64)
    np.add.at(table, (ai, bi), 1)
    sum_cells = comb(table, 2).sum()
    sum_a = comb(table.sum(axis=1), 2).sum()
    sum_b = comb(table.sum(axis=0), 2).sum()
    total = comb(len(a), 2)
    expected = sum_a * sum_b / total if total else 0.0
    max_index = (sum_a + sum_b) / 2
    if max_index == expected:
        return 1.0
    return float((sum_cells - expected) / (max_index - expected))
