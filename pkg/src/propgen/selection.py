"""Choosing P prototypical classes.

Four strategies: agglomerative clustering on the replaceability matrix
("oracle-visual"), bottom-up sibling merging in the semantic tree by joint
frequency ("semantic-frequency"), top-P by frequency ("most-frequent"), and a
seeded random baseline. Clustering methods represent each cluster by its most
frequent member. All tie-breaks are lexicographic on class id.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.cluster.hierarchy import linkage
from scipy.spatial.distance import squareform

from .data import SemanticTree, require_valid
from .errors import DataError
from .similarity import SimilarityMatrix

METHODS = ("oracle-visual", "semantic-frequency", "most-frequent", "random")


@dataclass(frozen=True)
class ProtoSelection:
    method: str
    p: int
    classes: tuple[str, ...]
    clusters: tuple[tuple[str, ...], ...] | None = None
    seed: int | None = None
    provenance: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = {"method": self.method, "P": self.p}
        if self.seed is not None:
            out["seed"] = self.seed
        out["classes"] = list(self.classes)
        if self.clusters is not None:
            out["clusters"] = [list(c) for c in self.clusters]
        out["provenance"] = self.provenance
        return out

    @classmethod
    def from_dict(cls, obj: dict) -> ProtoSelection:
        clusters = obj.get("clusters")
        return cls(
            obj["method"],
            int(obj["P"]),
            tuple(obj["classes"]),
            None if clusters is None else tuple(tuple(c) for c in clusters),
            obj.get("seed"),
            obj.get("provenance", {}),
        )


def _check_p(p: int, n: int) -> None:
    if not 1 <= p <= n:
        raise DataError(f"P must lie in 1..{n}, got {p}")


def representative(members: Sequence[str], freq: Mapping[str, int]) -> str:
    """Most frequent member; ties go to the smallest id."""
    return min(members, key=lambda c: (-freq.get(c, 0), c))


def _finish(method, p, clusters, freq, **extra) -> ProtoSelection:
    clusters = sorted((tuple(sorted(c)) for c in clusters), key=lambda c: c[0])
    chosen = tuple(sorted(representative(c, freq) for c in clusters))
    return ProtoSelection(method, p, chosen, tuple(clusters), **extra)


def cut_linkage(Z: np.ndarray, n: int, p: int) -> np.ndarray:
    """Cluster labels after applying the first ``n - p`` merges of a linkage matrix."""
    parent = list(range(2 * n - 1))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for step in range(n - p):
        a, b = int(Z[step, 0]), int(Z[step, 1])
        parent[find(a)] = n + step
        parent[find(b)] = n + step
    roots = [find(i) for i in range(n)]
    relabel: dict[int, int] = {}
    return np.array([relabel.setdefault(r, len(relabel)) for r in roots])


def oracle_visual_clustering(
    S: SimilarityMatrix,
    freq: Mapping[str, int],
    p: int,
    *,
    classes: Sequence[str] | None = None,
    method: str = "average",
) -> ProtoSelection:
    """Agglomerative clustering on ``1 - S``, cut at ``p`` clusters."""
    if classes is not None:
        S = S.subset(classes)
    names = sorted(S.classes)  # canonical order keeps the result order-invariant
    S = S.subset(names)
    n = len(names)
    _check_p(p, n)
    bad = [c for i, c in enumerate(names) if S.undefined[i, i]]
    if bad:
        raise DataError(f"similarity undefined for classes: {bad}")
    if n == 1:
        return _finish("oracle-visual", p, [names], freq, provenance={"linkage": method})
    D = 1.0 - S.values
    D = (D + D.T) / 2.0
    np.fill_diagonal(D, 0.0)
    Z = linkage(squareform(D, checks=False), method=method)
    labels = cut_linkage(Z, n, p)
    clusters = [[names[i] for i in np.flatnonzero(labels == lab)] for lab in range(labels.max() + 1)]
    prov = {"linkage": method, "dissimilarity": "1 - clamped S", "similarity": S.provenance}
    return _finish("oracle-visual", p, clusters, freq, provenance=prov)


def semantic_frequency_clustering(
    tree: SemanticTree,
    freq: Mapping[str, int],
    p: int,
    *,
    classes: Sequence[str] | None = None,
) -> ProtoSelection:
    """Merge sibling clusters with the lowest joint frequency until ``p`` remain.

    A cluster sits under the tree node (its *attachment*) shared by the
    members it was merged from. When no two clusters share an attachment, the
    deepest attachments move up one level and merging resumes.
    """
    require_valid(tree)
    leaves = sorted(classes) if classes is not None else list(tree.leaves)
    for c in leaves:
        if c not in tree.parent or not tree.is_leaf(c):
            raise DataError(f"{c!r} is not a leaf of the tree")
    _check_p(p, len(leaves))

    # cluster: [members (sorted tuple), joint frequency, attachment node]
    clusters = [[(c,), int(freq.get(c, 0)), tree.parent[c] or c] for c in leaves]
    promotions = 0
    while len(clusters) > p:
        groups: dict[str, list[int]] = {}
        for i, cl in enumerate(clusters):
            groups.setdefault(cl[2], []).append(i)
        best_key, best_pair = None, None
        for members in groups.values():
            if len(members) < 2:
                continue
            # only the two smallest frequencies can reach the group minimum
            fs = sorted(clusters[i][1] for i in members)
            cand = [i for i in members if clusters[i][1] <= fs[1]]
            for x in range(len(cand)):
                for y in range(x + 1, len(cand)):
                    a, b = clusters[cand[x]], clusters[cand[y]]
                    key = (a[1] + b[1], tuple(sorted(a[0] + b[0])))
                    if best_key is None or key < best_key:
                        best_key, best_pair = key, (cand[x], cand[y])
        if best_pair is None:
            deepest = max(tree.level(cl[2]) for cl in clusters)
            for cl in clusters:
                if tree.level(cl[2]) == deepest and tree.parent[cl[2]] is not None:
                    cl[2] = tree.parent[cl[2]]
            promotions += 1
            continue
        i, j = best_pair
        a, b = clusters[i], clusters[j]
        merged = [tuple(sorted(a[0] + b[0])), a[1] + b[1], tree.lca(a[2], b[2])]
        clusters = [cl for k, cl in enumerate(clusters) if k not in (i, j)] + [merged]
    return _finish(
        "semantic-frequency",
        p,
        [cl[0] for cl in clusters],
        freq,
        provenance={"promotions": promotions, "tie_break": "joint frequency, then sorted member ids"},
    )


def most_frequent_subset(freq: Mapping[str, int], p: int, *, classes: Sequence[str] | None = None) -> ProtoSelection:
    names = sorted(classes) if classes is not None else sorted(freq)
    _check_p(p, len(names))
    top = sorted(names, key=lambda c: (-freq.get(c, 0), c))[:p]
    return ProtoSelection("most-frequent", p, tuple(sorted(top)))


def random_subset(classes: Sequence[str], p: int, seed: int) -> ProtoSelection:
    """Uniform sample without replacement.

    The sample is the first ``p`` entries of one seeded permutation, so a
    fixed seed gives nested selections as ``p`` grows.
    """
    names = sorted(set(classes))
    _check_p(p, len(names))
    perm = np.random.default_rng(seed).permutation(len(names))
    chosen = tuple(sorted(names[i] for i in perm[:p]))
    return ProtoSelection("random", p, chosen, seed=seed)


def select(
    method: str,
    p: int,
    *,
    freq: Mapping[str, int],
    classes: Sequence[str] | None = None,
    similarity: SimilarityMatrix | None = None,
    tree: SemanticTree | None = None,
    seed: int | None = None,
) -> ProtoSelection:
    """Dispatch by method name."""
    if method == "oracle-visual":
        if similarity is None:
            raise DataError("oracle-visual needs a similarity matrix")
        return oracle_visual_clustering(similarity, freq, p, classes=classes)
    if method == "semantic-frequency":
        if tree is None:
            raise DataError("semantic-frequency needs a tree")
        return semantic_frequency_clustering(tree, freq, p, classes=classes)
    if method == "most-frequent":
        return most_frequent_subset(freq, p, classes=classes)
    if method == "random":
        if seed is None:
            raise DataError("random selection needs an explicit seed")
        return random_subset(classes if classes is not None else sorted(freq), p, seed)
    raise DataError(f"unknown method {method!r}; expected one of {METHODS}")
