"""Slow, obviously-correct reference implementations used as test oracles.

Plain Python loops over tuples; nothing here is shared with the package.
"""

from __future__ import annotations

from fractions import Fraction
from itertools import combinations

THRESHOLDS = [round(0.5 + 0.05 * i, 2) for i in range(10)]


def iou(a, b) -> float:
    area_a = (a[2] - a[0]) * (a[3] - a[1])
    area_b = (b[2] - b[0]) * (b[3] - b[1])
    iw = min(a[2], b[2]) - max(a[0], b[0])
    ih = min(a[3], b[3]) - max(a[1], b[1])
    inter = max(iw, 0.0) * max(ih, 0.0)
    return inter / (area_a + area_b - inter)


def ranked(dets):
    """Indices sorted by descending score, ties by input position."""
    return sorted(range(len(dets)), key=lambda i: (-dets[i][1], i))


def match_image(gts, dets, t):
    """TP flag per detection (input order) under greedy matching at threshold t."""
    taken = [False] * len(gts)
    tp = [False] * len(dets)
    for d in ranked(dets):
        best, best_iou = None, -1.0
        for g, box in enumerate(gts):
            if taken[g]:
                continue
            v = iou(dets[d][0], box)
            if v > best_iou:
                best, best_iou = g, v
        if best is not None and best_iou >= t:
            taken[best] = True
            tp[d] = True
    return tp


def average_precision(scene, thresholds=THRESHOLDS, max_det=100):
    """scene: {image: (gt boxes, [(box, score), ...])}. None when no GT."""
    n_gt = sum(len(g) for g, _ in scene.values())
    if n_gt == 0:
        return None
    per_t = []
    for t in thresholds:
        pooled = []  # (score, image order, position, tp)
        pos = 0
        for img in sorted(scene):
            gts, dets = scene[img]
            keep = ranked(dets)[:max_det]
            kept = [dets[i] for i in keep]
            tp = match_image(gts, kept, t)
            for (box, s), flag in zip(kept, tp):
                pooled.append((s, pos, flag))
                pos += 1
        pooled.sort(key=lambda r: (-r[0], r[1]))
        # precision / recall after each rank, recall kept as an exact fraction
        curve = []
        hits = 0
        for r, (_, _, flag) in enumerate(pooled, start=1):
            hits += flag
            curve.append((Fraction(hits, n_gt), hits / r))
        total = 0.0
        for i in range(101):
            point = Fraction(i, 100)
            ps = [p for rec, p in curve if rec >= point]
            total += max(ps) if ps else 0.0
        per_t.append(total / 101)
    return sum(per_t) / len(per_t)


def average_recall(scene, k, thresholds=THRESHOLDS):
    """scene: {image: (gt boxes, [(box, score), ...])}; pooled AR@k."""
    n_gt = sum(len(g) for g, _ in scene.values())
    if n_gt == 0:
        return 0.0
    total = 0.0
    for t in thresholds:
        covered = 0
        for gts, dets in scene.values():
            top = [dets[i][0] for i in ranked(dets)[:k]]
            for g in gts:
                if any(iou(p, g) >= t for p in top):
                    covered += 1
        total += covered / n_gt
    return total / len(thresholds)


def nms(boxes, scores, threshold):
    """Kept indices in score order; a box survives if no kept box overlaps it by more than threshold."""
    order = sorted(range(len(boxes)), key=lambda i: (-scores[i], i))
    kept = []
    for i in order:
        if all(iou(boxes[j], boxes[i]) <= threshold for j in kept):
            kept.append(i)
    return kept


def average_linkage(D, p):
    """Naive agglomerative clustering; returns a partition as a set of frozensets."""
    clusters = [frozenset([i]) for i in range(len(D))]
    while len(clusters) > p:
        best = None
        for a, b in combinations(range(len(clusters)), 2):
            A, B = clusters[a], clusters[b]
            d = sum(D[i][j] for i in A for j in B) / (len(A) * len(B))
            if best is None or d < best[0]:
                best = (d, a, b)
        _, a, b = best
        merged = clusters[a] | clusters[b]
        clusters = [c for i, c in enumerate(clusters) if i not in (a, b)] + [merged]
    return set(clusters)


def best_two_partition(S):
    """The 2-partition maximizing mean within-part similarity minus mean cross similarity."""
    n = len(S)
    best, best_score = None, None
    for mask in range(1, 2 ** (n - 1)):
        A = [i for i in range(n) if mask >> i & 1]
        B = [i for i in range(n) if not mask >> i & 1]
        within = [S[i][j] for part in (A, B) for i, j in combinations(part, 2)]
        cross = [S[i][j] for i in A for j in B]
        score = (sum(within) / len(within) if within else 0.0) - sum(cross) / len(cross)
        if best_score is None or score > best_score:
            best, best_score = {frozenset(A), frozenset(B)}, score
    return best
