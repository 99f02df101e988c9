"""Class-replaceability similarity built from cross-class AP.

S[i, j] = max(AP^i(j) / AP^j(j), AP^j(i) / AP^i(i)): how well one class's
detections can stand in for the other's when localizing it.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .errors import DataError
from .metrics import ApTable


@dataclass(frozen=True, eq=False)
class SimilarityMatrix:
    classes: tuple[str, ...]
    values: np.ndarray  # clamped to [0, clamp_max]
    raw: np.ndarray  # unclamped max-ratio
    undefined: np.ndarray  # True where any AP input was undefined
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "_index", {c: i for i, c in enumerate(self.classes)})

    def index(self, c: str) -> int:
        try:
            return self._index[c]
        except KeyError:
            raise KeyError(f"class {c!r} not in similarity matrix") from None

    def __getitem__(self, pair: tuple[str, str]) -> float:
        a, b = pair
        return float(self.values[self.index(a), self.index(b)])

    def is_defined(self, a: str, b: str) -> bool:
        return not bool(self.undefined[self.index(a), self.index(b)])

    def subset(self, classes: Iterable[str]) -> SimilarityMatrix:
        classes = tuple(classes)
        ix = np.array([self.index(c) for c in classes], dtype=np.int64)
        grid = np.ix_(ix, ix)
        return SimilarityMatrix(classes, self.values[grid], self.raw[grid], self.undefined[grid], dict(self.provenance))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow([""] + list(self.classes))
        for c, row in zip(self.classes, self.values):
            w.writerow([c] + [repr(float(v)) for v in row])
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {
            "classes": list(self.classes),
            "values": self.values.tolist(),
            "raw": self.raw.tolist(),
            "undefined": self.undefined.tolist(),
            "provenance": self.provenance,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> SimilarityMatrix:
        n = len(obj["classes"])
        return cls(
            tuple(obj["classes"]),
            np.array(obj["values"], dtype=np.float64).reshape(n, n),
            np.array(obj.get("raw", obj["values"]), dtype=np.float64).reshape(n, n),
            np.array(obj.get("undefined", np.zeros((n, n), bool)), dtype=bool).reshape(n, n),
            obj.get("provenance", {}),
        )


def ap_table_hash(ap: ApTable) -> str:
    blob = json.dumps(ap.to_dict(), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()


def similarity_matrix(ap: ApTable, clamp_max: float = 1.0) -> SimilarityMatrix:
    """Symmetric replaceability matrix from an all-pairs cross-class AP table.

    A ratio with an undefined input or a zero denominator contributes 0.
    """
    n = len(ap.classes)
    if n < 2:
        raise DataError("need at least two classes")
    A = np.asarray(ap.values, dtype=np.float64)
    if A.shape != (n, n):
        raise DataError("AP table must cover all ordered class pairs")
    diag = np.diag(A)
    nan = np.isnan(A)
    # ratio[i, j] = AP^i(j) / AP^j(j)
    denom = np.broadcast_to(diag[None, :], (n, n))
    usable = ~nan & ~np.isnan(denom) & (denom > 0)
    ratio = np.zeros((n, n))
    np.divide(A, denom, out=ratio, where=usable)
    raw = np.maximum(ratio, ratio.T)
    np.fill_diagonal(raw, np.where(~np.isnan(diag) & (diag > 0), 1.0, 0.0))
    undefined = nan | nan.T | np.isnan(diag)[None, :] | np.isnan(diag)[:, None]
    values = np.clip(raw, 0.0, clamp_max)
    prov = {"ap_table_sha256": ap_table_hash(ap), "clamp_max": clamp_max, "metric_config": ap.config.to_dict()}
    return SimilarityMatrix(tuple(ap.classes), values, raw, undefined, prov)


def most_similar_class(S: SimilarityMatrix, query: str, pool: Iterable[str]) -> str:
    """Pool member with the highest similarity to ``query``; ties go to the smaller id."""
    pool = sorted(set(pool))
    if not pool:
        raise DataError("pool is empty")
    q = S.index(query)
    best, best_v = None, -1.0
    for c in pool:
        j = S.index(c)
        if S.undefined[q, j]:
            continue
        v = float(S.values[q, j])
        if v > best_v:
            best, best_v = c, v
    if best is None:
        raise DataError(f"all similarities from {query!r} to the pool are undefined")
    return best
