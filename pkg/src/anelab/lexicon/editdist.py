"""Weighted phone edit distance and OOV word recovery."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..similarity import isotropic_similarity


@dataclass(frozen=True)
class CostMatrix:
    substitution: np.ndarray
    insertion: float = 1.0
    deletion: float = 1.0

    def __post_init__(self):
        sub = np.asarray(self.substitution, dtype=np.float64)
        if sub.ndim != 2 or sub.shape[0] != sub.shape[1]:
            raise ValueError("substitution costs must be a square matrix")
        if np.any(np.diag(sub) != 0):
            raise ValueError("substituting a phone for itself must cost 0")
        if not np.allclose(sub, sub.T, rtol=0, atol=1e-12):
            raise ValueError("substitution costs must be symmetric")
        if sub.min() < 0 or sub.max() > 1:
            raise ValueError("substitution costs must lie in [0, 1]")
        if self.insertion < 0 or self.deletion < 0:
            raise ValueError("insertion and deletion costs must be >= 0")
        object.__setattr__(self, "substitution", sub)

    @property
    def size(self) -> int:
        return self.substitution.shape[0]

    @classmethod
    def binary(cls, num_phones: int) -> "CostMatrix":
        return cls(1.0 - np.eye(num_phones))


def substitution_costs(phone_embeddings, sigma: float) -> CostMatrix:
    """cost(i, j) = 1 - 2 s(g_i, g_j) from single-phone text embeddings.

    ``phone_embeddings`` is indexed by phone id (an (P, d) array, or a
    mapping from every id in 0..P-1 to its vector).
    """
    if isinstance(phone_embeddings, dict):
        n = max(phone_embeddings) + 1 if phone_embeddings else 0
        missing = [k for k in range(n) if k not in phone_embeddings]
        if missing:
            raise KeyError(f"no embedding for phone ids {missing}")
        emb = np.array([phone_embeddings[k] for k in range(n)], dtype=np.float64)
    else:
        emb = np.asarray(phone_embeddings, dtype=np.float64)
    if emb.ndim != 2 or emb.shape[0] == 0:
        raise ValueError("need a non-empty (P, d) table of phone embeddings")
    n = emb.shape[0]
    sub = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            sub[i, j] = sub[j, i] = 1.0 - 2.0 * isotropic_similarity(emb[i], emb[j], sigma)
    return CostMatrix(sub)


def min_edit_distance(a: Sequence[int], b: Sequence[int], costs: CostMatrix) -> float:
    a, b = tuple(a), tuple(b)
    for s in (a, b):
        if s and max(s) >= costs.size:
            raise ValueError("sequence uses a phone outside the cost matrix")
    sub = costs.substitution
    prev = np.arange(len(b) + 1, dtype=np.float64) * costs.insertion
    for i in range(1, len(a) + 1):
        cur = np.empty_like(prev)
        cur[0] = i * costs.deletion
        row = sub[a[i - 1]]
        for j in range(1, len(b) + 1):
            cur[j] = min(prev[j] + costs.deletion,
                         cur[j - 1] + costs.insertion,
                         prev[j - 1] + row[b[j - 1]])
        prev = cur
    return float(prev[-1])


def oov_recover(asr_output, oov_set: Sequence[tuple[str, Sequence[int]]], method: str = "edit",
                *, costs: CostMatrix | None = None, text_params=None, index=None) -> str:
    """Map an (erroneous) recognized pronunciation to the closest OOV word.

    ``method="edit"`` ranks by ``min_edit_distance`` under ``costs``;
    ``method="embed"`` by squared distance between phone-encoder outputs,
    using a prebuilt ``index`` of the OOV pronunciations when given.
    Ties go to the earliest entry of ``oov_set``.
    """
    if not oov_set:
        raise ValueError("empty OOV set")
    if len(oov_set) == 1:
        return oov_set[0][0]
    out = tuple(asr_output)
    for word, pron in oov_set:
        if tuple(pron) == out:
            return word
    if method == "edit":
        if costs is None:
            raise ValueError("edit recovery needs a CostMatrix")
        dist = [min_edit_distance(out, pron, costs) for _, pron in oov_set]
        return oov_set[int(np.argmin(dist))][0]
    if method == "embed":
        if text_params is None:
            raise ValueError("embed recovery needs phone-encoder parameters")
        from ..encoder import embed_sequences
        from ..search import EmbeddingIndex

        if index is None:
            index = EmbeddingIndex.build([w for w, _ in oov_set],
                                         embed_sequences(text_params, [p for _, p in oov_set]))
        query = embed_sequences(text_params, [out])[0]
        return index.nearest(query)
    raise ValueError(f"unknown recovery method {method!r}")
