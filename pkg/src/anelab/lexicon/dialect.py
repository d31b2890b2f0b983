"""Dialect dissimilarity from per-dialect word centroids."""

from __future__ import annotations

import csv
from typing import Mapping, Sequence

import numpy as np


def dialect_dissimilarity(centroids: Mapping[str, Mapping[str, np.ndarray]], sigma: float,
                          dialects: Sequence[str] | None = None) -> tuple[list[str], np.ndarray]:
    """Mean over words of 1 - exp(-|g_c^(i) - g_c^(j)|^2 / (8 sigma^2)).

    ``centroids[dialect][word]`` is the dialect's mean embedding of the
    word; every dialect must cover the same words.  Returns the dialect
    order and the symmetric matrix.
    """
    if not sigma > 0:
        raise ValueError("sigma must be > 0")
    names = list(dialects) if dialects is not None else list(centroids)
    if len(names) < 1:
        raise ValueError("no dialects given")
    words = sorted(centroids[names[0]])
    if not words:
        raise ValueError("no words given")
    for name in names:
        have = set(centroids[name])
        if have != set(words):
            missing = sorted(set(words) ^ have)
            raise KeyError(f"dialect {name!r} centroid table differs on words {missing[:10]}")
    stack = np.array([[np.asarray(centroids[n][w], dtype=np.float64) for w in words] for n in names])
    diff = stack[:, None] - stack[None, :]  # (n, n, C, d)
    sq = np.einsum("ijcd,ijcd->ijc", diff, diff)
    dis = (1.0 - np.exp(-sq / (8.0 * sigma * sigma))).mean(axis=2)
    dis = 0.5 * (dis + dis.T)
    np.fill_diagonal(dis, 0.0)
    return names, dis


def check_dissimilarity(labels: Sequence[str], d) -> np.ndarray:
    d = np.asarray(d, dtype=np.float64)
    n = len(labels)
    if d.shape != (n, n):
        raise ValueError(f"expected a {n}x{n} matrix, got {d.shape}")
    if not np.allclose(d, d.T, rtol=0, atol=1e-12) or np.any(np.diag(d) != 0):
        raise ValueError("dissimilarity must be symmetric with a zero diagonal")
    if d.min() < 0 or d.max() > 1:
        raise ValueError("dissimilarities must lie in [0, 1]")
    return d


def from_lower_triangle(labels: Sequence[str], rows: Sequence[Sequence[float]]) -> np.ndarray:
    """Full matrix from rows 2..n of a lower triangle (row k has k entries)."""
    n = len(labels)
    d = np.zeros((n, n))
    if len(rows) != n - 1:
        raise ValueError("need n - 1 lower-triangle rows")
    for i, row in enumerate(rows, start=1):
        if len(row) != i:
            raise ValueError(f"lower-triangle row {i} must have {i} entries")
        d[i, :i] = row
        d[:i, i] = row
    return check_dissimilarity(labels, d)


def write_dissimilarity_csv(path, labels: Sequence[str], d):
    d = check_dissimilarity(labels, d)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["label", *labels])
        for lab, row in zip(labels, d):
            w.writerow([lab, *(f"{v:.6f}" for v in row)])


def read_dissimilarity_csv(path) -> tuple[list[str], np.ndarray]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path}: empty file")
    labels = rows[0][1:]
    body = rows[1:]
    if len(body) != len(labels):
        raise ValueError(f"{path}: expected {len(labels)} rows, found {len(body)}")
    mat = []
    for k, row in enumerate(body, start=2):
        if len(row) != len(labels) + 1 or row[0] != labels[k - 2]:
            raise ValueError(f"{path}:{k}: row does not match the header")
        try:
            mat.append([float(v) for v in row[1:]])
        except ValueError as exc:
            raise ValueError(f"{path}:{k}: {exc}") from None
    return labels, check_dissimilarity(labels, mat)
