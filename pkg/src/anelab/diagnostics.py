"""Cluster statistics and cluster-wise isotropy.

Variances use the population (divide-by-n) convention throughout.
"""

from __future__ import annotations

import warnings
from collections import defaultdict
from dataclasses import dataclass
from typing import Hashable, Sequence

import numpy as np


@dataclass(frozen=True)
class ClusterStats:
    label: Hashable
    count: int
    mean: np.ndarray
    variance: np.ndarray
    sigma_hat: float
    mean_abs: float

    @property
    def singleton(self) -> bool:
        return self.count < 2


def _pca_variances(points: np.ndarray) -> np.ndarray:
    """Variances along principal axes, descending."""
    centered = points - points.mean(axis=0)
    cov = centered.T @ centered / points.shape[0]
    evals = np.linalg.eigh(cov)[0][::-1]
    return np.clip(evals, 0.0, None)


def isoscore(points) -> float:
    """IsoScore of a point cloud: 1 for isotropic spread, 0 for a single axis.

    Steps: center, rotate to the PCA basis, take the per-axis variances,
    rescale them to norm sqrt(d), measure the defect from the all-ones
    vector and map it onto [0, 1].
    """
    x = np.asarray(points, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ValueError("isoscore needs at least two points")
    d = x.shape[1]
    if d == 1:
        return 1.0
    var = _pca_variances(x)
    total = np.linalg.norm(var)
    if total == 0.0:
        warnings.warn("zero total variance; isoscore defined as 0", stacklevel=2)
        return 0.0
    var_hat = var * np.sqrt(d) / total
    defect = np.linalg.norm(var_hat - 1.0) / np.sqrt(2.0 * (d - np.sqrt(d)))
    phi = (d - defect**2 * (d - np.sqrt(d))) ** 2 / d**2
    score = (d * phi - 1.0) / (d - 1.0)
    return float(min(max(score, 0.0), 1.0))


def group_by_label(embeddings, labels: Sequence[Hashable]) -> dict[Hashable, np.ndarray]:
    f = np.asarray(embeddings, dtype=np.float64)
    if len(labels) != f.shape[0]:
        raise ValueError("one label per embedding required")
    idx: dict[Hashable, list[int]] = defaultdict(list)
    for i, lab in enumerate(labels):
        idx[lab].append(i)
    return {lab: f[rows] for lab, rows in idx.items()}


def cluster_stats(groups: dict[Hashable, np.ndarray]) -> tuple[list[ClusterStats], float]:
    """Per-cluster statistics and the count-weighted global sigma estimate.

    sigma_hat of a cluster is the mean of its per-dimension standard
    deviations; singletons get zero variance and are left out of the
    global estimate.
    """
    if not groups:
        raise ValueError("no clusters given")
    stats = []
    num, den = 0.0, 0
    for label, pts in groups.items():
        pts = np.atleast_2d(np.asarray(pts, dtype=np.float64))
        n = pts.shape[0]
        if n == 0:
            raise ValueError(f"cluster {label!r} is empty")
        mean = pts.mean(axis=0)
        var = pts.var(axis=0) if n >= 2 else np.zeros(pts.shape[1])
        sig = float(np.sqrt(var).mean())
        stats.append(ClusterStats(label, n, mean, var, sig, float(np.abs(pts).mean())))
        if n >= 2:
            num += n * sig
            den += n
    sigma = num / den if den else float("nan")
    return stats, sigma


def uniformity_ratios(stats: Sequence[ClusterStats]) -> tuple[float, float]:
    """(std of sigma_hat / mean |f|, std of sigma_hat / mean sigma_hat) over non-singleton clusters."""
    usable = [s for s in stats if not s.singleton]
    if len(usable) < 2:
        raise ValueError("need at least two clusters with two or more members")
    sig = np.array([s.sigma_hat for s in usable])
    counts = np.array([s.count for s in usable], dtype=np.float64)
    mean_abs = float((counts * np.array([s.mean_abs for s in usable])).sum() / counts.sum())
    spread = float(sig.std())
    if mean_abs == 0.0 or sig.mean() == 0.0:
        raise ZeroDivisionError("zero denominator in uniformity ratio")
    return spread / mean_abs, spread / float(sig.mean())


def mean_cluster_isoscore(groups: dict[Hashable, np.ndarray], min_points: int = 2) -> float:
    scores = [isoscore(p) for p in groups.values() if p.shape[0] >= min_points]
    if not scores:
        raise ValueError("no cluster large enough for isoscore")
    return float(np.mean(scores))


def summarize(embeddings, labels: Sequence[Hashable]) -> dict:
    """One diagnostics row: mean isoscore, both ratios and the global sigma."""
    groups = group_by_label(embeddings, labels)
    stats, sigma = cluster_stats(groups)
    ratio_a, ratio_b = uniformity_ratios(stats)
    return {
        "mean_isoscore": mean_cluster_isoscore(groups),
        "ratio_a": ratio_a,
        "ratio_b": ratio_b,
        "sigma_hat": sigma,
    }


def write_report(path, rows: Sequence[dict]):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("epoch,mean_isoscore,ratio_a,ratio_b,sigma_hat\n")
        for r in rows:
            fh.write(f"{r['epoch']},{r['mean_isoscore']:.6f},{r['ratio_a']:.6f},"
                     f"{r['ratio_b']:.6f},{r['sigma_hat']:.6f}\n")
