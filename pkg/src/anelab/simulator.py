"""Free-embedding gradient dynamics.

Every point moves by its own loss gradient, as if the encoder could place
each embedding anywhere.  With p_ij = 1/n_i over the n_i other members of
i's cluster and q_ij = softmax_j(-|f_i - f_j|^2) over the whole cloud, the
gradient splits into a same-cluster part

    2 sum_{j in J+} (f_i - f_j)(p_ij + p_ji - q_ij - q_ji)

and an other-cluster part

    -2 sum_{j in J-} (f_i - f_j)(q_ij + q_ji).

Within a cluster p_ij + p_ji = 2/c with c the number of other members.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np


@dataclass
class PointCloud:
    points: np.ndarray  # (N, d)
    labels: np.ndarray  # (N,) cluster ids
    iteration: int = 0

    def __post_init__(self):
        self.points = np.array(self.points, dtype=np.float64)
        self.labels = np.asarray(self.labels)
        if self.points.ndim != 2 or self.labels.shape != (self.points.shape[0],):
            raise ValueError("need an (N, d) point array and N labels")
        if not np.all(np.isfinite(self.points)):
            raise ValueError("points must be finite")

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def __len__(self) -> int:
        return self.points.shape[0]

    def clusters(self) -> list:
        return list(dict.fromkeys(self.labels.tolist()))

    def members(self, label) -> np.ndarray:
        return self.points[self.labels == label]


def neighbor_probabilities(points: np.ndarray) -> np.ndarray:
    """q_ij = exp(-|f_i - f_j|^2) / sum_{k != i} exp(-|f_i - f_k|^2), zero diagonal."""
    sq = ((points[:, None, :] - points[None, :, :]) ** 2).sum(-1)
    logits = -sq
    np.fill_diagonal(logits, -np.inf)
    logits -= logits.max(axis=1, keepdims=True)
    e = np.exp(logits)
    return e / e.sum(axis=1, keepdims=True)


def target_probabilities(labels: np.ndarray) -> np.ndarray:
    same = labels[:, None] == labels[None, :]
    np.fill_diagonal(same, False)
    counts = same.sum(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        p = np.where(same, 1.0 / np.maximum(counts, 1)[:, None], 0.0)
    return p


def _split_gradients(cloud: PointCloud) -> tuple[np.ndarray, np.ndarray]:
    """(same-cluster, other-cluster) gradients of every point, (N, d) each."""
    f, labels = cloud.points, cloud.labels
    q = neighbor_probabilities(f)
    p = target_probabilities(labels)
    same = labels[:, None] == labels[None, :]
    diff = f[:, None, :] - f[None, :, :]
    w_pos = np.where(same, p + p.T - q - q.T, 0.0)
    w_neg = np.where(same, 0.0, q + q.T)
    pos = 2.0 * np.einsum("ij,ijk->ik", w_pos, diff)
    neg = -2.0 * np.einsum("ij,ijk->ik", w_neg, diff)
    return pos, neg


def _singleton_check(cloud: PointCloud, i: int) -> bool:
    if np.count_nonzero(cloud.labels == cloud.labels[i]) < 2:
        warnings.warn(f"point {i} is alone in its cluster; positive gradient is zero", stacklevel=3)
        return True
    return False


def positive_gradient(cloud: PointCloud, i: int) -> np.ndarray:
    if _singleton_check(cloud, i):
        return np.zeros(cloud.dim)
    return _split_gradients(cloud)[0][i]


def negative_gradient(cloud: PointCloud, i: int) -> np.ndarray:
    return _split_gradients(cloud)[1][i]


def loss(cloud: PointCloud) -> float:
    """KL(p || q) summed over all points with at least one cluster mate."""
    q = neighbor_probabilities(cloud.points)
    p = target_probabilities(cloud.labels)
    mask = p > 0
    return float((p[mask] * np.log(p[mask] / q[mask])).sum())


def step(cloud: PointCloud, gamma: float, include_negative: bool = False) -> PointCloud:
    """One synchronous gradient step; all gradients use the pre-step positions."""
    if gamma < 0:
        raise ValueError("gamma must be >= 0")
    pos, neg = _split_gradients(cloud)
    grad = pos + neg if include_negative else pos
    return PointCloud(cloud.points - gamma * grad, cloud.labels.copy(), cloud.iteration + 1)


def simulate(cloud: PointCloud, gamma: float, iterations: int, include_negative: bool = False,
             record_every: int = 1) -> list[PointCloud]:
    """Trajectory including the initial cloud."""
    traj = [cloud]
    for _ in range(iterations):
        cloud = step(cloud, gamma, include_negative)
        if cloud.iteration % record_every == 0 or cloud.iteration == iterations:
            traj.append(cloud)
    return traj


@dataclass
class SimulSetup:
    points_per_cluster: int = 100
    axis_ratio: float = 5.0
    long_axis: tuple[float, float] = (2.0, 1.0)  # long-axis std of each cluster
    separation: float = 20.0
    seed: int = 0
    orientations: tuple[float, float] = field(default=(0.0, np.pi / 2))


def two_cluster_cloud(setup: SimulSetup | None = None) -> PointCloud:
    """Two elongated 2-D Gaussian clusters at perpendicular orientations."""
    setup = setup or SimulSetup()
    rng = np.random.default_rng(setup.seed)
    pts, labels = [], []
    for k, (theta, long_sd) in enumerate(zip(setup.orientations, setup.long_axis)):
        z = rng.standard_normal((setup.points_per_cluster, 2)) * [long_sd, long_sd / setup.axis_ratio]
        rot = np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])
        center = np.array([k * setup.separation, 0.0])
        pts.append(z @ rot.T + center)
        labels += [k] * setup.points_per_cluster
    return PointCloud(np.concatenate(pts), np.array(labels))


def cluster_shape(cloud: PointCloud) -> dict:
    """Per cluster: covariance condition number and RMS radius about the centroid."""
    out = {}
    for lab in cloud.clusters():
        x = cloud.members(lab)
        c = x - x.mean(axis=0)
        evals = np.linalg.eigvalsh(c.T @ c / x.shape[0])
        out[lab] = {
            "condition": float(evals[-1] / evals[0]) if evals[0] > 0 else float("inf"),
            "radius": float(np.sqrt((c * c).sum(axis=1).mean())),
        }
    return out


def write_trajectory(path, trajectory: Sequence[PointCloud]):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        d = trajectory[0].dim
        w.writerow(["iter", "point_id", "cluster", *(f"x{k}" for k in range(d))])
        for cloud in trajectory:
            for i, (pt, lab) in enumerate(zip(cloud.points, cloud.labels)):
                w.writerow([cloud.iteration, i, lab, *(f"{v:.8g}" for v in pt)])
