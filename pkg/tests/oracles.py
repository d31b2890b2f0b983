"""Independent reference computations shared by the unit and acceptance tests."""

import math

import numpy as np


def numeric_grad(fn, x: np.ndarray, step: float = 1e-5) -> np.ndarray:
    x = np.array(x, dtype=np.float64)
    out = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        k = it.multi_index
        orig = x[k]
        x[k] = orig + step
        up = fn(x)
        x[k] = orig - step
        down = fn(x)
        x[k] = orig
        out[k] = (up - down) / (2 * step)
    return out


def rel_error(a, b) -> float:
    a, b = np.ravel(a), np.ravel(b)
    denom = max(np.linalg.norm(a) + np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / denom)


def split_loss(same_pts, other_pts, labels):
    """Cloud KL loss with same-cluster distances from one copy of the points
    and cross-cluster distances from another.

    Differentiating with respect to either copy gives the same-cluster or
    the other-cluster part of the free-embedding gradient.
    """
    def sq(x):
        return ((x[:, None, :] - x[None, :, :]) ** 2).sum(-1)

    same = labels[:, None] == labels[None, :]
    d2 = np.where(same, sq(same_pts), sq(other_pts))
    n = len(labels)
    total = 0.0
    for i in range(n):
        mates = [j for j in range(n) if j != i and same[i, j]]
        if not mates:
            continue
        others = [j for j in range(n) if j != i]
        lse = np.log(np.exp(-d2[i, others]).sum())
        for j in mates:
            p = 1.0 / len(mates)
            total += p * (np.log(p) + d2[i, j] + lse)
    return total


def normal_cdf(x: float) -> float:
    return 0.5 * (1.0 + math.erf(x / math.sqrt(2.0)))
