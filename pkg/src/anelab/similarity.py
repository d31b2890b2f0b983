"""Phonetic similarity between Gaussian word models.

The overlap integral of the two prior-weighted densities (the two-class
Bayes error) is the reference quantity.  It is only tractable here by
brute force, so ``bayes_error_grid`` integrates it on a grid for 1-D and
2-D models; ``bhattacharyya_gaussian`` gives the closed-form upper bound
and ``isotropic_similarity`` its equal-isotropic-covariance special case.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from fractions import Fraction
from typing import Hashable, Sequence

import numpy as np

from .core import GaussianSpec, as_embedding

LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


class UnsupportedDimensionError(ValueError):
    pass


class NumericError(ArithmeticError):
    pass


@dataclass(frozen=True)
class GridConfig:
    points_per_axis: int = 2001
    span_sigmas: float = 8.0

    def __post_init__(self):
        if self.points_per_axis < 2000:
            raise ValueError("need at least 2000 points per axis")
        if self.span_sigmas < 8.0:
            raise ValueError("grid must extend at least 8 sigma beyond the means")


def _check_priors(priors) -> tuple[float, float]:
    p1, p2 = (float(p) for p in priors)
    if p1 < 0 or p2 < 0 or abs(p1 + p2 - 1.0) > 1e-12:
        raise ValueError(f"priors must be non-negative and sum to 1, got {priors}")
    return p1, p2


def _log_density_grid(axes: list[np.ndarray], g: GaussianSpec) -> np.ndarray:
    """Log N(x; g) evaluated on the tensor grid spanned by ``axes``."""
    cov = g.covariance()
    prec = np.linalg.inv(cov)
    logdet = np.linalg.slogdet(cov)[1]
    const = -0.5 * logdet - g.dim * LOG_SQRT_2PI
    if g.dim == 1:
        dx = axes[0] - g.mean[0]
        return const - 0.5 * prec[0, 0] * dx * dx
    dx = axes[0] - g.mean[0]
    dy = axes[1] - g.mean[1]
    quad = (prec[0, 0] * dx * dx)[:, None] + (prec[1, 1] * dy * dy)[None, :]
    quad += (2.0 * prec[0, 1] * dx)[:, None] * dy[None, :]
    return const - 0.5 * quad


def bayes_error_grid(
    g1: GaussianSpec,
    g2: GaussianSpec,
    priors=(0.5, 0.5),
    grid: GridConfig | None = None,
) -> float:
    """Integral of min(p1 N(x; g1), p2 N(x; g2)) by trapezoidal quadrature."""
    grid = grid or GridConfig()
    p1, p2 = _check_priors(priors)
    if g1.dim != g2.dim:
        raise ValueError("dimension mismatch")
    d = g1.dim
    if d > 2:
        raise UnsupportedDimensionError(f"grid oracle supports d in {{1, 2}}, got {d}")
    if p1 == 0.0 or p2 == 0.0:
        return 0.0

    sd_max = math.sqrt(max(np.linalg.eigvalsh(g1.covariance()).max(),
                           np.linalg.eigvalsh(g2.covariance()).max()))
    lo = np.minimum(g1.mean, g2.mean) - grid.span_sigmas * sd_max
    hi = np.maximum(g1.mean, g2.mean) + grid.span_sigmas * sd_max
    axes = [np.linspace(lo[k], hi[k], grid.points_per_axis) for k in range(d)]
    dens = np.minimum(
        p1 * np.exp(_log_density_grid(axes, g1)),
        p2 * np.exp(_log_density_grid(axes, g2)),
    )
    if not np.all(np.isfinite(dens)):
        raise NumericError("non-finite integrand")
    val = dens
    for k in reversed(range(d)):
        val = np.trapezoid(val, axes[k], axis=k)
    return float(min(max(val, 0.0), min(p1, p2)))


def pair_counting_similarity(
    samples1: Sequence[Hashable], samples2: Sequence[Hashable]
) -> Fraction:
    """Identical-pair count over total recordings, p / (n + m).

    Samples must already be quantized to hashable keys so that equality is
    exact; ``p`` is the sum over bins of the smaller of the two counts.
    """
    n, m = len(samples1), len(samples2)
    if n == 0 or m == 0:
        raise ValueError("both sample sets must be non-empty")
    c1, c2 = Counter(map(_key, samples1)), Counter(map(_key, samples2))
    pairs = sum(min(k, c2[b]) for b, k in c1.items())
    return Fraction(pairs, n + m)


def _key(x):
    if isinstance(x, np.ndarray):
        return x.tobytes()
    if isinstance(x, list):
        return tuple(x)
    return x


def quantize(points, step: float) -> list[tuple[int, ...]]:
    """Snap points to a common grid so pair counting can compare them exactly."""
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    if pts.shape[0] == 1 and np.ndim(points) == 1:
        pts = pts.T
    return [tuple(row) for row in np.floor(pts / step).astype(np.int64)]


def bhattacharyya_gaussian(g1: GaussianSpec, g2: GaussianSpec, priors=(0.5, 0.5)) -> float:
    """Bhattacharyya upper bound on the Bayes error of two Gaussians."""
    p1, p2 = _check_priors(priors)
    if g1.dim != g2.dim:
        raise ValueError("dimension mismatch")
    c1, c2 = g1.covariance(), g2.covariance()
    avg = 0.5 * (c1 + c2)
    try:
        l1 = np.linalg.cholesky(c1)
        l2 = np.linalg.cholesky(c2)
        la = np.linalg.cholesky(avg)
    except np.linalg.LinAlgError:
        raise ValueError("covariance is not positive-definite") from None
    dm = g2.mean - g1.mean
    z = np.linalg.solve(la, dm)
    logdet = lambda chol: 2.0 * np.log(np.diag(chol)).sum()  # noqa: E731
    exponent = -0.125 * (z @ z) - 0.5 * (logdet(la) - 0.5 * (logdet(l1) + logdet(l2)))
    return math.sqrt(p1 * p2) * math.exp(exponent)


def isotropic_similarity(m1, m2, sigma: float) -> float:
    """0.5 * exp(-|m1 - m2|^2 / (8 sigma^2))."""
    if not sigma > 0:
        raise ValueError("sigma must be > 0")
    diff = as_embedding(m1) - as_embedding(m2)
    return 0.5 * math.exp(-(diff @ diff) / (8.0 * sigma * sigma))


def acoustic_likelihood(f, g, sigma: float) -> float:
    """Log of the isotropic Gaussian likelihood of audio embedding ``f`` under text embedding ``g``."""
    if not sigma > 0:
        raise ValueError("sigma must be > 0")
    diff = as_embedding(f) - as_embedding(g)
    d = diff.size
    return -d * (LOG_SQRT_2PI + math.log(sigma)) - (diff @ diff) / (2.0 * sigma * sigma)
