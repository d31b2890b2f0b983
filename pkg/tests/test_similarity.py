import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.stats import multivariate_normal, norm

from anelab.core import GaussianSpec
from anelab.similarity import (
    GridConfig,
    UnsupportedDimensionError,
    acoustic_likelihood,
    bayes_error_grid,
    bhattacharyya_gaussian,
    isotropic_similarity,
    pair_counting_similarity,
    quantize,
)


def _bayes_1d_oracle(m1, s1, m2, s2, p1=0.5, p2=0.5):
    """Closed form via the decision-boundary crossings of two weighted normal densities."""
    if s1 == s2:
        if m1 == m2:
            return min(p1, p2)
        t = 0.5 * (m1 + m2) + s1**2 * math.log(p2 / p1) / (m1 - m2)
        # class with the smaller mean wins left of t
        left, right = ((p1, m1), (p2, m2)) if m1 < m2 else ((p2, m2), (p1, m1))
        return left[0] * norm.sf(t, left[1], s1) + right[0] * norm.cdf(t, right[1], s1)
    # quadratic in x for log p1 N1 = log p2 N2
    a = 1 / (2 * s2**2) - 1 / (2 * s1**2)
    b = m1 / s1**2 - m2 / s2**2
    c = (m2**2 / (2 * s2**2) - m1**2 / (2 * s1**2)
         + math.log(p1 / s1) - math.log(p2 / s2))
    roots = sorted(np.roots([a, b, c]).real)
    edges = [-np.inf, *roots, np.inf]
    total = 0.0
    for lo, hi in zip(edges[:-1], edges[1:]):
        mid = lo + 1.0 if hi == np.inf else (hi - 1.0 if lo == -np.inf else 0.5 * (lo + hi))
        d1 = p1 * norm.pdf(mid, m1, s1)
        d2 = p2 * norm.pdf(mid, m2, s2)
        w, m, s = (p1, m1, s1) if d1 < d2 else (p2, m2, s2)
        total += w * (norm.cdf(hi, m, s) - norm.cdf(lo, m, s))
    return total


def test_grid_config_minimums():
    with pytest.raises(ValueError):
        GridConfig(points_per_axis=1000)
    with pytest.raises(ValueError):
        GridConfig(span_sigmas=4.0)


def test_equal_variance_1d_matches_phi():
    for dm, s in [(2.0, 1.0), (0.5, 0.3), (5.0, 2.0), (0.0, 1.0)]:
        got = bayes_error_grid(GaussianSpec.isotropic([0.0], s), GaussianSpec.isotropic([dm], s))
        assert got == pytest.approx(norm.cdf(-abs(dm) / (2 * s)), abs=1e-4)


@pytest.mark.parametrize("m1,s1,m2,s2,p1", [
    (0.0, 1.0, 1.5, 2.0, 0.5),
    (-1.0, 0.5, 0.7, 1.5, 0.3),
    (2.0, 3.0, 0.0, 1.0, 0.8),
    (0.0, 1.0, 3.0, 1.0, 0.2),
])
def test_unequal_variance_1d_matches_closed_form(m1, s1, m2, s2, p1):
    got = bayes_error_grid(GaussianSpec.isotropic([m1], s1), GaussianSpec.isotropic([m2], s2), (p1, 1 - p1))
    assert got == pytest.approx(_bayes_1d_oracle(m1, s1, m2, s2, p1, 1 - p1), abs=1e-5)


def test_equal_covariance_2d_matches_mahalanobis_form(rng):
    for _ in range(5):
        a = rng.standard_normal((2, 2))
        cov = a @ a.T + 0.2 * np.eye(2)
        m1, m2 = rng.standard_normal(2), rng.standard_normal(2)
        delta = math.sqrt((m2 - m1) @ np.linalg.solve(cov, m2 - m1))
        got = bayes_error_grid(GaussianSpec(m1, cov=cov), GaussianSpec(m2, cov=cov))
        assert got == pytest.approx(norm.cdf(-delta / 2), abs=1e-4)


def test_identical_models_give_half_and_zero_prior_gives_zero():
    g = GaussianSpec.isotropic([1.0, -1.0], 0.7)
    assert bayes_error_grid(g, g) == pytest.approx(0.5, abs=1e-5)
    assert bayes_error_grid(g, g, (1.0, 0.0)) == 0.0


def test_grid_refuses_three_dimensions():
    g = GaussianSpec.isotropic(np.zeros(3), 1.0)
    with pytest.raises(UnsupportedDimensionError):
        bayes_error_grid(g, g)


def test_bhattacharyya_identical_is_half():
    g = GaussianSpec(np.zeros(3), cov=np.diag([1.0, 2.0, 3.0]))
    assert bhattacharyya_gaussian(g, g) == pytest.approx(0.5, abs=1e-15)


def test_isotropic_similarity_is_bhattacharyya_special_case(rng):
    for _ in range(100):
        d = int(rng.integers(1, 9))
        s = float(rng.uniform(0.1, 3.0))
        m1, m2 = rng.standard_normal(d) * 2, rng.standard_normal(d) * 2
        b = bhattacharyya_gaussian(GaussianSpec.isotropic(m1, s), GaussianSpec.isotropic(m2, s))
        assert abs(b - isotropic_similarity(m1, m2, s)) < 1e-10


def test_isotropic_similarity_limits():
    assert isotropic_similarity([0.0], [0.0], 1.0) == 0.5
    assert isotropic_similarity([0.0], [100.0], 1.0) < 1e-300
    with pytest.raises(ValueError):
        isotropic_similarity([0.0], [1.0], 0.0)


@given(st.floats(-3, 3), st.floats(-3, 3), st.floats(0.2, 3))
def test_isotropic_similarity_symmetric_and_bounded(a, b, s):
    v = isotropic_similarity([a], [b], s)
    assert 0.0 <= v <= 0.5
    assert v == isotropic_similarity([b], [a], s)


def test_acoustic_likelihood_matches_scipy(rng):
    for _ in range(20):
        d = int(rng.integers(1, 10))
        f, g = rng.standard_normal(d), rng.standard_normal(d)
        s = float(rng.uniform(0.2, 2.0))
        ref = multivariate_normal(mean=g, cov=s * s * np.eye(d)).logpdf(f)
        assert acoustic_likelihood(f, g, s) == pytest.approx(ref, rel=1e-12, abs=1e-12)


def test_pair_counting_similarity():
    assert pair_counting_similarity(["x", "y"], ["z"]) == 0
    same = ["a", "b", "c", "a"]
    assert pair_counting_similarity(same, list(same)) == Fraction(1, 2)
    assert pair_counting_similarity(["a", "a", "b"], ["a", "c"]) == Fraction(1, 5)
    with pytest.raises(ValueError):
        pair_counting_similarity([], ["a"])


def test_pair_counting_approaches_bayes_error(rng):
    # with n = m samples quantized finely, p/(n+m) tends to the overlap integral
    n, step = 200_000, 0.05
    a = quantize(rng.normal(0.0, 1.0, n), step)
    b = quantize(rng.normal(1.0, 1.0, n), step)
    est = float(pair_counting_similarity(a, b))
    ref = bayes_error_grid(GaussianSpec.isotropic([0.0], 1.0), GaussianSpec.isotropic([1.0], 1.0))
    assert est == pytest.approx(ref, abs=0.01)
