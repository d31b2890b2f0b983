"""Property tests for the invariants each module promises."""

import numpy as np
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from anelab.core import GaussianSpec, SymbolInventory, UnigramLM
from anelab.encoder import dump_params, encode_batch, init_params, parse_params
from anelab.lexicon import (
    CostMatrix,
    dialect_dissimilarity,
    fit_additive_tree,
    min_edit_distance,
    substitution_costs,
    wakeword_confusion,
)
from anelab.search import EmbeddingIndex, classify
from anelab.similarity import bayes_error_grid, bhattacharyya_gaussian, isotropic_similarity
from anelab.simulator import PointCloud, step
from anelab.synthdata import SynthConfig, generate_corpus, generate_lexicon
from anelab.trainer import build_microbatch, induced_q, microbatch_loss
from oracles import split_loss

seeds = st.integers(0, 2**31 - 1)
finite = st.floats(-5, 5, allow_nan=False)


@given(st.lists(st.text("abcdefg0123", min_size=1, max_size=3), min_size=1, max_size=30))
def test_interning_is_a_bijection(names):
    inv = SymbolInventory()
    ids = [inv.intern(n) for n in names]
    assert {inv.name(i) for i in set(ids)} == set(names)
    assert len(set(ids)) == len(set(names)) == len(inv)
    assert all(inv.name(i) == n for i, n in zip(ids, names))


@given(arrays(np.float64, 3, elements=finite), arrays(np.float64, 3, elements=finite), st.floats(0.1, 4))
def test_similarities_symmetric_and_in_range(a, b, s):
    v = isotropic_similarity(a, b, s)
    assert 0.0 <= v <= 0.5 and v == isotropic_similarity(b, a, s)
    g1, g2 = GaussianSpec.isotropic(a, s), GaussianSpec.isotropic(b, 2 * s)
    assert abs(bhattacharyya_gaussian(g1, g2) - bhattacharyya_gaussian(g2, g1)) < 1e-12


@given(finite, finite, st.floats(0.2, 3), st.floats(0.2, 3), st.floats(0.05, 0.95))
def test_bayes_error_range_and_symmetry(m1, m2, s1, s2, p1):
    g1, g2 = GaussianSpec.isotropic([m1], s1), GaussianSpec.isotropic([m2], s2)
    e = bayes_error_grid(g1, g2, (p1, 1 - p1))
    assert 0.0 <= e <= min(p1, 1 - p1) + 1e-6
    assert abs(e - bayes_error_grid(g2, g1, (1 - p1, p1))) < 1e-12


@given(seeds, st.booleans())
def test_serialized_model_encodes_bit_identically(seed, bidirectional):
    rng = np.random.default_rng(seed)
    params = init_params(int(rng.integers(1, 9)), int(rng.integers(1, 17)), int(rng.integers(1, 9)), rng, bidirectional)
    seqs = [rng.standard_normal((int(rng.integers(1, 13)), params.input_dim)) for _ in range(3)]
    back = parse_params(dump_params(params))
    np.testing.assert_array_equal(encode_batch(params, seqs)[0], encode_batch(back, seqs)[0])


@given(st.lists(st.integers(0, 4), min_size=4, max_size=20), seeds, st.integers(2, 4))
def test_microbatch_targets_are_exact(labels, seed, size):
    if max(labels.count(v) for v in labels) < 2:
        labels = labels + [labels[0]]
    mb = build_microbatch(labels, np.random.default_rng(seed), size)
    n0 = sum(labels[j] == labels[mb.pivot] for j in mb.members)
    assert n0 >= 1
    assert set(mb.p.tolist()) <= {0.0, 1.0 / n0}
    assert abs(mb.p.sum() - 1.0) < 1e-12


@given(arrays(np.float64, (5, 3), elements=finite), arrays(np.float64, 3, elements=finite), st.integers(0, 4))
def test_induced_q_normalized_and_translation_invariant(f, shift, i):
    q = induced_q(f, i)
    assert abs(q.sum() - 1.0) < 1e-12
    np.testing.assert_allclose(induced_q(f + shift, i), q, rtol=1e-9, atol=1e-12)


@given(arrays(np.float64, 4, elements=st.floats(0.01, 1)), st.integers(1, 4))
def test_loss_zero_exactly_at_match(raw, support):
    p = np.zeros(4)
    p[:support] = raw[:support] / raw[:support].sum()
    assert microbatch_loss(p, p) == 0.0
    q = np.full(4, 0.25)
    assert (microbatch_loss(p, q) == 0.0) == (support == 4 and np.allclose(p, q))


def _cloud(seed, n=8):
    rng = np.random.default_rng(seed)
    labels = np.r_[0, 0, 1, 1, rng.integers(0, 3, size=n - 4)]
    return PointCloud(rng.standard_normal((n, 2)), labels)


@given(seeds, st.booleans())
def test_step_is_permutation_equivariant(seed, negative):
    c = _cloud(seed)
    perm = np.random.default_rng(seed + 1).permutation(len(c))
    moved = step(c, 0.1, negative)
    moved_perm = step(PointCloud(c.points[perm], c.labels[perm]), 0.1, negative)
    np.testing.assert_allclose(moved_perm.points, moved.points[perm], atol=1e-12)


def test_small_positive_step_lowers_same_cluster_loss():
    for seed in range(100):
        c = _cloud(seed)
        after = step(c, 1e-3)
        # cross-cluster distances held at their pre-step values
        assert split_loss(after.points, c.points, c.labels) <= split_loss(c.points, c.points, c.labels) + 1e-12


@given(seeds)
def test_classify_permutation_and_extension(seed):
    rng = np.random.default_rng(seed)
    vecs = rng.standard_normal((12, 3))
    f = rng.standard_normal(3)
    idx = EmbeddingIndex.build(list(range(12)), vecs)
    lab, d = classify(f, idx)
    assert d <= idx.distances(f).min() + 0.0
    perm = rng.permutation(12)
    assert classify(f, EmbeddingIndex.build([int(k) for k in perm], vecs[perm]))[0] == lab
    far = f + (np.sqrt(d) + 1.0) * np.array([1.0, 0.0, 0.0])
    idx.add("far", far)
    assert classify(f, idx) == (lab, d)


# |dg|^2 / 8 sigma^2 stays below 16, where 1 - e^-x is still distinguishable from 1
@given(arrays(np.float64, (5, 2), elements=st.floats(-2, 2)), st.floats(0.5, 3))
def test_cost_matrix_properties(emb, sigma):
    sub = substitution_costs(emb, sigma).substitution
    assert np.array_equal(sub, sub.T) and not np.diag(sub).any()
    assert sub.min() >= 0.0 and sub.max() < 1.0


@given(st.lists(st.integers(0, 3), max_size=7), st.lists(st.integers(0, 3), max_size=7))
def test_free_substitution_distance_bound(a, b):
    d = min_edit_distance(a, b, CostMatrix(np.zeros((4, 4))))
    assert d == abs(len(a) - len(b))
    assert min_edit_distance(a, b, CostMatrix.binary(4)) <= max(len(a), len(b))


@given(seeds, st.floats(0.01, 2.0))
def test_dialect_distance_grows_with_separation(seed, push):
    rng = np.random.default_rng(seed)
    base = {n: {w: rng.standard_normal(2) for w in "xyz"} for n in "ab"}
    _, before = dialect_dissimilarity(base, 1.0)
    moved = {n: dict(t) for n, t in base.items()}
    direction = moved["b"]["y"] - moved["a"]["y"]
    norm = np.linalg.norm(direction)
    moved["b"]["y"] = moved["b"]["y"] + push * direction / norm
    _, after = dialect_dissimilarity(moved, 1.0)
    assert after[0, 1] > before[0, 1]


@given(seeds, st.floats(0.0, 0.99), st.floats(1.1, 5.0))
def test_wakeword_monotone_in_neighbor_probability(seed, alpha, factor):
    rng = np.random.default_rng(seed)
    words = ["t", "a", "b", "c"]
    emb = {w: rng.standard_normal(2) for w in words}
    probs = dict(zip(words, [0.1, 0.05, 0.2, 0.1]))
    base = wakeword_confusion("t", emb, UnigramLM(probs), 0.7, alpha)
    probs["a"] *= factor
    assert wakeword_confusion("t", emb, UnigramLM(probs), 0.7, alpha) >= base


@given(seeds)
def test_additive_input_reproduced(seed):
    from anelab.lexicon.tree import random_additive_tree

    truth = random_additive_tree(int(np.random.default_rng(seed).integers(3, 9)), np.random.default_rng(seed))
    d = truth.distances()
    assert np.abs(fit_additive_tree(d).distances() - d).max() < 1e-9


@given(seeds)
def test_frames_are_probability_vectors_and_seed_changes_only_frames(seed):
    cfg = SynthConfig(num_words=3, samples_per_word=2, seed=seed % 1000)
    lex = generate_lexicon(cfg)
    a = generate_corpus(cfg, lexicon=lex)
    b = generate_corpus(SynthConfig(num_words=3, samples_per_word=2, seed=seed % 1000 + 1), lexicon=lex)
    for u in a.utterances:
        assert u.frames.min() >= 0.0 and np.abs(u.frames.sum(axis=1) - 1).max() < 1e-9
    assert [u.phones for u in a.utterances] == [u.phones for u in b.utterances]
    assert any(u.frames.shape != v.frames.shape or not np.array_equal(u.frames, v.frames)
               for u, v in zip(a.utterances, b.utterances))
