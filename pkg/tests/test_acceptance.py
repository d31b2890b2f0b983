"""End-to-end acceptance checks, one test per criterion.

Each test prints a PASS/FAIL line that is repeated in the terminal
summary.  The training-based criteria run scaled-down synthetic
experiments and take a few minutes in total.
"""

import math
import time

import numpy as np
import pytest

import toy_corpus
from toy_corpus import A
from conftest import record_acceptance
from oracles import normal_cdf, numeric_grad, rel_error, split_loss
from anelab import pipelines
from anelab.core import GaussianSpec, UnigramLM
from anelab.diagnostics import isoscore
from anelab.encoder import backward, encode_batch, init_params
from anelab.lexicon import fit_additive_tree, wakeword_confusion, wakeword_sweep
from anelab.lexicon.dialect import from_lower_triangle
from anelab.simulator import PointCloud, _split_gradients, cluster_shape, simulate, two_cluster_cloud
from anelab.similarity import bayes_error_grid, bhattacharyya_gaussian, isotropic_similarity
from anelab.synthdata import SynthConfig, zipf_lm
from anelab.trainer import MicrobatchBuilder, loss_gradient_wrt_embeddings, microbatch_from_members, pivot_loss


def check(number, title, passed, detail):
    record_acceptance(number, title, bool(passed), detail)
    assert passed, detail


def _random_gaussian(rng, d):
    if rng.random() < 0.5:
        return GaussianSpec.isotropic(rng.uniform(-3, 3, d), float(rng.uniform(0.3, 2.0)))
    a = rng.standard_normal((d, d))
    return GaussianSpec(rng.uniform(-3, 3, d), cov=a @ a.T + 0.1 * np.eye(d))


def test_01_bound_dominance():
    rng = np.random.default_rng(1)
    t0 = time.perf_counter()
    worst = np.inf
    for k in range(200):
        d = 1 + k % 2
        g1, g2 = _random_gaussian(rng, d), _random_gaussian(rng, d)
        worst = min(worst, bhattacharyya_gaussian(g1, g2) - bayes_error_grid(g1, g2))
    elapsed = time.perf_counter() - t0
    check(1, "Bhattacharyya bound dominates Bayes error",
          worst >= -1e-6 and elapsed < 30,
          f"min(bound - error) = {worst:.3g} over 200 pairs in {elapsed:.1f}s")


def test_02_closed_form_consistency():
    rng = np.random.default_rng(2)
    gap = 0.0
    for _ in range(100):
        d = int(rng.integers(1, 9))
        s = float(rng.uniform(0.1, 3.0))
        m1, m2 = rng.standard_normal(d) * 2, rng.standard_normal(d) * 2
        b = bhattacharyya_gaussian(GaussianSpec.isotropic(m1, s), GaussianSpec.isotropic(m2, s))
        gap = max(gap, abs(b - isotropic_similarity(m1, m2, s)))
    phi_gap = 0.0
    for dm, s in [(2.0, 1.0), (0.7, 0.4), (3.5, 2.0), (0.1, 1.5), (6.0, 1.0)]:
        got = bayes_error_grid(GaussianSpec.isotropic([1.0], s), GaussianSpec.isotropic([1.0 + dm], s))
        phi_gap = max(phi_gap, abs(got - normal_cdf(-abs(dm) / (2 * s))))
    check(2, "isotropic closed form and 1-D Bayes error",
          gap < 1e-10 and phi_gap < 1e-4,
          f"max |general - isotropic| = {gap:.2g}; max |grid - Phi| = {phi_gap:.2g}")


def _microbatch_fd(rng):
    m, d = int(rng.integers(2, 8)), int(rng.integers(1, 5))
    f = rng.standard_normal((m, d))
    same = rng.random(m - 1) < 0.4
    same[rng.integers(m - 1)] = True
    p = same / same.sum()
    return rel_error(loss_gradient_wrt_embeddings(p, f), numeric_grad(lambda x: pivot_loss(p, x), f))


def _cloud_fd(rng):
    n = int(rng.integers(4, 8))
    labels = np.r_[0, 1, 0, 1, rng.integers(0, 2, size=n - 4)]
    c = PointCloud(rng.standard_normal((n, 2)), labels)
    pos, neg = _split_gradients(c)
    e_pos = rel_error(pos, numeric_grad(lambda x: split_loss(x, c.points, c.labels), c.points))
    e_neg = rel_error(neg, numeric_grad(lambda x: split_loss(c.points, x, c.labels), c.points))
    return e_pos, e_neg


def _encoder_fd(rng, bidirectional):
    d_in, h, d = (int(v) for v in rng.integers(1, 5, size=3))
    params = init_params(d_in, h, d, rng, bidirectional)
    params = params.replace([a + 0.1 * rng.standard_normal(a.shape) for a in params.as_tuple()])
    seqs = [rng.standard_normal((int(rng.integers(1, 6)), d_in)) for _ in range(3)]
    w = rng.standard_normal((3, d))
    _, tape = encode_batch(params, seqs)
    grads = backward(params, tape, w)
    worst = 0.0
    for k, name in enumerate(params.names()):
        def fn(x, k=k):
            arrays = list(params.as_tuple())
            arrays[k] = x
            return float((encode_batch(params.replace(arrays), seqs)[0] * w).sum())
        worst = max(worst, rel_error(getattr(grads, name), numeric_grad(fn, getattr(params, name))))
    return worst


def test_03_gradient_fidelity():
    rng = np.random.default_rng(3)
    n = 50
    mb = max(_microbatch_fd(rng) for _ in range(n))
    cloud = [_cloud_fd(rng) for _ in range(n)]
    pos, neg = max(c[0] for c in cloud), max(c[1] for c in cloud)
    enc = max(_encoder_fd(rng, k % 2 == 1) for k in range(n))
    check(3, "analytic gradients match finite differences",
          max(mb, pos, neg, enc) < 1e-4,
          f"max rel err over {n} each: microbatch {mb:.1e}, same-cluster {pos:.1e}, "
          f"other-cluster {neg:.1e}, encoder backprop {enc:.1e}")


def test_04_microbatch_fixture():
    labels = toy_corpus.labels()
    rows = [(2, (3, 5, 8), (1.0, 0.0, 0.0)), (8, (9, 2, 3), (1.0, 0.0, 0.0)), (3, (2, 4, 7), (0.5, 0.5, 0.0))]
    exact = all(np.array_equal(microbatch_from_members(labels, A(pv), [A(m) for m in mem]).p, p)
                for pv, mem, p in rows)
    builder = MicrobatchBuilder(labels)
    rng = np.random.default_rng(4)
    pivots = {builder.draw(rng, 4).pivot for _ in range(10_000)}
    never = {A(i) for i in (1, 5, 6, 7, 10)}
    check(4, "microbatch construction fixture",
          exact and not pivots & never,
          f"rows exact: {exact}; pivots seen over 10k draws: {sorted(i + 1 for i in pivots)}")


def test_05_sphere_formation():
    t0 = time.perf_counter()
    final = simulate(two_cluster_cloud(), 0.1, 200, record_every=200)[-1]
    elapsed = time.perf_counter() - t0
    shape = cluster_shape(final)
    cond = [s["condition"] for s in shape.values()]
    r = [s["radius"] for s in shape.values()]
    ratio = r[0] / r[1]
    iso = [isoscore(final.members(k)) for k in final.clusters()]
    check(5, "free-embedding clusters become equal spheres",
          max(cond) < 1.5 and 0.8 <= ratio <= 1.25 and elapsed < 60,
          f"condition numbers {cond[0]:.3f}, {cond[1]:.3f}; radius ratio {ratio:.3f}; "
          f"isoscores {iso[0]:.3f}, {iso[1]:.3f}; {elapsed:.1f}s")


@pytest.mark.slow
def test_06_isotropy_trend():
    rows = pipelines.diagnostics_run(SynthConfig(num_words=50, samples_per_word=20),
                                     pipelines.recipe_train_config(dim=8))
    first, last = rows[0], rows[-1]
    check(6, "cluster isotropy improves during training",
          last["mean_isoscore"] > first["mean_isoscore"] and last["ratio_a"] < first["ratio_a"],
          f"isoscore {first['mean_isoscore']:.4f} -> {last['mean_isoscore']:.4f}; "
          f"ratio_a {first['ratio_a']:.4f} -> {last['ratio_a']:.4f}; "
          f"ratio_b {first['ratio_b']:.4f} -> {last['ratio_b']:.4f} (not asserted); {len(rows)} epochs")


@pytest.fixture(scope="module")
def classification():
    return pipelines.classification_experiment(SynthConfig(), pipelines.recipe_train_config(), (50, 200, 500))


@pytest.mark.slow
def test_07_text_means(classification):
    errors, radii = pipelines.text_mean_errors(classification.models, classification.corpus)
    bound = 0.1 * radii.mean()
    check(7, "text embeddings converge to audio cluster means",
          len(errors) >= 10 and errors.max() < bound,
          f"{len(errors)} clusters; max |g - mean f| = {errors.max():.4f} vs 0.1 x mean radius = {bound:.4f}")


@pytest.mark.slow
def test_08_classification(classification):
    acc = classification.accuracy
    sizes = sorted(acc)
    monotone = all(acc[a] >= acc[b] for a, b in zip(sizes, sizes[1:]))
    check(8, "nearest-neighbor word classification",
          acc[50] >= 0.90 and monotone,
          ", ".join(f"{n} entries: {acc[n]:.3f}" for n in sizes))


@pytest.mark.slow
def test_09_oov_recovery():
    rep = pipelines.oov_experiment(SynthConfig(samples_per_word=10),
                                   pipelines.recipe_train_config(bidirectional=True), 100, "decode")
    gap = abs(rep.embed - rep.edit)
    check(9, "OOV recovery by embedding vs edit distance",
          gap <= 0.05 and rep.embed > 0.5 and rep.edit > 0.5,
          f"embed {rep.embed:.2f}, edit {rep.edit:.2f}, gap {100 * gap:.0f} points over {rep.num_pairs} pairs "
          f"(recognizer output was the partner {rep.asr_partner:.2f} of the time)")


DIALECT_MATRIX = (
    ["dr1", "dr2", "dr3", "dr4", "dr5", "dr7"],
    [[0.61572],
     [0.58936, 0.13495],
     [0.65666, 0.33050, 0.26793],
     [0.60411, 0.37564, 0.34027, 0.18538],
     [0.63036, 0.14484, 0.10431, 0.30236, 0.36269]],
)


def _random_tree_metric(n, rng):
    edges = {(n, 0): rng.uniform(0.1, 1), (n, 1): rng.uniform(0.1, 1), (n, 2): rng.uniform(0.1, 1)}
    nxt = n + 1
    for leaf in range(3, n):
        (u, v), _ = list(edges.items())[rng.integers(len(edges))]
        del edges[(u, v)]
        edges.update({(u, nxt): rng.uniform(0.1, 1), (nxt, v): rng.uniform(0.1, 1), (nxt, leaf): rng.uniform(0.1, 1)})
        nxt += 1
    adj = {}
    for (u, v), w in edges.items():
        adj.setdefault(u, []).append((v, w))
        adj.setdefault(v, []).append((u, w))
    d = np.zeros((n, n))
    for s in range(n):
        dist, stack = {s: 0.0}, [s]
        while stack:
            x = stack.pop()
            for y, w in adj[x]:
                if y not in dist:
                    dist[y] = dist[x] + w
                    stack.append(y)
        d[s] = [dist[j] for j in range(n)]
    return d


def _quartets(d):
    import itertools

    out = []
    for i, j, k, l in itertools.combinations(range(d.shape[0]), 4):
        out.append(int(np.argmin([d[i, j] + d[k, l], d[i, k] + d[j, l], d[i, l] + d[j, k]])))
    return out


def test_10_tree_recovery():
    rng = np.random.default_rng(10)
    recovered = 0
    for _ in range(20):
        d = _random_tree_metric(6, rng)
        recovered += _quartets(fit_additive_tree(d).distances()) == _quartets(d)
    labels, rows = DIALECT_MATRIX
    tree = fit_additive_tree(from_lower_triangle(labels, rows), labels)
    outer = tree.longest_terminal()
    check(10, "additive-tree recovery",
          recovered == 20 and outer == "dr1",
          f"{recovered}/20 random 6-leaf topologies; reference dialect matrix tree {tree.newick()} "
          f"has longest terminal branch {outer}")


@pytest.mark.slow
def test_11_wakeword(classification):
    models = classification.models
    table = pipelines.word_embedding_table(models, classification.corpus.lexicon)
    words = list(table)
    lm = zipf_lm(words)
    sigma = models.sigma
    target = words[0]
    identity = abs(wakeword_confusion(target, table, lm, sigma, 1.0) - math.log(1.0 - lm.probs[target]))

    alpha = 0.9
    emb = {"t1": np.array([0.0]), "n1": np.array([0.2]), "t2": np.array([10.0]), "n2": np.array([10.2])}
    toy = UnigramLM({"t1": 0.01, "n1": 0.9, "t2": 0.01, "n2": 0.08})

    def hand(t):
        terms = [(alpha - 1) * ((emb[t] - emb[w]) @ (emb[t] - emb[w]) / 2.0 + math.log(2)) + alpha * math.log(toy.probs[w])
                 for w in emb if w != t]
        return math.log(sum(math.exp(x) for x in terms))

    s1, s2 = (wakeword_confusion(t, emb, toy, 0.5, alpha) for t in ("t1", "t2"))
    ordering = s1 > s2 and hand("t1") > hand("t2") and abs(s1 - hand("t1")) < 1e-12 and abs(s2 - hand("t2")) < 1e-12

    alphas = np.linspace(0.85, 0.95, 101)
    targets = words[:5]
    rows = wakeword_sweep(targets, table, lm, sigma, alphas)
    scores = np.array([s for _, _, s in rows]).reshape(len(targets), len(alphas))
    # log-sum-exp is 1-Lipschitz in the max norm, so a step in alpha moves the
    # score by at most the step times the largest alpha-derivative of a term
    slope = max(max(abs(((table[t] - table[w]) ** 2).sum() / (8 * sigma**2) + math.log(2) + lm.log_prob(w))
                    for w in words if w != t) for t in targets)
    jump = np.abs(np.diff(scores, axis=1)).max()
    continuous = np.all(np.isfinite(scores)) and jump <= slope * (alphas[1] - alphas[0]) + 1e-12
    check(11, "wake-word confusion sanity",
          identity < 1e-12 and ordering and continuous,
          f"alpha=1 identity error {identity:.1e}; frequent-neighbour target {s1:.3f} > rare {s2:.3f}; "
          f"sweep finite with max step {jump:.4f} <= bound {slope * (alphas[1] - alphas[0]):.4f}")
