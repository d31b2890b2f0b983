"""Microbatch construction and the two training objectives.

The audio encoder is trained with the pivot-only SNE loss: in a
microbatch of size M the pivot (row 0) has target neighbour
probabilities ``p_0j = 1/n_0`` over the members sharing its label and 0
elsewhere, and the KL divergence to the induced probabilities
``q_0j = softmax_j(-|f_0 - f_j|^2)`` is minimised.  Text encoders are
then fitted to the frozen audio embeddings by mean squared error.
"""

from __future__ import annotations

import logging
import math
import warnings
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Callable, Hashable, Iterator, Sequence

import numpy as np

from .core import Utterance, seeded_rng, substream
from .encoder import EncoderParams, backward, encode_batch, init_params, one_hot
from .lexicon.lengths import LengthDistribution

log = logging.getLogger(__name__)


class DegenerateCorpusError(ValueError):
    """No label occurs twice, so no microbatch can have a pivot."""


@dataclass(frozen=True)
class Microbatch:
    pivot: int
    members: tuple[int, ...]
    p: np.ndarray

    @property
    def indices(self) -> tuple[int, ...]:
        return (self.pivot, *self.members)


@dataclass
class TrainConfig:
    microbatch_size: int = 16
    microbatches_per_minibatch: int = 8
    learning_rate: float = 0.001
    optimizer: str = "sgd"
    max_epochs: int = 20
    patience: int = 5
    seed: int = 0
    hidden: int = 32
    dim: int = 8
    steps_per_epoch: int | None = None
    label_kind: str = "phone"
    cv_fraction: float = 0.1
    cv_microbatches: int = 64
    length_balanced: bool = False
    clip_norm: float | None = None
    track_diagnostics: bool = False
    bidirectional: bool = False

    def __post_init__(self):
        if self.microbatch_size < 2:
            raise ValueError("microbatch size M must be >= 2")
        if not self.learning_rate > 0:
            raise ValueError("learning rate must be > 0")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.label_kind not in ("phone", "grapheme"):
            raise ValueError(f"unknown label kind {self.label_kind!r}")
        if self.microbatches_per_minibatch < 1 or self.max_epochs < 0:
            raise ValueError("microbatches per minibatch must be >= 1 and epochs >= 0")


# ---------------------------------------------------------------------------
# microbatches


def utterance_labels(corpus: Sequence[Utterance], kind: str = "phone") -> list[Hashable]:
    if kind == "phone":
        return [u.phones for u in corpus]
    if kind == "grapheme":
        return [u.graphemes for u in corpus]
    raise ValueError(f"unknown label kind {kind!r}")


def microbatch_from_members(labels: Sequence[Hashable], pivot: int, members: Sequence[int]) -> Microbatch:
    """Target probabilities for an explicit pivot and member list."""
    same = np.array([labels[j] == labels[pivot] for j in members], dtype=bool)
    n_same = int(same.sum())
    if n_same == 0:
        raise ValueError("microbatch has no member sharing the pivot's label")
    p = np.where(same, 1.0 / n_same, 0.0)
    return Microbatch(int(pivot), tuple(int(j) for j in members), p)


class MicrobatchBuilder:
    """Draws random microbatches from a fixed labelled pool."""

    def __init__(self, labels: Sequence[Hashable], pool: Sequence[int] | None = None):
        self.labels = list(labels)
        self.pool = np.arange(len(self.labels)) if pool is None else np.asarray(pool, dtype=np.int64)
        groups: dict[Hashable, list[int]] = defaultdict(list)
        for i in self.pool:
            groups[self.labels[i]].append(int(i))
        self.groups = {k: np.array(v) for k, v in groups.items()}
        self.eligible = np.array(sorted(i for g in self.groups.values() if len(g) >= 2 for i in g), dtype=np.int64)

    @property
    def num_labels(self) -> int:
        return len(self.groups)

    def draw(self, rng: np.random.Generator, size: int, pivot: int | None = None) -> Microbatch:
        if self.eligible.size == 0:
            raise DegenerateCorpusError("no label has two or more utterances")
        if size < 2:
            raise ValueError("microbatch size must be >= 2")
        if size > self.pool.size:
            raise ValueError(f"microbatch size {size} exceeds pool size {self.pool.size}")
        if pivot is None:
            pivot = int(self.eligible[rng.integers(self.eligible.size)])
        group = self.groups[self.labels[pivot]]
        if group.size < 2:
            raise ValueError(f"utterance {pivot} cannot be a pivot")
        others = group[group != pivot]
        same = int(others[rng.integers(others.size)])
        rest = self.pool[(self.pool != pivot) & (self.pool != same)]
        fill = rng.choice(rest, size=size - 2, replace=False) if size > 2 else np.zeros(0, dtype=np.int64)
        members = [same, *fill.tolist()]
        rng.shuffle(members)
        return microbatch_from_members(self.labels, pivot, members)


def build_microbatch(corpus: Sequence[Utterance] | Sequence[Hashable], rng: np.random.Generator,
                     size: int, kind: str = "phone") -> Microbatch:
    """One random microbatch of ``size`` utterances (pivot + size-1 members).

    ``corpus`` is a list of utterances, labelled by ``kind``, or a list of
    labels directly.
    """
    labels = list(corpus)
    if labels and isinstance(labels[0], Utterance):
        labels = utterance_labels(labels, kind)
    return MicrobatchBuilder(labels).draw(rng, size)


# ---------------------------------------------------------------------------
# loss


def induced_q(embeddings, i: int) -> np.ndarray:
    """Softmax of -|f_i - f_j|^2 over j != i, in index order."""
    f = np.asarray(embeddings, dtype=np.float64)
    if f.shape[0] < 2:
        raise ValueError("need at least two embeddings")
    d2 = ((f - f[i]) ** 2).sum(axis=1)
    d2 = np.delete(d2, i)
    logits = -d2 - (-d2).max()
    e = np.exp(logits)
    return e / e.sum()


def microbatch_loss(p, q) -> float:
    """KL(p || q) with 0 log 0 = 0."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise ValueError("p and q must have the same length")
    support = p > 0
    if np.any(q[support] <= 0):
        raise ArithmeticError("q is zero where p is positive")
    return float((p[support] * np.log(p[support] / q[support])).sum())


def _pivot_loss_and_grad(p: np.ndarray, f: np.ndarray, pivot: int) -> tuple[float, np.ndarray]:
    others = np.delete(np.arange(f.shape[0]), pivot)
    diff = f[pivot] - f[others]
    d2 = (diff * diff).sum(axis=1)
    shift = d2.min()
    e = np.exp(-(d2 - shift))
    z = e.sum()
    q = e / z
    support = p > 0
    # -sum p log q, written in log space so tiny q cannot underflow to log 0
    loss = float((p[support] * (np.log(p[support]) + d2[support] - shift + np.log(z))).sum())
    coef = 2.0 * (p - q)
    grad = np.zeros_like(f)
    grad[pivot] = coef @ diff
    grad[others] = -coef[:, None] * diff
    return loss, grad


def loss_gradient_wrt_embeddings(p, embeddings, pivot: int = 0) -> np.ndarray:
    """dL/df for every embedding of a microbatch, pivot pairs only.

    ``p`` is ordered like the non-pivot rows of ``embeddings``.
    """
    f = np.asarray(embeddings, dtype=np.float64)
    return _pivot_loss_and_grad(np.asarray(p, dtype=np.float64), f, pivot)[1]


def pivot_loss(p, embeddings, pivot: int = 0) -> float:
    f = np.asarray(embeddings, dtype=np.float64)
    return _pivot_loss_and_grad(np.asarray(p, dtype=np.float64), f, pivot)[0]


# ---------------------------------------------------------------------------
# optimizers


class SGD:
    def __init__(self, lr: float):
        self.lr = lr

    def step(self, params: EncoderParams, grads: EncoderParams) -> EncoderParams:
        return params.replace([w - self.lr * g for w, g in zip(params.as_tuple(), grads.as_tuple())])


class Adam:
    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m: list[np.ndarray] | None = None
        self.v: list[np.ndarray] | None = None

    def step(self, params: EncoderParams, grads: EncoderParams) -> EncoderParams:
        gs = grads.as_tuple()
        if self.m is None:
            self.m = [np.zeros_like(g) for g in gs]
            self.v = [np.zeros_like(g) for g in gs]
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        out = []
        for k, (w, g) in enumerate(zip(params.as_tuple(), gs)):
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g
            out.append(w - self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps))
        return params.replace(out)


def make_optimizer(kind: str, lr: float):
    return Adam(lr) if kind == "adam" else SGD(lr)


def _clip(grads: EncoderParams, max_norm: float | None) -> EncoderParams:
    if max_norm is None:
        return grads
    total = math.sqrt(sum(float((g * g).sum()) for g in grads.as_tuple()))
    if total > max_norm:
        return grads.scale(max_norm / total)
    return grads


# ---------------------------------------------------------------------------
# length-balanced sampling


class LengthBalancedSampler:
    """Greedy sampler steering the used-length histogram toward a target.

    Every draw takes the bin with the largest deficit (target share minus
    share used so far) and returns a random utterance of that length.
    """

    def __init__(self, lengths: Sequence[int], target: LengthDistribution, rng: np.random.Generator,
                 candidates: Sequence[int] | None = None):
        self.rng = rng
        idx = np.arange(len(lengths)) if candidates is None else np.asarray(candidates)
        by_len: dict[int, list[int]] = defaultdict(list)
        for i in idx:
            by_len[int(lengths[i])].append(int(i))
        self.bins: list[int] = []
        self.members: list[np.ndarray] = []
        weights = []
        for h, p in target.probs.items():
            if h not in by_len:
                if p > 0:
                    warnings.warn(f"target length {h} absent from corpus; bin skipped", stacklevel=2)
                continue
            self.bins.append(h)
            self.members.append(np.array(by_len[h]))
            weights.append(p)
        if not self.bins or sum(weights) <= 0:
            raise ValueError("no target length present in corpus")
        self.target = np.array(weights) / sum(weights)
        self.counts = np.zeros(len(self.bins))

    def draw(self) -> int:
        used = self.counts.sum()
        share = self.counts / used if used else self.counts
        k = int(np.argmax(self.target - share))
        self.counts[k] += 1
        pool = self.members[k]
        return int(pool[self.rng.integers(pool.size)])

    def histogram(self) -> dict[int, float]:
        total = self.counts.sum()
        return {h: c / total for h, c in zip(self.bins, self.counts)} if total else {}


def length_balanced_sampler(corpus: Sequence[Utterance], target: LengthDistribution,
                            rng: np.random.Generator) -> Iterator[int]:
    sampler = LengthBalancedSampler([len(u.phones) for u in corpus], target, rng)
    while True:
        yield sampler.draw()


# ---------------------------------------------------------------------------
# audio encoder training


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    cv_loss: float
    diagnostics: dict | None = None


@dataclass
class TrainResult:
    params: EncoderParams
    history: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0

    def log_lines(self) -> list[str]:
        return [f"{r.epoch}\t{r.train_loss:.6f}\t{r.cv_loss:.6f}" for r in self.history]

    def write_log(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            for line in self.log_lines():
                fh.write(line + "\n")


def stratified_split(labels: Sequence[Hashable], fraction: float, rng: np.random.Generator) -> tuple[list[int], list[int]]:
    """Hold out round(fraction * n) utterances of every label, keeping >= 2 for training."""
    groups: dict[Hashable, list[int]] = defaultdict(list)
    for i, lab in enumerate(labels):
        groups[lab].append(i)
    train, cv = [], []
    for members in groups.values():
        members = list(members)
        rng.shuffle(members)
        n_cv = int(math.floor(fraction * len(members) + 0.5))
        n_cv = min(n_cv, max(len(members) - 2, 0))
        cv.extend(members[:n_cv])
        train.extend(members[n_cv:])
    return sorted(train), sorted(cv)


def _minibatch_loss_grad(params: EncoderParams, frames: Sequence[np.ndarray],
                         batches: Sequence[Microbatch]) -> tuple[float, EncoderParams, int]:
    seqs, offsets = [], []
    for mb in batches:
        offsets.append(len(seqs))
        seqs.extend(frames[i] for i in mb.indices)
    f, tape = encode_batch(params, seqs)
    g_f = np.zeros_like(f)
    total = 0.0
    for mb, off in zip(batches, offsets):
        rows = slice(off, off + len(mb.indices))
        loss, g = _pivot_loss_and_grad(mb.p, f[rows], 0)
        total += loss
        g_f[rows] = g
    n = len(batches)
    return total / n, backward(params, tape, g_f / n), n


def _mean_loss(params: EncoderParams, frames, batches: Sequence[Microbatch], chunk: int = 16) -> float:
    if not batches:
        return float("nan")
    total = 0.0
    for k in range(0, len(batches), chunk):
        part = batches[k : k + chunk]
        seqs, offsets = [], []
        for mb in part:
            offsets.append(len(seqs))
            seqs.extend(frames[i] for i in mb.indices)
        f, _ = encode_batch(params, seqs)
        for mb, off in zip(part, offsets):
            total += pivot_loss(mb.p, f[off : off + len(mb.indices)], 0)
    return total / len(batches)


def train_audio_encoder(
    corpus: Sequence[Utterance],
    config: TrainConfig,
    length_target: LengthDistribution | None = None,
    on_epoch: Callable[[int, EncoderParams], dict | None] | None = None,
    init: EncoderParams | None = None,
) -> TrainResult:
    """Minibatch training of the audio encoder on the pivot-only SNE loss.

    Returns the parameters with the best cross-validation loss (or the last
    ones when no CV microbatch can be formed) and the per-epoch history.
    ``on_epoch`` may return a dict stored with that epoch's record.
    """
    if not corpus:
        raise ValueError("empty corpus")
    labels = utterance_labels(corpus, config.label_kind)
    frames = [u.frames for u in corpus]
    split_rng, cv_rng, init_rng, train_rng = (substream(config.seed, k) for k in range(4))

    train_idx, cv_idx = stratified_split(labels, config.cv_fraction, split_rng)
    builder = MicrobatchBuilder(labels, train_idx)
    if builder.eligible.size == 0:
        raise DegenerateCorpusError("no label has two or more training utterances")
    if builder.num_labels == 1:
        warnings.warn("corpus has a single label: microbatches contain no negative samples", stacklevel=2)
    size = min(config.microbatch_size, len(train_idx))

    cv_batches: list[Microbatch] = []
    if cv_idx:
        cv_builder = MicrobatchBuilder(labels, cv_idx)
        if cv_builder.eligible.size:
            cv_size = min(config.microbatch_size, len(cv_idx))
            cv_batches = [cv_builder.draw(cv_rng, cv_size) for _ in range(config.cv_microbatches)]

    sampler = None
    if config.length_balanced:
        target = length_target or LengthDistribution.from_weights(
            {h: 1.0 for h in {len(u.phones) for u in corpus}})
        sampler = LengthBalancedSampler([len(u.phones) for u in corpus], target, train_rng,
                                        candidates=builder.eligible)

    params = init or init_params(corpus[0].dim, config.hidden, config.dim, init_rng, config.bidirectional)
    if params.input_dim != corpus[0].dim:
        raise ValueError("initial parameters do not match frame dimension")
    opt = make_optimizer(config.optimizer, config.learning_rate)
    per_step = config.microbatches_per_minibatch
    steps = config.steps_per_epoch or max(1, math.ceil(len(train_idx) / (size * per_step)))

    result = TrainResult(params=params)
    best_cv, best_params, since_best = math.inf, params, 0
    for epoch in range(1, config.max_epochs + 1):
        losses = []
        for _ in range(steps):
            batches = []
            for _ in range(per_step):
                pivot = sampler.draw() if sampler is not None else None
                batches.append(builder.draw(train_rng, size, pivot=pivot))
            loss, grads, _ = _minibatch_loss_grad(params, frames, batches)
            losses.append(loss)
            params = opt.step(params, _clip(grads, config.clip_norm))
        cv_loss = _mean_loss(params, frames, cv_batches)
        extra = on_epoch(epoch, params) if on_epoch is not None else None
        result.history.append(EpochRecord(epoch, float(np.mean(losses)), cv_loss, extra))
        log.info("epoch %d train %.5f cv %.5f", epoch, np.mean(losses), cv_loss)

        if math.isnan(cv_loss):
            best_params, result.best_epoch = params, epoch
            continue
        if cv_loss < best_cv:
            best_cv, best_params, since_best = cv_loss, params, 0
            result.best_epoch = epoch
        else:
            since_best += 1
            if since_best >= config.patience:
                break
    result.params = best_params
    return result


# ---------------------------------------------------------------------------
# text encoder training


@dataclass
class TextTrainConfig:
    learning_rate: float = 0.01
    optimizer: str = "adam"
    epochs: int = 40
    steps_per_epoch: int = 50
    seed: int = 0
    hidden: int = 32
    clip_norm: float | None = None
    bidirectional: bool = False


@dataclass
class TextTrainResult:
    params: EncoderParams
    history: list[float] = field(default_factory=list)
    labels: list = field(default_factory=list)
    targets: np.ndarray | None = None


def train_text_encoder(
    corpus: Sequence[Utterance],
    audio_params: EncoderParams,
    which: str,
    vocab_size: int,
    config: TextTrainConfig | None = None,
    init: EncoderParams | None = None,
) -> TextTrainResult:
    """Fit g(label) to the frozen audio embeddings by mean squared error.

    The audio embeddings are computed once.  Since
    sum_n |g(B_n) - f_n|^2 = sum_B n_B |g(B) - mean_B|^2 + const,
    each distinct label is fitted to its embedding mean with weight n_B.
    The recorded history is the per-utterance mean squared error.
    """
    from .encoder import embed_utterances

    config = config or TextTrainConfig()
    labels = utterance_labels(corpus, which)
    f = embed_utterances(audio_params, corpus)

    order: dict[Hashable, int] = {}
    for lab in labels:
        order.setdefault(lab, len(order))
    uniq = list(order)
    counts = np.zeros(len(uniq))
    sums = np.zeros((len(uniq), f.shape[1]))
    for lab, vec in zip(labels, f):
        k = order[lab]
        counts[k] += 1
        sums[k] += vec
    means = sums / counts[:, None]
    # constant part of the per-utterance MSE: within-label scatter
    scatter = float(((f - means[[order[lab] for lab in labels]]) ** 2).sum()) / len(labels)
    weights = counts / counts.sum()

    rng = substream(config.seed, 7)
    params = init or init_params(vocab_size, config.hidden, audio_params.dim, rng, config.bidirectional)
    inputs = [one_hot(lab, params.input_dim) for lab in uniq]
    opt = make_optimizer(config.optimizer, config.learning_rate)
    result = TextTrainResult(params=params, labels=uniq, targets=means)
    for _ in range(config.epochs):
        for _ in range(config.steps_per_epoch):
            g, tape = encode_batch(params, inputs)
            resid = g - means
            grads = backward(params, tape, 2.0 * weights[:, None] * resid)
            params = opt.step(params, _clip(grads, config.clip_norm))
        g, _ = encode_batch(params, inputs)
        result.history.append(float((weights * ((g - means) ** 2).sum(axis=1)).sum()) + scatter)
    result.params = params
    return result
