"""End-to-end experiments on synthetic corpora.

Each runner trains what it needs from a seed and returns plain numbers;
the CLI writes them out and the acceptance tests assert on them.
"""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import Lexicon, PhoneSeq, Utterance, substream
from .decoder import decode
from .diagnostics import cluster_stats, group_by_label, summarize
from .encoder import EncoderParams, embed_sequences, embed_utterances
from .lexicon.dialect import dialect_dissimilarity
from .lexicon.editdist import CostMatrix, min_edit_distance, substitution_costs
from .lexicon.tree import AdditiveTree, fit_additive_tree
from .search import EmbeddingIndex, classify_batch, evaluate_classification
from .synthdata import (
    Corpus,
    SynthConfig,
    confusable_distractors,
    confusable_pair_vocabulary,
    generate_corpus,
    render_prons,
)
from .trainer import TextTrainConfig, TrainConfig, train_audio_encoder, train_text_encoder

log = logging.getLogger(__name__)

# utterance-index offset for held-out renderings, far past any training corpus
HELD_OUT = 10_000_000


def recipe_train_config(**overrides) -> TrainConfig:
    """Settings used by the experiment runners (Adam, clipped, fixed step count)."""
    base = dict(optimizer="adam", learning_rate=0.002, clip_norm=5.0, max_epochs=150,
                steps_per_epoch=10, patience=1000, hidden=32, dim=8)
    base.update(overrides)
    return TrainConfig(**base)


@dataclass
class Models:
    audio: EncoderParams
    phone: EncoderParams
    sigma: float
    history: list = field(default_factory=list)


def estimate_sigma(params: EncoderParams, utterances: Sequence[Utterance]) -> float:
    f = embed_utterances(params, utterances)
    return cluster_stats(group_by_label(f, [u.phones for u in utterances]))[1]


def train_models(corpus: Corpus, train: TrainConfig, text: TextTrainConfig | None = None,
                 on_epoch=None) -> Models:
    text = text or TextTrainConfig(seed=train.seed, hidden=train.hidden,
                                   bidirectional=train.bidirectional)
    res = train_audio_encoder(corpus.utterances, train, on_epoch=on_epoch)
    phone = train_text_encoder(corpus.utterances, res.params, "phone", len(corpus.phones), text)
    return Models(res.params, phone.params, estimate_sigma(res.params, corpus.utterances), res.history)


def phone_embeddings(models: Models, num_phones: int) -> np.ndarray:
    """Phone-encoder output for every phone as a length-1 sequence."""
    return embed_sequences(models.phone, [PhoneSeq((k,)) for k in range(num_phones)])


# ---------------------------------------------------------------------------
# word classification


@dataclass
class ClassificationReport:
    accuracy: dict[int, float]
    models: Models
    corpus: Corpus


def classification_experiment(synth: SynthConfig, train: TrainConfig,
                              sizes: Sequence[int] = (50, 200, 500),
                              test_per_word: int = 4) -> ClassificationReport:
    """Nearest-neighbor accuracy on held-out audio as the index grows.

    The index holds the corpus pronunciations plus a growing, nested set
    of one-edit distractors.
    """
    corpus = generate_corpus(synth)
    models = train_models(corpus, train)
    base = corpus.lexicon.pronunciations()
    sizes = sorted(sizes)
    if sizes[0] < len(base):
        raise ValueError(f"smallest index size {sizes[0]} is below the vocabulary size {len(base)}")
    distract = confusable_distractors(corpus.lexicon, sizes[-1] - len(base), synth).pronunciations()

    words = [w for w in corpus.lexicon for _ in range(test_per_word)]
    prons = [corpus.lexicon[w][k % len(corpus.lexicon[w])] for w in corpus.lexicon for k in range(test_per_word)]
    frames = render_prons(synth, prons, HELD_OUT)
    test = [(Utterance(x, p, corpus.utterances[0].graphemes, w), w) for x, p, w in zip(frames, prons, words)]

    entries = base + distract
    g = embed_sequences(models.phone, [p for _, p in entries])
    accuracy = {}
    for n in sizes:
        index = EmbeddingIndex.build([p for _, p in entries[:n]], g[:n])
        accuracy[n] = evaluate_classification(test, models.audio, index, "pronunciation", corpus.lexicon)
        log.info("index size %d accuracy %.4f", n, accuracy[n])
    return ClassificationReport(accuracy, models, corpus)


def text_mean_errors(models: Models, corpus: Corpus) -> tuple[np.ndarray, np.ndarray]:
    """Per cluster: |g(label) - mean f| and the RMS radius of the cluster's f."""
    f = embed_utterances(models.audio, corpus.utterances)
    groups = group_by_label(f, [u.phones for u in corpus.utterances])
    labels = list(groups)
    g = embed_sequences(models.phone, labels)
    errors, radii = [], []
    for lab, gv in zip(labels, g):
        pts = groups[lab]
        mean = pts.mean(axis=0)
        errors.append(np.linalg.norm(gv - mean))
        radii.append(np.sqrt(((pts - mean) ** 2).sum(axis=1).mean()))
    return np.array(errors), np.array(radii)


# ---------------------------------------------------------------------------
# OOV recovery


@dataclass
class OOVReport:
    embed: float
    edit: float
    asr_partner: float
    num_pairs: int
    sigma: float


def oov_experiment(synth: SynthConfig, train: TrainConfig, n_pairs: int = 100,
                   asr: str = "decode") -> OOVReport:
    """Recover OOV words from recognizer output that can never be correct.

    Both words of every one-edit pair are in the embedder's training
    corpus.  The first word of each pair is out of vocabulary: its held-out
    audio is decoded against a vocabulary holding only the partners
    (``asr="decode"``), or the partner is taken as the output directly
    (``asr="partner"``).  The output is mapped back to the closest OOV
    pronunciation by phone-embedding distance or by edit distance with
    embedding-derived substitution costs.
    """
    pv = confusable_pair_vocabulary(synth, n_pairs)
    corpus = generate_corpus(synth, lexicon=pv.lexicon)
    models = train_models(corpus, train)
    oov = [pv.lexicon[a][0] for a, _ in pv.pairs]
    partners = [pv.lexicon[b][0] for _, b in pv.pairs]

    if asr == "decode":
        frames = render_prons(synth, oov, HELD_OUT)
        outputs = [partners[decode(x, partners)] for x in frames]
    elif asr == "partner":
        outputs = list(partners)
    else:
        raise ValueError(f"unknown recognizer mode {asr!r}")

    costs = substitution_costs(phone_embeddings(models, synth.num_phones), models.sigma)
    truth = np.arange(len(oov))
    by_edit = np.array([_closest_by_edit(o, oov, costs) for o in outputs])
    index = EmbeddingIndex.build(list(range(len(oov))), embed_sequences(models.phone, oov))
    by_embed = np.array(classify_batch(embed_sequences(models.phone, outputs), index))
    return OOVReport(
        embed=float(np.mean(by_embed == truth)),
        edit=float(np.mean(by_edit == truth)),
        asr_partner=float(np.mean([o == p for o, p in zip(outputs, partners)])),
        num_pairs=len(oov),
        sigma=models.sigma,
    )


def _closest_by_edit(output, candidates, costs: CostMatrix) -> int:
    return int(np.argmin([min_edit_distance(output, c, costs) for c in candidates]))


# ---------------------------------------------------------------------------
# isotropy during training


def diagnostics_run(synth: SynthConfig, train: TrainConfig) -> list[dict]:
    """One diagnostics row per epoch, computed on the training corpus."""
    corpus = generate_corpus(synth)
    labels = [u.phones for u in corpus.utterances]
    rows: list[dict] = []

    def on_epoch(epoch: int, params: EncoderParams):
        row = {"epoch": epoch, **summarize(embed_utterances(params, corpus.utterances), labels)}
        rows.append(row)
        return row

    train_audio_encoder(corpus.utterances, dataclasses.replace(train, cv_fraction=0.0), on_epoch=on_epoch)
    return rows


# ---------------------------------------------------------------------------
# dialect clustering


@dataclass
class DialectReport:
    names: list[str]
    dissimilarity: np.ndarray
    tree: AdditiveTree
    sigma: float


def dialect_experiment(synth: SynthConfig, train: TrainConfig, names: Sequence[str] | None = None) -> DialectReport:
    """Dialect tree from per-dialect word centroids of audio embeddings."""
    if synth.num_dialects < 3:
        raise ValueError("dialect clustering needs at least 3 dialects")
    corpus = generate_corpus(synth)
    models = train_models(corpus, train)
    f = embed_utterances(models.audio, corpus.utterances)
    names = list(names) if names is not None else [f"d{k}" for k in range(synth.num_dialects)]
    cents: dict[str, dict[str, np.ndarray]] = {n: {} for n in names}
    for word in corpus.lexicon:
        rows = [i for i, u in enumerate(corpus.utterances) if u.word == word]
        for k, n in enumerate(names):
            mine = [i for i in rows if corpus.utterances[i].dialect == k]
            if not mine:
                raise ValueError(f"word {word!r} has no utterance in dialect {n}")
            cents[n][word] = f[mine].mean(axis=0)
    names, dis = dialect_dissimilarity(cents, models.sigma, names)
    return DialectReport(names, dis, fit_additive_tree(dis, names), models.sigma)


def hierarchical_shifts(num_phones: int, scale: float, seed: int) -> np.ndarray:
    """Four dialect shift vectors forming two groups of two."""
    rng = substream(seed, 6)
    a, b = rng.standard_normal((2, num_phones)) * scale
    fine = rng.standard_normal((4, num_phones)) * (0.3 * scale)
    return np.stack([a + fine[0], a + fine[1], b + fine[2], b + fine[3]])


def word_embedding_table(models: Models, lexicon: Lexicon) -> dict[str, np.ndarray]:
    """Phone-encoder embedding of each word's first pronunciation."""
    words = list(lexicon)
    g = embed_sequences(models.phone, [lexicon[w][0] for w in words])
    return dict(zip(words, g))
