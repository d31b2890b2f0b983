"""Deterministic synthetic posteriorgram corpora.

Each phone of a pronunciation emits a random number of frames; a frame
is ``softmax(prototype_p + jitter + dialect_shift)`` where the prototype
is ``one_hot(p) / temperature`` plus an optional fixed per-phone
confusion component.  Every utterance is generated from its own
substream keyed by (seed, utterance index), so generation order does not
affect the result.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass, field

import numpy as np

from .core import GraphemeSeq, Lexicon, PhoneSeq, SymbolInventory, UnigramLM, Utterance, substream
from .lexicon.lengths import LengthDistribution

CORPUS_MAGIC = b"ANECORP1"

ARPABET = [
    "aa", "ae", "ah", "ao", "aw", "ay", "b", "ch", "d", "dh", "eh", "er", "ey",
    "f", "g", "hh", "ih", "iy", "jh", "k", "l", "m", "n", "ng", "ow", "oy", "p",
    "r", "s", "sh", "t", "th", "uh", "uw", "v", "w", "y", "z", "zh",
]
LETTERS = list("abcdefghijklmnopqrstuvwxyz")
SPACE = "_"


@dataclass
class SynthConfig:
    num_phones: int = 12
    dur_min: int = 2
    dur_max: int = 4
    temperature: float = 0.25
    jitter: float = 1.0
    confusion: float = 0.0
    num_words: int = 50
    pron_len_min: int = 3
    pron_len_max: int = 6
    length_target: dict[int, float] | None = None
    samples_per_word: int = 20
    alt_pron_prob: float = 0.0
    num_dialects: int = 0
    dialect_scale: float = 0.0
    dialect_shifts: list[list[float]] | None = None
    seed: int = 0

    def __post_init__(self):
        if self.num_phones < 2:
            raise ValueError("need at least 2 phones")
        if self.dur_min < 1 or self.dur_max < self.dur_min:
            raise ValueError("need 1 <= dur_min <= dur_max")
        if not self.temperature > 0:
            raise ValueError("temperature must be > 0")
        if self.jitter < 0 or self.confusion < 0:
            raise ValueError("jitter and confusion must be >= 0")
        if self.samples_per_word < 2:
            raise ValueError("samples_per_word must be >= 2")
        if self.pron_len_min < 1 or self.pron_len_max < self.pron_len_min:
            raise ValueError("bad pronunciation length range")
        if self.dialect_shifts is not None:
            shifts = np.asarray(self.dialect_shifts, dtype=np.float64)
            if shifts.ndim != 2 or shifts.shape[1] != self.num_phones:
                raise ValueError("dialect shifts must be (num_dialects, num_phones)")
            self.num_dialects = shifts.shape[0]

    @property
    def frame_dim(self) -> int:
        return self.num_phones

    def lengths(self) -> LengthDistribution:
        if self.length_target is not None:
            return LengthDistribution.from_weights({int(k): float(v) for k, v in self.length_target.items()})
        return LengthDistribution.uniform(range(self.pron_len_min, self.pron_len_max + 1))


@dataclass
class Corpus:
    lexicon: Lexicon
    utterances: list[Utterance]
    phones: SymbolInventory
    graphemes: SymbolInventory
    dialect_shifts: np.ndarray | None = None
    words: list[str] = field(default_factory=list)

    def __iter__(self):
        yield self.lexicon
        yield self.utterances


def phone_inventory(num_phones: int, merge_stress: bool = False) -> SymbolInventory:
    names = ARPABET[:num_phones] + [f"p{k}" for k in range(max(0, num_phones - len(ARPABET)))]
    return SymbolInventory(names, merge_stress=merge_stress)


def grapheme_inventory() -> SymbolInventory:
    return SymbolInventory(LETTERS + [SPACE])


def spell(pron: PhoneSeq, phones: SymbolInventory) -> str:
    """Deterministic orthography: phone names with digits dropped, concatenated."""
    return "".join("".join(c for c in phones.name(i) if c.isalpha()) for i in pron)


def graphemes_of(word: str, graphemes: SymbolInventory) -> GraphemeSeq:
    return GraphemeSeq(tuple(graphemes.id(SPACE if c == " " else c) for c in word))


def _random_pron(rng: np.random.Generator, length: int, num_phones: int) -> PhoneSeq:
    return PhoneSeq(tuple(rng.integers(num_phones, size=length).tolist()))


def _word_for(pron: PhoneSeq, phones: SymbolInventory, taken: set[str]) -> str:
    base = spell(pron, phones)
    word, k = base, 1
    while word in taken:
        k += 1
        word = f"{base}{LETTERS[(k - 2) % 26] * ((k - 2) // 26 + 1)}"
    return word


def generate_lexicon(config: SynthConfig, phones: SymbolInventory | None = None) -> Lexicon:
    """Random vocabulary with lengths drawn from the target distribution."""
    phones = phones or phone_inventory(config.num_phones)
    rng = substream(config.seed, 0)
    dist = config.lengths()
    lengths = dist.sample(rng, config.num_words)
    seen: set[PhoneSeq] = set()
    lex = Lexicon()
    for h in lengths:
        for _ in range(1000):
            pron = _random_pron(rng, int(h), config.num_phones)
            if pron not in seen:
                break
        else:
            raise ValueError(f"cannot draw a new pronunciation of length {h}; inventory too small")
        seen.add(pron)
        word = _word_for(pron, phones, set(lex.entries))
        lex.add(word, pron)
        if config.alt_pron_prob > 0 and rng.random() < config.alt_pron_prob:
            alt = _substitute(rng, pron, config.num_phones)
            if alt not in seen:
                seen.add(alt)
                lex.add(word, alt)
    return lex


def _substitute(rng: np.random.Generator, pron: PhoneSeq, num_phones: int) -> PhoneSeq:
    ids = list(pron)
    k = int(rng.integers(len(ids)))
    ids[k] = int((ids[k] + 1 + rng.integers(num_phones - 1)) % num_phones)
    return PhoneSeq(tuple(ids))


def _one_edit(rng: np.random.Generator, pron: PhoneSeq, num_phones: int) -> PhoneSeq:
    ops = ["sub", "ins"] + (["del"] if len(pron) > 1 else [])
    op = ops[int(rng.integers(len(ops)))]
    ids = list(pron)
    if op == "sub":
        return _substitute(rng, pron, num_phones)
    if op == "ins":
        ids.insert(int(rng.integers(len(ids) + 1)), int(rng.integers(num_phones)))
    else:
        del ids[int(rng.integers(len(ids)))]
    return PhoneSeq(tuple(ids))


@dataclass
class PairVocabulary:
    lexicon: Lexicon
    pairs: list[tuple[str, str]]


def confusable_pair_vocabulary(config: SynthConfig, n_pairs: int,
                               phones: SymbolInventory | None = None) -> PairVocabulary:
    """``n_pairs`` word pairs whose pronunciations differ by exactly one edit."""
    phones = phones or phone_inventory(config.num_phones)
    rng = substream(config.seed, 2)
    dist = config.lengths()
    seen: set[PhoneSeq] = set()
    lex = Lexicon()
    pairs = []
    for _ in range(n_pairs):
        for _ in range(10000):
            a = _random_pron(rng, int(dist.sample(rng, 1)[0]), config.num_phones)
            b = _one_edit(rng, a, config.num_phones)
            if a not in seen and b not in seen and a != b:
                break
        else:
            raise ValueError("phone inventory too small for the requested pairs")
        seen.update((a, b))
        wa = _word_for(a, phones, set(lex.entries))
        lex.add(wa, a)
        wb = _word_for(b, phones, set(lex.entries))
        lex.add(wb, b)
        pairs.append((wa, wb))
    return PairVocabulary(lex, pairs)


def confusable_distractors(lexicon: Lexicon, count: int, config: SynthConfig,
                           phones: SymbolInventory | None = None) -> Lexicon:
    """``count`` new words, each one edit away from a random word of ``lexicon``.

    Pronunciations already in ``lexicon`` are never reused.  Taking the
    first k entries of the result gives nested distractor sets.
    """
    phones = phones or phone_inventory(config.num_phones)
    rng = substream(config.seed, 5)
    seen = {p for _, p in lexicon.pronunciations()}
    base = [p for _, p in lexicon.pronunciations()]
    if not base:
        raise ValueError("empty lexicon")
    out = Lexicon()
    taken = set(lexicon.entries)
    for _ in range(count):
        for _ in range(10000):
            cand = _one_edit(rng, base[int(rng.integers(len(base)))], config.num_phones)
            if cand not in seen:
                break
        else:
            raise ValueError("phone inventory too small for the requested distractors")
        seen.add(cand)
        word = _word_for(cand, phones, taken)
        taken.add(word)
        out.add(word, cand)
    return out


def _prototypes(config: SynthConfig) -> np.ndarray:
    protos = np.eye(config.num_phones) / config.temperature
    if config.confusion > 0:
        protos = protos + config.confusion * substream(config.seed, 3).standard_normal(protos.shape)
    return protos


def _dialect_shifts(config: SynthConfig) -> np.ndarray | None:
    if config.dialect_shifts is not None:
        return np.asarray(config.dialect_shifts, dtype=np.float64)
    if config.num_dialects <= 0:
        return None
    rng = substream(config.seed, 4)
    return config.dialect_scale * rng.standard_normal((config.num_dialects, config.num_phones))


def _softmax_rows(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def render_utterance(config: SynthConfig, pron: PhoneSeq, index: int,
                     protos: np.ndarray, shift: np.ndarray | None = None,
                     durations: np.ndarray | None = None) -> np.ndarray:
    rng = substream(config.seed, 1, index)
    if durations is None:
        durations = rng.integers(config.dur_min, config.dur_max + 1, size=len(pron))
    logits = np.repeat(protos[list(pron)], durations, axis=0)
    if config.jitter > 0:
        logits = logits + config.jitter * rng.standard_normal(logits.shape)
    if shift is not None:
        logits = logits + shift
    return _softmax_rows(logits)


def render_prons(config: SynthConfig, prons, first_index: int = 0) -> list[np.ndarray]:
    """One rendering of each pronunciation, with utterance indices from ``first_index``."""
    protos = _prototypes(config)
    return [render_utterance(config, p, first_index + k, protos) for k, p in enumerate(prons)]


def generate_corpus(config: SynthConfig, lexicon: Lexicon | None = None,
                    phones: SymbolInventory | None = None, first_index: int = 0) -> Corpus:
    """Lexicon plus ``samples_per_word`` utterances of every word.

    Words with several pronunciations cycle through them; with dialects,
    utterance k of a word belongs to dialect k mod num_dialects.  Fresh
    renderings of the same acoustics (held-out test audio) come from a
    different ``first_index``, which offsets the per-utterance streams.
    """
    phones = phones or phone_inventory(config.num_phones)
    if len(phones) != config.num_phones:
        raise ValueError("phone inventory size does not match config")
    graphemes = grapheme_inventory()
    lex = lexicon if lexicon is not None else generate_lexicon(config, phones)
    protos = _prototypes(config)
    shifts = _dialect_shifts(config)

    utts: list[Utterance] = []
    for word, prons in lex.entries.items():
        for pron in prons:
            if max(pron) >= config.num_phones:
                raise ValueError(f"pronunciation of {word!r} uses a phone outside the inventory")
        gseq = graphemes_of(word, graphemes)
        for k in range(config.samples_per_word):
            pron = prons[k % len(prons)]
            dialect = k % config.num_dialects if shifts is not None else -1
            frames = render_utterance(config, pron, first_index + len(utts), protos,
                                      None if shifts is None else shifts[dialect])
            utts.append(Utterance(frames, pron, gseq, word, dialect))
    return Corpus(lex, utts, phones, graphemes, shifts, list(lex.entries))


def zipf_lm(words, exponent: float = 1.0) -> UnigramLM:
    ranks = np.arange(1, len(words) + 1, dtype=np.float64)
    w = ranks**-exponent
    w /= w.sum()
    return UnigramLM({word: float(p) for word, p in zip(words, w)})


# ---------------------------------------------------------------------------
# corpus container
#
#   "ANECORP1"
#   u32 n_phones, then per phone: u32 byte length + UTF-8 name
#   u32 n_graphemes, same layout
#   u32 n_utterances, then per utterance:
#     u32 len + UTF-8 word, u32 n + u32 phone ids, u32 n + u32 grapheme ids,
#     i32 dialect, u32 T, u32 D_in, T*D_in little-endian f32


def _put_str(buf, s: str):
    b = s.encode("utf-8")
    buf.write(struct.pack("<I", len(b)))
    buf.write(b)


def _put_ids(buf, ids):
    buf.write(struct.pack("<I", len(ids)))
    buf.write(np.asarray(ids, dtype="<u4").tobytes())


def dump_corpus(corpus: Corpus) -> bytes:
    buf = io.BytesIO()
    buf.write(CORPUS_MAGIC)
    for inv in (corpus.phones, corpus.graphemes):
        buf.write(struct.pack("<I", len(inv)))
        for name in inv.names:
            _put_str(buf, name)
    buf.write(struct.pack("<I", len(corpus.utterances)))
    for u in corpus.utterances:
        _put_str(buf, u.word)
        _put_ids(buf, u.phones.ids)
        _put_ids(buf, u.graphemes.ids)
        buf.write(struct.pack("<iII", u.dialect, u.num_frames, u.dim))
        buf.write(np.ascontiguousarray(u.frames, dtype="<f4").tobytes())
    return buf.getvalue()


class _Reader:
    def __init__(self, data: bytes):
        self.data, self.pos = data, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise ValueError("truncated corpus file")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def string(self) -> str:
        (n,) = self.unpack("<I")
        return self.take(n).decode("utf-8")

    def ids(self) -> tuple[int, ...]:
        (n,) = self.unpack("<I")
        return tuple(np.frombuffer(self.take(4 * n), dtype="<u4").tolist())


def parse_corpus(data: bytes) -> Corpus:
    r = _Reader(data)
    if r.take(len(CORPUS_MAGIC)) != CORPUS_MAGIC:
        raise ValueError("not a corpus file (bad magic)")
    invs = []
    for _ in range(2):
        (n,) = r.unpack("<I")
        invs.append(SymbolInventory([r.string() for _ in range(n)]))
    phones, graphemes = invs
    (count,) = r.unpack("<I")
    lex = Lexicon()
    utts = []
    for _ in range(count):
        word = r.string()
        pron = PhoneSeq(r.ids()).check(phones)
        gseq = GraphemeSeq(r.ids()).check(graphemes)
        dialect, t, d = r.unpack("<iII")
        frames = np.frombuffer(r.take(4 * t * d), dtype="<f4").reshape(t, d).astype(np.float64)
        utts.append(Utterance(frames, pron, gseq, word, dialect))
        lex.add(word, pron)
    if r.pos != len(data):
        raise ValueError("trailing bytes in corpus file")
    return Corpus(lex, utts, phones, graphemes, None, list(lex.entries))


def save_corpus(path, corpus: Corpus):
    with open(path, "wb") as fh:
        fh.write(dump_corpus(corpus))


def load_corpus(path) -> Corpus:
    with open(path, "rb") as fh:
        return parse_corpus(fh.read())
