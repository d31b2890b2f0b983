"""Exact nearest-neighbor search between audio and text embeddings."""

from __future__ import annotations

import io
import struct
from typing import Callable, Hashable, Sequence

import numpy as np

from .core import Lexicon, Utterance, as_embedding

INDEX_MAGIC = b"ANEIDX1"


class EmbeddingIndex:
    """Labels with one text embedding each, searched exhaustively.

    Ties between equally distant entries go to the one inserted first.
    """

    def __init__(self, dim: int):
        if dim < 1:
            raise ValueError("dimension must be >= 1")
        self.dim = dim
        self.labels: list[Hashable] = []
        self._rows: list[np.ndarray] = []
        self._matrix: np.ndarray | None = None

    @classmethod
    def build(cls, labels: Sequence[Hashable], vectors) -> "EmbeddingIndex":
        vecs = np.asarray(vectors, dtype=np.float64)
        if vecs.ndim != 2 or vecs.shape[0] != len(labels):
            raise ValueError("need one (d,) vector per label")
        idx = cls(vecs.shape[1])
        for lab, v in zip(labels, vecs):
            idx.add(lab, v)
        return idx

    def add(self, label: Hashable, vector):
        v = as_embedding(vector)
        if v.shape != (self.dim,):
            raise ValueError(f"vector of dimension {v.size} added to a {self.dim}-d index")
        self.labels.append(label)
        self._rows.append(v)
        self._matrix = None

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def vectors(self) -> np.ndarray:
        if self._matrix is None:
            self._matrix = np.array(self._rows).reshape(len(self._rows), self.dim)
        return self._matrix

    def distances(self, f) -> np.ndarray:
        f = as_embedding(f)
        if f.shape != (self.dim,):
            raise ValueError(f"query of dimension {f.size} against a {self.dim}-d index")
        diff = self.vectors - f
        return np.einsum("ij,ij->i", diff, diff)

    def nearest(self, f) -> Hashable:
        return classify(f, self)[0]


def classify(f, index: EmbeddingIndex) -> tuple[Hashable, float]:
    """(label, squared distance) of the closest entry."""
    if len(index) == 0:
        raise ValueError("empty index")
    d2 = index.distances(f)
    j = int(np.argmin(d2))  # first occurrence of the minimum
    return index.labels[j], float(d2[j])


def top_k(f, index: EmbeddingIndex, k: int) -> list[tuple[Hashable, float]]:
    if not 1 <= k <= len(index):
        raise ValueError(f"k must be in [1, {len(index)}], got {k}")
    d2 = index.distances(f)
    order = np.argsort(d2, kind="stable")[:k]
    return [(index.labels[j], float(d2[j])) for j in order]


def classify_batch(embeddings, index: EmbeddingIndex, chunk: int = 1024) -> list[Hashable]:
    """Labels of the nearest entries for each row of ``embeddings``."""
    if len(index) == 0:
        raise ValueError("empty index")
    f = np.atleast_2d(np.asarray(embeddings, dtype=np.float64))
    g = index.vectors
    g2 = np.einsum("ij,ij->i", g, g)
    out = []
    for s in range(0, f.shape[0], chunk):
        part = f[s : s + chunk]
        # |f|^2 is constant per row and does not affect the argmin
        out.extend(index.labels[j] for j in np.argmin(g2[None, :] - 2.0 * part @ g.T, axis=1))
    return out


def evaluate_classification(
    test_set: Sequence[tuple[Utterance, str]],
    audio_params,
    index: EmbeddingIndex,
    mode: str = "pronunciation",
    lexicon: Lexicon | None = None,
) -> float:
    """Fraction of test utterances whose nearest index entry is correct.

    In ``"pronunciation"`` mode the index labels are pronunciations and a
    hit is any pronunciation of the truth word in ``lexicon``.  In
    ``"orthography"`` mode the labels are word strings compared exactly.
    """
    from .encoder import embed_utterances

    if not test_set:
        raise ValueError("empty test set")
    if mode == "pronunciation":
        if lexicon is None:
            raise ValueError("pronunciation matching needs a lexicon")
        unknown = sorted({w for _, w in test_set if w not in lexicon.entries})
        accept = {w: set(lexicon[w]) for _, w in test_set if w in lexicon.entries}
    elif mode == "orthography":
        known = set(index.labels)
        unknown = sorted({w for _, w in test_set if w not in known})
        accept = {w: {w} for _, w in test_set}
    else:
        raise ValueError(f"unknown match mode {mode!r}")
    if unknown:
        raise KeyError(f"truth labels not covered: {unknown[:10]}")
    f = embed_utterances(audio_params, [u for u, _ in test_set])
    hits = [lab in accept[w] for lab, (_, w) in zip(classify_batch(f, index), test_set)]
    return float(np.mean(hits))


# ---------------------------------------------------------------------------
# index file: magic, u32 count, u32 dim, then per entry a u32-length-prefixed
# UTF-8 label and dim little-endian f32 values


def dump_index(index: EmbeddingIndex, label_str: Callable[[Hashable], str] = str) -> bytes:
    buf = io.BytesIO()
    buf.write(INDEX_MAGIC)
    buf.write(struct.pack("<2I", len(index), index.dim))
    vecs = index.vectors.astype("<f4")
    for lab, v in zip(index.labels, vecs):
        raw = label_str(lab).encode("utf-8")
        buf.write(struct.pack("<I", len(raw)))
        buf.write(raw)
        buf.write(v.tobytes())
    return buf.getvalue()


def parse_index(data: bytes, parse_label: Callable[[str], Hashable] | None = None) -> EmbeddingIndex:
    n_magic = len(INDEX_MAGIC)
    if data[:n_magic] != INDEX_MAGIC:
        raise ValueError("not an embedding index file (bad magic)")
    if len(data) < n_magic + 8:
        raise ValueError("truncated index header")
    count, dim = struct.unpack_from("<2I", data, n_magic)
    pos = n_magic + 8
    index = EmbeddingIndex(dim)
    for _ in range(count):
        if pos + 4 > len(data):
            raise ValueError("truncated index file")
        (n,) = struct.unpack_from("<I", data, pos)
        pos += 4
        end = pos + n + 4 * dim
        if end > len(data):
            raise ValueError("truncated index file")
        label = data[pos : pos + n].decode("utf-8")
        vec = np.frombuffer(data[pos + n : end], dtype="<f4").astype(np.float64)
        index.add(parse_label(label) if parse_label else label, vec)
        pos = end
    if pos != len(data):
        raise ValueError("trailing bytes in index file")
    return index


def save_index(path, index: EmbeddingIndex, label_str: Callable[[Hashable], str] = str):
    with open(path, "wb") as fh:
        fh.write(dump_index(index, label_str))


def load_index(path, parse_label: Callable[[str], Hashable] | None = None) -> EmbeddingIndex:
    with open(path, "rb") as fh:
        return parse_index(fh.read(), parse_label)
