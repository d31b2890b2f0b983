"""Shared domain types, seeded randomness and small vector helpers."""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

LM_SUM_SLACK = 1e-9

_STRESS = re.compile(r"\d+$")


class ParseError(ValueError):
    """Malformed line in a lexicon or LM file."""

    def __init__(self, path, lineno: int, message: str):
        self.path = str(path)
        self.lineno = lineno
        super().__init__(f"{self.path}:{lineno}: {message}")


class SymbolInventory:
    """Bijection between symbol names and small sequential integer ids.

    With ``merge_stress=True`` trailing stress digits are stripped before
    interning, so ``ih0`` and ``ih1`` share an id.
    """

    def __init__(self, names: Iterable[str] = (), merge_stress: bool = False):
        self.merge_stress = merge_stress
        self._ids: dict[str, int] = {}
        self._names: list[str] = []
        for name in names:
            self.intern(name)

    def _key(self, name: str) -> str:
        if self.merge_stress:
            stripped = _STRESS.sub("", name)
            return stripped or name
        return name

    def intern(self, name: str) -> int:
        if not name:
            raise ValueError("symbol name must be non-empty")
        key = self._key(name)
        idx = self._ids.get(key)
        if idx is None:
            idx = len(self._names)
            self._ids[key] = idx
            self._names.append(key)
        return idx

    def id(self, name: str) -> int:
        return self._ids[self._key(name)]

    def name(self, idx: int) -> str:
        return self._names[idx]

    def __contains__(self, idx) -> bool:
        return isinstance(idx, (int, np.integer)) and 0 <= idx < len(self._names)

    def __len__(self) -> int:
        return len(self._names)

    @property
    def names(self) -> list[str]:
        return list(self._names)


def intern_phone(name: str, inventory: SymbolInventory) -> int:
    return inventory.intern(name)


@dataclass(frozen=True)
class _SymbolSeq:
    ids: tuple[int, ...]

    def __post_init__(self):
        ids = tuple(int(i) for i in self.ids)
        if not ids:
            raise ValueError(f"{type(self).__name__} must be non-empty")
        if min(ids) < 0:
            raise ValueError("symbol ids must be non-negative")
        object.__setattr__(self, "ids", ids)

    @classmethod
    def from_names(cls, names: Sequence[str], inventory: SymbolInventory):
        return cls(tuple(inventory.intern(n) for n in names))

    def check(self, inventory: SymbolInventory):
        for i in self.ids:
            if i not in inventory:
                raise ValueError(f"symbol id {i} not registered in inventory")
        return self

    def names(self, inventory: SymbolInventory) -> list[str]:
        return [inventory.name(i) for i in self.ids]

    def text(self, inventory: SymbolInventory) -> str:
        return " ".join(self.names(inventory))

    def __len__(self) -> int:
        return len(self.ids)

    def __iter__(self) -> Iterator[int]:
        return iter(self.ids)

    def __getitem__(self, k):
        return self.ids[k]


class PhoneSeq(_SymbolSeq):
    """Pronunciation: a non-empty tuple of phone ids."""


class GraphemeSeq(_SymbolSeq):
    """Spelling: a non-empty tuple of grapheme ids; space is an ordinary symbol."""


@dataclass
class Utterance:
    frames: np.ndarray
    phones: PhoneSeq
    graphemes: GraphemeSeq
    word: str = ""
    dialect: int = -1

    def __post_init__(self):
        frames = np.asarray(self.frames, dtype=np.float64)
        if frames.ndim != 2 or frames.shape[0] == 0:
            raise ValueError("frames must be a non-empty (T, D_in) array")
        if not np.all(np.isfinite(frames)):
            raise ValueError("frames must be finite")
        self.frames = frames

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def dim(self) -> int:
        return self.frames.shape[1]


def as_embedding(values) -> np.ndarray:
    vec = np.asarray(values, dtype=np.float64)
    if vec.ndim != 1:
        raise ValueError("embedding must be a 1-D vector")
    if not np.all(np.isfinite(vec)):
        raise ValueError("embedding contains NaN or Inf")
    return vec


@dataclass(frozen=True)
class GaussianSpec:
    """Gaussian cluster model: full covariance or isotropic ``variance * I``."""

    mean: np.ndarray
    cov: np.ndarray | None = None
    variance: float | None = None

    def __post_init__(self):
        mean = np.atleast_1d(as_embedding(np.atleast_1d(self.mean)))
        object.__setattr__(self, "mean", mean)
        if (self.cov is None) == (self.variance is None):
            raise ValueError("give exactly one of cov or variance")
        if self.cov is not None:
            cov = np.atleast_2d(np.asarray(self.cov, dtype=np.float64))
            if cov.shape != (mean.size, mean.size):
                raise ValueError("covariance shape does not match mean")
            if not np.allclose(cov, cov.T, rtol=0, atol=1e-12):
                raise ValueError("covariance must be symmetric")
            try:
                np.linalg.cholesky(cov)
            except np.linalg.LinAlgError:
                raise ValueError("covariance is not positive-definite") from None
            object.__setattr__(self, "cov", cov)
        elif not self.variance > 0:
            raise ValueError("isotropic variance must be > 0")

    @classmethod
    def isotropic(cls, mean, sigma: float) -> "GaussianSpec":
        if not sigma > 0:
            raise ValueError("sigma must be > 0")
        return cls(mean, variance=float(sigma) ** 2)

    @property
    def dim(self) -> int:
        return self.mean.size

    def covariance(self) -> np.ndarray:
        if self.cov is not None:
            return self.cov
        return self.variance * np.eye(self.dim)


@dataclass
class Lexicon:
    """Word -> ordered, duplicate-free list of pronunciations."""

    entries: dict[str, list[PhoneSeq]] = field(default_factory=dict)

    def __post_init__(self):
        for word, prons in self.entries.items():
            if not prons:
                raise ValueError(f"word {word!r} has no pronunciation")
            if len(set(prons)) != len(prons):
                raise ValueError(f"word {word!r} has duplicate pronunciations")

    def add(self, word: str, pron: PhoneSeq):
        prons = self.entries.setdefault(word, [])
        if pron not in prons:
            prons.append(pron)

    def __getitem__(self, word: str) -> list[PhoneSeq]:
        return self.entries[word]

    def __contains__(self, word: str) -> bool:
        return word in self.entries

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def pronunciations(self) -> list[tuple[str, PhoneSeq]]:
        return [(w, p) for w, prons in self.entries.items() for p in prons]


class UnigramLM:
    """Word probability table."""

    def __init__(self, probs: dict[str, float]):
        total = 0.0
        for word, p in probs.items():
            if not (0.0 < p <= 1.0):
                raise ValueError(f"probability of {word!r} outside (0, 1]: {p}")
            total += p
        if total > 1.0 + LM_SUM_SLACK:
            raise ValueError(f"probabilities sum to {total} > 1")
        self.probs = dict(probs)
        self._logp: dict[str, float] | None = None

    @classmethod
    def uniform(cls, words: Iterable[str]) -> "UnigramLM":
        words = list(words)
        return cls({w: 1.0 / len(words) for w in words})

    def prob(self, word: str) -> float:
        return self.probs[word]

    def log_prob(self, word: str) -> float:
        if self._logp is None:
            self._logp = {w: math.log(p) for w, p in self.probs.items()}
        return self._logp[word]

    def __contains__(self, word: str) -> bool:
        return word in self.probs

    def __len__(self) -> int:
        return len(self.probs)

    def __iter__(self):
        return iter(self.probs)


# ---------------------------------------------------------------------------
# text formats


def read_lexicon(path, inventory: SymbolInventory) -> Lexicon:
    """Parse ``word<TAB>phone phone ...`` lines."""
    lex = Lexicon()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 2 or not parts[0] or not parts[1].split():
                raise ParseError(path, lineno, "expected 'word<TAB>phones'")
            lex.add(parts[0], PhoneSeq.from_names(parts[1].split(), inventory))
    return lex


def write_lexicon(path, lex: Lexicon, inventory: SymbolInventory):
    with open(path, "w", encoding="utf-8") as fh:
        for word, pron in lex.pronunciations():
            fh.write(f"{word}\t{pron.text(inventory)}\n")


def read_lm(path) -> UnigramLM:
    """Parse ``word<TAB>probability`` lines."""
    probs: dict[str, float] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 2 or not parts[0]:
                raise ParseError(path, lineno, "expected 'word<TAB>probability'")
            try:
                p = float(parts[1])
            except ValueError:
                raise ParseError(path, lineno, f"bad probability {parts[1]!r}") from None
            if not (0.0 < p <= 1.0):
                raise ParseError(path, lineno, f"probability {p} outside (0, 1]")
            if parts[0] in probs:
                raise ParseError(path, lineno, f"duplicate word {parts[0]!r}")
            probs[parts[0]] = p
    try:
        return UnigramLM(probs)
    except ValueError as exc:
        raise ParseError(path, lineno, str(exc)) from None


def write_lm(path, lm: UnigramLM):
    with open(path, "w", encoding="utf-8") as fh:
        for word, p in lm.probs.items():
            fh.write(f"{word}\t{p!r}\n")


# ---------------------------------------------------------------------------
# randomness


def seeded_rng(seed: int) -> np.random.Generator:
    """PCG64 stream; identical across runs and platforms for a given seed."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed))))


def clone_streams(seed: int, n: int) -> list[np.random.Generator]:
    """Independent per-worker streams derived from one seed."""
    children = np.random.SeedSequence(int(seed)).spawn(n)
    return [np.random.Generator(np.random.PCG64(s)) for s in children]


def substream(seed: int, *key: int) -> np.random.Generator:
    """Stream for a fixed (seed, key...) tuple, e.g. per-utterance generation."""
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, *map(int, key)])
    return np.random.Generator(np.random.PCG64(ss))


# ---------------------------------------------------------------------------
# vector helpers


def dot(x, y) -> float:
    return float(np.dot(x, y))


def norm(x) -> float:
    return float(np.linalg.norm(x))


def axpy(a: float, x, y) -> np.ndarray:
    return a * np.asarray(x, dtype=np.float64) + np.asarray(y, dtype=np.float64)


def sqdist(x, y) -> float:
    diff = np.asarray(x, dtype=np.float64) - np.asarray(y, dtype=np.float64)
    return float(diff @ diff)


def ensure_dir(path) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p
