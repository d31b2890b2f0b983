"""Pronunciation-length distribution implied by a lexicon and an LM."""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass

import numpy as np

from ..core import Lexicon, UnigramLM

SUM_TOL = 1e-9


@dataclass(frozen=True)
class LengthDistribution:
    probs: dict[int, float]

    def __post_init__(self):
        if not self.probs:
            raise ValueError("empty length distribution")
        for h, p in self.probs.items():
            if int(h) != h or h < 1:
                raise ValueError(f"bad length {h}")
            if p < 0:
                raise ValueError(f"negative probability for length {h}")
        total = sum(self.probs.values())
        if abs(total - 1.0) > SUM_TOL:
            raise ValueError(f"length probabilities sum to {total}")
        object.__setattr__(self, "probs", dict(sorted((int(h), float(p)) for h, p in self.probs.items())))

    @classmethod
    def from_weights(cls, weights: dict[int, float]) -> "LengthDistribution":
        total = float(sum(weights.values()))
        return cls({h: w / total for h, w in weights.items()})

    @classmethod
    def uniform(cls, lengths) -> "LengthDistribution":
        lengths = sorted(set(lengths))
        return cls({h: 1.0 / len(lengths) for h in lengths})

    @property
    def lengths(self) -> list[int]:
        return list(self.probs)

    def vector(self) -> np.ndarray:
        return np.array(list(self.probs.values()))

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return rng.choice(np.array(self.lengths), size=size, p=self.vector())

    def total_variation(self, other: "LengthDistribution | dict[int, float]") -> float:
        q = other.probs if isinstance(other, LengthDistribution) else other
        keys = set(self.probs) | set(q)
        return 0.5 * sum(abs(self.probs.get(h, 0.0) - q.get(h, 0.0)) for h in keys)


def empirical_distribution(lengths) -> LengthDistribution:
    counts: dict[int, float] = defaultdict(float)
    for h in lengths:
        counts[int(h)] += 1.0
    return LengthDistribution.from_weights(counts)


def length_distribution(lexicon: Lexicon, lm: UnigramLM) -> LengthDistribution:
    """P(h) = sum over words of P(w) * (share of w's pronunciations with h phones)."""
    missing = [w for w in lm if w not in lexicon]
    if missing:
        shown = ", ".join(repr(w) for w in missing[:10])
        more = f" (+{len(missing) - 10} more)" if len(missing) > 10 else ""
        raise KeyError(f"LM words missing from lexicon: {shown}{more}")
    mass: dict[int, float] = defaultdict(float)
    for word, p_word in lm.probs.items():
        prons = lexicon[word]
        for pron in prons:
            mass[len(pron)] += p_word / len(prons)
    return LengthDistribution.from_weights(mass)
