"""Isolated-word recognizer over posteriorgram frames.

Each candidate pronunciation is scored by its best monotone alignment to
the frames (every phone covers at least one consecutive frame), summing
the log posterior of the aligned phone.  This plays the recognizer with a
fixed, possibly deficient, vocabulary in the OOV experiment.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

FLOOR = 1e-12


def alignment_score(frames: np.ndarray, pron: Sequence[int]) -> float:
    """Best log-posterior alignment of ``pron`` to ``frames``; -inf if too short."""
    lp = np.log(np.maximum(frames[:, list(pron)], FLOOR))
    t_len, n = lp.shape
    if t_len < n:
        return -np.inf
    score = np.full(n, -np.inf)
    score[0] = lp[0, 0]
    for t in range(1, t_len):
        advance = np.concatenate(([-np.inf], score[:-1]))
        score = np.maximum(score, advance) + lp[t]
    return float(score[-1])


def decode(frames: np.ndarray, vocabulary: Sequence[Sequence[int]]) -> int:
    """Index of the best-scoring pronunciation (first one on ties)."""
    if not vocabulary:
        raise ValueError("empty recognizer vocabulary")
    scores = [alignment_score(frames, p) for p in vocabulary]
    return int(np.argmax(scores))
