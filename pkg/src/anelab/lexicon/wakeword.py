"""Expected confusion of a wake-up word against the rest of the vocabulary.

For target t and every other word w the log term is

    (alpha - 1) * (|g_t - g_w|^2 / (8 sigma^2) + log 2) + alpha * log P(w)

and the score is the log-sum-exp of these terms.  The LM probabilities
are used as given, without renormalizing after the target is removed.
"""

from __future__ import annotations

import csv
import math
from typing import Mapping, Sequence

import numpy as np
from scipy.special import logsumexp

from ..core import UnigramLM


def _terms(target: str, embeddings: Mapping[str, np.ndarray], lm: UnigramLM,
           sigma: float, alpha: float) -> np.ndarray:
    if not sigma > 0:
        raise ValueError("sigma must be > 0")
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must be in [0, 1], got {alpha}")
    if target not in embeddings:
        raise KeyError(f"target {target!r} has no embedding")
    others = [w for w in embeddings if w != target]
    if not others:
        raise ValueError("vocabulary is empty once the target is excluded")
    missing = [w for w in others if w not in lm]
    if missing:
        raise KeyError(f"vocabulary words missing from the LM: {missing[:10]}")
    g_t = np.asarray(embeddings[target], dtype=np.float64)
    g = np.array([embeddings[w] for w in others], dtype=np.float64)
    sq = ((g - g_t) ** 2).sum(axis=1)
    log_p = np.array([lm.log_prob(w) for w in others])
    return (alpha - 1.0) * (sq / (8.0 * sigma * sigma) + math.log(2.0)) + alpha * log_p


def wakeword_confusion(target: str, embeddings: Mapping[str, np.ndarray], lm: UnigramLM,
                       sigma: float, alpha: float = 0.9) -> float:
    """Log expected confusion of ``target``; higher means more confusable."""
    return float(logsumexp(_terms(target, embeddings, lm, sigma, alpha)))


def wakeword_sweep(targets: Sequence[str], embeddings: Mapping[str, np.ndarray], lm: UnigramLM,
                   sigma: float, alphas: Sequence[float]) -> list[tuple[str, float, float]]:
    return [(t, float(a), wakeword_confusion(t, embeddings, lm, sigma, float(a)))
            for t in targets for a in alphas]


def write_sweep_csv(path, rows: Sequence[tuple[str, float, float]]):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["word", "alpha", "log_expected_confusion"])
        for word, alpha, score in rows:
            w.writerow([word, f"{alpha:.4f}", f"{score:.8f}"])
