"""BLEU-1 and ROUGE-L for token sequences."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import Sequence


def bleu1(candidate: Sequence, references: Sequence[Sequence]) -> float:
    """Clipped unigram precision times the brevity penalty.

    The brevity penalty uses the reference length closest to the candidate
    length (shorter wins ties).
    """
    if not candidate:
        raise ValueError("empty candidate")
    if not references:
        raise ValueError("need at least one reference")
    cand = Counter(candidate)
    max_ref: Counter = Counter()
    for ref in references:
        for tok, n in Counter(ref).items():
            max_ref[tok] = max(max_ref[tok], n)
    clipped = sum(min(n, max_ref[tok]) for tok, n in cand.items())
    precision = clipped / len(candidate)
    c = len(candidate)
    r = min((len(ref) for ref in references), key=lambda n: (abs(n - c), n))
    bp = math.exp(min(0.0, 1.0 - r / c))
    return precision * bp


def lcs_length(a: Sequence, b: Sequence) -> int:
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            cur.append(prev[j] + 1 if x == y else max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]


def rouge_l(candidate: Sequence, reference: Sequence) -> float:
    """LCS-based F1 (beta = 1)."""
    if not candidate or not reference:
        raise ValueError("empty sequence")
    lcs = lcs_length(candidate, reference)
    if lcs == 0:
        return 0.0
    p = lcs / len(candidate)
    r = lcs / len(reference)
    return 2 * p * r / (p + r)


@dataclass
class CaptionMetrics:
    bleu1: float
    rouge_l: float

    @property
    def average(self) -> float:
        return 0.5 * (self.bleu1 + self.rouge_l)

    def to_dict(self) -> dict:
        return {"bleu1": self.bleu1, "rouge_l": self.rouge_l, "average": self.average}


def corpus_metrics(candidates: Sequence[Sequence], references: Sequence[Sequence]) -> CaptionMetrics:
    """Mean sentence-level BLEU-1 and ROUGE-L over aligned pairs."""
    if len(candidates) != len(references) or not candidates:
        raise ValueError("need equally many non-zero candidates and references")
    b = sum(bleu1(c, [r]) for c, r in zip(candidates, references)) / len(candidates)
    rl = sum(rouge_l(c, r) for c, r in zip(candidates, references)) / len(candidates)
    return CaptionMetrics(b, rl)
