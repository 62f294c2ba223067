"""Sentence BLEU, corpus BLEU and chrF over toolkit token sequences."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import Sequence

from .textcore import TokenSequence, ngrams

__all__ = ["BleuConfig", "sent_bleu", "corpus_bleu", "chrf", "SMOOTHING_METHODS"]

SMOOTHING_METHODS = ("floor", "add-one", "none")


@dataclass(frozen=True)
class BleuConfig:
    """BLEU settings.

    ``smoothing`` selects how modified precisions are smoothed:

    ``floor``
        an order with zero matches gets ``floor / total`` instead of 0
        (what sentence-BLEU "smoothing 1" usually means).
    ``add-one``
        ``(matches + 1) / (total + 1)`` for every order.
    ``none``
        plain precisions; any zero match gives BLEU 0.
    """

    max_order: int = 4
    smoothing: str = "floor"
    floor: float = 0.1

    def __post_init__(self):
        if self.max_order < 1:
            raise ValueError("max_order must be >= 1")
        if self.smoothing not in SMOOTHING_METHODS:
            raise ValueError(f"unknown smoothing {self.smoothing!r}; choose from {SMOOTHING_METHODS}")


def _stats(sys: Sequence[str], ref: Sequence[str], max_order: int):
    matches, totals = [], []
    for n in range(1, max_order + 1):
        hyp = ngrams(sys, n).grams
        matches.append(sum((hyp & ngrams(ref, n).grams).values()))
        totals.append(max(len(sys) - n + 1, 0))
    return matches, totals


def _bleu(matches, totals, sys_len, ref_len, cfg: BleuConfig) -> float:
    if sys_len == 0:
        return 0.0
    log_p = 0.0
    for m, t in zip(matches, totals):
        if cfg.smoothing == "add-one":
            m, t = m + 1, t + 1
        elif m == 0:
            if cfg.smoothing == "none":
                return 0.0
            # orders longer than the hypothesis have t == 0 and count as one miss
            m, t = cfg.floor, max(t, 1)
        log_p += math.log(m / t)
    bp = 1.0 if sys_len >= ref_len else math.exp(1.0 - ref_len / sys_len)
    return 100.0 * bp * math.exp(log_p / cfg.max_order)


def sent_bleu(sys: TokenSequence | Sequence[str], ref: TokenSequence | Sequence[str],
              cfg: BleuConfig = BleuConfig()) -> float:
    sys, ref = tuple(sys), tuple(ref)
    if not ref:
        raise ValueError("reference must be non-empty")
    matches, totals = _stats(sys, ref, cfg.max_order)
    return _bleu(matches, totals, len(sys), len(ref), cfg)


def corpus_bleu(sys: Sequence[Sequence[str]], refs: Sequence[Sequence[str]],
                cfg: BleuConfig = BleuConfig(smoothing="none")) -> float:
    """Corpus BLEU: n-gram statistics are summed over segments before combining."""
    if len(sys) != len(refs):
        raise ValueError(f"{len(sys)} hypotheses but {len(refs)} references")
    matches = [0] * cfg.max_order
    totals = [0] * cfg.max_order
    sys_len = ref_len = 0
    for s, r in zip(sys, refs):
        m, t = _stats(tuple(s), tuple(r), cfg.max_order)
        matches = [a + b for a, b in zip(matches, m)]
        totals = [a + b for a, b in zip(totals, t)]
        sys_len += len(s)
        ref_len += len(r)
    return _bleu(matches, totals, sys_len, ref_len, cfg)


def _char_ngrams(text: str, n: int) -> Counter:
    chars = "".join(text.split())
    return Counter(chars[i:i + n] for i in range(len(chars) - n + 1))


def chrf(sys: TokenSequence | str, ref: TokenSequence | str, char_order: int = 6, beta: float = 2.0) -> float:
    """Character n-gram F-score.

    Whitespace is removed before extracting n-grams. Precision and recall
    are averaged over the orders for which both sides have n-grams, then
    combined into F-beta.
    """
    sys_text = sys.text() if isinstance(sys, TokenSequence) else sys
    ref_text = ref.text() if isinstance(ref, TokenSequence) else ref
    if not ref_text.strip():
        raise ValueError("reference must be non-empty")
    precs, recs = [], []
    for n in range(1, char_order + 1):
        hyp, rf = _char_ngrams(sys_text, n), _char_ngrams(ref_text, n)
        if not hyp or not rf:
            continue
        common = sum((hyp & rf).values())
        precs.append(common / sum(hyp.values()))
        recs.append(common / sum(rf.values()))
    if not precs:
        return 0.0
    p, r = sum(precs) / len(precs), sum(recs) / len(recs)
    if p == 0.0 and r == 0.0:
        return 0.0
    b2 = beta * beta
    return 100.0 * (1 + b2) * p * r / (b2 * p + r)
