"""Add-k smoothed n-gram language model.

Serves two roles: an unconditional scorer for fluency (``lm_score``) and a
source of background unigram statistics. Every context distribution is
proper over the vocabulary, which always contains EOS and UNK; BOS only
ever appears as padding in contexts.
"""

from __future__ import annotations

import json
import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .scoring import ForceDecodeResult
from .textcore import TokenSequence

__all__ = ["NGramLM", "train_lm", "lm_log_prob", "BOS", "EOS", "UNK"]

BOS = "<s>"
EOS = "</s>"
UNK = "<unk>"


@dataclass(frozen=True, eq=False)
class NGramLM:
    order: int
    k: float
    vocab: frozenset
    counts: dict = field(default_factory=dict)  # context tuple -> Counter(token -> count)
    _totals: dict = field(init=False, repr=False)

    def __post_init__(self):
        if self.order < 1:
            raise ValueError(f"order must be >= 1, got {self.order}")
        if not self.k > 0:
            raise ValueError(f"k must be > 0, got {self.k}")
        vocab = frozenset(self.vocab) | {EOS, UNK}
        if BOS in vocab:
            raise ValueError(f"{BOS!r} is reserved for context padding")
        for ctx, nxt in self.counts.items():
            if len(ctx) != self.order - 1:
                raise ValueError(f"context {ctx!r} does not have length {self.order - 1}")
            for tok, c in nxt.items():
                if c < 1 or tok not in vocab:
                    raise ValueError(f"bad count entry {ctx!r} -> {tok!r}: {c}")
        object.__setattr__(self, "vocab", vocab)
        object.__setattr__(self, "_totals", {ctx: sum(nxt.values()) for ctx, nxt in self.counts.items()})

    @property
    def vocab_size(self) -> int:
        return len(self.vocab)

    def map_token(self, tok: str) -> str:
        return tok if tok in self.vocab else UNK

    def prob(self, token: str, context: Sequence[str]) -> float:
        ctx = tuple(context)
        nxt = self.counts.get(ctx)
        c = nxt[self.map_token(token)] if nxt else 0
        return (c + self.k) / (self._totals.get(ctx, 0) + self.k * self.vocab_size)

    def distribution(self, context: Sequence[str]) -> dict[str, float]:
        return {tok: self.prob(tok, context) for tok in self.vocab}

    def log_probs(self, tokens: Iterable[str]) -> list[float]:
        padded = [BOS] * (self.order - 1) + [self.map_token(t) for t in tokens] + [EOS]
        h = self.order - 1
        return [math.log(self.prob(padded[i], padded[i - h:i])) for i in range(h, len(padded))]

    def force_decode(self, input, output, target_lang=None) -> ForceDecodeResult:
        if len(input):
            raise ValueError("a language model is unconditional; pass an empty input sequence")
        return ForceDecodeResult(tuple(self.log_probs(output)))

    # -- persistence -----------------------------------------------------------

    def to_json(self) -> str:
        return json.dumps({
            "header": {"order": self.order, "k": self.k},
            "vocab": sorted(self.vocab),
            "counts": [{"context": list(ctx), "next": dict(sorted(nxt.items()))}
                       for ctx, nxt in sorted(self.counts.items())],
        }, ensure_ascii=False)

    @classmethod
    def from_json(cls, text: str) -> "NGramLM":
        doc = json.loads(text)
        counts = {tuple(e["context"]): Counter(e["next"]) for e in doc["counts"]}
        return cls(int(doc["header"]["order"]), float(doc["header"]["k"]), frozenset(doc["vocab"]), counts)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_json())

    @classmethod
    def load(cls, path) -> "NGramLM":
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(fh.read())


def train_lm(corpus: Sequence[TokenSequence | Sequence[str]], order: int = 3, k: float = 0.1) -> NGramLM:
    if order < 1:
        raise ValueError(f"order must be >= 1, got {order}")
    if not k > 0:
        raise ValueError(f"k must be > 0, got {k}")
    if not corpus:
        raise ValueError("cannot train on an empty corpus")
    h = order - 1
    counts = defaultdict(Counter)
    vocab = set()
    for seq in corpus:
        toks = list(seq)
        vocab.update(toks)
        padded = [BOS] * h + toks + [EOS]
        for i in range(h, len(padded)):
            counts[tuple(padded[i - h:i])][padded[i]] += 1
    return NGramLM(order, k, frozenset(vocab), dict(counts))


def lm_log_prob(lm: NGramLM, y: TokenSequence | Sequence[str]) -> ForceDecodeResult:
    return ForceDecodeResult(tuple(lm.log_probs(y)))
