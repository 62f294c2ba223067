"""Monotone HMM edit channel whose most likely output is a copy of its input.

The hidden state ``s`` counts consumed input tokens. From state ``s`` the
channel either stops (probability ``q(s) = stop_base * stop_decay**(n - s)``)
or takes one continue-event:

* insertion: emit a background token, stay in ``s``;
* consume-d: jump to ``s + d``, skipping ``d - 1`` input tokens, and emit the
  token at position ``s + d`` (1-based) with probability ``1 - eps`` or a
  background token with probability ``eps``.

Insertion has weight ``ins`` and consume-d weight
``(1 - ins) * (1 - del_cont) * del_cont**(d - 1)``; weights are renormalized
over the events that are feasible from ``s``. Once the input is exhausted
insertion is the only continue-event.

Scoring runs the forward recursion over ``s`` with per-step rescaling, which
makes the conditional log probability of each output token the log of that
step's normalizer.
"""

from __future__ import annotations

import heapq
import json
import math
from collections import Counter
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterable, Sequence

import numpy as np

from .scoring import ForceDecodeResult, OutOfVocabularyError
from .textcore import TokenSequence

__all__ = [
    "EOS",
    "CopyChannelModel",
    "BeamSearchError",
    "DEFAULT_PARAMS",
    "prefix_log_likelihood",
    "force_decode_copy",
    "next_token_dist",
    "beam_search",
]

EOS = "</s>"

# del_cont above ~0.2 lets paths that delete one of a repeated token outweigh the copy
DEFAULT_PARAMS = dict(eps=0.05, ins=0.02, del_cont=0.1, stop_base=0.6, stop_decay=0.1)


class BeamSearchError(RuntimeError):
    pass


@dataclass(frozen=True)
class _ForwardState:
    """Forward probabilities normalized to sum 1, plus the log of the dropped scale."""

    alpha: np.ndarray
    log_scale: float


@dataclass(frozen=True, eq=False)
class CopyChannelModel:
    vocab: tuple[str, ...]
    background: np.ndarray
    eps: float = DEFAULT_PARAMS["eps"]
    ins: float = DEFAULT_PARAMS["ins"]
    del_cont: float = DEFAULT_PARAMS["del_cont"]
    stop_base: float = DEFAULT_PARAMS["stop_base"]
    stop_decay: float = DEFAULT_PARAMS["stop_decay"]
    lang: str | None = None
    _index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        vocab = tuple(self.vocab)
        if len(set(vocab)) != len(vocab):
            raise ValueError("vocabulary contains duplicate tokens")
        if not vocab:
            raise ValueError("vocabulary is empty")
        if EOS in vocab:
            raise ValueError(f"{EOS!r} is reserved and cannot be a vocabulary token")
        u = np.array(self.background, dtype=np.float64)
        u.setflags(write=False)
        if u.shape != (len(vocab),):
            raise ValueError("background distribution must have one entry per vocabulary token")
        if np.any(u <= 0) or abs(u.sum() - 1.0) > 1e-9:
            raise ValueError("background distribution must be strictly positive and sum to 1")
        for name in ("eps", "ins", "del_cont", "stop_base"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise ValueError(f"{name} must lie strictly inside (0, 1), got {v}")
        if not 0.0 < self.stop_decay <= 1.0:
            raise ValueError(f"stop_decay must lie in (0, 1], got {self.stop_decay}")
        object.__setattr__(self, "vocab", vocab)
        object.__setattr__(self, "background", u)
        object.__setattr__(self, "_index", {tok: i for i, tok in enumerate(vocab)})

    # -- construction ----------------------------------------------------------

    @classmethod
    def from_corpus(cls, corpus: Iterable[TokenSequence | Sequence[str]], extra_vocab: Iterable[str] = (),
                    **params) -> "CopyChannelModel":
        """Fit the background as add-one smoothed unigram frequencies."""
        counts = Counter()
        for seq in corpus:
            counts.update(seq)
        for tok in extra_vocab:
            counts.setdefault(tok, 0)
        vocab = tuple(sorted(counts))
        total = sum(counts.values()) + len(vocab)
        u = np.array([(counts[t] + 1) / total for t in vocab])
        return cls(vocab, u, **params)

    @classmethod
    def uniform(cls, vocab: Iterable[str], **params) -> "CopyChannelModel":
        vocab = tuple(vocab)
        return cls(vocab, np.full(len(vocab), 1.0 / max(len(vocab), 1)), **params)

    def params(self) -> dict:
        return dict(eps=self.eps, ins=self.ins, del_cont=self.del_cont,
                    stop_base=self.stop_base, stop_decay=self.stop_decay)

    # -- persistence -----------------------------------------------------------

    def to_json(self) -> str:
        # json writes floats with repr(), the shortest string that round-trips bit-exactly
        doc = {
            "vocab": list(self.vocab),
            "background": {tok: float(p) for tok, p in zip(self.vocab, self.background)},
            **self.params(),
        }
        if self.lang is not None:
            doc["lang"] = self.lang
        return json.dumps(doc, ensure_ascii=False, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "CopyChannelModel":
        doc = json.loads(text)
        vocab = tuple(doc["vocab"])
        u = np.array([float(doc["background"][tok]) for tok in vocab])
        return cls(vocab, u, **{k: float(doc[k]) for k in DEFAULT_PARAMS}, lang=doc.get("lang"))

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_json())

    @classmethod
    def load(cls, path) -> "CopyChannelModel":
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(fh.read())

    # -- internals -------------------------------------------------------------

    def encode(self, seq: Iterable[str], side: str) -> np.ndarray:
        ids = []
        for pos, tok in enumerate(seq):
            try:
                ids.append(self._index[tok])
            except KeyError:
                raise OutOfVocabularyError(tok, pos, side) from None
        return np.array(ids, dtype=np.intp)

    def stop_probs(self, n: int) -> np.ndarray:
        return _tables(self, n)[0]

    def _initial(self, n: int) -> _ForwardState:
        alpha = np.zeros(n + 1)
        alpha[0] = 1.0
        return _ForwardState(alpha, 0.0)

    def _emission(self, x_ids: np.ndarray, v: int) -> np.ndarray:
        """Probability of emitting ``v`` when consuming into each state (index 0 unused)."""
        e = np.empty(len(x_ids) + 1)
        e[0] = 0.0
        e[1:] = self.eps * self.background[v]
        e[1:][x_ids == v] += 1.0 - self.eps
        return e

    def _advance(self, state: _ForwardState, x_ids: np.ndarray, v: int) -> tuple[_ForwardState, float]:
        _, ins_w, con = _tables(self, len(x_ids))
        a = state.alpha
        new = a * ins_w * self.background[v] + self._emission(x_ids, v) * (a @ con)
        c = new.sum()
        return _ForwardState(new / c, state.log_scale + math.log(c)), min(0.0, math.log(c))

    def _next_probs(self, state: _ForwardState, x_ids: np.ndarray) -> tuple[np.ndarray, float]:
        q, ins_w, con = _tables(self, len(x_ids))
        a = state.alpha
        into = a @ con
        p = self.background * (a @ ins_w + self.eps * into.sum())
        np.add.at(p, x_ids, (1.0 - self.eps) * into[1:])
        return p, float(a @ q)

    def _run(self, x_ids: np.ndarray, y_ids: np.ndarray):
        state = self._initial(len(x_ids))
        steps = []
        for v in y_ids:
            state, lp = self._advance(state, x_ids, v)
            steps.append(lp)
        return state, steps

    # -- public API ------------------------------------------------------------

    def prefix_log_likelihood(self, x: Sequence[str], y_prefix: Sequence[str], terminated: bool) -> float:
        """Log of the total path probability of emitting ``y_prefix`` (then EOS if ``terminated``)."""
        x_ids, y_ids = self.encode(x, "input"), self.encode(y_prefix, "output")
        state, _ = self._run(x_ids, y_ids)
        ll = state.log_scale
        if terminated:
            ll += math.log(float(state.alpha @ self.stop_probs(len(x_ids))))
        return ll

    def force_decode_copy(self, x: Sequence[str], y: Sequence[str]) -> ForceDecodeResult:
        x_ids, y_ids = self.encode(x, "input"), self.encode(y, "output")
        state, steps = self._run(x_ids, y_ids)
        p_eos = float(state.alpha @ self.stop_probs(len(x_ids)))
        steps.append(min(0.0, math.log(p_eos)))
        return ForceDecodeResult(tuple(steps))

    def force_decode(self, input, output, target_lang=None) -> ForceDecodeResult:
        if target_lang is not None and self.lang is not None and target_lang != self.lang:
            raise ValueError(f"model is for language {self.lang!r}, asked to decode into {target_lang!r}")
        return self.force_decode_copy(input, output)

    def next_token_dist(self, x: Sequence[str], y_prefix: Sequence[str]) -> dict[str, float]:
        """Distribution over the vocabulary plus :data:`EOS` after ``y_prefix``."""
        x_ids = self.encode(x, "input")
        state, _ = self._run(x_ids, self.encode(y_prefix, "output"))
        p, p_eos = self._next_probs(state, x_ids)
        dist = dict(zip(self.vocab, p.tolist()))
        dist[EOS] = p_eos
        return dist

    def beam_search(self, x: Sequence[str], beam_width: int = 5, max_len: int | None = None) -> TokenSequence:
        """Highest total log probability output found by beam search.

        Hypotheses are ranked by unnormalized log probability with ties going
        to the lexicographically smallest token sequence. Search stops once
        the best finished hypothesis scores at least as well as every live
        one, since extending a hypothesis can only lower its score.
        """
        if beam_width < 1:
            raise ValueError("beam_width must be >= 1")
        x_ids = self.encode(x, "input")
        if max_len is None:
            max_len = 2 * len(x_ids) + 10
        lang = x.lang if isinstance(x, TokenSequence) else "und"

        live = [(0.0, (), self._initial(len(x_ids)))]
        best = None  # (logp, tokens)
        for _ in range(max_len + 1):
            candidates = []
            for logp, toks, state in live:
                p, p_eos = self._next_probs(state, x_ids)
                if p_eos > 0.0:
                    cand = (logp + math.log(p_eos), toks)
                    if best is None or (-cand[0], cand[1]) < (-best[0], best[1]):
                        best = cand
                if len(toks) >= max_len:
                    continue
                with np.errstate(divide="ignore"):
                    lps = logp + np.log(p)
                for v, lp in enumerate(lps):
                    if lp > -math.inf:
                        candidates.append((lp, toks + (self.vocab[v],), state, v))
            if not candidates:
                break
            top = heapq.nsmallest(beam_width, candidates, key=lambda c: (-c[0], c[1]))
            live = [(lp, toks, self._advance(state, x_ids, v)[0]) for lp, toks, state, v in top]
            if best is not None and best[0] >= live[0][0]:
                break
        if best is None:
            raise BeamSearchError(f"no hypothesis terminated within {max_len} tokens")
        return TokenSequence(best[1], lang)


@lru_cache(maxsize=256)
def _tables_cached(n: int, ins: float, lam: float, pi: float, rho: float):
    s = np.arange(n + 1)
    q = pi * rho ** (n - s)
    # renormalizer over feasible continue-events: ins + (1-ins)(1-lam^(n-s))
    w = ins + (1.0 - ins) * (1.0 - lam ** (n - s))
    go = 1.0 - q
    ins_w = go * ins / w
    d = s[None, :] - s[:, None]
    con = np.where(d >= 1, (go * (1.0 - ins) * (1.0 - lam) / w)[:, None] * lam ** np.maximum(d - 1, 0), 0.0)
    for arr in (q, ins_w, con):
        arr.setflags(write=False)
    return q, ins_w, con


def _tables(model: CopyChannelModel, n: int):
    return _tables_cached(n, model.ins, model.del_cont, model.stop_base, model.stop_decay)


def prefix_log_likelihood(model: CopyChannelModel, x, y_prefix, terminated: bool) -> float:
    return model.prefix_log_likelihood(x, y_prefix, terminated)


def force_decode_copy(model: CopyChannelModel, x, y) -> ForceDecodeResult:
    return model.force_decode_copy(x, y)


def next_token_dist(model: CopyChannelModel, x, y_prefix) -> dict[str, float]:
    return model.next_token_dist(x, y_prefix)


def beam_search(model: CopyChannelModel, x, beam_width: int = 5, max_len: int | None = None) -> TokenSequence:
    return model.beam_search(x, beam_width, max_len)
