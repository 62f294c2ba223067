"""Force-decoding contract and the metrics built on it.

Every metric here reduces to per-token natural-log probabilities produced by a
:class:`ConditionalScorer`. ``G`` is their sum and ``H`` their mean, with the
EOS position counted in the denominator; the target language tag is
conditioned on but never scored.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from statistics import fmean
from typing import Iterable, Mapping, Protocol, Sequence, runtime_checkable

from .textcore import TokenSequence

__all__ = [
    "ConditionalScorer",
    "ForceDecodeResult",
    "SegmentScore",
    "OutOfVocabularyError",
    "force_decode",
    "seq_log_prob",
    "avg_log_prob",
    "prism_ref",
    "prism_src",
    "combine_directional",
    "lm_score",
    "system_score",
    "PrecomputedScorer",
    "DIRECTIONS",
    "read_precomputed",
    "write_scores_jsonl",
    "write_scores_tsv",
    "read_scores",
]


class OutOfVocabularyError(ValueError):
    """A backend was asked to score a token it has no entry for."""

    def __init__(self, token: str, position: int, side: str):
        self.token = token
        self.position = position
        self.side = side
        super().__init__(f"out-of-vocabulary token {token!r} at position {position} of the {side} sequence")


@dataclass(frozen=True)
class ForceDecodeResult:
    """Per-token log probabilities of a forced output, EOS last."""

    token_log_probs: tuple[float, ...]

    def __post_init__(self):
        lps = tuple(float(v) for v in self.token_log_probs)
        object.__setattr__(self, "token_log_probs", lps)
        if not lps:
            raise ValueError("a force-decode result holds at least the EOS log probability")
        for i, v in enumerate(lps):
            if not math.isfinite(v) or v > 0.0:
                raise ValueError(f"log probability at position {i} must be finite and <= 0, got {v}")

    @property
    def output_len(self) -> int:
        return len(self.token_log_probs)


@dataclass(frozen=True)
class SegmentScore:
    seg_id: str
    system: str
    value: float
    metric: str = ""

    def __post_init__(self):
        if not math.isfinite(self.value):
            raise ValueError(f"segment score for {self.seg_id}/{self.system} is not finite")


@runtime_checkable
class ConditionalScorer(Protocol):
    """Anything that can force-decode ``output`` given ``input``.

    Implementations must be deterministic and safe to share across threads
    once constructed. ``next_token_dist`` is optional and only needed for
    generation.
    """

    def force_decode(self, input: TokenSequence, output: TokenSequence,
                     target_lang: str | None = None) -> ForceDecodeResult: ...


def force_decode(scorer: ConditionalScorer, input: TokenSequence, output: TokenSequence,
                 target_lang: str | None = None) -> ForceDecodeResult:
    if target_lang is None:
        target_lang = output.lang
    if target_lang != output.lang:
        raise ValueError(f"target language {target_lang!r} does not match output language {output.lang!r}")
    return scorer.force_decode(input, output, target_lang)


def seq_log_prob(r: ForceDecodeResult) -> float:
    """G: total log probability of the forced output."""
    return math.fsum(r.token_log_probs)


def avg_log_prob(r: ForceDecodeResult) -> float:
    """H: G divided by the number of scored positions (EOS included)."""
    return seq_log_prob(r) / r.output_len


def prism_ref(scorer: ConditionalScorer, sys: TokenSequence, ref: TokenSequence) -> float:
    if sys.lang != ref.lang:
        raise ValueError(f"sys ({sys.lang}) and ref ({ref.lang}) must share a language")
    h_sys_given_ref = avg_log_prob(force_decode(scorer, ref, sys))
    h_ref_given_sys = avg_log_prob(force_decode(scorer, sys, ref))
    return 0.5 * h_sys_given_ref + 0.5 * h_ref_given_sys


def prism_src(scorer: ConditionalScorer, sys: TokenSequence, src: TokenSequence) -> float:
    return avg_log_prob(force_decode(scorer, src, sys))


def combine_directional(w: float, fwd: float, rev: float) -> float:
    if not 0.0 <= w <= 1.0:
        raise ValueError(f"weight must lie in [0, 1], got {w}")
    return w * fwd + (1.0 - w) * rev


def lm_score(lm: ConditionalScorer, sys: TokenSequence) -> float:
    """Fluency: H of ``sys`` under an unconditional scorer."""
    return avg_log_prob(force_decode(lm, TokenSequence((), sys.lang), sys))


def system_score(segment_scores: Sequence[SegmentScore] | Sequence[float]) -> float:
    if not segment_scores:
        raise ValueError("cannot average an empty list of segment scores")
    return fmean(s.value if isinstance(s, SegmentScore) else float(s) for s in segment_scores)


# -- precomputed log probabilities ---------------------------------------------

DIRECTIONS = ("sys|ref", "ref|sys", "sys|src")


class PrecomputedScorer:
    """Serves log probabilities computed elsewhere, e.g. by a real NMT model.

    Entries are keyed by the (input tokens, output tokens) pair they were
    computed for, so the object satisfies the ordinary scorer contract and
    plugs into :func:`prism_ref` and :func:`prism_src` unchanged.
    """

    def __init__(self, table: Mapping[tuple[tuple[str, ...], tuple[str, ...]], ForceDecodeResult] | None = None):
        self._table = dict(table or {})

    def add(self, input: TokenSequence, output: TokenSequence, result: ForceDecodeResult) -> None:
        key = (tuple(input), tuple(output))
        old = self._table.get(key)
        if old is not None and old != result:
            raise ValueError(f"conflicting log probabilities for input {input.text()!r} / output {output.text()!r}")
        self._table[key] = result

    @classmethod
    def from_records(cls, records: Iterable[dict], sys: Sequence[TokenSequence],
                     ref: Sequence[TokenSequence] | None = None,
                     src: Sequence[TokenSequence] | None = None,
                     seg_ids: Sequence[str] | None = None) -> "PrecomputedScorer":
        """Bind precomputed records to the segments they describe.

        ``seg_ids`` defaults to 1-based line numbers.
        """
        if seg_ids is None:
            seg_ids = [str(i + 1) for i in range(len(sys))]
        index = {sid: i for i, sid in enumerate(seg_ids)}
        sides = {"sys": sys, "ref": ref, "src": src}
        scorer = cls()
        for rec in records:
            direction = rec["direction"]
            if direction not in DIRECTIONS:
                raise ValueError(f"unknown direction {direction!r}; expected one of {DIRECTIONS}")
            sid = str(rec["seg_id"])
            if sid not in index:
                raise KeyError(f"precomputed record for unknown segment {sid!r}")
            out_side, in_side = direction.split("|")
            if sides[in_side] is None:
                raise ValueError(f"direction {direction} needs the {in_side} segments")
            i = index[sid]
            scorer.add(sides[in_side][i], sides[out_side][i], ForceDecodeResult(tuple(rec["log_probs"])))
        return scorer

    def force_decode(self, input, output, target_lang=None):
        try:
            return self._table[(tuple(input), tuple(output))]
        except KeyError:
            raise KeyError(f"no precomputed log probabilities for output {output.text()!r} "
                           f"given input {input.text()!r}") from None

    def __len__(self):
        return len(self._table)


def read_precomputed(path) -> list[dict]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            rec = json.loads(line)
            for key in ("seg_id", "direction", "log_probs"):
                if key not in rec:
                    raise ValueError(f"{path}:{lineno}: missing field {key!r}")
            records.append(rec)
    return records


# -- score files ---------------------------------------------------------------

def write_scores_jsonl(fh, scores: Iterable[SegmentScore]) -> None:
    for s in scores:
        fh.write(json.dumps({"seg_id": s.seg_id, "system": s.system, "metric": s.metric, "value": s.value}) + "\n")


def write_scores_tsv(fh, scores: Iterable[SegmentScore]) -> None:
    writer = csv.writer(fh, delimiter="\t", lineterminator="\n")
    for s in scores:
        writer.writerow([s.seg_id, s.system, s.metric, repr(s.value)])


def read_scores(path) -> list[SegmentScore]:
    """Read a JSON-lines score file (or its TSV mirror, by extension)."""
    out = []
    with open(path, encoding="utf-8") as fh:
        if str(path).endswith(".tsv"):
            for row in csv.reader(fh, delimiter="\t"):
                if row:
                    out.append(SegmentScore(row[0], row[1], float(row[3]), row[2]))
        else:
            for line in fh:
                if line.strip():
                    rec = json.loads(line)
                    out.append(SegmentScore(str(rec["seg_id"]), str(rec["system"]), float(rec["value"]),
                                            str(rec.get("metric", ""))))
    return out
