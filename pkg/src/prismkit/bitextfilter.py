"""Bitext cleaning: length, copy-overlap, windowed LID and margin filters.

The pipeline charges each dropped pair to the first rule that rejects it,
in the order non-empty, length, copy, lid, margin. Language identification
and margin scoring are pluggable callables; toy implementations are
provided for tests and small experiments.
"""

from __future__ import annotations

import json
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from typing import Callable, Iterable, Mapping, Sequence

from .textcore import TokenSequence, ngrams, tokenize

__all__ = [
    "FilterConfig",
    "FilterReport",
    "Malformed",
    "RULES",
    "length_filter",
    "copy_overlap",
    "lid_filter",
    "margin_filter",
    "prepend_lang_tag",
    "strip_lang_tag",
    "mirror_pairs",
    "filter_pair",
    "run_pipeline",
    "DictionaryLID",
    "length_ratio_margin",
    "read_pairs",
]

Pair = tuple[TokenSequence, TokenSequence]
Classifier = Callable[[Sequence[str]], str]
MarginScorer = Callable[[Pair], float]

RULES = ("malformed", "empty", "length", "copy", "lid", "margin", "margin_error")


@dataclass(frozen=True)
class FilterConfig:
    max_tokens: int = 200
    tri_overlap_max: float = 0.60
    four_overlap_max: float = 0.40
    lid_min_fraction: float = 0.50
    lid_window: int = 5
    margin_threshold: float = 1.05

    def __post_init__(self):
        for name in ("tri_overlap_max", "four_overlap_max", "lid_min_fraction"):
            v = getattr(self, name)
            if not 0.0 < v <= 1.0:
                raise ValueError(f"{name} must lie in (0, 1], got {v}")
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be >= 1")
        if self.lid_window < 1:
            raise ValueError("lid_window must be >= 1")

    @classmethod
    def from_json(cls, text: str) -> "FilterConfig":
        doc = json.loads(text)
        unknown = set(doc) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown filter config keys: {sorted(unknown)}")
        return cls(**doc)


@dataclass
class FilterReport:
    input_pairs: int = 0
    kept: int = 0
    dropped_by_rule: dict = field(default_factory=lambda: {r: 0 for r in RULES})

    @property
    def dropped(self) -> int:
        return sum(self.dropped_by_rule.values())

    def record(self, rule: str | None) -> None:
        self.input_pairs += 1
        if rule is None:
            self.kept += 1
        else:
            self.dropped_by_rule[rule] += 1

    def merge(self, other: "FilterReport") -> "FilterReport":
        merged = FilterReport(self.input_pairs + other.input_pairs, self.kept + other.kept)
        for rule in RULES:
            merged.dropped_by_rule[rule] = self.dropped_by_rule.get(rule, 0) + other.dropped_by_rule.get(rule, 0)
        return merged

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class Malformed:
    """An input line that could not be parsed into a pair."""

    lineno: int
    reason: str


def _exceeds(num: int, den: int, threshold: float) -> bool:
    # exact comparison so that e.g. 3/5 against 0.60 counts as equal
    return Fraction(num, den) > Fraction(str(threshold))


def length_filter(pair: Pair, max_tokens: int = 200) -> bool:
    """True to keep: neither side is longer than ``max_tokens``."""
    return all(len(side) <= max_tokens for side in pair)


def _overlap(src: Sequence[str], tgt: Sequence[str], n: int) -> tuple[int, int]:
    a, b = ngrams(src, n).as_set(), ngrams(tgt, n).as_set()
    if not a or not b:
        return 0, 1
    return len(a & b), min(len(a), len(b))


def copy_overlap(pair: Pair, tri_max: float = 0.60, four_max: float = 0.40) -> tuple[float, float, bool]:
    """Set overlap of 3-grams and 4-grams, normalized by the smaller side."""
    src, tgt = pair
    tri = _overlap(src, tgt, 3)
    four = _overlap(src, tgt, 4)
    keep = not (_exceeds(*tri, tri_max) or _exceeds(*four, four_max))
    return tri[0] / tri[1], four[0] / four[1], keep


def lid_filter(seq: Sequence[str], expected_lang: str, classifier: Classifier, window: int = 5,
               min_fraction: float = 0.5) -> tuple[bool, float]:
    tokens = list(seq)
    if len(tokens) <= window:
        windows = [tokens]
    else:
        windows = [tokens[i:i + window] for i in range(len(tokens) - window + 1)]
    hits = 0
    for w in windows:
        try:
            hits += classifier(w) == expected_lang
        except Exception:
            pass  # a classifier failure counts against the window
    keep = not Fraction(hits, len(windows)) < Fraction(str(min_fraction))
    return keep, hits / len(windows)


def margin_filter(pair: Pair, margin_scorer: MarginScorer, threshold: float = 1.05) -> bool:
    return margin_scorer(pair) >= threshold


def prepend_lang_tag(target: TokenSequence) -> TokenSequence:
    return target.with_tokens((f"<{target.lang}>",) + target.tokens)


def strip_lang_tag(target: TokenSequence) -> TokenSequence:
    if not target.tokens or target.tokens[0] != f"<{target.lang}>":
        raise ValueError(f"sequence does not start with the <{target.lang}> tag")
    return target.with_tokens(target.tokens[1:])


def mirror_pairs(pairs: Iterable[Pair]) -> list[Pair]:
    out = []
    for a, b in pairs:
        out.append((a, b))
        out.append((b, a))
    return out


def filter_pair(pair: Pair | Malformed, config: FilterConfig, classifier: Classifier | None,
                margin_scorer: MarginScorer) -> str | None:
    """Name of the first rule that drops ``pair``, or None to keep it.

    A ``classifier`` of None disables the LID rule.
    """
    if isinstance(pair, Malformed):
        return "malformed"
    src, tgt = pair
    if not len(src) or not len(tgt):
        return "empty"
    if not length_filter(pair, config.max_tokens):
        return "length"
    if not copy_overlap(pair, config.tri_overlap_max, config.four_overlap_max)[2]:
        return "copy"
    if classifier is not None:
        for side in pair:
            if not lid_filter(side, side.lang, classifier, config.lid_window, config.lid_min_fraction)[0]:
                return "lid"
    try:
        keep = margin_filter(pair, margin_scorer, config.margin_threshold)
    except Exception:
        return "margin_error"
    return None if keep else "margin"


def run_pipeline(config: FilterConfig, pairs: Iterable[Pair | Malformed], classifier: Classifier | None,
                 margin_scorer: MarginScorer, workers: int = 1) -> tuple[list[Pair], FilterReport]:
    pairs = list(pairs)

    def judge(p):
        return filter_pair(p, config, classifier, margin_scorer)

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            verdicts = list(pool.map(judge, pairs))
    else:
        verdicts = [judge(p) for p in pairs]
    report = FilterReport()
    kept = []
    for pair, rule in zip(pairs, verdicts):
        report.record(rule)
        if rule is None:
            kept.append(pair)
    return kept, report


# -- pluggable toys ------------------------------------------------------------

class DictionaryLID:
    """Majority vote of known words; unknown-only windows are ``"und"``.

    Ties between languages also give ``"und"``.
    """

    def __init__(self, lexicon: Mapping[str, str]):
        self.lexicon = dict(lexicon)

    @classmethod
    def from_wordlists(cls, wordlists: Mapping[str, Iterable[str]]) -> "DictionaryLID":
        return cls({w: lang for lang, words in wordlists.items() for w in words})

    def __call__(self, window: Sequence[str]) -> str:
        votes = Counter(self.lexicon[t] for t in window if t in self.lexicon)
        if not votes:
            return "und"
        (top, n), *rest = votes.most_common()
        if rest and rest[0][1] == n:
            return "und"
        return top


def length_ratio_margin(pair: Pair) -> float:
    """Stand-in for a LASER margin score: ``1 + 0.1 * shorter / longer``.

    Equal lengths give 1.10; a 2:1 length ratio sits exactly at 1.05.
    """
    a, b = len(pair[0]), len(pair[1])
    if max(a, b) == 0:
        raise ValueError("cannot score an empty pair")
    return 1.0 + 0.1 * min(a, b) / max(a, b)


# -- input ---------------------------------------------------------------------

def read_pairs(src_lang: str, tgt_lang: str, src_path=None, tgt_path=None, tsv_path=None,
               mode: str = "whitespace") -> list[Pair | Malformed]:
    """Load aligned files or a ``src<TAB>tgt`` file.

    Lines that are not valid UTF-8 or (for TSV) lack exactly one tab become
    :class:`Malformed` entries so the pipeline can account for them.
    """
    def lines(path):
        with open(path, "rb") as fh:
            data = fh.read()
        raw = data.split(b"\n")
        if raw and raw[-1] == b"":
            raw.pop()
        return raw

    def decode(b):
        return b.decode("utf-8").rstrip("\r")

    out = []
    if tsv_path is not None:
        for i, raw in enumerate(lines(tsv_path), 1):
            try:
                fields = decode(raw).split("\t")
            except UnicodeDecodeError:
                out.append(Malformed(i, "invalid UTF-8"))
                continue
            if len(fields) != 2:
                out.append(Malformed(i, f"expected 2 tab-separated fields, got {len(fields)}"))
                continue
            out.append((tokenize(fields[0], mode, src_lang), tokenize(fields[1], mode, tgt_lang)))
        return out
    src_lines, tgt_lines = lines(src_path), lines(tgt_path)
    if len(src_lines) != len(tgt_lines):
        raise ValueError(f"source has {len(src_lines)} lines but target has {len(tgt_lines)}")
    for i, (s, t) in enumerate(zip(src_lines, tgt_lines), 1):
        try:
            out.append((tokenize(decode(s), mode, src_lang), tokenize(decode(t), mode, tgt_lang)))
        except UnicodeDecodeError:
            out.append(Malformed(i, "invalid UTF-8"))
    return out
