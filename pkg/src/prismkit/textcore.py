"""Token sequences, tokenizers and n-gram bags shared by every other module."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Iterable, Protocol

__all__ = [
    "TokenSequence",
    "NGramBag",
    "Tokenizer",
    "WhitespaceTokenizer",
    "CharacterTokenizer",
    "TOKENIZERS",
    "tokenize",
    "ngrams",
    "read_segments",
    "write_segments",
]

DEFAULT_LANG = "und"


@dataclass(frozen=True)
class TokenSequence:
    """A tokenized sentence plus its language tag.

    No EOS symbol is stored; scoring code appends it.
    """

    tokens: tuple[str, ...]
    lang: str = DEFAULT_LANG

    def __post_init__(self):
        if not isinstance(self.tokens, tuple):
            object.__setattr__(self, "tokens", tuple(self.tokens))
        if not self.lang or self.lang != self.lang.lower():
            raise ValueError(f"language tag must be a non-empty lowercase string, got {self.lang!r}")

    @classmethod
    def of(cls, tokens: Iterable[str] | str, lang: str = DEFAULT_LANG) -> "TokenSequence":
        """Build from a token list, or from a string split on whitespace."""
        if isinstance(tokens, str):
            tokens = tokens.split()
        return cls(tuple(tokens), lang)

    def __len__(self):
        return len(self.tokens)

    def __iter__(self):
        return iter(self.tokens)

    def __getitem__(self, i):
        return self.tokens[i]

    def text(self) -> str:
        return " ".join(self.tokens)

    def with_tokens(self, tokens: Iterable[str]) -> "TokenSequence":
        return TokenSequence(tuple(tokens), self.lang)


@dataclass(frozen=True)
class NGramBag:
    """Multiset of n-token tuples."""

    n: int
    grams: Counter = field(default_factory=Counter)

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("n-gram order must be >= 1")

    def total(self) -> int:
        return sum(self.grams.values())

    def as_set(self) -> frozenset:
        return frozenset(self.grams)

    def __len__(self):
        return len(self.grams)

    def __getitem__(self, gram):
        return self.grams[gram]


class Tokenizer(Protocol):
    def __call__(self, text: str) -> list[str]: ...


class WhitespaceTokenizer:
    """Split on runs of Unicode whitespace."""

    def __call__(self, text: str) -> list[str]:
        return text.split()


class CharacterTokenizer:
    """One token per code point, whitespace dropped."""

    def __call__(self, text: str) -> list[str]:
        return [ch for ch in text if not ch.isspace()]


TOKENIZERS: dict[str, Callable[[], Tokenizer]] = {
    "whitespace": WhitespaceTokenizer,
    "character": CharacterTokenizer,
}


def tokenize(text: str, mode: str = "whitespace", lang: str = DEFAULT_LANG) -> TokenSequence:
    try:
        tokenizer = TOKENIZERS[mode]()
    except KeyError:
        raise ValueError(f"unknown tokenizer mode {mode!r}; choose from {sorted(TOKENIZERS)}") from None
    return TokenSequence(tuple(tokenizer(text)), lang)


def ngrams(seq: TokenSequence | Iterable[str], n: int) -> NGramBag:
    tokens = tuple(seq)
    if n < 1:
        raise ValueError("n-gram order must be >= 1")
    return NGramBag(n, Counter(tokens[i:i + n] for i in range(len(tokens) - n + 1)))


def read_segments(path, mode: str = "whitespace", lang: str = DEFAULT_LANG) -> list[TokenSequence]:
    """Read a one-segment-per-line UTF-8 file.

    Only LF terminates a segment; a trailing CR is kept as part of the text
    and will be dropped by the whitespace tokenizer.
    """
    with open(path, encoding="utf-8", newline="\n") as fh:
        text = fh.read()
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    return [tokenize(line, mode, lang) for line in lines]


def write_segments(path, seqs: Iterable[TokenSequence]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for seq in seqs:
            fh.write(seq.text() + "\n")
