"""Hand-built filter corpus: one pair per rule plus three keepers."""

from prismkit.bitextfilter import DictionaryLID, Malformed, length_ratio_margin
from prismkit.textcore import TokenSequence

EN = "the cat sat on mat dog ran home".split()
DE = "die katze sass auf matte hund lief nach hause".split()

LID = DictionaryLID.from_wordlists({"en": EN, "de": DE})


def en(text):
    return TokenSequence.of(text, "en")


def de(text):
    return TokenSequence.of(text, "de")


def margin(pair):
    if "!" in pair[0].tokens:
        raise RuntimeError("scorer failed")
    return length_ratio_margin(pair)


FILTER_PAIRS = [
    (en("the cat sat on the mat"), de("die katze sass auf der matte")),              # kept
    Malformed(2, "invalid UTF-8"),                                                    # malformed
    (en(""), de("die katze")),                                                        # empty
    (en(" ".join(["the"] * 201)), de(" ".join(["die"] * 201))),                       # length
    (en("the cat sat on the mat"), de("the cat sat on the mat")),                     # copy
    (en("the cat sat on the mat"), de("the dog ran home")),                           # lid
    (en("the cat sat on the mat home"), de("die katze")),                             # margin
    (en("the dog ran home !"), de("der hund lief nach hause")),                       # margin_error
    (en(" ".join((EN * 25)[:200])), de(" ".join((DE * 25)[:200]))),                   # kept: 200 tokens
    (en("the dog ran home to me"), de("der hund lief")),                              # kept: margin exactly 1.05
]

EXPECTED_RULES = [None, "malformed", "empty", "length", "copy", "lid", "margin", "margin_error", None, None]
