"""Force-decoding MT metrics (Prism-ref / Prism-src) with a desk-scale copy-channel paraphraser."""

__version__ = "0.1.0"

from .textcore import TokenSequence, tokenize, ngrams  # noqa: E402
from .scoring import (  # noqa: E402
    ForceDecodeResult,
    avg_log_prob,
    force_decode,
    prism_ref,
    prism_src,
    seq_log_prob,
)
from .copymodel import CopyChannelModel  # noqa: E402
from .lm import NGramLM, train_lm  # noqa: E402

__all__ = [
    "TokenSequence",
    "tokenize",
    "ngrams",
    "ForceDecodeResult",
    "avg_log_prob",
    "force_decode",
    "prism_ref",
    "prism_src",
    "seq_log_prob",
    "CopyChannelModel",
    "NGramLM",
    "train_lm",
]
