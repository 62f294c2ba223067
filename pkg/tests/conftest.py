import math
import sys
from pathlib import Path

import pytest

from prismkit.copymodel import CopyChannelModel
from prismkit.scoring import ForceDecodeResult

sys.path.insert(0, str(Path(__file__).parent))


class FixedScorer:
    """Returns the same log probabilities for every request."""

    def __init__(self, log_probs):
        self.result = ForceDecodeResult(tuple(log_probs))
        self.calls = []

    def force_decode(self, input, output, target_lang=None):
        self.calls.append((tuple(input), tuple(output), target_lang))
        return self.result


class IdentityScorer:
    """Log prob 0 per token for an exact copy, ln(0.5) per token otherwise."""

    def force_decode(self, input, output, target_lang=None):
        lp = 0.0 if tuple(input) == tuple(output) else math.log(0.5)
        return ForceDecodeResult((lp,) * (len(output) + 1))


@pytest.fixture
def two_position_scorer():
    # two scored positions: one word and EOS
    return FixedScorer([math.log(0.3), math.log(0.6)])


@pytest.fixture
def identity_scorer():
    return IdentityScorer()


@pytest.fixture
def abc_model():
    return CopyChannelModel.from_corpus([list("abcab"), list("cba")])


# -- acceptance summary --------------------------------------------------------

_acceptance = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(number, title): end-to-end acceptance criterion")


def pytest_runtest_makereport(item, call):
    marker = item.get_closest_marker("acceptance")
    if marker is None or call.when not in ("setup", "call"):
        return
    number, title = marker.args
    failed = call.excinfo is not None
    if call.when == "call" or failed:
        _acceptance[number] = (title, "FAIL" if failed else "PASS")


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_acceptance):
        title, verdict = _acceptance[number]
        terminalreporter.write_line(f"criterion {number:2d}: {verdict}  {title}")
