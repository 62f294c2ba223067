"""WMT-style metric evaluation: DARR Kendall tau, Pearson r, bootstrap CIs.

Also holds the analyses built on those statistics: the directional weight
sweep, H-versus-sentBLEU bias bins, and the copy-versus-beam report for a
copy-channel paraphraser.
"""

from __future__ import annotations

import csv
import logging
import math
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from fractions import Fraction
from statistics import fmean
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .baselines import BleuConfig, corpus_bleu
from .copymodel import BeamSearchError, CopyChannelModel
from .scoring import ForceDecodeResult, avg_log_prob, combine_directional, seq_log_prob
from .textcore import TokenSequence

__all__ = [
    "RelativeRanking",
    "SystemJudgment",
    "ConfidenceInterval",
    "EvaluationError",
    "kendall_darr",
    "pearson",
    "bootstrap_ci",
    "significance_groups",
    "system_means",
    "top_k_systems",
    "system_pearson",
    "SweepResult",
    "weight_sweep",
    "grid",
    "BiasBin",
    "bias_bins",
    "copy_vs_beam_report",
    "read_darr",
    "read_system_judgments",
]

log = logging.getLogger(__name__)


class EvaluationError(ValueError):
    pass


@dataclass(frozen=True)
class RelativeRanking:
    seg_id: str
    better: str
    worse: str

    def __post_init__(self):
        if self.better == self.worse:
            raise ValueError(f"judgment for segment {self.seg_id} compares system {self.better!r} with itself")


@dataclass(frozen=True)
class SystemJudgment:
    system: str
    human_score: float

    def __post_init__(self):
        if not math.isfinite(self.human_score):
            raise ValueError(f"human score for {self.system} is not finite")


@dataclass(frozen=True)
class ConfidenceInterval:
    lo: float
    hi: float
    level: float = 0.95
    resamples: int = 1000

    def __post_init__(self):
        if self.lo > self.hi:
            raise ValueError(f"interval lower bound {self.lo} exceeds upper bound {self.hi}")

    def overlaps(self, other: "ConfidenceInterval") -> bool:
        return self.lo <= other.hi and other.lo <= self.hi


# -- correlation statistics ----------------------------------------------------

def kendall_darr(scores: Mapping[tuple[str, str], float], judgments: Iterable[RelativeRanking]) -> float:
    """Kendall tau-like formulation over relative rankings.

    A judgment is concordant only if the metric scores the human-preferred
    system strictly higher; metric ties count as discordant.
    """
    concordant = discordant = 0
    for j in judgments:
        try:
            better = scores[(j.seg_id, j.better)]
            worse = scores[(j.seg_id, j.worse)]
        except KeyError as exc:
            raise EvaluationError(f"no metric score for (segment, system) {exc.args[0]!r}") from None
        if better > worse:
            concordant += 1
        else:
            discordant += 1
    if concordant + discordant == 0:
        raise EvaluationError("no judgments to evaluate")
    return (concordant - discordant) / (concordant + discordant)


def pearson(xs: Sequence[float], ys: Sequence[float]) -> float:
    x = np.asarray(xs, dtype=np.float64)
    y = np.asarray(ys, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise EvaluationError(f"need two equal-length vectors, got {x.shape} and {y.shape}")
    if len(x) < 2:
        raise EvaluationError("Pearson correlation needs at least two points")
    dx, dy = x - x.mean(), y - y.mean()
    sxx, syy = float(dx @ dx), float(dy @ dy)
    if sxx == 0.0 or syy == 0.0:
        raise EvaluationError("Pearson correlation is undefined for a constant vector")
    r = float(dx @ dy) / math.sqrt(sxx * syy)
    return max(-1.0, min(1.0, r))


def bootstrap_ci(evaluator: Callable[[list], float], data: Sequence, resamples: int = 1000,
                 level: float = 0.95, seed: int = 0, workers: int = 1) -> ConfidenceInterval:
    """Percentile bootstrap interval for ``evaluator(data)``.

    Resample ``i`` draws from its own generator seeded with ``(seed, i, attempt)``,
    so results do not depend on ``workers``. A resample on which the
    evaluator raises is redrawn; after ``10 * resamples`` attempts in total
    the bootstrap gives up.
    """
    data = list(data)
    if not data:
        raise EvaluationError("cannot bootstrap an empty data set")
    if resamples < 1:
        raise ValueError("resamples must be >= 1")
    if not 0.0 < level < 1.0:
        raise ValueError("level must lie in (0, 1)")
    n = len(data)
    max_failures = 9 * resamples  # 10 * resamples attempts in total
    failures = 0

    def one(i):
        attempt = 0
        while True:
            rng = np.random.default_rng([seed, i, attempt])
            idx = rng.integers(0, n, size=n)
            try:
                return evaluator([data[j] for j in idx]), attempt
            except (ValueError, ZeroDivisionError, ArithmeticError):
                attempt += 1
                if attempt > max_failures:
                    return None, attempt

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(one, range(resamples)))
    else:
        results = [one(i) for i in range(resamples)]
    stats = []
    for value, retries in results:
        failures += retries
        if value is None or failures > max_failures:
            raise EvaluationError(f"evaluator failed on {failures} bootstrap draws; giving up")
        stats.append(value)
    alpha = (1.0 - level) / 2.0
    lo, hi = np.percentile(np.array(stats), [100.0 * alpha, 100.0 * (1.0 - alpha)])
    return ConfidenceInterval(float(lo), float(max(lo, hi)), level, resamples)


def significance_groups(intervals: Mapping[str, ConfidenceInterval], point: Mapping[str, float]) -> set[str]:
    """Metrics statistically tied with the best one.

    Starts from the top point estimate(s) and repeatedly adds any metric
    whose interval overlaps that of a metric already in the group.
    """
    if not point:
        raise EvaluationError("no metrics given")
    if set(intervals) != set(point):
        raise EvaluationError("intervals and point estimates cover different metrics")
    best = max(point.values())
    group = {m for m, v in point.items() if v == best}
    frontier = list(group)
    while frontier:
        m = frontier.pop()
        for other, ci in intervals.items():
            if other not in group and ci.overlaps(intervals[m]):
                group.add(other)
                frontier.append(other)
    return group


# -- system level --------------------------------------------------------------

def system_means(scores: Mapping[tuple[str, str], float], seg_ids: Iterable[str] | None = None) -> dict[str, float]:
    """Average segment scores per system, optionally over a (multi)set of segments."""
    per_seg = defaultdict(dict)
    for (seg, sys), v in scores.items():
        per_seg[seg][sys] = v
    if seg_ids is None:
        seg_ids = list(per_seg)
    sums, counts = defaultdict(float), defaultdict(int)
    for seg in seg_ids:
        for sys, v in per_seg[seg].items():
            sums[sys] += v
            counts[sys] += 1
    return {sys: sums[sys] / counts[sys] for sys in sums}


def top_k_systems(human: Sequence[SystemJudgment], k: int | None) -> list[SystemJudgment]:
    ranked = sorted(human, key=lambda j: (-j.human_score, j.system))
    return ranked if k is None else ranked[:k]


def system_pearson(metric: Mapping[str, float], human: Sequence[SystemJudgment]) -> float:
    missing = [j.system for j in human if j.system not in metric]
    if missing:
        raise EvaluationError(f"no metric score for systems {missing}")
    return pearson([metric[j.system] for j in human], [j.human_score for j in human])


# -- weight sweep --------------------------------------------------------------

@dataclass(frozen=True)
class SweepResult:
    curve: tuple[tuple[float, float], ...]
    best_w: float
    best_tau: float


def grid(step: float) -> list[float]:
    steps = round(1.0 / step)
    if step <= 0 or steps < 1 or abs(steps * step - 1.0) > 1e-9:
        raise ValueError(f"grid step {step} does not divide 1 evenly")
    return [i / steps for i in range(steps + 1)]


def weight_sweep(fwd: Mapping[tuple[str, str], ForceDecodeResult], rev: Mapping[tuple[str, str], ForceDecodeResult],
                 judgments: Sequence[RelativeRanking], normalization: str = "H",
                 grid_step: float = 0.05) -> SweepResult:
    """Segment-level tau of ``w * fwd + (1 - w) * rev`` over a grid of ``w``.

    Ties in tau go to the weight closest to 0.5.
    """
    reduce = {"H": avg_log_prob, "G": seq_log_prob}.get(normalization)
    if reduce is None:
        raise ValueError(f"normalization must be 'H' or 'G', got {normalization!r}")
    if set(fwd) != set(rev):
        raise EvaluationError("forward and reverse scores cover different (segment, system) pairs")
    f = {key: reduce(r) for key, r in fwd.items()}
    b = {key: reduce(r) for key, r in rev.items()}
    curve = []
    for w in grid(grid_step):
        combined = {key: combine_directional(w, f[key], b[key]) for key in f}
        curve.append((w, kendall_darr(combined, judgments)))
    best_w, best_tau = min(curve, key=lambda wt: (-wt[1], abs(wt[0] - 0.5), wt[0]))
    return SweepResult(tuple(curve), best_w, best_tau)


# -- bias analysis -------------------------------------------------------------

@dataclass(frozen=True)
class BiasBin:
    lo: float
    hi: float
    count: int
    fraction: Fraction
    mean_h: float | None


def bias_bins(h_values: Sequence[float], sbleu_values: Sequence[float], n_bins: int = 10) -> list[BiasBin]:
    """Mean H within uniform-width sentBLEU bins over [0, 100].

    The last bin is closed so that sentBLEU 100 lands in it. Fractions are
    exact rationals; with no data every fraction is 0.
    """
    if len(h_values) != len(sbleu_values):
        raise EvaluationError(f"{len(h_values)} H values but {len(sbleu_values)} sentBLEU values")
    if n_bins < 1:
        raise ValueError("n_bins must be >= 1")
    members = [[] for _ in range(n_bins)]
    for h, b in zip(h_values, sbleu_values):
        if not 0.0 <= b <= 100.0:
            raise EvaluationError(f"sentBLEU {b} outside [0, 100]")
        members[min(int(b * n_bins / 100.0), n_bins - 1)].append(h)
    total = len(h_values)
    width = 100.0 / n_bins
    return [
        BiasBin(i * width, (i + 1) * width, len(hs), Fraction(len(hs), total) if total else Fraction(0),
                fmean(hs) if hs else None)
        for i, hs in enumerate(members)
    ]


# -- copy vs beam --------------------------------------------------------------

def copy_vs_beam_report(model: CopyChannelModel, inputs: Sequence[TokenSequence],
                        human_paraphrases: Sequence[TokenSequence] | None = None,
                        beam_width: int = 5, max_len: int | None = None) -> dict:
    """Average H of the beam output, a copy, and (optionally) a human paraphrase, all given the input.

    Segments where beam search fails are skipped for every column.
    """
    if not inputs:
        raise EvaluationError("no inputs")
    if human_paraphrases is not None and len(human_paraphrases) != len(inputs):
        raise EvaluationError(f"{len(inputs)} inputs but {len(human_paraphrases)} paraphrases")
    h_bs, h_copy, h_r1, outputs, used = [], [], [], [], []
    skipped = 0
    for i, r0 in enumerate(inputs):
        try:
            bs = model.beam_search(r0, beam_width, max_len)
        except BeamSearchError:
            log.warning("beam search failed on segment %d; skipping", i + 1)
            skipped += 1
            continue
        outputs.append(bs)
        used.append(r0)
        h_bs.append(avg_log_prob(model.force_decode_copy(r0, bs)))
        h_copy.append(avg_log_prob(model.force_decode_copy(r0, r0)))
        if human_paraphrases is not None:
            h_r1.append(avg_log_prob(model.force_decode_copy(r0, human_paraphrases[i])))
    report = {
        "segments": len(inputs),
        "skipped": skipped,
        "beam_width": beam_width,
        "H(BS|r0)": fmean(h_bs) if h_bs else None,
        "H(r0|r0)": fmean(h_copy) if h_copy else None,
    }
    if human_paraphrases is not None:
        report["H(r1|r0)"] = fmean(h_r1) if h_r1 else None
    report["BLEU(BS,r0)"] = corpus_bleu(outputs, used, BleuConfig(smoothing="none")) if used else None
    report["outputs"] = outputs
    return report


# -- file formats --------------------------------------------------------------

def read_darr(path) -> tuple[list[RelativeRanking], list[tuple[int, str]]]:
    """Read ``seg_id<TAB>better<TAB>worse`` rows; malformed rows are returned, not raised."""
    judgments, rejected = [], []
    with open(path, encoding="utf-8", newline="") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\r\n")
            if not line.strip():
                continue
            fields = line.split("\t")
            try:
                if len(fields) != 3 or not all(f.strip() for f in fields):
                    raise ValueError("expected 3 non-empty tab-separated fields")
                judgments.append(RelativeRanking(*(f.strip() for f in fields)))
            except ValueError as exc:
                rejected.append((lineno, f"{line!r}: {exc}"))
    return judgments, rejected


def read_system_judgments(path) -> tuple[list[SystemJudgment], list[tuple[int, str]]]:
    judgments, rejected = [], []
    with open(path, encoding="utf-8", newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh, delimiter="\t"), 1):
            if not row or not "".join(row).strip():
                continue
            try:
                if len(row) != 2:
                    raise ValueError("expected 2 tab-separated fields")
                judgments.append(SystemJudgment(row[0].strip(), float(row[1])))
            except ValueError as exc:
                rejected.append((lineno, f"{row!r}: {exc}"))
    return judgments, rejected
