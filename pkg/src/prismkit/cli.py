"""Command-line entry point: ``prismkit <command> ...``.

Every command writes its outputs through :class:`OutputSet`, which stages
files next to their destination and only renames them into place once the
whole command has succeeded, together with a ``.manifest.json`` per output.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
import tempfile
from concurrent.futures import ThreadPoolExecutor
from datetime import datetime, timezone
from pathlib import Path

from . import __version__
from .baselines import BleuConfig, chrf, sent_bleu
from .bitextfilter import (DictionaryLID, FilterConfig, length_ratio_margin, mirror_pairs, prepend_lang_tag,
                           read_pairs, run_pipeline)
from .copymodel import DEFAULT_PARAMS, CopyChannelModel
from .lm import NGramLM, train_lm
from .metricseval import (EvaluationError, bias_bins, grid, bootstrap_ci, copy_vs_beam_report, kendall_darr, read_darr,
                          read_system_judgments, significance_groups, system_means, system_pearson, top_k_systems,
                          weight_sweep)
from .scoring import (ForceDecodeResult, PrecomputedScorer, SegmentScore, lm_score, prism_ref, prism_src,
                      read_precomputed, read_scores, write_scores_jsonl, write_scores_tsv)
from .textcore import TOKENIZERS, read_segments

log = logging.getLogger("prismkit")


class UsageError(Exception):
    pass


class CommandError(Exception):
    pass


def worker_count() -> int:
    raw = os.environ.get("PRISMKIT_THREADS")
    if not raw:
        return 1
    try:
        return max(1, int(raw))
    except ValueError:
        raise UsageError(f"PRISMKIT_THREADS must be an integer, got {raw!r}") from None


def parallel_map(fn, items):
    """Map preserving input order, using up to PRISMKIT_THREADS workers."""
    workers = worker_count()
    if workers == 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(workers) as pool:
        return list(pool.map(fn, items))


class OutputSet:
    """Stage output files and publish them atomically, or not at all."""

    def __init__(self, command: str, args: argparse.Namespace):
        self.command = command
        self.args = args
        self._staged: list[tuple[str, Path]] = []

    def open(self, path) -> io.TextIOWrapper:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
        self._staged.append((tmp, path))
        return open(fd, "w", encoding="utf-8", newline="\n")

    def _manifest(self, path: Path) -> dict:
        config = {k: v for k, v in vars(self.args).items() if k != "func"}
        return {
            "command": self.command,
            "config": config,
            "seed": getattr(self.args, "seed", None),
            "inputs": {k: v for k, v in config.items() if k in INPUT_FLAGS and v is not None},
            "output": str(path),
            "outputs": [str(p) for _, p in self._staged],
            "tool_version": __version__,
            "created": datetime.now(timezone.utc).isoformat(),
        }

    def commit(self) -> None:
        for _, path in list(self._staged):
            if path.name.endswith(".manifest.json"):
                continue
            with self.open(path.with_name(path.name + ".manifest.json")) as fh:
                json.dump(self._manifest(path), fh, indent=2, default=str)
        for tmp, path in self._staged:
            os.replace(tmp, path)
        self._staged.clear()

    def discard(self) -> None:
        for tmp, _ in self._staged:
            try:
                os.unlink(tmp)
            except FileNotFoundError:
                pass
        self._staged.clear()


INPUT_FLAGS = {"sys", "ref", "src", "model", "scores", "judgments", "config", "tgt", "tsv", "fwd", "rev",
               "h_scores", "sbleu", "input", "r1", "corpus", "lexicon", "margin_scores"}


# -- score ---------------------------------------------------------------------

def _load_aligned(args, need: list[str]):
    segs = {}
    for name in ("sys", "ref", "src"):
        path = getattr(args, name)
        if name in need and path is None:
            raise UsageError(f"--{name} is required for --metric {args.metric}")
        if path is not None:
            lang = args.src_lang if name == "src" else args.lang
            segs[name] = read_segments(path, args.tokenize, lang)
    counts = {name: len(v) for name, v in segs.items()}
    if len(set(counts.values())) > 1:
        raise CommandError("input files are not line-aligned: " +
                           ", ".join(f"{k}={v} lines" for k, v in counts.items()))
    return segs


def _copymodel_for(args, segs):
    if args.model:
        return CopyChannelModel.load(args.model)
    log.info("no --model given; fitting a copy-channel background on the input segments")
    return CopyChannelModel.from_corpus([s for side in segs.values() for s in side], lang=None)


def cmd_score(args) -> None:
    metric, backend = args.metric, args.backend
    need = {"prism-ref": ["sys", "ref"], "prism-src": ["sys", "src"], "sentbleu": ["sys", "ref"],
            "chrf": ["sys", "ref"], "lm": ["sys"]}[metric]
    if metric in ("prism-ref", "prism-src") and backend == "lm":
        raise UsageError(f"--metric {metric} needs a conditional backend (copymodel or precomputed)")
    if metric == "lm" and backend != "lm":
        raise UsageError("--metric lm needs --backend lm")
    if backend in ("lm", "precomputed") and metric not in ("sentbleu", "chrf") and not args.model:
        raise UsageError(f"--backend {backend} needs --model")
    if Path(args.out).suffix == ".tsv":
        raise UsageError("--out names the JSON-lines file; the .tsv mirror is written next to it")
    segs = _load_aligned(args, need)
    sys_segs = segs["sys"]
    system = args.system or Path(args.sys).stem
    seg_ids = [str(i + 1) for i in range(len(sys_segs))]

    if metric == "sentbleu":
        cfg = BleuConfig(smoothing=args.bleu_smoothing)
        values = [sent_bleu(s, r, cfg) for s, r in zip(sys_segs, segs["ref"])]
    elif metric == "chrf":
        values = [chrf(s, r) for s, r in zip(sys_segs, segs["ref"])]
    elif metric == "lm":
        lm = NGramLM.load(args.model)
        values = parallel_map(lambda s: lm_score(lm, s), sys_segs)
    else:
        if backend == "precomputed":
            scorer = PrecomputedScorer.from_records(read_precomputed(args.model), sys_segs,
                                                    segs.get("ref"), segs.get("src"), seg_ids)
        else:
            scorer = _copymodel_for(args, segs)
        if metric == "prism-ref":
            values = parallel_map(lambda p: prism_ref(scorer, *p), list(zip(sys_segs, segs["ref"])))
        else:
            values = parallel_map(lambda p: prism_src(scorer, *p), list(zip(sys_segs, segs["src"])))

    scores = [SegmentScore(sid, system, v, metric) for sid, v in zip(seg_ids, values)]
    outputs = OutputSet("score", args)
    try:
        with outputs.open(args.out) as fh:
            write_scores_jsonl(fh, scores)
        with outputs.open(Path(args.out).with_suffix(".tsv")) as fh:
            write_scores_tsv(fh, scores)
        if args.model is None and backend == "copymodel" and metric.startswith("prism"):
            with outputs.open(Path(args.out).with_suffix(".model.json")) as fh:
                fh.write(_copymodel_for(args, segs).to_json())
        outputs.commit()
    finally:
        outputs.discard()


# -- eval ----------------------------------------------------------------------

def _scores_by_metric(paths) -> dict[str, dict[tuple[str, str], float]]:
    by_metric: dict[str, dict] = {}
    for path in paths:
        for s in read_scores(path):
            name = s.metric or Path(path).stem
            table = by_metric.setdefault(name, {})
            key = (s.seg_id, s.system)
            if key in table:
                raise CommandError(f"duplicate score for metric {name}, segment {s.seg_id}, system {s.system}")
            table[key] = s.value
    if not by_metric:
        raise CommandError("score files are empty")
    return by_metric


def cmd_eval(args) -> None:
    by_metric = _scores_by_metric(args.scores)
    report = {"level": args.level, "seed": args.seed, "resamples": args.bootstrap, "metrics": {}}
    workers = worker_count()
    point, cis = {}, {}
    if args.level == "segment":
        if args.top_k is not None:
            raise UsageError("--top-k applies to --level system only")
        judgments, rejected = read_darr(args.judgments)
        report["judgments"] = len(judgments)
        for name, scores in sorted(by_metric.items()):
            point[name] = kendall_darr(scores, judgments)
            if args.bootstrap:
                cis[name] = bootstrap_ci(lambda js, sc=scores: kendall_darr(sc, js), judgments,
                                         args.bootstrap, 0.95, args.seed, workers)
        stat = "tau"
    else:
        human, rejected = read_system_judgments(args.judgments)
        human = top_k_systems(human, args.top_k)
        report["systems"] = [j.system for j in human]
        report["top_k"] = args.top_k
        wanted = {j.system for j in human}
        for name, scores in sorted(by_metric.items()):
            scores = {key: v for key, v in scores.items() if key[1] in wanted}
            point[name] = system_pearson(system_means(scores), human)
            if args.bootstrap:
                seg_ids = sorted({seg for seg, _ in scores})
                cis[name] = bootstrap_ci(lambda segs, sc=scores: system_pearson(system_means(sc, segs), human),
                                         seg_ids, args.bootstrap, 0.95, args.seed, workers)
        stat = "r"
    if rejected:
        for lineno, why in rejected:
            log.warning("%s:%d: rejected judgment row %s", args.judgments, lineno, why)
    report["rejected_rows"] = [{"line": n, "reason": why} for n, why in rejected]
    for name in point:
        entry = {stat: point[name]}
        if name in cis:
            entry["ci"] = {"lo": cis[name].lo, "hi": cis[name].hi, "level": cis[name].level}
        report["metrics"][name] = entry
    if cis:
        report["significance_set"] = sorted(significance_groups(cis, point))
    else:
        best = max(point.values())
        report["significance_set"] = sorted(m for m, v in point.items() if v == best)
    _emit_json(args, "eval", report)


def _emit_json(args, command, doc) -> None:
    if args.out is None:
        json.dump(doc, sys.stdout, indent=2)
        sys.stdout.write("\n")
        return
    outputs = OutputSet(command, args)
    try:
        with outputs.open(args.out) as fh:
            json.dump(doc, fh, indent=2)
            fh.write("\n")
        outputs.commit()
    finally:
        outputs.discard()


# -- filter --------------------------------------------------------------------

def _read_lexicon(path) -> DictionaryLID:
    lexicon = {}
    with open(path, encoding="utf-8") as fh:
        for row in csv.reader(fh, delimiter="\t"):
            if len(row) == 2:
                lexicon[row[0]] = row[1]
    return DictionaryLID(lexicon)


def _read_margins(path) -> list[float]:
    with open(path, encoding="utf-8") as fh:
        return [float(line) for line in fh if line.strip()]


def cmd_filter(args) -> None:
    config = FilterConfig()
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            config = FilterConfig.from_json(fh.read())
    if args.tsv is None and (args.src is None or args.tgt is None):
        raise UsageError("give either --tsv or both --src and --tgt")
    try:
        pairs = read_pairs(args.src_lang, args.tgt_lang, args.src, args.tgt, args.tsv, args.tokenize)
    except ValueError as exc:
        raise CommandError(str(exc)) from None

    classifier = None
    if args.lexicon:
        classifier = _read_lexicon(args.lexicon)
    else:
        log.info("no --lexicon given; LID filter disabled")

    if args.margin_scores:
        margins = _read_margins(args.margin_scores)
        if len(margins) != len(pairs):
            raise CommandError(f"{len(margins)} margin scores for {len(pairs)} pairs")
        by_pair = {id(p): m for p, m in zip(pairs, margins)}
        margin_scorer = _LookupMargin(by_pair)
    else:
        margin_scorer = length_ratio_margin

    kept, report = run_pipeline(config, pairs, classifier, margin_scorer, worker_count())
    if args.mirror:
        kept = mirror_pairs(kept)
    outputs = OutputSet("filter", args)
    try:
        prefix = args.out_prefix
        with outputs.open(f"{prefix}.{args.src_lang}") as fs, outputs.open(f"{prefix}.{args.tgt_lang}") as ft:
            for a, b in kept:
                if args.tag_target:
                    b = prepend_lang_tag(b)
                fs.write(a.text() + "\n")
                ft.write(b.text() + "\n")
        with outputs.open(f"{prefix}.report.json") as fh:
            json.dump({**report.to_dict(), "config": vars(config)}, fh, indent=2)
            fh.write("\n")
        outputs.commit()
    finally:
        outputs.discard()


class _LookupMargin:
    """Margin scores supplied per input line, looked up by pair identity."""

    def __init__(self, by_pair: dict):
        self.by_pair = by_pair

    def __call__(self, pair) -> float:
        return self.by_pair[id(pair)]


# -- sweep ---------------------------------------------------------------------

def _read_logprob_table(path) -> dict[tuple[str, str], ForceDecodeResult]:
    table = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            rec = json.loads(line)
            try:
                key = (str(rec["seg_id"]), str(rec["system"]))
                table[key] = ForceDecodeResult(tuple(rec["log_probs"]))
            except (KeyError, ValueError) as exc:
                raise CommandError(f"{path}:{lineno}: {exc}") from None
    return table


def cmd_sweep(args) -> None:
    try:
        grid(args.step)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    judgments, rejected = read_darr(args.judgments)
    for lineno, why in rejected:
        log.warning("%s:%d: rejected judgment row %s", args.judgments, lineno, why)
    result = weight_sweep(_read_logprob_table(args.fwd), _read_logprob_table(args.rev), judgments,
                          args.normalization, args.step)
    outputs = OutputSet("sweep", args)
    try:
        with outputs.open(args.out) as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["w", "tau"])
            for w, tau in result.curve:
                writer.writerow([f"{w:.6g}", repr(tau)])
            writer.writerow([])
            writer.writerow(["argmax_w", f"{result.best_w:.6g}"])
            writer.writerow(["max_tau", repr(result.best_tau)])
        outputs.commit()
    finally:
        outputs.discard()
    print(f"argmax w = {result.best_w:g} (tau = {result.best_tau:.4f})")


# -- bias ----------------------------------------------------------------------

def cmd_bias(args) -> None:
    h = {(s.seg_id, s.system): s.value for s in read_scores(args.h_scores)}
    b = {(s.seg_id, s.system): s.value for s in read_scores(args.sbleu)}
    if set(h) != set(b):
        raise CommandError(f"H scores cover {len(h)} (segment, system) pairs but sentBLEU covers {len(b)}; "
                           f"{len(set(h) ^ set(b))} pairs differ")
    keys = sorted(h)
    bins = bias_bins([h[k] for k in keys], [b[k] for k in keys], args.bins)
    outputs = OutputSet("bias", args)
    try:
        with outputs.open(args.out) as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["bin_lo", "bin_hi", "mean_h", "count", "fraction"])
            for row in bins:
                writer.writerow([f"{row.lo:g}", f"{row.hi:g}", "" if row.mean_h is None else repr(row.mean_h),
                                 row.count, repr(float(row.fraction))])
        outputs.commit()
    finally:
        outputs.discard()


# -- generate ------------------------------------------------------------------

def cmd_generate(args) -> None:
    if not args.model:
        raise UsageError("--model is required")
    if args.r1 and args.report != "copy-vs-beam":
        raise UsageError("--r1 only makes sense with --report copy-vs-beam")
    model = CopyChannelModel.load(args.model)
    inputs = read_segments(args.input, args.tokenize, args.lang)
    outputs = OutputSet("generate", args)
    try:
        if args.report == "copy-vs-beam":
            r1 = read_segments(args.r1, args.tokenize, args.lang) if args.r1 else None
            if r1 is not None and len(r1) != len(inputs):
                raise CommandError(f"--input has {len(inputs)} lines but --r1 has {len(r1)}")
            report = copy_vs_beam_report(model, inputs, r1, args.beam, args.max_len)
            generated = report.pop("outputs")
            if report["skipped"]:
                raise CommandError(f"beam search failed on {report['skipped']} segment(s)")
            with outputs.open(Path(args.out).with_suffix(".report.json")) as fh:
                json.dump(report, fh, indent=2)
                fh.write("\n")
        else:
            generated = parallel_map(lambda x: model.beam_search(x, args.beam, args.max_len), inputs)
        with outputs.open(args.out) as fh:
            for seq in generated:
                fh.write(seq.text() + "\n")
        outputs.commit()
    finally:
        outputs.discard()


# -- training helpers ----------------------------------------------------------

def cmd_train_copymodel(args) -> None:
    corpus = read_segments(args.corpus, args.tokenize, args.lang)
    params = {k: getattr(args, k) for k in DEFAULT_PARAMS}
    lang = None if args.lang == "und" else args.lang
    model = CopyChannelModel.from_corpus(corpus, **params, lang=lang)
    outputs = OutputSet("train-copymodel", args)
    try:
        with outputs.open(args.out) as fh:
            fh.write(model.to_json())
        outputs.commit()
    finally:
        outputs.discard()


def cmd_train_lm(args) -> None:
    corpus = read_segments(args.corpus, args.tokenize, args.lang)
    if not corpus:
        raise CommandError(f"{args.corpus} is empty")
    lm = train_lm(corpus, args.order, args.k)
    outputs = OutputSet("train-lm", args)
    try:
        with outputs.open(args.out) as fh:
            fh.write(lm.to_json())
        outputs.commit()
    finally:
        outputs.discard()


# -- parser --------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="prismkit", description="Force-decoding MT metrics and evaluation tools.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def text_opts(p):
        p.add_argument("--tokenize", choices=sorted(TOKENIZERS), default="whitespace")
        p.add_argument("--lang", default="und", help="language tag of the target-side text")

    p = sub.add_parser("score", help="score system output segment by segment")
    p.add_argument("--metric", required=True, choices=["prism-ref", "prism-src", "sentbleu", "chrf", "lm"])
    p.add_argument("--backend", default="copymodel", choices=["copymodel", "lm", "precomputed"])
    p.add_argument("--sys", required=True)
    p.add_argument("--ref")
    p.add_argument("--src")
    p.add_argument("--src-lang", default="und")
    p.add_argument("--model", help="copy-model JSON, LM JSON, or precomputed log-prob JSONL (per --backend)")
    p.add_argument("--system", help="system name written with each score (default: --sys file stem)")
    p.add_argument("--bleu-smoothing", choices=["floor", "add-one", "none"], default="floor")
    p.add_argument("--out", required=True)
    text_opts(p)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("eval", help="correlate metric scores with human judgments")
    p.add_argument("--level", choices=["segment", "system"], default="segment")
    p.add_argument("--scores", nargs="+", required=True)
    p.add_argument("--judgments", required=True)
    p.add_argument("--bootstrap", type=int, default=1000, help="number of resamples (0 disables CIs)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--top-k", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("filter", help="clean a bitext")
    p.add_argument("--config")
    p.add_argument("--src")
    p.add_argument("--tgt")
    p.add_argument("--tsv")
    p.add_argument("--src-lang", required=True)
    p.add_argument("--tgt-lang", required=True)
    p.add_argument("--lexicon", help="TSV word<TAB>lang for the dictionary LID (omit to skip LID)")
    p.add_argument("--margin-scores", help="one precomputed margin score per input line")
    p.add_argument("--mirror", action="store_true", help="also emit every kept pair reversed")
    p.add_argument("--tag-target", action="store_true", help="prepend <lang> to every target line")
    p.add_argument("--tokenize", choices=sorted(TOKENIZERS), default="whitespace")
    p.add_argument("--out-prefix", required=True)
    p.set_defaults(func=cmd_filter)

    p = sub.add_parser("sweep", help="sweep the forward/reverse weight")
    p.add_argument("--normalization", choices=["H", "G"], default="H")
    p.add_argument("--fwd", required=True)
    p.add_argument("--rev", required=True)
    p.add_argument("--judgments", required=True)
    p.add_argument("--step", type=float, default=0.05)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("bias", help="mean H per sentBLEU bin")
    p.add_argument("--h-scores", required=True)
    p.add_argument("--sbleu", required=True)
    p.add_argument("--bins", type=int, default=10)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_bias)

    p = sub.add_parser("generate", help="beam-search paraphrases from a copy model")
    p.add_argument("--model")
    p.add_argument("--input", required=True)
    p.add_argument("--beam", type=int, default=5)
    p.add_argument("--max-len", type=int)
    p.add_argument("--report", choices=["none", "copy-vs-beam"], default="none")
    p.add_argument("--r1")
    p.add_argument("--out", required=True)
    text_opts(p)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train-copymodel", help="fit a copy-channel model's background on a corpus")
    p.add_argument("--corpus", required=True)
    for name, default in DEFAULT_PARAMS.items():
        p.add_argument(f"--{name.replace('_', '-')}", dest=name, type=float, default=default)
    p.add_argument("--out", required=True)
    text_opts(p)
    p.set_defaults(func=cmd_train_copymodel)

    p = sub.add_parser("train-lm", help="train an add-k n-gram language model")
    p.add_argument("--corpus", required=True)
    p.add_argument("--order", type=int, default=3)
    p.add_argument("--k", type=float, default=0.1)
    p.add_argument("--out", required=True)
    text_opts(p)
    p.set_defaults(func=cmd_train_lm)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(levelname)s: %(message)s")
    try:
        args.func(args)
    except UsageError as exc:
        parser.error(str(exc))
    except (CommandError, EvaluationError, ValueError, KeyError, OSError) as exc:
        print(f"prismkit {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
