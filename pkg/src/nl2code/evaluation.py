"""Translation metrics, quality binning, parsability and paired bootstrap testing."""
from __future__ import annotations

import ast
import json
import math
import os
import shlex
import shutil
import subprocess
import warnings
from collections import Counter
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import EnvironmentProblem, UsageError
from .tokenizers.code import code_tokenize

PARSE_CMD_ENV = "NL2CODE_PARSE_CMD"


# ------------------------------------------------------------------------ BLEU

@dataclass
class BleuBreakdown:
    p_n: list
    c: int
    r: int
    bp: float
    score: float
    smoothing: str = "none"
    degenerate: bool = False


def ngrams(tokens, n):
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def _closest_ref_len(c, refs):
    return min((len(r) for r in refs), key=lambda L: (abs(L - c), L))


def bleu_stats(hyp, refs, max_n=4):
    """Per-sentence sufficient statistics: [c, r, match_1, total_1, ..., match_N, total_N]."""
    refs = [list(r) for r in refs]
    hyp = list(hyp)
    c = len(hyp)
    out = [c, _closest_ref_len(c, refs) if refs else 0]
    for n in range(1, max_n + 1):
        counts = ngrams(hyp, n)
        max_ref = Counter()
        for r in refs:
            for g, k in ngrams(r, n).items():
                if k > max_ref[g]:
                    max_ref[g] = k
        out.append(sum(min(k, max_ref[g]) for g, k in counts.items()))
        out.append(max(c - n + 1, 0))
    return out


def _bleu_from_stats(stats, max_n, smoothing="none"):
    c, r = stats[0], stats[1]
    p = []
    logs = []
    for n in range(1, max_n + 1):
        match, total = stats[2 * n], stats[2 * n + 1]
        if total == 0:
            # no n-grams of this order in the candidate: order left out of the mean
            p.append(None)
            continue
        if match == 0 and smoothing == "add_one_clipped" and n >= 2:
            match = 1
        p.append(match / total)
        logs.append(-math.inf if match == 0 else math.log(match / total))
    if c == 0:
        return p, 0.0, 0.0
    bp = 1.0 if c > r else math.exp(1.0 - r / c)
    if not logs or any(v == -math.inf for v in logs):
        return p, bp, 0.0
    return p, bp, bp * math.exp(sum(logs) / len(logs))


def sentence_bleu(hyp, refs, max_n=4, smoothing="add_one_clipped"):
    """BLEU of one hypothesis token list against one or more reference token lists."""
    if max_n < 1:
        raise UsageError("max_n must be >= 1")
    if not _is_alternatives(refs):
        refs = [refs]
    stats = bleu_stats(hyp, refs, max_n)
    p, bp, score = _bleu_from_stats(stats, max_n, smoothing)
    return BleuBreakdown(p_n=p, c=stats[0], r=stats[1], bp=bp, score=score,
                         smoothing=smoothing, degenerate=len(hyp) == 0)


def _is_alternatives(r):
    return bool(r) and isinstance(r[0], (list, tuple))


def _as_ref_lists(refs):
    return [list(r) if _is_alternatives(r) else [r] for r in refs]


def corpus_bleu(hyps, refs, max_n=4):
    """Micro-averaged corpus BLEU on the 0-100 scale (no smoothing).

    ``refs[i]`` is either one token list or a list of alternative token lists.
    """
    if len(hyps) != len(refs):
        raise UsageError(f"{len(hyps)} hypotheses vs {len(refs)} references")
    if not hyps:
        raise UsageError("corpus_bleu needs at least one sentence")
    total = np.zeros(2 + 2 * max_n)
    for h, r in zip(hyps, _as_ref_lists(refs)):
        total += bleu_stats(h, r, max_n)
    return 100.0 * _bleu_from_stats(total.tolist(), max_n)[2]


def corpus_bleu_from_stats(stats, max_n=4):
    """Vectorised corpus BLEU (0-100) for rows of summed ``bleu_stats``."""
    stats = np.atleast_2d(np.asarray(stats, dtype=np.float64))
    c, r = stats[:, 0], stats[:, 1]
    logs = np.zeros(len(stats))
    used = np.zeros(len(stats))
    zero = c == 0
    for n in range(1, max_n + 1):
        match, tot = stats[:, 2 * n], stats[:, 2 * n + 1]
        has = tot > 0
        zero |= has & (match == 0)
        with np.errstate(divide="ignore", invalid="ignore"):
            logs += np.where(has & (match > 0), np.log(np.where(match > 0, match, 1) / np.where(has, tot, 1)), 0.0)
        used += has
    with np.errstate(divide="ignore", invalid="ignore"):
        bp = np.where(c > r, 1.0, np.exp(1.0 - r / np.where(c > 0, c, 1)))
        score = bp * np.exp(logs / np.where(used > 0, used, 1))
    score[zero | (used == 0)] = 0.0
    return 100.0 * score


# ----------------------------------------------------------------------- ROUGE

def lcs_length(a, b):
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            cur.append(prev[j] + 1 if x == y else max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]


def _prf(overlap, n_hyp, n_ref):
    p = overlap / n_hyp if n_hyp else 0.0
    r = overlap / n_ref if n_ref else 0.0
    f = 2 * p * r / (p + r) if p + r > 0 else 0.0
    return {"precision": p, "recall": r, "f1": f}


def rouge(hyp, ref, variant="lcs"):
    hyp, ref = list(hyp), list(ref)
    if variant == "lcs":
        return _prf(lcs_length(hyp, ref), len(hyp), len(ref))
    if variant not in ("n1", "n2", "n4"):
        raise UsageError(f"unknown ROUGE variant {variant!r}")
    n = int(variant[1:])
    h, r = ngrams(hyp, n), ngrams(ref, n)
    overlap = sum((h & r).values())
    return _prf(overlap, sum(h.values()), sum(r.values()))


# ------------------------------------------------------------------- accuracy

def token_accuracy(hyps, refs):
    """Position-wise matches over pooled reference length."""
    if len(hyps) != len(refs):
        raise UsageError(f"{len(hyps)} hypotheses vs {len(refs)} references")
    hit = sum(sum(1 for a, b in zip(h, r) if a == b) for h, r in zip(hyps, refs))
    total = sum(len(r) for r in refs)
    return hit / total if total else 0.0


def normalize_ws(text):
    return " ".join(text.split())


def topk_accuracy(candidate_lists, refs, k, normalize=normalize_ws):
    """Fraction of examples whose reference string appears among the first ``k`` candidates.

    Strings are compared after ``normalize`` (whitespace runs collapsed by default).
    """
    if len(candidate_lists) != len(refs):
        raise UsageError(f"{len(candidate_lists)} candidate lists vs {len(refs)} references")
    if not refs:
        return 0.0
    hit = 0
    for cands, ref in zip(candidate_lists, refs):
        target = normalize(ref)
        if any(normalize(c) == target for c in cands[:k]):
            hit += 1
    return hit / len(refs)


# ---------------------------------------------------------------- parsability

def check_parsable(snippet, checker="builtin", command=None):
    """True when ``snippet`` is syntactically valid code.

    ``builtin`` asks Python's own parser; ``external_command`` pipes the
    snippet to a command (``command`` or ``$NL2CODE_PARSE_CMD``) and reads
    exit status 0 as parsable.
    """
    if checker == "builtin":
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                ast.parse(snippet)
        except (SyntaxError, ValueError, MemoryError, RecursionError):
            return False
        return True
    if checker != "external_command":
        raise UsageError(f"unknown checker {checker!r}")
    template = command or os.environ.get(PARSE_CMD_ENV)
    if not template:
        raise EnvironmentProblem(f"no parse command configured (set {PARSE_CMD_ENV})")
    argv = shlex.split(template)
    if shutil.which(argv[0]) is None:
        raise EnvironmentProblem(f"parse command not found: {argv[0]}")
    proc = subprocess.run(argv, input=snippet.encode("utf-8"), capture_output=True, check=False)
    return proc.returncode == 0


def default_checker():
    return "external_command" if os.environ.get(PARSE_CMD_ENV) else "builtin"


def parsable_count(snippets, checker=None):
    checker = checker or default_checker()
    return sum(check_parsable(s, checker) for s in snippets)


# -------------------------------------------------------------- quality bins

QUALITY_CLASSES = ("wrong", "semantically_equivalent", "marginally_correct",
                   "mostly_correct", "exact_match")


def quality_class(score):
    if score <= 0.2:
        return "wrong"
    if score <= 0.4:
        return "semantically_equivalent"
    if score <= 0.6:
        return "marginally_correct"
    if score <= 0.9:
        return "mostly_correct"
    return "exact_match"


def histogram_bin(score):
    """Index 0..9 of the width-0.1 bin; 0.9 and above share the last bin."""
    return min(int(math.floor(round(score * 10, 9))), 9)


def quality_bins(sentence_bleus):
    """Histogram (10 bins of width 0.1), count above 0.5, and the five quality classes."""
    hist = [0] * 10
    classes = dict.fromkeys(QUALITY_CLASSES, 0)
    above = 0
    for s in sentence_bleus:
        if not 0.0 <= s <= 1.0 or math.isnan(s):
            raise UsageError(f"sentence BLEU {s} outside [0, 1]")
        hist[histogram_bin(s)] += 1
        classes[quality_class(s)] += 1
        above += s > 0.5
    return {"histogram": hist, "above_0_5": above, "classes": classes}


# ------------------------------------------------------------------- reports

@dataclass
class EvalReport:
    corpus_bleu: float
    rouge: dict
    token_accuracy: float
    topk_accuracy: float
    parsable_count: int
    sentence_bleu_histogram: dict
    quality_bins: dict

    def to_json(self):
        return json.dumps(asdict(self), indent=2, sort_keys=True)


def tokenize_side(text, side):
    return code_tokenize(text) if side == "code" else text.split()


def evaluate(hyps, refs, side="code", candidate_lists=None, k=1, checker=None, max_n=4):
    """Full report over parallel hypothesis / reference strings."""
    if len(hyps) != len(refs):
        raise UsageError(f"{len(hyps)} hypotheses vs {len(refs)} references")
    ht = [tokenize_side(h, side) for h in hyps]
    rt = [tokenize_side(r, side) for r in refs]
    sb = [sentence_bleu(h, [r], max_n).score for h, r in zip(ht, rt)]
    bins = quality_bins(sb)
    rouge_out = {}
    for name, variant in (("rouge1", "n1"), ("rouge2", "n2"), ("rouge4", "n4"), ("rougeL", "lcs")):
        vals = [rouge(h, r, variant) for h, r in zip(ht, rt)]
        rouge_out[name] = {m: float(np.mean([v[m] for v in vals])) if vals else 0.0
                           for m in ("precision", "recall", "f1")}
    cands = candidate_lists if candidate_lists is not None else [[h] for h in hyps]
    return EvalReport(
        corpus_bleu=corpus_bleu(ht, rt, max_n) if hyps else 0.0,
        rouge=rouge_out,
        token_accuracy=token_accuracy(ht, rt),
        topk_accuracy=topk_accuracy(cands, refs, k, lambda t: " ".join(tokenize_side(t, side))),
        parsable_count=parsable_count(hyps, checker) if side == "code" else 0,
        sentence_bleu_histogram={"bins": bins["histogram"], "above_0_5": bins["above_0_5"]},
        quality_bins=bins["classes"],
    )


# ----------------------------------------------------------------- bootstrap

@dataclass
class BootstrapResult:
    win_ratio_a: float
    win_ratio_b: float
    tie_ratio: float
    ties: int
    p_value: float
    ci_a: list
    ci_b: list
    mean_a: float
    mean_b: float
    median_a: float
    median_b: float
    n_samples: int
    seed: int
    extra: dict = field(default_factory=dict)

    def to_json(self):
        return json.dumps(asdict(self), indent=2, sort_keys=True)


def paired_bootstrap(scores_fn, hyps_a, hyps_b, refs, n_samples=10000, seed=0, max_n=4):
    """Paired bootstrap over resampled test sets.

    ``scores_fn(hyps, refs) -> float`` scores one resample; pass ``None`` for
    corpus BLEU computed from cached per-sentence statistics (fast path).
    """
    n = len(refs)
    if len(hyps_a) != n or len(hyps_b) != n:
        raise UsageError(f"misaligned inputs: {len(hyps_a)}, {len(hyps_b)}, {n}")
    if n == 0 or n_samples < 1:
        raise UsageError("need at least one example and one sample")
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, n, size=(n_samples, n))
    if scores_fn is None:
        ref_lists = _as_ref_lists(refs)
        sa = np.array([bleu_stats(h, r, max_n) for h, r in zip(hyps_a, ref_lists)], dtype=np.float64)
        sb = np.array([bleu_stats(h, r, max_n) for h, r in zip(hyps_b, ref_lists)], dtype=np.float64)
        a = np.empty(n_samples)
        b = np.empty(n_samples)
        for lo in range(0, n_samples, 1000):
            block = idx[lo:lo + 1000]
            counts = np.zeros((len(block), n))
            np.add.at(counts, (np.repeat(np.arange(len(block)), n), block.ravel()), 1.0)
            a[lo:lo + len(block)] = corpus_bleu_from_stats(counts @ sa, max_n)
            b[lo:lo + len(block)] = corpus_bleu_from_stats(counts @ sb, max_n)
    else:
        a = np.empty(n_samples)
        b = np.empty(n_samples)
        for s in range(n_samples):
            sel = idx[s]
            a[s] = scores_fn([hyps_a[i] for i in sel], [refs[i] for i in sel])
            b[s] = scores_fn([hyps_b[i] for i in sel], [refs[i] for i in sel])
    wins_a = int(np.sum(a > b))
    wins_b = int(np.sum(b > a))
    ties = n_samples - wins_a - wins_b
    wa, wb = wins_a / n_samples, wins_b / n_samples
    return BootstrapResult(
        win_ratio_a=wa, win_ratio_b=wb, tie_ratio=ties / n_samples, ties=ties,
        p_value=min(wa, wb),
        ci_a=[float(np.percentile(a, 2.5)), float(np.percentile(a, 97.5))],
        ci_b=[float(np.percentile(b, 2.5)), float(np.percentile(b, 97.5))],
        mean_a=float(a.mean()), mean_b=float(b.mean()),
        median_a=float(np.median(a)), median_b=float(np.median(b)),
        n_samples=n_samples, seed=seed)
