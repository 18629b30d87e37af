"""Intrinsic and task metrics for generated unit tests."""

from __future__ import annotations

import csv
import logging
import math
import re
from collections import Counter
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import chi2, rankdata

from .javalex import LexError, abstract_code, code_tokens, identifiers

log = logging.getLogger(__name__)

MAX_K = 5


# --- BLEU ---------------------------------------------------------------


def _ngram_counts(tokens, n):
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def _bleu_stats(cand, ref, max_n=4):
    """Clipped matches and totals per order, plus lengths."""
    stats = []
    for n in range(1, max_n + 1):
        c = _ngram_counts(cand, n)
        r = _ngram_counts(ref, n)
        matches = sum(min(cnt, r[g]) for g, cnt in c.items())
        stats.append((matches, max(len(cand) - n + 1, 0)))
    return stats


def _combine(stats, cand_len, ref_len, smooth=True):
    if cand_len == 0:
        return 0.0
    log_p = 0.0
    for n, (m, total) in enumerate(stats, start=1):
        if n >= 2 and smooth and m == 0:
            m, total = 1, total + 1
        if m == 0 or total == 0:
            return 0.0
        log_p += math.log(m / total) / len(stats)
    bp = 1.0 if cand_len > ref_len else math.exp(1.0 - ref_len / cand_len)
    return bp * math.exp(log_p)


def bleu4(candidate, reference, tokenize=True):
    """Sentence BLEU-4 with add-one smoothing of zero counts for n >= 2.

    Strings are split into code tokens first; pre-split token lists are
    used as given.
    """
    cand = code_tokens(candidate) if tokenize and isinstance(candidate, str) else list(candidate)
    ref = code_tokens(reference) if tokenize and isinstance(reference, str) else list(reference)
    if not ref:
        raise ValueError("empty reference")
    return _combine(_bleu_stats(cand, ref), len(cand), len(ref))


def corpus_bleu4(candidates, references, tokenize=True):
    """Corpus-level BLEU-4: statistics pooled before combining."""
    totals = [[0, 0] for _ in range(4)]
    c_len = r_len = 0
    for c, r in zip(candidates, references):
        c = code_tokens(c) if tokenize and isinstance(c, str) else list(c)
        r = code_tokens(r) if tokenize and isinstance(r, str) else list(r)
        if not r:
            raise ValueError("empty reference")
        for acc, (m, t) in zip(totals, _bleu_stats(c, r)):
            acc[0] += m
            acc[1] += t
        c_len += len(c)
        r_len += len(r)
    return _combine([tuple(t) for t in totals], c_len, r_len)


def mean_sentence_bleu4(candidates, references):
    scores = [bleu4(c, r) for c, r in zip(candidates, references)]
    return float(np.mean(scores)) if scores else 0.0


# --- perplexity ---------------------------------------------------------


def perplexity(per_token_nll):
    nll = np.asarray(list(per_token_nll), dtype=np.float64)
    if nll.size == 0:
        raise ValueError("empty nll sequence")
    if not np.all(np.isfinite(nll)):
        raise ValueError("non-finite nll")
    return float(np.exp(nll.mean()))


# --- matches ------------------------------------------------------------

_WS = re.compile(r"\s+")


def normalize_whitespace(text):
    return _WS.sub(" ", text).strip()


def exact_match(candidate, reference):
    return normalize_whitespace(candidate) == normalize_whitespace(reference)


def abstract_match(candidate, reference):
    """Equality of abstracted forms; unlexable code only matches exactly."""
    a, b = normalize_whitespace(candidate), normalize_whitespace(reference)
    if a == b:
        return True
    try:
        return abstract_code(a) == abstract_code(b)
    except LexError:
        return False


@dataclass
class Prediction:
    focal_id: str
    candidates: list
    scores: list = field(default_factory=list)

    def __post_init__(self):
        if not self.candidates:
            raise ValueError("a prediction needs at least one candidate")
        if self.scores:
            if len(self.scores) != len(self.candidates):
                raise ValueError("one score per candidate")
            if any(a < b for a, b in zip(self.scores, self.scores[1:])):
                raise ValueError("candidates must be ranked by descending score")


def topk_match_rate(predictions, references, k, mode="exact"):
    """Fraction of focal methods whose top-``k`` contains a match."""
    if not 1 <= k <= MAX_K:
        raise ValueError(f"k must be in 1..{MAX_K}")
    match = {"exact": exact_match, "abstract": abstract_match}[mode]
    predictions = list(predictions)
    if not predictions:
        return 0.0
    hits = 0
    for p in predictions:
        ref = references[p.focal_id]
        if any(match(c, ref) for c in p.candidates[:k]):
            hits += 1
    return hits / len(predictions)


# --- coding style -------------------------------------------------------


def tfidf_vectors(docs):
    """Raw-count tf times smoothed idf ``ln((1+n)/(1+df)) + 1``."""
    vocab = sorted({t for d in docs for t in d})
    index = {t: i for i, t in enumerate(vocab)}
    n = len(docs)
    tf = np.zeros((n, len(vocab)))
    for row, d in enumerate(docs):
        for t, c in Counter(d).items():
            tf[row, index[t]] = c
    df = (tf > 0).sum(axis=0)
    idf = np.log((1.0 + n) / (1.0 + df)) + 1.0
    return tf * idf, vocab


def cosine(a, b):
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        return 0.0
    return float(np.dot(a, b) / (na * nb))


def style_similarity(generated_tests, developer_tests, background=()):
    """tf-idf cosine between identifier documents of generated and developer tests."""
    generated_tests, developer_tests = list(generated_tests), list(developer_tests)
    if not generated_tests or not developer_tests:
        raise ValueError("need at least one document on each side")
    gen = [i for t in generated_tests for i in identifiers(t)]
    dev = [i for t in developer_tests for i in identifiers(t)]
    if not gen or not dev:
        log.warning("no identifiers on one side; style similarity is 0")
        return 0.0
    docs = [gen, dev] + [identifiers(t) for t in background]
    vecs, _ = tfidf_vectors(docs)
    return cosine(vecs[0], vecs[1])


# --- Kruskal-Wallis -----------------------------------------------------


@dataclass(frozen=True)
class KWTestResult:
    statistic: float
    df: int
    pvalue: float


def kruskal_wallis(*groups):
    """Rank-based H with tie correction; p from the chi-square survival function."""
    if len(groups) == 1 and not np.isscalar(groups[0][0]):
        groups = tuple(groups[0])
    groups = [np.asarray(g, dtype=np.float64) for g in groups]
    if len(groups) < 2:
        raise ValueError("need at least two groups")
    if any(g.size == 0 for g in groups):
        raise ValueError("every group must be non-empty")
    pooled = np.concatenate(groups)
    n = pooled.size
    if n < 3:
        raise ValueError("need at least three observations in total")
    df = len(groups) - 1
    ranks = rankdata(pooled)
    _, ties = np.unique(pooled, return_counts=True)
    correction = 1.0 - float(np.sum(ties ** 3 - ties)) / (n ** 3 - n)
    if correction <= 0.0:
        return KWTestResult(0.0, df, 1.0)
    h = 0.0
    start = 0
    for g in groups:
        r = ranks[start:start + g.size]
        h += r.sum() ** 2 / g.size
        start += g.size
    h = 12.0 / (n * (n + 1)) * h - 3.0 * (n + 1)
    h = max(h / correction, 0.0)
    p = float(chi2.sf(h, df)) if h > 0 else 1.0
    return KWTestResult(float(h), df, min(max(p, np.nextafter(0.0, 1.0)), 1.0))


# --- reports ------------------------------------------------------------


@dataclass
class EvalReport:
    project: str
    strategy: str
    fold: int
    bleu4: float
    perplexity: float
    exact_at: list  # index k-1
    abstract_at: list
    style_similarity: float
    n_examples: int = 0

    def check(self):
        for e, a in zip(self.exact_at, self.abstract_at):
            if not (0.0 <= e <= a <= 1.0):
                raise AssertionError("exact@k must not exceed abstract@k")
        if any(x > y for x, y in zip(self.exact_at, self.exact_at[1:])):
            raise AssertionError("exact@k must be non-decreasing in k")

    def row(self):
        out = {
            "project": self.project,
            "strategy": self.strategy,
            "fold": self.fold,
            "bleu4": self.bleu4,
            "perplexity": self.perplexity,
            "style_similarity": self.style_similarity,
            "n_examples": self.n_examples,
        }
        for k in range(1, MAX_K + 1):
            out[f"exact@{k}"] = self.exact_at[k - 1]
            out[f"abstract@{k}"] = self.abstract_at[k - 1]
        return out


def evaluate_predictions(project, strategy, fold, predictions, references, per_token_nll):
    """Assemble an :class:`EvalReport` for one test fold."""
    predictions = list(predictions)
    top1 = [p.candidates[0] for p in predictions]
    refs = [references[p.focal_id] for p in predictions]
    report = EvalReport(
        project=project,
        strategy=str(strategy),
        fold=fold,
        bleu4=mean_sentence_bleu4(top1, refs),
        perplexity=perplexity(per_token_nll),
        exact_at=[topk_match_rate(predictions, references, k, "exact") for k in range(1, MAX_K + 1)],
        abstract_at=[topk_match_rate(predictions, references, k, "abstract") for k in range(1, MAX_K + 1)],
        style_similarity=style_similarity(top1, refs),
        n_examples=len(predictions),
    )
    report.check()
    return report


def write_reports_csv(path, reports):
    reports = list(reports)
    if not reports:
        return
    rows = [r.row() for r in reports]
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)
