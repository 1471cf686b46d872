"""Corpus BLEU and NIST over tokenized hypotheses with one reference each.

Both metrics are computed from n-gram counts produced by :func:`nltk.util.ngrams`.
"""
from collections import Counter
from dataclasses import dataclass
import math
from typing import Optional, Sequence

from nltk.util import ngrams

from .exceptions import PydefgenEmptyHypothesisSet, PydefgenShapeMismatch

TokenSeq = Sequence[str]
NGram = tuple[str, ...]

#: Brevity exponent putting the NIST length factor at 0.5 for a 2/3 length ratio
NIST_BETA = math.log(0.5) / math.log(1.5) ** 2


def ngram_counts(tokens: TokenSeq, n: int) -> Counter[NGram]:
    """Multiset of the order-``n`` n-grams of ``tokens``."""
    if len(tokens) < n:
        return Counter()
    return Counter(ngrams(tokens, n))


def _check_corpus(hyps: Sequence[TokenSeq], refs: Sequence[TokenSeq]) -> None:
    if len(hyps) != len(refs):
        raise PydefgenShapeMismatch(
            f"{len(hyps)} hypotheses for {len(refs)} references"
        )
    if not hyps:
        raise PydefgenEmptyHypothesisSet("No hypotheses to score")


def clipped_matches(hyp: TokenSeq, ref: TokenSeq, n: int) -> tuple[int, int]:
    """Clipped order-``n`` matches and the hypothesis n-gram total."""
    hyp_counts = ngram_counts(hyp, n)
    return sum((hyp_counts & ngram_counts(ref, n)).values()), sum(hyp_counts.values())


def brevity_penalty(hyp_length: int, ref_length: int) -> float:
    """``exp(1 - r/c)`` for ``c < r``, one otherwise, zero for an empty corpus."""
    if hyp_length == 0:
        return 0.0
    if hyp_length >= ref_length:
        return 1.0
    return math.exp(1.0 - ref_length / hyp_length)


@dataclass(frozen=True)
class BleuScore:
    """Corpus BLEU and its components.

    ``precisions[n - 1]`` is None for orders with no hypothesis n-gram at all;
    such orders are left out of the geometric mean.
    """

    bleu: float
    precisions: list[Optional[float]]
    brevity_penalty: float
    hyp_length: int
    ref_length: int


def bleu_corpus(
    hyps: Sequence[TokenSeq], refs: Sequence[TokenSeq], max_n: int = 4
) -> BleuScore:
    """Unsmoothed corpus BLEU with uniform weights.

    Args:
        hyps (Sequence[TokenSeq]): Hypothesis token lists.
        refs (Sequence[TokenSeq]): One reference token list per hypothesis.
        max_n (int, optional): Highest n-gram order. Defaults to 4.

    Raises:
        PydefgenEmptyHypothesisSet: No hypotheses.

    Returns:
        BleuScore: Score in [0, 1] plus components.
    """
    _check_corpus(hyps, refs)
    matched = [0] * max_n
    totals = [0] * max_n
    for hyp, ref in zip(hyps, refs):
        for n in range(1, max_n + 1):
            hits, total = clipped_matches(hyp, ref, n)
            matched[n - 1] += hits
            totals[n - 1] += total

    precisions: list[Optional[float]] = [
        hits / total if total else None for hits, total in zip(matched, totals)
    ]
    kept = [p for p in precisions if p is not None]
    hyp_length = sum(len(hyp) for hyp in hyps)
    ref_length = sum(len(ref) for ref in refs)
    penalty = brevity_penalty(hyp_length, ref_length)
    if not kept or min(kept) == 0.0:
        score = 0.0
    else:
        score = penalty * math.exp(sum(math.log(p) for p in kept) / len(kept))
    return BleuScore(score, precisions, penalty, hyp_length, ref_length)


def sentence_bleu(
    hyp: TokenSeq, ref: TokenSeq, max_n: int = 4, epsilon: float = 1e-9
) -> float:
    """BLEU of one pair, zero precisions floored at ``epsilon``.

    Orders longer than the hypothesis are left out, as in :func:`bleu_corpus`.
    """
    logs = []
    for n in range(1, max_n + 1):
        hits, total = clipped_matches(hyp, ref, n)
        if total:
            logs.append(math.log(max(hits / total, epsilon)))
    if not logs:
        return 0.0
    return brevity_penalty(len(hyp), len(ref)) * math.exp(sum(logs) / len(logs))


def ngram_information(refs: Sequence[TokenSeq], max_n: int = 5) -> dict[NGram, float]:
    """Information weight of every reference n-gram up to ``max_n``.

    ``info(w1..wn) = log2(count(w1..wn-1) / count(w1..wn))`` with the total
    number of reference words standing in for the empty prefix.
    """
    counts: Counter[NGram] = Counter()
    total_words = 0
    for ref in refs:
        for n in range(1, max_n + 1):
            counts.update(ngram_counts(ref, n))
        total_words += len(ref)
    weights = {}
    for gram, count in counts.items():
        prefix = gram[:-1]
        numerator = counts[prefix] if prefix and prefix in counts else total_words
        weights[gram] = math.log2(numerator / count)
    return weights


def nist_length_penalty(ref_length: int, hyp_length: int) -> float:
    """``exp(beta * ln^2(Lsys / Lref))`` below ratio one, else clipped ratio."""
    ratio = hyp_length / ref_length if ref_length else 0.0
    if 0.0 < ratio < 1.0:
        return math.exp(NIST_BETA * math.log(ratio) ** 2)
    return max(min(ratio, 1.0), 0.0)


def nist_corpus(
    hyps: Sequence[TokenSeq], refs: Sequence[TokenSeq], max_n: int = 5
) -> float:
    """Corpus NIST score.

    Per order, matched information is micro-averaged over the hypothesis n-gram
    count; orders are summed and the total scaled by the length penalty.
    Orders with no hypothesis n-gram are skipped.

    Args:
        hyps (Sequence[TokenSeq]): Hypothesis token lists.
        refs (Sequence[TokenSeq]): One reference token list per hypothesis.
        max_n (int, optional): Highest n-gram order. Defaults to 5.

    Raises:
        PydefgenEmptyHypothesisSet: No hypotheses.

    Returns:
        float: Non-negative score.
    """
    _check_corpus(hyps, refs)
    weights = ngram_information(refs, max_n)
    score = 0.0
    for n in range(1, max_n + 1):
        information = 0.0
        total = 0
        for hyp, ref in zip(hyps, refs):
            hyp_counts = ngram_counts(hyp, n)
            overlap = hyp_counts & ngram_counts(ref, n)
            information += sum(weights[gram] * count for gram, count in overlap.items())
            total += sum(hyp_counts.values())
        if total:
            score += information / total
    hyp_length = sum(len(hyp) for hyp in hyps)
    ref_length = sum(len(ref) for ref in refs)
    return score * nist_length_penalty(ref_length, hyp_length)


def sentence_nist_mean(
    hyps: Sequence[TokenSeq], refs: Sequence[TokenSeq], max_n: int = 5
) -> float:
    """Mean of single-pair NIST scores, each pair scored as its own corpus."""
    _check_corpus(hyps, refs)
    total = sum(nist_corpus([hyp], [ref], max_n) for hyp, ref in zip(hyps, refs))
    return total / len(hyps)
