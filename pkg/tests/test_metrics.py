import json
import math

from nltk.translate.nist_score import corpus_nist
import pytest

from pydefgen.exceptions import PydefgenEmptyHypothesisSet, PydefgenShapeMismatch
from pydefgen.metrics import (
    NIST_BETA,
    bleu_corpus,
    brevity_penalty,
    clipped_matches,
    ngram_information,
    nist_corpus,
    nist_length_penalty,
    sentence_bleu,
    sentence_nist_mean,
)

from tests import load_fixture

CAT_HYP = "the cat the cat on the mat".split()
CAT_REF = "the cat is on the mat".split()


def _vignette():
    data = json.loads(load_fixture("metrics/nist_vignette.json"))
    return (
        [line.split() for line in data["hypotheses"]],
        [line.split() for line in data["references"]],
    )


def _brute_force_bleu(hyps, refs, max_n=4):
    """Reference BLEU from explicit n-gram lists, no counters."""
    log_sum = 0.0
    for n in range(1, max_n + 1):
        hits = total = 0
        for hyp, ref in zip(hyps, refs):
            hyp_grams = [tuple(hyp[i : i + n]) for i in range(len(hyp) - n + 1)]
            ref_grams = [tuple(ref[i : i + n]) for i in range(len(ref) - n + 1)]
            for gram in set(hyp_grams):
                hits += min(hyp_grams.count(gram), ref_grams.count(gram))
            total += len(hyp_grams)
        if hits == 0:
            return 0.0
        log_sum += math.log(hits / total)
    c = sum(len(h) for h in hyps)
    r = sum(len(x) for x in refs)
    penalty = 1.0 if c >= r else math.exp(1 - r / c)
    return penalty * math.exp(log_sum / max_n)


def test_hand_counted_clipped_precisions():
    matches = [clipped_matches(CAT_HYP, CAT_REF, n) for n in range(1, 5)]
    assert matches == [(5, 7), (3, 6), (1, 5), (0, 4)]
    score = bleu_corpus([CAT_HYP], [CAT_REF])
    assert score.precisions == [5 / 7, 3 / 6, 1 / 5, 0.0]
    assert score.bleu == 0.0
    assert score.brevity_penalty == 1.0
    assert _brute_force_bleu([CAT_HYP], [CAT_REF]) == 0.0


def test_bleu_matches_brute_force_oracle():
    hyps, refs = _vignette()
    expected = _brute_force_bleu(hyps, refs)
    assert bleu_corpus(hyps, refs).bleu == pytest.approx(expected, abs=1e-12)
    assert bleu_corpus(hyps, refs).bleu > 0.0


def test_identical_corpora_score_one():
    _, refs = _vignette()
    assert bleu_corpus(refs, refs).bleu == 1.0
    assert sentence_bleu(refs[0], refs[0]) == pytest.approx(1.0)


def test_brevity_penalty():
    assert brevity_penalty(0, 5) == 0.0
    assert brevity_penalty(6, 5) == 1.0
    assert brevity_penalty(4, 8) == pytest.approx(math.exp(-1.0))


def test_short_hypotheses_skip_missing_orders():
    score = bleu_corpus([["a", "bird"]], [["a", "bird"]])
    assert score.precisions == [1.0, 1.0, None, None]
    assert score.bleu == 1.0


def test_sentence_bleu_is_smoothed():
    assert 0.0 < sentence_bleu(CAT_HYP, CAT_REF) < 1.0
    assert sentence_bleu([], CAT_REF) == 0.0


def test_nist_matches_nltk():
    hyps, refs = _vignette()
    expected = corpus_nist([[ref] for ref in refs], hyps, n=5)
    assert nist_corpus(hyps, refs) == pytest.approx(expected, abs=1e-6)


def test_nist_on_identical_pair_is_information_total():
    _, refs = _vignette()
    ref = refs[0]
    weights = ngram_information([ref])
    expected = 0.0
    for n in range(1, 6):
        grams = [tuple(ref[i : i + n]) for i in range(len(ref) - n + 1)]
        expected += sum(weights[gram] for gram in grams) / len(grams)
    assert nist_corpus([ref], [ref]) == pytest.approx(expected, abs=1e-12)
    assert sentence_nist_mean([ref], [ref]) == pytest.approx(expected, abs=1e-12)


def test_nist_length_penalty():
    assert nist_length_penalty(10, 10) == 1.0
    assert nist_length_penalty(10, 12) == 1.0
    assert nist_length_penalty(3, 2) == pytest.approx(0.5)
    assert nist_length_penalty(10, 0) == 0.0
    assert NIST_BETA < 0


def test_empty_corpus_is_rejected():
    with pytest.raises(PydefgenEmptyHypothesisSet):
        bleu_corpus([], [])
    with pytest.raises(PydefgenEmptyHypothesisSet):
        nist_corpus([], [])
    with pytest.raises(PydefgenShapeMismatch):
        bleu_corpus([["a"]], [])
