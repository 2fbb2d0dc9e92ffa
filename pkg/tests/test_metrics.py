import math

import pytest

from cvcap.metrics import (
    EvalPair,
    bleu,
    cider,
    corpus_stats,
    evaluate,
    format_report,
    lcs_length,
    parse_report,
    rouge_l,
)


def P(cand, *refs):
    return EvalPair(cand, refs)


# hand-computed values on small fixtures
BETA2 = 1.2**2


def hand_f(p, r):
    return (1 + BETA2) * p * r / (r + BETA2 * p)


def test_bleu_exact_match():
    pairs = [P("a red square moves left", "a red square moves left")]
    for n in range(1, 5):
        assert bleu(pairs, n) == 1.0


def test_bleu_clipped_unigram():
    assert abs(bleu([P("a a", "a b")], 1) - 0.5) < 1e-12


def test_bleu_brevity_penalty():
    # c = 2, r = 4, all unigrams match: BP = e^(1 - 4/2)
    assert abs(bleu([P("a b", "a b c d")], 1) - math.exp(-1.0)) < 1e-12
    assert bleu([P("a b", "a b c d")], 1) < bleu([P("a b c d", "a b c d")], 1)


def test_bleu_closest_reference_length():
    # refs of length 2 and 6; candidate length 3 -> r = 2, no penalty
    assert bleu([P("a b c", "a b", "a b c d e f")], 1) == 1.0
    # equidistant refs (2 and 4) for a length-3 candidate -> shorter one wins
    assert bleu([P("a b c", "a b", "a b c d")], 1) == 1.0


def test_bleu_corpus_level_counts():
    pairs = [P("a b", "a b"), P("c d", "c e")]
    # unigrams 3/4, bigrams 1/2
    assert abs(bleu(pairs, 2) - math.sqrt(0.75 * 0.5)) < 1e-12


def test_bleu_empty_candidate_and_bad_order():
    assert bleu([P("", "a b")], 1) == 0.0
    with pytest.raises(ValueError):
        bleu([P("a", "a")], 5)


def test_lcs():
    assert lcs_length("a c b".split(), "a b c".split()) == 2
    assert lcs_length([], ["a"]) == 0


def test_rouge_l():
    assert rouge_l([P("a b c", "a b c")]) == 1.0
    assert rouge_l([P("a b", "c d")]) == 0.0
    assert abs(rouge_l([P("a c b", "a b c")]) - hand_f(2 / 3, 2 / 3)) < 1e-12
    # precision 2/2, recall 2/4
    assert abs(rouge_l([P("a b", "a x b y")]) - hand_f(1.0, 0.5)) < 1e-12
    # best precision and best recall taken over the references separately
    val = rouge_l([P("a b c", "a b", "a b c d e f")])
    assert abs(val - hand_f(1.0, 2 / 2)) < 1e-12


def test_cider_hand_two_video_corpus():
    pairs = [P("a b", "a b", "a b c"), P("a c", "a d")]
    # df over reference sets: a:2, every other n-gram: 1; idf(a)=0, idf(rest)=ln 2.
    # video 1, ref "a b": identical tf-idf vectors -> cos 1 for n=1,2; n=3,4 empty
    # video 1, ref "a b c": cos 1/sqrt(2) for n=1,2; length penalty exp(-1/72)
    # video 2 shares only "a", whose idf is zero -> 0
    v1 = 10.0 * ((2.0 + 2.0 / math.sqrt(2.0) * math.exp(-1.0 / 72.0)) / 4.0) / 2.0
    assert abs(cider(pairs) - v1 / 2.0) < 1e-9


def test_cider_trivial_cases():
    assert cider([P("x y", "a b")]) == 0.0
    pairs = [P("a red square", "a red square"), P("a blue circle", "a blue circle")]
    best = cider(pairs)
    assert best > 0
    worse = cider([P("a red circle", "a red square"), P("a blue circle", "a blue circle")])
    assert worse < best


def test_cider_distinctive_beats_ubiquitous():
    refs = [("a red square moves left",), ("a blue circle moves right",), ("a green square moves up",)]
    stats = corpus_stats([EvalPair("", r) for r in refs])
    distinct = cider([EvalPair("red square left", refs[0])], stats)
    common = cider([EvalPair("a moves", refs[0])], stats)
    assert distinct > common


def test_specials_stripped():
    a = evaluate([P("<BOS> a red square <EOS>", "a red square")])
    b = evaluate([P("a red square", "a red square")])
    assert a == b


def test_permutation_invariance_and_purity():
    pairs = [P("a b c", "a b c d"), P("x y", "x z y"), P("a c", "a d", "a c e")]
    s1 = evaluate(pairs)
    assert evaluate(list(reversed(pairs))) == s1
    assert evaluate(pairs) == s1


def test_bleu_monotone_in_order():
    pairs = [P("a b c d e", "a b c d e"), P("a b x d e", "a b c d e")]
    vals = [bleu(pairs, n) for n in range(1, 5)]
    assert vals == sorted(vals, reverse=True)


def test_report_format():
    scores = {"BLEU@1": 0.8, "BLEU@2": 0.6, "BLEU@3": 0.5, "BLEU@4": 0.413, "CIDEr": 1.234, "ROUGE-L": 0.7}
    text = format_report(scores)
    assert "BLEU@4\t41.3\n" in text
    assert text.splitlines()[0] == "BLEU@1\t80.0"
    back = parse_report(text)
    assert abs(back["CIDEr"] - 1.234) < 1e-3


def test_eval_pair_needs_reference():
    with pytest.raises(ValueError):
        EvalPair("a", ())
