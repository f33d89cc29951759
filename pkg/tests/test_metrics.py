import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fusionseq.metrics import (CorpusIdf, bleu_n, cider, evaluate_corpus, lcs_length, naive_copy_baseline,
                               ngram_counts, normalize_tokens, report_json, report_table, rouge_l,
                               rouge_l_pair)

WORDS = list("abcdefgh")
sentences = st.lists(st.sampled_from(WORDS), min_size=1, max_size=8)


# --- normalisation ----------------------------------------------------------------

@pytest.mark.parametrize("text, expected", [
    ("Yes , he is .", ["yes", "he", "is"]), ("", []), ("A man walks.", ["a", "man", "walks"]),
    ("no,, really", ["no", "really"])])
def test_normalize(text, expected):
    assert normalize_tokens(text) == expected


def test_ngram_totals():
    toks = "a b a b".split()
    assert sum(ngram_counts(toks, 2).values()) == 3
    assert ngram_counts(toks, 5) == {}


# --- BLEU --------------------------------------------------------------------------

def test_bleu_identity():
    assert bleu_n(["a b c d e"], ["a b c d e"]) == [1.0] * 4


def test_bleu_clipping():
    assert bleu_n(["the the the"], ["the cat"], 1)[0] == pytest.approx(1 / 3, abs=1e-12)


def test_bleu_empty_candidate():
    assert bleu_n([""], ["a b"]) == [0.0] * 4


def test_bleu_brevity_penalty_hand_case():
    # candidate "a b" vs reference "a b c d": p1 = p2 = 1, c = 2, r = 4
    b = bleu_n(["a b"], ["a b c d"], 2)
    bp = math.exp(1 - 4 / 2)
    assert b[0] == pytest.approx(bp, abs=1e-12)
    assert b[1] == pytest.approx(bp, abs=1e-12)


def test_bleu_corpus_pooling_hand_case():
    cands = ["a b c", "a x"]
    refs = [["a b d"], ["a x"]]
    # unigram matches 2 + 2 of 5; bigram 1 + 1 of 3; c = r = 5
    p1, p2 = 4 / 5, 2 / 3
    b = bleu_n(cands, refs, 2)
    assert b[0] == pytest.approx(p1, abs=1e-12)
    assert b[1] == pytest.approx(math.sqrt(p1 * p2), abs=1e-12)


def test_bleu_closest_reference_length():
    # refs of length 2 and 5 for a 4-token candidate: closest is 5, so BP < 1
    b = bleu_n(["a b c d"], [["a b", "a b c d e"]], 1)[0]
    assert b == pytest.approx(math.exp(1 - 5 / 4), abs=1e-12)


def test_bleu_errors():
    with pytest.raises(ValueError):
        bleu_n([], [])
    with pytest.raises(ValueError):
        bleu_n(["a"], ["a", "b"])
    with pytest.raises(ValueError):
        bleu_n(["a"], [[]])


@settings(max_examples=100, deadline=None)
@given(sentences, sentences)
def test_bleu1_losing_a_match_never_helps(cand, ref):
    # the match is removed by substitution, so candidate length and brevity penalty stay fixed
    before = bleu_n([cand], [ref], 1)[0]
    matched = [i for i, w in enumerate(cand) if w in ref]
    if not matched:
        return
    worse = list(cand)
    worse[matched[0]] = "zzz"
    assert bleu_n([worse], [ref], 1)[0] <= before + 1e-12


def test_bleu1_deleting_a_clipped_duplicate_can_raise_score():
    # deleting the surplus copy shortens the candidate, so precision rises
    assert bleu_n(["a a"], ["a"], 1)[0] == 0.5
    assert bleu_n(["a"], ["a"], 1)[0] == 1.0


# --- ROUGE-L -------------------------------------------------------------------

def test_rouge_examples():
    assert rouge_l(["a b c"], ["a b c"]) == pytest.approx(1.0)
    assert rouge_l(["a b"], ["c d"]) == 0.0
    assert lcs_length("a b c d".split(), "a c d".split()) == 3
    p, r = 3 / 4, 1.0
    expected = (1 + 1.2) * p * r / (r + 1.2 * p)
    assert rouge_l_pair("a b c d".split(), "a c d".split()) == pytest.approx(expected, abs=1e-12)


def test_rouge_beta_one_is_f1():
    assert rouge_l_pair("a b c d".split(), "a c d".split(), beta2=1.0) == pytest.approx(6 / 7)


@settings(max_examples=100, deadline=None)
@given(sentences, sentences, sentences)
def test_rouge_extra_reference_never_hurts(cand, r1, r2):
    assert rouge_l([cand], [[r1, r2]]) >= rouge_l([cand], [[r1]]) - 1e-12


def _brute_lcs(a, b):
    best = 0
    for mask in range(1 << len(a)):
        sub = [a[i] for i in range(len(a)) if mask >> i & 1]
        it = iter(b)
        if all(any(x == y for y in it) for x in sub):
            best = max(best, len(sub))
    return best


@settings(max_examples=100, deadline=None)
@given(st.lists(st.sampled_from("abc"), max_size=7), st.lists(st.sampled_from("abc"), max_size=7))
def test_lcs_matches_subset_enumeration(a, b):
    assert lcs_length(a, b) == _brute_lcs(a, b)


# --- CIDEr -------------------------------------------------------------------------

IDENTITY = ["a man is talking to a woman", "the dog runs in the park",
            "she is holding a red phone", "two people sit on the floor now"]


def test_cider_identity_scores_ten():
    assert cider(IDENTITY, IDENTITY) == pytest.approx(10.0, abs=1e-9)


def test_cider_disjoint_is_zero():
    assert cider(["x y z"], [["a b c"]], idf=CorpusIdf.from_references([["a b c"], ["d e"]])) == 0.0


def test_cider_two_sentence_hand_case():
    cands = ["a b", "a c"]
    refs = [["a b"], ["b c"]]
    N = 2
    # document frequencies over references: a:1 b:2 c:1 | ab:1 bc:1
    idf = {("a",): math.log(N / 1), ("b",): math.log(N / 2), ("c",): math.log(N / 1),
           ("a", "b"): math.log(N / 1), ("b", "c"): math.log(N / 1), ("a", "c"): math.log(N / 1)}

    def vec(tokens, n):
        grams = [tuple(tokens[i: i + n]) for i in range(len(tokens) - n + 1)]
        return {g: grams.count(g) * idf[g] for g in set(grams)}

    def cos(u, v):
        nu = math.sqrt(sum(x * x for x in u.values()))
        nv = math.sqrt(sum(x * x for x in v.values()))
        if nu == 0 or nv == 0:
            return 0.0
        return sum(u[g] * v.get(g, 0.0) for g in u) / (nu * nv)

    per = []
    for c, (r,) in zip(cands, refs):
        ct, rt = c.split(), r.split()
        per.append(sum(cos(vec(ct, n), vec(rt, n)) for n in (1, 2)) / 2)
    expected = 10 * sum(per) / 2
    # n_max=2 so the hand computation stays small
    assert cider(cands, refs, n_max=2) == pytest.approx(expected, abs=1e-12)
    # first pair is identical (1.0); second shares only 'c': unigram cosine 1/sqrt(2), bigram 0
    assert expected == pytest.approx(10 * (1.0 + 0.5 / math.sqrt(2)) / 2, abs=1e-12)


def test_cider_idf_df_at_least_one():
    idf = CorpusIdf.from_references([["a b", "a c"], ["b"]])
    assert idf.df[("a",)] == 1 and idf.df[("b",)] == 2
    assert idf.size == 2
    with pytest.raises(ValueError):
        CorpusIdf.from_references([])


# --- corpus-level properties -----------------------------------------------------

@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(sentences, sentences), min_size=1, max_size=5), st.randoms())
def test_metrics_order_invariant_and_bounded(pairs, rnd):
    cands = [c for c, _ in pairs]
    refs = [[r] for _, r in pairs]
    base = evaluate_corpus(cands, refs)
    order = list(range(len(pairs)))
    rnd.shuffle(order)
    moved = evaluate_corpus([cands[i] for i in order], [refs[i] for i in order])
    for k in base:
        assert moved[k] == pytest.approx(base[k], abs=1e-9)
    for k in ("bleu1", "bleu2", "bleu3", "bleu4", "rouge_l"):
        assert 0.0 <= base[k] <= 1.0 + 1e-12
    assert 0.0 <= base["cider"] <= 10.0 + 1e-9


def test_copy_baseline_pipeline():
    assert naive_copy_baseline(["is he ok"]) == ["is he ok"]
    assert naive_copy_baseline([]) == []
    qs = ["is he ok", "what is she doing"]
    report = evaluate_corpus(naive_copy_baseline(qs), [["yes he is ok"], ["she is cooking"]])
    assert all(math.isfinite(v) for v in report.values())


def test_report_rendering():
    report = evaluate_corpus(["a b c d"], [["a b c d"]])
    text = report_json(report)
    assert text.endswith("\n") and '"n_examples": 1' in text
    table = report_table(report)
    assert table.splitlines()[0].startswith("bleu1") and "1.0000" in table
