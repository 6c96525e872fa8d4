import itertools
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cidnst import metrics


def test_identical():
    d, script = metrics.align(["a", "b", "c"], ["a", "b", "c"])
    assert d == 0 and [e.op for e in script] == ["match"] * 3
    b = metrics.error_breakdown(["x y", "z"], ["x y", "z"])
    assert (b.wer, b.ins, b.del_, b.sub) == (0.0, 0.0, 0.0, 0.0)


def brute_min_cost(ref, hyp):
    """Exhaustive search over edit scripts (memoised recursion over all op choices)."""
    from functools import lru_cache

    @lru_cache(None)
    def go(i, j):
        if i == len(ref):
            return len(hyp) - j
        if j == len(hyp):
            return len(ref) - i
        return min(go(i + 1, j + 1) + (ref[i] != hyp[j]), go(i, j + 1) + 1, go(i + 1, j) + 1)

    return go(0, 0)


def test_one_substitution():
    d, script = metrics.align(["der", "anspruch", "ist"], ["der", "spruch", "ist"])
    assert d == 1 == brute_min_cost(("der", "anspruch", "ist"), ("der", "spruch", "ist"))
    assert [e.op for e in script] == ["match", "sub", "match"]


def test_empty_reference_insertion():
    d, script = metrics.align([], ["x"])
    assert d == 1 and script[0].op == "ins" and script[0].hyp == "x"


def test_one_sub_in_ten_words():
    refs = ["a b c d e", "f g h i j"]
    hyps = ["a b c d e", "f g X i j"]
    b = metrics.error_breakdown(refs, hyps)
    assert (b.wer, b.ins, b.del_, b.sub) == (10.0, 0.0, 0.0, 10.0)


def test_breakdown_reconciles_on_random_corpora():
    rnd = random.Random(0)
    words = ["a", "b", "c", "d"]
    for _ in range(1000):
        n = rnd.randint(1, 4)
        refs = [" ".join(rnd.choices(words, k=rnd.randint(1, 6))) for _ in range(n)]
        hyps = [" ".join(rnd.choices(words, k=rnd.randint(0, 6))) for _ in range(n)]
        b = metrics.error_breakdown(refs, hyps)
        assert b.ins + b.del_ + b.sub == pytest.approx(b.wer, abs=1e-9)
        assert round(b.ins, 2) + round(b.del_, 2) + round(b.sub, 2) == pytest.approx(round(b.wer, 2), abs=0.011)
        total = sum(brute_min_cost(tuple(r.split()), tuple(h.split())) for r, h in zip(refs, hyps))
        assert b.n_ins + b.n_del + b.n_sub == total


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.text("ab ", min_size=1, max_size=10).filter(lambda s: len(s.split()) > 0), st.text("ab ", max_size=10)), min_size=1, max_size=6), st.randoms())
def test_wer_order_invariant(pairs, rnd):
    shuffled = list(pairs)
    rnd.shuffle(shuffled)
    assert metrics.wer(*zip(*pairs)) == metrics.wer(*zip(*shuffled))
    assert metrics.cer(*zip(*pairs)) == metrics.cer(*zip(*shuffled))


def test_cer_strips_whitespace():
    assert metrics.cer(["ab cd"], ["abcd"]) == 0.0
    assert metrics.cer(["ab"], ["ax"]) == 50.0


def test_werr():
    assert metrics.werr(49.7, 27.3) == pytest.approx(45.1, abs=0.05)
    assert metrics.werr(34.0, 29.4) == pytest.approx(13.5, abs=0.05)
    assert metrics.werr(12.5, 12.5) == 0
    # the printed Finnish entry (12.7) does not follow from the formula
    assert metrics.werr(55.1, 48.4) == pytest.approx(12.2, abs=0.05)
    for bad in (0.0, -1.0):
        with pytest.raises(ValueError):
            metrics.werr(bad, 1.0)


def test_errors():
    with pytest.raises(ValueError):
        metrics.error_breakdown(["a"], [])
    with pytest.raises(ValueError):
        metrics.error_breakdown([""], [""])


def test_mark_errors_and_report():
    r, h = metrics.mark_errors("the cat sat", "the bat sat down")
    assert r == "the CAT sat ****"
    assert h == "the BAT sat DOWN"
    rep = metrics.score_report([("u1", "a b"), ("u2", "c")], [("u1", "a b")], per_utterance=True)
    assert "WER 33.33 INS 0.00 DEL 33.33 SUB 0.00" in rep
    assert "u2\tHYP: *" in rep
