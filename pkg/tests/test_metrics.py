import statistics
from fractions import Fraction as F

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.metrics import roc_auc_score

from sentinel.errors import LengthMismatch, UnknownLabel
from sentinel.metrics import compute_metrics, per_unknown_report, roc_auc

TRUE20 = "U U U U A A B B B B B B C C C A A U B C".split()
PRED20 = "U U U A U A B B B B C B C C B A A B B A".split()


def expected_fixture():
    # hand-tallied: TP U3 A3 B6 C2; support U5 A4 B7 C4; predicted U4 A5 B8 C3
    return {
        "accuracy": F(7, 10),
        "U": (F(3, 4), F(3, 5), F(2, 3)),
        "A": (F(3, 5), F(3, 4), F(2, 3)),
        "B": (F(3, 4), F(6, 7), F(4, 5)),
        "C": (F(2, 3), F(1, 2), F(4, 7)),
        "weighted_f1": F(243, 350),
    }


def check_fixture():
    rep = compute_metrics(TRUE20, PRED20, labels=["B", "A", "C", "U"])
    want = expected_fixture()
    assert rep.accuracy == float(want["accuracy"])
    for c in "UABC":
        p, r, f = want[c]
        assert (rep.precision[c], rep.recall[c], rep.f1[c]) == (float(p), float(r), float(f))
    assert rep.weighted_f1 == float(want["weighted_f1"])
    assert (rep.unknown_precision, rep.unknown_recall, rep.unknown_f1) == (0.75, 0.6, float(F(2, 3)))
    assert sum(map(sum, rep.confusion)) == 20
    sub = compute_metrics(TRUE20[:8], PRED20[:8], labels=["B", "A", "U"])
    assert (sub.unknown_precision, sub.unknown_recall, sub.unknown_f1) == (0.75, 0.75, 0.75)


def test_fixture_exact():
    check_fixture()


def test_perfect_and_undefined():
    rep = compute_metrics(["U", "A", "B"], ["U", "A", "B"])
    assert rep.accuracy == rep.weighted_f1 == rep.unknown_f1 == 1.0
    rep = compute_metrics(["A", "B"], ["A", "A"])
    assert rep.unknown_precision == rep.unknown_recall == rep.unknown_f1 == 0.0
    assert rep.undefined["U"]
    assert "undefined" in rep.to_text()


def test_errors():
    with pytest.raises(LengthMismatch):
        compute_metrics(["A"], ["A", "B"])
    with pytest.raises(UnknownLabel):
        compute_metrics(["A"], ["Z"], labels=["A", "U"])


def naive_auc(pos, neg):
    wins = F(0)
    for p in pos:
        for n in neg:
            wins += 1 if p > n else F(1, 2) if p == n else 0
    return float(wins / (len(pos) * len(neg)))


@given(st.lists(st.integers(0, 5), min_size=1, max_size=30), st.lists(st.integers(0, 5), min_size=1, max_size=30))
@settings(max_examples=100)
def test_auc_matches_pairwise_and_sklearn(pos, neg):
    got = roc_auc(pos, neg)
    assert got == naive_auc(pos, neg)
    y = [1] * len(pos) + [0] * len(neg)
    assert abs(got - roc_auc_score(y, pos + neg)) < 1e-12


def test_auc_examples():
    assert roc_auc([2, 3], [0, 1]) == 1.0
    assert roc_auc([1, 1], [1, 1, 1]) == 0.5
    scores = {"A": [0.9, 0.1, 0.2], "B": [0.1, 0.8, 0.7]}
    rep = compute_metrics(["A", "B", "B"], ["A", "B", "B"], scores=scores)
    assert rep.auc == 1.0


@given(st.permutations(list(range(20))))
@settings(max_examples=50)
def test_permutation_invariance(perm):
    base = compute_metrics(TRUE20, PRED20)
    shuffled = compute_metrics([TRUE20[i] for i in perm], [PRED20[i] for i in perm])
    assert shuffled.to_dict() == base.to_dict()


def test_per_unknown_report():
    truth = ["B", "B", "A", "U", "U", "U"]
    pred = ["B", "A", "A", "U", "B", "U"]
    origin = ["", "", "", "X", "X", "Y"]
    rows = per_unknown_report(truth, pred, origin)
    assert [r["unknown_class"] for r in rows] == ["X", "Y", "Average"]
    x = rows[0]
    assert x["u_precision"] == 1.0 and x["u_recall"] == 0.5
    assert rows[2]["u_f1"] == statistics.mean([rows[0]["u_f1"], rows[1]["u_f1"]])
