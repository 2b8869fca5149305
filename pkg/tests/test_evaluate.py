import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from chargrid.evaluate import FIELD_KEYS, evaluate, evaluate_dirs, match_instances, normalize
from chargrid.extract import ExtractionResult


def brute_edits(pred, truth):
    """Try every partial pairing; an equal pair is free, any other pair one modification."""
    best = None
    n_p, n_t = len(pred), len(truth)
    for k in range(min(n_p, n_t) + 1):
        for ps in itertools.permutations(range(n_p), k):
            for ts in itertools.combinations(range(n_t), k):
                mod = sum(pred[i] != truth[j] for i, j in zip(ps, ts))
                cost = (n_t - k) + (n_p - k) + mod
                if best is None or cost < best[0]:
                    best = (cost, (n_t - k, n_p - k, mod))
    return best


def test_match_examples():
    assert match_instances(["a"], ["a"]) == (0, 0, 0)
    assert match_instances(["x"], ["a"]) == (0, 0, 1)
    assert match_instances(["a", "b"], ["a"]) == (0, 1, 0)
    assert match_instances([], ["a", "b"]) == (2, 0, 0)


@given(st.lists(st.sampled_from("abc"), max_size=4), st.lists(st.sampled_from("abc"), max_size=4))
def test_match_is_optimal(pred, truth):
    got = match_instances(pred, truth)
    cost, _ = brute_edits(pred, truth)
    assert sum(got) == cost
    assert min(got) >= 0


def items(*amounts):
    return ExtractionResult(line_items=[{"description": "", "quantity": "", "amount": a} for a in amounts])


def test_pooled_three_quarters():
    pairs = [(items("1", "2"), items("1", "2")), (items("3", "x"), items("3", "4"))]
    assert evaluate(pairs, ["lineitem_amount"]).measure("lineitem_amount") == 0.75


def test_empty_predictions_score_zero():
    rep = evaluate([(items(), items("1", "2", "3"))], ["lineitem_amount"])
    assert rep.measure("lineitem_amount") == 0.0
    assert rep.fields["lineitem_amount"].insertions == 3


def test_measure_can_be_negative():
    two_two = evaluate([(items("p", "q"), items()), (items(), items("a", "b"))], ["lineitem_amount"])
    s = two_two.fields["lineitem_amount"]
    assert (s.n, s.insertions, s.deletions, s.modifications) == (2, 2, 2, 0)
    assert two_two.measure("lineitem_amount") == -1.0
    spurious = evaluate([(items("p", "q", "r", "s", "t", "u"), items("a", "b"))], ["lineitem_amount"])
    assert spurious.measure("lineitem_amount") == 1 - 6 / 2


def test_undefined_when_no_truth():
    rep = evaluate([(ExtractionResult(), ExtractionResult())])
    assert all(rep.measure(k) is None for k in FIELD_KEYS)
    assert "undefined" in rep.table()


def test_perfect_predictions():
    truth = ExtractionResult({"invoice_number": "7", "vendor_name": "ACME  Ltd"},
                             [{"description": "bolt", "quantity": "2", "amount": "1.00"}])
    pred = ExtractionResult({"invoice_number": " 7", "vendor_name": "ACME Ltd"}, truth.line_items)
    rep = evaluate([(pred, truth)])
    assert rep.measure("invoice_number") == rep.measure("vendor_name") == 1.0
    assert rep.measure("lineitem_quantity") == 1.0


def test_normalize():
    assert normalize("  a \n b\tc ") == "a b c"


def test_order_invariance():
    rng = np.random.default_rng(0)
    pairs = [(items(*rng.choice(list("abcd"), rng.integers(0, 4))), items(*rng.choice(list("abcd"), 2)))
             for _ in range(10)]
    base = evaluate(pairs).to_dict()
    for _ in range(5):
        perm = rng.permutation(len(pairs))
        assert evaluate([pairs[i] for i in perm]).to_dict() == base


@given(st.lists(st.tuples(st.lists(st.sampled_from(["10.00", "3.50", "8", "1O"]), max_size=3),
                         st.lists(st.sampled_from(["10.00", "3.50", "8", "1O"]), max_size=3)),
                min_size=1, max_size=4),
       st.permutations("0123456789.O"))
def test_ocr_errors_present_in_both_are_transparent(docs, shuffled):
    # the same character-level corruption applied to prediction and truth
    table = str.maketrans("0123456789.O", "".join(shuffled))
    clean = [(items(*p), items(*t)) for p, t in docs]
    dirty = [(items(*(x.translate(table) for x in p)), items(*(x.translate(table) for x in t)))
             for p, t in docs]
    assert evaluate(dirty).to_dict() == evaluate(clean).to_dict()


def test_directories_must_match(tmp_path):
    (tmp_path / "p").mkdir()
    (tmp_path / "t").mkdir()
    (tmp_path / "t" / "a.json").write_text(items("1").dumps())
    (tmp_path / "p" / "manifest.json").write_text("{}")
    with pytest.raises(ValueError, match="document sets differ"):
        evaluate_dirs(tmp_path / "p", tmp_path / "t")
    (tmp_path / "p" / "a.json").write_text(items("1").dumps())
    assert evaluate_dirs(tmp_path / "p", tmp_path / "t").measure("lineitem_amount") == 1.0
