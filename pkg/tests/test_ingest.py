import json
import logging

import pytest
from hypothesis import given
from hypothesis import strategies as st

from chargrid.ingest import (CharBox, DocumentPage, FieldAnnotation, FieldClass, ParseError,
                             dumps_page, load_annotations, loads_page, parse_ocr_tsv, split_word_box)

HEADER = "\t".join(["level", "page_num", "block_num", "par_num", "line_num", "word_num",
                    "left", "top", "width", "height", "conf", "text"])


def row(left, top, width, height, text, conf=90, level=5):
    return "\t".join(str(v) for v in (level, 1, 1, 1, 1, 1, left, top, width, height, conf, text))


def tsv(*rows):
    return "\n".join((HEADER,) + rows) + "\n"


def split_oracle(word, x, w):
    # brute force: hand out pixels one at a time, left to right, round robin
    widths = [0] * len(word)
    for k in range(w):
        widths[k % len(word)] += 1
    xs = [x + sum(widths[:k]) for k in range(len(word))]
    return list(zip(xs, widths))


def test_tsv_single_word():
    page = parse_ocr_tsv(tsv(row(0, 0, 10, 4, "ab")))
    assert page.chars == [CharBox("a", 0, 0, 5, 4), CharBox("b", 5, 0, 5, 4)]


def test_tsv_empty_after_header():
    page = parse_ocr_tsv(HEADER + "\n", page_w=100, page_h=50)
    assert page.chars == []
    assert (page.page_w, page.page_h) == (100, 50)


def test_tsv_remainder_left_first():
    page = parse_ocr_tsv(tsv(row(0, 0, 10, 4, "abc")))
    assert [c.w for c in page.chars] == [4, 3, 3]
    assert sum(c.w for c in page.chars) == 10


def test_tsv_page_row_sets_size():
    text = tsv(row(0, 0, 640, 480, "", conf=-1, level=1), row(3, 4, 8, 5, "hi"))
    page = parse_ocr_tsv(text)
    assert (page.page_w, page.page_h) == (640, 480)


def test_tsv_skips_negative_conf_and_empty_text():
    text = tsv(row(0, 0, 10, 4, "ab", conf=-1), row(0, 10, 10, 4, "  "), row(0, 20, 6, 4, "c"))
    page = parse_ocr_tsv(text, page_w=50, page_h=50)
    assert page.text() == "c"


def test_tsv_structural_row_without_text_column():
    short = "\t".join(["4", "1", "1", "1", "1", "0", "0", "0", "10", "4", "-1"])
    page = parse_ocr_tsv(tsv(short, row(0, 0, 4, 4, "x")))
    assert page.text() == "x"


def test_tsv_wrong_column_count_names_line():
    with pytest.raises(ParseError, match="line 3"):
        parse_ocr_tsv(tsv(row(0, 0, 10, 4, "ab"), "5\t1\t1"))


def test_tsv_non_integer_geometry_names_line():
    with pytest.raises(ParseError, match="line 2"):
        parse_ocr_tsv(tsv(row("x", 0, 10, 4, "ab")))


def test_tsv_narrow_word_is_widened(caplog):
    with caplog.at_level(logging.WARNING):
        page = parse_ocr_tsv(tsv(row(0, 0, 2, 4, "abc")), page_w=20, page_h=20)
    assert [c.w for c in page.chars] == [1, 1, 1]
    assert "widening" in caplog.text


def test_split_examples():
    assert split_word_box("x", 0, 0, 7, 3) == [CharBox("x", 0, 0, 7, 3)]
    assert split_word_box("ab", 0, 0, 8, 2) == [CharBox("a", 0, 0, 4, 2), CharBox("b", 4, 0, 4, 2)]
    out = split_word_box("abc", 2, 1, 7, 2)
    assert [(c.x, c.w) for c in out] == [(2, 3), (5, 2), (7, 2)]


def test_split_too_narrow():
    with pytest.raises(ValueError):
        split_word_box("abcd", 0, 0, 3, 5)


@given(st.text(alphabet="abcxyz0123", min_size=1, max_size=12), st.integers(0, 50),
       st.integers(0, 60))
def test_split_matches_oracle(word, x, extra):
    w = len(word) + extra
    out = split_word_box(word, x, 7, w, 9)
    assert [(c.x, c.w) for c in out] == split_oracle(word, x, w)
    # contiguous, disjoint, covering the word box
    assert out[0].x == x and out[-1].x + out[-1].w == x + w
    assert all(a.x + a.w == b.x for a, b in zip(out, out[1:]))
    assert all(c.h == 9 and c.y == 7 for c in out)


@given(st.lists(st.tuples(st.integers(0, 80), st.integers(0, 80), st.integers(0, 20),
                          st.integers(1, 15), st.text(alphabet="abXY9", min_size=1, max_size=5)),
                max_size=10))
def test_parsed_chars_inside_page(words):
    rows = [row(x, y, len(t) + ew, h, t) for x, y, ew, h, t in words]
    page = parse_ocr_tsv(tsv(*rows)) if rows else parse_ocr_tsv(HEADER, 1, 1)
    for c in page.chars:
        assert 0 <= c.x and c.x + c.w <= page.page_w
        assert 0 <= c.y and c.y + c.h <= page.page_h


def _page():
    return DocumentPage(100, 60, [CharBox("a", 10, 10, 5, 8), CharBox("7", 40, 30, 6, 8)])


def test_load_annotations_single():
    text = json.dumps([{"class": "invoice_number", "x": 8, "y": 8, "w": 10, "h": 12}])
    page = load_annotations(text, _page())
    assert page.annotations == [FieldAnnotation(FieldClass.INVOICE_NUMBER, 8, 8, 10, 12, 0)]


def test_load_annotations_lineitem_groups():
    recs = [{"class": "lineitem_amount", "x": 0, "y": 0, "w": 5, "h": 5, "instance_id": 1},
            {"class": "lineitem_amount", "x": 0, "y": 20, "w": 5, "h": 5, "instance_id": 2}]
    page = load_annotations(json.dumps(recs), _page())
    assert sorted(a.instance_id for a in page.annotations) == [1, 2]


def test_load_annotations_clips(caplog):
    recs = [{"class": "vendor_name", "x": 90, "y": 0, "w": 15, "h": 10}]
    with caplog.at_level(logging.WARNING):
        page = load_annotations(json.dumps(recs), _page())
    ann = page.annotations[0]
    assert ann.w == min(90 + 15, 100) - 90 == 10
    assert "clipped" in caplog.text


def test_load_annotations_errors():
    with pytest.raises(ParseError):
        load_annotations(json.dumps([{"class": "total", "x": 0, "y": 0, "w": 1, "h": 1}]), _page())
    with pytest.raises(ParseError):
        load_annotations(json.dumps([{"class": "vendor_name", "x": 0, "y": 0, "w": -1, "h": 1}]),
                         _page())


def test_page_validation():
    with pytest.raises(ValueError):
        DocumentPage(10, 10, [CharBox("a", 8, 0, 5, 5)])
    with pytest.raises(ValueError):
        DocumentPage(0, 10, [])
    twice = [FieldAnnotation(FieldClass.INVOICE_DATE, 0, 0, 2, 2)] * 2
    with pytest.raises(ValueError):
        DocumentPage(10, 10, [], twice)
    with pytest.raises(ValueError):
        DocumentPage(10, 10, [], [FieldAnnotation(FieldClass.VENDOR_NAME, 0, 0, 2, 2, 3)])


@given(st.lists(st.tuples(st.sampled_from("aé€1 -"), st.integers(0, 40), st.integers(0, 40),
                          st.integers(1, 9), st.integers(1, 9)), max_size=15),
       st.lists(st.tuples(st.sampled_from(list(FieldClass)[6:]), st.integers(0, 40),
                          st.integers(1, 4)), max_size=5))
def test_page_json_round_trip(chars, anns):
    page = DocumentPage(50, 50, [CharBox(*c) for c in chars],
                        [FieldAnnotation(cls, x, x, 5, 5, iid) for cls, x, iid in anns])
    assert loads_page(dumps_page(page)) == page
