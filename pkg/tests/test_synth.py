import numpy as np
import pytest

from chargrid.container import ContainerError, dumps, load, loads, save
from chargrid.ingest import loads_page, dumps_page, validate_page
from chargrid.synth import SynthConfig, TemplateError, format_amount, generate, write_dataset
from chargrid.targets import count_lineitems


def test_same_seed_same_dataset():
    a = generate(SynthConfig(seed=9, n_pages=5))
    b = generate(SynthConfig(seed=9, n_pages=5))
    assert [dumps_page(p) + t.dumps() for p, t in a] == [dumps_page(p) + t.dumps() for p, t in b]
    c = generate(SynthConfig(seed=10, n_pages=5))
    assert [dumps_page(p) for p, _ in a] != [dumps_page(p) for p, _ in c]


def test_pages_are_valid_and_round_trip():
    for page, _ in generate(SynthConfig(seed=2, n_pages=20)):
        validate_page(page)
        assert loads_page(dumps_page(page)) == page


def test_each_char_has_at_most_one_class():
    for page, _ in generate(SynthConfig(seed=3, n_pages=20)):
        for c in page.chars:
            cx, cy = c.center
            classes = {a.field_class for a in page.annotations
                       if a.x <= cx < a.x + a.w and a.y <= cy < a.y + a.h}
            assert len(classes) <= 1


def test_item_counts_follow_config():
    counts = [count_lineitems(p) for p, _ in generate(SynthConfig(seed=5, n_pages=60, items=(2, 5)))]
    assert min(counts) >= 2 and max(counts) <= 5
    for page, truth in generate(SynthConfig(seed=5, n_pages=10)):
        assert count_lineitems(page) == len(truth.line_items)


def test_share_of_long_invoices():
    counts = np.array([count_lineitems(p) for p, _ in generate(SynthConfig(seed=0, n_pages=1000))])
    assert (counts > 3).mean() >= 0.3


def test_layout_that_cannot_fit():
    with pytest.raises(TemplateError):
        generate(SynthConfig(n_pages=1, page_h=200, items=(8, 8)), max_attempts=3)


def test_bad_config():
    with pytest.raises(ValueError):
        SynthConfig(items=(5, 2))
    with pytest.raises(ValueError):
        SynthConfig(languages=("xx",))
    assert SynthConfig.from_dict(SynthConfig(seed=4).to_dict()) == SynthConfig(seed=4)


def test_amount_formats():
    assert format_amount(1234.5, "en") == "1,234.50"
    assert format_amount(1234.5, "de") == "1.234,50"


def test_write_dataset(tmp_path):
    paths = write_dataset(generate(SynthConfig(seed=1, n_pages=3)), tmp_path)
    assert [p.name for p in paths] == ["page_0000.json", "page_0001.json", "page_0002.json"]
    assert len(list((tmp_path / "truth").glob("*.json"))) == 3


def test_container_round_trip(tmp_path):
    arrays = {"a": np.arange(6, dtype=np.int8).reshape(2, 3), "b": np.random.default_rng(0).random((2, 1, 3)),
              "scalar": np.array(3.5, np.float32), "empty": np.zeros((0, 4))}
    back = loads(dumps(arrays))
    assert list(back) == list(arrays)
    for k in arrays:
        assert back[k].dtype == arrays[k].dtype and np.array_equal(back[k], arrays[k])
    save(tmp_path / "x.cgt", arrays)
    assert (tmp_path / "x.cgt").read_bytes() == dumps(arrays)
    assert list(load(tmp_path / "x.cgt")) == list(arrays)


def test_container_rejects_garbage():
    with pytest.raises(ContainerError):
        loads(b"not a container")
    with pytest.raises(ContainerError):
        loads(dumps({"a": np.zeros(10)})[:-5])
