import json
import shutil

import numpy as np
import pytest

from chargrid import container
from chargrid.cli import load_train_config, main
from chargrid.evaluate import FIELD_KEYS


def test_synth_writes_pages_and_truth(tmp_path):
    assert main(["synth", "--n", "10", "--seed", "1", "--out", str(tmp_path / "d")]) == 0
    assert len(list((tmp_path / "d" / "pages").glob("*.json"))) == 10
    assert len(list((tmp_path / "d" / "truth").glob("*.json"))) == 10
    manifest = json.loads((tmp_path / "d" / "manifest.json").read_text())
    assert manifest["seed"] == 1 and manifest["command"] == "synth"


def test_global_options_before_command(tmp_path):
    assert main(["--seed", "1", "synth", "--n", "2", "--out", str(tmp_path / "a")]) == 0
    assert main(["synth", "--n", "2", "--seed", "1", "--out", str(tmp_path / "b")]) == 0
    for name in ("page_0000.json", "page_0001.json"):
        assert (tmp_path / "a" / "pages" / name).read_bytes() == (tmp_path / "b" / "pages" / name).read_bytes()


def test_evaluate_truth_against_itself(tmp_path, capsys):
    main(["synth", "--n", "4", "--out", str(tmp_path / "d")])
    truth = tmp_path / "d" / "truth"
    assert main(["evaluate", "--pred", str(truth), "--truth", str(truth), "--out", str(tmp_path / "r.json")]) == 0
    report = json.loads((tmp_path / "r.json").read_text())
    for k in FIELD_KEYS:
        m = report["fields"][k]["measure"]
        assert m is None or m == 1.0
    assert "Invoice Number" in capsys.readouterr().out
    assert (tmp_path / "r.txt").exists()


def test_unknown_flag_exits_2(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["synth", "--bogus"])
    assert exc.value.code == 2
    assert "usage" in capsys.readouterr().err


def test_failure_returns_nonzero(tmp_path, capsys):
    bad = tmp_path / "bad.tsv"
    bad.write_text("not\ta\tvalid\ttsv\n")
    assert main(["ingest", "--tsv", str(bad), "--out", str(tmp_path / "p.json")]) == 1
    assert "chargrid ingest: error" in capsys.readouterr().err


def test_ingest(tmp_path):
    tsv = tmp_path / "w.tsv"
    header = "level\tpage_num\tblock_num\tpar_num\tline_num\tword_num\tleft\ttop\twidth\theight\tconf\ttext"
    tsv.write_text(header + "\n5\t1\t1\t1\t1\t1\t10\t20\t30\t12\t95\tabc\n")
    ann = tmp_path / "a.json"
    ann.write_text(json.dumps([{"class": "invoice_number", "x": 10, "y": 20, "w": 30, "h": 12}]))
    out = tmp_path / "p.json"
    assert main(["ingest", "--tsv", str(tsv), "--annotations", str(ann), "--page-size", "100", "80",
                 "--out", str(out)]) == 0
    page = json.loads(out.read_text())
    assert len(page["chars"]) == 3 and len(page["annotations"]) == 1
    ann.write_text(json.dumps([{"x": 1}]))
    assert main(["ingest", "--tsv", str(tsv), "--annotations", str(ann), "--out", str(out)]) == 1


def test_config_file_merges_into_preset(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"optimizer": {"lr": 0.01}, "network": {"base_channels": 8}}))
    cfg = load_train_config(path, "toy")
    assert cfg.optimizer.lr == 0.01 and cfg.optimizer.momentum == 0.9
    assert cfg.network.base_channels == 8 and cfg.network.input_h == 128


def test_build_grid_size_flags(tmp_path):
    d = tmp_path / "d"
    main(["synth", "--n", "1", "--out", str(d)])
    main(["vocab", "--data", str(d), "--out", str(tmp_path / "v.json")])
    assert main(["build-grid", "--page", str(d / "pages"), "--vocab", str(tmp_path / "v.json"),
                 "--h", "64", "--w", "48", "--with-targets", "--out", str(tmp_path / "g")]) == 0
    arrays = container.load(tmp_path / "g" / "page_0000.cgt")
    assert arrays["chargrid"].shape == (128, 96)
    assert arrays["input"].shape == (64, 48, 54)
    assert arrays["seg_labels"].shape == (64, 48)
    assert arrays["anchor_state"].shape == (64, 48, 4)


def test_full_pipeline_smoke(tmp_path):
    d, v, g, ck, pr = (tmp_path / n for n in ("d", "v.json", "g", "ck", "pred"))
    assert main(["synth", "--n", "3", "--seed", "2", "--out", str(d)]) == 0
    assert main(["vocab", "--data", str(d), "--n-classes", "40", "--out", str(v)]) == 0
    assert main(["build-grid", "--page", str(d), "--vocab", str(v), "--preset", "toy", "--with-targets",
                 "--out", str(g)]) == 0
    assert main(["train", "--data", str(g), "--vocab", str(v), "--preset", "toy", "--iterations", "50",
                 "--out", str(ck)]) == 0
    assert (ck / "params.cgt").exists() and (ck / "train_log.csv").exists()
    assert main(["predict", "--ckpt", str(ck), "--page", str(d / "pages"), "--out", str(pr)]) == 0
    assert main(["predict", "--ckpt", str(ck), "--page", str(d / "pages" / "page_0000.json"),
                 "--out", str(tmp_path / "one.json"), "--overlay", str(tmp_path / "one.png")]) == 0
    assert (tmp_path / "one.png").read_bytes()[:4] == b"\x89PNG"
    assert main(["evaluate", "--pred", str(pr), "--truth", str(d / "truth"),
                 "--out", str(tmp_path / "report.json")]) == 0
    report = json.loads((tmp_path / "report.json").read_text())
    assert report["n_documents"] == 3
