import json

import numpy as np
import pytest

from facetmatch import synthio
from facetmatch.cli import main, read_config_file, subsample

TINY = ["--epochs", "1", "--dim", "16", "--u", "4", "--layers", "1", "--heads", "2", "--batch-size", "16"]


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def data(tmp_path_factory):
    d = tmp_path_factory.mktemp("data")
    assert run("gen-data", "--items", 60, "--triplets", 200, "--seed", 2, "--out", d) == 0
    return d


@pytest.fixture(scope="module")
def trained(data, tmp_path_factory):
    d = tmp_path_factory.mktemp("run")
    assert run("train", "--data", data, "--out", d, "--seed", 1, "--ks", "1,5", *TINY) == 0
    return d


def snapshot(d):
    return {p.name: p.read_bytes() for p in sorted(d.iterdir()) if p.is_file()}


def test_gen_data_counts_and_determinism(data, tmp_path):
    tr, va, te = (synthio.read_triplets(data / f"{s}.jsonl") for s in ("train", "val", "test"))
    assert (len(tr), len(va), len(te)) == (140, 20, 40)
    assert len(synthio.read_triplets(data / "triplets.jsonl")) == 200
    catalog = synthio.read_catalog(data / "items.jsonl", data / "world.json")
    assert len(catalog) == 60
    run("gen-data", "--items", 60, "--triplets", 200, "--seed", 2, "--out", tmp_path)
    a, b = snapshot(data), snapshot(tmp_path)
    for name in a:
        if name != "config.txt":  # echoes the output path
            assert a[name] == b[name], name


def test_max_edits_one(tmp_path):
    run("gen-data", "--items", 40, "--triplets", 50, "--max-edits", 1, "--out", tmp_path)
    catalog = synthio.read_catalog(tmp_path / "items.jsonl", tmp_path / "world.json")
    for t in synthio.read_triplets(tmp_path / "triplets.jsonl"):
        assert "and" not in catalog.caption_words(t.caption)
        assert len(catalog.diff(t.ref_id, t.tgt_id)) == 1


def test_custom_slots(tmp_path):
    run("gen-data", "--items", 30, "--triplets", 20, "--slots", "hue:h0,h1,h2;fit:f0,f1", "--out", tmp_path)
    catalog = synthio.read_catalog(tmp_path / "items.jsonl", tmp_path / "world.json")
    assert [s.name for s in catalog.slots] == ["hue", "fit"]


def test_config_file_and_overrides(tmp_path, monkeypatch):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("# world\nitems = 30\nmax-edits=1\ntriplets=25\n")
    assert read_config_file(cfg) == {"items": "30", "max_edits": "1", "triplets": "25"}
    out = tmp_path / "o"
    run("gen-data", "--config", cfg, "--triplets", 12, "--out", out)
    echoed = dict(line.split("=", 1) for line in (out / "config.txt").read_text().splitlines())
    assert echoed["command"] == "gen-data"
    assert (echoed["items"], echoed["max_edits"], echoed["triplets"]) == ("30", "1", "12")

    monkeypatch.setenv("LIMN_SEED", "17")
    run("gen-data", "--config", cfg, "--out", out)
    assert "seed=17" in (out / "config.txt").read_text().splitlines()

    cfg.write_text("itemz=3\n")
    assert run("gen-data", "--config", cfg, "--out", out) == 2


def test_exit_codes(data, tmp_path, capsys):
    assert run("eval", "--data", data, "--out", tmp_path) == 2
    assert run("train", "--data", data, "--out", tmp_path, "--ablation", "one_factor", "--u", 4) == 2
    assert run("train", "--data", tmp_path / "missing", "--out", tmp_path) != 0
    assert run("score", "--data", data, "--out", tmp_path, "--checkpoint", tmp_path / "nope.json", "--triplets", "x") != 0
    assert run("train", "--data", data, "--out", tmp_path, "--fraction", 0) == 2
    assert "error" in capsys.readouterr().err
    with pytest.raises(SystemExit):
        run("train", "--temperature-mode", "sideways")


def test_train_outputs_and_table(trained, capsys, data, tmp_path):
    doc = json.loads((trained / "metrics.json").read_text())
    assert set(doc["reports"]) == {"val", "test"}
    assert len(doc["curve"]) == 1
    csv = (trained / "metrics.csv").read_text().splitlines()
    assert csv[0] == "split,k,recall"

    assert run("eval", "--data", data, "--out", tmp_path, "--checkpoint", trained / "model.json", "--ks", "1,5", "--split", "val") == 0
    table = capsys.readouterr().out.splitlines()
    rec = json.loads((tmp_path / "metrics.json").read_text())["reports"]["val"]["recall"]
    assert rec == doc["reports"]["val"]["recall"]
    cells = table[1].split()
    assert cells[0] == "val"
    assert [float(c) for c in cells[1:3]] == [round(100 * rec[k], 2) for k in ("1", "5")]


def test_train_determinism(data, trained, tmp_path):
    first = snapshot(trained)
    run("train", "--data", data, "--out", trained, "--seed", 1, "--ks", "1,5", *TINY)
    second = snapshot(trained)
    for name in ("metrics.json", "metrics.csv", "model.json", "model.json.bin"):
        assert first[name] == second[name], name


def test_score(data, trained, tmp_path, capsys):
    assert run("score", "--data", data, "--out", tmp_path, "--checkpoint", trained / "model.json", "--triplets", data / "val.jsonl") == 0
    rows = [json.loads(l) for l in (tmp_path / "scores.jsonl").read_text().splitlines()]
    assert len(rows) == 20 and all(np.isfinite(r["score"]) for r in rows)
    t = synthio.read_triplets(data / "val.jsonl")[0]
    catalog = synthio.read_catalog(data / "items.jsonl", data / "world.json")
    words = " ".join(catalog.caption_words(t.caption))
    out2 = tmp_path / "one"
    run("score", "--data", data, "--out", out2, "--checkpoint", trained / "model.json", "--ref", t.ref_id, "--tgt", t.tgt_id, "--caption", words)
    single = json.loads((out2 / "scores.jsonl").read_text())
    assert single["score"] == pytest.approx(rows[0]["score"], abs=1e-12)
    capsys.readouterr()
    assert run("score", "--data", data, "--out", out2, "--checkpoint", trained / "model.json", "--ref", 0, "--tgt", 1, "--caption", "make it zebra") == 2


def test_mine_and_caption(data, trained, tmp_path):
    mine = tmp_path / "mine"
    assert run("mine-pairs", "--data", data, "--out", mine, "--checkpoint", trained / "model.json", "--budget", 25) == 0
    pairs = synthio.read_pairs(mine / "pairs.jsonl")
    assert len(pairs) == 25
    cap = tmp_path / "cap"
    assert run("caption", "--data", data, "--out", cap, "--pairs", mine / "pairs.jsonl", "--cap-epochs", 3) == 0
    rows = synthio.read_captions(cap / "captions.jsonl")
    assert len(rows) == 25
    assert (cap / "captioner.json").exists() and (cap / "caption_metrics.json").exists()
    assert run("mine-pairs", "--data", data, "--out", mine, "--strategy", "similarity_band") == 2


def test_self_train_reproducible(data, tmp_path):
    argv = ["self-train", "--data", data, "--port", "bag", "--max-iters", 1, "--cap-epochs", 3, "--seed", 4]
    assert run(*argv, "--out", tmp_path / "a") == 0
    assert run(*argv, "--out", tmp_path / "b") == 0
    a = json.loads((tmp_path / "a" / "selftrain_report.json").read_text())
    b = json.loads((tmp_path / "b" / "selftrain_report.json").read_text())
    a["config"].pop("out"), b["config"].pop("out")
    assert a == b and len(a["iterations"]) == 2
    assert run(*argv, "--out", tmp_path / "a") == 0
    assert (tmp_path / "a" / "best_captioner.json").exists()

    rep = tmp_path / "rep"
    assert run("report", "--runs", tmp_path / "a", "--out", rep) == 0
    assert "self-training" in (rep / "report.txt").read_text()
    assert run("report", "--runs", rep, "--out", rep) == 2


def test_untrained_is_chance_on_a_blind_world(tmp_path):
    # with overwhelming render noise images carry no signal, so an untrained
    # network ranks the target uniformly at random
    d = tmp_path / "blind"
    run("gen-data", "--items", 100, "--triplets", 400, "--sigma", 100, "--seed", 5, "--out", d)
    run("eval", "--data", d, "--out", tmp_path / "e", "--untrained", "--split", "train", "--ks", "10", *TINY)
    r10 = json.loads((tmp_path / "e" / "metrics.json").read_text())["reports"]["train"]["recall"]["10"]
    n = 280
    assert abs(r10 - 0.10) < 4 * np.sqrt(0.1 * 0.9 / n)


def test_subsample():
    xs = list(range(100))
    a = subsample(xs, 0.25, 3)
    assert len(a) == 25 and a == sorted(a) and a == subsample(xs, 0.25, 3)
    assert subsample(xs, 1.0, 3) is xs
