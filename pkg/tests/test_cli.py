import json
import subprocess
import sys

import pytest

from karex.cli import bench_main, corpus_main, kge_main, main
from karex.corpus import dump_corpus
from karex.synthetic import planted_cue_corpus, toy_triples


def last_json(capsys):
    out = capsys.readouterr().out.strip()
    return json.loads(out[out.index("{"):])


@pytest.fixture
def corpus_file(tmp_path):
    p = tmp_path / "c.jsonl"
    dump_corpus(planted_cue_corpus(20, 5, 5), p)
    return p


@pytest.fixture
def triples_file(tmp_path):
    p = tmp_path / "t.tsv"
    p.write_text("head_id\trelation\ttail_id\thead_type\ttail_type\n"
                 + "".join("\t".join(row) + "\n" for row in toy_triples()))
    return p


def test_corpus_validate(corpus_file, capsys):
    assert corpus_main(["validate", str(corpus_file)]) == 0
    out = last_json(capsys)
    assert out["documents"] == 30 and out["splits"]["train"] == 20


def test_corpus_split(corpus_file, tmp_path, capsys):
    out_path = tmp_path / "split.json"
    assert corpus_main(["split", str(corpus_file), "--sizes", "20,5,5", "--stratify", "--out", str(out_path)]) == 0
    assert last_json(capsys)["train"] == 20
    assert len(json.loads(out_path.read_text())["test"]) == 5


def test_corpus_normalize(corpus_file, tmp_path, capsys):
    table = tmp_path / "map.tsv"
    table.write_text("source\ttarget\n")
    assert corpus_main(["normalize", str(corpus_file), "--policy", "string_match", "--table", str(table),
                        "--out", str(tmp_path / "n.jsonl")]) == 0
    assert last_json(capsys)["unmapped"] == 60


def test_corpus_bad_file(tmp_path, capsys):
    p = tmp_path / "bad.jsonl"
    p.write_text("{nope\n")
    assert corpus_main(["validate", str(p)]) != 0


def test_kge_train_eval(triples_file, tmp_path, capsys):
    model = tmp_path / "m.npz"
    assert kge_main(["build", str(triples_file)]) == 0
    assert last_json(capsys)["triples"] == 60
    assert kge_main(["train", str(triples_file), "--dim", "8", "--epochs", "3", "--lr", "0.1",
                     "--model", str(model), "--export", str(tmp_path / "e.tsv")]) == 0
    capsys.readouterr()
    assert (tmp_path / "e.tsv").exists()
    assert kge_main(["eval", str(triples_file), "--model", str(model)]) == 0
    out = last_json(capsys)
    assert 0 < out["mrr"] <= 1 and out["queries"] == 120 and set(out["hits"]) == {"1", "3", "10"}


def test_kge_malformed(tmp_path):
    p = tmp_path / "bad.tsv"
    p.write_text("a\tr\n")
    assert kge_main(["build", str(p)]) != 0


def test_bench_grid_counts(capsys):
    assert bench_main(["grid"]) == 0
    assert "108 configurations" in capsys.readouterr().err
    assert bench_main(["grid", "--override", "lr=0.001", "--override", "epochs=1"]) == 0
    assert "36 configurations" in capsys.readouterr().err


def test_bench_protocol_and_report(tmp_path, capsys):
    axes = tmp_path / "axes.json"
    axes.write_text(json.dumps({"batch_size": [16]}))
    results = tmp_path / "r.jsonl"
    common = ["--axes", str(axes), "--override", "lr=0.001", "--override", "epochs=1",
              "--override", "max_length=64", "--results", str(results)]
    assert bench_main(["protocol", *common]) == 0
    out = last_json(capsys)
    assert out["runs_executed"] == 3 and out["winner"]["seeds"] == [907, 908, 909]
    assert bench_main(["protocol", *common]) == 0
    assert last_json(capsys)["runs_executed"] == 0
    assert bench_main(["report", "--results", str(results), "--out", str(tmp_path / "tables")]) == 0
    assert (tmp_path / "tables" / "main.tsv").exists()


def test_dispatch_usage(capsys):
    assert main([]) == 2
    assert main(["nope"]) == 2


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "karex", "bench", "grid"], capture_output=True, text=True)
    assert proc.returncode == 0 and "108 configurations" in proc.stderr
