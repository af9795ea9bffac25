import dataclasses
import hashlib
import itertools
from collections import Counter

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import typed_corpus
from karex.harness import (BASELINE_AXES, EvalReport, ExperimentConfig, ResultsStore, RunResult, Scheduler,
                           baseline_grid, enumerate_grid, extension_grid, protocol_run_count,
                           report_tables, reports_from_store, run_protocol, stratified_subset,
                           training_size_ablation, write_tables)
from karex.model import TrainConfig

SMALL_TRAIN = TrainConfig(lr=1e-3, batch_size=8, max_length=64, override=True)


def fake_score(cfg):
    h = hashlib.sha256(cfg.run_id().encode()).digest()
    return 0.5 + h[0] / 1024, 0.5 + h[1] / 1024


class FakeRunner:
    """Deterministic pseudo-scores keyed on the run identity; records every call."""

    def __init__(self, fail=()):
        self.calls = []
        self.fail = set(fail)

    def __call__(self, cfg, train_ids=None):
        self.calls.append((cfg, train_ids))
        if cfg.config_id() in self.fail:
            raise RuntimeError("boom")
        val, test = fake_score(cfg)
        return RunResult(val, test, {"A": (test, test, test)}, 0.0, {})


def test_baseline_grid_size():
    grid = baseline_grid()
    assert len(grid) == 108
    assert len({c.config_id() for c in grid}) == 108


def test_singleton_grid():
    grid = enumerate_grid({"lr": [5e-5]})
    assert len(grid) == 1 and grid[0].train.lr == 5e-5


def test_grid_order_first_axis_slowest():
    grid = enumerate_grid({"batch_size": [8, 16], "max_length": [256, 384, 512]})
    got = [(c.train.batch_size, c.train.max_length) for c in grid]
    assert got == list(itertools.product([8, 16], [256, 384, 512]))


def test_grid_routes_axes():
    grid = enumerate_grid({"dataset": ["x", "y"], "sides": ["head"], "lr": [3e-5]})
    assert [c.dataset for c in grid] == ["x", "y"]
    assert grid[0].params == {"sides": "head"}


def test_grid_rejects_off_grid_values():
    with pytest.raises(ValueError):
        enumerate_grid({"lr": [0.5]})
    assert enumerate_grid({"lr": [0.5]}, override=True)[0].train.lr == 0.5


def test_extension_grid_keeps_winner_hparams():
    winner = ExperimentConfig("synthetic", train=TrainConfig(lr=5e-5, batch_size=32))
    grid = extension_grid(winner, "embedding", {"side_lr": [0.001, 0.0001], "embedding_store": ["kg"]})
    assert len(grid) == 2
    assert all(c.train.lr == 5e-5 and c.train.batch_size == 32 and c.variant == "embedding" for c in grid)


def test_identity_hashes():
    a = ExperimentConfig("synthetic")
    assert a.run_id() != a.with_seed(908).run_id()
    assert a.config_id() == a.with_seed(908).config_id()
    assert ExperimentConfig.from_dict(a.to_dict()) == a
    b = ExperimentConfig("synthetic", variant_params={"b": 1, "a": 2})
    c = ExperimentConfig("synthetic", variant_params={"a": 2, "b": 1})
    assert b.run_id() == c.run_id()


def small_grid(n):
    return enumerate_grid({"lr": [5e-6, 3e-5, 5e-5], "batch_size": [8, 16]})[:n]


def test_protocol_counts():
    runner = FakeRunner()
    res = run_protocol(small_grid(4), runner, top_k=3)
    assert res.runs_executed == len(runner.calls) == 10 == protocol_run_count(4)
    assert len(res.finalists) == 3


def test_protocol_single_config():
    grid = small_grid(1)
    res = run_protocol(grid, FakeRunner(), top_k=3)
    assert res.runs_executed == 3
    assert res.winner.config_id == grid[0].config_id()


def test_protocol_selection_and_statistics():
    runner = FakeRunner()
    grid = small_grid(6)
    res = run_protocol(grid, runner, top_k=3)
    phase1 = sorted(range(6), key=lambda i: (-fake_score(grid[i].with_seed(907))[0], i))[:3]
    assert [f.config_id for f in res.finalists] == [grid[i].config_id() for i in phase1]
    w = res.winner
    assert w.seeds == [907, 908, 909]
    assert w.val_mean == max(f.val_mean for f in res.finalists)
    tests = [fake_score(w.config.with_seed(s))[1] for s in (907, 908, 909)]
    mean = sum(tests) / 3
    sd = (sum((t - mean) ** 2 for t in tests) / 2) ** 0.5
    assert w.mean == pytest.approx(mean, abs=1e-12) and w.sd == pytest.approx(sd, abs=1e-12)


def test_protocol_resumes(tmp_path):
    store = ResultsStore(tmp_path / "r.jsonl")
    first = run_protocol(small_grid(4), FakeRunner(), store)
    runner = FakeRunner()
    again = run_protocol(small_grid(4), runner, ResultsStore(tmp_path / "r.jsonl"))
    assert runner.calls == [] and again.runs_executed == 0
    assert again.winner.config_id == first.winner.config_id


def test_failed_runs_excluded():
    grid = small_grid(4)
    runner = FakeRunner(fail={grid[0].config_id(), grid[1].config_id()})
    res = run_protocol(grid, runner, top_k=3)
    assert len(res.failed) == 2
    assert all(f.config_id not in runner.fail for f in res.finalists)
    assert len(res.finalists) == 2


def test_scheduler_records_failure(tmp_path):
    store = ResultsStore(tmp_path / "r.jsonl")
    cfg = small_grid(1)[0]
    rec = Scheduler(FakeRunner(fail={cfg.config_id()}), store).run(cfg)
    assert rec.status == "failed" and "boom" in rec.error
    assert ResultsStore(tmp_path / "r.jsonl").get(cfg.run_id()).status == "failed"


def test_results_dir_env(tmp_path, monkeypatch):
    monkeypatch.setenv("KAREX_RESULTS_DIR", str(tmp_path))
    store = ResultsStore.default()
    Scheduler(FakeRunner(), store).run(small_grid(1)[0])
    assert len(list(tmp_path.iterdir())) == 1


# ---------------------------------------------------------------------------
# ablation


def test_ablation_run_accounting():
    corpus = typed_corpus({"A": 150, "B": 50})
    runner = FakeRunner()
    res = training_size_ablation(corpus, ExperimentConfig("synthetic", train=SMALL_TRAIN), runner)
    assert res.runs_scheduled == res.runs_executed == len(runner.calls) == 48
    assert [p.size for p in res.points] == list(range(25, 201, 25))
    assert all(len(p.f1) == 6 and len(set(p.seeds)) == 6 for p in res.points)
    assert all(len(ids) == cfg.train_size for cfg, ids in runner.calls)


def test_subset_preserves_ratio():
    corpus = typed_corpus({"A": 150, "B": 50})
    types = {d.doc_id: d.relations[0].relation_type for d in corpus}
    for seed in range(907, 913):
        draw = stratified_subset(corpus, 50, seed)
        counts = Counter(types[i] for i in draw.doc_ids)
        assert abs(counts["A"] - 37.5) <= 1 and abs(counts["B"] - 12.5) <= 1
        assert len(set(draw.doc_ids)) == 50


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 40), st.integers(0, 30), st.integers(0, 10 ** 6))
def test_subset_size_and_determinism(na, nb, seed):
    corpus = typed_corpus({"A": na, "B": nb})
    size = max(1, (na + nb) // 2)
    a, b = stratified_subset(corpus, size, seed), stratified_subset(corpus, size, seed)
    assert a == b and len(a.doc_ids) == size


def test_ablation_clamps_oversized():
    corpus = typed_corpus({"A": 30, "B": 10})
    res = training_size_ablation(corpus, ExperimentConfig("synthetic", train=SMALL_TRAIN), FakeRunner(),
                                 sizes=[25, 50], seeds=2)
    small, big = res.points
    assert not small.clamped and small.effective_size == 25
    assert big.clamped and big.effective_size == 40


# ---------------------------------------------------------------------------
# reporting


def report(variant, test_f1, dataset="synthetic"):
    cfg = ExperimentConfig(dataset, train=dataclasses.replace(SMALL_TRAIN, variant=variant))
    per = [{"A": (f, f, f)} for f in test_f1]
    return EvalReport(cfg, list(range(907, 907 + len(test_f1))), list(test_f1), list(test_f1), per, 0.0, [])


def test_report_tables():
    tables = report_tables([report("baseline", [0.80, 0.82, 0.84]), report("embedding", [0.85]),
                            report("text", [0.70, 0.72, 0.74])])
    main = tables["main"]
    header = main[0]
    rows = {r[header.index("variant")]: dict(zip(header, r)) for r in main[1:]}
    assert rows["baseline"]["group"] == "Baselines" and rows["baseline"]["sd_f1"] == "0.0200"
    assert rows["embedding"]["group"] == "Entity Embeddings" and rows["embedding"]["sd_f1"] == "0.0000"
    assert rows["embedding"]["delta_vs_baseline"] == "+0.0300"
    assert rows["text"]["delta_vs_baseline"] == "-0.1000"
    assert [r[header.index("group")] for r in main[1:]] == ["Baselines", "Text", "Entity Embeddings"]
    assert len(tables["per_type"]) == 4 and len(tables["best_hparams"]) == 4


def test_write_and_reload_tables(tmp_path):
    store = ResultsStore(tmp_path / "r.jsonl")
    run_protocol(small_grid(3), FakeRunner(), store, top_k=1)
    reports = reports_from_store(ResultsStore(tmp_path / "r.jsonl"))
    assert sorted(len(r.test_f1) for r in reports) == [1, 1, 3]
    paths = write_tables(report_tables(reports), tmp_path / "tables")
    assert {p.name for p in paths} == {"main.tsv", "per_type.tsv", "best_hparams.tsv"}
    assert (tmp_path / "tables" / "main.tsv").read_text().count("\n") == 4


def test_baseline_axes_sizes():
    assert [len(v) for v in BASELINE_AXES.values()] == [3, 3, 3, 2, 2]
