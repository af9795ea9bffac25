"""Grid search with seed reruns, a training-size curve, and the report tables.

A stand-in runner keeps this fast; swap in karex.pipeline.ModelRunner for real training.

Run: python demos/protocol_and_ablation.py
"""
import random
import tempfile
from pathlib import Path

from karex.harness import (ExperimentConfig, ResultsStore, RunResult, enumerate_grid, report_tables,
                           run_protocol, training_size_ablation, write_tables)
from karex.synthetic import planted_cue_corpus


def runner(cfg, train_ids=None):
    # pretend bigger batches and more data help a little
    rnd = random.Random(cfg.run_id())
    size = len(train_ids) if train_ids is not None else 200
    base = 0.6 + 0.001 * cfg.train.batch_size + 0.001 * size
    return RunResult(base + rnd.gauss(0, 0.01), base + rnd.gauss(0, 0.01), {}, 0.0)


with tempfile.TemporaryDirectory() as d:
    store = ResultsStore(Path(d) / "results.jsonl")
    grid = enumerate_grid({"lr": [5e-6, 3e-5, 5e-5], "batch_size": [8, 16, 32]})
    res = run_protocol(grid, runner, store)
    w = res.winner
    print(f"{len(grid)} configs, {res.runs_executed} runs; winner lr={w.config.train.lr} "
          f"batch={w.config.train.batch_size}: test F1 {w.mean:.3f} +/- {w.sd:.3f}")

    again = run_protocol(grid, runner, store)
    print("rerun over the same ledger executed", again.runs_executed, "runs")

    curve = training_size_ablation(planted_cue_corpus().by_split_hint("train"), w.config, runner, store=store)
    for p in curve.points:
        print(f"  {p.size:3d} docs: F1 {p.mean:.3f} +/- {p.sd:.3f}")

    paths = write_tables(report_tables(res.finalists, curve.points), Path(d) / "tables")
    print((Path(d) / "tables" / "main.tsv").read_text())
