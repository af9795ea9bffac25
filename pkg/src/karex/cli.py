"""Command-line entry points: ``corpus``, ``kge`` and ``bench``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Sequence

from . import corpus as corpus_mod
from . import kge as kge_mod

log = logging.getLogger("karex")


def _setup_logging(verbose: bool) -> None:
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING, format="%(levelname)s %(message)s")


def _emit(obj) -> None:
    print(json.dumps(obj, indent=2, sort_keys=True, default=str))


def _fail(msg: str) -> int:
    print(f"error: {msg}", file=sys.stderr)
    return 1


# ---------------------------------------------------------------------------
# corpus


def corpus_main(argv: Sequence[str] | None = None) -> int:
    ap = argparse.ArgumentParser(prog="corpus", description="Validate, normalize and split interchange corpora.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("validate", help="load a corpus and report counts")
    p.add_argument("path")

    p = sub.add_parser("normalize", help="attach ontology identifiers to mentions")
    p.add_argument("path")
    p.add_argument("--table", action="append", default=[], help="mapping TSV with header 'source<TAB>target'")
    p.add_argument("--policy", choices=corpus_mod.POLICIES, default="gold_passthrough")
    p.add_argument("--source-scheme", help="table key scheme (default: 'surface' for string_match, else 'id')")
    p.add_argument("--target-scheme", default="kb")
    p.add_argument("--entity-type", help="apply the tables to this entity type only")
    p.add_argument("--out", help="write the normalized corpus here")

    p = sub.add_parser("split", help="assign documents to train/val/test")
    p.add_argument("path")
    p.add_argument("--sizes", required=True, help="three integer sizes or ratios, comma separated")
    p.add_argument("--seed", type=int, default=907)
    p.add_argument("--stratify", action="store_true")
    p.add_argument("--out", help="write the assignment JSON here")

    args = ap.parse_args(argv)
    _setup_logging(args.verbose)
    try:
        corpus = corpus_mod.load_corpus(args.path)
        if args.cmd == "validate":
            _emit({"documents": len(corpus), "mentions": corpus.n_mentions,
                   "relations": sum(len(d.relations) for d in corpus),
                   "splits": {s: len(corpus.by_split_hint(s)) for s in corpus_mod.SPLITS}})
        elif args.cmd == "normalize":
            scheme = args.source_scheme or ("surface" if args.policy == "string_match" else "id")
            tables = [corpus_mod.MappingTable.from_tsv(t, scheme, args.target_scheme, args.entity_type)
                      for t in args.table]
            normalized, stats = corpus_mod.normalize_mentions(corpus, tables, args.policy)
            if args.out:
                corpus_mod.dump_corpus(normalized, args.out)
            _emit({"policy": args.policy, "unmapped": len(stats.unmapped),
                   "per_type": {t: {"mapped": m, "total": n, "ratio": round(r, 6)} for t, m, n, r in stats.as_rows()}})
        else:
            raw = [x.strip() for x in args.sizes.split(",")]
            spec = [int(x) for x in raw] if all(x.isdigit() for x in raw) else [float(x) for x in raw]
            split = corpus_mod.make_splits(corpus, spec, seed=args.seed, stratify=args.stratify)
            if args.out:
                Path(args.out).write_text(json.dumps(split.as_dict(), indent=2))
            _emit({"train": len(split.train), "val": len(split.val), "test": len(split.test),
                   "unused": len(split.unused), "seed": args.seed, "stratify": args.stratify})
    except (corpus_mod.CorpusError, ValueError, OSError) as exc:
        return _fail(str(exc))
    return 0


# ---------------------------------------------------------------------------
# kge


def _kge_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("triples", nargs="+", help="triple TSV files")
    p.add_argument("--scope", choices=list(kge_mod.SCOPES), default="complete")


def kge_main(argv: Sequence[str] | None = None) -> int:
    ap = argparse.ArgumentParser(prog="kge", description="Build knowledge graphs and train MuRE/RotatE embeddings.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("build", help="deduplicate triples and report graph statistics")
    _kge_common(p)
    p.add_argument("--out", help="write the in-scope deduplicated triples here")

    p = sub.add_parser("train", help="train an embedding model")
    _kge_common(p)
    p.add_argument("--method", choices=kge_mod.METHODS, default="rotate")
    p.add_argument("--dim", type=int, default=64)
    p.add_argument("--lr", type=float, default=0.001)
    p.add_argument("--batch", type=int, default=16)
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--negatives", type=int, default=8)
    p.add_argument("--gamma", type=float, default=6.0)
    p.add_argument("--seed", type=int, default=907)
    p.add_argument("--model", default="kge_model.npz", help="model parameters (.npz)")
    p.add_argument("--export", help="entity embedding snapshot for the knowledge module")
    p.add_argument("--export-relations", help="relation parameters, for inspection")

    p = sub.add_parser("eval", help="filtered link prediction")
    _kge_common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--test", help="triples to rank (default: the whole graph)")
    p.add_argument("--ks", default="1,3,10")
    p.add_argument("--raw", action="store_true", help="unfiltered ranking")

    args = ap.parse_args(argv)
    _setup_logging(args.verbose)
    try:
        graph = kge_mod.build_graph(args.triples, args.scope)
        if args.cmd == "build":
            if args.out:
                with open(args.out, "w", encoding="utf-8") as fh:
                    for h, r, t in graph.triples:
                        fh.write(f"{graph.entities[h]}\t{graph.relations[r]}\t{graph.entities[t]}\t"
                                 f"{graph.entity_types[h]}\t{graph.entity_types[t]}\n")
            _emit(graph.stats())
        elif args.cmd == "train":
            hp = kge_mod.KGEHyperparams(args.method, args.dim, args.lr, args.batch, args.epochs, args.negatives,
                                        args.gamma)
            res = kge_mod.train_kge(graph, hp, seed=args.seed)
            res.model.save(args.model)
            if args.export:
                kge_mod.export_model(res.model, graph, args.export, args.export_relations)
            _emit({"graph": graph.stats(), "first_loss": res.losses[0] if res.losses else None,
                   "final_loss": res.losses[-1] if res.losses else None, "model": args.model})
        else:
            model = kge_mod.KGEModel.load(args.model)
            if model.entity_matrix().shape[0] != graph.n_entities:
                return _fail("model and graph disagree on the number of entities")
            test = graph.triples
            if args.test:
                test = graph.encode(row[:3] for row in _read_tsv(args.test))
            ks = [int(k) for k in args.ks.split(",")]
            res = kge_mod.evaluate_link_prediction(model, test, graph, ks, filtered=not args.raw)
            _emit({"mrr": res.mrr, "hits": res.hits, "queries": res.n_queries, "filtered": res.filtered,
                   "random_mrr": kge_mod.random_ranker_mrr(test, graph, filtered=not args.raw)})
    except (kge_mod.GraphFormatError, kge_mod.TrainingDivergedError, ValueError, KeyError, OSError) as exc:
        return _fail(str(exc))
    return 0


def _read_tsv(path: str) -> list[list[str]]:
    with open(path, encoding="utf-8") as fh:
        return [line.rstrip("\n").split("\t") for line in fh if line.strip()]


# ---------------------------------------------------------------------------
# bench


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _parse_overrides(pairs: Sequence[str]) -> dict:
    out = {}
    for pair in pairs:
        if "=" not in pair:
            raise ValueError(f"override {pair!r} is not key=value")
        k, v = pair.split("=", 1)
        out[k.strip()] = _parse_value(v.strip())
    return out


def _parse_sizes(text: str) -> list[int]:
    if ":" in text:
        lo, hi, step = (int(x) for x in text.split(":"))
        return list(range(lo, hi + 1, step))
    return [int(x) for x in text.split(",")]


def _bench_base(args):
    from dataclasses import fields, replace

    from .harness import ExperimentConfig
    from .model.training import TrainConfig

    overrides = _parse_overrides(args.override)
    names = {f.name for f in fields(TrainConfig)}
    train_kw = {k: v for k, v in overrides.items() if k in names}
    variant_kw = {k: v for k, v in overrides.items() if k not in names}
    train = TrainConfig(variant=args.variant, override=True, **train_kw) if train_kw else TrainConfig(variant=args.variant)
    base = ExperimentConfig(args.dataset, args.encoder, train, variant_kw)
    return base, set(train_kw)


def _bench_grid(args):
    from .harness import BASELINE_AXES, enumerate_grid

    base, fixed = _bench_base(args)
    if args.axes:
        axes = json.loads(Path(args.axes).read_text())
    else:
        axes = {k: v for k, v in BASELINE_AXES.items() if k not in fixed}
    return enumerate_grid(axes, base) if axes else [base]


def _datasets(args):
    from .pipeline import load_bundle, synthetic_bundle

    if args.dataset == "synthetic":
        return {"synthetic": synthetic_bundle()}
    bundle = load_bundle(args.manifest or args.dataset)
    return {args.dataset: bundle}


def _store(args):
    from .harness import ResultsStore

    return ResultsStore(args.results) if args.results else ResultsStore.default()


def bench_main(argv: Sequence[str] | None = None) -> int:
    ap = argparse.ArgumentParser(prog="bench", description="Hyperparameter grids, seed protocol, ablation, reports.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="cmd", required=True)

    def common(p, runs: bool = True):
        p.add_argument("--dataset", default="synthetic", help="'synthetic' or a dataset manifest path")
        p.add_argument("--manifest", help="dataset manifest when --dataset is only a name")
        p.add_argument("--encoder", default="tiny", help="'tiny' or 'hf:<model>'")
        p.add_argument("--variant", default="baseline", choices=["baseline", "text", "embedding", "structure"])
        p.add_argument("--override", action="append", default=[], metavar="k=v",
                       help="fix a hyperparameter (allows values outside the grids)")
        p.add_argument("--axes", help="JSON file mapping axis -> values (default: the baseline grid)")
        if runs:
            p.add_argument("--results", help="results ledger (default: $KAREX_RESULTS_DIR/results.jsonl)")
            p.add_argument("--artifacts", help="directory for checkpoints")

    p = sub.add_parser("grid", help="print the configurations of a grid")
    common(p, runs=False)
    p.add_argument("--out", help="write canonical JSON lines here instead of stdout")

    p = sub.add_parser("protocol", help="seed-907 sweep, top-k reruns, winner selection")
    common(p)
    p.add_argument("--top-k", type=int, default=3)
    p.add_argument("--extra-seeds", type=int, default=2)

    p = sub.add_parser("ablation", help="training-size learning curve")
    common(p)
    p.add_argument("--config", help="canonical ExperimentConfig JSON (default: built from the options)")
    p.add_argument("--sizes", default="25:200:25")
    p.add_argument("--seeds", type=int, default=6)

    p = sub.add_parser("report", help="write TSV tables from the results ledger")
    p.add_argument("--results", help="results ledger (default: $KAREX_RESULTS_DIR/results.jsonl)")
    p.add_argument("--out", required=True)

    args = ap.parse_args(argv)
    _setup_logging(args.verbose)
    try:
        if args.cmd == "grid":
            grid = _bench_grid(args)
            lines = [c.canonical() for c in grid]
            if args.out:
                Path(args.out).write_text("\n".join(lines) + "\n")
            else:
                print("\n".join(lines))
            print(f"{len(grid)} configurations", file=sys.stderr)
            return 0

        from . import harness

        if args.cmd == "report":
            store = _store(args)
            reports = harness.reports_from_store(store)
            curve = _curve_from_store(store)
            paths = harness.write_tables(harness.report_tables(reports, curve), args.out)
            _emit({"tables": [str(p) for p in paths], "configs": len(reports)})
            return 0

        from .pipeline import ModelRunner

        runner = ModelRunner(_datasets(args), args.artifacts)
        store = _store(args)
        if args.cmd == "protocol":
            res = harness.run_protocol(_bench_grid(args), runner, store, top_k=args.top_k,
                                       extra_seeds=args.extra_seeds)
            w = res.winner
            _emit({"runs_executed": res.runs_executed, "failed": len(res.failed),
                   "winner": None if w is None else {"config": w.config.to_dict(), "seeds": w.seeds,
                                                     "test_f1": w.test_f1, "mean": w.mean, "sd": w.sd,
                                                     "val_mean": w.val_mean}})
        else:
            if args.config:
                config = harness.ExperimentConfig.from_dict(json.loads(Path(args.config).read_text()))
            else:
                config = _bench_base(args)[0]
            bundle = runner.datasets[config.dataset]
            res = harness.training_size_ablation(bundle.train, config, runner, _parse_sizes(args.sizes),
                                                 args.seeds, store)
            _emit({"runs_scheduled": res.runs_scheduled, "runs_executed": res.runs_executed,
                   "curve": [{"size": p.size, "effective_size": p.effective_size, "clamped": p.clamped,
                              "mean_f1": p.mean if p.f1 else None, "sd_f1": p.sd if p.f1 else None}
                             for p in res.points]})
    except (ValueError, KeyError, OSError) as exc:
        return _fail(str(exc))
    return 0


def _curve_from_store(store):
    from .harness import CurvePoint

    by_size: dict[int, CurvePoint] = {}
    for rec in store.records.values():
        size = rec.config.train_size
        if size is None or rec.status != "ok":
            continue
        pt = by_size.setdefault(size, CurvePoint(size, size, False, [], []))
        pt.seeds.append(rec.config.seed)
        pt.f1.append(rec.result.test_f1)
    return [by_size[s] for s in sorted(by_size)]


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    tools = {"corpus": corpus_main, "kge": kge_main, "bench": bench_main}
    if not argv or argv[0] not in tools:
        print("usage: python -m karex {corpus,kge,bench} ...", file=sys.stderr)
        return 2
    return tools[argv[0]](argv[1:])
