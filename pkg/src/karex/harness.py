"""Experiment orchestration: grids, the three-seed selection protocol, training-size
ablation, a resumable results ledger and TSV reports."""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import itertools
import json
import logging
import os
import random
import time
import traceback
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping, Protocol, Sequence

from .corpus import Corpus, stratified_partition, stratum_key
from .evaluation import mean_sd
from .model.training import (BATCH_GRID, CONTEXT_GRID, LR_GRID, MAX_LENGTH_GRID, PROMPT_GRID, TrainConfig,
                             canonical_json)

logger = logging.getLogger(__name__)

RESULTS_ENV = "KAREX_RESULTS_DIR"
PHASE1_SEED = 907
EXTRA_SEEDS = (908, 909)
ABLATION_SIZES = tuple(range(25, 201, 25))
ABLATION_SEEDS = tuple(range(907, 913))

BASELINE_AXES = {
    "lr": LR_GRID,
    "batch_size": BATCH_GRID,
    "max_length": MAX_LENGTH_GRID,
    "context_sentences": CONTEXT_GRID,
    "prompt": PROMPT_GRID,
}

VARIANT_GROUPS = {
    "baseline": "Baselines",
    "text": "Text",
    "embedding": "Entity Embeddings",
    "structure": "Molecular Structure",
}

_TRAIN_FIELDS = {f.name for f in dataclasses.fields(TrainConfig)} - {"seed", "override"}
_TOP_FIELDS = ("dataset", "encoder", "seed", "train_size")


def _digest(obj) -> str:
    return hashlib.sha256(canonical_json(obj).encode()).hexdigest()


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: str
    encoder: str = "tiny"
    train: TrainConfig = TrainConfig()
    variant_params: tuple = ()  # sorted (key, value) pairs
    seed: int = PHASE1_SEED
    train_size: int | None = None

    def __post_init__(self):
        if isinstance(self.variant_params, Mapping):
            object.__setattr__(self, "variant_params", tuple(sorted(self.variant_params.items())))

    @property
    def variant(self) -> str:
        return self.train.variant

    @property
    def params(self) -> dict:
        return dict(self.variant_params)

    def to_dict(self) -> dict:
        train = self.train.to_dict()
        train.pop("seed")
        return {"dataset": self.dataset, "encoder": self.encoder, "train": train,
                "variant_params": dict(self.variant_params), "seed": self.seed, "train_size": self.train_size}

    @classmethod
    def from_dict(cls, d: Mapping) -> "ExperimentConfig":
        train = dict(d.get("train", {}))
        train["seed"] = d.get("seed", PHASE1_SEED)
        return cls(d["dataset"], d.get("encoder", "tiny"), TrainConfig.from_dict(train),
                   dict(d.get("variant_params", {})), d.get("seed", PHASE1_SEED), d.get("train_size"))

    def canonical(self) -> str:
        return canonical_json(self.to_dict())

    def run_id(self) -> str:
        """Identity of one training run (includes the seed)."""
        return _digest(self.to_dict())

    def config_id(self) -> str:
        """Identity of the hyperparameter configuration (seed excluded)."""
        d = self.to_dict()
        d.pop("seed")
        return _digest(d)

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return dataclasses.replace(self, seed=seed, train=dataclasses.replace(self.train, seed=seed))

    def with_train_size(self, size: int | None) -> "ExperimentConfig":
        return dataclasses.replace(self, train_size=size)


def enumerate_grid(axes: Mapping[str, Sequence], base: ExperimentConfig | None = None,
                   override: bool = False) -> list[ExperimentConfig]:
    """Cartesian product of ``axes`` over ``base``.

    The first axis varies slowest and values keep their given order, so the
    sequence is lexicographic in (axis order, value order).  Axis names are
    :class:`TrainConfig` fields, ``dataset``/``encoder``/``seed``/``train_size``,
    or otherwise variant parameters.
    """
    if not axes:
        raise ValueError("grid needs at least one axis")
    if base is None:
        base = ExperimentConfig("synthetic")
    names = list(axes)
    out = []
    for values in itertools.product(*(list(axes[n]) for n in names)):
        train_kw, top_kw, var = {}, {}, dict(base.variant_params)
        for name, value in zip(names, values):
            if name in _TRAIN_FIELDS:
                train_kw[name] = value
            elif name in _TOP_FIELDS:
                top_kw[name] = value
            else:
                var[name] = value
        train = dataclasses.replace(base.train, override=base.train.override or override, **train_kw)
        cfg = dataclasses.replace(base, train=train, variant_params=tuple(sorted(var.items())), **top_kw)
        if "seed" in top_kw:
            cfg = cfg.with_seed(top_kw["seed"])
        out.append(cfg)
    return out


def baseline_grid(base: ExperimentConfig | None = None) -> list[ExperimentConfig]:
    return enumerate_grid(BASELINE_AXES, base)


def extension_grid(winner: ExperimentConfig, variant: str, axes: Mapping[str, Sequence]) -> list[ExperimentConfig]:
    """Extension sweep: base hyperparameters fixed to ``winner``, only extension options vary."""
    base = dataclasses.replace(winner, train=dataclasses.replace(winner.train, variant=variant), variant_params=())
    return enumerate_grid(axes, base.with_seed(PHASE1_SEED))


# ---------------------------------------------------------------------------
# results ledger


@dataclass(frozen=True)
class RunResult:
    val_f1: float
    test_f1: float
    per_type: Mapping[str, Sequence[float]] = field(default_factory=dict)  # label -> (p, r, f1)
    runtime: float = 0.0
    artifacts: Mapping[str, str] = field(default_factory=dict)


@dataclass(frozen=True)
class RunRecord:
    run_id: str
    config_id: str
    config: ExperimentConfig
    status: str  # ok | failed
    result: RunResult | None = None
    error: str = ""

    def to_json(self) -> str:
        rec = {"run_id": self.run_id, "config_id": self.config_id, "config": self.config.to_dict(),
               "status": self.status, "error": self.error}
        if self.result is not None:
            rec["result"] = dataclasses.asdict(self.result)
        return canonical_json(rec)

    @classmethod
    def from_json(cls, line: str) -> "RunRecord":
        rec = json.loads(line)
        res = rec.get("result")
        result = None
        if res is not None:
            result = RunResult(res["val_f1"], res["test_f1"], {k: tuple(v) for k, v in res["per_type"].items()},
                               res.get("runtime", 0.0), res.get("artifacts", {}))
        return cls(rec["run_id"], rec["config_id"], ExperimentConfig.from_dict(rec["config"]), rec["status"],
                   result, rec.get("error", ""))


class ResultsStore:
    """Append-only JSON-lines ledger of runs keyed by run identity.

    ``path=None`` keeps records in memory only.  A later record for the same
    run replaces an earlier one on load.
    """

    def __init__(self, path: str | Path | None = None):
        self.path = Path(path) if path is not None else None
        self.records: dict[str, RunRecord] = {}
        if self.path is not None and self.path.exists():
            with self.path.open(encoding="utf-8") as fh:
                for line in fh:
                    if line.strip():
                        rec = RunRecord.from_json(line)
                        self.records[rec.run_id] = rec

    @classmethod
    def default(cls, name: str = "results.jsonl") -> "ResultsStore":
        root = Path(os.environ.get(RESULTS_ENV, "results"))
        root.mkdir(parents=True, exist_ok=True)
        return cls(root / name)

    def __contains__(self, run_id: str) -> bool:
        return run_id in self.records

    def __len__(self) -> int:
        return len(self.records)

    def get(self, run_id: str) -> RunRecord | None:
        return self.records.get(run_id)

    def append(self, record: RunRecord) -> None:
        self.records[record.run_id] = record
        if self.path is not None:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with self.path.open("a", encoding="utf-8") as fh:
                fh.write(record.to_json() + "\n")


class Runner(Protocol):
    def __call__(self, config: ExperimentConfig, train_ids: Sequence[str] | None = None) -> RunResult: ...


@dataclass
class Scheduler:
    """Executes runs through ``runner``, skipping any already in ``store``."""

    runner: Callable[..., RunResult]
    store: ResultsStore = field(default_factory=ResultsStore)
    retry_failed: bool = False
    executed: int = 0

    def run(self, config: ExperimentConfig, train_ids: Sequence[str] | None = None) -> RunRecord:
        rid = config.run_id()
        prev = self.store.get(rid)
        if prev is not None and (prev.status == "ok" or not self.retry_failed):
            return prev
        self.executed += 1
        t0 = time.perf_counter()
        try:
            result = self.runner(config, train_ids) if train_ids is not None else self.runner(config)
            if result.runtime == 0.0:
                result = dataclasses.replace(result, runtime=time.perf_counter() - t0)
            rec = RunRecord(rid, config.config_id(), config, "ok", result)
        except Exception as exc:  # a failed run is recorded and excluded, never fatal
            logger.warning("run %s failed: %s", rid[:12], exc)
            rec = RunRecord(rid, config.config_id(), config, "failed", None,
                            "".join(traceback.format_exception_only(type(exc), exc)).strip())
        self.store.append(rec)
        return rec


# ---------------------------------------------------------------------------
# protocol


@dataclass
class EvalReport:
    config: ExperimentConfig  # phase-1 seed
    seeds: list[int]
    val_f1: list[float]
    test_f1: list[float]
    per_type: list[Mapping[str, Sequence[float]]] = field(default_factory=list)
    runtime: float = 0.0
    failed_seeds: list[int] = field(default_factory=list)

    @property
    def config_id(self) -> str:
        return self.config.config_id()

    @property
    def mean(self) -> float:
        return mean_sd(self.test_f1)[0]

    @property
    def sd(self) -> float:
        return mean_sd(self.test_f1)[1]

    @property
    def val_mean(self) -> float:
        return mean_sd(self.val_f1)[0]

    def per_type_mean(self) -> dict[str, tuple[float, float, float]]:
        labels = sorted({lab for pt in self.per_type for lab in pt})
        out = {}
        for lab in labels:
            rows = [pt[lab] for pt in self.per_type if lab in pt]
            out[lab] = tuple(mean_sd([r[i] for r in rows])[0] for i in range(3))
        return out


def _report(config: ExperimentConfig, records: Iterable[RunRecord]) -> EvalReport:
    rep = EvalReport(config, [], [], [])
    for rec in records:
        if rec.status != "ok":
            rep.failed_seeds.append(rec.config.seed)
            continue
        rep.seeds.append(rec.config.seed)
        rep.val_f1.append(rec.result.val_f1)
        rep.test_f1.append(rec.result.test_f1)
        rep.per_type.append(rec.result.per_type)
        rep.runtime += rec.result.runtime
    return rep


@dataclass
class ProtocolResult:
    phase1: list[EvalReport]  # one per grid config, grid order
    finalists: list[EvalReport]  # top_k configs with all seeds
    winner: EvalReport | None
    runs_executed: int
    failed: list[RunRecord]


def run_protocol(grid: Sequence[ExperimentConfig], runner: Callable[..., RunResult],
                 store: ResultsStore | None = None, phase1_seed: int = PHASE1_SEED, top_k: int = 3,
                 extra_seeds: int | Sequence[int] = EXTRA_SEEDS) -> ProtocolResult:
    """Run every config at ``phase1_seed``, rerun the ``top_k`` by validation F1
    with the extra seeds, and pick the finalist with the best mean validation F1.

    Failed runs are recorded and excluded from ranking.  Runs already present
    in ``store`` are reused, so a rerun over a populated store executes nothing.
    """
    if not grid:
        raise ValueError("empty grid")
    if isinstance(extra_seeds, int):
        extra_seeds = tuple(phase1_seed + 1 + i for i in range(extra_seeds))
    sched = Scheduler(runner, store if store is not None else ResultsStore())
    failed: list[RunRecord] = []

    phase1 = []
    for cfg in grid:
        cfg = cfg.with_seed(phase1_seed)
        rec = sched.run(cfg)
        if rec.status != "ok":
            failed.append(rec)
        phase1.append(_report(cfg, [rec]))
    ok = [(i, r) for i, r in enumerate(phase1) if r.val_f1]
    if len(ok) < len(phase1):
        logger.warning("%d of %d phase-1 runs failed and are excluded", len(phase1) - len(ok), len(phase1))
    ranked = sorted(ok, key=lambda ir: (-ir[1].val_f1[0], ir[0]))[:top_k]

    finalists = []
    for _, rep in ranked:
        recs = [sched.store.get(rep.config.run_id())]
        for seed in extra_seeds:
            rec = sched.run(rep.config.with_seed(seed))
            if rec.status != "ok":
                failed.append(rec)
            recs.append(rec)
        finalists.append(_report(rep.config, recs))
    winner = max(finalists, key=lambda r: r.val_mean) if finalists else None
    return ProtocolResult(phase1, finalists, winner, sched.executed, failed)


def protocol_run_count(grid_size: int, top_k: int = 3, extra_seeds: int = 2) -> int:
    return grid_size + min(top_k, grid_size) * extra_seeds


# ---------------------------------------------------------------------------
# training-size ablation


@dataclass(frozen=True)
class SubsetDraw:
    requested: int
    doc_ids: tuple[str, ...]
    clamped: bool


def stratified_subset(corpus: Corpus, size: int, seed: int) -> SubsetDraw:
    """Documents drawn so each relation-type stratum keeps its share within one document."""
    n = len(corpus)
    if size >= n:
        if size > n:
            logger.warning("requested %d training documents but only %d exist; using all", size, n)
        return SubsetDraw(size, tuple(d.doc_id for d in corpus), size > n)
    ids = [d.doc_id for d in corpus]
    keys = [stratum_key(d) for d in corpus]
    chosen, _ = stratified_partition(ids, keys, [size, n - size], random.Random(seed))
    return SubsetDraw(size, tuple(chosen), False)


@dataclass
class CurvePoint:
    size: int
    effective_size: int
    clamped: bool
    seeds: list[int]
    f1: list[float]

    @property
    def mean(self) -> float:
        return mean_sd(self.f1)[0]

    @property
    def sd(self) -> float:
        return mean_sd(self.f1)[1]


@dataclass
class AblationResult:
    points: list[CurvePoint]
    runs_scheduled: int
    runs_executed: int


def training_size_ablation(train_corpus: Corpus, config: ExperimentConfig, runner: Callable[..., RunResult],
                           sizes: Sequence[int] = ABLATION_SIZES, seeds: int | Sequence[int] = 6,
                           store: ResultsStore | None = None) -> AblationResult:
    """Learning curve with hyperparameters fixed to ``config``: one run per (size, seed).

    Each seed draws its own stratified subset of ``train_corpus``; the runner
    receives the chosen document ids.
    """
    if isinstance(seeds, int):
        seeds = tuple(PHASE1_SEED + i for i in range(seeds))
    sched = Scheduler(runner, store if store is not None else ResultsStore())
    points = []
    scheduled = 0
    for size in sizes:
        point = None
        for seed in seeds:
            draw = stratified_subset(train_corpus, size, seed)
            if point is None:
                point = CurvePoint(size, len(draw.doc_ids), draw.clamped, [], [])
            scheduled += 1
            rec = sched.run(config.with_train_size(size).with_seed(seed), draw.doc_ids)
            if rec.status == "ok":
                point.seeds.append(seed)
                point.f1.append(rec.result.test_f1)
        points.append(point)
    return AblationResult(points, scheduled, sched.executed)


# ---------------------------------------------------------------------------
# reporting


def _fmt(x: float) -> str:
    return f"{x:.4f}"


def _hparams(cfg: ExperimentConfig) -> dict:
    t = cfg.train
    d = {"lr": t.lr, "batch_size": t.batch_size, "max_length": t.max_length,
         "context_sentences": t.context_sentences, "prompt": t.prompt}
    if t.variant != "baseline":
        d["side_lr"] = t.side_lr
    d.update(cfg.params)
    return d


def report_tables(reports: Sequence[EvalReport], curve: Sequence[CurvePoint] = ()) -> dict[str, list[list[str]]]:
    """Main, per-type, best-hyperparameter and learning-curve tables (header row first)."""
    if not reports and not curve:
        raise ValueError("nothing to report")
    baseline = {}
    for r in reports:
        if r.config.variant == "baseline" and r.test_f1:
            key = (r.config.dataset, r.config.encoder)
            if key not in baseline or r.mean > baseline[key]:
                baseline[key] = r.mean
    order = {v: i for i, v in enumerate(VARIANT_GROUPS)}
    rows = sorted(reports, key=lambda r: (order.get(r.config.variant, 99), r.config.dataset, r.config.encoder))
    main = [["group", "variant", "dataset", "encoder", "mean_f1", "sd_f1", "n_seeds", "delta_vs_baseline",
             "config_id"]]
    per_type = [["dataset", "encoder", "variant", "label", "precision", "recall", "f1"]]
    best = [["dataset", "encoder", "variant", "hyperparameters"]]
    for r in rows:
        cfg = r.config
        base = baseline.get((cfg.dataset, cfg.encoder))
        delta = "" if base is None or cfg.variant == "baseline" or not r.test_f1 else f"{r.mean - base:+.4f}"
        main.append([VARIANT_GROUPS.get(cfg.variant, cfg.variant), cfg.variant, cfg.dataset, cfg.encoder,
                     _fmt(r.mean) if r.test_f1 else "", _fmt(r.sd) if r.test_f1 else "", str(len(r.test_f1)),
                     delta, r.config_id[:12]])
        for lab, (p, rc, f) in r.per_type_mean().items():
            per_type.append([cfg.dataset, cfg.encoder, cfg.variant, lab, _fmt(p), _fmt(rc), _fmt(f)])
        best.append([cfg.dataset, cfg.encoder, cfg.variant, canonical_json(_hparams(cfg))])
    tables = {"main": main, "per_type": per_type, "best_hparams": best}
    if curve:
        lc = [["size", "effective_size", "clamped", "n_seeds", "mean_f1", "sd_f1"]]
        for p in curve:
            lc.append([str(p.size), str(p.effective_size), str(p.clamped).lower(), str(len(p.f1)),
                       _fmt(p.mean) if p.f1 else "", _fmt(p.sd) if p.f1 else ""])
        tables["learning_curve"] = lc
    return tables


def write_tables(tables: Mapping[str, list[list[str]]], out_dir: str | Path) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for name, rows in tables.items():
        path = out_dir / f"{name}.tsv"
        with path.open("w", encoding="utf-8", newline="") as fh:
            csv.writer(fh, delimiter="\t", lineterminator="\n").writerows(rows)
        paths.append(path)
    return paths


def reports_from_store(store: ResultsStore) -> list[EvalReport]:
    """Group successful stored runs (full training set only) by configuration identity."""
    groups: dict[str, list[RunRecord]] = {}
    for rec in store.records.values():
        if rec.config.train_size is None:
            groups.setdefault(rec.config_id, []).append(rec)
    out = []
    for recs in groups.values():
        recs.sort(key=lambda r: r.config.seed)
        out.append(_report(recs[0].config.with_seed(PHASE1_SEED), recs))
    return [r for r in out if r.test_f1]
