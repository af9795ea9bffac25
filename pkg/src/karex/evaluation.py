"""Scoring and analysis: micro P/R/F1, seed statistics, document-level aggregation,
sentence-distance coverage and recall by distance."""

from __future__ import annotations

import json
import math
import statistics
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Hashable, Iterable, Mapping, Sequence

from .corpus import Corpus, Document


class KeyMismatchError(KeyError):
    def __init__(self, missing_in_pred, missing_in_gold):
        self.missing_in_pred = sorted(missing_in_pred, key=repr)
        self.missing_in_gold = sorted(missing_in_gold, key=repr)
        super().__init__(
            f"prediction/gold keys differ: {len(self.missing_in_pred)} gold-only "
            f"{self.missing_in_pred[:10]}, {len(self.missing_in_gold)} prediction-only {self.missing_in_gold[:10]}"
        )


@dataclass(frozen=True)
class PRF:
    precision: float
    recall: float
    f1: float
    tp: int
    fp: int
    fn: int

    @classmethod
    def from_counts(cls, tp: int, fp: int, fn: int) -> "PRF":
        p = tp / (tp + fp) if tp + fp else 0.0
        r = tp / (tp + fn) if tp + fn else 0.0
        f = 2 * p * r / (p + r) if p + r else 0.0
        return cls(p, r, f, tp, fp, fn)


def prf_from_sets(predicted: Iterable[Hashable], gold: Iterable[Hashable]) -> PRF:
    pred, gold = set(predicted), set(gold)
    tp = len(pred & gold)
    return PRF.from_counts(tp, len(pred) - tp, len(gold) - tp)


def micro_prf(predictions: Mapping[Hashable, Iterable], golds: Mapping[Hashable, Iterable],
              type_filter=None) -> PRF:
    """Micro-averaged scores over (instance, label) pairs.

    Both mappings must cover the same instance keys; an empty label set means
    "no relation" and contributes nothing.
    """
    pk, gk = set(predictions), set(golds)
    if pk != gk:
        raise KeyMismatchError(gk - pk, pk - gk)

    def pairs(table):
        return {(k, lab) for k, labels in table.items() for lab in labels
                if type_filter is None or lab == type_filter}

    return prf_from_sets(pairs(predictions), pairs(golds))


def per_type_prf(predictions, golds, labels: Sequence) -> dict:
    return {lab: micro_prf(predictions, golds, type_filter=lab) for lab in labels}


def mean_sd(values: Sequence[float]) -> tuple[float, float]:
    """Mean and sample standard deviation (0 for a single value)."""
    values = list(values)
    if not values:
        return (math.nan, math.nan)
    mean = statistics.fmean(values)
    sd = statistics.stdev(values) if len(values) > 1 else 0.0
    return mean, sd


# ---------------------------------------------------------------------------
# document level


@dataclass(frozen=True)
class MentionPrediction:
    doc_id: str
    head_kb: str | None
    tail_kb: str | None
    types: frozenset = frozenset()
    probs: tuple = ()


@dataclass
class DocRelationSet:
    entries: dict[tuple[str, str, str], frozenset] = field(default_factory=dict)
    excluded: int = 0  # predictions without head/tail identifiers

    def triples(self) -> set[tuple[str, str, str, object]]:
        return {(d, h, t, typ) for (d, h, t), types in self.entries.items() for typ in types}

    def __len__(self) -> int:
        return len(self.entries)


def aggregate_document_level(predictions: Iterable[MentionPrediction]) -> DocRelationSet:
    """Union of predicted types over all mention pairs sharing (doc, head_kb, tail_kb)."""
    acc: dict[tuple[str, str, str], set] = defaultdict(set)
    excluded = 0
    for p in predictions:
        if p.head_kb is None or p.tail_kb is None:
            excluded += 1
            continue
        acc[(p.doc_id, p.head_kb, p.tail_kb)].update(p.types)
    return DocRelationSet({k: frozenset(v) for k, v in acc.items()}, excluded)


def gold_document_relations(corpus: Corpus) -> set[tuple[str, str, str, str]]:
    return {(d.doc_id, r.head, r.tail, r.relation_type)
            for d in corpus for r in d.relations if r.level == "document"}


def doc_level_prf(predicted: DocRelationSet | Iterable[tuple], gold: Iterable[tuple], type_filter=None) -> PRF:
    """Scores over (doc, head_kb, tail_kb, type); unreachable gold pairs count as misses."""
    pred = predicted.triples() if isinstance(predicted, DocRelationSet) else set(predicted)
    if type_filter is not None:
        pred = {x for x in pred if x[3] == type_filter}
        gold = {x for x in gold if x[3] == type_filter}
    return prf_from_sets(pred, gold)


def min_sentence_distance(document: Document, head_kb: str, tail_kb: str) -> int | None:
    """Smallest sentence-index gap over all head/tail mention pairs (None if an entity is unmentioned)."""
    hs = {document.sentence_index(m) for m in document.mentions_of(head_kb)}
    ts = {document.sentence_index(m) for m in document.mentions_of(tail_kb)}
    if not hs or not ts:
        return None
    return min(abs(a - b) for a in hs for b in ts)


def distance_table(corpus: Corpus) -> dict[tuple[str, str, str], int | None]:
    out = {}
    for doc in corpus:
        for r in doc.relations:
            if r.level == "document":
                out[(doc.doc_id, r.head, r.tail)] = min_sentence_distance(doc, r.head, r.tail)
    return out


@dataclass(frozen=True)
class CoverageStats:
    window: int
    covered: int
    included: int
    excluded: int  # gold relations with an unmentioned entity

    @property
    def fraction(self) -> float:
        return self.covered / self.included if self.included else 0.0


def coverage(corpus: Corpus, window: int) -> CoverageStats:
    """Share of document-level gold relations whose closest mentions are at most ``window`` sentences apart.

    Counted per (doc, head, tail, type) annotation.
    """
    covered = included = excluded = 0
    for doc in corpus:
        for r in doc.relations:
            if r.level != "document":
                continue
            d = min_sentence_distance(doc, r.head, r.tail)
            if d is None:
                excluded += 1
                continue
            included += 1
            covered += d <= window
    return CoverageStats(window, covered, included, excluded)


@dataclass(frozen=True)
class BucketRecall:
    recovered: int
    total: int

    @property
    def recall(self) -> float:
        return self.recovered / self.total if self.total else 0.0


def recall_by_distance(doc_predictions: DocRelationSet | Iterable[tuple], doc_golds: Iterable[tuple],
                       distances: Mapping[tuple[str, str, str], int | None]) -> dict[str, BucketRecall]:
    """Recall of gold (doc, head, tail, type) relations split into intra (d=0) and inter (d>=1).

    Gold relations without a known distance go to an ``unlocated`` bucket so the
    buckets always partition the gold set.
    """
    pred = doc_predictions.triples() if isinstance(doc_predictions, DocRelationSet) else set(doc_predictions)
    counts = {"intra": [0, 0], "inter": [0, 0]}
    for g in set(doc_golds):
        d = distances.get(g[:3])
        bucket = "unlocated" if d is None else ("intra" if d == 0 else "inter")
        c = counts.setdefault(bucket, [0, 0])
        c[1] += 1
        c[0] += g in pred
    return {k: BucketRecall(*v) for k, v in counts.items()}


# ---------------------------------------------------------------------------
# predictions file


def save_predictions(path: str | Path, predictions: Iterable[MentionPrediction]) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for p in predictions:
            fh.write(json.dumps({"doc_id": p.doc_id, "head_kb": p.head_kb, "tail_kb": p.tail_kb,
                                 "types": sorted(p.types, key=str), "probs": list(p.probs)}) + "\n")


def load_predictions(path: str | Path) -> list[MentionPrediction]:
    out = []
    with Path(path).open(encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                r = json.loads(line)
                out.append(MentionPrediction(r["doc_id"], r["head_kb"], r["tail_kb"],
                                             frozenset(r["types"]), tuple(r.get("probs", ()))))
    return out
