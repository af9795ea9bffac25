"""Normalized in-memory corpus model, interchange I/O, entity normalization and splits.

Every corpus enters the toolkit through one JSON-lines interchange format (one
document per line).  Per-corpus converters live outside the library.
"""

from __future__ import annotations

import csv
import json
import logging
import random
from collections import Counter, defaultdict
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Sequence

import networkx as nx

logger = logging.getLogger(__name__)

ENTITY_TYPES = ("chemical", "disease", "gene", "drug", "brand", "group")
SPLITS = ("train", "val", "test")
LEVELS = ("mention", "document")
POLICIES = ("gold_passthrough", "table_lookup", "string_match")
SURFACE_SCHEME = "surface"


class CorpusError(ValueError):
    pass


class CorpusParseError(CorpusError):
    def __init__(self, line_no: int, msg: str):
        super().__init__(f"line {line_no}: {msg}")
        self.line_no = line_no


class CorpusValidationError(CorpusError):
    pass


class NormalizationConfigError(CorpusError):
    pass


@dataclass(frozen=True)
class Sentence:
    text: str
    begin: int
    end: int


@dataclass(frozen=True)
class EntityMention:
    mention_id: str
    entity_type: str
    begin: int
    end: int
    surface: str
    kb_id: str | None = None

    @property
    def span(self) -> tuple[int, int]:
        return (self.begin, self.end)


@dataclass(frozen=True)
class RelationAnnotation:
    head: str
    tail: str
    relation_type: str
    level: str = "mention"


@dataclass(frozen=True)
class Document:
    doc_id: str
    sentences: tuple[Sentence, ...]
    mentions: tuple[EntityMention, ...] = ()
    relations: tuple[RelationAnnotation, ...] = ()
    split_hint: str | None = None

    def sentence_index(self, mention: EntityMention) -> int:
        """Index of the sentence containing ``mention`` (-1 if none does)."""
        for i, s in enumerate(self.sentences):
            if s.begin <= mention.begin and mention.end <= s.end:
                return i
        return -1

    def mention(self, mention_id: str) -> EntityMention:
        for m in self.mentions:
            if m.mention_id == mention_id:
                return m
        raise KeyError(mention_id)

    def mentions_of(self, kb_id: str) -> list[EntityMention]:
        return [m for m in self.mentions if m.kb_id == kb_id]

    @property
    def text(self) -> str:
        """Document text rebuilt from sentence offsets, gaps filled with spaces."""
        if not self.sentences:
            return ""
        buf = [" "] * self.sentences[-1].end
        for s in self.sentences:
            buf[s.begin:s.end] = s.text
        return "".join(buf)

    def relation_types(self) -> frozenset[str]:
        return frozenset(r.relation_type for r in self.relations)


@dataclass(frozen=True)
class Corpus:
    documents: tuple[Document, ...] = ()
    name: str = ""

    def __len__(self) -> int:
        return len(self.documents)

    def __iter__(self) -> Iterator[Document]:
        return iter(self.documents)

    def __getitem__(self, doc_id: str) -> Document:
        for d in self.documents:
            if d.doc_id == doc_id:
                return d
        raise KeyError(doc_id)

    @property
    def n_mentions(self) -> int:
        return sum(len(d.mentions) for d in self.documents)

    def subset(self, doc_ids: Iterable[str]) -> "Corpus":
        keep = list(doc_ids)
        by_id = {d.doc_id: d for d in self.documents}
        return Corpus(tuple(by_id[i] for i in keep), name=self.name)

    def by_split_hint(self, split: str) -> "Corpus":
        return Corpus(tuple(d for d in self.documents if d.split_hint == split), name=self.name)


# ---------------------------------------------------------------------------
# validation


def validate_document(doc: Document, *, check_relations: bool = True) -> None:
    prev_end = -1
    for i, s in enumerate(doc.sentences):
        if s.end - s.begin != len(s.text):
            raise CorpusValidationError(
                f"{doc.doc_id}: sentence {i} length {len(s.text)} does not match span {s.begin}-{s.end}"
            )
        if s.begin < prev_end or s.begin > s.end:
            raise CorpusValidationError(f"{doc.doc_id}: sentence {i} overlaps or is out of order")
        prev_end = s.end

    seen: set[str] = set()
    for m in doc.mentions:
        if m.mention_id in seen:
            raise CorpusValidationError(f"{doc.doc_id}: duplicate mention id {m.mention_id}")
        seen.add(m.mention_id)
        if m.entity_type not in ENTITY_TYPES:
            raise CorpusValidationError(
                f"{doc.doc_id}: mention {m.mention_id} has unknown entity type {m.entity_type!r}"
            )
        idx = doc.sentence_index(m)
        if idx < 0:
            raise CorpusValidationError(
                f"{doc.doc_id}: mention {m.mention_id} span {m.begin}-{m.end} lies outside every sentence"
            )
        s = doc.sentences[idx]
        if s.text[m.begin - s.begin:m.end - s.begin] != m.surface:
            raise CorpusValidationError(
                f"{doc.doc_id}: mention {m.mention_id} surface {m.surface!r} does not match text"
            )

    if not check_relations:
        return
    kb_ids = {m.kb_id for m in doc.mentions if m.kb_id}
    for r in doc.relations:
        if r.level not in LEVELS:
            raise CorpusValidationError(f"{doc.doc_id}: unknown relation level {r.level!r}")
        pool = seen if r.level == "mention" else kb_ids
        for ref in (r.head, r.tail):
            if ref not in pool:
                raise CorpusValidationError(
                    f"{doc.doc_id}: {r.level}-level relation references unknown id {ref!r}"
                )


def validate_corpus(corpus: Corpus) -> None:
    ids: set[str] = set()
    for doc in corpus:
        if doc.doc_id in ids:
            raise CorpusValidationError(f"duplicate doc_id {doc.doc_id}")
        ids.add(doc.doc_id)
        validate_document(doc)


# ---------------------------------------------------------------------------
# interchange format


def document_from_record(rec: Mapping) -> Document:
    sentences = tuple(Sentence(s["text"], int(s["begin"]), int(s["end"])) for s in rec["sentences"])
    mentions = tuple(
        EntityMention(
            mention_id=str(m["id"]),
            entity_type=m["type"],
            begin=int(m["begin"]),
            end=int(m["end"]),
            surface=m["text"],
            kb_id=m.get("kb_id"),
        )
        for m in rec.get("mentions", ())
    )
    relations = tuple(
        RelationAnnotation(str(r["head"]), str(r["tail"]), r["type"], r.get("level", "mention"))
        for r in rec.get("relations", ())
    )
    split = rec.get("split")
    if split is not None and split not in SPLITS:
        raise ValueError(f"unknown split {split!r}")
    return Document(str(rec["doc_id"]), sentences, mentions, relations, split)


def document_to_record(doc: Document) -> dict:
    return {
        "doc_id": doc.doc_id,
        "sentences": [{"text": s.text, "begin": s.begin, "end": s.end} for s in doc.sentences],
        "mentions": [
            {"id": m.mention_id, "type": m.entity_type, "begin": m.begin, "end": m.end,
             "text": m.surface, "kb_id": m.kb_id}
            for m in doc.mentions
        ],
        "relations": [
            {"head": r.head, "tail": r.tail, "type": r.relation_type, "level": r.level}
            for r in doc.relations
        ],
        "split": doc.split_hint,
    }


def load_corpus(path: str | Path, format: str = "interchange_jsonl") -> Corpus:
    """Read an interchange JSON-lines file and validate every document.

    Violations are reported, never repaired: a malformed line raises
    :class:`CorpusParseError` with its 1-based line number, an invariant
    violation raises :class:`CorpusValidationError`.
    """
    if format != "interchange_jsonl":
        raise ValueError(f"unsupported corpus format {format!r}")
    path = Path(path)
    docs = []
    with path.open(encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                doc = document_from_record(rec)
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise CorpusParseError(line_no, f"{type(exc).__name__}: {exc}") from exc
            docs.append(doc)
    corpus = Corpus(tuple(docs), name=path.stem)
    validate_corpus(corpus)
    return corpus


def dump_corpus(corpus: Corpus, path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for doc in corpus:
            fh.write(json.dumps(document_to_record(doc), ensure_ascii=False) + "\n")


# ---------------------------------------------------------------------------
# normalization


@dataclass(frozen=True)
class MappingTable:
    source_scheme: str
    target_scheme: str
    entries: Mapping[str, str] = field(default_factory=dict)
    # restricts the table to mentions of one entity type; None applies it to all
    entity_type: str | None = None

    def lookup(self, key: str | None) -> str | None:
        if key is None:
            return None
        if self.source_scheme == SURFACE_SCHEME:
            key = key.casefold()
        return self.entries.get(key)

    @classmethod
    def from_tsv(cls, path: str | Path, source_scheme: str, target_scheme: str,
                 entity_type: str | None = None) -> "MappingTable":
        entries: dict[str, str] = {}
        with Path(path).open(encoding="utf-8", newline="") as fh:
            reader = csv.reader(fh, delimiter="\t")
            header = next(reader, None)
            if header is None or [h.strip() for h in header[:2]] != ["source", "target"]:
                raise CorpusError(f"{path}: expected header 'source\\ttarget'")
            for row in reader:
                if not row:
                    continue
                if len(row) < 2:
                    raise CorpusError(f"{path}: malformed row {row!r}")
                key = row[0].casefold() if source_scheme == SURFACE_SCHEME else row[0]
                if key in entries and entries[key] != row[1]:
                    raise CorpusError(f"{path}: conflicting targets for key {row[0]!r}")
                entries[key] = row[1]
        return cls(source_scheme, target_scheme, entries, entity_type)


@dataclass
class NormalizationStats:
    total: Counter = field(default_factory=Counter)
    mapped: Counter = field(default_factory=Counter)
    unmapped: list[tuple[str, str]] = field(default_factory=list)  # (doc_id, mention_id)

    def ratio(self, entity_type: str) -> float:
        n = self.total[entity_type]
        return self.mapped[entity_type] / n if n else 0.0

    def as_rows(self) -> list[tuple[str, int, int, float]]:
        return [(t, self.mapped[t], self.total[t], self.ratio(t)) for t in sorted(self.total)]


def normalize_mentions(corpus: Corpus, tables: Sequence[MappingTable] = (),
                       policy: str = "gold_passthrough") -> tuple[Corpus, NormalizationStats]:
    """Attach ontology identifiers to mentions.

    ``gold_passthrough`` keeps the identifiers already in the corpus,
    ``table_lookup`` maps the current identifier through the tables, and
    ``string_match`` maps the case-folded surface form.  Only ``kb_id`` fields
    change; mentions without a target end up with ``kb_id=None`` and are listed
    in ``stats.unmapped``.
    """
    if policy not in POLICIES:
        raise NormalizationConfigError(f"unknown policy {policy!r}")
    for t in tables:
        if policy == "string_match" and t.source_scheme != SURFACE_SCHEME:
            raise NormalizationConfigError(
                f"string_match needs tables keyed by '{SURFACE_SCHEME}', got {t.source_scheme!r}"
            )
        if policy == "table_lookup" and t.source_scheme == SURFACE_SCHEME:
            raise NormalizationConfigError("table_lookup needs identifier-keyed tables")
    if policy in ("table_lookup", "string_match") and not tables:
        raise NormalizationConfigError(f"policy {policy} requires at least one mapping table")

    stats = NormalizationStats()
    docs = []
    for doc in corpus:
        new_mentions = []
        for m in doc.mentions:
            stats.total[m.entity_type] += 1
            if policy == "gold_passthrough":
                target = m.kb_id
            else:
                key = m.kb_id if policy == "table_lookup" else m.surface
                target = None
                for t in tables:
                    if t.entity_type is not None and t.entity_type != m.entity_type:
                        continue
                    target = t.lookup(key)
                    if target is not None:
                        break
            if target is None:
                stats.unmapped.append((doc.doc_id, m.mention_id))
            else:
                stats.mapped[m.entity_type] += 1
            new_mentions.append(m if target == m.kb_id else replace(m, kb_id=target))
        docs.append(replace(doc, mentions=tuple(new_mentions)))
    return Corpus(tuple(docs), name=corpus.name), stats


# ---------------------------------------------------------------------------
# splits


@dataclass(frozen=True)
class SplitAssignment:
    train: tuple[str, ...]
    val: tuple[str, ...]
    test: tuple[str, ...]
    unused: tuple[str, ...] = ()

    def sizes(self) -> tuple[int, int, int]:
        return (len(self.train), len(self.val), len(self.test))

    def as_dict(self) -> dict[str, tuple[str, ...]]:
        return {"train": self.train, "val": self.val, "test": self.test, "unused": self.unused}


def stratum_key(doc: Document) -> tuple[str, ...]:
    return tuple(sorted(doc.relation_types()))


def _resolve_sizes(spec: Sequence[float], n: int) -> list[int]:
    if all(isinstance(x, int) for x in spec):
        sizes = [int(x) for x in spec]
    else:
        if any(x < 0 for x in spec) or sum(spec) > 1 + 1e-9:
            raise ValueError(f"split ratios must be non-negative and sum to at most 1: {spec}")
        raw = [x * n for x in spec]
        sizes = [int(x) for x in raw]
        # largest remainder, never exceeding round(sum(raw))
        budget = round(sum(raw)) - sum(sizes)
        for i in sorted(range(len(raw)), key=lambda i: (-(raw[i] - sizes[i]), i))[:budget]:
            sizes[i] += 1
    if any(s < 0 for s in sizes):
        raise ValueError(f"negative split size in {spec}")
    if sum(sizes) > n:
        raise ValueError(f"split sizes {sizes} exceed corpus size {n}")
    return sizes


def apportion(strata: Mapping[object, int], sizes: Sequence[int]) -> dict[object, list[int]]:
    """Controlled rounding of the stratum-by-bucket allocation table.

    Returns for every stratum a count per bucket such that each count is the
    floor or ceiling of its proportional share, rows sum to the stratum size
    and columns sum to ``sizes`` exactly.  ``sum(sizes)`` must equal the total
    stratum size.
    """
    total = sum(strata.values())
    if sum(sizes) != total:
        raise ValueError("bucket sizes must sum to the number of items")
    keys = list(strata)
    if total == 0:
        return {k: [0] * len(sizes) for k in keys}
    ideal = {k: [strata[k] * s / total for s in sizes] for k in keys}
    base = {k: [int(v + 1e-9) for v in ideal[k]] for k in keys}
    row_def = {k: strata[k] - sum(base[k]) for k in keys}
    col_def = [sizes[j] - sum(base[k][j] for k in keys) for j in range(len(sizes))]
    if not any(row_def.values()):
        return base

    g = nx.DiGraph()
    for ki, k in enumerate(keys):
        if row_def[k]:
            g.add_edge("src", ("row", ki), capacity=row_def[k])
        for j in range(len(sizes)):
            if ideal[k][j] - base[k][j] > 1e-9:
                g.add_edge(("row", ki), ("col", j), capacity=1)
    for j, d in enumerate(col_def):
        if d:
            g.add_edge(("col", j), "sink", capacity=d)
    flow_value, flow = nx.maximum_flow(g, "src", "sink")
    if flow_value != sum(row_def.values()):
        raise RuntimeError("controlled rounding infeasible")  # cannot happen for consistent margins
    out = {k: list(base[k]) for k in keys}
    for ki, k in enumerate(keys):
        for j in range(len(sizes)):
            if flow.get(("row", ki), {}).get(("col", j), 0):
                out[k][j] += 1
    return out


def stratified_partition(items: Sequence[str], keys: Sequence[object], sizes: Sequence[int],
                         rng: random.Random) -> list[list[str]]:
    """Partition ``items`` into buckets of ``sizes`` preserving key proportions.

    Per key, each bucket receives the floor or ceiling of its proportional share.
    """
    groups: dict[object, list[str]] = defaultdict(list)
    for item, key in zip(items, keys):
        groups[key].append(item)
    ordered = sorted(groups, key=repr)
    for k in ordered:
        rng.shuffle(groups[k])
    alloc = apportion({k: len(groups[k]) for k in ordered}, sizes)
    buckets: list[list[str]] = [[] for _ in sizes]
    for k in ordered:
        pos = 0
        for j, c in enumerate(alloc[k]):
            buckets[j].extend(groups[k][pos:pos + c])
            pos += c
    for b in buckets:
        rng.shuffle(b)
    return buckets


def make_splits(corpus: Corpus, spec: Sequence[float], seed: int = 907,
                stratify: bool = False) -> SplitAssignment:
    """Assign documents to train/val/test.

    ``spec`` holds three integer sizes or three ratios.  Documents not covered
    by the sizes land in ``unused`` so the assignment is always exhaustive.
    With ``stratify`` the stratum of a document is its set of relation types.
    """
    if len(spec) != 3:
        raise ValueError("split spec needs exactly three entries (train, val, test)")
    n = len(corpus)
    sizes = _resolve_sizes(spec, n)
    ids = [d.doc_id for d in corpus]
    rng = random.Random(seed)
    all_sizes = sizes + [n - sum(sizes)]
    if stratify:
        keys = [stratum_key(d) for d in corpus]
        buckets = stratified_partition(ids, keys, all_sizes, rng)
    else:
        order = list(ids)
        rng.shuffle(order)
        buckets, pos = [], 0
        for s in all_sizes:
            buckets.append(order[pos:pos + s])
            pos += s
    return SplitAssignment(*(tuple(b) for b in buckets))
