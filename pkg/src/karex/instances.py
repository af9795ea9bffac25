"""Candidate pair enumeration, marked input rendering and multilabel targets."""

from __future__ import annotations

import json
import logging
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

from .corpus import Corpus, Document, EntityMention, RelationAnnotation
from .knowledge import DescriptionStore, lookup_description

logger = logging.getLogger(__name__)

CLS, SEP, PAD, UNK = "[CLS]", "[SEP]", "[PAD]", "[UNK]"
HEAD_S, HEAD_E, TAIL_S, TAIL_E = "[HEAD-S]", "[HEAD-E]", "[TAIL-S]", "[TAIL-E]"
MARKERS = (HEAD_S, HEAD_E, TAIL_S, TAIL_E)
SPECIAL_TOKENS = (PAD, UNK, CLS, SEP) + MARKERS

DRUG_TYPES = frozenset({"drug", "brand", "group"})
SCENARIOS: dict[str, tuple[frozenset[str], frozenset[str]]] = {
    "chemical_disease": (frozenset({"chemical"}), frozenset({"disease"})),
    "chemical_gene": (frozenset({"chemical"}), frozenset({"gene"})),
    "gene_disease": (frozenset({"gene"}), frozenset({"disease"})),
    "drug_drug": (DRUG_TYPES, DRUG_TYPES),
}

PROMPT_TEMPLATE = "Is there a {relation} interaction between {head} and {tail}?"

_TOKEN_RE = re.compile(r"\w+|[^\w\s]")


def simple_tokenize(text: str) -> list[str]:
    """Word/punctuation split used when no encoder tokenizer is supplied."""
    return _TOKEN_RE.findall(text)


class InstanceError(ValueError):
    pass


class SchemaError(ValueError):
    pass


@dataclass(frozen=True)
class CandidatePair:
    doc_id: str
    head: EntityMention
    tail: EntityMention
    scenario: str
    sentence_index: int
    sentence_distance: int
    tail_sentence_index: int = -1

    @property
    def key(self) -> tuple[str, str, str]:
        return (self.doc_id, self.head.mention_id, self.tail.mention_id)


@dataclass(frozen=True)
class RenderOptions:
    context_sentences: int = 0
    prompt: bool = False
    descriptions: str = "none"  # none | head | tail | both
    max_length: int = 512
    relation_type_name: str = ""

    def __post_init__(self):
        if self.context_sentences not in (0, 1):
            raise ValueError("context_sentences must be 0 or 1")
        if self.descriptions not in ("none", "head", "tail", "both"):
            raise ValueError(f"unknown description mode {self.descriptions!r}")
        if self.prompt and not self.relation_type_name:
            raise ValueError("prompt rendering needs relation_type_name")


@dataclass(frozen=True)
class RenderedInstance:
    tokens: tuple[str, ...]
    marker_positions: Mapping[str, int]
    labels: tuple[int, ...]
    doc_id: str
    head_id: str
    tail_id: str
    head_kb: str | None
    tail_kb: str | None
    head_type: str
    tail_type: str
    sentence_distance: int = 0
    prompt_span: tuple[int, int] | None = None
    description_span: tuple[int, int] | None = None
    options: RenderOptions = field(default_factory=RenderOptions)

    def __len__(self) -> int:
        return len(self.tokens)

    def to_record(self) -> dict:
        return {
            "tokens": list(self.tokens),
            "labels": list(self.labels),
            "doc_id": self.doc_id,
            "head_kb": self.head_kb,
            "tail_kb": self.tail_kb,
            "head_type": self.head_type,
            "tail_type": self.tail_type,
            "head_id": self.head_id,
            "tail_id": self.tail_id,
        }

    @classmethod
    def from_record(cls, rec: Mapping) -> "RenderedInstance":
        tokens = tuple(rec["tokens"])
        return cls(
            tokens=tokens,
            marker_positions={m: tokens.index(m) for m in MARKERS if m in tokens},
            labels=tuple(int(x) for x in rec["labels"]),
            doc_id=rec["doc_id"],
            head_id=rec.get("head_id", ""),
            tail_id=rec.get("tail_id", ""),
            head_kb=rec.get("head_kb"),
            tail_kb=rec.get("tail_kb"),
            head_type=rec.get("head_type", ""),
            tail_type=rec.get("tail_type", ""),
        )


def _overlap(a: EntityMention, b: EntityMention) -> bool:
    return a.begin < b.end and b.begin < a.end


def enumerate_pairs(document: Document, scenario: str, window: int = 0,
                    skipped: Counter | None = None) -> list[CandidatePair]:
    """All candidate pairs whose mention sentences are at most ``window`` apart.

    Typed scenarios orient pairs as (head type, tail type).  ``drug_drug``
    yields each unordered pair once with the earlier mention as head.
    Overlapping mention pairs are skipped and tallied in ``skipped``.
    """
    if window < 0:
        raise ValueError("window must be non-negative")
    if scenario not in SCENARIOS:
        raise ValueError(f"unknown scenario {scenario!r}")
    head_types, tail_types = SCENARIOS[scenario]
    sent = {m.mention_id: document.sentence_index(m) for m in document.mentions}
    ordered = sorted(document.mentions, key=lambda m: (m.begin, m.end, m.mention_id))

    if scenario == "drug_drug":
        drugs = [m for m in ordered if m.entity_type in DRUG_TYPES]
        candidates = [(drugs[i], drugs[j]) for i in range(len(drugs)) for j in range(i + 1, len(drugs))]
    else:
        heads = [m for m in ordered if m.entity_type in head_types]
        tails = [m for m in ordered if m.entity_type in tail_types]
        candidates = [(h, t) for h in heads for t in tails if h.mention_id != t.mention_id]

    pairs = []
    for h, t in candidates:
        dist = abs(sent[h.mention_id] - sent[t.mention_id])
        if dist > window:
            continue
        if _overlap(h, t):
            if skipped is not None:
                skipped["overlap"] += 1
            logger.debug("skipping overlapping pair %s/%s in %s", h.mention_id, t.mention_id, document.doc_id)
            continue
        pairs.append(CandidatePair(document.doc_id, h, t, scenario, sent[h.mention_id], dist,
                                   sent[t.mention_id]))
    return pairs


def build_label_vector(pair: CandidatePair, annotations: Iterable[RelationAnnotation],
                       schema: Sequence[str]) -> tuple[int, ...]:
    """Bit i is set iff a gold annotation of ``schema[i]`` links the pair.

    Mention-level annotations match the mention pair, document-level ones the
    identifier pair; both match irrespective of orientation.
    """
    index = {label: i for i, label in enumerate(schema)}
    bits = [0] * len(schema)
    mention_pair = {pair.head.mention_id, pair.tail.mention_id}
    kb_pair = {pair.head.kb_id, pair.tail.kb_id}
    for ann in annotations:
        if ann.relation_type not in index:
            raise SchemaError(f"relation type {ann.relation_type!r} not in schema {list(schema)}")
        if ann.level == "mention":
            hit = {ann.head, ann.tail} == mention_pair
        else:
            hit = None not in kb_pair and {ann.head, ann.tail} == kb_pair
        if hit:
            bits[index[ann.relation_type]] = 1
    return tuple(bits)


def _store_for(stores, entity_type: str) -> DescriptionStore | None:
    if stores is None or isinstance(stores, DescriptionStore):
        return stores
    return stores.get(entity_type)


def render_input(document: Document, pair: CandidatePair, options: RenderOptions,
                 stores: DescriptionStore | Mapping[str, DescriptionStore] | None = None,
                 labels: Sequence[int] = (),
                 tokenize: Callable[[str], list[str]] = simple_tokenize) -> RenderedInstance:
    """Render the marked token sequence for one pair.

    Layout: ``[CLS] prompt? left-context marked-anchor right-context ([SEP] description)*``.
    When the sequence exceeds ``options.max_length`` tokens are dropped in a
    fixed priority: description tokens from the end, then right context from
    its end, left context from its start, and finally anchor tokens from the
    right.  Markers, ``[CLS]`` and the prompt are never dropped.
    """
    if options.descriptions != "none" and stores is None:
        raise InstanceError("description rendering requires a description store")
    head, tail = pair.head, pair.tail
    if _overlap(head, tail):
        raise InstanceError(f"overlapping mentions {head.mention_id}/{tail.mention_id}")

    sents = document.sentences
    h_idx, t_idx = document.sentence_index(head), document.sentence_index(tail)
    lo, hi = min(h_idx, t_idx), max(h_idx, t_idx)
    c = options.context_sentences
    text = document.text

    # each token is (text, kind) with kind in cls/prompt/left/anchor/marker/right/desc/sep
    anchor_begin, anchor_end = sents[lo].begin, sents[hi].end
    events = sorted([(head.begin, 1, HEAD_S), (head.end, 0, HEAD_E),
                     (tail.begin, 1, TAIL_S), (tail.end, 0, TAIL_E)])
    anchor: list[tuple[str, str]] = []
    pos = anchor_begin
    for offset, _, marker in events:
        anchor.extend((tok, "anchor") for tok in tokenize(text[pos:offset]))
        anchor.append((marker, "marker"))
        pos = offset
    anchor.extend((tok, "anchor") for tok in tokenize(text[pos:anchor_end]))

    left = [(tok, "left") for s in sents[max(0, lo - c):lo] for tok in tokenize(s.text)]
    right = [(tok, "right") for s in sents[hi + 1:hi + 1 + c] for tok in tokenize(s.text)]

    prompt: list[tuple[str, str]] = []
    if options.prompt:
        sentence = PROMPT_TEMPLATE.format(relation=options.relation_type_name,
                                          head=head.surface, tail=tail.surface)
        prompt = [(tok, "prompt") for tok in tokenize(sentence)]

    desc: list[tuple[str, str]] = []
    if options.descriptions != "none":
        sides = {"head": [head], "tail": [tail], "both": [head, tail]}[options.descriptions]
        for m in sides:
            desc.append((SEP, "sep"))
            store = _store_for(stores, m.entity_type)
            desc.extend((tok, "desc") for tok in tokenize(lookup_description(store, m.kb_id)))

    seq = [(CLS, "cls")] + prompt + left + anchor + right + desc
    excess = len(seq) - options.max_length
    if excess > 0:
        n = len(seq)
        p0 = 1 + len(prompt)
        a0 = p0 + len(left)
        r0 = a0 + len(anchor)
        d0 = r0 + len(right)
        drop_order = (
            list(range(n - 1, d0 - 1, -1))
            + list(range(d0 - 1, r0 - 1, -1))
            + list(range(p0, a0))
            + [i for i in range(r0 - 1, a0 - 1, -1) if seq[i][1] != "marker"]
        )
        if excess > len(drop_order):
            raise InstanceError(
                f"{pair.doc_id}: cannot fit markers within max_length={options.max_length}"
            )
        dropped = set(drop_order[:excess])
        seq = [tok for i, tok in enumerate(seq) if i not in dropped]

    tokens = tuple(t for t, _ in seq)
    kinds = [k for _, k in seq]
    positions = {t: i for i, (t, k) in enumerate(seq) if k == "marker"}
    prompt_span = (1, 1 + len(prompt)) if prompt else None
    d_start = next((i for i, k in enumerate(kinds) if k in ("sep", "desc")), None)
    desc_span = (d_start, len(tokens)) if d_start is not None else None
    return RenderedInstance(
        tokens=tokens,
        marker_positions=positions,
        labels=tuple(labels),
        doc_id=pair.doc_id,
        head_id=head.mention_id,
        tail_id=tail.mention_id,
        head_kb=head.kb_id,
        tail_kb=tail.kb_id,
        head_type=head.entity_type,
        tail_type=tail.entity_type,
        sentence_distance=pair.sentence_distance,
        prompt_span=prompt_span,
        description_span=desc_span,
        options=options,
    )


@dataclass
class BuildStats:
    pairs: int = 0
    rendered: int = 0
    skipped: Counter = field(default_factory=Counter)


def build_instances(corpus: Corpus, scenario: str, schema: Sequence[str],
                    options: RenderOptions = RenderOptions(), window: int = 0,
                    stores=None, tokenize: Callable[[str], list[str]] = simple_tokenize,
                    stats: BuildStats | None = None) -> list[RenderedInstance]:
    """Enumerate, label and render every candidate pair of ``corpus``.

    Instances that cannot be rendered are skipped, logged and counted.
    """
    stats = stats if stats is not None else BuildStats()
    out = []
    for doc in corpus:
        for pair in enumerate_pairs(doc, scenario, window, skipped=stats.skipped):
            stats.pairs += 1
            labels = build_label_vector(pair, doc.relations, schema)
            try:
                out.append(render_input(doc, pair, options, stores, labels, tokenize))
            except InstanceError as exc:
                logger.warning("skipping instance: %s", exc)
                stats.skipped["render"] += 1
    stats.rendered = len(out)
    return out


def save_instances(instances: Iterable[RenderedInstance], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for inst in instances:
            fh.write(json.dumps(inst.to_record(), ensure_ascii=False) + "\n")


def load_instances(path: str | Path) -> list[RenderedInstance]:
    with Path(path).open(encoding="utf-8") as fh:
        return [RenderedInstance.from_record(json.loads(line)) for line in fh if line.strip()]

