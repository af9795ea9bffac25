"""Deterministic synthetic fixtures: a planted-cue relation corpus and a toy knowledge graph."""

from __future__ import annotations

import random

from .corpus import Corpus, Document, EntityMention, RelationAnnotation, Sentence

CUE_LABELS = ("downregulator", "upregulator")
_CUES = {
    "downregulator": ("inhibits", "blocks", "suppresses", "represses"),
    "upregulator": ("activates", "induces", "stimulates", "enhances"),
}
_NEUTRAL = ("was measured alongside", "was studied with", "co-occurs with", "appears near")
_OPENERS = ("In this study ,", "We found that", "Notably ,", "Here", "In vitro ,", "")
_CLOSERS = ("in liver cells .", "in mice .", "at high doses .", "in patients .", ".")


def _doc(doc_id: str, parts: list[tuple[str, str | None, str | None]], labels: list[str],
         split: str | None) -> Document:
    """Assemble a one-sentence document from (text, entity_type, kb_id) fragments joined by spaces."""
    text, mentions, pos = "", [], 0
    for frag, etype, kb in parts:
        if text:
            text += " "
            pos += 1
        if etype is not None:
            mentions.append(EntityMention(f"{doc_id}-m{len(mentions)}", etype, pos, pos + len(frag), frag, kb))
        text += frag
        pos += len(frag)
    rels = tuple(RelationAnnotation(mentions[0].mention_id, mentions[1].mention_id, lab, "mention")
                 for lab in labels)
    return Document(doc_id, (Sentence(text, 0, len(text)),), tuple(mentions), rels, split)


def planted_cue_corpus(n_train: int = 200, n_val: int = 50, n_test: int = 50, seed: int = 0) -> Corpus:
    """Chemical-gene sentences whose labels are fully determined by planted cue verbs.

    Each sentence holds one chemical and one gene.  Label sets are drawn
    uniformly from {}, {down}, {up}, {down, up}; a bag-of-cues rule recovers
    every label exactly.
    """
    rng = random.Random(seed)
    docs = []
    for split, n in (("train", n_train), ("val", n_val), ("test", n_test)):
        for i in range(n):
            labels = [lab for lab in CUE_LABELS if rng.random() < 0.5]
            chem = f"chem{rng.randrange(1000)}"
            gene = f"GENE{rng.randrange(1000)}"
            if not labels:
                verb = rng.choice(_NEUTRAL)
            else:
                verb = " and ".join(rng.choice(_CUES[lab]) for lab in labels)
            opener = rng.choice(_OPENERS)
            parts = ([(opener, None, None)] if opener else []) + [
                (chem, "chemical", f"C:{chem}"), (verb, None, None), (gene, "gene", f"G:{gene}"),
                (rng.choice(_CLOSERS), None, None),
            ]
            docs.append(_doc(f"{split}{i:04d}", parts, labels, split))
    return Corpus(tuple(docs), name="planted_cue")


def cue_oracle(tokens) -> set[str]:
    """Bag-of-cues classifier that is exact on :func:`planted_cue_corpus`."""
    toks = set(tokens)
    return {lab for lab, cues in _CUES.items() if toks & set(cues)}


def toy_triples(n: int = 20) -> list[tuple[str, str, str, str, str]]:
    """``n`` entities on a ring with relations ``next`` (i -> i+1) and ``skip`` (i -> i+2, i -> i+3).

    Even entities are typed chemical, odd ones gene; 3n triples in total.
    """
    def typ(i):
        return "chemical" if i % 2 == 0 else "gene"

    rows = []
    for i in range(n):
        for rel, step in (("next", 1), ("skip", 2), ("skip", 3)):
            j = (i + step) % n
            rows.append((f"E{i}", rel, f"E{j}", typ(i), typ(j)))
    return rows
