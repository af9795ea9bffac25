import random

import pytest

from karex.corpus import Corpus, Document, EntityMention, RelationAnnotation, Sentence


def build_doc(doc_id, sentences, mentions=(), relations=(), split=None):
    """Document from sentence strings joined by single spaces.

    ``mentions`` are (id, type, sentence index, surface, kb_id); the surface is
    located by its first occurrence in that sentence.  ``relations`` are
    (head, tail, type, level).
    """
    sents, pos = [], 0
    for text in sentences:
        sents.append(Sentence(text, pos, pos + len(text)))
        pos += len(text) + 1
    ms = []
    for mid, etype, si, surface, kb in mentions:
        s = sents[si]
        off = s.text.index(surface)
        ms.append(EntityMention(mid, etype, s.begin + off, s.begin + off + len(surface), surface, kb))
    rels = tuple(RelationAnnotation(*r) for r in relations)
    return Document(doc_id, tuple(sents), tuple(ms), rels, split)


def typed_corpus(counts, prefix="d"):
    """One chemical-gene document per entry; ``counts`` maps relation type -> number of documents."""
    docs = []
    i = 0
    for rtype, n in counts.items():
        for _ in range(n):
            docs.append(build_doc(f"{prefix}{i}", ["Aspirin blocks COX1 ."],
                                  [("m0", "chemical", 0, "Aspirin", "C1"), ("m1", "gene", 0, "COX1", "G1")],
                                  [("m0", "m1", rtype, "mention")]))
            i += 1
    return Corpus(tuple(docs))


@pytest.fixture
def rng():
    return random.Random(1234)


ACCEPTANCE_LINES = []


@pytest.fixture
def verdict():
    """Record and print one PASS/FAIL line for an acceptance criterion, then assert it."""

    def check(name, ok, detail=""):
        line = f"{'PASS' if ok else 'FAIL'} {name}: {detail}"
        print(line)
        ACCEPTANCE_LINES.append(line)
        assert ok, line

    return check


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
