import math
import random

import pytest

from conftest import build_doc
from karex.corpus import Corpus
from karex.evaluation import (PRF, DocRelationSet, KeyMismatchError, MentionPrediction, aggregate_document_level,
                              coverage, distance_table, doc_level_prf, gold_document_relations,
                              load_predictions, mean_sd, micro_prf, min_sentence_distance, per_type_prf,
                              recall_by_distance, save_predictions)

LABELS = ("A", "B", "C")


def brute_prf(pred, gold, only=None):
    tp = fp = fn = 0
    for k in gold:
        for lab in LABELS:
            if only is not None and lab != only:
                continue
            p, g = lab in pred[k], lab in gold[k]
            tp += p and g
            fp += p and not g
            fn += g and not p
    prec = tp / (tp + fp) if tp + fp else 0.0
    rec = tp / (tp + fn) if tp + fn else 0.0
    f = 2 * prec * rec / (prec + rec) if prec + rec else 0.0
    return prec, rec, f


def random_labels(rnd):
    return frozenset(lab for lab in LABELS if rnd.random() < 0.4)


def test_micro_prf_randomized_oracle():
    rnd = random.Random(907)
    for _ in range(1000):
        n = rnd.randint(0, 12)
        gold = {i: random_labels(rnd) for i in range(n)}
        pred = {i: random_labels(rnd) for i in range(n)}
        s = micro_prf(pred, gold)
        p, r, f = brute_prf(pred, gold)
        assert (s.precision, s.recall) == pytest.approx((p, r), abs=1e-12)
        assert s.f1 == pytest.approx(f, abs=1e-12)
        for lab, t in per_type_prf(pred, gold, LABELS).items():
            assert t.f1 == pytest.approx(brute_prf(pred, gold, lab)[2], abs=1e-12)


def test_small_fixture():
    gold = {0: {"A"}, 1: {"A"}, 2: {"B"}}
    pred = {0: {"A"}, 1: {"A", "C"}, 2: set()}
    s = micro_prf(pred, gold)
    assert (s.tp, s.fp, s.fn) == (2, 1, 1)
    assert s.precision == pytest.approx(2 / 3) and s.recall == pytest.approx(2 / 3)
    assert s.f1 == pytest.approx(2 / 3)


def test_empty_predictions_zero():
    assert micro_prf({0: set()}, {0: {"A"}}).f1 == 0.0
    assert PRF.from_counts(0, 0, 0).f1 == 0.0


def test_key_mismatch():
    with pytest.raises(KeyMismatchError) as exc:
        micro_prf({0: set(), 2: set()}, {0: set(), 1: set()})
    assert exc.value.missing_in_pred == [1] and exc.value.missing_in_gold == [2]


def test_mean_sd():
    m, s = mean_sd([0.80, 0.82, 0.84])
    assert m == pytest.approx(0.82, abs=1e-12) and s == pytest.approx(0.02, abs=1e-12)
    assert mean_sd([0.5]) == (0.5, 0.0)
    assert all(math.isnan(x) for x in mean_sd([]))


# ---------------------------------------------------------------------------
# document level


def test_aggregation_oracle():
    rnd = random.Random(11)
    for _ in range(500):
        preds = []
        for _ in range(rnd.randint(0, 15)):
            preds.append(MentionPrediction(rnd.choice("xy"), rnd.choice(["h1", "h2", None]),
                                           rnd.choice(["t1", "t2", None]), random_labels(rnd)))
        agg = aggregate_document_level(preds)
        expected = {}
        for p in preds:
            if p.head_kb and p.tail_kb:
                key = (p.doc_id, p.head_kb, p.tail_kb)
                expected[key] = expected.get(key, frozenset()) | p.types
        assert agg.entries == expected
        assert agg.excluded == sum(1 for p in preds if p.head_kb is None or p.tail_kb is None)


def test_aggregation_is_union_order_free():
    preds = [MentionPrediction("d", "h", "t", frozenset({"A"})), MentionPrediction("d", "h", "t", frozenset()),
             MentionPrediction("d", "h", "t", frozenset({"B"}))]
    assert aggregate_document_level(preds).entries == aggregate_document_level(preds[::-1]).entries
    assert aggregate_document_level(preds).entries[("d", "h", "t")] == {"A", "B"}


def test_doc_level_unreachable_gold_is_miss():
    pred = DocRelationSet({("d", "h", "t"): frozenset({"CID"})})
    gold = {("d", "h", "t", "CID"), ("d", "h", "x", "CID")}
    s = doc_level_prf(pred, gold)
    assert (s.tp, s.fp, s.fn) == (1, 0, 1)
    assert doc_level_prf(pred, gold, "other").f1 == 0.0


def random_doc(rnd, doc_id):
    n_sent = rnd.randint(1, 6)
    kbs = ["H", "T", "U"]
    sentences = [f"s{i} alpha beta gamma ." for i in range(n_sent)]
    mentions = []
    where = {}
    for j in range(rnd.randint(0, 6)):
        kb = rnd.choice(kbs)
        si = rnd.randrange(n_sent)
        surface = rnd.choice(["alpha", "beta", "gamma"])
        mentions.append((f"m{j}", "chemical", si, surface, kb))
        where.setdefault(kb, []).append(si)
    return build_doc(doc_id, sentences, mentions), where


def test_min_distance_oracle():
    rnd = random.Random(5)
    for i in range(500):
        doc, where = random_doc(rnd, f"d{i}")
        for h in "HTU":
            for t in "HTU":
                if h in where and t in where:
                    expected = min(abs(a - b) for a in where[h] for b in where[t])
                else:
                    expected = None
                assert min_sentence_distance(doc, h, t) == expected


def doc_corpus():
    a = build_doc("a", ["Drug X causes harm Y .", "Nothing here .", "Later Y again and Z ."],
                  [("m0", "chemical", 0, "X", "X"), ("m1", "disease", 0, "Y", "Y"), ("m2", "disease", 2, "Y", "Y"),
                   ("m3", "disease", 2, "Z", "Z")],
                  [("X", "Y", "CID", "document"), ("X", "Z", "CID", "document")])
    b = build_doc("b", ["Only W here ."], [("n0", "chemical", 0, "W", "W")], [("W", "Q", "CID", "document")])
    return Corpus((a, b))


def test_coverage_fixture():
    c = doc_corpus()
    assert distance_table(c) == {("a", "X", "Y"): 0, ("a", "X", "Z"): 2, ("b", "W", "Q"): None}
    cov0, cov2 = coverage(c, 0), coverage(c, 2)
    assert (cov0.covered, cov0.included, cov0.excluded) == (1, 2, 1)
    assert cov0.fraction == 0.5 and cov2.fraction == 1.0


def test_coverage_monotone_in_window():
    rnd = random.Random(3)
    docs = []
    for i in range(40):
        doc, where = random_doc(rnd, f"d{i}")
        rels = [("H", "T", "R", "document")] if "H" in where and "T" in where else []
        docs.append(build_doc(doc.doc_id, [s.text for s in doc.sentences],
                              [(m.mention_id, m.entity_type, doc.sentence_index(m), m.surface, m.kb_id)
                               for m in doc.mentions], rels))
    c = Corpus(tuple(docs))
    fracs = [coverage(c, w).fraction for w in range(7)]
    assert all(b >= a for a, b in zip(fracs, fracs[1:]))
    assert fracs[-1] == 1.0 or coverage(c, 6).included == 0


def test_recall_buckets_partition_gold():
    c = doc_corpus()
    gold = gold_document_relations(c)
    pred = {("a", "X", "Y", "CID")}
    buckets = recall_by_distance(pred, gold, distance_table(c))
    assert buckets["intra"].recall == 1.0
    assert (buckets["inter"].recovered, buckets["inter"].total) == (0, 1)
    assert buckets["unlocated"].total == 1
    assert sum(b.total for b in buckets.values()) == len(gold)


def test_predictions_round_trip(tmp_path):
    preds = [MentionPrediction("d", "h", "t", frozenset({"A", "B"}), (0.9, 0.7)),
             MentionPrediction("d", None, "t")]
    save_predictions(tmp_path / "p.jsonl", preds)
    assert load_predictions(tmp_path / "p.jsonl") == preds
