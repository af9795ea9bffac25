import math
import warnings
from collections import Counter

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal
from scipy.stats import chisquare

from karex.kge import (GraphFormatError, KGEHyperparams, KGEModel, TrainingDivergedError, build_graph,
                       entity_store, evaluate_link_prediction, export_model, graph_from_rows, metrics_from_ranks,
                       random_ranker_mrr, rank_of, sample_negatives, score_batch, score_grads, score_triple,
                       train_kge)
from karex.knowledge import EmbeddingStore
from karex.synthetic import toy_triples

TOY_HP = dict(dim=32, lr=0.1, batch_size=16, epochs=200, negatives=8, gamma=6.0)


@pytest.fixture(scope="module")
def toy():
    return graph_from_rows(toy_triples())


def test_empty_file(tmp_path):
    p = tmp_path / "e.tsv"
    p.write_text("")
    g = build_graph([p])
    assert len(g) == 0 and g.n_entities == 0


def test_three_row_fixture(tmp_path):
    p = tmp_path / "t.tsv"
    p.write_text("head_id\trelation\ttail_id\thead_type\ttail_type\n"
                 "C1\tincreases\tG1\tchemical\tgene\n"
                 "C1\tdecreases\tG2\tchemical\tgene\n"
                 "C2\tincreases\tG1\tchemical\tgene\n"
                 "C2\tincreases\tG1\tchemical\tgene\n")
    g = build_graph([p])
    assert (len(g), g.n_entities, g.n_relations) == (3, 4, 2)


def test_scope_skips_and_counts(tmp_path):
    p = tmp_path / "t.tsv"
    p.write_text("C1\tmarker\tD1\tchemical\tdisease\nC1\tbinds\tG1\tchemical\tgene\nX\tr\tY\tprotein\tgene\n")
    g = build_graph([p], scope="chemical_disease")
    assert len(g) == 1 and g.skipped == 2
    assert build_graph([p], scope="complete").skipped == 1


def test_malformed_row_line_number(tmp_path):
    p = tmp_path / "t.tsv"
    p.write_text("C1\tbinds\tG1\tchemical\tgene\nC1\tbinds\tG1\n")
    with pytest.raises(GraphFormatError, match=":2:"):
        build_graph([p])


# ---------------------------------------------------------------------------
# negatives


def test_zero_negatives(toy):
    assert sample_negatives(toy, toy.triples[0], 0) == ([], True)


def test_negatives_absent_and_deterministic(toy):
    for mode in ("corrupt_tail", "corrupt_head", "both"):
        for tr in toy.triples[:10]:
            negs, complete = sample_negatives(toy, tr, 5, mode, seed=7)
            assert complete and len(negs) == 5 and len(set(negs)) == 5
            assert all(n not in toy for n in negs)
            assert negs == sample_negatives(toy, tr, 5, mode, seed=7)[0]
            if mode == "corrupt_tail":
                assert all(n[:2] == (tr[0], tr[1]) for n in negs)


def test_too_few_negatives_flagged():
    g = graph_from_rows([("A", "r", "B", "chemical", "gene"), ("A", "r", "C", "chemical", "gene")])
    negs, complete = sample_negatives(g, g.triples[0], 10, "corrupt_tail", seed=0)
    # candidate tails: A only (B, C are true)
    assert not complete and negs == [(0, 0, 0)]


def test_negative_sampling_uniform(toy):
    tr = toy.triples[0]
    counts = Counter()
    rng = np.random.default_rng(11)
    for _ in range(4000):
        negs, _ = sample_negatives(toy, tr, 1, "both", seed=rng)
        counts[negs[0]] += 1
    admissible = [(tr[0], tr[1], e) for e in range(toy.n_entities)] + [(e, tr[1], tr[2]) for e in range(toy.n_entities)]
    admissible = sorted({a for a in admissible if a not in toy})
    assert set(counts) == set(admissible)
    assert chisquare([counts[a] for a in admissible]).pvalue > 0.01


# ---------------------------------------------------------------------------
# scoring


def test_rotate_zero_rotation_fixed_point():
    m = KGEModel.init("rotate", 3, 1, 4, gamma=5.0, seed=0)
    m.params["phase"][:] = 0
    assert score_triple(m, (1, 0, 1)) == pytest.approx(5.0, abs=1e-12)


def test_mure_identity():
    m = KGEModel.init("mure", 3, 1, 4, seed=0)
    m.params["rel_diag"][:] = 1
    m.params["rel_vec"][:] = 0
    assert score_triple(m, (2, 0, 2)) == 0.0


def test_rotate_quarter_turn():
    m = KGEModel("rotate", 1, 2.0, {"ent_re": np.array([[1.0], [0.0]]), "ent_im": np.array([[0.0], [1.0]]),
                                     "phase": np.array([[math.pi / 2]])})
    assert score_triple(m, (0, 0, 1)) == pytest.approx(2.0, abs=1e-12)


def random_model(method, seed):
    rng = np.random.default_rng(seed)
    m = KGEModel.init(method, 6, 3, 5, gamma=4.0, seed=seed)
    if method == "mure":
        m.params["bias"] = rng.normal(size=6)
    return m, rng.integers(6, size=8), rng.integers(3, size=8), rng.integers(6, size=8)


def numeric_grads(model, h, r, t, step=1e-6):
    out = {}
    for name, arr in model.params.items():
        g = np.zeros((len(h),) + arr.shape)
        for idx in np.ndindex(arr.shape):
            old = arr[idx]
            arr[idx] = old + step
            up = score_batch(model, h, r, t)
            arr[idx] = old - step
            down = score_batch(model, h, r, t)
            arr[idx] = old
            g[(slice(None),) + idx] = (up - down) / (2 * step)
        out[name] = g
    return out


def analytic_dense(model, h, r, t):
    _, grads = score_grads(model, h, r, t)
    out = {name: np.zeros((len(h),) + arr.shape) for name, arr in model.params.items()}
    for name, idx, g in grads:
        for b in range(len(h)):
            out[name][b, idx[b]] += g[b]
    return out


def max_relative_error(a, b):
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-8)))


@pytest.mark.parametrize("method", ["rotate", "mure"])
@pytest.mark.parametrize("seed", range(5))
def test_score_gradient_check(method, seed):
    m, h, r, t = random_model(method, seed)
    num, ana = numeric_grads(m, h, r, t), analytic_dense(m, h, r, t)
    for name in m.params:
        assert max_relative_error(ana[name], num[name]) < 1e-4, name


def test_phase_shift_invariance():
    m, h, r, t = random_model("rotate", 3)
    before = score_batch(m, h, r, t)
    m.params["phase"][1, 2] += 2 * math.pi
    m.params["phase"][0] -= 2 * math.pi
    assert_allclose(score_batch(m, h, r, t), before, rtol=0, atol=1e-9)


# ---------------------------------------------------------------------------
# training


def test_zero_epochs_is_initialisation(toy):
    res = train_kge(toy, KGEHyperparams("mure", dim=8, epochs=0), seed=907)
    init = KGEModel.init("mure", toy.n_entities, toy.n_relations, 8, 6.0, np.random.default_rng(907))
    for k in init.params:
        assert_array_equal(res.model.params[k], init.params[k])
    assert res.losses == []


@pytest.mark.parametrize("method", ["rotate", "mure"])
def test_training_reduces_loss_and_separates(toy, method):
    res = train_kge(toy, KGEHyperparams(method, **TOY_HP), seed=907)
    losses = res.losses
    assert losses[-1] < losses[0]
    tenth = max(1, len(losses) // 10)
    assert np.median(losses[-tenth:]) < np.median(losses[:tenth])
    pos = score_batch(res.model, *toy.triples.T).mean()
    negs = [n for tr in toy.triples for n in sample_negatives(toy, tr, 4, "both", seed=1)[0]]
    neg = score_batch(res.model, *np.array(negs).T).mean()
    assert pos > neg


def test_training_deterministic(toy):
    hp = KGEHyperparams("rotate", dim=8, lr=0.1, epochs=20)
    a = train_kge(toy, hp, seed=907).model
    b = train_kge(toy, hp, seed=907).model
    for k in a.params:
        assert_array_equal(a.params[k], b.params[k])


def test_phases_stay_in_range(toy):
    m = train_kge(toy, KGEHyperparams("rotate", dim=8, lr=0.5, epochs=10), seed=1).model
    assert np.all((m.params["phase"] >= 0) & (m.params["phase"] < 2 * math.pi))


def test_divergence_aborts(toy):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        with pytest.raises(TrainingDivergedError):
            train_kge(toy, KGEHyperparams("mure", dim=8, lr=1e12, epochs=50), seed=0)


def test_empty_graph_rejected(tmp_path):
    p = tmp_path / "e.tsv"
    p.write_text("")
    with pytest.raises(ValueError):
        train_kge(build_graph([p]))


# ---------------------------------------------------------------------------
# evaluation


def test_hand_ranks():
    res = metrics_from_ranks([1, 2, 4], ks=(1, 3))
    assert res.mrr == pytest.approx((1 + 1 / 2 + 1 / 4) / 3, abs=1e-15)
    assert res.hits == {1: pytest.approx(1 / 3), 3: pytest.approx(2 / 3)}


def test_rank_ties_and_filtering():
    scores = np.array([0.9, 0.5, 0.9, 0.1])
    assert rank_of(scores, 1) == 3.0
    assert rank_of(scores, 1, exclude=[0, 2]) == 1.0
    assert rank_of(scores, 0) == 1.5


def perfect_model(graph):
    """MuRE model that scores each true tail far above everything else (one relation)."""
    n = graph.n_entities
    ent = np.eye(n) * 10
    m = KGEModel("mure", n, 0.0, {"ent": ent, "bias": np.zeros(n), "rel_diag": np.ones((1, n)),
                                  "rel_vec": np.zeros((1, n))})
    return m


def test_perfect_ranker():
    g = graph_from_rows([(f"E{i}", "same", f"E{i}", "chemical", "chemical") for i in range(5)])
    res = evaluate_link_prediction(perfect_model(g), g.triples, g)
    assert res.mrr == 1.0 and res.hits[1] == 1.0 and res.filtered


def test_all_competitors_true_ranks_first():
    # every entity is a true tail of (A, r): filtering leaves only the target
    g = graph_from_rows([("A", "r", x, "chemical", "chemical") for x in ("A", "B", "C", "D")])
    m = KGEModel.init("mure", g.n_entities, 1, 4, seed=0)
    res = evaluate_link_prediction(m, g.triples, g, sides="tail")
    assert res.n_queries == 4 and res.mrr == 1.0
    assert evaluate_link_prediction(m, g.triples, g, sides="tail", filtered=False).mrr < 1.0


def test_random_ranker_mrr_oracle(toy):
    # expected reciprocal rank of a uniformly random position among c candidates is H(c)/c
    def brute(c):
        return np.mean([1 / (i + 1) for i in range(c)])

    expected = []
    for h, r, t in toy.triples:
        expected.append(brute(toy.n_entities - (len(toy.tails[(h, r)]) - 1)))
        expected.append(brute(toy.n_entities - (len(toy.heads[(r, t)]) - 1)))
    assert random_ranker_mrr(toy.triples, toy) == pytest.approx(np.mean(expected), abs=1e-12)


def test_export_round_trip(toy, tmp_path):
    res = train_kge(toy, KGEHyperparams("rotate", dim=4, lr=0.1, epochs=2), seed=0)
    export_model(res.model, toy, tmp_path / "ent.tsv", tmp_path / "rel.tsv")
    store = EmbeddingStore.load(tmp_path / "ent.tsv")
    assert store.dim == 8 and store.ids == tuple(toy.entities)
    assert_allclose(store.vectors, entity_store(res.model, toy).vectors, rtol=0, atol=0)
    assert EmbeddingStore.load(tmp_path / "rel.tsv").dim == 4


def test_model_save_load(toy, tmp_path):
    m = train_kge(toy, KGEHyperparams("mure", dim=4, lr=0.1, epochs=2), seed=0).model
    m.save(tmp_path / "m.npz")
    back = KGEModel.load(tmp_path / "m.npz")
    assert (back.method, back.dim, back.gamma) == (m.method, m.dim, m.gamma)
    for k in m.params:
        assert_array_equal(back.params[k], m.params[k])
