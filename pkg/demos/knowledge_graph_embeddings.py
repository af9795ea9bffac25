"""Train RotatE and MuRE on a small ring graph and rank held-in triples.

Run: python demos/knowledge_graph_embeddings.py
"""
import tempfile
from pathlib import Path

from karex.kge import (KGEHyperparams, entity_store, evaluate_link_prediction, graph_from_rows, random_ranker_mrr,
                       sample_negatives, train_kge)
from karex.knowledge import lookup_pair_embedding
from karex.synthetic import toy_triples

graph = graph_from_rows(toy_triples())
print("graph:", graph.stats())

negs, complete = sample_negatives(graph, graph.triples[0], 4, "corrupt_tail", seed=0)
print("corrupted tails for the first triple:", negs, "complete" if complete else "short")

print(f"random ranker MRR: {random_ranker_mrr(graph.triples, graph):.3f}")
for method in ("rotate", "mure"):
    hp = KGEHyperparams(method, dim=32, lr=0.1, batch_size=16, epochs=200, negatives=8, gamma=6.0)
    result = train_kge(graph, hp, seed=907)
    lp = evaluate_link_prediction(result.model, graph.triples, graph, ks=(1, 3, 10))
    print(f"{method:6s} loss {result.losses[0]:.3f} -> {result.losses[-1]:.3f}  MRR {lp.mrr:.3f}  hits {lp.hits}")

# entity vectors feed the embedding variant of the classifier through a frozen store
store = entity_store(result.model, graph)
pair = lookup_pair_embedding(store, graph.entities[0], graph.entities[1])
print("pair feature width:", pair.shape[0])
with tempfile.TemporaryDirectory() as d:
    store.save(Path(d) / "entities.tsv")
    print("snapshot written, hash", store.content_hash()[:12])
