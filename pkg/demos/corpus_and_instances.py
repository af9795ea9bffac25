"""Load a corpus, split it, and look at what the classifier actually reads.

Run: python demos/corpus_and_instances.py
"""
from karex.corpus import make_splits
from karex.instances import RenderOptions, build_instances
from karex.synthetic import CUE_LABELS, planted_cue_corpus

corpus = planted_cue_corpus(40, 10, 10)
print(f"{len(corpus)} documents, {corpus.n_mentions} mentions")

# document-level split, stratified on the set of relation types per document
split = make_splits(corpus, (40, 10, 10), seed=907, stratify=True)
print("split sizes:", split.sizes())

# one rendered instance per chemical-gene pair, with entity markers
plain = build_instances(corpus.subset(split.train), "chemical_gene", CUE_LABELS, RenderOptions(max_length=64))
x = plain[0]
print("tokens:", " ".join(x.tokens))
print("labels:", dict(zip(CUE_LABELS, x.labels)))

# the prompt variant prepends a question about the pair
prompted = build_instances(corpus.subset(split.train[:1]), "chemical_gene", CUE_LABELS,
                           RenderOptions(max_length=64, prompt=True, relation_type_name="chemical-gene"))
print("with prompt:", " ".join(prompted[0].tokens))
