"""Fine-tune a tiny transformer on the planted-cue corpus, with and without entity embeddings.

Run: python demos/train_relation_classifier.py
"""
import numpy as np

from karex.harness import ExperimentConfig
from karex.knowledge import EmbeddingStore
from karex.model import TrainConfig
from karex.pipeline import ModelRunner, synthetic_bundle

bundle = synthetic_bundle()

# random entity vectors stand in for trained graph embeddings
kbs = sorted({m.kb_id for c in (bundle.train, bundle.val, bundle.test) for d in c for m in d.mentions})
bundle.embeddings = {"random": EmbeddingStore(kbs, np.random.default_rng(0).normal(size=(len(kbs), 16)))}

runner = ModelRunner({"synthetic": bundle})
train = TrainConfig(lr=1e-3, batch_size=16, max_length=64, epochs=10, patience=10, override=True)
for variant in ("baseline", "embedding"):
    cfg = ExperimentConfig("synthetic", "tiny", TrainConfig(**{**train.to_dict(), "variant": variant}))
    res = runner(cfg)
    print(f"{variant:9s} val F1 {res.val_f1:.3f}  test F1 {res.test_f1:.3f}  ({res.runtime:.1f}s)")
    for label, (p, r, f) in res.per_type.items():
        print(f"    {label:14s} P {p:.3f} R {r:.3f} F1 {f:.3f}")
