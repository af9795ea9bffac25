"""End-to-end runner: corpus -> rendered instances -> fine-tuned classifier -> scores."""

from __future__ import annotations

import dataclasses
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import torch

from .corpus import Corpus
from .evaluation import (MentionPrediction, aggregate_document_level, doc_level_prf, gold_document_relations,
                         micro_prf, per_type_prf)
from .harness import ExperimentConfig, RunResult
from .instances import RenderOptions, RenderedInstance, build_instances
from .knowledge import DescriptionStore, EmbeddingStore
from .model.classifier import CompoundSide, FrozenTable, RelationClassifier, TableSide
from .model.encoders import HFEncoder, TinyTransformerEncoder, Vocabulary
from .model.training import predict, save_checkpoint, train_model
from .molenc.compound import ToyCompoundEncoder
from .molenc.fingerprint import fingerprint_table

logger = logging.getLogger(__name__)


@dataclass
class DatasetBundle:
    """Everything a run needs about one dataset.

    ``level`` is ``mention`` (score rendered instances) or ``document``
    (aggregate to entity pairs before scoring).
    """

    name: str
    train: Corpus
    val: Corpus
    test: Corpus
    scenario: str
    schema: tuple[str, ...]
    level: str = "mention"
    window: int = 0
    relation_type_name: str = "chemical-gene"
    descriptions: DescriptionStore | Mapping[str, DescriptionStore] | None = None
    embeddings: Mapping[str, EmbeddingStore] = field(default_factory=dict)
    smiles: Mapping[str, str] = field(default_factory=dict)

    def default_sides(self) -> str:
        """Structure input goes to the chemical of chemical-X pairs and to both drugs otherwise."""
        return "head" if self.scenario.startswith("chemical") else "both"


def _options(bundle: DatasetBundle, cfg: ExperimentConfig) -> RenderOptions:
    desc = cfg.params.get("descriptions", "both") if cfg.variant == "text" else "none"
    return RenderOptions(context_sentences=cfg.train.context_sentences, prompt=cfg.train.prompt,
                         descriptions=desc, max_length=cfg.train.max_length,
                         relation_type_name=bundle.relation_type_name)


class ModelRunner:
    """Callable usable by :func:`karex.harness.run_protocol` and the ablation driver.

    Encoder ids: ``tiny`` (random 2-layer width-64 transformer over the
    training vocabulary) or ``hf:<name-or-path>`` (pretrained checkpoint).
    """

    def __init__(self, datasets: Mapping[str, DatasetBundle], artifacts_dir: str | Path | None = None,
                 tiny_hidden: int = 64, tiny_layers: int = 2):
        self.datasets = dict(datasets)
        self.artifacts_dir = Path(artifacts_dir) if artifacts_dir is not None else None
        self.tiny_hidden = tiny_hidden
        self.tiny_layers = tiny_layers

    def instances(self, cfg: ExperimentConfig, split: str, train_ids: Sequence[str] | None = None,
                  tokenize=None) -> list[RenderedInstance]:
        bundle = self.datasets[cfg.dataset]
        corpus = getattr(bundle, split)
        if train_ids is not None and split == "train":
            corpus = corpus.subset(train_ids)
        kwargs = {"tokenize": tokenize} if tokenize is not None else {}
        return build_instances(corpus, bundle.scenario, bundle.schema, _options(bundle, cfg), bundle.window,
                               bundle.descriptions, **kwargs)

    def build_encoder(self, cfg: ExperimentConfig, train: Sequence[RenderedInstance]):
        if cfg.encoder == "tiny":
            vocab = Vocabulary.build(x.tokens for x in train)
            return TinyTransformerEncoder(vocab, hidden=self.tiny_hidden, layers=self.tiny_layers,
                                          max_length=cfg.train.max_length)
        if cfg.encoder.startswith("hf:"):
            return HFEncoder.from_pretrained(cfg.encoder[3:], max_length=cfg.train.max_length)
        raise ValueError(f"unknown encoder id {cfg.encoder!r}")

    def build_side(self, cfg: ExperimentConfig):
        bundle = self.datasets[cfg.dataset]
        params = cfg.params
        if cfg.variant == "embedding":
            store = bundle.embeddings[params.get("embedding_store", next(iter(bundle.embeddings), ""))]
            return TableSide(FrozenTable.from_store(store), sides=params.get("sides", "both"))
        if cfg.variant == "structure":
            sides = params.get("sides", bundle.default_sides())
            method = params.get("fingerprint", "combined")
            if method == "compound_encoder":
                return CompoundSide(ToyCompoundEncoder(), bundle.smiles, sides=sides)
            fps = fingerprint_table(bundle.smiles, method)
            return TableSide(FrozenTable.from_fingerprints(fps), sides=sides)
        return None

    def __call__(self, cfg: ExperimentConfig, train_ids: Sequence[str] | None = None) -> RunResult:
        t0 = time.perf_counter()
        bundle = self.datasets[cfg.dataset]
        tcfg = dataclasses.replace(cfg.train, seed=cfg.seed)
        train = self.instances(cfg, "train", train_ids)
        val = self.instances(cfg, "val")
        test = self.instances(cfg, "test")
        torch.manual_seed(cfg.seed)
        encoder = self.build_encoder(cfg, train)
        model = RelationClassifier(encoder, len(bundle.schema), cfg.variant, self.build_side(cfg))
        trained = train_model(train, val, tcfg, model)
        artifacts = {}
        if self.artifacts_dir is not None:
            path = save_checkpoint(trained, self.artifacts_dir / cfg.run_id()[:16])
            artifacts["checkpoint"] = str(path)
        val_f1 = self.score(bundle, val, bundle.val, model, tcfg.threshold)[0]
        test_f1, per_type = self.score(bundle, test, bundle.test, model, tcfg.threshold)
        return RunResult(val_f1, test_f1, per_type, time.perf_counter() - t0, artifacts)

    @staticmethod
    def score(bundle: DatasetBundle, instances: Sequence[RenderedInstance], corpus: Corpus,
              model: RelationClassifier, threshold: float = 0.5) -> tuple[float, dict]:
        preds = predict(model, instances, threshold) if instances else []
        if bundle.level == "document":
            mp = [MentionPrediction(x.doc_id, x.head_kb, x.tail_kb, frozenset(bundle.schema[i] for i in p.labels))
                  for x, p in zip(instances, preds)]
            agg = aggregate_document_level(mp)
            gold = gold_document_relations(corpus)
            overall = doc_level_prf(agg, gold)
            per = {lab: doc_level_prf(agg, gold, lab) for lab in bundle.schema}
        else:
            pmap = {i: frozenset(bundle.schema[j] for j in p.labels) for i, p in enumerate(preds)}
            gmap = {i: frozenset(bundle.schema[j] for j, b in enumerate(x.labels) if b)
                    for i, x in enumerate(instances)}
            overall = micro_prf(pmap, gmap)
            per = per_type_prf(pmap, gmap, bundle.schema)
        return overall.f1, {lab: (s.precision, s.recall, s.f1) for lab, s in per.items()}


def synthetic_bundle(seed: int = 0) -> DatasetBundle:
    """The planted-cue corpus packaged as a mention-level dataset."""
    from .synthetic import CUE_LABELS, planted_cue_corpus

    corpus = planted_cue_corpus(seed=seed)
    return DatasetBundle("synthetic", corpus.by_split_hint("train"), corpus.by_split_hint("val"),
                         corpus.by_split_hint("test"), "chemical_gene", CUE_LABELS)


def load_bundle(manifest: str | Path) -> DatasetBundle:
    """Dataset from a JSON manifest.

    Keys: ``name``, ``scenario``, ``schema`` and either ``corpus`` (one
    interchange file with split hints) or ``train``/``val``/``test`` paths;
    optional ``level``, ``window``, ``relation_type_name``, ``descriptions``
    (entity type -> TSV), ``embeddings`` (store id -> file) and ``smiles``
    (``kb_id<TAB>smiles`` TSV).  Relative paths resolve against the manifest.
    """
    import json

    from .corpus import load_corpus
    from .molenc.fingerprint import load_smiles_tsv

    manifest = Path(manifest)
    spec = json.loads(manifest.read_text(encoding="utf-8"))
    root = manifest.parent

    def p(x):
        return root / x

    if "corpus" in spec:
        full = load_corpus(p(spec["corpus"]))
        train, val, test = (full.by_split_hint(s) for s in ("train", "val", "test"))
    else:
        train, val, test = (load_corpus(p(spec[s])) for s in ("train", "val", "test"))
    descriptions = {t: DescriptionStore.from_tsv(p(f), scheme=t) for t, f in spec.get("descriptions", {}).items()}
    embeddings = {k: EmbeddingStore.load(p(f)) for k, f in spec.get("embeddings", {}).items()}
    smiles = load_smiles_tsv(p(spec["smiles"])) if spec.get("smiles") else {}
    return DatasetBundle(spec["name"], train, val, test, spec["scenario"], tuple(spec["schema"]),
                         spec.get("level", "mention"), spec.get("window", 0),
                         spec.get("relation_type_name", "chemical-gene"), descriptions or None, embeddings, smiles)
