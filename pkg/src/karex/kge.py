"""Knowledge graphs from CTD-style triple files and MuRE / RotatE embeddings.

Both models are trained with plain SGD on the logistic negative-sampling loss

    L = softplus(-s(h, r, t)) + mean_j softplus(s(h'_j, r, t'_j))

where s is the model score (higher means more plausible) and the corrupted
triples are filtered uniform negatives.  Gradients are analytic.

Scores:
    RotatE  s = gamma - sum_i |h_i * r_i - t_i|    (complex, |r_i| = 1)
    MuRE    s = -||R * h - (t + rv)||^2 + b_h + b_t
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .knowledge import EmbeddingStore

logger = logging.getLogger(__name__)

KG_ENTITY_TYPES = ("chemical", "disease", "gene", "phenotype")
SCOPES = {
    "complete": None,
    "chemical_disease": frozenset({("chemical", "disease")}),
    "chemical_gene": frozenset({("chemical", "gene")}),
}
METHODS = ("mure", "rotate")
TWO_PI = 2 * math.pi


class GraphFormatError(ValueError):
    pass


class TrainingDivergedError(RuntimeError):
    pass


@dataclass
class KnowledgeGraph:
    entities: list[str]
    entity_types: list[str]
    relations: list[str]
    triples: np.ndarray  # (m, 3) int64 rows of (head, relation, tail)
    scope: str = "complete"
    skipped: int = 0

    def __post_init__(self):
        self.entity_index = {e: i for i, e in enumerate(self.entities)}
        self.relation_index = {r: i for i, r in enumerate(self.relations)}
        self.triples = np.asarray(self.triples, dtype=np.int64).reshape(-1, 3)
        self.triple_set = {tuple(int(x) for x in row) for row in self.triples}
        self.tails: dict[tuple[int, int], set[int]] = {}
        self.heads: dict[tuple[int, int], set[int]] = {}
        for h, r, t in self.triple_set:
            self.tails.setdefault((h, r), set()).add(t)
            self.heads.setdefault((r, t), set()).add(h)

    @property
    def n_entities(self) -> int:
        return len(self.entities)

    @property
    def n_relations(self) -> int:
        return len(self.relations)

    def __len__(self) -> int:
        return len(self.triples)

    def __contains__(self, triple) -> bool:
        return tuple(int(x) for x in triple) in self.triple_set

    def stats(self) -> dict:
        counts: dict[str, int] = {}
        for t in self.entity_types:
            counts[t] = counts.get(t, 0) + 1
        return {"triples": len(self), "entities": self.n_entities, "relations": self.n_relations,
                "entity_types": counts, "skipped": self.skipped, "scope": self.scope}

    def encode(self, rows: Iterable[tuple[str, str, str]]) -> np.ndarray:
        return np.array([(self.entity_index[h], self.relation_index[r], self.entity_index[t]) for h, r, t in rows],
                        dtype=np.int64).reshape(-1, 3)


def _admissible(scope: str, ht: str, tt: str) -> bool:
    if ht not in KG_ENTITY_TYPES or tt not in KG_ENTITY_TYPES:
        return False
    allowed = SCOPES[scope]
    return allowed is None or (ht, tt) in allowed or (tt, ht) in allowed


def build_graph(triple_files: Sequence[str | Path], scope: str = "complete") -> KnowledgeGraph:
    """Read ``head_id<TAB>relation<TAB>tail_id<TAB>head_type<TAB>tail_type`` rows into a deduplicated graph.

    Rows whose entity types fall outside ``scope`` are skipped and counted.
    """
    if scope not in SCOPES:
        raise ValueError(f"unknown scope {scope!r}")
    entities: dict[str, int] = {}
    types: list[str] = []
    relations: dict[str, int] = {}
    seen: set[tuple[int, int, int]] = set()
    rows: list[tuple[int, int, int]] = []
    skipped = 0
    for path in triple_files:
        with Path(path).open(encoding="utf-8", newline="") as fh:
            for line_no, row in enumerate(csv.reader(fh, delimiter="\t"), start=1):
                if not row or (len(row) == 1 and not row[0].strip()):
                    continue
                if line_no == 1 and row[0] == "head_id":
                    continue
                if len(row) != 5:
                    raise GraphFormatError(f"{path}:{line_no}: expected 5 tab-separated columns, got {len(row)}")
                h, rel, t, ht, tt = (x.strip() for x in row)
                if not _admissible(scope, ht, tt):
                    skipped += 1
                    continue
                for ent, et in ((h, ht), (t, tt)):
                    if ent not in entities:
                        entities[ent] = len(entities)
                        types.append(et)
                    elif types[entities[ent]] != et:
                        raise GraphFormatError(f"{path}:{line_no}: entity {ent} typed both "
                                               f"{types[entities[ent]]} and {et}")
                if rel not in relations:
                    relations[rel] = len(relations)
                key = (entities[h], relations[rel], entities[t])
                if key not in seen:
                    seen.add(key)
                    rows.append(key)
    return KnowledgeGraph(list(entities), types, list(relations), np.array(rows, dtype=np.int64), scope, skipped)


def graph_from_rows(rows: Iterable[Sequence[str]], scope: str = "complete") -> KnowledgeGraph:
    """In-memory variant of :func:`build_graph` for 5-tuples."""
    import io
    import tempfile

    buf = io.StringIO()
    csv.writer(buf, delimiter="\t", lineterminator="\n").writerows(rows)
    with tempfile.NamedTemporaryFile("w", suffix=".tsv", delete=False, encoding="utf-8") as fh:
        fh.write(buf.getvalue())
        name = fh.name
    try:
        return build_graph([name], scope)
    finally:
        Path(name).unlink()


# ---------------------------------------------------------------------------
# negatives


def _rng(seed) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def sample_negatives(graph: KnowledgeGraph, triple, k: int, mode: str = "corrupt_tail",
                     seed: int | np.random.Generator = 0) -> tuple[list[tuple[int, int, int]], bool]:
    """Draw ``k`` distinct corrupted triples, none of them in ``graph``.

    Sampling is uniform over admissible corruptions (every entity substituted
    for the tail, head, or either when ``mode='both'``).  Returns the triples
    and ``True``, or all admissible corruptions and ``False`` when fewer than
    ``k`` exist.
    """
    if k < 0:
        raise ValueError("k must be non-negative")
    if mode not in ("corrupt_tail", "corrupt_head", "both"):
        raise ValueError(f"unknown corruption mode {mode!r}")
    if k == 0:
        return [], True
    rng = _rng(seed)
    h, r, t = (int(x) for x in triple)
    n = graph.n_entities
    sides = {"corrupt_tail": ("t",), "corrupt_head": ("h",), "both": ("t", "h")}[mode]
    space = n * len(sides)

    def make(code: int) -> tuple[int, int, int]:
        side, e = sides[code // n], code % n
        return (h, r, e) if side == "t" else (e, r, t)

    taken = sum(len(graph.tails.get((h, r), ())) for s in sides if s == "t") + \
        sum(len(graph.heads.get((r, t), ())) for s in sides if s == "h")
    if space - taken <= 4 * k:
        candidates = [c for c in range(space) if make(c) not in graph.triple_set]
        if len(candidates) <= k:
            return [make(c) for c in candidates], len(candidates) == k
        picks = rng.choice(len(candidates), size=k, replace=False)
        return [make(candidates[i]) for i in picks], True
    out: list[tuple[int, int, int]] = []
    chosen: set[int] = set()
    while len(out) < k:
        c = int(rng.integers(space))
        if c in chosen:
            continue
        cand = make(c)
        if cand in graph.triple_set:
            continue
        chosen.add(c)
        out.append(cand)
    return out, True


# ---------------------------------------------------------------------------
# models


@dataclass
class KGEModel:
    method: str
    dim: int
    gamma: float
    params: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def init(cls, method: str, n_entities: int, n_relations: int, dim: int, gamma: float = 6.0,
             seed: int | np.random.Generator = 907) -> "KGEModel":
        if method not in METHODS:
            raise ValueError(f"unknown KGE method {method!r}")
        rng = _rng(seed)
        if method == "rotate":
            bound = (gamma + 2.0) / dim
            params = {
                "ent_re": rng.uniform(-bound, bound, (n_entities, dim)),
                "ent_im": rng.uniform(-bound, bound, (n_entities, dim)),
                "phase": rng.uniform(0.0, TWO_PI, (n_relations, dim)),
            }
        else:
            params = {
                "ent": rng.uniform(-0.1, 0.1, (n_entities, dim)),
                "bias": np.zeros(n_entities),
                "rel_diag": rng.uniform(-1.0, 1.0, (n_relations, dim)),
                "rel_vec": rng.uniform(-0.1, 0.1, (n_relations, dim)),
            }
        return cls(method, dim, gamma, params)

    def copy(self) -> "KGEModel":
        return KGEModel(self.method, self.dim, self.gamma, {k: v.copy() for k, v in self.params.items()})

    def entity_matrix(self) -> np.ndarray:
        if self.method == "rotate":
            return np.concatenate([self.params["ent_re"], self.params["ent_im"]], axis=1)
        return self.params["ent"]

    def relation_matrix(self) -> np.ndarray:
        if self.method == "rotate":
            return self.params["phase"]
        return np.concatenate([self.params["rel_diag"], self.params["rel_vec"]], axis=1)

    def save(self, path: str | Path) -> None:
        np.savez(path, method=self.method, dim=self.dim, gamma=self.gamma, **self.params)

    @classmethod
    def load(cls, path: str | Path) -> "KGEModel":
        with np.load(path) as z:
            params = {k: z[k].copy() for k in z.files if k not in ("method", "dim", "gamma")}
            return cls(str(z["method"]), int(z["dim"]), float(z["gamma"]), params)


def score_batch(model: KGEModel, h, r, t) -> np.ndarray:
    h, r, t = (np.asarray(x, dtype=np.int64) for x in (h, r, t))
    p = model.params
    if model.method == "rotate":
        c, s = np.cos(p["phase"][r]), np.sin(p["phase"][r])
        a, b = p["ent_re"][h], p["ent_im"][h]
        x = a * c - b * s - p["ent_re"][t]
        y = a * s + b * c - p["ent_im"][t]
        return model.gamma - np.sqrt(x * x + y * y).sum(axis=-1)
    u = p["rel_diag"][r] * p["ent"][h] - p["ent"][t] - p["rel_vec"][r]
    return -(u * u).sum(axis=-1) + p["bias"][h] + p["bias"][t]


def score_triple(model: KGEModel, triple) -> float:
    h, r, t = triple
    return float(score_batch(model, [h], [r], [t])[0])


def score_grads(model: KGEModel, h, r, t) -> tuple[np.ndarray, list[tuple[str, np.ndarray, np.ndarray]]]:
    """Scores and their gradients as (param, row indices, gradient rows) triples."""
    h, r, t = (np.asarray(x, dtype=np.int64) for x in (h, r, t))
    p = model.params
    if model.method == "rotate":
        th = p["phase"][r]
        c, s = np.cos(th), np.sin(th)
        a, b = p["ent_re"][h], p["ent_im"][h]
        x = a * c - b * s - p["ent_re"][t]
        y = a * s + b * c - p["ent_im"][t]
        mod = np.sqrt(x * x + y * y)
        score = model.gamma - mod.sum(axis=-1)
        safe = np.where(mod > 1e-12, mod, 1.0)
        ux = np.where(mod > 1e-12, x / safe, 0.0)
        uy = np.where(mod > 1e-12, y / safe, 0.0)
        grads = [
            ("ent_re", h, -(ux * c + uy * s)),
            ("ent_im", h, -(-ux * s + uy * c)),
            ("phase", r, -(ux * (-a * s - b * c) + uy * (a * c - b * s))),
            ("ent_re", t, ux),
            ("ent_im", t, uy),
        ]
        return score, grads
    e_h, e_t = p["ent"][h], p["ent"][t]
    rd, rv = p["rel_diag"][r], p["rel_vec"][r]
    u = rd * e_h - e_t - rv
    score = -(u * u).sum(axis=-1) + p["bias"][h] + p["bias"][t]
    ones = np.ones(len(h))
    grads = [
        ("ent", h, -2 * u * rd),
        ("ent", t, 2 * u),
        ("rel_diag", r, -2 * u * e_h),
        ("rel_vec", r, 2 * u),
        ("bias", h, ones),
        ("bias", t, ones),
    ]
    return score, grads


def _softplus(x):
    return np.logaddexp(0.0, x)


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


@dataclass(frozen=True)
class KGEHyperparams:
    method: str = "rotate"
    dim: int = 32
    lr: float = 0.001
    batch_size: int = 16
    epochs: int = 100
    negatives: int = 8
    gamma: float = 6.0


@dataclass
class KGETrainResult:
    model: KGEModel
    losses: list[float]


def _batch_negatives(graph: KnowledgeGraph, pos: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """Filtered uniform corruptions of head or tail, k per positive (with replacement across draws)."""
    n = graph.n_entities
    out = np.repeat(pos, k, axis=0)
    pending = np.arange(len(out))
    for _ in range(100):
        if not len(pending):
            break
        side = rng.integers(2, size=len(pending))
        ents = rng.integers(n, size=len(pending))
        out[pending, 0] = np.where(side == 0, ents, np.repeat(pos, k, axis=0)[pending, 0])
        out[pending, 2] = np.where(side == 1, ents, np.repeat(pos, k, axis=0)[pending, 2])
        bad = np.array([tuple(row) in graph.triple_set for row in out[pending]], dtype=bool)
        pending = pending[bad]
    return out


def train_kge(graph: KnowledgeGraph, hp: KGEHyperparams = KGEHyperparams(), seed: int = 907) -> KGETrainResult:
    """SGD on the negative-sampling loss; returns the model and mean loss per epoch."""
    if len(graph) == 0:
        raise ValueError("cannot train on an empty graph")
    rng = np.random.default_rng(seed)
    model = KGEModel.init(hp.method, graph.n_entities, graph.n_relations, hp.dim, hp.gamma, rng)
    losses: list[float] = []
    m = len(graph)
    for epoch in range(hp.epochs):
        order = rng.permutation(m)
        total = 0.0
        for start in range(0, m, hp.batch_size):
            pos = graph.triples[order[start:start + hp.batch_size]]
            b = len(pos)
            neg = _batch_negatives(graph, pos, hp.negatives, rng)
            s_pos, g_pos = score_grads(model, pos[:, 0], pos[:, 1], pos[:, 2])
            s_neg, g_neg = score_grads(model, neg[:, 0], neg[:, 1], neg[:, 2])
            loss = _softplus(-s_pos).sum() + _softplus(s_neg).sum() / hp.negatives
            if not np.isfinite(loss):
                raise TrainingDivergedError(f"non-finite loss at epoch {epoch + 1}, batch starting {start}")
            total += loss
            w_pos = -_sigmoid(-s_pos) / b
            w_neg = _sigmoid(s_neg) / (hp.negatives * b)
            updates: dict[str, np.ndarray] = {}
            for weights, grads in ((w_pos, g_pos), (w_neg, g_neg)):
                for name, idx, g in grads:
                    acc = updates.setdefault(name, np.zeros_like(model.params[name]))
                    wg = g * (weights[:, None] if g.ndim == 2 else weights)
                    np.add.at(acc, idx, wg)
            for name, acc in updates.items():
                model.params[name] -= hp.lr * acc
            if hp.method == "rotate":
                np.mod(model.params["phase"], TWO_PI, out=model.params["phase"])
        losses.append(total / m)
        if not np.isfinite(losses[-1]):
            raise TrainingDivergedError(f"non-finite epoch loss at epoch {epoch + 1}")
    return KGETrainResult(model, losses)


# ---------------------------------------------------------------------------
# evaluation


@dataclass(frozen=True)
class LinkPredictionResult:
    mrr: float
    hits: dict
    n_queries: int
    filtered: bool


def _all_tail_scores(model: KGEModel, h: int, r: int) -> np.ndarray:
    n = model.entity_matrix().shape[0]
    return score_batch(model, np.full(n, h), np.full(n, r), np.arange(n))


def _all_head_scores(model: KGEModel, r: int, t: int) -> np.ndarray:
    n = model.entity_matrix().shape[0]
    return score_batch(model, np.arange(n), np.full(n, r), np.full(n, t))


def rank_of(scores: np.ndarray, target: int, exclude: Iterable[int] = ()) -> float:
    """1-based rank of ``target``; ties share the mean rank; ``exclude`` entries are removed."""
    mask = np.ones(len(scores), dtype=bool)
    for e in exclude:
        mask[e] = False
    mask[target] = True
    s = scores[mask]
    ts = scores[target]
    greater = int((s > ts).sum())
    ties = int((s == ts).sum()) - 1
    return 1.0 + greater + ties / 2.0


def metrics_from_ranks(ranks: Sequence[float], ks: Iterable[int] = (1, 3, 10), filtered: bool = True) -> LinkPredictionResult:
    ranks = np.asarray(ranks, dtype=np.float64)
    if len(ranks) == 0:
        return LinkPredictionResult(0.0, {k: 0.0 for k in ks}, 0, filtered)
    return LinkPredictionResult(float(np.mean(1.0 / ranks)), {k: float(np.mean(ranks <= k)) for k in ks},
                                len(ranks), filtered)


def _queries(graph: KnowledgeGraph, test_triples, sides: str):
    for h, r, t in np.asarray(test_triples, dtype=np.int64).reshape(-1, 3):
        h, r, t = int(h), int(r), int(t)
        if sides in ("tail", "both"):
            yield "tail", h, r, t, graph.tails.get((h, r), set()) - {t}
        if sides in ("head", "both"):
            yield "head", h, r, t, graph.heads.get((r, t), set()) - {h}


def evaluate_link_prediction(model: KGEModel, test_triples, graph: KnowledgeGraph, ks: Iterable[int] = (1, 3, 10),
                             filtered: bool = True, sides: str = "both") -> LinkPredictionResult:
    """Rank each true answer among all entities; in the filtered setting other known answers are removed."""
    ks = tuple(sorted(set(ks)))
    ranks = []
    for side, h, r, t, others in _queries(graph, test_triples, sides):
        if side == "tail":
            ranks.append(rank_of(_all_tail_scores(model, h, r), t, others if filtered else ()))
        else:
            ranks.append(rank_of(_all_head_scores(model, r, t), h, others if filtered else ()))
    return metrics_from_ranks(ranks, ks, filtered)


def random_ranker_mrr(test_triples, graph: KnowledgeGraph, filtered: bool = True, sides: str = "both") -> float:
    """Expected MRR of a uniformly random ranking: mean over queries of H(c)/c for c candidates."""
    vals = []
    for _, h, r, t, others in _queries(graph, test_triples, sides):
        c = graph.n_entities - (len(others) if filtered else 0)
        vals.append(sum(1.0 / i for i in range(1, c + 1)) / c)
    return float(np.mean(vals)) if vals else 0.0


# ---------------------------------------------------------------------------
# export


def entity_store(model: KGEModel, graph: KnowledgeGraph) -> EmbeddingStore:
    """RotatE entities export as [real ; imaginary] (2k values), MuRE entities as k values."""
    return EmbeddingStore(graph.entities, model.entity_matrix(), kind="kg", scheme=f"{model.method}-{graph.scope}")


def export_model(model: KGEModel, graph: KnowledgeGraph, entity_path: str | Path,
                 relation_path: str | Path | None = None) -> None:
    entity_store(model, graph).save(entity_path)
    if relation_path is not None:
        EmbeddingStore(graph.relations, model.relation_matrix(), kind="kg").save(relation_path)
