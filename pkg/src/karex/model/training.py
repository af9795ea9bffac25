"""Training loop, loss, learning-rate schedule, prediction and checkpoints."""

from __future__ import annotations

import copy
import hashlib
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
from torch.nn import functional as F

from ..evaluation import micro_prf
from ..instances import RenderedInstance
from .classifier import RelationClassifier

logger = logging.getLogger(__name__)

LR_GRID = (5e-6, 3e-5, 5e-5)
BATCH_GRID = (8, 16, 32)
MAX_LENGTH_GRID = (256, 384, 512)
CONTEXT_GRID = (0, 1)
PROMPT_GRID = (True, False)
SIDE_LR_GRID = (0.001, 0.0001, 0.0005)
WARMUP_FRACTION = 0.1
BCE_EPS = 1e-7


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 3e-5
    batch_size: int = 16
    max_length: int = 384
    context_sentences: int = 0
    prompt: bool = False
    variant: str = "baseline"
    side_lr: float = 0.001
    epochs: int = 10
    patience: int = 3
    threshold: float = 0.5
    seed: int = 907
    override: bool = False  # permit values outside the declared grids

    def __post_init__(self):
        if self.override:
            return
        checks = {
            "lr": LR_GRID, "batch_size": BATCH_GRID, "max_length": MAX_LENGTH_GRID,
            "context_sentences": CONTEXT_GRID, "prompt": PROMPT_GRID, "side_lr": SIDE_LR_GRID,
        }
        for name, grid in checks.items():
            if getattr(self, name) not in grid:
                raise ValueError(f"{name}={getattr(self, name)!r} outside grid {grid}; set override=True")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


def lr_schedule(step: float, total_steps: int, target_lr: float) -> float:
    """Linear warmup over the first 10% of steps, then linear decay to zero."""
    if total_steps <= 0:
        raise ValueError("total_steps must be positive")
    if not 0 <= step <= total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    warmup = WARMUP_FRACTION * total_steps
    if step < warmup:
        return target_lr * step / warmup
    return target_lr * (total_steps - step) / (total_steps - warmup)


def bce_loss(probs, labels, eps: float = BCE_EPS):
    """Mean binary cross-entropy over labels, probabilities clamped to [eps, 1-eps].

    Accepts torch tensors (differentiable) or array-likes (returns a float).
    """
    if isinstance(probs, torch.Tensor):
        labels = torch.as_tensor(labels, dtype=probs.dtype)
        p = probs.clamp(eps, 1 - eps)
        return -(labels * torch.log(p) + (1 - labels) * torch.log1p(-p)).mean()
    p = np.clip(np.asarray(probs, dtype=np.float64), eps, 1 - eps)
    y = np.asarray(labels, dtype=np.float64)
    return float(np.mean(-(y * np.log(p) + (1 - y) * np.log1p(-p))))


@dataclass
class EpochMetrics:
    epoch: int
    train_loss: float
    val_f1: float
    val_precision: float
    val_recall: float
    seconds: float


@dataclass
class TrainedModel:
    model: RelationClassifier
    config: TrainConfig
    history: list[EpochMetrics] = field(default_factory=list)
    best_epoch: int = 0
    best_val_f1: float = 0.0


@dataclass(frozen=True)
class Prediction:
    labels: frozenset
    probs: tuple


def _batches(n: int, size: int, generator: torch.Generator | None):
    order = torch.randperm(n, generator=generator).tolist() if generator is not None else list(range(n))
    for i in range(0, n, size):
        yield order[i:i + size]


def _forward(model: RelationClassifier, batch: Sequence[RenderedInstance]) -> torch.Tensor:
    return model([x.tokens for x in batch], [x.head_kb for x in batch], [x.tail_kb for x in batch])


def predict_proba(model: RelationClassifier, instances: Sequence[RenderedInstance],
                  batch_size: int = 64) -> np.ndarray:
    was_training = model.training
    model.eval()
    out = []
    with torch.no_grad():
        for i in range(0, len(instances), batch_size):
            out.append(torch.sigmoid(_forward(model, instances[i:i + batch_size])).double().numpy())
    model.train(was_training)
    if not out:
        return np.zeros((0, model.num_labels))
    return np.concatenate(out)


def predict(model: RelationClassifier, instances: Sequence[RenderedInstance], threshold: float = 0.5,
            batch_size: int = 64) -> list[Prediction]:
    """Label i is emitted iff its probability is at least ``threshold``."""
    if not 0 < threshold < 1:
        raise ValueError("threshold must lie in (0, 1)")
    probs = predict_proba(model, instances, batch_size)
    return threshold_predictions(probs, threshold)


def threshold_predictions(probs, threshold: float = 0.5) -> list[Prediction]:
    return [Prediction(frozenset(int(i) for i in np.flatnonzero(row >= threshold)), tuple(float(p) for p in row))
            for row in np.asarray(probs)]


def evaluate_instances(model: RelationClassifier, instances: Sequence[RenderedInstance], threshold: float = 0.5):
    preds = predict(model, instances, threshold)
    pmap = {i: p.labels for i, p in enumerate(preds)}
    gmap = {i: frozenset(j for j, b in enumerate(x.labels) if b) for i, x in enumerate(instances)}
    return micro_prf(pmap, gmap)


def train_model(train_set: Sequence[RenderedInstance], val_set: Sequence[RenderedInstance],
                config: TrainConfig, model: RelationClassifier) -> TrainedModel:
    """Fine-tune ``model`` in place with Adam, warmup/decay and early stopping on validation micro-F1.

    The encoder and head use ``config.lr``, the side module ``config.side_lr``.
    Frozen side tables are buffers and never change.  The returned model holds
    the best validation checkpoint.
    """
    if not train_set:
        raise TrainingError("empty training set")
    torch.manual_seed(config.seed)
    gen = torch.Generator().manual_seed(config.seed)
    steps_per_epoch = math.ceil(len(train_set) / config.batch_size)
    total = steps_per_epoch * config.epochs
    groups = [{"params": [p for p in model.base_parameters() if p.requires_grad], "lr": config.lr}]
    side_params = [p for p in model.side_parameters() if p.requires_grad]
    if side_params:
        groups.append({"params": side_params, "lr": config.side_lr})
    optim = torch.optim.Adam(groups)
    sched = torch.optim.lr_scheduler.LambdaLR(optim, lambda step: lr_schedule(min(step, total), total, 1.0))

    result = TrainedModel(model, config)
    best_state = copy.deepcopy(model.state_dict())
    best_f1, stale = -1.0, 0
    for epoch in range(1, config.epochs + 1):
        t0 = time.perf_counter()
        model.train()
        losses = []
        for idx in _batches(len(train_set), config.batch_size, gen):
            batch = [train_set[i] for i in idx]
            logits = _forward(model, batch)
            target = torch.tensor([x.labels for x in batch], dtype=logits.dtype)
            loss = F.binary_cross_entropy_with_logits(logits, target)
            if not torch.isfinite(loss):
                raise TrainingError(f"non-finite loss at epoch {epoch}: {loss.item()}")
            optim.zero_grad()
            loss.backward()
            optim.step()
            sched.step()
            losses.append(loss.item())
        val = evaluate_instances(model, val_set, config.threshold) if val_set else None
        val_f1 = val.f1 if val else 0.0
        m = EpochMetrics(epoch, float(np.mean(losses)), val_f1, val.precision if val else 0.0,
                         val.recall if val else 0.0, time.perf_counter() - t0)
        result.history.append(m)
        logger.info("epoch %d loss %.4f val-F1 %.4f", epoch, m.train_loss, val_f1)
        if val_f1 > best_f1:
            best_f1, stale = val_f1, 0
            best_state = copy.deepcopy(model.state_dict())
            result.best_epoch = epoch
        else:
            stale += 1
            if stale >= config.patience:
                break
    model.load_state_dict(best_state)
    result.best_val_f1 = max(best_f1, 0.0)
    return result


# ---------------------------------------------------------------------------
# checkpoints


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), default=str)


def tensor_fingerprint(t: torch.Tensor) -> str:
    return hashlib.sha256(t.detach().cpu().contiguous().numpy().tobytes()).hexdigest()


def save_checkpoint(trained: TrainedModel, directory: str | Path) -> Path:
    """Write config snapshot, head/side parameters, side-table hash and per-epoch metrics."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    model = trained.model
    (directory / "config.json").write_text(canonical_json(trained.config.to_dict()))
    state = {"head": model.head.state_dict()}
    side_hash = None
    if model.side is not None:
        state["side"] = {k: v for k, v in model.side.state_dict().items() if not k.endswith("table.weight")}
        table = getattr(model.side, "table", None)
        if table is not None:
            side_hash = tensor_fingerprint(table.weight)
    torch.save(state, directory / "head.pt")
    torch.save(model.encoder.state_dict(), directory / "encoder.pt")
    (directory / "side_store.json").write_text(canonical_json({"sha256": side_hash}))
    with (directory / "metrics.jsonl").open("w") as fh:
        for m in trained.history:
            fh.write(canonical_json(asdict(m)) + "\n")
    return directory


def load_checkpoint(model: RelationClassifier, directory: str | Path) -> RelationClassifier:
    """Restore parameters saved by :func:`save_checkpoint` into a model of the same shape."""
    directory = Path(directory)
    state = torch.load(directory / "head.pt")
    model.head.load_state_dict(state["head"])
    if "side" in state:
        model.side.load_state_dict(state["side"], strict=False)
        expected = json.loads((directory / "side_store.json").read_text())["sha256"]
        table = getattr(model.side, "table", None)
        if expected and table is not None and tensor_fingerprint(table.weight) != expected:
            raise TrainingError("side table differs from the one used for training")
    model.encoder.load_state_dict(torch.load(directory / "encoder.pt"))
    return model
