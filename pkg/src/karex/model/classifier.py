"""Relation classifier: text encoding, optional side-information fusion, sigmoid head."""

from __future__ import annotations

from typing import Mapping, Sequence

import numpy as np
import torch
from torch import nn

VARIANTS = ("baseline", "text", "embedding", "structure")


class FusionConfigError(ValueError):
    pass


class FrozenTable(nn.Module):
    """Read-only entity table; unknown identifiers map to a zero row.

    Vectors live in a buffer, so they never reach an optimizer.
    """

    def __init__(self, ids: Sequence[str], vectors, dtype=torch.float32):
        super().__init__()
        vectors = torch.tensor(np.asarray(vectors), dtype=dtype)
        if vectors.ndim != 2 or vectors.shape[0] != len(ids):
            raise FusionConfigError("table needs one row per identifier")
        self.index = {k: i for i, k in enumerate(ids)}
        self.register_buffer("weight", torch.cat([vectors, torch.zeros(1, vectors.shape[1], dtype=dtype)]))

    @property
    def dim(self) -> int:
        return self.weight.shape[1]

    def forward(self, kb_ids: Sequence[str | None]) -> torch.Tensor:
        missing = self.weight.shape[0] - 1
        rows = torch.tensor([self.index.get(k, missing) if k is not None else missing for k in kb_ids],
                            dtype=torch.long)
        return self.weight[rows]

    @classmethod
    def from_store(cls, store) -> "FrozenTable":
        return cls(store.ids, store.vectors)

    @classmethod
    def from_fingerprints(cls, fps: Mapping[str, object]) -> "FrozenTable":
        ids = list(fps)
        if not ids:
            raise FusionConfigError("empty fingerprint table")
        return cls(ids, np.stack([fps[k].bits for k in ids]).astype(np.float32))


class FusionMLP(nn.Module):
    """Two-layer perceptron (hidden 100, output 100) with dropout between the layers."""

    def __init__(self, in_dim: int, hidden: int = 100, out: int = 100, dropout: float = 0.2):
        super().__init__()
        self.net = nn.Sequential(nn.Linear(in_dim, hidden), nn.ReLU(), nn.Dropout(dropout), nn.Linear(hidden, out))
        self.out_dim = out

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.net(x)


class TableSide(nn.Module):
    """Frozen per-entity vectors for the selected pair sides, fed through a :class:`FusionMLP`.

    ``sides`` selects which entities contribute: ``both`` concatenates head
    and tail (entity embeddings, drug-drug structures), ``head``/``tail``
    uses one entity (the chemical of a chemical-gene pair).
    """

    def __init__(self, table: FrozenTable, sides: str = "both", hidden: int = 100, out: int = 100,
                 dropout: float = 0.2):
        super().__init__()
        if sides not in ("head", "tail", "both"):
            raise FusionConfigError(f"unknown side selection {sides!r}")
        self.table = table
        self.sides = sides
        self.in_dim = table.dim * (2 if sides == "both" else 1)
        self.mlp = FusionMLP(self.in_dim, hidden, out, dropout)
        self.out_dim = out

    def raw(self, head_kbs, tail_kbs) -> torch.Tensor:
        parts = []
        if self.sides in ("head", "both"):
            parts.append(self.table(head_kbs))
        if self.sides in ("tail", "both"):
            parts.append(self.table(tail_kbs))
        return torch.cat(parts, dim=-1)

    def forward(self, head_kbs, tail_kbs) -> torch.Tensor:
        return self.mlp(self.raw(head_kbs, tail_kbs))


class CompoundSide(nn.Module):
    """Compound-encoder output for the chemical side(s); concatenated without an MLP."""

    def __init__(self, encoder: nn.Module, smiles: Mapping[str, str], sides: str = "head"):
        super().__init__()
        if sides not in ("head", "tail", "both"):
            raise FusionConfigError(f"unknown side selection {sides!r}")
        self.encoder = encoder
        self.smiles = dict(smiles)
        self.sides = sides
        self.out_dim = encoder.output_width * (2 if sides == "both" else 1)

    def forward(self, head_kbs, tail_kbs) -> torch.Tensor:
        parts = []
        for use, ids in (("head", head_kbs), ("tail", tail_kbs)):
            if self.sides in (use, "both"):
                parts.append(self.encoder([self.smiles.get(k) if k else None for k in ids]))
        return torch.cat(parts, dim=-1)


class RelationClassifier(nn.Module):
    """``sigmoid(W [h_cls ; side] + b)`` over the label schema.

    ``baseline`` and ``text`` variants use the encoder output alone (text
    augmentation happens while rendering); ``embedding`` and ``structure``
    require a side module.
    """

    def __init__(self, encoder: nn.Module, num_labels: int, variant: str = "baseline",
                 side: nn.Module | None = None):
        super().__init__()
        if variant not in VARIANTS:
            raise FusionConfigError(f"unknown variant {variant!r}")
        needs_side = variant in ("embedding", "structure")
        if needs_side != (side is not None):
            raise FusionConfigError(f"variant {variant!r} {'requires' if needs_side else 'takes no'} side input")
        self.encoder = encoder
        self.variant = variant
        self.side = side
        self.num_labels = num_labels
        self.head_in = encoder.hidden_size + (side.out_dim if side is not None else 0)
        self.head = nn.Linear(self.head_in, num_labels)

    def fuse(self, enc: torch.Tensor, head_kbs=None, tail_kbs=None) -> torch.Tensor:
        """Logits from precomputed sentence encodings."""
        if enc.shape[-1] != self.encoder.hidden_size:
            raise FusionConfigError(f"encoding width {enc.shape[-1]} != encoder width {self.encoder.hidden_size}")
        if self.side is not None:
            enc = torch.cat([enc, self.side(head_kbs, tail_kbs).to(enc.dtype)], dim=-1)
        return self.head(enc)

    def forward(self, tokens: Sequence[Sequence[str]], head_kbs=None, tail_kbs=None) -> torch.Tensor:
        return self.fuse(self.encoder(tokens), head_kbs, tail_kbs)

    def side_parameters(self) -> list[nn.Parameter]:
        return list(self.side.parameters()) if self.side is not None else []

    def base_parameters(self) -> list[nn.Parameter]:
        side = {id(p) for p in self.side_parameters()}
        return [p for p in self.parameters() if id(p) not in side]


def fuse_and_classify(model: RelationClassifier, enc: torch.Tensor, head_kbs=None, tail_kbs=None) -> torch.Tensor:
    """Label probabilities for precomputed encodings ``enc`` of shape (B, H)."""
    return torch.sigmoid(model.fuse(enc, head_kbs, tail_kbs))
