"""Compound-encoder interface: SMILES tokens in, aggregation-token vector out."""

from __future__ import annotations

import re
from typing import Mapping, Sequence

import torch
from torch import nn

from ..model.encoders import TransformerCore, pad_batch

# atom-level SMILES tokenisation (bracket atoms, two-letter halogens, ring labels, bonds)
SMILES_TOKEN_RE = re.compile(r"(\[[^\]]+\]|Br|Cl|%\d{2}|[BCNOPSFIbcnops]|[=#\-:\(\)\.\\/@+]|\d)")

COMPOUND_SPECIALS = ("[PAD]", "[UNK]", "[CLS]")
BASE_SMILES_VOCAB = ("B", "C", "N", "O", "P", "S", "F", "I", "Cl", "Br", "b", "c", "n", "o", "p", "s",
                     "=", "#", "-", ":", "(", ")", ".", *[str(d) for d in range(10)])


class CompoundEncodingError(ValueError):
    pass


def tokenize_smiles(smiles: str) -> list[str]:
    tokens = SMILES_TOKEN_RE.findall(smiles)
    if "".join(tokens) != smiles:
        raise CompoundEncodingError(f"cannot tokenize SMILES {smiles!r}")
    return tokens


class ToyCompoundEncoder(nn.Module):
    """Randomly initialised SMILES transformer standing in for a pretrained compound model.

    Bracket atoms and ``%nn`` labels outside the base vocabulary map to ``[UNK]``.
    """

    def __init__(self, width: int = 32, layers: int = 2, heads: int = 4, max_length: int = 256,
                 extra_tokens: Sequence[str] = ()):
        super().__init__()
        self.itos = list(COMPOUND_SPECIALS) + list(BASE_SMILES_VOCAB) + [t for t in extra_tokens]
        self.stoi = {t: i for i, t in enumerate(self.itos)}
        self.output_width = width
        self.max_length = max_length
        self.core = TransformerCore(len(self.itos), width, layers, heads, max_length=max_length, pad_id=0)

    def token_ids(self, smiles: str) -> list[int]:
        ids = [self.stoi["[CLS]"]] + [self.stoi.get(t, self.stoi["[UNK]"]) for t in tokenize_smiles(smiles)]
        return ids[: self.max_length]

    def forward(self, smiles_batch: Sequence[str | None]) -> torch.Tensor:
        """Encode a batch; ``None`` entries (no SMILES known) give zero rows."""
        present = [i for i, s in enumerate(smiles_batch) if s]
        out = torch.zeros(len(smiles_batch), self.output_width,
                          dtype=self.core.tok.weight.dtype)
        if present:
            ids = pad_batch([self.token_ids(smiles_batch[i]) for i in present], 0)
            cls = self.core(ids)[:, 0]
            out = out.index_put((torch.tensor(present),), cls)
        return out


def encode_compound(encoder: nn.Module, smiles: str | None) -> torch.Tensor:
    """Evaluation-mode aggregation-token vector of one compound (zeros if ``smiles`` is None)."""
    was_training = encoder.training
    encoder.eval()
    with torch.no_grad():
        vec = encoder([smiles])[0]
    encoder.train(was_training)
    return vec


def smiles_lookup(table: Mapping[str, str], kb_ids: Sequence[str | None]) -> list[str | None]:
    return [table.get(k) if k is not None else None for k in kb_ids]
