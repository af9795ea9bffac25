"""Text encoders exposing the aggregation-token representation.

Any module with ``tokenize(text)``, ``hidden_size``, ``max_length`` and a
``forward(batch)`` mapping rendered token sequences to ``(B, hidden_size)``
vectors can drive the classifier.  :class:`TinyTransformerEncoder` is a small
randomly initialised encoder for tests and desk-scale runs;
:class:`HFEncoder` wraps a Hugging Face checkpoint.
"""

from __future__ import annotations

from typing import Iterable, Sequence

import torch
from torch import nn

from ..instances import CLS, MARKERS, PAD, SEP, SPECIAL_TOKENS, UNK, simple_tokenize


class EncoderInputError(ValueError):
    pass


class Vocabulary:
    def __init__(self, tokens: Iterable[str] = (), specials: Sequence[str] = SPECIAL_TOKENS):
        self.itos: list[str] = []
        self.stoi: dict[str, int] = {}
        for t in list(specials) + list(tokens):
            self.add(t)

    def add(self, token: str) -> int:
        if token not in self.stoi:
            self.stoi[token] = len(self.itos)
            self.itos.append(token)
        return self.stoi[token]

    def __len__(self) -> int:
        return len(self.itos)

    def __contains__(self, token) -> bool:
        return token in self.stoi

    def ids(self, tokens: Sequence[str]) -> list[int]:
        unk = self.stoi[UNK]
        return [self.stoi.get(t, unk) for t in tokens]

    @classmethod
    def build(cls, sequences: Iterable[Sequence[str]], min_count: int = 1) -> "Vocabulary":
        counts: dict[str, int] = {}
        for seq in sequences:
            for t in seq:
                counts[t] = counts.get(t, 0) + 1
        return cls(sorted(t for t, c in counts.items() if c >= min_count))

    def to_list(self) -> list[str]:
        return list(self.itos)


class TransformerCore(nn.Module):
    """Token + learned position embeddings followed by a post-norm transformer stack."""

    def __init__(self, vocab_size: int, hidden: int = 64, layers: int = 2, heads: int = 4,
                 ff: int | None = None, max_length: int = 512, dropout: float = 0.0, pad_id: int = 0):
        super().__init__()
        self.pad_id = pad_id
        self.max_length = max_length
        self.tok = nn.Embedding(vocab_size, hidden, padding_idx=pad_id)
        self.pos = nn.Embedding(max_length, hidden)
        self.norm = nn.LayerNorm(hidden)
        layer = nn.TransformerEncoderLayer(hidden, heads, ff or 2 * hidden, dropout=dropout,
                                           batch_first=True)
        self.stack = nn.TransformerEncoder(layer, layers, enable_nested_tensor=False)

    def forward(self, ids: torch.Tensor) -> torch.Tensor:
        """``ids`` (B, T) -> hidden states (B, T, H)."""
        if ids.shape[1] > self.max_length:
            raise EncoderInputError(f"sequence length {ids.shape[1]} exceeds encoder maximum {self.max_length}")
        positions = torch.arange(ids.shape[1], device=ids.device)
        x = self.norm(self.tok(ids) + self.pos(positions)[None])
        return self.stack(x, src_key_padding_mask=ids.eq(self.pad_id))


def pad_batch(batch: Sequence[Sequence[int]], pad_id: int) -> torch.Tensor:
    width = max(len(x) for x in batch)
    out = torch.full((len(batch), width), pad_id, dtype=torch.long)
    for i, x in enumerate(batch):
        out[i, :len(x)] = torch.as_tensor(x, dtype=torch.long)
    return out


class TinyTransformerEncoder(nn.Module):
    """Small word-level transformer whose position-0 output is the sentence encoding."""

    def __init__(self, vocab: Vocabulary, hidden: int = 64, layers: int = 2, heads: int = 4,
                 max_length: int = 512, dropout: float = 0.0):
        super().__init__()
        self.vocab = vocab
        self.hidden_size = hidden
        self.max_length = max_length
        self.core = TransformerCore(len(vocab), hidden, layers, heads, max_length=max_length,
                                    dropout=dropout, pad_id=vocab.stoi[PAD])

    def tokenize(self, text: str) -> list[str]:
        return simple_tokenize(text)

    def forward(self, batch: Sequence[Sequence[str]], return_sequence: bool = False):
        if not batch:
            return torch.zeros(0, self.hidden_size)
        for seq in batch:
            if not seq or seq[0] != CLS:
                raise EncoderInputError("rendered sequences must start with the aggregation token")
        ids = pad_batch([self.vocab.ids(seq) for seq in batch], self.vocab.stoi[PAD])
        hidden = self.core(ids)
        if return_sequence:
            return hidden[:, 0], hidden
        return hidden[:, 0]


class HFEncoder(nn.Module):
    """Adapter for a Hugging Face encoder checkpoint.

    Marker tokens are registered as additional special tokens and the token
    embedding matrix is resized accordingly.  The toolkit's ``[CLS]``/``[SEP]``
    are mapped onto the checkpoint's own aggregation and separator tokens.
    """

    def __init__(self, model, tokenizer, max_length: int | None = None):
        super().__init__()
        tokenizer.add_special_tokens({"additional_special_tokens": list(MARKERS)})
        model.resize_token_embeddings(len(tokenizer))
        self.model = model
        self.tokenizer = tokenizer
        self.hidden_size = model.config.hidden_size
        self.max_length = max_length or getattr(model.config, "max_position_embeddings", 512)
        self._map = {CLS: tokenizer.cls_token, SEP: tokenizer.sep_token}

    @classmethod
    def from_pretrained(cls, name_or_path: str, max_length: int | None = None) -> "HFEncoder":
        from transformers import AutoModel, AutoTokenizer

        return cls(AutoModel.from_pretrained(name_or_path), AutoTokenizer.from_pretrained(name_or_path),
                   max_length)

    def tokenize(self, text: str) -> list[str]:
        return self.tokenizer.tokenize(text)

    def forward(self, batch: Sequence[Sequence[str]], return_sequence: bool = False):
        ids = [self.tokenizer.convert_tokens_to_ids([self._map.get(t, t) for t in seq]) for seq in batch]
        if any(len(x) > self.max_length for x in ids):
            raise EncoderInputError("sequence exceeds encoder maximum; render with a smaller max_length")
        pad = self.tokenizer.pad_token_id or 0
        input_ids = pad_batch(ids, pad)
        mask = torch.zeros_like(input_ids)
        for i, x in enumerate(ids):
            mask[i, :len(x)] = 1
        out = self.model(input_ids=input_ids, attention_mask=mask).last_hidden_state
        if return_sequence:
            return out[:, 0], out
        return out[:, 0]


def encode_text(encoder: nn.Module, rendered: Sequence[str] | Sequence[Sequence[str]]) -> torch.Tensor:
    """Aggregation-token encoding(s) in evaluation mode.

    A single token sequence gives a ``(H,)`` vector, a batch ``(B, H)``.
    """
    single = bool(rendered) and isinstance(rendered[0], str)
    batch = [list(rendered)] if single else [list(x) for x in rendered]
    was_training = encoder.training
    encoder.eval()
    with torch.no_grad():
        out = encoder(batch)
    encoder.train(was_training)
    return out[0] if single else out
