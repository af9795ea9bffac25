"""Offline knowledge stores: entity descriptions and pre-trained entity embeddings.

Both stores are snapshot files loaded once and read-only afterwards.  Lookups
are total: unknown identifiers yield an empty description or a zero vector so
that augmented runs keep exactly the baseline instance set.
"""

from __future__ import annotations

import csv
import hashlib
from dataclasses import dataclass, field
from pathlib import Path
from types import MappingProxyType
from typing import Iterable, Mapping

import numpy as np


class StoreFormatError(ValueError):
    pass


def _unescape(text: str) -> str:
    return text.replace("\\t", "\t").replace("\\n", "\n").replace("\\\\", "\\")


def _escape(text: str) -> str:
    return text.replace("\\", "\\\\").replace("\t", "\\t").replace("\n", "\\n")


@dataclass(frozen=True)
class Coverage:
    found: int
    total: int

    @property
    def ratio(self) -> float:
        return self.found / self.total if self.total else 0.0


@dataclass(frozen=True)
class DescriptionStore:
    scheme: str
    entries: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "entries", MappingProxyType(dict(self.entries)))

    def __len__(self) -> int:
        return len(self.entries)

    def __contains__(self, kb_id) -> bool:
        return kb_id in self.entries

    def coverage(self, kb_ids: Iterable[str | None]) -> Coverage:
        """How many of ``kb_ids`` (one per mention, repeats counted) have a non-empty text."""
        ids = list(kb_ids)
        return Coverage(sum(1 for k in ids if k is not None and self.entries.get(k)), len(ids))

    @classmethod
    def from_tsv(cls, path: str | Path, scheme: str = "") -> "DescriptionStore":
        entries: dict[str, str] = {}
        with Path(path).open(encoding="utf-8") as fh:
            for line_no, line in enumerate(fh, start=1):
                line = line.rstrip("\n")
                if not line:
                    continue
                kb_id, sep, text = line.partition("\t")
                if not sep:
                    raise StoreFormatError(f"{path}:{line_no}: expected 'kb_id<TAB>description'")
                if line_no == 1 and kb_id == "kb_id":
                    continue
                entries[kb_id] = _unescape(text)
        return cls(scheme or Path(path).stem, entries)

    def to_tsv(self, path: str | Path) -> None:
        with Path(path).open("w", encoding="utf-8") as fh:
            for k, v in self.entries.items():
                fh.write(f"{k}\t{_escape(v)}\n")


def lookup_description(store: DescriptionStore | None, kb_id: str | None) -> str:
    """Stored description for ``kb_id``, or ``""`` when there is none."""
    if store is None or kb_id is None:
        return ""
    return store.entries.get(kb_id, "")


class EmbeddingStore:
    """Frozen table of entity vectors sharing one dimension.

    ``kind`` is ``"kg"`` for knowledge-graph embeddings and ``"literature"``
    for text-derived ones.  The matrix is marked read-only.
    """

    def __init__(self, ids: Iterable[str], vectors: np.ndarray, kind: str = "kg", scheme: str = ""):
        ids = list(ids)
        vectors = np.array(vectors, dtype=np.float64, copy=True)
        if vectors.ndim != 2 or vectors.shape[0] != len(ids):
            raise StoreFormatError(f"expected a ({len(ids)}, d) matrix, got shape {vectors.shape}")
        if not np.all(np.isfinite(vectors)):
            raise StoreFormatError("embedding store contains non-finite values")
        if len(set(ids)) != len(ids):
            raise StoreFormatError("duplicate identifiers in embedding store")
        if kind not in ("kg", "literature"):
            raise ValueError(f"unknown embedding kind {kind!r}")
        vectors.setflags(write=False)
        self.ids = tuple(ids)
        self.index = {k: i for i, k in enumerate(self.ids)}
        self.vectors = vectors
        self.kind = kind
        self.scheme = scheme

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def __len__(self) -> int:
        return len(self.ids)

    def __contains__(self, kb_id) -> bool:
        return kb_id in self.index

    def get(self, kb_id: str | None) -> np.ndarray:
        if kb_id is None or kb_id not in self.index:
            return np.zeros(self.dim)
        return self.vectors[self.index[kb_id]]

    def content_hash(self) -> str:
        h = hashlib.sha256()
        h.update("\n".join(self.ids).encode())
        h.update(np.ascontiguousarray(self.vectors).tobytes())
        return h.hexdigest()

    @classmethod
    def load(cls, path: str | Path, kind: str = "kg", scheme: str = "") -> "EmbeddingStore":
        """Read a snapshot: header ``kb_id <d>`` (or ``<count> <d>``), then ``kb_id<TAB>v1 ... vd``.

        Rows may also separate the identifier by a space.  Any row whose
        length differs from the declared dimension rejects the whole file.
        """
        ids, rows = [], []
        with Path(path).open(encoding="utf-8") as fh:
            header = fh.readline().split()
            if len(header) != 2:
                raise StoreFormatError(f"{path}: bad header, expected 'kb_id d'")
            try:
                dim = int(header[1])
            except ValueError:
                raise StoreFormatError(f"{path}: bad dimension in header {header!r}") from None
            for line_no, line in enumerate(fh, start=2):
                line = line.rstrip("\n")
                if not line.strip():
                    continue
                if "\t" in line:
                    kb_id, _, rest = line.partition("\t")
                    parts = rest.split()
                else:
                    kb_id, *parts = line.split()
                if len(parts) != dim:
                    raise StoreFormatError(
                        f"{path}:{line_no}: vector for {kb_id!r} has {len(parts)} values, expected {dim}"
                    )
                try:
                    rows.append([float(x) for x in parts])
                except ValueError:
                    raise StoreFormatError(f"{path}:{line_no}: non-numeric value") from None
                ids.append(kb_id)
        vectors = np.array(rows, dtype=np.float64).reshape(len(rows), dim)
        return cls(ids, vectors, kind=kind, scheme=scheme or Path(path).stem)

    def save(self, path: str | Path) -> None:
        with Path(path).open("w", encoding="utf-8") as fh:
            fh.write(f"kb_id {self.dim}\n")
            for kb_id, vec in zip(self.ids, self.vectors):
                fh.write(kb_id + "\t" + " ".join(repr(float(x)) for x in vec) + "\n")


def lookup_pair_embedding(store: EmbeddingStore, head_id: str | None, tail_id: str | None,
                          missing_policy: str = "zero_vector") -> np.ndarray:
    """Concatenate head and tail vectors; a missing entity contributes zeros."""
    if missing_policy != "zero_vector":
        raise ValueError(f"unsupported missing policy {missing_policy!r}")
    return np.concatenate([store.get(head_id), store.get(tail_id)])
