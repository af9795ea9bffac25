"""Hashed binary fingerprints: Morgan (ECFP-style), atom pairs and linear paths.

Features are encoded to bytes, hashed with 64-bit FNV-1a and folded into a
power-of-two width by masking.  No feature depends on atom input order.
"""

from __future__ import annotations

import logging
import warnings
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from .smiles import MolecularGraph, parse_smiles

logger = logging.getLogger(__name__)

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
MASK64 = (1 << 64) - 1

METHODS = ("morgan", "atom_pair", "path", "combined")
DEFAULT_WIDTH = 2048
DEFAULT_RADIUS = 2
DEFAULT_MAX_PATH = 7


def fnv1a64(data: bytes) -> int:
    h = FNV_OFFSET
    for b in data:
        h ^= b
        h = (h * FNV_PRIME) & MASK64
    return h


def feature_hash(feature: tuple) -> int:
    # repr of nested tuples of str/int/bool is stable across platforms
    return fnv1a64(repr(feature).encode("utf-8"))


@dataclass(frozen=True)
class Fingerprint:
    bits: np.ndarray
    method: str
    params: Mapping[str, object] = field(default_factory=dict)

    @property
    def width(self) -> int:
        return int(self.bits.shape[0])

    def on_bits(self) -> list[int]:
        return np.flatnonzero(self.bits).tolist()

    def to_hex(self) -> str:
        return np.packbits(self.bits.astype(np.uint8)).tobytes().hex()

    @classmethod
    def from_hex(cls, text: str, width: int, method: str) -> "Fingerprint":
        raw = np.frombuffer(bytes.fromhex(text), dtype=np.uint8)
        return cls(np.unpackbits(raw)[:width].copy(), method, {"width": width})

    def __eq__(self, other) -> bool:
        return (isinstance(other, Fingerprint) and self.method == other.method
                and np.array_equal(self.bits, other.bits))

    def __hash__(self):
        return hash((self.method, self.to_hex()))


def atom_invariants(mol: MolecularGraph) -> list[tuple]:
    adj = mol.neighbors()
    return [(a.element, a.charge, len(adj[i]), a.hydrogens, a.aromatic) for i, a in enumerate(mol.atoms)]


def morgan_features(mol: MolecularGraph, radius: int = DEFAULT_RADIUS) -> set[int]:
    if radius < 0:
        raise ValueError("radius must be >= 0")
    adj = mol.neighbors()
    ids = [feature_hash(("atom",) + inv) for inv in atom_invariants(mol)]
    feats = set(ids)
    for r in range(1, radius + 1):
        ids = [
            feature_hash(("morgan", r, ids[i], tuple(sorted((o, ids[j]) for j, o in adj[i]))))
            for i in range(len(ids))
        ]
        feats.update(ids)
    return feats


def topological_distances(mol: MolecularGraph) -> list[list[int]]:
    """All-pairs shortest bond counts by BFS; -1 marks disconnected pairs."""
    adj = mol.neighbors()
    n = len(mol.atoms)
    out = []
    for s in range(n):
        dist = [-1] * n
        dist[s] = 0
        q = deque([s])
        while q:
            a = q.popleft()
            for b, _ in adj[a]:
                if dist[b] < 0:
                    dist[b] = dist[a] + 1
                    q.append(b)
        out.append(dist)
    return out


def atom_pair_features(mol: MolecularGraph) -> set[int]:
    inv = [feature_hash(("ap-atom",) + t) for t in atom_invariants(mol)]
    dist = topological_distances(mol)
    feats = set()
    n = len(inv)
    for i in range(n):
        for j in range(i + 1, n):
            d = dist[i][j]
            if d < 0:
                continue
            a, b = sorted((inv[i], inv[j]))
            feats.add(feature_hash(("ap", a, d, b)))
    return feats


def path_labels(mol: MolecularGraph, max_path: int = DEFAULT_MAX_PATH) -> set[tuple]:
    """Direction-canonical labels of every simple linear path with 1..max_path bonds."""
    if max_path < 1:
        raise ValueError("max_path must be >= 1")
    adj = mol.neighbors()
    atom_label = [(a.element, a.aromatic) for a in mol.atoms]
    labels: set[tuple] = set()

    def extend(path: list[int], label: list):
        if len(path) > 1:
            fwd = tuple(label)
            rev = tuple(reversed(label))
            labels.add(min(fwd, rev, key=repr))
        if len(path) - 1 == max_path:
            return
        last = path[-1]
        for nxt, order in adj[last]:
            if nxt in path:
                continue
            path.append(nxt)
            label.extend((order, atom_label[nxt]))
            extend(path, label)
            del label[-2:]
            path.pop()

    for start in range(len(mol.atoms)):
        extend([start], [atom_label[start]])
    return labels


def path_features(mol: MolecularGraph, max_path: int = DEFAULT_MAX_PATH) -> set[int]:
    return {feature_hash(("path", lab)) for lab in path_labels(mol, max_path)}


def _check_width(width: int) -> None:
    if width <= 0 or width & (width - 1):
        raise ValueError(f"fingerprint width must be a power of two, got {width}")


def fold(features: Iterable[int], width: int) -> np.ndarray:
    _check_width(width)
    bits = np.zeros(width, dtype=np.uint8)
    for h in features:
        bits[h & (width - 1)] = 1
    return bits


def features(mol: MolecularGraph, method: str, radius: int = DEFAULT_RADIUS,
             max_path: int = DEFAULT_MAX_PATH) -> set[int]:
    if method == "morgan":
        return morgan_features(mol, radius)
    if method == "atom_pair":
        return atom_pair_features(mol)
    if method == "path":
        return path_features(mol, max_path)
    raise ValueError(f"no single feature set for method {method!r}")


def fingerprint(mol: MolecularGraph | str, method: str = "morgan", width: int | tuple[int, int, int] = DEFAULT_WIDTH,
                radius: int = DEFAULT_RADIUS, max_path: int = DEFAULT_MAX_PATH) -> Fingerprint:
    """Binary fingerprint of ``mol`` (a graph or a SMILES string).

    For ``combined`` the parts are concatenated in the order morgan, atom_pair,
    path; ``width`` may then be a triple of per-part widths.
    """
    if method not in METHODS:
        raise ValueError(f"unknown fingerprint method {method!r}")
    if isinstance(mol, str):
        mol = parse_smiles(mol)
    if method == "combined":
        widths = (width,) * 3 if isinstance(width, int) else tuple(width)
        if len(widths) != 3:
            raise ValueError("combined fingerprint needs three part widths")
        parts = [fingerprint(mol, m, w, radius, max_path).bits
                 for m, w in zip(("morgan", "atom_pair", "path"), widths)]
        return Fingerprint(np.concatenate(parts), "combined",
                           {"widths": widths, "radius": radius, "max_path": max_path})
    if not isinstance(width, int):
        raise ValueError(f"{method} takes a single width")
    _check_width(width)
    if len(mol) == 0:
        warnings.warn("empty molecule: returning all-zero fingerprint", RuntimeWarning, stacklevel=2)
        return Fingerprint(np.zeros(width, dtype=np.uint8), method, {"width": width})
    bits = fold(features(mol, method, radius, max_path), width)
    params: dict[str, object] = {"width": width}
    if method == "morgan":
        params["radius"] = radius
    elif method == "path":
        params["max_path"] = max_path
    return Fingerprint(bits, method, params)


# ---------------------------------------------------------------------------
# snapshot files


def load_smiles_tsv(path: str | Path) -> dict[str, str]:
    out = {}
    with Path(path).open(encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise ValueError(f"{path}:{line_no}: expected 'kb_id<TAB>smiles'")
            if line_no == 1 and parts[0] == "kb_id":
                continue
            out[parts[0]] = parts[1]
    return out


def save_fingerprint_cache(path: str | Path, fps: Mapping[str, Fingerprint]) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for kb_id, fp in fps.items():
            fh.write(f"{kb_id}\t{fp.method}\t{fp.width}\t{fp.to_hex()}\n")


def load_fingerprint_cache(path: str | Path) -> dict[str, Fingerprint]:
    out = {}
    with Path(path).open(encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            kb_id, method, width, hex_bits = line.rstrip("\n").split("\t")
            out[kb_id] = Fingerprint.from_hex(hex_bits, int(width), method)
    return out


def fingerprint_table(smiles: Mapping[str, str], method: str = "combined", **kwargs) -> dict[str, Fingerprint]:
    """Fingerprints for every parseable SMILES; unparseable entries are logged and skipped."""
    out = {}
    for kb_id, s in smiles.items():
        try:
            out[kb_id] = fingerprint(parse_smiles(s), method, **kwargs)
        except ValueError as exc:
            logger.warning("skipping %s: %s", kb_id, exc)
    return out
