"""Molecular structure encodings: SMILES graphs, hashed fingerprints, compound encoders."""

from .smiles import Atom, MolecularGraph, SmilesError, parse_smiles, write_smiles
from .fingerprint import Fingerprint, fingerprint, fingerprint_table, load_smiles_tsv
from .compound import CompoundEncodingError, ToyCompoundEncoder, encode_compound, tokenize_smiles

__all__ = [
    "Atom", "MolecularGraph", "SmilesError", "parse_smiles", "write_smiles",
    "Fingerprint", "fingerprint", "fingerprint_table", "load_smiles_tsv",
    "CompoundEncodingError", "ToyCompoundEncoder", "encode_compound", "tokenize_smiles",
]
