"""Parse SMILES, rewrite them in random atom orders, and fingerprint them.

Run: python demos/molecular_fingerprints.py
"""
import random

from karex.molenc import ToyCompoundEncoder, encode_compound, fingerprint, parse_smiles, write_smiles

aspirin = parse_smiles("CC(=O)Oc1ccccc1C(=O)O")
print(f"aspirin: {len(aspirin)} heavy atoms, {sum(a.hydrogens for a in aspirin.atoms)} hydrogens")
print("canonical:", write_smiles(aspirin))

rnd = random.Random(907)
for _ in range(3):
    s = write_smiles(aspirin, rnd)
    same = fingerprint(s, "combined") == fingerprint(aspirin, "combined")
    print(f"  {s:28s} same combined fingerprint: {same}")

for method in ("morgan", "atom_pair", "path"):
    fp = fingerprint(aspirin, method, 1024)
    print(f"{method:9s} width {fp.width}, {len(fp.on_bits())} bits set")
combined = fingerprint(aspirin, "combined", (1024, 1024, 2048))
print("combined width:", combined.width)

# learned alternative: a small transformer over SMILES tokens
enc = ToyCompoundEncoder(width=32).eval()
print("compound encoding:", encode_compound(enc, "CC(=O)Oc1ccccc1C(=O)O")[:4].tolist(), "...")
