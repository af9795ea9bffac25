"""SMILES parsing and writing for the organic subset.

Supported: organic-subset atoms ``B C N O P S F Cl Br I`` and their aromatic
lowercase forms, bracket atoms with explicit hydrogens and charges, bonds
``- = # :``, branches and ring closures (single digit or ``%nn``).
Stereochemistry, isotopes and wildcards are rejected.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field

ORGANIC = ("B", "C", "N", "O", "P", "S", "F", "Cl", "Br", "I")
AROMATIC = ("b", "c", "n", "o", "p", "s")
# smallest-first allowed valences
VALENCES = {
    "B": (3,), "C": (4,), "N": (3, 5), "O": (2,), "P": (3, 5), "S": (2, 4, 6),
    "F": (1,), "Cl": (1,), "Br": (1,), "I": (1,),
}
# elements accepted inside brackets
BRACKET_ELEMENTS = set(VALENCES) | {"H", "Na", "K", "Li", "Mg", "Ca", "Fe", "Zn", "Cu", "Co", "Mn",
                                    "Pt", "Se", "Si", "Al", "As", "Hg", "Au", "Ag", "Gd", "Bi", "Tc",
                                    "Ga", "Sb", "Sn", "Ti", "Cr", "Ni", "Ba", "Sr", "Cs", "Rb", "Te",
                                    "Ge", "Xe", "He", "Ne", "Ar", "Kr", "Ra", "Li", "Be", "Se"}
AROMATIC_BRACKET = {"b", "c", "n", "o", "p", "s", "se", "as", "te"}

AROMATIC_BOND = 4  # bond "order" code for aromatic bonds
BOND_SYMBOLS = {"-": 1, "=": 2, "#": 3, ":": AROMATIC_BOND}


class SmilesError(ValueError):
    def __init__(self, smiles: str, pos: int, msg: str):
        super().__init__(f"{msg} at position {pos} in {smiles!r}")
        self.pos = pos


@dataclass(frozen=True)
class Atom:
    element: str  # capitalised element symbol
    charge: int = 0
    aromatic: bool = False
    hydrogens: int = 0
    bracket: bool = False


@dataclass
class MolecularGraph:
    atoms: list[Atom] = field(default_factory=list)
    bonds: list[tuple[int, int, int]] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.atoms)

    def neighbors(self) -> list[list[tuple[int, int]]]:
        """Adjacency list of (neighbor, bond order) per atom."""
        adj: list[list[tuple[int, int]]] = [[] for _ in self.atoms]
        for i, j, o in self.bonds:
            adj[i].append((j, o))
            adj[j].append((i, o))
        return adj

    def degree(self, i: int) -> int:
        return sum(1 for a, b, _ in self.bonds if a == i or b == i)


def _bond_valence(order: int) -> int:
    return 1 if order == AROMATIC_BOND else order


def implicit_hydrogens(element: str, aromatic: bool, bond_orders: list[int]) -> int:
    """Implicit H count for an unbracketed organic-subset atom.

    Aromatic bonds count as 1 and an aromatic atom reserves one extra valence
    unit for the delocalised system (benzene ``c`` gets one H, pyridine ``n`` none).
    Aromatic atoms only use their lowest valence, so a three-connected ``n`` has no H.
    """
    used = sum(_bond_valence(o) for o in bond_orders) + (1 if aromatic else 0)
    allowed = VALENCES[element][:1] if aromatic else VALENCES[element]
    for v in allowed:
        if used <= v:
            return v - used
    return 0


def parse_smiles(s: str) -> MolecularGraph:
    atoms: list[dict] = []
    bonds: dict[frozenset, int] = {}
    branch_stack: list[int] = []
    rings: dict[int, tuple[int, int | None, int]] = {}
    prev: int | None = None
    pending_bond: int | None = None
    i, n = 0, len(s)

    def add_atom(atom: dict, pos: int) -> None:
        nonlocal prev, pending_bond
        atoms.append(atom)
        idx = len(atoms) - 1
        if prev is not None:
            _add_bond(prev, idx, pending_bond, pos)
        prev = idx
        pending_bond = None

    def _add_bond(a: int, b: int, order: int | None, pos: int) -> None:
        if a == b:
            raise SmilesError(s, pos, "atom bonded to itself")
        key = frozenset((a, b))
        if key in bonds:
            raise SmilesError(s, pos, "duplicate bond")
        if order is None:
            order = AROMATIC_BOND if atoms[a]["aromatic"] and atoms[b]["aromatic"] else 1
        bonds[key] = order

    while i < n:
        ch = s[i]
        if ch == "(":
            if prev is None:
                raise SmilesError(s, i, "branch without preceding atom")
            branch_stack.append(prev)
            i += 1
        elif ch == ")":
            if not branch_stack:
                raise SmilesError(s, i, "unbalanced parenthesis")
            if pending_bond is not None:
                raise SmilesError(s, i, "dangling bond")
            prev = branch_stack.pop()
            i += 1
        elif ch in BOND_SYMBOLS:
            if pending_bond is not None:
                raise SmilesError(s, i, "consecutive bond symbols")
            pending_bond = BOND_SYMBOLS[ch]
            i += 1
        elif ch in "/\\@":
            raise SmilesError(s, i, "stereochemistry is not supported")
        elif ch == ".":
            if pending_bond is not None:
                raise SmilesError(s, i, "dangling bond")
            prev = None
            i += 1
        elif ch.isdigit() or ch == "%":
            if ch == "%":
                label_txt = s[i + 1:i + 3]
                if len(label_txt) != 2 or not label_txt.isdigit():
                    raise SmilesError(s, i, "bad two-digit ring closure")
                label = int(label_txt)
                width = 3
            else:
                label, width = int(ch), 1
            if prev is None:
                raise SmilesError(s, i, "ring closure without atom")
            if label in rings:
                other, order, open_pos = rings.pop(label)
                if order is not None and pending_bond is not None and order != pending_bond:
                    raise SmilesError(s, i, "conflicting ring-closure bond orders")
                _add_bond(other, prev, pending_bond if pending_bond is not None else order, i)
            else:
                rings[label] = (prev, pending_bond, i)
            pending_bond = None
            i += width
        elif ch == "[":
            end = s.find("]", i)
            if end < 0:
                raise SmilesError(s, i, "unclosed bracket atom")
            add_atom(_parse_bracket(s, i, end), i)
            i = end + 1
        else:
            two = s[i:i + 2]
            if two in ("Cl", "Br"):
                sym, width = two, 2
            elif ch in ORGANIC or ch in AROMATIC:
                sym, width = ch, 1
            else:
                raise SmilesError(s, i, f"unknown element {ch!r}")
            aromatic = sym in AROMATIC
            add_atom({"element": sym.upper() if aromatic else sym, "charge": 0, "aromatic": aromatic,
                      "hydrogens": None, "bracket": False}, i)
            i += width
    if branch_stack:
        raise SmilesError(s, n, "unbalanced parenthesis")
    if rings:
        label, (_, _, pos) = next(iter(rings.items()))
        raise SmilesError(s, pos, f"unclosed ring {label}")
    if pending_bond is not None:
        raise SmilesError(s, n, "dangling bond")

    bond_list = sorted((min(k), max(k), o) for k, o in ((tuple(k), o) for k, o in bonds.items()))
    orders: list[list[int]] = [[] for _ in atoms]
    for a, b, o in bond_list:
        orders[a].append(o)
        orders[b].append(o)
    out_atoms = []
    for idx, a in enumerate(atoms):
        h = a["hydrogens"]
        if h is None:
            h = implicit_hydrogens(a["element"], a["aromatic"], orders[idx])
        out_atoms.append(Atom(a["element"], a["charge"], a["aromatic"], h, a["bracket"]))
    return MolecularGraph(out_atoms, bond_list)


def _parse_bracket(s: str, start: int, end: int) -> dict:
    body = s[start + 1:end]
    j = 0
    if body[:1].isdigit():
        raise SmilesError(s, start + 1, "isotopes are not supported")
    sym = None
    for cand in (body[:2], body[:1]):
        if cand and (cand in BRACKET_ELEMENTS or cand in AROMATIC_BRACKET):
            sym = cand
            break
    if sym is None:
        raise SmilesError(s, start + 1, f"unknown element in {body!r}")
    j = len(sym)
    aromatic = sym in AROMATIC_BRACKET
    element = sym[0].upper() + sym[1:] if aromatic else sym
    if j < len(body) and body[j] == "@":
        raise SmilesError(s, start + 1 + j, "stereochemistry is not supported")
    h = 0
    if j < len(body) and body[j] == "H":
        j += 1
        h = 1
        k = j
        while k < len(body) and body[k].isdigit():
            k += 1
        if k > j:
            h = int(body[j:k])
        j = k
    charge = 0
    if j < len(body) and body[j] in "+-":
        sign = 1 if body[j] == "+" else -1
        k = j + 1
        while k < len(body) and body[k] == body[j]:
            k += 1
        if k > j + 1:
            charge = sign * (k - j)
            j = k
        else:
            j += 1
            k = j
            while k < len(body) and body[k].isdigit():
                k += 1
            charge = sign * (int(body[j:k]) if k > j else 1)
            j = k
    if j < len(body):
        if body[j] == ":":
            raise SmilesError(s, start + 1 + j, "atom classes are not supported")
        raise SmilesError(s, start + 1 + j, f"unexpected {body[j]!r} in bracket atom")
    return {"element": element, "charge": charge, "aromatic": aromatic, "hydrogens": h, "bracket": True}


# ---------------------------------------------------------------------------
# writing


def _atom_token(mol: MolecularGraph, i: int, orders: list[int]) -> str:
    a = mol.atoms[i]
    sym = a.element.lower() if a.aromatic else a.element
    organic = a.element in VALENCES and a.charge == 0
    if organic and implicit_hydrogens(a.element, a.aromatic, orders) == a.hydrogens:
        return sym
    out = "[" + sym
    if a.hydrogens:
        out += "H" + (str(a.hydrogens) if a.hydrogens > 1 else "")
    if a.charge:
        out += ("+" if a.charge > 0 else "-") + (str(abs(a.charge)) if abs(a.charge) > 1 else "")
    return out + "]"


def _bond_token(mol: MolecularGraph, i: int, j: int, order: int) -> str:
    ai, aj = mol.atoms[i], mol.atoms[j]
    if order == AROMATIC_BOND:
        return "" if ai.aromatic and aj.aromatic else ":"
    if order == 1:
        return "-" if ai.aromatic and aj.aromatic else ""
    return {2: "=", 3: "#"}[order]


def canonical_ranks(mol: MolecularGraph) -> list[int]:
    """Atom ranks from iterated neighbourhood refinement (ties broken by index)."""
    adj = mol.neighbors()
    labels = [(a.element, a.charge, a.aromatic, a.hydrogens, len(adj[i])) for i, a in enumerate(mol.atoms)]
    classes = _relabel(labels)
    for _ in range(len(mol.atoms)):
        refined = [(classes[i], tuple(sorted((o, classes[j]) for j, o in adj[i]))) for i in range(len(mol.atoms))]
        new = _relabel(refined)
        if len(set(new)) == len(set(classes)):
            break
        classes = new
    return sorted(range(len(mol.atoms)), key=lambda i: (classes[i], i))


def _relabel(values: list) -> list[int]:
    order = {v: k for k, v in enumerate(sorted(set(values), key=repr))}
    return [order[v] for v in values]


def write_smiles(mol: MolecularGraph, rng: random.Random | None = None) -> str:
    """Serialise ``mol`` to SMILES.

    Without ``rng`` the traversal starts at the lowest canonical rank and
    visits neighbours by rank.  With ``rng`` the start atom and neighbour order
    are random, which gives alternative SMILES for the same graph.
    """
    n = len(mol.atoms)
    if n == 0:
        return ""
    adj = mol.neighbors()
    if rng is None:
        ranked = canonical_ranks(mol)
        rank = {a: r for r, a in enumerate(ranked)}
    else:
        perm = list(range(n))
        rng.shuffle(perm)
        rank = {a: r for r, a in enumerate(perm)}
    orders = [[o for _, o in adj[i]] for i in range(n)]

    visited = [False] * n
    parent = [-1] * n
    # first pass: DFS tree to find ring-closure bonds
    tree_children: list[list[int]] = [[] for _ in range(n)]
    closures: dict[int, list[tuple[int, int]]] = {i: [] for i in range(n)}
    roots = []
    for start in sorted(range(n), key=lambda i: rank[i]):
        if visited[start]:
            continue
        roots.append(start)
        stack = [(start, -1)]
        while stack:
            atom, par = stack.pop()
            if visited[atom]:
                continue
            visited[atom] = True
            parent[atom] = par
            if par >= 0:
                tree_children[par].append(atom)
            nbrs = sorted((j for j, _ in adj[atom]), key=lambda j: rank[j], reverse=True)
            for j in nbrs:
                if not visited[j]:
                    stack.append((j, atom))
    tree_edges = {frozenset((c, p)) for c, p in enumerate(parent) if p >= 0}
    order_of = {frozenset((i, j)): o for i, j, o in mol.bonds}
    ring_bonds = [k for k in order_of if k not in tree_edges]

    # recompute DFS visiting order to place ring-closure digits
    pos = {}
    counter = 0
    for r in roots:
        stack = [r]
        while stack:
            a = stack.pop()
            pos[a] = counter
            counter += 1
            stack.extend(reversed(tree_children[a]))
    for k in ring_bonds:
        a, b = sorted(k, key=lambda x: pos[x])
        closures[a].append((b, order_of[k]))
        closures[b].append((a, order_of[k]))

    free_labels = list(range(1, 100))
    open_labels: dict[frozenset, int] = {}

    def emit(a: int) -> str:
        out = _atom_token(mol, a, orders[a])
        for other, order in sorted(closures[a], key=lambda x: pos[x[0]]):
            key = frozenset((a, other))
            if key in open_labels:
                label = open_labels.pop(key)
                free_labels.append(label)
                free_labels.sort()
                bond = _bond_token(mol, a, other, order)
            else:
                label = free_labels.pop(0)
                open_labels[key] = label
                bond = ""  # written at the closing end
            out += bond + (str(label) if label < 10 else f"%{label:02d}")
        kids = tree_children[a]
        for idx, c in enumerate(kids):
            piece = _bond_token(mol, a, c, order_of[frozenset((a, c))]) + emit(c)
            out += piece if idx == len(kids) - 1 else "(" + piece + ")"
        return out

    return ".".join(emit(r) for r in roots)


def heavy_atom_count(mol: MolecularGraph) -> int:
    return sum(1 for a in mol.atoms if a.element != "H")
