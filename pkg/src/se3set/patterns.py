"""Substructure patterns (a small SMARTS subset), subgraph matching and rings.

Supported pattern syntax, which is exactly what the default functional-group
table needs:

* bracket atoms ``[...]`` holding comma-separated alternatives, each a
  conjunction of ``#n`` or an element symbol, ``X<n>`` (total connectivity,
  hydrogens included), ``H<n>`` (explicit hydrogen count, bare ``H`` = 1),
  charges ``+``, ``-``, ``+<n>``, ``-<n>`` and ``R0`` (not in a ring);
* an optional atom map ``:<n>`` at the end of a bracket atom;
* bare element symbols outside brackets;
* bonds ``-`` (single), ``=`` (double) or nothing (single or aromatic);
* branches ``( ... )`` and top-level ``,`` separating alternative patterns.

Anything else is rejected with a :class:`PatternSyntaxError` that carries the
offending token and its offset.
"""

from __future__ import annotations

import enum
import json
import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import networkx as nx

from .chem import ATOMIC_NUMBERS, Molecule


class PatternSyntaxError(ValueError):
    def __init__(self, message: str, token: str = "", offset: int = -1):
        super().__init__(f"{message} (token {token!r} at offset {offset})" if token else message)
        self.token = token
        self.offset = offset


class BondOrder(enum.Enum):
    SINGLE = "-"
    DOUBLE = "="
    IMPLICIT = ""

    def accepts(self, order: float) -> bool:
        if self is BondOrder.SINGLE:
            return order == 1.0
        if self is BondOrder.DOUBLE:
            return order == 2.0
        return order in (1.0, 1.5)


class RingConstraint(enum.Enum):
    ANY = "any"
    IN_RING = "in-ring"
    NOT_IN_RING = "not-in-ring"


@dataclass(frozen=True)
class AtomPrimitive:
    """One conjunction of constraints; ``None`` means unconstrained."""

    atomic_number: int | None = None
    connectivity: int | None = None
    h_count: int | None = None
    charge: int | None = None
    ring: RingConstraint = RingConstraint.ANY

    def matches(self, mol: Molecule, i: int, in_ring: bool) -> bool:
        atom = mol.atoms[i]
        if self.atomic_number is not None and atom.atomic_number != self.atomic_number:
            return False
        if self.connectivity is not None and mol.degree(i) != self.connectivity:
            return False
        if self.h_count is not None and atom.explicit_h_count != self.h_count:
            return False
        if self.charge is not None and atom.formal_charge != self.charge:
            return False
        if self.ring is RingConstraint.NOT_IN_RING and in_ring:
            return False
        if self.ring is RingConstraint.IN_RING and not in_ring:
            return False
        return True


@dataclass(frozen=True)
class AtomPattern:
    alternatives: tuple[AtomPrimitive, ...]
    map_class: int | None = None

    @property
    def atomic_numbers(self) -> frozenset[int] | None:
        """Allowed elements, or ``None`` for a wildcard."""
        zs = {p.atomic_number for p in self.alternatives}
        return None if None in zs else frozenset(zs)

    def matches(self, mol: Molecule, i: int, in_ring: bool) -> bool:
        return any(p.matches(mol, i, in_ring) for p in self.alternatives)


@dataclass(frozen=True)
class BondPattern:
    a: int
    b: int
    order: BondOrder = BondOrder.IMPLICIT


@dataclass(frozen=True)
class PatternGraph:
    atoms: tuple[AtomPattern, ...]
    bonds: tuple[BondPattern, ...]


@dataclass(frozen=True)
class Pattern:
    name: str
    source: str
    alternatives: tuple[PatternGraph, ...]


@dataclass(frozen=True)
class RingSet:
    rings: tuple[frozenset[int], ...]

    def __len__(self) -> int:
        return len(self.rings)

    def __iter__(self):
        return iter(self.rings)

    @property
    def atoms(self) -> frozenset[int]:
        return frozenset().union(*self.rings) if self.rings else frozenset()


# --------------------------------------------------------------------------
# parsing
# --------------------------------------------------------------------------

_TWO_LETTER = sorted((s for s in ATOMIC_NUMBERS if len(s) == 2), key=len, reverse=True)
_BARE_SYMBOLS = ("Cl", "Br", "B", "C", "N", "O", "P", "S", "F", "I")


def _parse_primitive(text: str, base: int) -> AtomPrimitive:
    fields: dict = {}
    pos = 0
    first = True
    while pos < len(text):
        rest = text[pos:]
        if m := re.match(r"#(\d+)", rest):
            key, value = "atomic_number", int(m.group(1))
        elif first and (sym := next((s for s in _TWO_LETTER if rest.startswith(s)), None)):
            m = re.match(sym, rest)
            key, value = "atomic_number", ATOMIC_NUMBERS[sym]
        elif first and rest[0] in ATOMIC_NUMBERS and rest[0].isupper() and rest[0] not in "XR":
            m = re.match(rest[0], rest)
            key, value = "atomic_number", ATOMIC_NUMBERS[rest[0]]
        elif m := re.match(r"X(\d+)", rest):
            key, value = "connectivity", int(m.group(1))
        elif m := re.match(r"H(\d*)", rest):
            key, value = "h_count", int(m.group(1) or 1)
        elif m := re.match(r"([+-])(\d*)", rest):
            sign = 1 if m.group(1) == "+" else -1
            key, value = "charge", sign * int(m.group(2) or 1)
        elif m := re.match(r"R0", rest):
            key, value = "ring", RingConstraint.NOT_IN_RING
        else:
            raise PatternSyntaxError("unsupported atom primitive", rest[0], base + pos)
        if key in fields:
            raise PatternSyntaxError(f"repeated {key} constraint", m.group(0), base + pos)
        fields[key] = value
        first = False
        pos += m.end()
    if not fields:
        raise PatternSyntaxError("empty atom alternative", text, base)
    return AtomPrimitive(**fields)


def _parse_bracket(body: str, base: int) -> AtomPattern:
    map_class = None
    if m := re.search(r":(\d+)$", body):
        map_class = int(m.group(1))
        body = body[: m.start()]
    if not body:
        raise PatternSyntaxError("empty bracket atom", "[", base - 1)
    alternatives = []
    offset = base
    for part in body.split(","):
        alternatives.append(_parse_primitive(part, offset))
        offset += len(part) + 1
    return AtomPattern(tuple(alternatives), map_class)


class _GraphParser:
    def __init__(self, text: str, base: int):
        self.text = text
        self.base = base
        self.pos = 0
        self.atoms: list[AtomPattern] = []
        self.bonds: list[BondPattern] = []

    def error(self, message: str) -> PatternSyntaxError:
        token = self.text[self.pos] if self.pos < len(self.text) else "<end>"
        return PatternSyntaxError(message, token, self.base + self.pos)

    def peek(self) -> str:
        return self.text[self.pos] if self.pos < len(self.text) else ""

    def parse(self) -> PatternGraph:
        if not self.text:
            raise PatternSyntaxError("empty pattern", "<end>", self.base)
        self.atom()
        self.chain(0)
        if self.pos != len(self.text):
            raise self.error("unexpected token")
        maps = [a.map_class for a in self.atoms if a.map_class is not None]
        if len(maps) != len(set(maps)):
            raise PatternSyntaxError(f"duplicate atom map in {self.text!r}")
        return PatternGraph(tuple(self.atoms), tuple(self.bonds))

    def bond(self) -> BondOrder:
        c = self.peek()
        if c in ("-", "="):
            self.pos += 1
            return BondOrder(c)
        return BondOrder.IMPLICIT

    def atom(self) -> int:
        c = self.peek()
        if c == "[":
            end = self.text.find("]", self.pos)
            if end < 0:
                raise self.error("unterminated bracket atom")
            pattern = _parse_bracket(self.text[self.pos + 1 : end], self.base + self.pos + 1)
            self.pos = end + 1
        else:
            sym = next((s for s in _BARE_SYMBOLS if self.text.startswith(s, self.pos)), None)
            if sym is None:
                raise self.error("unsupported token")
            pattern = AtomPattern((AtomPrimitive(atomic_number=ATOMIC_NUMBERS[sym]),))
            self.pos += len(sym)
        self.atoms.append(pattern)
        return len(self.atoms) - 1

    def chain(self, prev: int) -> None:
        while self.pos < len(self.text):
            c = self.peek()
            if c == ")":
                return
            if c == "(":
                self.pos += 1
                order = self.bond()
                idx = self.atom()
                self.bonds.append(BondPattern(prev, idx, order))
                self.chain(idx)
                if self.peek() != ")":
                    raise self.error("unbalanced branch")
                self.pos += 1
                continue
            order = self.bond()
            idx = self.atom()
            self.bonds.append(BondPattern(prev, idx, order))
            prev = idx


def _split_top_level(text: str) -> list[tuple[str, int]]:
    parts, depth, start = [], 0, 0
    for k, c in enumerate(text):
        if c == "[":
            depth += 1
        elif c == "]":
            depth -= 1
        elif c == "," and depth == 0:
            parts.append((text[start:k], start))
            start = k + 1
    parts.append((text[start:], start))
    out = []
    for part, offset in parts:
        stripped = part.strip()
        out.append((stripped, offset + len(part) - len(part.lstrip())))
    return out


def parse_pattern(text: str, name: str = "") -> Pattern:
    alternatives = []
    for part, offset in _split_top_level(text):
        if re.search(r"\s", part):
            k = re.search(r"\s", part).start()
            raise PatternSyntaxError("whitespace inside pattern", part[k], offset + k)
        graph = _GraphParser(part, offset).parse()
        alternatives.append(graph)
    return Pattern(name=name or text, source=text, alternatives=tuple(alternatives))


def load_patterns(path: str | Path | None = None) -> list[Pattern]:
    """Load a JSON ``{name: pattern}`` file; the packaged table when ``path`` is None."""
    if path is None:
        raw = resources.files("se3set").joinpath("data/functional_groups.json").read_text()
    else:
        raw = Path(path).read_text()
    table = json.loads(raw)
    if not isinstance(table, dict) or not all(isinstance(v, str) for v in table.values()):
        raise ValueError("pattern file must be a JSON object mapping names to pattern strings")
    return [parse_pattern(src, name) for name, src in table.items()]


# --------------------------------------------------------------------------
# matching
# --------------------------------------------------------------------------


def _search_order(graph: PatternGraph) -> list[tuple[int, int | None, BondOrder | None]]:
    """DFS order over the pattern: (pattern atom, already-placed anchor, bond)."""
    adj: dict[int, list[tuple[int, BondOrder]]] = {i: [] for i in range(len(graph.atoms))}
    for b in graph.bonds:
        adj[b.a].append((b.b, b.order))
        adj[b.b].append((b.a, b.order))
    order = [(0, None, None)]
    seen = {0}
    stack = [0]
    while stack:
        u = stack.pop()
        for v, bo in sorted(adj[u], key=lambda t: t[0], reverse=True):
            if v not in seen:
                seen.add(v)
                order.append((v, u, bo))
                stack.append(v)
    return order


def _embeddings(mol: Molecule, graph: PatternGraph, in_ring: frozenset[int]):
    order = _search_order(graph)
    bonds = mol.bond_lookup()
    pattern_bonds = {(min(b.a, b.b), max(b.a, b.b)): b.order for b in graph.bonds}
    mapping: dict[int, int] = {}
    used: set[int] = set()

    def consistent(p: int, i: int) -> bool:
        if i in used or not graph.atoms[p].matches(mol, i, i in in_ring):
            return False
        for q, j in mapping.items():
            key = (min(p, q), max(p, q))
            if key in pattern_bonds:
                mb = bonds.get((min(i, j), max(i, j)))
                if mb is None or not pattern_bonds[key].accepts(mb.order):
                    return False
        return True

    def extend(k: int):
        if k == len(order):
            yield dict(mapping)
            return
        p, anchor, _ = order[k]
        candidates = range(mol.n_atoms) if anchor is None else mol.neighbors(mapping[anchor])
        for i in candidates:
            if consistent(p, i):
                mapping[p] = i
                used.add(i)
                yield from extend(k + 1)
                del mapping[p]
                used.discard(i)

    yield from extend(0)


def _sorted_sets(sets) -> list[frozenset[int]]:
    return sorted(set(sets), key=lambda s: tuple(sorted(s)))


def find_matches(mol: Molecule, pattern: Pattern, rings: RingSet | None = None) -> list[frozenset[int]]:
    """Atom-index sets covered by embeddings of any alternative, deduplicated."""
    ring_atoms = (rings if rings is not None else find_rings(mol)).atoms
    images = set()
    for graph in pattern.alternatives:
        for emb in _embeddings(mol, graph, ring_atoms):
            images.add(frozenset(emb.values()))
    return _sorted_sets(images)


def merge_adjacent(mol: Molecule, sets) -> list[frozenset[int]]:
    """Union sets that overlap or are joined by a bond, until nothing changes."""
    groups = [set(s) for s in sets]
    changed = True
    while changed:
        changed = False
        for a in range(len(groups)):
            for b in range(a + 1, len(groups)):
                ga, gb = groups[a], groups[b]
                if ga & gb or any(j in gb for i in ga for j in mol.neighbors(i)):
                    groups[a] = ga | gb
                    del groups[b]
                    changed = True
                    break
            if changed:
                break
    return _sorted_sets(frozenset(g) for g in groups)


def find_functional_groups(mol: Molecule, patterns, rings: RingSet | None = None) -> list[frozenset[int]]:
    rings = rings if rings is not None else find_rings(mol)
    matches = []
    for p in patterns:
        matches.extend(find_matches(mol, p, rings))
    return merge_adjacent(mol, matches)


def find_rings(mol: Molecule) -> RingSet:
    """Minimum cycle basis of the bond graph (smallest set of smallest rings)."""
    g = nx.Graph()
    g.add_nodes_from(range(mol.n_atoms))
    g.add_edges_from((b.i, b.j) for b in mol.bonds)
    rings = [frozenset(c) for c in nx.minimum_cycle_basis(g)]
    rings.sort(key=lambda s: (len(s), tuple(sorted(s))))
    return RingSet(tuple(rings))
