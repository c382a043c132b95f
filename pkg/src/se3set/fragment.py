"""Overlapping-fragment hypergraph construction.

Pipeline per molecule:

1. mark cleavable bonds (single, heavy-heavy, not inside a functional group or ring),
2. split the bond graph at cleavable bonds into substructures,
3. merge small substructures into fragment cores of at least ``n_min`` atoms,
4. either expand every core with strongly interacting substructures
   (explicit overlap) or attach each atom to the cores found inside a radial
   cutoff around it (implicit overlap).

Every ordering decision uses quantities that do not depend on atom labels
(set sizes, element multisets, exactly rounded sums of pair terms), so the
result commutes with atom relabeling whenever the geometry has no exact ties.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .chem import Molecule, equilibrium_distance, neighbors_within
from .patterns import Pattern, RingSet, find_functional_groups, find_rings, load_patterns

LENDVAY_WIDTH = 0.25  # Angstrom
BOND_ORDER_METHODS = ("lendvay", "exponential")
OVERLAP_MODES = ("explicit", "implicit")


@dataclass(frozen=True)
class FragmentationConfig:
    n_min: int = 2
    n_max: int = 6
    c_is: float = 0.1
    c_w: float = 0.1
    bond_order_method: str = "lendvay"
    overlap_mode: str = "explicit"
    r_c: float = 5.0

    def __post_init__(self):
        if not 2 <= self.n_min <= self.n_max:
            raise ValueError(f"need 2 <= n_min <= n_max, got {self.n_min}, {self.n_max}")
        if not self.c_is > 0:
            raise ValueError("c_is must be positive")
        if self.bond_order_method not in BOND_ORDER_METHODS:
            raise ValueError(f"bond_order_method must be one of {BOND_ORDER_METHODS}")
        if self.overlap_mode not in OVERLAP_MODES:
            raise ValueError(f"overlap_mode must be one of {OVERLAP_MODES}")
        if self.overlap_mode == "explicit" and not self.c_w > 0:
            raise ValueError("c_w must be positive in explicit mode")
        if self.overlap_mode == "implicit" and not self.r_c > 0:
            raise ValueError("r_c must be positive in implicit mode")

    @classmethod
    def from_dict(cls, data: dict) -> "FragmentationConfig":
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown fragmentation option(s): {sorted(unknown)}")
        return cls(**data)

    def to_dict(self) -> dict:
        out = asdict(self)
        for k in ("c_w", "r_c"):
            if math.isinf(out[k]):
                out[k] = "inf"
        return out


@dataclass(frozen=True)
class Substructure:
    atoms: frozenset[int]
    kind: str  # functional-group | ring | bfs-component | singleton


@dataclass(frozen=True)
class Fragment:
    core: frozenset[int]
    expanded: frozenset[int]
    origins: tuple[int, ...] = ()
    isolated: bool = False


@dataclass(frozen=True)
class Hypergraph:
    n: int
    mode: str
    hyperedges: tuple[tuple[int, ...], ...]
    cores: tuple[tuple[int, ...], ...]
    neighbor_fragments: dict[int, tuple[int, ...]] | None = None
    config: FragmentationConfig | None = field(default=None, compare=False)

    def __post_init__(self):
        if not self.hyperedges or any(len(e) == 0 for e in self.hyperedges):
            raise ValueError("hypergraph needs at least one hyperedge and no empty hyperedges")

    @property
    def m(self) -> int:
        return len(self.hyperedges)

    def node_edges(self) -> list[tuple[int, ...]]:
        """Hyperedge ids attached to each node under the overlap mode."""
        if self.mode == "implicit":
            nf = self.neighbor_fragments or {}
            return [tuple(nf.get(i, ())) for i in range(self.n)]
        out: list[list[int]] = [[] for _ in range(self.n)]
        for a, edge in enumerate(self.hyperedges):
            for i in edge:
                out[i].append(a)
        return [tuple(x) for x in out]

    def incidences(self) -> list[tuple[int, int]]:
        """(node, hyperedge) pairs carrying their own feature, node-major order."""
        return [(i, a) for i, edges in enumerate(self.node_edges()) for a in edges]

    def edge_sets(self) -> frozenset[frozenset[int]]:
        return frozenset(frozenset(e) for e in self.hyperedges)

    def relabeled(self, perm: Sequence[int]) -> "Hypergraph":
        """Hypergraph of the molecule permuted by ``Molecule.permuted(perm)``."""
        inverse = {old: new for new, old in enumerate(perm)}
        edges = tuple(tuple(sorted(inverse[i] for i in e)) for e in self.hyperedges)
        cores = tuple(tuple(sorted(inverse[i] for i in e)) for e in self.cores)
        nf = None
        if self.neighbor_fragments is not None:
            nf = {inverse[i]: v for i, v in self.neighbor_fragments.items()}
        return Hypergraph(self.n, self.mode, edges, cores, nf, self.config)

    def to_dict(self) -> dict:
        out = {
            "n": self.n,
            "mode": self.mode,
            "hyperedges": [list(e) for e in self.hyperedges],
            "cores": [list(c) for c in self.cores],
        }
        if self.mode == "implicit":
            nf = self.neighbor_fragments or {}
            out["neighbor_fragments"] = {str(i): list(nf.get(i, ())) for i in range(self.n)}
        if self.config is not None:
            out["config"] = self.config.to_dict()
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)

    @classmethod
    def from_dict(cls, data: dict) -> "Hypergraph":
        nf = None
        if "neighbor_fragments" in data:
            nf = {int(k): tuple(v) for k, v in data["neighbor_fragments"].items()}
        cfg = None
        if "config" in data:
            raw = dict(data["config"])
            for k in ("c_w", "r_c"):
                if raw.get(k) == "inf":
                    raw[k] = math.inf
            cfg = FragmentationConfig.from_dict(raw)
        return cls(
            n=int(data["n"]),
            mode=data["mode"],
            hyperedges=tuple(tuple(e) for e in data["hyperedges"]),
            cores=tuple(tuple(c) for c in data.get("cores", data["hyperedges"])),
            neighbor_fragments=nf,
            config=cfg,
        )


# --------------------------------------------------------------------------
# step 1 and 2
# --------------------------------------------------------------------------


def cleavable_bonds(mol: Molecule, groups: Iterable[frozenset[int]], rings: RingSet) -> set[int]:
    """Indices into ``mol.bonds`` of bonds that may be cut."""
    protected = [frozenset(g) for g in groups] + list(rings.rings)
    out = set()
    for k, b in enumerate(mol.bonds):
        if b.order >= 1.5 or mol.is_hydrogen(b.i) or mol.is_hydrogen(b.j):
            continue
        if any(b.i in s and b.j in s for s in protected):
            continue
        out.add(k)
    return out


def bfs_substructures(
    mol: Molecule,
    cleavable: set[int],
    groups: Iterable[frozenset[int]] = (),
    rings: RingSet | None = None,
) -> list[Substructure]:
    """Connected components after deleting the cleavable bonds."""
    adj: list[list[int]] = [[] for _ in range(mol.n_atoms)]
    for k, b in enumerate(mol.bonds):
        if k not in cleavable:
            adj[b.i].append(b.j)
            adj[b.j].append(b.i)
    seen = [False] * mol.n_atoms
    components = []
    for start in range(mol.n_atoms):
        if seen[start]:
            continue
        seen[start] = True
        queue, comp = [start], {start}
        while queue:
            u = queue.pop(0)
            for v in adj[u]:
                if not seen[v]:
                    seen[v] = True
                    comp.add(v)
                    queue.append(v)
        components.append(frozenset(comp))
    groups = [frozenset(g) for g in groups]
    ring_sets = list(rings.rings) if rings is not None else []
    out = []
    for comp in components:
        heavy = sum(1 for i in comp if not mol.is_hydrogen(i))
        if any(g <= comp for g in groups):
            kind = "functional-group"
        elif any(r <= comp for r in ring_sets):
            kind = "ring"
        elif heavy <= 1:
            kind = "singleton"
        else:
            kind = "bfs-component"
        out.append(Substructure(comp, kind))
    return out


# --------------------------------------------------------------------------
# fragment bond order
# --------------------------------------------------------------------------


def pair_kernel(d: np.ndarray, d_eq: np.ndarray, method: str) -> np.ndarray:
    if method == "lendvay":
        return np.exp(-(d - d_eq) * d_eq / LENDVAY_WIDTH**2)
    if method == "exponential":
        return np.exp(-(d - d_eq))
    raise ValueError(f"unknown bond order method {method!r}")


def pair_kernel_matrix(mol: Molecule, method: str) -> np.ndarray:
    pos = mol.positions
    d = np.linalg.norm(pos[:, None, :] - pos[None, :, :], axis=-1)
    z = [a.atomic_number for a in mol.atoms]
    d_eq = np.array([[equilibrium_distance(a, b) for b in z] for a in z]).reshape(d.shape)
    return pair_kernel(d, d_eq, method)


def _block_sum(K: np.ndarray, A: Iterable[int], B: Iterable[int]) -> float:
    A, B = sorted(A), sorted(B)
    if not A or not B:
        return 0.0
    return math.fsum(K[np.ix_(A, B)].ravel().tolist())


def fragment_bond_order(mol: Molecule, A, B, method: str = "lendvay", K: np.ndarray | None = None) -> float:
    """Sum of pair kernels between two disjoint atom sets."""
    A, B = set(A), set(B)
    if not A or not B:
        raise ValueError("atom sets must be non-empty")
    if A & B:
        raise ValueError("atom sets must be disjoint")
    if K is None:
        K = pair_kernel_matrix(mol, method)
    return _block_sum(K, A, B)


# --------------------------------------------------------------------------
# step 3: merge
# --------------------------------------------------------------------------


def merge_substructures(
    mol: Molecule,
    subs: Sequence[Substructure],
    cfg: FragmentationConfig,
    K: np.ndarray | None = None,
) -> list[Fragment]:
    """Grow substructures until each holds ``n_min`` atoms (or is isolated).

    The smallest, least connected group is taken first.  It joins the
    bonded group with the fewest atoms that keeps the union within ``n_max``;
    failing that, the group with the fewest atoms among those whose fragment
    bond order to it reaches ``c_is``, again within ``n_max``; failing that it
    stays isolated.
    Candidates of equal size are ranked by their bond order to the group.
    """
    if not subs:
        raise ValueError("no substructures to merge")
    if K is None:
        K = pair_kernel_matrix(mol, cfg.bond_order_method)
    numbers = [a.atomic_number for a in mol.atoms]
    owner = np.full(mol.n_atoms, -1)

    groups: list[dict] = []
    for k, s in enumerate(subs):
        groups.append({"atoms": set(s.atoms), "origins": [k], "uid": k})
    uid_next = len(groups)
    W: dict[tuple[int, int], float] = {}
    for a in groups:
        for b in groups:
            if a["uid"] < b["uid"]:
                W[a["uid"], b["uid"]] = _block_sum(K, a["atoms"], b["atoms"])

    def w(u: int, v: int) -> float:
        return W[(u, v) if u < v else (v, u)]

    def row_sum(g: dict) -> float:
        return math.fsum(w(g["uid"], o["uid"]) for o in groups if o is not g)

    def sort_key(g: dict):
        comp = tuple(sorted(numbers[i] for i in g["atoms"]))
        return (len(g["atoms"]), row_sum(g), comp, tuple(sorted(-i for i in g["atoms"])))

    def resort() -> None:
        # keys first: row_sum reads ``groups``, which list.sort empties while it runs
        keys = {g["uid"]: sort_key(g) for g in groups}
        groups.sort(key=lambda g: keys[g["uid"]], reverse=True)

    bonded_pairs = {(b.i, b.j) for b in mol.bonds} | {(b.j, b.i) for b in mol.bonds}

    def bonded(a: set, b: set) -> bool:
        return any((i, j) in bonded_pairs for i in a for j in b)

    resort()
    isolated: list[dict] = []
    while groups and len(groups[-1]["atoms"]) < cfg.n_min:
        gk = groups.pop()
        size_k = len(gk["atoms"])
        choice = None
        topo = [
            g for g in groups
            if bonded(g["atoms"], gk["atoms"]) and size_k + len(g["atoms"]) <= cfg.n_max
        ]
        if topo:
            choice = min(topo, key=lambda g: (len(g["atoms"]), -w(g["uid"], gk["uid"])))
        else:
            near = [
                g for g in groups
                if w(g["uid"], gk["uid"]) >= cfg.c_is and size_k + len(g["atoms"]) <= cfg.n_max
            ]
            if near:
                choice = min(near, key=lambda g: (len(g["atoms"]), -w(g["uid"], gk["uid"])))
        if choice is None:
            isolated.append(gk)
            continue
        merged = {
            "atoms": choice["atoms"] | gk["atoms"],
            "origins": sorted(choice["origins"] + gk["origins"]),
            "uid": uid_next,
        }
        uid_next += 1
        others = [g for g in groups if g is not choice]
        for o in others + isolated:
            W[min(o["uid"], merged["uid"]), max(o["uid"], merged["uid"])] = w(o["uid"], choice["uid"]) + w(
                o["uid"], gk["uid"]
            )
        groups[:] = others + [merged]
        resort()

    fragments = [
        Fragment(frozenset(g["atoms"]), frozenset(g["atoms"]), tuple(g["origins"]), False) for g in groups
    ] + [Fragment(frozenset(g["atoms"]), frozenset(g["atoms"]), tuple(g["origins"]), True) for g in isolated]
    for f in fragments:
        owner[list(f.core)] = 0
    assert (owner == 0).all(), "fragment cores must cover every atom"
    return sorted(fragments, key=lambda f: tuple(sorted(f.core)))


# --------------------------------------------------------------------------
# step 4 / 4*
# --------------------------------------------------------------------------


def expand_explicit(
    mol: Molecule,
    fragments: Sequence[Fragment],
    subs: Sequence[Substructure],
    cfg: FragmentationConfig,
    K: np.ndarray | None = None,
) -> list[Fragment]:
    """Add every substructure whose bond order to the core reaches ``c_w``."""
    if K is None:
        K = pair_kernel_matrix(mol, cfg.bond_order_method)
    out = []
    for f in fragments:
        expanded = set(f.core)
        for s in subs:
            if s.atoms <= f.core:
                continue
            if _block_sum(K, f.core, s.atoms) >= cfg.c_w:
                expanded |= s.atoms
        out.append(Fragment(f.core, frozenset(expanded), f.origins, f.isolated))
    return out


def neighbor_fragments(mol: Molecule, fragments: Sequence[Fragment], r_c: float) -> dict[int, tuple[int, ...]]:
    """For every atom, ids of fragments that contain one of its neighbours within ``r_c``."""
    out = {}
    for i in range(mol.n_atoms):
        nbrs = neighbors_within(mol, i, r_c)
        out[i] = tuple(a for a, f in enumerate(fragments) if f.core & nbrs)
    return out


# --------------------------------------------------------------------------
# full pipeline
# --------------------------------------------------------------------------


@dataclass
class FragmentationTrace:
    """Intermediate results of :func:`fragment_molecule`, kept for inspection."""

    groups: list[frozenset[int]]
    rings: RingSet
    cleavable: set[int]
    substructures: list[Substructure]
    fragments: list[Fragment]
    hypergraph: Hypergraph


def fragment_molecule(
    mol: Molecule,
    patterns: Sequence[Pattern] | None = None,
    cfg: FragmentationConfig | None = None,
) -> FragmentationTrace:
    cfg = cfg or FragmentationConfig()
    patterns = load_patterns() if patterns is None else patterns
    rings = find_rings(mol)
    groups = find_functional_groups(mol, patterns, rings)
    cleavable = cleavable_bonds(mol, groups, rings)
    subs = bfs_substructures(mol, cleavable, groups, rings)
    K = pair_kernel_matrix(mol, cfg.bond_order_method)
    cores = merge_substructures(mol, subs, cfg, K)
    if cfg.overlap_mode == "explicit":
        frags = expand_explicit(mol, cores, subs, cfg, K)
        hg = Hypergraph(
            n=mol.n_atoms,
            mode="explicit",
            hyperedges=tuple(tuple(sorted(f.expanded)) for f in frags),
            cores=tuple(tuple(sorted(f.core)) for f in frags),
            config=cfg,
        )
    else:
        frags = list(cores)
        hg = Hypergraph(
            n=mol.n_atoms,
            mode="implicit",
            hyperedges=tuple(tuple(sorted(f.core)) for f in frags),
            cores=tuple(tuple(sorted(f.core)) for f in frags),
            neighbor_fragments=neighbor_fragments(mol, frags, cfg.r_c),
            config=cfg,
        )
    return FragmentationTrace(groups, rings, cleavable, subs, frags, hg)


def build_hypergraph(
    mol: Molecule,
    patterns: Sequence[Pattern] | None = None,
    cfg: FragmentationConfig | None = None,
) -> Hypergraph:
    return fragment_molecule(mol, patterns, cfg).hypergraph


def hypergraph_signature(hg: Hypergraph) -> tuple:
    """Label-independent comparison key: hyperedges and node attachments as sets."""
    attach = frozenset(
        (i, frozenset(frozenset(hg.hyperedges[a]) for a in edges)) for i, edges in enumerate(hg.node_edges())
    )
    return (hg.mode, hg.edge_sets(), attach)
