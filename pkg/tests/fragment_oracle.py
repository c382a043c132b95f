"""Brute-force reference for the fragmentation of small molecules.

Used only to derive and cross-check the frozen golden files.  It shares no
code with ``se3set.fragment``: functional groups are supplied by hand,
components come from networkx, radii are typed in below and every pair
kernel is a plain ``math.exp`` in a double loop.  It covers molecules whose
substructures already meet ``n_min`` (the merge loop never fires), which is
true of both golden molecules.
"""

import math

import networkx as nx

RADII = {1: 0.31, 6: 0.76, 7: 0.71, 8: 0.66}


def kernel(d, d_eq, method):
    if method == "lendvay":
        return math.exp(-(d - d_eq) * d_eq / 0.25**2)
    return math.exp(-(d - d_eq))


def pair_sum(mol, A, B, method):
    total = 0.0
    for i in sorted(A):
        for j in sorted(B):
            zi, zj = mol.atoms[i].atomic_number, mol.atoms[j].atomic_number
            d = math.dist(mol.atoms[i].position, mol.atoms[j].position)
            total += kernel(d, RADII[zi] + RADII[zj], method)
    return total


def substructures(mol, groups):
    """Components after cutting single heavy-heavy bonds not inside a group."""
    g = nx.Graph()
    g.add_nodes_from(range(mol.n_atoms))
    for b in mol.bonds:
        heavy = mol.atoms[b.i].atomic_number > 1 and mol.atoms[b.j].atomic_number > 1
        inside = any(b.i in s and b.j in s for s in groups)
        if heavy and b.order < 1.5 and not inside:
            continue
        g.add_edge(b.i, b.j)
    return sorted((frozenset(c) for c in nx.connected_components(g)), key=min)


def explicit_hyperedges(mol, groups, n_min, c_w, method):
    subs = substructures(mol, groups)
    assert all(len(s) >= n_min for s in subs), "oracle only covers merge-free cases"
    edges, weights = [], {}
    for core in subs:
        expanded = set(core)
        for s in subs:
            if s == core:
                continue
            w = pair_sum(mol, core, s, method)
            weights[(min(core), min(s))] = w
            if w >= c_w:
                expanded |= s
        edges.append(sorted(expanded))
    return [sorted(s) for s in subs], edges, weights
