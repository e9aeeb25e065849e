"""Molecular graph featurization.

Turns a parsed :class:`~molcalib.smiles.Molecule` into dense numpy arrays:
a node feature matrix ``X`` of shape (N, 58) and an adjacency matrix ``A``
of shape (N, N) that already contains self-loops (bond adjacency plus the
identity) with no degree normalization.

Node feature layout, 58 columns total:

====================================  =====
element one-hot (vocabulary + other)    24
degree one-hot (0..6)                    7
implicit hydrogen one-hot (0..4)         5
formal charge one-hot (-2..+2, clip)     5
aromatic flag                            1
ring membership flag                     1
bond-order-sum bucket (1..6)             6
reserved zero padding                    9
====================================  =====

The bond-order-sum bucket is a hybridization proxy: floor of the heavy-atom
bond order sum plus the hydrogen count, clipped to [1, 6].  Attributes with
no guard slot (degree, hydrogen count) raise :class:`FeatureError` when they
fall outside their bins; charge clips, elements fall back to "other".
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import FeatureError
from .smiles import Atom, Bond, Molecule, VOCABULARY


@dataclass(frozen=True)
class FeatureSchema:
    """Column layout of the node feature matrix."""

    elements: tuple[str, ...] = VOCABULARY
    max_degree: int = 6
    max_hydrogens: int = 4
    max_abs_charge: int = 2
    num_buckets: int = 6
    padding: int = 9

    @property
    def width(self) -> int:
        return (
            len(self.elements) + 1
            + self.max_degree + 1
            + self.max_hydrogens + 1
            + 2 * self.max_abs_charge + 1
            + 2
            + self.num_buckets
            + self.padding
        )


DEFAULT_SCHEMA = FeatureSchema()


@dataclass
class MolecularGraph:
    """Featurized molecule: node features, self-looped adjacency, metadata."""

    node_features: np.ndarray
    adjacency: np.ndarray
    label: int | None = None
    source_id: str | None = None
    smiles: str = ""

    @property
    def num_nodes(self) -> int:
        return self.node_features.shape[0]


def atom_features(atom: Atom, in_ring: bool, order_sum: float,
                  schema: FeatureSchema = DEFAULT_SCHEMA) -> np.ndarray:
    row = np.zeros(schema.width, dtype=np.float64)
    offset = 0

    try:
        row[offset + schema.elements.index(atom.symbol)] = 1.0
    except ValueError:
        row[offset + len(schema.elements)] = 1.0  # "other" guard
    offset += len(schema.elements) + 1

    if atom.degree > schema.max_degree:
        raise FeatureError(
            f"degree {atom.degree} exceeds schema maximum {schema.max_degree}"
        )
    row[offset + atom.degree] = 1.0
    offset += schema.max_degree + 1

    h = atom.implicit_hydrogens
    if h > schema.max_hydrogens:
        raise FeatureError(
            f"hydrogen count {h} exceeds schema maximum {schema.max_hydrogens}"
        )
    row[offset + h] = 1.0
    offset += schema.max_hydrogens + 1

    charge = int(np.clip(atom.formal_charge, -schema.max_abs_charge,
                         schema.max_abs_charge))
    row[offset + charge + schema.max_abs_charge] = 1.0
    offset += 2 * schema.max_abs_charge + 1

    row[offset] = 1.0 if atom.aromatic else 0.0
    row[offset + 1] = 1.0 if in_ring else 0.0
    offset += 2

    bucket = min(max(math.floor(order_sum + h), 1), schema.num_buckets)
    row[offset + bucket - 1] = 1.0
    return row


def featurize(mol: Molecule, schema: FeatureSchema = DEFAULT_SCHEMA,
              label: int | None = None,
              source_id: str | None = None) -> MolecularGraph:
    """Build the (X, A) pair for one molecule.

    A is bond adjacency plus the identity; every node sees itself.
    """
    n = mol.num_atoms
    ring = mol.ring_atoms()
    x = np.zeros((n, schema.width), dtype=np.float64)
    for i, atom in enumerate(mol.atoms):
        x[i] = atom_features(atom, i in ring, mol.bond_order_sum(i), schema)
    a = np.zeros((n, n), dtype=np.float64)
    for b in mol.bonds:
        a[b.a1, b.a2] = 1.0
        a[b.a2, b.a1] = 1.0
    np.fill_diagonal(a, 1.0)
    return MolecularGraph(node_features=x, adjacency=a, label=label,
                          source_id=source_id, smiles=mol.smiles)


def strip_to_largest_component(mol: Molecule) -> Molecule:
    """Keep the largest connected fragment (salt stripping).

    Ties go to the fragment containing the lowest original atom index, which
    is the first one in component order.
    """
    comps = mol.connected_components()
    if len(comps) <= 1:
        return mol
    best = max(comps, key=len)  # max() keeps the earliest on ties
    remap = {old: new for new, old in enumerate(best)}
    atoms = []
    for old in best:
        src = mol.atoms[old]
        atoms.append(Atom(
            symbol=src.symbol, aromatic=src.aromatic,
            formal_charge=src.formal_charge,
            explicit_hydrogens=src.explicit_hydrogens,
            isotope=src.isotope, index=remap[old], degree=src.degree,
            implicit_hydrogens=src.implicit_hydrogens,
            bracketed=src.bracketed,
        ))
    keep = set(best)
    bonds = [Bond(a1=remap[b.a1], a2=remap[b.a2], order=b.order)
             for b in mol.bonds if b.a1 in keep]
    return Molecule(atoms=atoms, bonds=bonds, smiles=mol.smiles)


def permute_graph(graph: MolecularGraph, perm: np.ndarray) -> MolecularGraph:
    """Relabel nodes: new node i is old node perm[i]."""
    perm = np.asarray(perm)
    return MolecularGraph(
        node_features=graph.node_features[perm],
        adjacency=graph.adjacency[np.ix_(perm, perm)],
        label=graph.label, source_id=graph.source_id, smiles=graph.smiles,
    )
