"""SE(3)-equivariant hypergraph networks over overlapping molecular fragments."""

__version__ = "0.1.0"
