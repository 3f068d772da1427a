"""Desk-scale laboratory for monotone decompositions of grid continua and
continuum-wise expansive surface dynamics.

Subpackages: geometry (spaces, cell sets, hyperspace metrics), decomposition
(monotone partitions and their diagnostics), graphlike (graph-like continua
and vertical flows), dynamics (surface maps and finite-horizon plaques),
atlas (compatible box families, leaves, plaque metric), cli (scenario runner).
"""

__version__ = "0.1.0"
