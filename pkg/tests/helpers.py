"""Fixture builders shared by the untangler tests and the acceptance suite."""
import numpy as np

from hexuntangle.fixtures import block_mesh
from hexuntangle.mesh import HexMesh


def two_separate_tangles() -> HexMesh:
    """6x2x2 block with two interior vertices pushed through the top.

    The two groups of inverted hexes share no vertex, so they form two blobs.
    """
    base = block_mesh(6, 2, 2)
    V = base.vertices.copy()
    for i in (1, 5):
        v = int(np.flatnonzero(np.all(np.isclose(V, [i, 1, 1]), axis=1))[0])
        V[v] += [0.0, 0.0, 1.5]
    return HexMesh(V, base.hexes)


def monotone_violations(records) -> int:
    return sum(r.f_after > r.f_before for r in records)
