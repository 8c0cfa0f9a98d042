"""Synthetic hex meshes used by tests, benchmarks and the ``fixture`` command."""
from __future__ import annotations

import numpy as np

from .mesh import HexMesh


def block_mesh(nx: int, ny: int | None = None, nz: int | None = None, spacing: float = 1.0) -> HexMesh:
    """Structured block of ``nx * ny * nz`` axis-aligned cubes."""
    ny = nx if ny is None else ny
    nz = nx if nz is None else nz

    def vid(i, j, k):
        return i + (nx + 1) * (j + (ny + 1) * k)

    verts = [
        (i * spacing, j * spacing, k * spacing)
        for k in range(nz + 1)
        for j in range(ny + 1)
        for i in range(nx + 1)
    ]
    hexes = []
    for k in range(nz):
        for j in range(ny):
            for i in range(nx):
                hexes.append(
                    [
                        vid(i, j, k),
                        vid(i + 1, j, k),
                        vid(i + 1, j + 1, k),
                        vid(i, j + 1, k),
                        vid(i, j, k + 1),
                        vid(i + 1, j, k + 1),
                        vid(i + 1, j + 1, k + 1),
                        vid(i, j + 1, k + 1),
                    ]
                )
    return HexMesh(np.array(verts), np.array(hexes))


def _with_positions(mesh: HexMesh, verts: np.ndarray) -> HexMesh:
    # the returned mesh treats the broken positions as its input snapshot
    return HexMesh(verts, mesh.hexes.copy())


def displaced_center(offset=(0.0, 0.0, 1.5)) -> HexMesh:
    """2x2x2 block whose single interior vertex is pushed out through the top."""
    base = block_mesh(2)
    verts = base.vertices.copy()
    center = int(np.flatnonzero(~base.boundary_flags)[0])
    verts[center] += np.asarray(offset, dtype=float)
    return _with_positions(base, verts)


def stress_block(seed: int, n: int = 5) -> HexMesh:
    """n^3 block with every interior vertex drawn uniformly in the bounding box."""
    rng = np.random.default_rng(seed)
    base = block_mesh(n)
    verts = base.vertices.copy()
    interior = np.flatnonzero(~base.boundary_flags)
    verts[interior] = rng.uniform(0.0, float(n), size=(len(interior), 3))
    return _with_positions(base, verts)


def folded_boundary(shift: float = 1.3) -> HexMesh:
    """Displaced-center block plus a top-face vertex slid past the block edge.

    The top boundary quads around the slid vertex fold over, so no valid mesh
    exists without moving that boundary vertex.
    """
    base = displaced_center()
    verts = base.vertices.copy()
    ref = block_mesh(2).vertices
    top_center = int(np.flatnonzero(np.all(np.isclose(ref, [1.0, 1.0, 2.0]), axis=1))[0])
    verts[top_center, 0] += shift
    return _with_positions(base, verts)


def random_hex(rng: np.random.Generator, radius: float) -> np.ndarray:
    """Unit-cube corners each moved uniformly inside a ball of ``radius``."""
    from .mesh import CORNER_COORDS

    d = rng.normal(size=(8, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    r = radius * rng.uniform(size=(8, 1)) ** (1.0 / 3.0)
    return CORNER_COORDS + d * r


def interior_inversion(seed: int = 258, amplitude: float = 0.45) -> HexMesh:
    """3x3x3 block with jittered interior vertices.

    With the default seed the centre hex (id 13) has positive determinants at
    all eight corners yet is negative somewhere inside, so only the Bezier
    test catches it.
    """
    rng = np.random.default_rng(seed)
    base = block_mesh(3)
    verts = base.vertices.copy()
    interior = np.flatnonzero(~base.boundary_flags)
    verts[interior] += rng.uniform(-amplitude, amplitude, size=(len(interior), 3))
    return _with_positions(base, verts)
