"""Boundary-movement statistics between an input and an output mesh."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mesh import HexMesh, MeshError


def displacement(before, after) -> float:
    return float(np.linalg.norm(np.asarray(after, dtype=float) - np.asarray(before, dtype=float)))


def neighbor_scale(vertex: int, graph: dict, positions) -> float:
    """Mean distance from ``vertex`` to its boundary neighbours."""
    nbrs = graph.get(int(vertex), [])
    if not nbrs:
        raise MeshError(f"boundary vertex {vertex} has no boundary neighbours")
    positions = np.asarray(positions, dtype=float)
    return float(np.mean(np.linalg.norm(positions[nbrs] - positions[vertex], axis=1)))


@dataclass
class BoundaryMovementReport:
    avg_all: float
    avg_movable: float
    max: float
    scaled_avg_all: float
    scaled_avg_movable: float
    scaled_max: float
    n_boundary: int
    n_movable: int
    per_vertex: list  # (vertex, d, d_scaled)

    def format(self) -> str:
        def e(v):
            return f"{v:.6E}"

        return "\n".join(
            [
                f"boundary vertices: {self.n_boundary}  movable: {self.n_movable}",
                f"bnd movement (avg) all: {e(self.avg_all)}  movable: {e(self.avg_movable)}  (max): {e(self.max)}",
                f"bnd movement scaled (avg) all: {e(self.scaled_avg_all)}  movable: {e(self.scaled_avg_movable)}  (max): {e(self.scaled_max)}",
            ]
        )

    def to_csv(self) -> str:
        rows = ["vertex,d,d_scaled"] + [f"{v},{d:.17g},{s:.17g}" for v, d, s in self.per_vertex]
        return "\n".join(rows) + "\n"


def boundary_report(before: HexMesh, after: HexMesh, ever_unlocked=()) -> BoundaryMovementReport:
    """Compare boundary vertex positions; the length scale comes from ``before``."""
    if before.n_vertices != after.n_vertices or not np.array_equal(before.hexes, after.hexes):
        raise MeshError("meshes do not share connectivity")
    bnd = np.flatnonzero(before.boundary_flags)
    graph = before.boundary_graph
    src = before.vertices
    d = np.linalg.norm(after.vertices[bnd] - src[bnd], axis=1)
    lbar = np.array([neighbor_scale(v, graph, src) for v in bnd])
    ds = d / lbar
    movable = sorted(int(v) for v in ever_unlocked)
    pos = {int(v): i for i, v in enumerate(bnd)}
    midx = [pos[v] for v in movable if v in pos]

    def mean(a):
        return float(a.mean()) if len(a) else 0.0

    return BoundaryMovementReport(
        avg_all=mean(d),
        avg_movable=mean(d[midx]),
        max=float(d.max()) if len(d) else 0.0,
        scaled_avg_all=mean(ds),
        scaled_avg_movable=mean(ds[midx]),
        scaled_max=float(ds.max()) if len(ds) else 0.0,
        n_boundary=len(bnd),
        n_movable=len(midx),
        per_vertex=[(int(v), float(a), float(b)) for v, a, b in zip(bnd, d, ds)],
    )
