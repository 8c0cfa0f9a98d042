"""Hexahedral mesh container, boundary topology and VTK legacy I/O."""
from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

# Unit-cube coordinates of the 8 hex corners (VTK_HEXAHEDRON ordering).
CORNER_COORDS = np.array(
    [
        [0, 0, 0],
        [1, 0, 0],
        [1, 1, 0],
        [0, 1, 0],
        [0, 0, 1],
        [1, 0, 1],
        [1, 1, 1],
        [0, 1, 1],
    ],
    dtype=float,
)

# Quad faces as corner cycles, x=0, x=1, y=0, y=1, z=0, z=1.
HEX_FACES = (
    (0, 4, 7, 3),
    (1, 2, 6, 5),
    (0, 1, 5, 4),
    (3, 7, 6, 2),
    (0, 3, 2, 1),
    (4, 5, 6, 7),
)

VTK_HEXAHEDRON = 12


class MeshError(ValueError):
    """Malformed or unsupported mesh input."""


@dataclass
class HexMesh:
    """Vertex coordinates plus 8-node hexahedron connectivity.

    ``vertices`` is the optimisation variable and is mutated in place by the
    untangler; ``original_positions`` is a frozen snapshot taken at
    construction and never changes.
    """

    vertices: np.ndarray
    hexes: np.ndarray
    boundary_flags: np.ndarray = field(init=False)
    original_positions: np.ndarray = field(init=False)

    def __post_init__(self):
        self.vertices = np.array(self.vertices, dtype=float).reshape(-1, 3)
        self.hexes = np.array(self.hexes, dtype=np.int64).reshape(-1, 8)
        nv = len(self.vertices)
        if self.hexes.size and (self.hexes.min() < 0 or self.hexes.max() >= nv):
            raise MeshError("hex corner index out of range")
        for h, row in enumerate(self.hexes):
            if len(set(row.tolist())) != 8:
                raise MeshError(f"hex {h} has repeated corner indices")
        if not np.all(np.isfinite(self.vertices)):
            raise MeshError("non-finite vertex coordinates")
        self.boundary_flags, self._boundary_graph = compute_boundary(self)
        self.original_positions = self.vertices.copy()
        self.original_positions.flags.writeable = False
        self._vertex_hexes = None

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_hexes(self) -> int:
        return len(self.hexes)

    @property
    def boundary_graph(self) -> dict[int, list[int]]:
        return self._boundary_graph

    def hex_corners(self, h: int) -> np.ndarray:
        return self.vertices[self.hexes[h]]

    def all_hex_corners(self) -> np.ndarray:
        """(n_hexes, 8, 3) array of corner positions."""
        return self.vertices[self.hexes]

    def vertex_hexes(self) -> list[list[int]]:
        if self._vertex_hexes is None:
            vh = [[] for _ in range(self.n_vertices)]
            for h, row in enumerate(self.hexes):
                for v in row:
                    vh[v].append(h)
            self._vertex_hexes = vh
        return self._vertex_hexes

    def copy(self) -> "HexMesh":
        """Copy keeping this mesh's original_positions snapshot."""
        other = HexMesh(self.vertices.copy(), self.hexes.copy())
        other.original_positions = self.original_positions
        return other


def _face_key(verts) -> tuple[int, ...]:
    return tuple(sorted(int(v) for v in verts))


def compute_boundary(mesh: HexMesh) -> tuple[np.ndarray, dict[int, list[int]]]:
    """Flag vertices on boundary quads and build the boundary edge graph.

    A quad is on the boundary iff exactly one hex uses it.  Raises
    ``MeshError`` for a quad shared by more than two hexes.
    """
    faces: dict[tuple[int, ...], list[tuple[int, ...]]] = defaultdict(list)
    for row in mesh.hexes:
        for f in HEX_FACES:
            quad = tuple(int(row[c]) for c in f)
            faces[_face_key(quad)].append(quad)

    flags = np.zeros(mesh.n_vertices, dtype=bool)
    adj: dict[int, set[int]] = defaultdict(set)
    for key, uses in faces.items():
        if len(uses) > 2:
            raise MeshError(f"non-manifold face {key} shared by {len(uses)} hexes")
        if len(uses) == 1:
            quad = uses[0]
            flags[list(quad)] = True
            for i in range(4):
                a, b = quad[i], quad[(i + 1) % 4]
                adj[a].add(b)
                adj[b].add(a)
    graph = {v: sorted(n) for v, n in sorted(adj.items())}
    return flags, graph


def hex_vertex_neighbors(mesh: HexMesh, hex_id: int) -> set[int]:
    """Every other hex sharing at least one vertex with ``hex_id``."""
    vh = mesh.vertex_hexes()
    out = set()
    for v in mesh.hexes[hex_id]:
        out.update(vh[v])
    out.discard(hex_id)
    return out


# --- VTK legacy ASCII ---------------------------------------------------------


def _tokens(text: str):
    for line in text.splitlines():
        yield from line.split()


def load_mesh(path) -> HexMesh:
    """Read a VTK legacy ASCII unstructured grid of 8-node hexahedra."""
    path = Path(path)
    text = path.read_text()
    lines = text.splitlines()
    if len(lines) < 4 or not lines[0].startswith("# vtk DataFile"):
        raise MeshError("missing VTK legacy header")
    if lines[2].strip().upper() != "ASCII":
        raise MeshError("only ASCII VTK files are supported")
    body = lines[3:]
    tok = list(_tokens("\n".join(body)))
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(tok):
            raise MeshError("unexpected end of file")
        out = tok[pos : pos + n]
        pos += n
        return out

    points = cells = types = None
    try:
        while pos < len(tok):
            kw = tok[pos].upper()
            pos += 1
            if kw == "DATASET":
                kind = take(1)[0].upper()
                if kind != "UNSTRUCTURED_GRID":
                    raise MeshError(f"unsupported dataset {kind}")
            elif kw == "POINTS":
                n, _dtype = take(2)
                n = int(n)
                points = np.array([float(t) for t in take(3 * n)]).reshape(n, 3)
            elif kw == "CELLS":
                n, size = (int(t) for t in take(2))
                raw = [int(t) for t in take(size)]
                cells, i = [], 0
                for _ in range(n):
                    k = raw[i]
                    if k != 8:
                        raise MeshError(f"unsupported cell with {k} nodes")
                    cells.append(raw[i + 1 : i + 1 + k])
                    i += k + 1
                if i != size:
                    raise MeshError("CELLS size mismatch")
            elif kw == "CELL_TYPES":
                n = int(take(1)[0])
                types = [int(t) for t in take(n)]
            elif kw in ("POINT_DATA", "CELL_DATA"):
                break
            else:
                raise MeshError(f"unexpected keyword {tok[pos - 1]!r}")
    except ValueError as exc:
        if isinstance(exc, MeshError):
            raise
        raise MeshError(f"parse error: {exc}") from exc

    if points is None or cells is None:
        raise MeshError("file lacks POINTS or CELLS section")
    if types is not None:
        if len(types) != len(cells):
            raise MeshError("CELL_TYPES count does not match CELLS")
        bad = [t for t in types if t != VTK_HEXAHEDRON]
        if bad:
            raise MeshError(f"unsupported cell type {bad[0]}")
    return HexMesh(points, np.array(cells, dtype=np.int64).reshape(-1, 8))


def save_mesh(mesh: HexMesh, path, title: str = "hexuntangle mesh") -> None:
    path = Path(path)
    out = [
        "# vtk DataFile Version 3.0",
        title,
        "ASCII",
        "DATASET UNSTRUCTURED_GRID",
        f"POINTS {mesh.n_vertices} double",
    ]
    out.extend(" ".join(f"{c:.17g}" for c in p) for p in mesh.vertices)
    out.append(f"CELLS {mesh.n_hexes} {9 * mesh.n_hexes}")
    out.extend("8 " + " ".join(str(int(i)) for i in row) for row in mesh.hexes)
    out.append(f"CELL_TYPES {mesh.n_hexes}")
    out.extend(str(VTK_HEXAHEDRON) for _ in range(mesh.n_hexes))
    path.write_text("\n".join(out) + "\n")
