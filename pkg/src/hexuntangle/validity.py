"""Hexahedron validity: corner-tet, 58-tet and Bernstein-Bezier tests.

The Jacobian determinant of a trilinear hex is triquadratic, so it has an
exact representation in the degree-2 tensor Bernstein basis.  Its 27
control values bound the determinant on the box; de Casteljau bisection
tightens the bounds until the sign is decided.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .energy import composed_determinants
from .mesh import CORNER_COORDS, HexMesh
from .tets import TetTable, enumerate_tet_patterns

DEFAULT_MAX_DEPTH = 8


class HexClass(enum.Enum):
    VALID = "valid"
    INVALID = "invalid"
    UNKNOWN = "unknown"


METHODS = ("corner", "58tet", "bezier")

# sign of the shape-function derivative along each axis, per corner
_SIGN = 2.0 * CORNER_COORDS - 1.0

# Lagrange values at {0, 1/2, 1} -> degree-2 Bernstein coefficients
_TO_BERNSTEIN = np.array([[1.0, 0.0, 0.0], [-0.5, 2.0, -0.5], [0.0, 0.0, 1.0]])
_SPLIT_LO = np.array([[1.0, 0.0, 0.0], [0.5, 0.5, 0.0], [0.25, 0.5, 0.25]])
_SPLIT_HI = np.array([[0.25, 0.5, 0.25], [0.0, 0.5, 0.5], [0.0, 0.0, 1.0]])
_GRID = np.array([[i, j, k] for i in (0, 0.5, 1) for j in (0, 0.5, 1) for k in (0, 0.5, 1)])


def shape_gradients(points) -> np.ndarray:
    """d N_c / d xi_j for the 8 trilinear shape functions, shape (P, 8, 3)."""
    u = np.asarray(points, dtype=float).reshape(-1, 3)
    # factor per (point, corner, axis): xi if corner bit set else 1 - xi
    fac = np.where(CORNER_COORDS[None] > 0, u[:, None, :], 1.0 - u[:, None, :])
    out = np.empty((len(u), 8, 3))
    out[..., 0] = _SIGN[None, :, 0] * fac[..., 1] * fac[..., 2]
    out[..., 1] = _SIGN[None, :, 1] * fac[..., 0] * fac[..., 2]
    out[..., 2] = _SIGN[None, :, 2] * fac[..., 0] * fac[..., 1]
    return out


def trilinear_det(corners, points) -> np.ndarray:
    """det of the trilinear map's Jacobian at reference points.

    ``corners`` is (8, 3) or (H, 8, 3); result is (P,) or (H, P).
    """
    corners = np.asarray(corners, dtype=float)
    dN = shape_gradients(points)
    J = np.einsum("...ci,pcj->...pij", corners, dN)
    return np.linalg.det(J)


@dataclass
class BezierPatch:
    """Control values b[i, j, k] of det J over the box ``[lo, lo + size]``."""

    values: np.ndarray
    depth: int = 0
    lo: np.ndarray = field(default_factory=lambda: np.zeros(3))
    size: np.ndarray = field(default_factory=lambda: np.ones(3))

    def evaluate(self, points) -> np.ndarray:
        """Evaluate at points given in reference-cube coordinates."""
        t = (np.asarray(points, dtype=float).reshape(-1, 3) - self.lo) / self.size
        B = np.stack([(1 - t) ** 2, 2 * t * (1 - t), t**2], axis=-1)
        return np.einsum("ijk,pi,pj,pk->p", self.values, B[:, 0], B[:, 1], B[:, 2])

    def corner_values(self) -> np.ndarray:
        return self.values[::2, ::2, ::2]


def control_values(corners) -> BezierPatch:
    return BezierPatch(_control_values_batch(np.asarray(corners, dtype=float)[None])[0])


def _control_values_batch(corners) -> np.ndarray:
    L = trilinear_det(corners, _GRID).reshape(-1, 3, 3, 3)
    M = _TO_BERNSTEIN
    return np.einsum("ai,bj,ck,hijk->habc", M, M, M, L)


def subdivide(patch: BezierPatch, axis: int, half: int) -> BezierPatch:
    """De Casteljau split at t = 1/2 along ``axis``; ``half`` 0 keeps the low part."""
    S = _SPLIT_LO if half == 0 else _SPLIT_HI
    vals = np.moveaxis(np.tensordot(S, patch.values, axes=([1], [axis])), 0, axis)
    size = patch.size.copy()
    size[axis] /= 2.0
    lo = patch.lo.copy()
    if half:
        lo[axis] += size[axis]
    return BezierPatch(vals, patch.depth, lo, size)


def _children(patch: BezierPatch):
    for hx in (0, 1):
        px = subdivide(patch, 0, hx)
        for hy in (0, 1):
            py = subdivide(px, 1, hy)
            for hz in (0, 1):
                c = subdivide(py, 2, hz)
                c.depth = patch.depth + 1
                yield c


def _classify_patch(root: BezierPatch, max_depth: int) -> HexClass:
    stack = [root]
    while stack:
        p = stack.pop()
        b = p.values
        # corner control values are exact determinant values
        if p.corner_values().min() <= 0.0:
            return HexClass.INVALID
        if b.min() > 0.0:
            continue
        if p.depth >= max_depth:
            return HexClass.INVALID
        stack.extend(_children(p))
    return HexClass.VALID


def bezier_validity(corners, max_depth: int = DEFAULT_MAX_DEPTH) -> HexClass:
    if max_depth < 0:
        raise ValueError("max_depth must be >= 0")
    return _classify_patch(control_values(corners), max_depth)


def corner_tet_test(corners, table: TetTable | None = None) -> HexClass:
    table = table or enumerate_tet_patterns()
    d = composed_determinants(np.asarray(corners, dtype=float)[None], table, table.corner_ids)[0]
    return HexClass.INVALID if np.any(d <= 0) else HexClass.UNKNOWN


def tets58_test(corners, table: TetTable | None = None) -> HexClass:
    table = table or enumerate_tet_patterns()
    d = composed_determinants(np.asarray(corners, dtype=float)[None], table)[0]
    return HexClass.VALID if np.all(d > 0) else HexClass.UNKNOWN


@dataclass
class ValidityReport:
    classes: list
    det_min: float
    method: str
    corner_det_min: np.ndarray

    @property
    def invalid_count(self) -> int:
        return sum(c is not HexClass.VALID for c in self.classes)

    @property
    def invalid_ids(self) -> list[int]:
        return [h for h, c in enumerate(self.classes) if c is not HexClass.VALID]

    @property
    def valid(self) -> bool:
        return self.invalid_count == 0

    def to_csv(self) -> str:
        rows = ["hex,class,min_corner_det"]
        rows += [f"{h},{c.value},{d:.17g}" for h, (c, d) in enumerate(zip(self.classes, self.corner_det_min))]
        return "\n".join(rows) + "\n"


def classify_hexes(corners, method: str = "bezier", table: TetTable | None = None, max_depth: int = DEFAULT_MAX_DEPTH):
    """Per-hex classes plus the (H, 58) composed determinant array.

    For ``corner`` a hex passing the necessary test counts as valid; for
    ``58tet`` an inconclusive result counts as invalid.
    """
    if method not in METHODS:
        raise ValueError(f"unknown validity method {method!r}")
    table = table or enumerate_tet_patterns()
    corners = np.asarray(corners, dtype=float).reshape(-1, 8, 3)
    dets = composed_determinants(corners, table)
    corner_bad = np.any(dets[:, table.corner_ids] <= 0, axis=1)
    all_pos = np.all(dets > 0, axis=1)
    if method == "corner":
        classes = [HexClass.INVALID if bad else HexClass.VALID for bad in corner_bad]
    elif method == "58tet":
        classes = [HexClass.VALID if ok else HexClass.INVALID for ok in all_pos]
    else:
        B = _control_values_batch(corners) if len(corners) else np.zeros((0, 3, 3, 3))
        classes = []
        for h in range(len(corners)):
            if B[h, ::2, ::2, ::2].min() <= 0:
                classes.append(HexClass.INVALID)
            elif B[h].min() > 0:
                classes.append(HexClass.VALID)
            else:
                classes.append(_classify_patch(BezierPatch(B[h]), max_depth))
    return classes, dets


def mesh_validity(mesh: HexMesh, method: str = "bezier", table: TetTable | None = None, max_depth: int = DEFAULT_MAX_DEPTH) -> ValidityReport:
    table = table or enumerate_tet_patterns()
    classes, dets = classify_hexes(mesh.all_hex_corners(), method, table, max_depth)
    det_min = float(dets.min()) if dets.size else np.inf
    corner_min = dets[:, table.corner_ids].min(axis=1) if dets.size else np.zeros(0)
    return ValidityReport(classes, det_min, method, corner_min)
