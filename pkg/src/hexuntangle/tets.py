"""The 58 non-degenerate corner tetrahedra of the unit cube."""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from itertools import combinations

import numpy as np

from .mesh import CORNER_COORDS


def tet_jacobian(p0, p1, p2, p3) -> np.ndarray:
    """Edge matrix with columns ``p1 - p0``, ``p2 - p0``, ``p3 - p0``."""
    p0 = np.asarray(p0, dtype=float)
    return np.column_stack([np.asarray(p, dtype=float) - p0 for p in (p1, p2, p3)])


@dataclass(frozen=True)
class TetPattern:
    corners: tuple[int, int, int, int]
    inv_target_jacobian: np.ndarray
    target_det: float
    is_corner_tet: bool

    @property
    def target_volume(self) -> float:
        return self.target_det / 6.0


@dataclass(frozen=True)
class TetTable:
    patterns: tuple[TetPattern, ...]
    candidates: int

    def __len__(self):
        return len(self.patterns)

    def __iter__(self):
        return iter(self.patterns)

    def __getitem__(self, i):
        return self.patterns[i]

    @property
    def corner_ids(self) -> np.ndarray:
        return np.array([i for i, p in enumerate(self.patterns) if p.is_corner_tet])

    @property
    def corners_array(self) -> np.ndarray:
        """(58, 4) corner indices."""
        return np.array([p.corners for p in self.patterns], dtype=np.int64)

    @property
    def inv_targets(self) -> np.ndarray:
        """(58, 3, 3) stack of S^-1."""
        return np.stack([p.inv_target_jacobian for p in self.patterns])

    @property
    def target_dets(self) -> np.ndarray:
        return np.array([p.target_det for p in self.patterns])

    @property
    def volumes(self) -> np.ndarray:
        return self.target_dets / 6.0


# corner index -> 3-bit code of its unit-cube coordinates
_CODES = [int(x) | int(y) << 1 | int(z) << 2 for x, y, z in CORNER_COORDS]


def _is_corner_set(ids) -> bool:
    # one corner adjacent (Hamming distance 1) to the other three
    codes = [_CODES[i] for i in ids]
    return any(sum(bin(a ^ b).count("1") == 1 for b in codes) == 3 for a in codes)


@lru_cache(maxsize=None)
def enumerate_tet_patterns() -> TetTable:
    cand = np.array(list(combinations(range(8), 4)))
    P = CORNER_COORDS[cand]  # (70, 4, 3)
    S = (P[:, 1:] - P[:, :1]).transpose(0, 2, 1)  # columns are edges
    # 0/1 coordinates -> integer determinant, rounding is exact
    det = np.rint(np.linalg.det(S)).astype(int)
    keep = det != 0
    ids, det = cand[keep], det[keep]
    flip = det < 0
    ids[flip] = ids[flip][:, [0, 1, 3, 2]]
    S = S[keep]
    S[flip] = S[flip][:, :, [0, 2, 1]]
    inv = np.linalg.inv(S)
    inv.flags.writeable = False
    patterns = tuple(
        TetPattern(tuple(int(i) for i in c), inv[k], float(abs(d)), _is_corner_set(c))
        for k, (c, d) in enumerate(zip(ids.tolist(), det.tolist()))
    )
    return TetTable(patterns, len(cand))


def corner_tet_patterns(table: TetTable | None = None) -> list[TetPattern]:
    table = table or enumerate_tet_patterns()
    return [p for p in table if p.is_corner_tet]


def corner_pattern_for(c: int, table: TetTable | None = None) -> TetPattern:
    """Corner tet anchored at cube corner ``c``."""
    nb = {i for i in range(8) if np.abs(CORNER_COORDS[i] - CORNER_COORDS[c]).sum() == 1}
    target = nb | {c}
    for p in corner_tet_patterns(table):
        if set(p.corners) == target:
            return p
    raise KeyError(c)


def dump_csv(table: TetTable | None = None) -> str:
    table = table or enumerate_tet_patterns()
    rows = ["index,c0,c1,c2,c3,det_s,corner"]
    for i, p in enumerate(table):
        rows.append(",".join(map(str, (i, *p.corners, int(p.target_det), int(p.is_corner_tet)))))
    return "\n".join(rows) + "\n"
