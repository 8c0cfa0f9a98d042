"""Reference implementations used only by the tests.

They deliberately avoid the package's numerics: exact arithmetic for the tet
table, direct evaluation of the trilinear map for determinants, and
high-precision scalar loops for the energy.
"""
from __future__ import annotations

from itertools import combinations, product

import mpmath
import numpy as np
import sympy

CUBE = [(i & 1 ^ (i >> 1) & 1, (i >> 1) & 1, (i >> 2) & 1) for i in range(8)]  # VTK order
assert CUBE == [(0, 0, 0), (1, 0, 0), (1, 1, 0), (0, 1, 0), (0, 0, 1), (1, 0, 1), (1, 1, 1), (0, 1, 1)]


def brute_force_tets():
    """(candidates, kept sets with |det|) by exact determinants and ranks."""
    kept = []
    n = 0
    for ids in combinations(range(8), 4):
        n += 1
        p = [sympy.Matrix(CUBE[i]) for i in ids]
        S = sympy.Matrix.hstack(p[1] - p[0], p[2] - p[0], p[3] - p[0])
        d = S.det()
        assert (d != 0) == (S.rank() == 3)
        if d != 0:
            kept.append((frozenset(ids), abs(int(d))))
    return n, kept


def trilinear_map(corners, xi):
    """x(xi) for corners (H, 8, 3) at points xi (P, 3): result (H, P, 3)."""
    corners = np.asarray(corners, dtype=float)
    xi = np.asarray(xi, dtype=float)
    out = np.zeros(corners.shape[:1] + (len(xi), 3))
    for c, (a, b, g) in enumerate(CUBE):
        w = (xi[:, 0] if a else 1 - xi[:, 0]) * (xi[:, 1] if b else 1 - xi[:, 1]) * (xi[:, 2] if g else 1 - xi[:, 2])
        out += w[None, :, None] * corners[:, c][:, None, :]
    return out


def trilinear_det_fd(corners, xi, h=0.5):
    """det J by central differences.  The map is affine in each reference
    coordinate separately, so the difference quotient is exact for any h."""
    xi = np.asarray(xi, dtype=float)
    cols = []
    for j in range(3):
        e = np.zeros(3)
        e[j] = h
        cols.append((trilinear_map(corners, xi + e) - trilinear_map(corners, xi - e)) / (2 * h))
    J = np.stack(cols, axis=-1)
    return np.linalg.det(J)


def dense_grid(n=21):
    t = np.linspace(0.0, 1.0, n)
    return np.array(list(product(t, t, t)))


def dense_det_min(corners, n=21, chunk=128):
    """Per-hex minimum of det J over an n^3 grid of the reference cube.

    The map is evaluated on the grid padded by one step on every side, from
    the 1D linear weights in each direction; derivatives are central
    differences between grid neighbours (exact for a multilinear map).
    """
    corners = np.asarray(corners, dtype=float).reshape(-1, 8, 3)
    h = 1.0 / (n - 1)
    t = np.linspace(-h, 1.0 + h, n + 2)
    W = np.stack([1.0 - t, t])  # (2, n + 2): weight of the 0 / 1 corner
    # corners indexed by bits (a, b, g) of their cube coordinates
    by_bits = np.empty((len(corners), 2, 2, 2, 3))
    for c, (a, b, g) in enumerate(CUBE):
        by_bits[:, a, b, g] = corners[:, c]
    out = np.empty(len(corners))
    for s in range(0, len(corners), chunk):
        X = np.einsum("ai,bj,gk,habgd->hijkd", W, W, W, by_bits[s : s + chunk], optimize=True)
        dx = (X[:, 2:, 1:-1, 1:-1] - X[:, :-2, 1:-1, 1:-1]) / (2 * h)
        dy = (X[:, 1:-1, 2:, 1:-1] - X[:, 1:-1, :-2, 1:-1]) / (2 * h)
        dz = (X[:, 1:-1, 1:-1, 2:] - X[:, 1:-1, 1:-1, :-2]) / (2 * h)
        det = np.einsum("...i,...i->...", dx, np.cross(dy, dz))
        out[s : s + chunk] = det.reshape(len(det), -1).min(axis=1)
    return out


def dense_det_min_pointwise(corners, n=21):
    """Slow reference for :func:`dense_det_min` (used to cross-check it)."""
    corners = np.asarray(corners, dtype=float).reshape(-1, 8, 3)
    return trilinear_det_fd(corners, dense_grid(n)).min(axis=1)


# --- high precision energy -------------------------------------------------------


def _mdet(M):
    return (
        M[0][0] * (M[1][1] * M[2][2] - M[1][2] * M[2][1])
        - M[0][1] * (M[1][0] * M[2][2] - M[1][2] * M[2][0])
        + M[0][2] * (M[1][0] * M[2][1] - M[1][1] * M[2][0])
    )


def _minv(M):
    d = _mdet(M)
    return [
        [(M[(j + 1) % 3][(i + 1) % 3] * M[(j + 2) % 3][(i + 2) % 3] - M[(j + 1) % 3][(i + 2) % 3] * M[(j + 2) % 3][(i + 1) % 3]) / d for j in range(3)]
        for i in range(3)
    ]


def _edge(pts):
    return [[pts[k + 1][r] - pts[0][r] for k in range(3)] for r in range(3)]


def energy_mp(X, hexes, pairs, eps, lam=0.0, penalty=0.0, unlocked=(), X0=None, dps=40):
    """F at flat coordinates X, evaluated tet by tet in mpmath.

    ``pairs`` is a list of (hex id, 4 local corner ids).
    """
    with mpmath.workdps(dps):
        V = [[mpmath.mpf(c) for c in X[3 * i : 3 * i + 3]] for i in range(len(X) // 3)]
        e = mpmath.mpf(eps)
        total = mpmath.mpf(0)
        for h, loc in pairs:
            S = _edge([[mpmath.mpf(CUBE[c][r]) for r in range(3)] for c in loc])
            dS = _mdet(S)
            Si = _minv(S)
            T = _edge([V[int(hexes[h][c])] for c in loc])
            J = [[sum(T[i][k] * Si[k][j] for k in range(3)) for j in range(3)] for i in range(3)]
            d = _mdet(J)
            ch = (d + mpmath.sqrt(e * e + d * d)) / 2
            fr = sum(J[i][j] ** 2 for i in range(3) for j in range(3))
            term = fr / ch ** (mpmath.mpf(2) / 3)
            if lam:
                term += mpmath.mpf(lam) * (d * d + 1) / ch
            total += term * dS / 6
        for v in unlocked:
            total += mpmath.mpf(penalty) * sum((V[v][r] - mpmath.mpf(float(X0[v][r]))) ** 2 for r in range(3))
        return total


def fd_gradient_mp(X, hexes, pairs, eps, coords, h=1e-6, **kw):
    """Central differences of :func:`energy_mp` on selected coordinates.

    Only tets containing the perturbed vertex are summed: the others do not
    depend on it and would cancel exactly anyway.
    """
    out = []
    unlocked = kw.pop("unlocked", ())
    dps = kw.get("dps", 40)
    with mpmath.workdps(dps):
        for a in coords:
            v = a // 3
            local = [(hh, loc) for hh, loc in pairs if v in [int(hexes[hh][c]) for c in loc]]
            unl = [v] if v in unlocked else []
            Xp = [mpmath.mpf(x) for x in X]
            Xm = list(Xp)
            Xp[a] += h
            Xm[a] -= h
            fp = energy_mp(Xp, hexes, local, eps, unlocked=unl, **kw)
            fm = energy_mp(Xm, hexes, local, eps, unlocked=unl, **kw)
            out.append(float((fp - fm) / (2 * h)))
    return np.array(out)


def gradient_case(seed):
    """Seeded 2x2x2 configuration for gradient checks.

    Odd seeds push the interior vertex far enough to invert hexes; eps cycles
    through 1, 0.1, 1e-3; penalty is on for every other triple of seeds.
    Returns (mesh, full flags, eps, penalty, unlocked vertex ids).
    """
    from hexuntangle.fixtures import block_mesh

    rng = np.random.default_rng(seed)
    base = block_mesh(2)
    mesh = base.copy()
    reach = 1.5 if seed % 2 else 0.25
    d = rng.normal(size=3)
    mesh.vertices[13] += reach * d / np.linalg.norm(d)
    eps = (1.0, 0.1, 1e-3)[seed % 3]
    penalty = 1e4 if (seed // 3) % 2 else 0.0
    unlocked = ()
    if penalty:
        bnd = np.flatnonzero(base.boundary_flags)
        unlocked = tuple(int(v) for v in rng.choice(bnd, size=4, replace=False))
        mesh.vertices[list(unlocked)] += rng.uniform(-0.05, 0.05, size=(4, 3))
    full = rng.uniform(size=8) < 0.5
    return mesh, full, eps, penalty, unlocked
