"""Regularised foldover-free distortion energy over per-hex tetrahedra.

Every active tetrahedron maps its unit-cube target shape onto the physical
tet; with ``J = T S^-1`` the per-tet term is

    (f_eps(J) + lambda * g_eps(J)) * vol(target)

where ``chi`` replaces ``det J`` in the denominators so that inverted tets
keep a finite energy while ``eps > 0``.  Unlocked boundary vertices add a
quadratic pull towards their original positions.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .mesh import HexMesh
from .tets import TetPattern, TetTable, enumerate_tet_patterns


class NonPositiveChiError(ArithmeticError):
    """chi(det J, eps) <= 0: the unregularised +inf branch was hit."""


# --- scalar pieces ------------------------------------------------------------


def chi(d, eps):
    """(d + sqrt(eps^2 + d^2)) / 2, evaluated without cancellation for d < 0."""
    d = np.asarray(d, dtype=float)
    if np.any(np.asarray(eps) < 0):
        raise ValueError("eps must be non-negative")
    out = _chi_derivs(d, float(eps))[0]
    return out.item() if out.ndim == 0 else out


def _chi_derivs(d, eps):
    """chi, dchi/dd, d2chi/dd2 (vectorised)."""
    r = np.hypot(eps, d)
    rs = np.where(r > 0, r, 1.0)
    rd = np.where(d < 0, r - d, 1.0)
    pos = d >= 0
    c = np.where(pos, 0.5 * (d + r), eps * eps / (2.0 * rd))
    c1 = np.where(pos, np.where(r > 0, 0.5 * (1.0 + d / rs), 1.0), eps * eps / (2.0 * rs * rd))
    c2 = np.where(r > 0, eps * eps / (2.0 * rs**3), 0.0)
    return c, c1, c2


def f_eps(J, eps) -> float:
    J = np.asarray(J, dtype=float)
    c = chi(np.linalg.det(J), eps)
    if c <= 0:
        raise NonPositiveChiError("f_eps undefined: chi <= 0 (det J <= 0 with eps = 0)")
    return float(np.sum(J * J) / np.exp((2.0 / 3.0) * np.log(c)))


def g_eps(J, eps) -> float:
    J = np.asarray(J, dtype=float)
    d = np.linalg.det(J)
    c = chi(d, eps)
    if c <= 0:
        raise NonPositiveChiError("g_eps undefined: chi <= 0 (det J <= 0 with eps = 0)")
    return float((d * d + 1.0) / c)


def composed_jacobian(corners, pattern: TetPattern) -> tuple[np.ndarray, float]:
    """J = T S^-1 for one pattern of one hex, and its determinant."""
    corners = np.asarray(corners, dtype=float)
    p = corners[list(pattern.corners)]
    T = (p[1:] - p[0]).T
    J = T @ pattern.inv_target_jacobian
    return J, float(np.linalg.det(T) / pattern.target_det)


def _det3(M):
    return (
        M[..., 0, 0] * (M[..., 1, 1] * M[..., 2, 2] - M[..., 1, 2] * M[..., 2, 1])
        - M[..., 0, 1] * (M[..., 1, 0] * M[..., 2, 2] - M[..., 1, 2] * M[..., 2, 0])
        + M[..., 0, 2] * (M[..., 1, 0] * M[..., 2, 1] - M[..., 1, 1] * M[..., 2, 0])
    )


def _cof3(M):
    """Cofactor matrix, d det / dM."""
    C = np.empty_like(M)
    C[..., 0, 0] = M[..., 1, 1] * M[..., 2, 2] - M[..., 1, 2] * M[..., 2, 1]
    C[..., 0, 1] = M[..., 1, 2] * M[..., 2, 0] - M[..., 1, 0] * M[..., 2, 2]
    C[..., 0, 2] = M[..., 1, 0] * M[..., 2, 1] - M[..., 1, 1] * M[..., 2, 0]
    C[..., 1, 0] = M[..., 0, 2] * M[..., 2, 1] - M[..., 0, 1] * M[..., 2, 2]
    C[..., 1, 1] = M[..., 0, 0] * M[..., 2, 2] - M[..., 0, 2] * M[..., 2, 0]
    C[..., 1, 2] = M[..., 0, 1] * M[..., 2, 0] - M[..., 0, 0] * M[..., 2, 1]
    C[..., 2, 0] = M[..., 0, 1] * M[..., 1, 2] - M[..., 0, 2] * M[..., 1, 1]
    C[..., 2, 1] = M[..., 0, 2] * M[..., 1, 0] - M[..., 0, 0] * M[..., 1, 2]
    C[..., 2, 2] = M[..., 0, 0] * M[..., 1, 1] - M[..., 0, 1] * M[..., 1, 0]
    return C


_LEVI = np.zeros((3, 3, 3))
for _a, _b, _c in ((0, 1, 2), (1, 2, 0), (2, 0, 1)):
    _LEVI[_a, _b, _c] = 1.0
    _LEVI[_a, _c, _b] = -1.0

# d2 det / dJ_ab dJ_cd = eps_ace eps_bdf J_ef
_DET_HESS = np.einsum("ace,bdf->abcdef", _LEVI, _LEVI)


def composed_determinants(corners, table: TetTable, pattern_ids=None) -> np.ndarray:
    """det(T S^-1) for every (hex, pattern); corners is (H, 8, 3)."""
    corners = np.asarray(corners, dtype=float)
    if pattern_ids is None:
        pattern_ids = np.arange(len(table))
    ids = table.corners_array[pattern_ids]
    p = corners[:, ids]  # (H, P, 4, 3)
    e = p[:, :, 1:] - p[:, :, :1]  # rows are edges -> det equals det T
    return _det3(e) / table.target_dets[pattern_ids]


# --- active sets and parameters -----------------------------------------------


@dataclass
class ActiveTetSet:
    """Tets entering F: per listed hex either the 8 corner patterns or all 58."""

    hex_ids: np.ndarray
    full: np.ndarray  # bool per entry of hex_ids

    @classmethod
    def from_flags(cls, hex_ids, full_flags) -> "ActiveTetSet":
        hex_ids = np.asarray(sorted(int(h) for h in hex_ids), dtype=np.int64)
        return cls(hex_ids, np.asarray(full_flags, dtype=bool)[hex_ids])

    def pairs(self, table: TetTable) -> tuple[np.ndarray, np.ndarray]:
        corner = table.corner_ids
        allp = np.arange(len(table))
        hs, ps = [], []
        for h, full in zip(self.hex_ids, self.full):
            pats = allp if full else corner
            hs.append(np.full(len(pats), h))
            ps.append(pats)
        if not hs:
            return np.zeros(0, np.int64), np.zeros(0, np.int64)
        return np.concatenate(hs), np.concatenate(ps)

    def count(self, table: TetTable) -> int:
        n58, n8 = len(table), len(table.corner_ids)
        return int(np.sum(np.where(self.full, n58, n8)))


@dataclass
class EnergyParams:
    epsilon: float
    lam: float = 0.0
    penalty_factor: float = 1e6
    unlocked_boundary: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        if self.epsilon < 0:
            raise ValueError("epsilon must be >= 0")
        if self.lam < 0:
            raise ValueError("lambda must be >= 0")
        if self.penalty_factor <= 0:
            raise ValueError("penalty_factor must be > 0")


@dataclass
class EnergyBreakdown:
    total: float
    distortion: float
    volume: float
    penalty: float
    det_min: float
    dets: np.ndarray | None = None


def penalty_energy(mesh: HexMesh, params: EnergyParams, X=None) -> float:
    if not params.unlocked_boundary:
        return 0.0
    X = mesh.vertices if X is None else np.asarray(X).reshape(-1, 3)
    ids = np.fromiter(params.unlocked_boundary, dtype=np.int64)
    d = X[ids] - mesh.original_positions[ids]
    return float(params.penalty_factor * np.sum(d * d))


# --- assembled energy -----------------------------------------------------------


class EnergyModel:
    """Vectorised F(X, eps), gradient and (PSD-projected) Hessian.

    The tet list is fixed at construction; ``X`` is a flat (3 * #V,) array so
    the object can be handed straight to :func:`optimizer.minimize`.
    """

    def __init__(self, mesh: HexMesh, active: ActiveTetSet, params: EnergyParams, table: TetTable | None = None):
        self.mesh = mesh
        self.table = table or enumerate_tet_patterns()
        self.params = params
        self.active = active
        hs, ps = active.pairs(self.table)
        self.tet_vertices = mesh.hexes[hs[:, None], self.table.corners_array[ps]] if len(hs) else np.zeros((0, 4), np.int64)
        self.inv_targets = self.table.inv_targets[ps]
        self.target_dets = self.table.target_dets[ps]
        self.volumes = self.target_dets / 6.0
        # J = P D with P the 3x4 vertex matrix and D = [-1 -1 -1; I] S^-1
        E = np.vstack([-np.ones((1, 3)), np.eye(3)])
        self.D = np.einsum("cb,tbk->tck", E, self.inv_targets)
        self.unlocked = np.fromiter(sorted(params.unlocked_boundary), dtype=np.int64)
        self.chi_nonpositive = 0
        self.n_vertices = mesh.n_vertices

    def _jac(self, X):
        P = X.reshape(-1, 3)[self.tet_vertices]  # (T, 4, 3) rows = vertices
        return np.einsum("tci,tck->tik", P, self.D)

    def determinants(self, X=None) -> np.ndarray:
        X = self.mesh.vertices.ravel() if X is None else X
        return _det3(self._jac(X))

    def _terms(self, J, need_grad=False, need_hess=False):
        eps, lam = self.params.epsilon, self.params.lam
        d = _det3(J)
        c, c1, c2 = _chi_derivs(d, eps)
        if np.any(c <= 0):
            self.chi_nonpositive += 1
            raise NonPositiveChiError("chi <= 0 on an active tet (eps = 0 with det J <= 0)")
        tr = np.einsum("tij,tij->t", J, J)
        lc = np.log(c)
        phi = np.exp(-(2.0 / 3.0) * lc)
        fval = tr * phi
        gval = (d * d + 1.0) / c if lam else np.zeros_like(d)
        out = {"d": d, "f": fval, "g": gval}
        if not (need_grad or need_hess):
            return out
        cof = _cof3(J)
        dphi = -(2.0 / 3.0) * phi / c * c1
        gJ = 2.0 * J * phi[:, None, None] + (tr * dphi)[:, None, None] * cof
        if lam:
            dpsi = 2.0 * d / c - (d * d + 1.0) * c1 / c**2
            gJ = gJ + lam * dpsi[:, None, None] * cof
        out["gJ"] = gJ * self.volumes[:, None, None]
        if need_hess:
            d2phi = (10.0 / 9.0) * phi / c**2 * c1**2 - (2.0 / 3.0) * phi / c * c2
            n = len(d)
            Jf, Cf = J.reshape(n, 9), cof.reshape(n, 9)
            I9 = np.eye(9)
            Hdet = np.einsum("abcdef,tef->tabcd", _DET_HESS, J).reshape(n, 9, 9)
            H = (
                2.0 * phi[:, None, None] * I9
                + 2.0 * dphi[:, None, None] * (Jf[:, :, None] * Cf[:, None, :] + Cf[:, :, None] * Jf[:, None, :])
                + (tr * d2phi)[:, None, None] * Cf[:, :, None] * Cf[:, None, :]
                + (tr * dphi)[:, None, None] * Hdet
            )
            if lam:
                d2psi = 2.0 / c - 4.0 * d * c1 / c**2 - (d * d + 1.0) * c2 / c**2 + 2.0 * (d * d + 1.0) * c1**2 / c**3
                H = H + lam * (d2psi[:, None, None] * Cf[:, :, None] * Cf[:, None, :] + dpsi[:, None, None] * Hdet)
            out["HJ"] = H * self.volumes[:, None, None]
        return out

    def breakdown(self, X=None) -> EnergyBreakdown:
        X = self.mesh.vertices.ravel() if X is None else np.asarray(X, dtype=float).ravel()
        J = self._jac(X)
        t = self._terms(J)
        dist = float(np.sum(t["f"] * self.volumes))
        vol = float(np.sum(t["g"] * self.volumes))
        pen = penalty_energy(self.mesh, self.params, X)
        dmin = float(t["d"].min()) if len(t["d"]) else np.inf
        return EnergyBreakdown(dist + self.params.lam * vol + pen, dist, vol, pen, dmin, t["d"])

    def value(self, X) -> float:
        return self.breakdown(X).total

    def _penalty_grad(self, X, g):
        if len(self.unlocked):
            X3 = X.reshape(-1, 3)
            d = X3[self.unlocked] - self.mesh.original_positions[self.unlocked]
            g.reshape(-1, 3)[self.unlocked] += 2.0 * self.params.penalty_factor * d

    def value_and_grad(self, X):
        X = np.asarray(X, dtype=float).ravel()
        J = self._jac(X)
        t = self._terms(J, need_grad=True)
        F = float(np.sum((t["f"] + self.params.lam * t["g"]) * self.volumes)) + penalty_energy(self.mesh, self.params, X)
        # dF/dP_ci = sum_k gJ_ik D_ck
        gP = np.einsum("tik,tck->tci", t["gJ"], self.D)
        g = np.zeros(3 * self.n_vertices)
        np.add.at(g.reshape(-1, 3), self.tet_vertices, gP)
        self._penalty_grad(X, g)
        return F, g

    def hessian(self, X, project=True) -> sp.csr_matrix:
        """Sparse Hessian; per-tet blocks clamped to PSD when ``project``."""
        X = np.asarray(X, dtype=float).ravel()
        J = self._jac(X)
        t = self._terms(J, need_hess=True)
        HJ = t["HJ"]
        if project:
            w, V = np.linalg.eigh(0.5 * (HJ + HJ.transpose(0, 2, 1)))
            HJ = np.einsum("tij,tj,tkj->tik", V, np.maximum(w, 0.0), V)
        n = len(HJ)
        # vec(J) index (i, k) -> 3 i + k; vec(P) index (c, i) -> 3 c + i
        HJ4 = HJ.reshape(n, 3, 3, 3, 3)
        HP = np.einsum("tikjl,tck,tdl->tcidj", HJ4, self.D, self.D).reshape(n, 12, 12)
        dof = (3 * self.tet_vertices[:, :, None] + np.arange(3)).reshape(n, 12)
        rows = np.repeat(dof, 12, axis=1).ravel()
        cols = np.tile(dof, (1, 12)).ravel()
        N = 3 * self.n_vertices
        H = sp.coo_matrix((HP.ravel(), (rows, cols)), shape=(N, N)).tocsr()
        if len(self.unlocked):
            diag = np.zeros(N)
            diag.reshape(-1, 3)[self.unlocked] = 2.0 * self.params.penalty_factor
            H = H + sp.diags(diag)
        return H


def mesh_energy(mesh: HexMesh, active: ActiveTetSet, params: EnergyParams, table: TetTable | None = None) -> EnergyBreakdown:
    return EnergyModel(mesh, active, params, table).breakdown()


def mesh_energy_gradient(mesh, active, params, table=None, free_mask=None) -> np.ndarray:
    """Gradient w.r.t. vertex coordinates, shape (#V, 3); frozen vertices are zero."""
    _, g = EnergyModel(mesh, active, params, table).value_and_grad(mesh.vertices.ravel())
    g = g.reshape(-1, 3)
    if free_mask is not None:
        g = np.where(np.asarray(free_mask, dtype=bool)[:, None], g, 0.0)
    return g
