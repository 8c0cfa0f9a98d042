import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.spatial.transform import Rotation

from hexuntangle.energy import (
    ActiveTetSet,
    EnergyModel,
    EnergyParams,
    NonPositiveChiError,
    chi,
    composed_jacobian,
    f_eps,
    g_eps,
    mesh_energy,
    mesh_energy_gradient,
    penalty_energy,
)
from hexuntangle.fixtures import block_mesh, displaced_center
from hexuntangle.tets import enumerate_tet_patterns

import oracles

TABLE = enumerate_tet_patterns()


def _pairs(active):
    hs, ps = active.pairs(TABLE)
    return [(int(h), TABLE[p].corners) for h, p in zip(hs, ps)]


def test_chi_values():
    assert chi(0.0, 1.0) == 0.5
    assert chi(2.0, 0.0) == 2.0
    assert chi(-2.0, 0.0) == 0.0
    assert chi(3.0, 4.0) == 4.0  # (3 + 5) / 2
    with pytest.raises(ValueError):
        chi(1.0, -1.0)


@pytest.mark.parametrize("d", [-1e3, -10.0, -0.5, -1e-4, 0.0, 1e-4, 0.7, 50.0])
@pytest.mark.parametrize("eps", [1.0, 1e-3, 1e-8])
def test_chi_stable_branch(d, eps):
    with mpmath.workdps(60):
        ref = float((mpmath.mpf(d) + mpmath.sqrt(mpmath.mpf(eps) ** 2 + mpmath.mpf(d) ** 2)) / 2)
    assert chi(d, eps) == pytest.approx(ref, rel=1e-13)
    assert chi(d, eps) > 0


def test_f_g_identity():
    I = np.eye(3)
    assert f_eps(I, 0.0) == pytest.approx(3.0)
    assert g_eps(I, 0.0) == pytest.approx(2.0)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31), st.floats(0.1, 10.0))
def test_f_invariant_to_rotation_and_scale(seed, s):
    rng = np.random.default_rng(seed)
    J = np.eye(3) + 0.3 * rng.normal(size=(3, 3))
    if np.linalg.det(J) <= 0.05:
        return
    R = Rotation.random(random_state=seed).as_matrix()
    assert f_eps(s * R @ J, 0.0) == pytest.approx(f_eps(J, 0.0), rel=1e-10)


def test_f_minimised_by_similarities():
    rng = np.random.default_rng(0)
    for _ in range(200):
        J = np.eye(3) + 0.4 * rng.normal(size=(3, 3))
        if np.linalg.det(J) > 0:
            assert f_eps(J, 0.0) >= 3.0 - 1e-12


def test_unregularised_inverted_raises():
    J = np.diag([1.0, 1.0, -1.0])
    with pytest.raises(NonPositiveChiError):
        f_eps(J, 0.0)
    with pytest.raises(NonPositiveChiError):
        g_eps(J, 0.0)
    assert math.isfinite(f_eps(J, 1e-3))


def test_composed_jacobian_identity_on_cube():
    cube = block_mesh(1).hex_corners(0)
    for p in TABLE:
        J, d = composed_jacobian(cube, p)
        assert np.allclose(J, np.eye(3)) and d == pytest.approx(1.0)


def test_lattice_energy_value():
    m = block_mesh(2)
    act = ActiveTetSet.from_flags(range(8), np.zeros(8, bool))
    e = mesh_energy(m, act, EnergyParams(0.0))
    # 64 identity tets, each 3 * (1/6)
    assert e.total == pytest.approx(32.0)
    assert e.penalty == 0.0 and e.det_min == pytest.approx(1.0)
    full = ActiveTetSet.from_flags(range(8), np.ones(8, bool))
    assert full.count(TABLE) == 8 * 58
    vol = sum(p.target_volume for p in TABLE)
    assert mesh_energy(m, full, EnergyParams(0.0)).total == pytest.approx(8 * 3 * vol)


def test_lambda_adds_volume_term():
    m = block_mesh(1)
    act = ActiveTetSet.from_flags([0], [False])
    e = mesh_energy(m, act, EnergyParams(0.0, lam=2.0))
    assert e.volume == pytest.approx(8 * 2.0 / 6)
    assert e.total == pytest.approx(e.distortion + 2.0 * e.volume)


def test_penalty_only_unlocked():
    m = block_mesh(2)
    m.vertices[0] += [0.1, 0.0, 0.0]
    m.vertices[1] += [0.0, 0.2, 0.0]
    assert penalty_energy(m, EnergyParams(1.0, penalty_factor=100.0)) == 0.0
    p = penalty_energy(m, EnergyParams(1.0, penalty_factor=100.0, unlocked_boundary=frozenset({0})))
    assert p == pytest.approx(100 * 0.01)


@pytest.mark.parametrize("kw", [{"epsilon": -1}, {"epsilon": 1, "lam": -1}, {"epsilon": 1, "penalty_factor": 0}])
def test_params_validation(kw):
    with pytest.raises(ValueError):
        EnergyParams(**kw)


def test_value_matches_high_precision():
    for seed in range(6):
        mesh, full, eps, pen, unl = oracles.gradient_case(seed)
        act = ActiveTetSet.from_flags(range(8), full)
        params = EnergyParams(eps, 0.5, pen or 1.0, frozenset(unl))
        got = EnergyModel(mesh, act, params).value(mesh.vertices.ravel())
        ref = oracles.energy_mp(
            mesh.vertices.ravel(), mesh.hexes, _pairs(act), eps, lam=0.5, penalty=pen or 1.0, unlocked=unl, X0=mesh.original_positions
        )
        assert got == pytest.approx(float(ref), rel=1e-11)


@pytest.mark.parametrize("seed", range(6))
def test_gradient_against_high_precision_fd(seed):
    mesh, full, eps, pen, unl = oracles.gradient_case(seed)
    act = ActiveTetSet.from_flags(range(8), full)
    params = EnergyParams(eps, 0.25, pen or 1.0, frozenset(unl))
    _, g = EnergyModel(mesh, act, params).value_and_grad(mesh.vertices.ravel())
    coords = [39, 40, 41] + [3 * v + r for v in unl for r in range(3)]
    fd = oracles.fd_gradient_mp(
        mesh.vertices.ravel(), mesh.hexes, _pairs(act), eps, coords, lam=0.25, penalty=pen or 1.0, unlocked=unl, X0=mesh.original_positions
    )
    assert np.allclose(g[coords], fd, rtol=1e-6, atol=1e-8 * np.abs(fd).max())


def test_gradient_frozen_mask():
    m = displaced_center()
    act = ActiveTetSet.from_flags(range(8), np.zeros(8, bool))
    g = mesh_energy_gradient(m, act, EnergyParams(0.1), free_mask=~m.boundary_flags)
    assert g.shape == (27, 3)
    assert np.all(g[m.boundary_flags] == 0)
    assert np.any(g[13] != 0)


@pytest.mark.parametrize("seed", [1, 2, 4])
def test_hessian_matches_gradient_differences(seed):
    mesh, full, eps, pen, unl = oracles.gradient_case(seed)
    act = ActiveTetSet.from_flags(range(8), full)
    model = EnergyModel(mesh, act, EnergyParams(eps, 0.3, pen or 1.0, frozenset(unl)))
    X = mesh.vertices.ravel().copy()
    H = model.hessian(X, project=False).toarray()
    assert np.allclose(H, H.T, atol=1e-8 * np.abs(H).max())
    h = 1e-6
    for a in (39, 40, 41, 0):
        e = np.zeros_like(X)
        e[a] = h
        col = (model.value_and_grad(X + e)[1] - model.value_and_grad(X - e)[1]) / (2 * h)
        assert np.allclose(H[:, a], col, rtol=1e-4, atol=1e-5 * np.abs(col).max() + 1e-9)


def test_projected_hessian_psd():
    mesh, full, eps, pen, unl = oracles.gradient_case(3)
    model = EnergyModel(mesh, ActiveTetSet.from_flags(range(8), full), EnergyParams(eps))
    H = model.hessian(mesh.vertices.ravel()).toarray()
    assert np.linalg.eigvalsh(H).min() >= -1e-8 * np.abs(H).max()


def test_chi_counter_on_zero_eps():
    m = displaced_center()
    model = EnergyModel(m, ActiveTetSet.from_flags(range(8), np.zeros(8, bool)), EnergyParams(0.0))
    with pytest.raises(NonPositiveChiError):
        model.value(m.vertices.ravel())
    assert model.chi_nonpositive == 1
