import numpy as np
import pytest

from gasgrid.daesys import steady_state
from gasgrid.errors import NoConvergence
from gasgrid.scenario import build_system


def _small(rupture_case, L=10000.0, x=5000.0, dx=1000.0):
    sc = rupture_case.copy()
    sc.gas.pipes[0].L = L
    sc.faults[0].x = x
    sc.gas.dx = dx
    return sc


def test_gas_only_dimensions(rupture_case):
    sc = _small(rupture_case)
    s = build_system(sc)
    M = 10
    assert s.N == 2 * (M + 1) + 2 * 2 + 2
    assert s.n == 2 * (M - 1 - 1)
    assert not any(n.startswith(("machine", "bus", "gt")) for n in s.names)
    mass = s.layout.mass
    assert np.all(mass[: s.n] == 1.0) and np.all(mass[s.n:] == 0.0)


def test_steady_residual(rupture_case):
    sc = rupture_case.copy()
    sc.gas.dx = 500.0
    s = build_system(sc)
    steady_state(s)
    assert np.max(np.abs(s.residual(0.0, s.x0))) < 1e-6


def test_steady_coupled_residual(cascade_case):
    s = build_system(cascade_case)
    steady_state(s)
    assert s.algebraic_residual_norm(0.0, s.x0) < 1e-6
    assert np.max(np.abs(s.residual(0.0, s.x0)[: s.n])) < 1e-6


def test_zero_load_uniform_pressure(rupture_case):
    sc = _small(rupture_case)
    sc.gas.nodes[1].setpoint = 0.0
    s = build_system(sc)
    steady_state(s)
    P = s.x0[s.pipe_maps[0].P]
    np.testing.assert_allclose(P, 6.62e6, rtol=1e-12)


def test_infeasible_load(rupture_case):
    sc = _small(rupture_case, L=51000.0, x=25500.0, dx=500.0)
    sc.gas.nodes[1].setpoint = 500.0
    with pytest.raises(NoConvergence):
        steady_state(build_system(sc))


def _active_small(rupture_case):
    s = build_system(_small(rupture_case))
    steady_state(s)
    x = s.x0.copy()
    s.activate_fault(0, 300.0, x)
    return s, x


def test_jacobian_matches_dense_fd(rupture_case):
    s, x = _active_small(rupture_case)
    t = 305.0
    # move away from the uniform steady profile so every entry is exercised
    x[s.pipe_maps[0].Q] += np.linspace(0.0, 3.0, s.pipe_maps[0].M + 1)
    J = s.jacobian(t, x).toarray()
    F0 = s.residual(t, x)
    D = np.zeros_like(J)
    for i in range(s.N):
        h = 1e-6 * (1.0 + abs(x[i]))
        xp, xm = x.copy(), x.copy()
        xp[i] += h
        xm[i] -= h
        D[:, i] = (s.residual(t, xp) - s.residual(t, xm)) / (2 * h)
    scale = np.maximum(np.abs(D).max(axis=1, keepdims=True), 1e-12)
    assert np.max(np.abs(J - D) / scale) < 1e-5
    assert np.all(np.isfinite(F0))


def test_pattern_stable(rupture_case):
    s, x = _active_small(rupture_case)
    J1 = s.jacobian(305.0, x)
    J2 = s.jacobian(305.0, x * (1 + 1e-3))
    J1.sort_indices()
    J2.sort_indices()
    assert np.array_equal(J1.indices, J2.indices) and np.array_equal(J1.indptr, J2.indptr)


def test_residual_locality(rupture_case):
    s = build_system(_small(rupture_case, L=20000.0, x=10000.0))
    steady_state(s)
    pm = s.pipe_maps[0]
    F0 = s.residual(0.0, s.x0)
    k = 4
    x = s.x0.copy()
    x[pm.P[k]] *= 1.01
    changed = np.flatnonzero(np.abs(s.residual(0.0, x) - F0) > 0)
    cell_of = {int(i): c for c, i in enumerate(pm.P)} | {int(i): c for c, i in enumerate(pm.Q)}
    # every touched row belongs to a cell inside the reconstruction stencil
    for r in changed:
        assert abs(cell_of[int(r)] - k) <= 3


def test_vectorized_residual(rupture_case):
    s, x = _active_small(rupture_case)
    X = np.stack([x, x * 1.001, x * 0.999], axis=1)
    F = s.residual(305.0, X)
    for j in range(3):
        np.testing.assert_array_equal(F[:, j], s.residual(305.0, X[:, j]))


def test_tripped_turbine_contributes_no_power(cascade_case):
    s = build_system(cascade_case)
    steady_state(s)
    s.trip_gt(0)
    x = s.reinitialize_algebraic(0.0, s.x0)
    m = s.eps.gts[0].machine
    assert x[s.gt_z[0][2]] == 0.0 or abs(x[s.gt_z[0][2]]) < 1e-12
    assert not s.eps.machines[m].online
    assert abs(x[s.m_Pe[m]]) < 1e-10
