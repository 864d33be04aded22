import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import solve_ivp

from gasgrid.errors import NonPositivePressure, TurbineTripped
from gasgrid.gasnet import GasProperties
from gasgrid.powersys import (P2G, EpsNetwork, GasTurbine, Machine, admittance_from_lines,
                              apply_bus_fault, center_of_inertia, clear_bus_fault, current_balance,
                              electrical_power, gas_turbine_residuals, machine_derivatives,
                              p2g_power, stator_network_residuals)
from gasgrid.rosenbrock import FunctionSystem, SolverConfig, integrate


def test_swing_equilibrium():
    m = Machine(0, T_j=10.0, P_m=0.5, P_e=0.5)
    assert machine_derivatives(m, 1.0) == (0.0, 0.0)


def test_swing_acceleration():
    m = Machine(0, T_j=10.0, P_m=0.6, P_e=0.5)
    dw, dd = machine_derivatives(m, 1.0)
    assert dw == pytest.approx(0.01)
    assert dd == 0.0


def _three_machine_rhs(Tj, D, dP):
    def rhs(t, y):
        w, d = y[:3], y[3:]
        coi = np.sum(Tj * w) / np.sum(Tj)
        dw = (dP - D * (w - 1.0)) / Tj
        return np.concatenate([dw, (w - coi) * 2 * np.pi * 50])
    return rhs


def test_three_machine_step_matches_reference():
    Tj, D = np.array([8.0, 10.0, 6.0]), np.array([1.0, 2.0, 0.5])
    dP = np.array([-0.1, 0.05, 0.0])
    rhs = _three_machine_rhs(Tj, D, dP)
    y0 = np.concatenate([np.ones(3), [0.1, 0.0, -0.2]])
    sysf = FunctionSystem(lambda t, x: rhs(t, x), 6, y0)
    res = integrate(sysf, (0.0, 2.0), SolverConfig(atol=1e-12, rtol=1e-12))
    ref = solve_ivp(rhs, (0.0, 2.0), y0, method="DOP853", rtol=1e-13, atol=1e-13, max_step=1e-3)
    np.testing.assert_allclose(res.x_final, ref.y[:, -1], atol=1e-6)


def test_zero_network_current_balance():
    net = EpsNetwork(np.zeros((3, 3)), np.zeros((3, 3)))
    rx, ry = current_balance(net, np.ones(3), np.zeros(3), np.zeros(3), np.zeros(3))
    assert np.all(rx == 0) and np.all(ry == 0)


def test_electrical_power_lossless():
    m = Machine(0, T_j=5.0, r_a=0.0)
    assert electrical_power(m, 1.02, 0.1, 0.5, -0.2) == pytest.approx(1.02 * 0.5 + 0.1 * -0.2, abs=1e-16)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0.1, 20.0), min_size=2, max_size=5),
       st.lists(st.floats(0.9, 1.1), min_size=5, max_size=5))
def test_coi_consistency(Tj, omega):
    Tj = np.array(Tj)
    omega = np.array(omega[: Tj.size])
    coi = center_of_inertia(Tj, omega)
    assert abs(np.sum(Tj * (omega - coi))) < 1e-12 * np.sum(Tj)


@settings(max_examples=50, deadline=None)
@given(st.floats(-np.pi, np.pi))
def test_rotation_invariance(phi):
    rng = np.random.default_rng(3)
    G, B = admittance_from_lines(3, [(0, 1, 0.01, 0.1, 0.02), (1, 2, 0.02, 0.15, 0.0), (0, 2, 0.01, 0.1, 0.0)])
    net = EpsNetwork(G, B)
    ms = [Machine(0, 8.0, r_a=0.003, E_q=1.1, E_d=0.05), Machine(2, 6.0, r_a=0.0, E_q=1.05)]
    U = rng.normal(size=3) + 1j * rng.normal(size=3)
    I = rng.normal(size=2) + 1j * rng.normal(size=2)
    delta = rng.normal(size=2)
    Pe = np.array([electrical_power(m, U[m.bus].real, U[m.bus].imag, I[i].real, I[i].imag)
                   for i, m in enumerate(ms)])
    r0 = stator_network_residuals(ms, net, U.real, U.imag, I.real, I.imag, Pe, delta=delta)
    rot = np.exp(1j * phi)
    U2, I2 = U * rot, I * rot
    Pe2 = np.array([electrical_power(m, U2[m.bus].real, U2[m.bus].imag, I2[i].real, I2[i].imag)
                    for i, m in enumerate(ms)])
    r1 = stator_network_residuals(ms, net, U2.real, U2.imag, I2.real, I2.imag, Pe2, delta=delta + phi)
    np.testing.assert_allclose(Pe2, Pe, atol=1e-12)
    assert np.linalg.norm(r1) == pytest.approx(np.linalg.norm(r0), rel=1e-10)


def test_gt_equilibrium():
    gt = GasTurbine(0, P_rated=1.0, q_rated=10.0)
    x, z = gt.equilibrium(0.5)
    dx, r, Pm, fuel = gas_turbine_residuals(gt, 1.0)
    np.testing.assert_allclose(dx, 0.0, atol=1e-14)
    np.testing.assert_allclose(r, 0.0, atol=1e-14)
    assert Pm == pytest.approx(0.5)
    assert fuel == pytest.approx(z[2])


def test_gt_tripped_raises():
    gt = GasTurbine(0)
    gt.equilibrium(0.4)
    gt.tripped = True
    with pytest.raises(TurbineTripped):
        gas_turbine_residuals(gt, 1.0)


def test_governor_speed_drop_response():
    # with the temperature loop saturated high, the fuel path is two first-order lags
    gt = GasTurbine(0, R_gov=0.05)
    x0, z0 = gt.equilibrium(0.4)
    omega = 0.99
    v_ce = gt.governor_signal(omega)
    assert v_ce - z0[0] == pytest.approx(0.01 / 0.05)

    def rhs(t, y):
        x = x0.copy()
        x[1:3] = y
        z = np.array([v_ce, 0.0, 0.0])
        dx, *_ = gas_turbine_residuals(gt, omega, x=x, z=z)
        return dx[1:3]

    T1, T2 = gt.T_valve, gt.T_fuel
    target = (gt.K_fuel * v_ce + gt.K_nl) * omega
    w0 = x0[2]
    ts = np.linspace(0.0, 8.0, 9)
    sol = solve_ivp(rhs, (0, 8.0), x0[1:3], t_eval=ts, rtol=1e-11, atol=1e-12)
    analytic = w0 + (target - w0) * (1 - (T1 * np.exp(-ts / T1) - T2 * np.exp(-ts / T2)) / (T1 - T2))
    np.testing.assert_allclose(sol.y[1], analytic, atol=1e-8)


def test_p2g_power():
    unit = P2G(0, 0, h_P2G=1.2e8, eta=0.7, q_max=6.0)
    props = GasProperties()
    assert p2g_power(0.0, 5e6, unit, props) == 0.0
    P1, P2 = p2g_power(3.0, 5e6, unit, props), p2g_power(3.0, 2.5e6, unit, props)
    assert P2 == pytest.approx(2 * P1)
    assert P1 == pytest.approx(1.2e8 * 340.0**2 * 3.0 / (0.7 * 5e6))
    with pytest.raises(NonPositivePressure):
        p2g_power(3.0, 0.0, unit, props)


def test_p2g_efficiency_range():
    with pytest.raises(ValueError):
        P2G(0, 0, 1e8, 1.5, 1.0)


def test_bus_fault_inverse_pair():
    G, B = admittance_from_lines(3, [(0, 1, 0.01, 0.1, 0.02), (1, 2, 0.01, 0.1, 0.02)])
    net = EpsNetwork(G, B)
    same = apply_bus_fault(net, 1, 0.0)
    assert np.array_equal(same.G, net.G) and np.array_equal(same.B, net.B)
    faulted = apply_bus_fault(net, 1, complex(0.0, -1e4))
    assert faulted.B[1, 1] == net.B[1, 1] - 1e4
    back = clear_bus_fault(faulted)
    assert np.array_equal(back.G, G) and np.array_equal(back.B, B)
