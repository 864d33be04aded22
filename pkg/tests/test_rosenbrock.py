import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gasgrid.daesys import steady_state
from gasgrid.errors import ThetaOutOfRange
from gasgrid.rosenbrock import (RODAS4, FunctionSystem, SolverConfig, adapt_step, dense_eval, error_norm,
                                integrate, rosenbrock_step)
from gasgrid.scenario import build_system

from conftest import richardson_slope

PRINTED_ALPHA = {
    (1, 0): "0.386", (2, 0): "0.146", (2, 1): "0.0639", (3, 0): "-0.331", (3, 1): "0.711",
    (3, 2): "0.250", (4, 0): "-4.55", (4, 1): "1.71", (4, 2): "4.01", (5, 0): "2.43",
    (5, 2): "-1.86", (5, 3): "0.560", (5, 4): "0.250",
}
# two entries are off by a factor of ten in the published listing
MISPRINTED_ALPHA = {(4, 3): ("-1.72", -0.172), (5, 1): ("-3.83", -0.383)}
PRINTED_GAMMA = {
    (1, 0): "-0.354", (2, 0): "-0.134", (2, 1): "-0.0129", (3, 0): "1.527", (3, 1): "-0.534",
    (3, 2): "-1.279", (4, 0): "6.981", (4, 1): "-2.093", (4, 2): "-5.87", (4, 3): "0.732",
    (5, 0): "-2.08", (5, 1): "0.596", (5, 2): "1.702", (5, 3): "-0.089", (5, 4): "-0.379",
}
PRINTED_B = ["0.348", "0.213", "-0.154", "0.471", "-0.129", "0.25"]


def _rounds_to(value, printed):
    dec = len(printed.split(".")[1])
    return abs(value - float(printed)) <= 0.5 * 10.0 ** -dec + 1e-12


def test_tableau_matches_printed_coefficients():
    al, ga, b = RODAS4.alpha, RODAS4.gamma_tab, RODAS4.b
    assert RODAS4.gamma == 0.25
    for (i, j), p in PRINTED_ALPHA.items():
        assert _rounds_to(al[i, j], p), (i, j, al[i, j], p)
    for (i, j), (p, actual) in MISPRINTED_ALPHA.items():
        assert not _rounds_to(al[i, j], p)
        assert al[i, j] == pytest.approx(actual, abs=5e-4)
    for (i, j), p in PRINTED_GAMMA.items():
        assert _rounds_to(ga[i, j], p), (i, j, ga[i, j], p)
    for i, p in enumerate(PRINTED_B):
        assert _rounds_to(b[i], p)


def test_tableau_consistency():
    np.testing.assert_allclose(RODAS4.alpha_i, RODAS4.c, atol=1e-12)
    np.testing.assert_allclose(RODAS4.gamma_i, RODAS4.d, atol=1e-3)
    assert RODAS4.b.sum() == pytest.approx(1.0, abs=1e-12)
    # stiff accuracy: the solution weights equal the last stage row
    np.testing.assert_allclose(RODAS4.b[:-1], RODAS4.alpha[-1, :-1] + RODAS4.gamma_tab[-1, :-1], atol=1e-12)


def _linear(lam):
    return FunctionSystem(lambda t, x: lam * x, 1, [1.0], jac=lambda t, x: [[lam]])


def test_fixed_point_step():
    sysf = FunctionSystem(lambda t, x: np.zeros(2), 2, [1.0, 2.0])
    step = rosenbrock_step(sysf, 0.0, sysf.x0, 0.5)
    np.testing.assert_array_equal(step.x1, sysf.x0)
    assert step.err == 0.0


def test_one_step_order_linear_decay():
    sysf = _linear(-2.0)
    hs = np.array([0.2, 0.1, 0.05, 0.025])
    errs = [abs(rosenbrock_step(sysf, 0.0, sysf.x0, h).x1[0] - math.exp(-2.0 * h)) for h in hs]
    assert richardson_slope(hs, errs) >= 4.5


def test_global_order_linear_decay():
    sysf = _linear(-2.0)
    hs = np.array([0.2, 0.1, 0.05, 0.025])
    errs = [abs(integrate(sysf, (0.0, 1.0), SolverConfig(fixed_step=h)).x_final[0] - math.exp(-2.0))
            for h in hs]
    assert richardson_slope(hs, errs) >= 3.8


def test_l_stability():
    step = rosenbrock_step(_linear(-1e6), 0.0, np.array([1.0]), 1.0)
    assert abs(step.x1[0]) < 1e-3


@settings(max_examples=50, deadline=None)
@given(st.floats(1e2, 1e12))
def test_stiff_limit_damps(mag):
    step = rosenbrock_step(_linear(-mag), 0.0, np.array([1.0]), 1.0)
    assert abs(step.x1[0]) < 1.0


def test_error_norm_and_adapt():
    assert error_norm([1e-6], [], [1.0], [], 1e-6, 0.0) == pytest.approx(1.0)
    assert error_norm([2e-6, 0.0], [1e-3], [0.0, 0.0], [1.0], 1e-6, 1e-3) == pytest.approx(2.0)
    assert adapt_step(1.0, 1.0) == pytest.approx(0.9)
    assert adapt_step(0.0, 1.0) == pytest.approx(6.0)
    assert adapt_step(1e-12, 1.0) == pytest.approx(6.0)
    assert adapt_step(16.0, 1.0) == pytest.approx(0.45)
    assert adapt_step(math.inf, 1.0) == pytest.approx(0.2)


@settings(max_examples=100, deadline=None)
@given(st.floats(1e-8, 1e8), st.floats(1e-6, 10.0))
def test_adapt_bounds(err, h):
    h1 = adapt_step(err, h)
    assert 0.2 * h * (1 - 1e-12) <= h1 <= 6.0 * h * (1 + 1e-12)


def test_dense_endpoints_and_range():
    sysf = FunctionSystem(lambda t, x: np.cos(t) * np.ones(1), 1, [0.0])
    step = rosenbrock_step(sysf, 0.0, sysf.x0, 0.3)
    y0, _ = dense_eval(step, 0.0)
    y1, _ = dense_eval(step, 1.0)
    np.testing.assert_array_equal(y0, step.x0)
    np.testing.assert_allclose(y1, step.x1, rtol=0, atol=1e-15)
    with pytest.raises(ThetaOutOfRange):
        dense_eval(step, 1.5)
    with pytest.raises(ThetaOutOfRange):
        dense_eval(step, -0.1)


def test_dense_output_order():
    sysf = FunctionSystem(lambda t, x: np.cos(t) * np.ones(1), 1, [0.0])
    hs = np.array([0.4, 0.2, 0.1, 0.05])
    thetas = np.linspace(0, 1, 21)
    errs = []
    for h in hs:
        step = rosenbrock_step(sysf, 0.0, sysf.x0, h)
        errs.append(max(abs(dense_eval(step, th)[0][0] - math.sin(th * h)) for th in thetas))
    assert richardson_slope(hs, errs) >= 2.5


def _prothero_robinson_order(lam):
    """Global order of ``y' = lam (y - sin t) + cos t`` measured over a tolerance sweep."""
    fun = lambda t, x: lam * (x - np.sin(t)) + np.cos(t)
    sysf = FunctionSystem(fun, 1, [0.0], jac=lambda t, x: [[lam]])
    hs, errs = [], []
    for tol in [1e-6, 1e-7, 1e-8, 1e-9, 1e-10]:
        r = integrate(sysf, (0.0, 2.0), SolverConfig(atol=tol, rtol=tol))
        hs.append(2.0 / r.counters.accepted)
        errs.append(abs(r.x_final[0] - math.sin(2.0)))
    return richardson_slope(hs, errs)


def test_prothero_robinson_moderate():
    assert _prothero_robinson_order(-10.0) >= 3.5


@pytest.mark.xfail(strict=True, reason="Rodas4 is not stiffly order-preserving on this problem: "
                   "order drops towards 1-2 once |h lam| >> 1")
def test_prothero_robinson_stiff():
    assert _prothero_robinson_order(-1e4) >= 3.5


def test_index1_dae_order():
    # y' = -y + z, 0 = z - y**2 with y(0) = 0.5; exact y = 1 / (1 + e^t)
    fun = lambda t, x: np.array([-x[0] + x[1], x[1] - x[0] ** 2])
    sysf = FunctionSystem(fun, 1, [0.5, 0.25])
    exact = 1.0 / (1.0 + math.e)
    hs = np.array([0.2, 0.1, 0.05, 0.025])
    errs = [abs(integrate(sysf, (0.0, 1.0), SolverConfig(fixed_step=h)).x_final[0] - exact) for h in hs]
    assert richardson_slope(hs, errs) >= 3.5


def _no_fault_system(rupture_case):
    sc = rupture_case.copy()
    sc.faults = []
    sc.gas.dx = 1000.0
    s = build_system(sc)
    steady_state(s)
    return s


def test_no_fault_equilibrium(rupture_case):
    s = _no_fault_system(rupture_case)
    r = integrate(s, (0.0, 200.0), SolverConfig(atol=1e-6, rtol=1e-6))
    np.testing.assert_allclose(r.x_final, s.x0, rtol=1e-7, atol=1e-6)


def test_lu_once_per_attempt_and_determinism(rupture_case):
    sc = rupture_case.copy()
    sc.gas.dx = 500.0
    out = []
    for _ in range(2):
        s = build_system(sc)
        steady_state(s)
        r = integrate(s, (0.0, 400.0), SolverConfig(atol=1e-3, rtol=1e-2), s.fault_events(),
                      tstops=s.tstops(), on_event=lambda system, hit, x: (
                          system.activate_fault(hit.spec.target, hit.t_cr, x),
                          system.reinitialize_algebraic(hit.t_cr, x))[1])
        assert r.counters.lu == r.counters.attempts
        assert r.counters.rejected >= 0
        out.append(r)
    np.testing.assert_array_equal(out[0].trajectory.states, out[1].trajectory.states)
    np.testing.assert_array_equal(out[0].trajectory.times, out[1].trajectory.times)
