import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gasgrid.errors import NonIntegerCellCount, NonPositivePressure
from gasgrid.gasnet import (GasNetwork, GasNode, NodeKind, Pipe, discretize_pipe,
                            kt_interface_fluxes, linepack, node_residuals, physical_flux,
                            pipe_rhs, weno3_interface_fluxes, weno3_weights)

from conftest import richardson_slope


def test_cell_counts(long_pipe):
    assert discretize_pipe(long_pipe, 100.0).M_cells == 510
    assert discretize_pipe(long_pipe, 51000.0).M_cells == 1
    with pytest.raises(NonIntegerCellCount):
        discretize_pipe(long_pipe, 333.0)


def test_discretized_pipe_vectors(long_pipe):
    d = discretize_pipe(long_pipe, 1000.0)
    assert d.p.shape == d.q.shape == (52,)
    assert d.x[-1] == pytest.approx(51000.0)


def test_area(long_pipe):
    assert long_pipe.S == pytest.approx(np.pi * 0.5901**2 / 4)


@pytest.mark.parametrize("flux", [weno3_interface_fluxes, kt_interface_fluxes])
def test_uniform_state_flux_is_exact(flux, props, long_pipe):
    u = np.stack([np.full(12, 6.62e6), np.full(12, 14.0)])
    fhat = flux(u, props, long_pipe)
    f = physical_flux(u[:, :1], props, long_pipe)
    np.testing.assert_allclose(fhat, np.repeat(f, 13, axis=1), rtol=1e-12)


def test_uniform_weights_equal_linear():
    w0, w1 = weno3_weights(3.0, 3.0, 3.0)
    assert (w0, w1) == pytest.approx((2 / 3, 1 / 3), abs=1e-15)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=3, max_size=3))
def test_weights_normalized(v):
    for gamma in ((2 / 3, 1 / 3), (1 / 3, 2 / 3)):
        w0, w1 = weno3_weights(*v, gamma=gamma)
        assert w0 + w1 == pytest.approx(1.0, abs=1e-12)
        assert 0 <= w0 <= 1 and 0 <= w1 <= 1


def _periodic_errors(flux, ns):
    # reconstruction error of the flux difference for a smooth periodic profile
    pipe = Pipe(0, 0, 1, 1.0, 1.0, 0.0)
    from gasgrid.gasnet import GasProperties
    props = GasProperties(c=1.0)
    errs = []
    for n in ns:
        dx = 1.0 / n
        x = (np.arange(n) + 0.5) * dx
        # a right-going wave: S p - c q = 0 gives a single characteristic field
        p = 2.0 + np.sin(2 * np.pi * x)
        q = pipe.S * p / props.c
        fhat = flux(np.stack([p, q]), props, pipe, ghost="periodic")
        dfdx = (fhat[:, 1:] - fhat[:, :-1]) / dx
        exact = 2 * np.pi * np.cos(2 * np.pi * x) * np.array([[props.c**2 / pipe.S * pipe.S / props.c],
                                                              [pipe.S]])
        errs.append(np.max(np.abs(dfdx - exact)))
    return 1.0 / np.array(ns), np.array(errs)


def test_weno3_smooth_order():
    hs, errs = _periodic_errors(weno3_interface_fluxes, [80, 160, 320, 640])
    assert richardson_slope(hs, errs) >= 2.5


def test_kt_smooth_order():
    hs, errs = _periodic_errors(kt_interface_fluxes, [80, 160, 320, 640])
    assert 0.8 <= richardson_slope(hs, errs) <= 1.5


@pytest.mark.parametrize("flux", [weno3_interface_fluxes, kt_interface_fluxes])
def test_step_has_no_new_extrema(flux, props, long_pipe):
    # brute-force scan: reconstructed fluxes of a single characteristic field stay in the step bounds
    p = np.where(np.arange(40) < 20, 6e6, 3e6)
    q = long_pipe.S * p / props.c
    u = np.stack([p, q])
    fhat = flux(u, props, long_pipe)
    f = physical_flux(u, props, long_pipe)
    for row in range(2):
        lo, hi = f[row].min(), f[row].max()
        assert np.all(fhat[row] >= lo - 1e-9 * hi) and np.all(fhat[row] <= hi + 1e-9 * hi)


def test_periodic_conservation(props):
    pipe = Pipe(0, 0, 1, 1000.0, 0.5, 0.0)
    x = np.linspace(0, 1, 50, endpoint=False)
    u = np.stack([5e6 + 1e5 * np.sin(2 * np.pi * x), 10 * np.cos(2 * np.pi * x)])
    from gasgrid.gasnet import cell_rhs
    for scheme in ("weno3", "kt"):
        dudt = cell_rhs(u, 20.0, scheme, props, pipe, ghost="periodic")
        assert abs(dudt[0].sum()) < 1e-9 * np.abs(dudt[0]).max()
        assert abs(dudt[1].sum()) < 1e-9 * np.abs(dudt[1]).max()


@pytest.mark.parametrize("scheme", ["weno3", "kt"])
def test_pipe_rhs_rest_state(scheme, props, long_pipe):
    d = discretize_pipe(long_pipe, 1000.0)
    d.p[:] = 6.62e6
    d.q[:] = 0.0
    dp, dq = pipe_rhs(d, scheme, props)
    assert np.all(dp == 0) and np.all(dq == 0)


def test_pipe_rhs_uniform_flow_friction(props, long_pipe):
    d = discretize_pipe(long_pipe, 1000.0)
    d.p[:] = 6.62e6
    d.q[:] = 14.0
    dp, dq = pipe_rhs(d, "weno3", props)
    expected = -0.03 * 340.0**2 * 14.0 * 14.0 / (2 * 0.5901 * long_pipe.S * 6.62e6)
    np.testing.assert_allclose(dq, expected, rtol=1e-9)
    np.testing.assert_allclose(dp, 0.0, atol=1e-9)


def test_pipe_rhs_zero_pressure_raises(props, long_pipe):
    d = discretize_pipe(long_pipe, 1000.0)
    d.p[:] = 6.62e6
    d.p[7] = 0.0
    d.q[:] = 14.0
    with pytest.raises(NonPositivePressure):
        pipe_rhs(d, "weno3", props)


def test_linepack(props, long_pipe):
    m = linepack(np.full(11, 6e6), 100.0, props, long_pipe)
    assert m == pytest.approx(11 * 6e6 * long_pipe.S * 100.0 / 340.0**2)


def _junction():
    nodes = [GasNode(0, NodeKind.CONSTANT_PRESSURE, 6e6), GasNode(1, NodeKind.CONSTANT_PRESSURE, 6e6),
             GasNode(2, NodeKind.JUNCTION), GasNode(3, NodeKind.CONSTANT_MASS_FLOW, 7.0)]
    pipes = [Pipe(0, 0, 2, 1e3, 0.5, 0.03), Pipe(1, 1, 2, 1e3, 0.5, 0.03), Pipe(2, 2, 3, 1e3, 0.5, 0.03)]
    from gasgrid.gasnet import GasProperties
    return GasNetwork(GasProperties(), pipes, nodes)


def test_junction_mass_balance():
    net = _junction()
    p = np.full(3, 6e6)
    r = node_residuals(net, p, [3.0, 4.0, 7.0], p, [3.0, 4.0, 7.0], np.full(4, 6e6), [-3.0, -4.0, 0.0, 7.0])
    assert r[2] == 0.0
    r = node_residuals(net, p, [3.0, 4.0, 6.0], p, [3.0, 4.0, 7.0], np.full(4, 6e6), [-3.0, -4.0, 0.0, 6.0])
    assert r[2] == pytest.approx(1.0)


def test_incidence_columns():
    net = _junction()
    A = net.incidence.matrix.toarray()
    assert np.all(A.sum(axis=0) == 0)
    assert np.all((A == 1).sum(axis=0) == 1) and np.all((A == -1).sum(axis=0) == 1)


def test_single_pipe_steady_residuals(rupture_case):
    from gasgrid.scenario import build_system
    from gasgrid.daesys import steady_state
    s = build_system(rupture_case, dx=500.0)
    steady_state(s)
    r = s.residual(0.0, s.x0)
    assert np.max(np.abs(r[s.n:])) < 1e-6
