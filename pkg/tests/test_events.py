import numpy as np
import pytest

from gasgrid.daesys import steady_state
from gasgrid.errors import NoRootBracketed
from gasgrid.events import (EventAction, EventHit, EventKind, EventSpec, apply_event_action,
                            detect_sign_change, event_value, format_hit, locate_critical_time)
from gasgrid.rosenbrock import FunctionSystem, SolverConfig, integrate, rosenbrock_step
from gasgrid.scenario import build_events, build_system


def _spec(direction=0, threshold=0.0, index=0):
    return EventSpec(EventKind.LOAD_MIN_PRESSURE, threshold, index=index, direction=direction)


@pytest.mark.parametrize("phi0, phi1, direction, expected", [
    (1.0, -1.0, 0, True),
    (1.0, 2.0, 0, False),
    (1.0, 0.0, 0, True),
    (0.0, 0.0, 0, False),
    (1.0, -1.0, 1, False),
    (-1.0, 1.0, 1, True),
    (1.0, -1.0, -1, True),
])
def test_sign_change(phi0, phi1, direction, expected):
    assert detect_sign_change(_spec(direction), phi0, phi1) is expected


def test_sign_change_rejects_nan():
    with pytest.raises(ValueError):
        detect_sign_change(_spec(), np.nan, 1.0)


def test_linear_root_midpoint():
    # x' = -1 from x = 1 over h = 2 crosses 0 exactly at the midpoint
    sysf = FunctionSystem(lambda t, x: -np.ones(1), 1, [1.0])
    step = rosenbrock_step(sysf, 0.0, sysf.x0, 2.0)
    hit = locate_critical_time(step, _spec())
    assert hit.theta == pytest.approx(0.5, abs=1e-10)
    assert hit.t_cr == pytest.approx(1.0, abs=1e-10)
    assert hit.y[0] == pytest.approx(0.0, abs=1e-12)


def test_no_root_raises():
    sysf = FunctionSystem(lambda t, x: -np.ones(1), 1, [1.0])
    step = rosenbrock_step(sysf, 0.0, sysf.x0, 0.5)
    with pytest.raises(NoRootBracketed):
        locate_critical_time(step, _spec())


def test_integrate_locates_quadratic_crossing():
    # x = 1 - t^2 / 2 reaches 0.5 at t = 1
    sysf = FunctionSystem(lambda t, x: np.array([-t]), 1, [1.0])
    spec = _spec(threshold=0.5)
    r = integrate(sysf, (0.0, 3.0), SolverConfig(atol=1e-10, rtol=1e-10), [spec])
    assert r.hits[0].t_cr == pytest.approx(1.0, abs=1e-8)


def test_time_event_value():
    spec = EventSpec(EventKind.FAULT_ONSET, 300.0, EventAction.ACTIVATE_FAULT, target=0)
    assert spec.is_time_event
    assert event_value(spec, 299.0, None) == -1.0


def test_invalid_direction():
    with pytest.raises(ValueError):
        EventSpec(EventKind.LOAD_MIN_PRESSURE, 1.0, direction=2)


def _cascade_state(cascade_case):
    s = build_system(cascade_case)
    steady_state(s)
    events, _ = build_events(cascade_case, s)
    return s, events


def test_apply_trip_gt_and_idempotence(cascade_case):
    s, events = _cascade_state(cascade_case)
    spec = next(e for e in events if e.action is EventAction.TRIP_GT)
    hit = EventHit(spec, 1.0, 0.0, s.x0[: s.n], s.x0[s.n:])
    x1 = apply_event_action(s, hit, s.x0.copy())
    assert s.eps.gts[spec.target].tripped
    assert s.algebraic_residual_norm(1.0, x1) < 1e-8
    np.testing.assert_array_equal(x1[: s.n], s.x0[: s.n])
    x2 = apply_event_action(s, hit, x1.copy())
    np.testing.assert_allclose(x2, x1, atol=1e-12)


def test_apply_convert_node(cascade_case):
    s, events = _cascade_state(cascade_case)
    spec = next(e for e in events if e.action is EventAction.CONVERT_NODE_TO_CONST_FLOW)
    hit = EventHit(spec, 1.0, 0.0, s.x0[: s.n], s.x0[s.n:])
    x1 = apply_event_action(s, hit, s.x0.copy())
    node = s.gas.nodes[s.node_position(spec.target)]
    assert node.kind.value == "constant_mass_flow"
    # the node is pinned at the saturation flow it crossed
    assert x1[s.node_q[s.node_position(spec.target)]] == pytest.approx(spec.params["q_node"], rel=1e-10)
    assert node.setpoint == spec.params["q_node"]


def test_record_only_leaves_state():
    spec = _spec()
    hit = EventHit(spec, 1.0, 0.5, np.zeros(1), np.zeros(0))
    x = np.array([3.0])
    assert apply_event_action(None, hit, x) is x


def test_format_hit():
    spec = EventSpec(EventKind.GT_MIN_INLET_PRESSURE, 2.8e6, index=17, channel="node1.p")
    hit = EventHit(spec, 3725.5, 0.3, np.zeros(1), np.zeros(0))
    assert format_hit(hit) == "T+01:02:05.500000\tgt_min_inlet_pressure\tnode1.p\t17\t3725.500000\trecord_only"
