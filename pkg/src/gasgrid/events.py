"""Event functions, crossing detection, critical-time location and actions.

An event monitors one scalar ``phi = x[index] * scale - threshold`` (or
``t - threshold`` for time events). A crossing is detected on the endpoints
of an accepted step and located on the step's dense output.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .errors import NoRootBracketed

log = logging.getLogger(__name__)

THETA_TOL = 1e-10


class EventKind(enum.Enum):
    REGULATOR_MIN_PRESSURE = "regulator_min_pressure"
    LOAD_MIN_PRESSURE = "load_min_pressure"
    LOAD_MAX_PRESSURE = "load_max_pressure"
    SOURCE_MAX_FLOW = "source_max_flow"
    GT_MIN_INLET_PRESSURE = "gt_min_inlet_pressure"
    P2G_SATURATION = "p2g_saturation"
    FAULT_ONSET = "fault_onset"
    FAULT_CLEAR = "fault_clear"


class EventAction(enum.Enum):
    CUT_LOAD = "cut_load"
    CONVERT_NODE_TO_CONST_FLOW = "convert_node_to_const_flow"
    TRIP_GT = "trip_gt"
    ACTIVATE_FAULT = "activate_fault"
    CLEAR_BUS_FAULT = "clear_bus_fault"
    RECORD_ONLY = "record_only"


@dataclass(eq=False)
class EventSpec:
    """One monitored condition and the action it triggers.

    ``index`` is a global state index (``None`` for time events). ``scale``
    flips or scales the monitored value, e.g. ``-1`` to monitor supply as
    ``-q_node``. ``direction`` restricts detection to rising (+1) or falling
    (-1) crossings. ``target`` names the object the action operates on.
    ``channel`` is the human-readable monitored variable, kept for I/O.
    """

    kind: EventKind
    threshold: float
    action: EventAction = EventAction.RECORD_ONLY
    index: int | None = None
    target: object = None
    direction: int = 0
    scale: float = 1.0
    channel: str | None = None
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        self.kind = EventKind(self.kind)
        self.action = EventAction(self.action)
        if not np.isfinite(self.threshold):
            raise ValueError("event threshold must be finite")
        if self.direction not in (-1, 0, 1):
            raise ValueError("event direction must be -1, 0 or +1")

    @property
    def is_time_event(self) -> bool:
        return self.index is None


@dataclass
class EventHit:
    spec: EventSpec
    t_cr: float
    theta: float
    y: np.ndarray = field(repr=False)
    z: np.ndarray = field(repr=False)


def event_value(spec: EventSpec, t, x):
    if spec.is_time_event:
        return t - spec.threshold
    return spec.scale * x[spec.index] - spec.threshold


def detect_sign_change(spec: EventSpec, phi0, phi1) -> bool:
    """True on a strict sign change, or when ``phi1`` lands exactly on zero."""
    if not (np.isfinite(phi0) and np.isfinite(phi1)):
        raise ValueError("event values must be finite")
    if phi0 * phi1 < 0:
        crossed = True
    else:
        crossed = phi1 == 0 and phi0 != 0
    if not crossed or spec.direction == 0:
        return crossed
    return bool(np.sign(phi1 - phi0) == spec.direction)


def locate_critical_time(step, spec: EventSpec, t_end=None) -> EventHit:
    """Find the first root of ``phi`` over ``step`` through its dense output."""
    from .rosenbrock import dense_eval

    t0, h = step.t0, step.h
    theta_end = 1.0 if t_end is None else min(1.0, (t_end - t0) / h)

    if spec.is_time_event:
        theta = (spec.threshold - t0) / h
        if not -1e-12 <= theta <= theta_end + 1e-12:
            raise NoRootBracketed(f"time event at {spec.threshold} outside step")
        theta = min(max(theta, 0.0), theta_end)
        y, z = dense_eval(step, theta)
        t_cr = spec.threshold
        return EventHit(spec, t_cr, theta, y, z)

    def phi(theta):
        x = _dense_component(step, spec.index, theta)
        return spec.scale * x - spec.threshold

    grid = np.linspace(0.0, theta_end, 17)
    values = np.array([phi(th) for th in grid])
    values[0] = spec.scale * step.x0[spec.index] - spec.threshold
    for k in range(len(grid) - 1):
        a, b = values[k], values[k + 1]
        if a == 0 and k > 0:
            theta = grid[k]
            break
        if a * b < 0:
            theta = brentq(phi, grid[k], grid[k + 1], xtol=THETA_TOL, rtol=4 * np.finfo(float).eps)
            break
    else:
        if values[-1] == 0 or abs(values[-1]) < 1e-14 * max(1.0, abs(spec.threshold)):
            theta = theta_end
        else:
            raise NoRootBracketed(f"{spec.kind.value}: no root of the monitored value in the step")
    y, z = dense_eval(step, theta)
    return EventHit(spec, t0 + theta * h, float(theta), y, z)


def _dense_component(step, i, theta):
    d = step.x1[i] - step.x0[i]
    return step.x0[i] + theta * (d + (1.0 - theta) * (step.H2[i] + theta * step.H3[i]))


def apply_event_action(system, hit: EventHit, x):
    """Execute ``hit``'s action on ``system`` and return a consistent restart state.

    The differential part of ``x`` is kept; the algebraic part is re-solved.
    """
    spec = hit.spec
    act = spec.action
    if act is EventAction.TRIP_GT:
        system.trip_gt(spec.target)
    elif act is EventAction.CONVERT_NODE_TO_CONST_FLOW:
        system.convert_node(spec.target, spec.params.get("q_node"), x)
    elif act is EventAction.CUT_LOAD:
        system.cut_load(spec.target)
    elif act is EventAction.ACTIVATE_FAULT:
        if isinstance(spec.target, tuple) and spec.target[0] == "bus":
            system.apply_bus_fault(spec.target[1], spec.params["admittance"])
        else:
            system.activate_fault(spec.target, hit.t_cr, x)
    elif act is EventAction.CLEAR_BUS_FAULT:
        system.clear_bus_fault(spec.target)
    if act is EventAction.RECORD_ONLY:
        return x
    return system.reinitialize_algebraic(hit.t_cr, x)


def format_hit(hit: EventHit) -> str:
    """One event-log line: time offset, kind, monitored index, t_cr, action."""
    t = hit.t_cr
    hh, rem = divmod(t, 3600.0)
    mm, ss = divmod(rem, 60.0)
    idx = "-" if hit.spec.index is None else str(hit.spec.index)
    channel = hit.spec.channel or idx
    return (f"T+{int(hh):02d}:{int(mm):02d}:{ss:09.6f}\t{hit.spec.kind.value}\t{channel}\t"
            f"{idx}\t{t:.6f}\t{hit.spec.action.value}")
