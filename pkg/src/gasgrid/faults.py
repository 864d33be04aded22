"""Rupture and big-hole leakage closures at a faulted pipe cell.

At the fault index ``j`` the pipe is split in two. The upstream end carries
``(p_j, q_j1)`` and the downstream end ``(p_j, q_j2)``. Two
characteristic relations tie these end values to the neighbouring cells: the
right-going invariant ``S p + c q`` is extrapolated linearly from ``j-1, j-2``
and the left-going invariant ``S p - c q`` from ``j+1, j+2``. The third
relation depends on the fault kind: a rupture pins ``p_j`` to atmospheric
pressure, a leak balances ``q_j1 - q_j2`` against the orifice flow.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .errors import BelowAtmospheric, ParameterOutOfRange, StencilTooNarrow
from .gasnet import GasProperties, Pipe, cell_count

# one coefficient on both orifice branches keeps the leak law continuous at p_sw
DISCHARGE_COEFFICIENT = 1.0
MIN_HOLE_RATIO = 0.2


class FaultKind(enum.Enum):
    RUPTURE = "rupture"
    LEAK = "leak"


@dataclass
class FaultSpec:
    kind: FaultKind
    pipe_id: int
    x_f: float
    t_start: float
    ramp: float = 0.0
    d: float | None = None

    def __post_init__(self):
        self.kind = FaultKind(self.kind)

    @property
    def S_h(self) -> float:
        return 0.0 if self.d is None else math.pi * self.d**2 / 4.0

    def cell_index(self, pipe: Pipe, dx: float) -> int:
        """Validate the fault against ``pipe`` and return its cell index."""
        if not 0 < self.x_f < pipe.L:
            raise ValueError(f"fault position {self.x_f} m outside pipe {pipe.id} (L={pipe.L} m)")
        if self.ramp < 0:
            raise ValueError("fault ramp must be non-negative")
        j = cell_count(self.x_f, dx)
        M = cell_count(pipe.L, dx)
        if j < 2 or j > M - 2:
            raise StencilTooNarrow(f"fault cell {j} needs two regular cells on each side (M={M})")
        if self.kind is FaultKind.LEAK:
            if self.d is None or self.d / pipe.D < MIN_HOLE_RATIO:
                raise ParameterOutOfRange(
                    f"leak hole ratio d/D must be at least {MIN_HOLE_RATIO} (big-hole model)")
        return j

    def onset_fraction(self, t):
        """Linear ramp from 0 at ``t_start`` to 1 at ``t_start + ramp``."""
        if self.ramp == 0:
            return np.where(np.asarray(t) >= self.t_start, 1.0, 0.0)
        return np.clip((np.asarray(t, dtype=float) - self.t_start) / self.ramp, 0.0, 1.0)

    def hole_area(self, t) -> float:
        return self.S_h * float(self.onset_fraction(t))


@dataclass
class FaultState:
    """Mutable per-fault bookkeeping owned by the event engine."""

    spec: FaultSpec
    index: int
    active: bool = False
    p_prefault: float = float("nan")

    def rupture_target(self, t, p_a):
        frac = self.spec.onset_fraction(t)
        return self.p_prefault + (p_a - self.p_prefault) * frac


def upstream_characteristic(p_jm2, q_jm2, p_jm1, q_jm1, p_j, S, c):
    """Mass flow arriving at ``j`` from upstream, from the extrapolated ``S p + c q``."""
    return 2.0 * (S / c * p_jm1 + q_jm1) - (S / c * p_jm2 + q_jm2) - S / c * p_j


def downstream_characteristic(p_j, p_jp1, q_jp1, p_jp2, q_jp2, S, c):
    """Mass flow leaving ``j`` downstream, from the extrapolated ``S p - c q``."""
    return (S / c * p_jp2 - q_jp2) - 2.0 * (S / c * p_jp1 - q_jp1) + S / c * p_j


def leak_pressure(p_jm2, q_jm2, p_jm1, q_jm1, q_j1, S, c):
    """Pressure at the hole implied by the upstream characteristic."""
    return -c / S * q_j1 - (p_jm2 + c / S * q_jm2) + 2.0 * (p_jm1 + c / S * q_jm1)


def _check_stencil(p, q):
    if np.shape(p)[0] != 5 or np.shape(q)[0] != 5:
        raise StencilTooNarrow("fault closures need the five values j-2..j+2")


def rupture_boundary_residuals(p, q, q_leak1, q_leak2, p_target, pipe: Pipe, props: GasProperties):
    """Residuals of the rupture closure.

    ``p`` and ``q`` hold the stencil ``j-2..j+2``; ``p[2]`` is the pressure
    at the break and ``q[2]`` is unused (the break carries two flows).
    Returns ``[q_leak1 - upstream, q_leak2 - downstream, p_j - p_target]``.
    """
    _check_stencil(p, q)
    S, c = pipe.S, props.c
    r1 = q_leak1 - upstream_characteristic(p[0], q[0], p[1], q[1], p[2], S, c)
    r2 = q_leak2 - downstream_characteristic(p[2], p[3], q[3], p[4], q[4], S, c)
    r3 = p[2] - p_target
    return np.stack([r1, r2, r3 + 0.0 * r1])


def switching_pressure(props: GasProperties) -> float:
    """Hole pressure above which the orifice flow is choked."""
    k = props.k
    if k < 1.05:
        raise ParameterOutOfRange(f"adiabatic coefficient {k} too close to 1")
    return (2.0 / (k + 1.0)) ** (-k / (k - 1.0)) * props.p_a


def subsonic_leak_flow(p, area, props: GasProperties, cd=DISCHARGE_COEFFICIENT):
    k = props.k
    ratio = props.p_a / p
    bracket = ratio ** (2.0 / k) - ratio ** ((k + 1.0) / k)
    coeff = 2.0 * props.M_molar / (props.Z * props.R * props.T) * k / (k - 1.0)
    return cd * area * p * np.sqrt(coeff * np.maximum(bracket, 0.0))


def choked_leak_flow(p, area, props: GasProperties, cd=DISCHARGE_COEFFICIENT):
    k = props.k
    coeff = props.M_molar / (props.Z * props.R * props.T) * k * (2.0 / (k + 1.0)) ** ((k + 1.0) / (k - 1.0))
    return cd * area * p * math.sqrt(coeff)


def leak_mass_flow(p_j, spec: FaultSpec | None, props: GasProperties, area=None,
                   cd=DISCHARGE_COEFFICIENT):
    """Orifice mass flow (kg/s) through the hole at hole pressure ``p_j``.

    The subsonic branch applies up to the switching pressure, the choked
    branch above it. The discharge coefficient ``cd`` multiplies both
    branches so the flow is continuous at the switch; pass ``cd=0.61`` for
    a sharp-edged subsonic orifice model.
    """
    if area is None:
        area = spec.S_h
    p_j = np.asarray(p_j, dtype=float)
    if np.any(p_j < props.p_a):
        raise BelowAtmospheric(f"hole pressure {np.min(p_j)} Pa below atmospheric {props.p_a} Pa")
    choked = p_j > switching_pressure(props)
    return np.where(choked, choked_leak_flow(p_j, area, props, cd),
                    subsonic_leak_flow(p_j, area, props, cd))


def leak_regime(p_j, props: GasProperties) -> str:
    return "choked" if p_j > switching_pressure(props) else "subsonic"


def leak_boundary_residuals(p, q, q_j1, q_j2, q_leak, spec: FaultSpec, pipe: Pipe,
                            props: GasProperties, area=None):
    """Residuals of the leak closure for ``(q_j1, q_j2, p_j, q_leak)``.

    ``area`` overrides the hole area (used for the onset ramp).
    """
    _check_stencil(p, q)
    S, c = pipe.S, props.c
    r_down = q_j2 - downstream_characteristic(p[2], p[3], q[3], p[4], q[4], S, c)
    r_up = p[2] - leak_pressure(p[0], q[0], p[1], q[1], q_j1, S, c)
    r_bal = q_j1 - q_leak - q_j2
    r_leak = q_leak - leak_mass_flow(p[2], spec, props, area=area)
    return np.stack([r_down, r_up, r_bal, r_leak])
