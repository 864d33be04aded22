"""Electric power system dynamics: machines, network algebra, gas turbines, P2G.

Per-unit quantities use the system base ``EpsNetwork.s_base`` (VA). Bus
voltages and injected currents are carried as real/imaginary parts in the
network frame, ``I = (G + jB) U``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import NonPositivePressure, TurbineTripped

OMEGA_B = 2.0 * math.pi * 50.0


@dataclass
class Machine:
    """Second-order synchronous machine behind constant transient voltage."""

    bus: int
    T_j: float
    D_damp: float = 0.0
    r_a: float = 0.0
    X_d: float = 0.3
    X_q: float = 0.3
    E_d: float = 0.0
    E_q: float = 1.0
    omega: float = 1.0
    delta: float = 0.0
    P_m: float = 0.0
    P_e: float = 0.0
    gt: int | None = None
    online: bool = True

    def __post_init__(self):
        if not self.T_j > 0:
            raise ValueError("machine inertia constant T_j must be positive")


@dataclass
class EpsNetwork:
    G: np.ndarray
    B: np.ndarray
    omega_B: float = OMEGA_B
    s_base: float = 100e6
    base: EpsNetwork | None = field(default=None, repr=False)

    def __post_init__(self):
        self.G = np.asarray(self.G, dtype=float)
        self.B = np.asarray(self.B, dtype=float)
        if self.G.shape != self.B.shape or self.G.shape[0] != self.G.shape[1]:
            raise ValueError("G and B must be square matrices of equal size")

    @property
    def n_bus(self) -> int:
        return self.G.shape[0]


def admittance_from_lines(n_bus, lines, shunts=()):
    """Assemble ``(G, B)`` from pi-model lines ``(i, j, r, x, b_total)`` and shunt admittances."""
    Y = np.zeros((n_bus, n_bus), dtype=complex)
    for i, j, r, x, b in lines:
        y = 1.0 / complex(r, x)
        Y[i, i] += y + 0.5j * b
        Y[j, j] += y + 0.5j * b
        Y[i, j] -= y
        Y[j, i] -= y
    for i, y in shunts:
        Y[i, i] += y
    return Y.real.copy(), Y.imag.copy()


def apply_bus_fault(network: EpsNetwork, bus: int, fault_admittance: complex) -> EpsNetwork:
    """Return a copy of ``network`` with a shunt ``fault_admittance`` at ``bus``."""
    if not 0 <= bus < network.n_bus:
        raise IndexError(f"bus {bus} out of range")
    y = complex(fault_admittance)
    G = network.G.copy()
    B = network.B.copy()
    G[bus, bus] += y.real
    B[bus, bus] += y.imag
    return replace(network, G=G, B=B, base=network.base or network)


def clear_bus_fault(network: EpsNetwork) -> EpsNetwork:
    return network.base if network.base is not None else network


def center_of_inertia(T_j, omega, online=None):
    T_j = np.asarray(T_j, dtype=float)
    w = T_j if online is None else T_j * np.asarray(online, dtype=float)
    w = w.reshape(w.shape + (1,) * (np.ndim(omega) - 1))
    return np.sum(w * omega, axis=0) / np.sum(w, axis=0)


def machine_derivatives(m: Machine, omega_COI, omega_B=OMEGA_B, omega=None, P_e=None, P_m=None):
    """Swing equation: ``(d omega/dt, d delta/dt)``."""
    omega = m.omega if omega is None else omega
    P_e = m.P_e if P_e is None else P_e
    P_m = m.P_m if P_m is None else P_m
    domega = (P_m - P_e - m.D_damp * (omega - 1.0)) / m.T_j
    ddelta = (omega - omega_COI) * omega_B
    return domega, ddelta


def stator_residuals(m: Machine, delta, Ux, Uy, Ix, Iy):
    """Transient stator equations in the rotor frame (d-axis leads along ``sin delta``)."""
    s, c = np.sin(delta), np.cos(delta)
    re_d = Ux + m.r_a * Ix - m.X_q * Iy
    im_d = Uy + m.r_a * Iy + m.X_q * Ix
    re_q = Ux + m.r_a * Ix - m.X_d * Iy
    im_q = Uy + m.r_a * Iy + m.X_d * Ix
    r_d = m.E_d - (s * re_d - c * im_d)
    r_q = m.E_q - (c * re_q + s * im_q)
    return r_d, r_q


def electrical_power(m: Machine, Ux, Uy, Ix, Iy):
    return Ux * Ix + Uy * Iy + (Ix**2 + Iy**2) * m.r_a


def current_balance(network: EpsNetwork, Ux, Uy, Ix_inj, Iy_inj):
    """Nodal residuals ``I - (G U_x - B U_y)`` and ``I - (G U_y + B U_x)``."""
    G, B = network.G, network.B
    rx = Ix_inj - (G @ Ux - B @ Uy)
    ry = Iy_inj - (G @ Uy + B @ Ux)
    return rx, ry


def stator_network_residuals(machines, network: EpsNetwork, Ux, Uy, Ix, Iy, P_e,
                             delta=None, extra_injection=None):
    """Algebraic EPS residuals stacked as ``[stator d, stator q, P_e, I_x bal, I_y bal]``.

    ``Ix, Iy, P_e`` are per machine, ``Ux, Uy`` per bus. Off-line machines
    are held at zero current and contribute nothing to the bus balance.
    ``extra_injection`` is an optional ``(Ix, Iy)`` pair per bus (loads as
    negative injections).
    """
    Ux = np.asarray(Ux, dtype=float)
    Uy = np.asarray(Uy, dtype=float)
    nb = network.n_bus
    inj_x = np.zeros((nb,) + Ux.shape[1:])
    inj_y = np.zeros_like(inj_x)
    rd, rq, rp = [], [], []
    for i, m in enumerate(machines):
        d = m.delta if delta is None else delta[i]
        ux, uy = Ux[m.bus], Uy[m.bus]
        if m.online:
            a, b = stator_residuals(m, d, ux, uy, Ix[i], Iy[i])
            inj_x[m.bus] += Ix[i]
            inj_y[m.bus] += Iy[i]
        else:
            a, b = Ix[i] + 0.0 * ux, Iy[i] + 0.0 * ux
        rd.append(a)
        rq.append(b)
        rp.append(P_e[i] - electrical_power(m, ux, uy, Ix[i], Iy[i]))
    if extra_injection is not None:
        inj_x = inj_x + extra_injection[0]
        inj_y = inj_y + extra_injection[1]
    bx, by = current_balance(network, Ux, Uy, inj_x, inj_y)
    parts = [np.array(rd), np.array(rq), np.array(rp), bx, by]
    return np.concatenate([np.reshape(p, (-1,) + Ux.shape[1:]) for p in parts])


# -- gas turbine ----------------------------------------------------------

GT_STATES = ("x_temp", "x_valve", "w_fuel", "x_shield", "t_meas")
GT_ALGEBRAIC = ("v_ce", "p_mech", "q_fuel")


@dataclass
class GasTurbine:
    """Rowen-type single-shaft gas turbine driving machine ``machine``.

    Signals are per unit of the turbine rating ``P_rated`` (system pu). The
    fuel signal ``w_fuel`` is per unit of ``q_rated`` (kg/s).
    """

    machine: int
    gas_node: int | None = None
    P_rated: float = 1.0
    q_rated: float = 10.0
    R_gov: float = 0.05
    T_valve: float = 0.4
    T_fuel: float = 1.0
    K_nl: float = 0.23
    K_fuel: float = 0.77
    A_torque: float = 1.3
    B_torque: float = 0.5
    A_temp: float = 700.0 / 950.0
    B_temp: float = 550.0 / 950.0
    K_shield3: float = 0.8
    K_shield4: float = 0.2
    T_shield: float = 15.0
    T_tc: float = 2.5
    T_ref: float = 1.0
    K_temp: float = 0.2
    V_max: float = 1.05
    V_min: float = -0.1
    P_ref: float = 0.8
    p_min_inlet: float = 2.5e6
    tripped: bool = False
    x: np.ndarray = field(default_factory=lambda: np.zeros(5))
    z: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        if not self.p_min_inlet > 0:
            raise ValueError("gas turbine p_min_inlet must be positive")
        self.x = np.asarray(self.x, dtype=float)
        self.z = np.asarray(self.z, dtype=float)

    def governor_signal(self, omega):
        return self.P_ref + (1.0 - omega) / self.R_gov

    def exhaust_temperature(self, w_fuel, omega):
        return 1.0 - self.A_temp * (1.0 - w_fuel) + self.B_temp * (1.0 - omega)

    def equilibrium(self, P_m):
        """States and algebraic values holding mechanical output ``P_m`` at ``omega = 1``."""
        v_ce = P_m / (self.P_rated * self.A_torque * self.K_fuel)
        w = self.K_fuel * v_ce + self.K_nl
        tx = self.exhaust_temperature(w, 1.0)
        self.P_ref = v_ce
        self.x = np.array([self.V_max, w, w, tx, tx])
        self.z = np.array([v_ce, P_m, w * self.q_rated])
        if tx > self.T_ref:
            raise ValueError(f"dispatch {P_m} pu exceeds the exhaust temperature limit")
        return self.x.copy(), self.z.copy()


def gas_turbine_residuals(gt: GasTurbine, omega, p_inlet=None, x=None, z=None):
    """Rowen turbine block equations.

    Returns ``(dx/dt, algebraic residuals, P_m, fuel demand in kg/s)`` for
    the states ``GT_STATES`` and algebraic variables ``GT_ALGEBRAIC``.
    ``p_inlet`` is accepted for interface symmetry; pressure trips are
    handled by events.
    """
    if gt.tripped:
        raise TurbineTripped(f"gas turbine on machine {gt.machine} is tripped")
    x = gt.x if x is None else x
    z = gt.z if z is None else z
    x_temp, x_valve, w_fuel, x_shield, t_meas = x
    v_ce, p_mech, q_fuel = z

    temp_err = gt.T_ref - t_meas
    dx_temp = gt.K_temp * temp_err
    # anti-windup clamp of the temperature controller integrator
    dx_temp = np.where((x_temp >= gt.V_max) & (dx_temp > 0), 0.0, dx_temp)
    dx_temp = np.where((x_temp <= gt.V_min) & (dx_temp < 0), 0.0, dx_temp)

    fuel_cmd = (gt.K_fuel * v_ce + gt.K_nl) * omega
    dx_valve = (fuel_cmd - x_valve) / gt.T_valve
    dw_fuel = (x_valve - w_fuel) / gt.T_fuel
    t_exh = gt.exhaust_temperature(w_fuel, omega)
    dx_shield = (t_exh - x_shield) / gt.T_shield
    t_shield = gt.K_shield3 * t_exh + gt.K_shield4 * x_shield
    dt_meas = (t_shield - t_meas) / gt.T_tc

    torque = gt.A_torque * (w_fuel - gt.K_nl) + gt.B_torque * (1.0 - omega)
    r_v = v_ce - np.minimum(gt.governor_signal(omega), x_temp)
    r_p = p_mech - gt.P_rated * torque
    r_q = q_fuel - gt.q_rated * w_fuel
    dx = np.stack([dx_temp, dx_valve, dw_fuel, dx_shield, dt_meas])
    return dx, np.stack([r_v, r_p, r_q]), gt.P_rated * torque, gt.q_rated * w_fuel


# -- power to gas ---------------------------------------------------------


@dataclass
class P2G:
    bus: int
    gas_node: int
    h_P2G: float
    eta: float
    q_max: float
    saturated: bool = False

    def __post_init__(self):
        if not 0 < self.eta <= 1:
            raise ValueError("P2G efficiency must lie in (0, 1]")


def p2g_power(q, p, unit: P2G, props) -> float:
    """Electric power (W) drawn to inject ``q`` kg/s at node pressure ``p``."""
    if np.any(np.asarray(p) <= 0):
        raise NonPositivePressure(f"P2G node {unit.gas_node}: non-positive pressure")
    return unit.h_P2G * props.c**2 * q / (unit.eta * p)


def constant_power_load_current(P, Q, Ux, Uy):
    """Current injection of a load drawing ``P + jQ`` (pu) at voltage ``U``."""
    v2 = Ux**2 + Uy**2
    # I = conj(S / U) drawn from the bus, injected with negative sign
    ix = -(P * Ux + Q * Uy) / v2
    iy = -(P * Uy - Q * Ux) / v2
    return ix, iy


# -- power flow -----------------------------------------------------------


def power_flow(network: EpsNetwork, bus_types, P_spec, Q_spec, V_spec, tol=1e-12, max_iter=30):
    """Polar Newton-Raphson power flow.

    ``bus_types`` entries are ``"slack"``, ``"pv"`` or ``"pq"``; ``P_spec`` and
    ``Q_spec`` are net injections (pu). Returns complex bus voltages.
    """
    Y = network.G + 1j * network.B
    n = network.n_bus
    types = list(bus_types)
    V = np.array([V_spec[i] if types[i] != "pq" else 1.0 for i in range(n)], dtype=float)
    th = np.zeros(n)
    pv_pq = [i for i in range(n) if types[i] != "slack"]
    pq = [i for i in range(n) if types[i] == "pq"]
    for _ in range(max_iter):
        U = V * np.exp(1j * th)
        S = U * np.conj(Y @ U)
        mis = np.concatenate([(P_spec - S.real)[pv_pq], (Q_spec - S.imag)[pq]])
        if np.max(np.abs(mis), initial=0.0) < tol:
            return U
        J = _pf_jacobian(Y, U, pv_pq, pq)
        dx = np.linalg.solve(J, mis)
        th[pv_pq] += dx[: len(pv_pq)]
        V[pq] += dx[len(pv_pq):]
    raise RuntimeError("power flow did not converge")


def _pf_jacobian(Y, U, pv_pq, pq):
    I = Y @ U
    dS_dth = 1j * np.diag(U) @ np.conj(np.diag(I) - Y @ np.diag(U))
    dS_dV = np.diag(U) @ np.conj(Y @ np.diag(U / np.abs(U))) + np.diag(U / np.abs(U)) @ np.conj(np.diag(I))
    top = np.hstack([dS_dth.real[np.ix_(pv_pq, pv_pq)], dS_dV.real[np.ix_(pv_pq, pq)]])
    bot = np.hstack([dS_dth.imag[np.ix_(pq, pv_pq)], dS_dV.imag[np.ix_(pq, pq)]])
    return np.vstack([top, bot])


def initialize_machine(m: Machine, U: complex, S_gen: complex):
    """Set ``E_d, E_q, delta, P_m, P_e`` so ``m`` injects ``S_gen`` at voltage ``U``."""
    I = np.conj(S_gen / U)
    EQ = U + complex(m.r_a, m.X_q) * I
    m.delta = float(np.angle(EQ))
    m.omega = 1.0
    r_d, r_q = stator_residuals(replace(m, E_d=0.0, E_q=0.0), m.delta, U.real, U.imag, I.real, I.imag)
    m.E_d, m.E_q = float(-r_d), float(-r_q)
    m.P_e = float(electrical_power(m, U.real, U.imag, I.real, I.imag))
    m.P_m = m.P_e
    return I
