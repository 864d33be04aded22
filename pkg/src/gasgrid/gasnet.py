"""Isothermal gas pipeline network and its spatial semi-discretization.

A pipe carries pressure ``p`` (Pa) and mass flow ``q`` (kg/s) governed by::

    dp/dt + (c^2/S) dq/dx = 0
    dq/dt + S dp/dx = -lambda c^2 q|q| / (2 D S p)

States live on cell vertices ``0..M`` (inlet at 0, outlet at ``M``). The
flux ``f(u) = [c^2/S q, S p]`` is split with a global Lax-Friedrichs
splitting and reconstructed either by a third-order WENO scheme or by the
first-order Kurganov-Tadmor (Rusanov) flux.

All arrays carrying cell states use the cell axis as axis 1 of a
``(2, K, ...)`` stack (row 0 pressure, row 1 mass flow). Any trailing axes are
treated as a batch, which lets the Jacobian assembly evaluate many perturbed
states in one call.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import NonIntegerCellCount, NonPositivePressure

WENO_EPS = 1e-6


@dataclass(frozen=True)
class GasProperties:
    """Gas and ambient constants (SI units).

    ``Z`` defaults to the value that makes the isothermal sound speed
    ``sqrt(Z R T / M)`` equal to ``c`` for methane at 0 degC.
    """

    c: float = 340.0
    k: float = 1.3
    M_molar: float = 0.016
    T: float = 273.15
    Z: float = 0.8143
    R: float = 8.314462618
    p_a: float = 101000.0

    def __post_init__(self):
        for name in ("c", "M_molar", "T", "Z", "R", "p_a"):
            if not getattr(self, name) > 0:
                raise ValueError(f"GasProperties.{name} must be positive")
        if not self.k > 1:
            raise ValueError("GasProperties.k must exceed 1")


@dataclass(frozen=True)
class Pipe:
    id: int
    from_node: int
    to_node: int
    L: float
    D: float
    lam: float

    def __post_init__(self):
        if not (self.L > 0 and self.D > 0 and self.lam >= 0):
            raise ValueError(f"pipe {self.id}: L, D must be positive and lambda non-negative")

    @property
    def S(self) -> float:
        return math.pi * self.D**2 / 4.0


@dataclass
class DiscretizedPipe:
    pipe: Pipe
    dx: float
    M_cells: int
    p: np.ndarray
    q: np.ndarray

    @property
    def x(self) -> np.ndarray:
        return np.arange(self.M_cells + 1) * self.dx


def cell_count(L: float, dx: float) -> int:
    if not dx > 0:
        raise NonIntegerCellCount(f"dx must be positive, got {dx}")
    ratio = L / dx
    n = int(round(ratio))
    if n < 1 or abs(ratio - n) > 1e-9 * max(1.0, ratio):
        raise NonIntegerCellCount(f"L/dx = {L}/{dx} = {ratio} is not an integer")
    return n


def discretize_pipe(pipe: Pipe, dx: float) -> DiscretizedPipe:
    """Split ``pipe`` into ``L/dx`` sections; state vectors are left as NaN."""
    M = cell_count(pipe.L, dx)
    return DiscretizedPipe(pipe, float(dx), M, np.full(M + 1, np.nan), np.full(M + 1, np.nan))


class NodeKind(enum.Enum):
    CONSTANT_PRESSURE = "constant_pressure"
    CONSTANT_MASS_FLOW = "constant_mass_flow"
    JUNCTION = "junction"
    COUPLING_GT = "coupling_gt"
    COUPLING_P2G = "coupling_p2g"


@dataclass
class GasNode:
    """A network node.

    ``q_node`` is the net mass flow leaving the network at the node (positive
    for loads, negative for sources), which is the sign that makes the
    incidence balance ``in - out - q_node = 0`` hold. ``setpoint`` is a
    pressure for pressure-controlled kinds and a ``q_node`` value for
    ``CONSTANT_MASS_FLOW``.
    """

    id: int
    kind: NodeKind
    setpoint: float = 0.0
    unit: int | None = None
    p_node: float = float("nan")
    q_node: float = float("nan")

    @property
    def pressure_controlled(self) -> bool:
        return self.kind in (NodeKind.CONSTANT_PRESSURE, NodeKind.COUPLING_P2G)


class IncidenceMatrix:
    """Node-by-pipe incidence: +1 where a pipe flows into a node, -1 where it leaves."""

    def __init__(self, pipes, n_nodes: int):
        rows, cols, vals = [], [], []
        for j, pipe in enumerate(pipes):
            rows += [pipe.to_node, pipe.from_node]
            cols += [j, j]
            vals += [1.0, -1.0]
        self.matrix = sp.csr_matrix((vals, (rows, cols)), shape=(n_nodes, len(pipes)))
        self.plus = self.matrix.maximum(0).tocsr()
        self.minus = self.matrix.minimum(0).tocsr()


@dataclass
class GasNetwork:
    props: GasProperties
    pipes: list
    nodes: list
    incidence: IncidenceMatrix = field(init=False)

    def __post_init__(self):
        self.incidence = IncidenceMatrix(self.pipes, len(self.nodes))

    def incoming(self, node_id):
        return [p.id for p in self.pipes if p.to_node == node_id]

    def outgoing(self, node_id):
        return [p.id for p in self.pipes if p.from_node == node_id]


# -- fluxes ---------------------------------------------------------------


def physical_flux(u, props: GasProperties, pipe: Pipe):
    S = pipe.S
    return np.stack([props.c**2 / S * u[1], S * u[0]])


def _pad(u, ghost: str, width: int = 2):
    if ghost == "periodic":
        return np.concatenate([u[:, -width:], u, u[:, :width]], axis=1)
    if ghost == "extrapolate":
        left = np.repeat(u[:, :1], width, axis=1)
        right = np.repeat(u[:, -1:], width, axis=1)
        return np.concatenate([left, u, right], axis=1)
    raise ValueError(f"unknown ghost mode {ghost!r}")


def _weno3_side(fm1, f0, fp1, gamma0, gamma1):
    """Blend the two 2-point candidates at the face between ``f0`` and ``fp1``."""
    beta0 = (fp1 - f0) ** 2
    beta1 = (f0 - fm1) ** 2
    a0 = gamma0 / (WENO_EPS + beta0) ** 2
    a1 = gamma1 / (WENO_EPS + beta1) ** 2
    cand0 = 0.5 * (f0 + fp1)
    cand1 = -0.5 * fm1 + 1.5 * f0
    return (a0 * cand0 + a1 * cand1) / (a0 + a1)


def weno3_weights(fm1, f0, fp1, gamma=(2.0 / 3.0, 1.0 / 3.0)):
    """Nonlinear weights ``(w0, w1)`` for the candidate stencils ``{0,+1}`` and ``{-1,0}``."""
    beta0 = (fp1 - f0) ** 2
    beta1 = (f0 - fm1) ** 2
    a0 = gamma[0] / (WENO_EPS + beta0) ** 2
    a1 = gamma[1] / (WENO_EPS + beta1) ** 2
    return a0 / (a0 + a1), a1 / (a0 + a1)


def weno3_interface_fluxes(u, props: GasProperties, pipe: Pipe, ghost: str = "extrapolate"):
    """WENO-3 numerical flux at every cell face, including the two end faces.

    Parameters
    ----------
    u : array, shape (2, K, ...)
        Pressure and mass flow at cells ``0..K-1``.
    ghost : {"extrapolate", "periodic"}
        How the two ghost cells beyond each end are filled.

    Returns
    -------
    array, shape (2, K+1, ...)
        Entry ``i`` is the flux at face ``i - 1/2``.
    """
    u = np.asarray(u, dtype=float)
    K = u.shape[1]
    f = physical_flux(u, props, pipe)
    alpha = props.c
    fplus = _pad(0.5 * (f + alpha * u), ghost)
    fminus = _pad(0.5 * (f - alpha * u), ghost)
    # padded index g = cell index + 2; face i-1/2 lies between cells i-1 and i
    j = slice(1, K + 2)  # left cell of each face, padded
    jm1 = slice(0, K + 1)
    jp1 = slice(2, K + 3)
    jp2 = slice(3, K + 4)
    # left-biased reconstruction of the right-going part
    left = _weno3_side(fplus[:, jm1], fplus[:, j], fplus[:, jp1], 2.0 / 3.0, 1.0 / 3.0)
    # right-biased reconstruction of the left-going part (mirror image)
    right = _weno3_side(fminus[:, jp2], fminus[:, jp1], fminus[:, j], 2.0 / 3.0, 1.0 / 3.0)
    return left + right


def kt_interface_fluxes(u, props: GasProperties, pipe: Pipe, ghost: str = "extrapolate"):
    """First-order central (Rusanov) flux with ``alpha = c`` at every face.

    Same layout as :func:`weno3_interface_fluxes`.
    """
    u = np.asarray(u, dtype=float)
    f = physical_flux(u, props, pipe)
    up = _pad(u, ghost, 1)
    fp = _pad(f, ghost, 1)
    return 0.5 * (fp[:, :-1] + fp[:, 1:] - props.c * (up[:, 1:] - up[:, :-1]))


class Scheme(enum.Enum):
    WENO3 = "weno3"
    KT = "kt"


def _flux_fn(scheme):
    scheme = Scheme(scheme)
    return weno3_interface_fluxes if scheme is Scheme.WENO3 else kt_interface_fluxes


def friction(p, q, props: GasProperties, pipe: Pipe, offset: int = 0):
    """Friction source of the momentum equation; raises on non-positive pressure."""
    if np.any(p <= 0):
        bad = np.argwhere(np.asarray(p) <= 0)[0]
        raise NonPositivePressure(
            f"pipe {pipe.id}: non-positive pressure at cell {int(bad[0]) + offset}",
            index=(pipe.id, int(bad[0]) + offset),
        )
    return -pipe.lam * props.c**2 * q * np.abs(q) / (2.0 * pipe.D * pipe.S * p)


def cell_rhs(u, dx, scheme, props: GasProperties, pipe: Pipe, ghost="extrapolate", offset=0):
    """Time derivative at every cell of ``u`` (shape ``(2, K, ...)``)."""
    fhat = _flux_fn(scheme)(u, props, pipe, ghost)
    dudt = -(fhat[:, 1:] - fhat[:, :-1]) / dx
    dudt[1] += friction(u[0], u[1], props, pipe, offset)
    return dudt


def pipe_rhs(dpipe: DiscretizedPipe, scheme="weno3", props: GasProperties | None = None,
             ghost="extrapolate"):
    """Return ``(dp/dt, dq/dt)`` at every cell of a discretized pipe."""
    props = props or GasProperties()
    u = np.stack([dpipe.p, dpipe.q])
    dudt = cell_rhs(u, dpipe.dx, scheme, props, dpipe.pipe, ghost)
    return dudt[0], dudt[1]


def linepack(p, dx, props: GasProperties, pipe: Pipe):
    """Gas mass (kg) held by cells with pressures ``p``, each of width ``dx``."""
    return np.sum(p, axis=0) * pipe.S * dx / props.c**2


# -- node coupling --------------------------------------------------------


def node_residuals(network: GasNetwork, p_in, q_in, p_out, q_out, p_node, q_node, demand=None):
    """Node continuity residuals.

    Returns the stacked vector ``[mass balance (n_nodes), p_node - p_in
    (n_pipes), p_node - p_out (n_pipes), kind closure (n_nodes)]``. ``demand``
    supplies ``q_node`` targets for ``COUPLING_GT`` nodes.
    """
    inc = network.incidence
    q_in = np.asarray(q_in, dtype=float)
    q_out = np.asarray(q_out, dtype=float)
    p_node = np.asarray(p_node, dtype=float)
    q_node = np.asarray(q_node, dtype=float)
    mass = inc.plus @ q_out + inc.minus @ q_in - q_node
    frm = np.array([p.from_node for p in network.pipes], dtype=int)
    to = np.array([p.to_node for p in network.pipes], dtype=int)
    r_in = p_node[frm] - np.asarray(p_in, dtype=float)
    r_out = p_node[to] - np.asarray(p_out, dtype=float)
    demand = np.zeros(len(network.nodes)) if demand is None else np.asarray(demand, dtype=float)
    closure = np.empty(len(network.nodes))
    for i, node in enumerate(network.nodes):
        closure[i] = kind_closure(node, p_node[i], q_node[i], demand[i])
    return np.concatenate([mass, r_in, r_out, closure])


def kind_closure(node: GasNode, p_node, q_node, demand=0.0):
    if node.pressure_controlled:
        return p_node - node.setpoint
    if node.kind is NodeKind.CONSTANT_MASS_FLOW:
        return q_node - node.setpoint
    if node.kind is NodeKind.COUPLING_GT:
        return q_node - demand
    return q_node
