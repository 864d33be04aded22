"""Flatten the gas network, faults and power system into one index-1 DAE.

The unknown vector is ``x = [y; z]``: ``y`` holds the differential unknowns
(interior pipe cells, rotor speeds and angles, gas-turbine states) and ``z``
the algebraic ones (pipe end cells, fault variables, node pressures and
flows, bus voltages, machine currents and electrical power, turbine and P2G
signals). :meth:`DaeSystem.residual` returns ``F = [f; g]`` so that the
system reads ``M x' = F(t, x)`` with ``M = diag(I_n, 0)``.

Pipe end cells are algebraic. Each end is closed by pressure equality with
its node and by linear extrapolation of the characteristic invariant that
leaves the pipe there (``S p - c q`` at the inlet, ``S p + c q`` at the
outlet), which keeps the system index 1 and mirrors the fault closures.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy import optimize

from .errors import GasGridError, InconsistentRestart, NoConvergence
from .faults import (FaultKind, FaultSpec, FaultState, downstream_characteristic,
                     leak_boundary_residuals, leak_pressure, rupture_boundary_residuals)
from .gasnet import GasNetwork, NodeKind, Scheme, cell_count, cell_rhs
from .powersys import (GT_ALGEBRAIC, GT_STATES, EpsNetwork, Machine, admittance_from_lines,
                       apply_bus_fault, clear_bus_fault, constant_power_load_current,
                       gas_turbine_residuals, initialize_machine, machine_derivatives, p2g_power,
                       power_flow, stator_network_residuals)

log = logging.getLogger(__name__)

FD_STEP = 1e-7


@dataclass
class Bus:
    id: int
    kind: str = "pq"
    V: float = 1.0
    P_gen: float = 0.0
    P_load: float = 0.0
    Q_load: float = 0.0


@dataclass
class EpsModel:
    """Power system description. Loads are given as powers at the initial point
    and become constant admittances once the power flow is solved."""

    buses: list
    lines: list
    machines: list
    gts: list = field(default_factory=list)
    p2gs: list = field(default_factory=list)
    s_base: float = 100e6
    omega_B: float = 2 * np.pi * 50.0
    network: EpsNetwork | None = None

    def __post_init__(self):
        if self.network is None:
            G, B = admittance_from_lines(len(self.buses), self.lines)
            self.network = EpsNetwork(G, B, self.omega_B, self.s_base)

    @property
    def n_bus(self):
        return len(self.buses)


class DaeLayout:
    """Bijective map between ``(component, id, variable)`` keys and global slots."""

    def __init__(self):
        self._diff: list = []
        self._alg: list = []
        self.slots: dict = {}
        self.names: list = []
        self.n = self.m = 0

    def add(self, comp, ident, var, differential, count=None):
        target = self._diff if differential else self._alg
        if count is None:
            target.append((comp, ident, var))
        else:
            target.extend((comp, ident, (var, k)) for k in count)

    def finalize(self):
        keys = self._diff + self._alg
        self.n, self.m = len(self._diff), len(self._alg)
        self.slots = {k: i for i, k in enumerate(keys)}
        if len(self.slots) != len(keys):
            raise ValueError("duplicate layout keys")
        self.names = [_key_name(k) for k in keys]

    def __getitem__(self, key):
        return self.slots[key]

    def take(self, comp, ident, var, cells):
        return np.array([self.slots[(comp, ident, (var, c))] for c in cells], dtype=int)

    @property
    def N(self):
        return self.n + self.m

    @property
    def mass(self):
        d = np.zeros(self.N)
        d[: self.n] = 1.0
        return d


def _key_name(key):
    comp, ident, var = key
    if isinstance(var, tuple):
        return f"{comp}{ident}.{var[0]}[{var[1]}]"
    return f"{comp}{ident}.{var}"


@dataclass
class _Segment:
    a: int
    b: int
    p: np.ndarray
    q: np.ndarray


@dataclass
class _PipeMap:
    pipe: object
    M: int
    P: np.ndarray
    Q: np.ndarray
    segments: list = field(default_factory=list)
    faults: list = field(default_factory=list)


@dataclass
class _FaultMap:
    state: FaultState
    pipe_pos: int
    j: int
    p: np.ndarray
    q: np.ndarray
    pj: int
    qj1: int
    qj2: int
    ql: int


@dataclass
class SparseJacobian:
    """Fixed sparsity pattern with its column coloring."""

    rows: np.ndarray
    cols: np.ndarray
    colors: np.ndarray
    n_colors: int
    shape: tuple

    def matrix(self, values):
        return sp.csc_matrix((values, (self.rows, self.cols)), shape=self.shape)


class DaeSystem:
    """Semi-explicit DAE of a gas network with optional power system coupling."""

    def __init__(self, gas: GasNetwork, dx: float, scheme="weno3", faults=(), eps: EpsModel | None = None,
                 ghost="extrapolate"):
        self.gas = gas
        self.props = gas.props
        self.dx = float(dx)
        self.scheme = Scheme(scheme)
        self.ghost = ghost
        self.eps = eps
        self.fault_specs = list(faults)
        self.x0 = None
        self.layout_rebuilds = 0
        self._build_layout()
        self._build_pattern()

    # -- layout -----------------------------------------------------------

    def _build_layout(self):
        L = DaeLayout()
        pipes_cells = []
        fault_cells = {}
        for k, spec in enumerate(self.fault_specs):
            pipe = self._pipe(spec.pipe_id)
            j = spec.cell_index(pipe, self.dx)
            fault_cells.setdefault(pipe.id, []).append((j, k))
        for pipe in self.gas.pipes:
            M = cell_count(pipe.L, self.dx)
            fl = sorted(fault_cells.get(pipe.id, []))
            js = [j for j, _ in fl]
            if any(b - a < 4 for a, b in zip(js, js[1:])):
                raise ValueError(f"faults on pipe {pipe.id} must be at least 4 cells apart")
            interior = [i for i in range(1, M) if i not in js]
            pipes_cells.append((pipe, M, fl, interior))
            L.add("pipe", pipe.id, "p", True, interior)
            L.add("pipe", pipe.id, "q", True, interior)
        for i, _ in enumerate(self.eps.machines if self.eps else []):
            L.add("machine", i, "omega", True)
            L.add("machine", i, "delta", True)
        for g, _ in enumerate(self.eps.gts if self.eps else []):
            for s in GT_STATES:
                L.add("gt", g, s, True)
        # algebraic
        for pipe, M, fl, _ in pipes_cells:
            L.add("pipe", pipe.id, "p", False, [0, M] + [j for j, _ in fl])
            L.add("pipe", pipe.id, "q", False, [0, M] + [j for j, _ in fl])
            for j, k in fl:
                L.add("fault", k, "q_j2", False)
                L.add("fault", k, "q_leak", False)
        for node in self.gas.nodes:
            L.add("node", node.id, "p", False)
            L.add("node", node.id, "q", False)
        if self.eps:
            for b in range(self.eps.n_bus):
                L.add("bus", b, "Ux", False)
                L.add("bus", b, "Uy", False)
            for i, _ in enumerate(self.eps.machines):
                for v in ("Ix", "Iy", "Pe"):
                    L.add("machine", i, v, False)
            for g, _ in enumerate(self.eps.gts):
                for v in GT_ALGEBRAIC:
                    L.add("gt", g, v, False)
            for u, _ in enumerate(self.eps.p2gs):
                L.add("p2g", u, "P", False)
        L.finalize()
        self.layout = L
        self.n, self.N = L.n, L.N

        self.pipe_maps = []
        self.fault_maps = [None] * len(self.fault_specs)
        for pos, (pipe, M, fl, _) in enumerate(pipes_cells):
            P = L.take("pipe", pipe.id, "p", range(M + 1))
            Q = L.take("pipe", pipe.id, "q", range(M + 1))
            pm = _PipeMap(pipe, M, P, Q)
            cuts = [0] + [j for j, _ in fl] + [M]
            for a, b in zip(cuts, cuts[1:]):
                q = Q[a: b + 1].copy()
                if a > 0:
                    kf = dict(fl)[a]
                    q[0] = L[("fault", kf, "q_j2")]
                pm.segments.append(_Segment(a, b, P[a: b + 1], q))
            for j, k in fl:
                st = FaultState(self.fault_specs[k], j)
                fp = P[j - 2: j + 3]
                fq = Q[j - 2: j + 3]
                fm = _FaultMap(st, pos, j, fp, fq, P[j], Q[j], L[("fault", k, "q_j2")],
                               L[("fault", k, "q_leak")])
                self.fault_maps[k] = fm
                pm.faults.append(fm)
            self.pipe_maps.append(pm)

        self.node_p = np.array([L[("node", nd.id, "p")] for nd in self.gas.nodes])
        self.node_q = np.array([L[("node", nd.id, "q")] for nd in self.gas.nodes])
        self._node_pos = {nd.id: i for i, nd in enumerate(self.gas.nodes)}
        self.pipe_q0 = np.array([pm.Q[0] for pm in self.pipe_maps])
        self.pipe_qM = np.array([pm.Q[pm.M] for pm in self.pipe_maps])
        if self.eps:
            e = self.eps
            self.bus_x = np.array([L[("bus", b, "Ux")] for b in range(e.n_bus)], dtype=int)
            self.bus_y = np.array([L[("bus", b, "Uy")] for b in range(e.n_bus)], dtype=int)
            nm = len(e.machines)
            self.m_omega = np.array([L[("machine", i, "omega")] for i in range(nm)], dtype=int)
            self.m_delta = np.array([L[("machine", i, "delta")] for i in range(nm)], dtype=int)
            self.m_Ix = np.array([L[("machine", i, "Ix")] for i in range(nm)], dtype=int)
            self.m_Iy = np.array([L[("machine", i, "Iy")] for i in range(nm)], dtype=int)
            self.m_Pe = np.array([L[("machine", i, "Pe")] for i in range(nm)], dtype=int)
            self.gt_x = [np.array([L[("gt", g, s)] for s in GT_STATES]) for g in range(len(e.gts))]
            self.gt_z = [np.array([L[("gt", g, v)] for v in GT_ALGEBRAIC]) for g in range(len(e.gts))]
            self.p2g_P = np.array([L[("p2g", u, "P")] for u in range(len(e.p2gs))], dtype=int)

    def _pipe(self, pipe_id):
        for p in self.gas.pipes:
            if p.id == pipe_id:
                return p
        raise ValueError(f"unknown pipe {pipe_id}")

    def node_position(self, node_id):
        return self._node_pos[node_id]

    def index(self, comp, ident, var, cell=None):
        """Global slot of a variable, e.g. ``index("node", 1, "p")`` or ``index("pipe", 0, "q", 0)``."""
        if comp == "pipe":
            pm = next(pm for pm in self.pipe_maps if pm.pipe.id == ident)
            cell = pm.M if cell in (None, -1) else cell
            return int((pm.P if var == "p" else pm.Q)[cell])
        return self.layout[(comp, ident, var)]

    def variable_name(self, i):
        return self.layout.names[i]

    def describe_variable(self, i):
        """Variable name, plus the node it touches for pipe end cells."""
        name = self.variable_name(i)
        for pm in self.pipe_maps:
            if i in (pm.P[0], pm.Q[0]):
                return f"{name} (node {pm.pipe.from_node})"
            if i in (pm.P[pm.M], pm.Q[pm.M]):
                return f"{name} (node {pm.pipe.to_node})"
        return name

    def state_violation(self, x):
        """Index of the first non-positive pipe or node pressure in ``x``, else ``None``."""
        idx = np.concatenate([pm.P for pm in self.pipe_maps] + [self.node_p])
        bad = idx[x[idx] <= 0]
        return int(bad[0]) if bad.size else None

    @property
    def names(self):
        return self.layout.names

    def gas_indices(self):
        idx = [pm.P for pm in self.pipe_maps] + [pm.Q for pm in self.pipe_maps]
        idx += [np.array([fm.qj2, fm.ql]) for fm in self.fault_maps]
        idx += [self.node_p, self.node_q]
        return np.unique(np.concatenate(idx))

    # -- residual ---------------------------------------------------------

    def residual(self, t, X):
        """``F(t, X)`` for ``X`` of shape ``(N,)`` or ``(N, K)``."""
        X = np.asarray(X, dtype=float)
        single = X.ndim == 1
        if single:
            X = X[:, None]
        out = np.empty_like(X)
        props = self.props
        c = props.c
        for pm in self.pipe_maps:
            pipe = pm.pipe
            for seg in pm.segments:
                u = np.stack([X[seg.p], X[seg.q]])
                d = cell_rhs(u, self.dx, self.scheme, props, pipe, self.ghost, offset=seg.a)
                out[seg.p[1:-1]] = d[0, 1:-1]
                out[seg.q[1:-1]] = d[1, 1:-1]
            w = pipe.S / c
            s0, s1 = pm.segments[0], pm.segments[-1]
            p, q = X[s0.p[:3]], X[s0.q[:3]]
            out[pm.P[0]] = X[self.node_p[self._node_pos[pipe.from_node]]] - p[0]
            out[pm.Q[0]] = (w * p[0] - q[0]) - 2 * (w * p[1] - q[1]) + (w * p[2] - q[2])
            p, q = X[s1.p[-3:]], X[s1.q[-3:]]
            out[pm.P[pm.M]] = X[self.node_p[self._node_pos[pipe.to_node]]] - p[2]
            out[pm.Q[pm.M]] = (w * p[2] + q[2]) - 2 * (w * p[1] + q[1]) + (w * p[0] + q[0])
        for fm in self.fault_maps:
            self._fault_residual(t, X, out, fm)
        self._node_residual(X, out)
        if self.eps:
            self._eps_residual(X, out)
        return out[:, 0] if single else out

    def _fault_residual(self, t, X, out, fm: _FaultMap):
        st = fm.state
        spec = st.spec
        pipe = self.pipe_maps[fm.pipe_pos].pipe
        p5, q5 = X[fm.p], X[fm.q]
        qj1, qj2, ql = X[fm.qj1], X[fm.qj2], X[fm.ql]
        if st.active and spec.kind is FaultKind.RUPTURE:
            r = rupture_boundary_residuals(p5, q5, qj1, qj2, st.rupture_target(t, self.props.p_a),
                                           pipe, self.props)
            out[fm.qj1], out[fm.qj2], out[fm.pj] = r[0], r[1], r[2]
            out[fm.ql] = ql - (qj1 - qj2)
            return
        area = spec.hole_area(t) if st.active else 0.0
        if area > 0:
            r = leak_boundary_residuals(p5, q5, qj1, qj2, ql, spec, pipe, self.props, area=area)
            out[fm.qj2], out[fm.pj], out[fm.qj1], out[fm.ql] = r[0], r[1], r[2], r[3]
            return
        S, c = pipe.S, self.props.c
        out[fm.qj2] = qj2 - downstream_characteristic(p5[2], p5[3], q5[3], p5[4], q5[4], S, c)
        out[fm.pj] = p5[2] - leak_pressure(p5[0], q5[0], p5[1], q5[1], qj1, S, c)
        out[fm.qj1] = qj1 - ql - qj2
        out[fm.ql] = ql

    def _node_residual(self, X, out):
        inc = self.gas.incidence
        qn = X[self.node_q]
        out[self.node_q] = inc.plus @ X[self.pipe_qM] + inc.minus @ X[self.pipe_q0] - qn
        for i, node in enumerate(self.gas.nodes):
            rp = self.node_p[i]
            out[rp] = self._closure(node, X[rp], X[self.node_q[i]], X)

    def _closure(self, node, p, q, X):
        k = node.kind
        if k is NodeKind.CONSTANT_PRESSURE or k is NodeKind.COUPLING_P2G:
            return p - node.setpoint
        if k is NodeKind.CONSTANT_MASS_FLOW:
            return q - node.setpoint
        if k is NodeKind.COUPLING_GT:
            if self.eps is not None and node.unit is not None:
                return q - X[self.gt_z[node.unit][2]]
            return q - node.setpoint
        return q

    def _eps_residual(self, X, out):
        e = self.eps
        net = e.network
        om, de = X[self.m_omega], X[self.m_delta]
        online = np.array([m.online for m in e.machines], dtype=float)
        Tj = np.array([m.T_j for m in e.machines])
        wts = (Tj * online)[:, None]
        coi = np.sum(wts * om, axis=0) / max(np.sum(wts), 1e-300)
        for i, m in enumerate(e.machines):
            if not m.online:
                out[self.m_omega[i]] = 0.0
                out[self.m_delta[i]] = 0.0
                continue
            Pm = X[self.gt_z[m.gt][1]] if m.gt is not None else m.P_m
            dw, dd = machine_derivatives(m, coi, net.omega_B, omega=om[i], P_e=X[self.m_Pe[i]], P_m=Pm)
            out[self.m_omega[i]] = dw
            out[self.m_delta[i]] = dd
        Ux, Uy = X[self.bus_x], X[self.bus_y]
        ex = np.zeros_like(Ux)
        ey = np.zeros_like(Uy)
        for u, unit in enumerate(e.p2gs):
            ix, iy = constant_power_load_current(X[self.p2g_P[u]], 0.0, Ux[unit.bus], Uy[unit.bus])
            ex[unit.bus] += ix
            ey[unit.bus] += iy
        r = stator_network_residuals(e.machines, net, Ux, Uy, X[self.m_Ix], X[self.m_Iy],
                                     X[self.m_Pe], delta=de, extra_injection=(ex, ey))
        nm, nb = len(e.machines), e.n_bus
        out[self.m_Ix] = r[:nm]
        out[self.m_Iy] = r[nm: 2 * nm]
        out[self.m_Pe] = r[2 * nm: 3 * nm]
        out[self.bus_x] = r[3 * nm: 3 * nm + nb]
        out[self.bus_y] = r[3 * nm + nb:]
        for g, gt in enumerate(e.gts):
            xi, zi = self.gt_x[g], self.gt_z[g]
            if gt.tripped:
                out[xi] = 0.0
                out[zi] = X[zi]
                continue
            dx, rz, _, _ = gas_turbine_residuals(gt, om[gt.machine], None, x=X[xi], z=X[zi])
            out[xi] = dx
            out[zi] = rz
        for u, unit in enumerate(e.p2gs):
            k = self._node_pos[unit.gas_node]
            P = p2g_power(-X[self.node_q[k]], X[self.node_p[k]], unit, self.props) / e.s_base
            out[self.p2g_P[u]] = X[self.p2g_P[u]] - P

    # -- jacobian ---------------------------------------------------------

    def _build_pattern(self):
        rows, cols = [], []

        def dep(r, c):
            r = np.atleast_1d(r)
            c = np.atleast_1d(c)
            rows.append(np.repeat(r, c.size))
            cols.append(np.tile(c, r.size))

        width = 2 if self.scheme is Scheme.WENO3 else 1
        for pm in self.pipe_maps:
            for seg in pm.segments:
                n_c = seg.b - seg.a + 1
                for i in range(1, n_c - 1):
                    lo, hi = max(0, i - width), min(n_c, i + width + 1)
                    cs = np.concatenate([seg.p[lo:hi], seg.q[lo:hi]])
                    dep([seg.p[i], seg.q[i]], cs)
            s0, s1 = pm.segments[0], pm.segments[-1]
            dep(pm.P[0], [pm.P[0], self.node_p[self._node_pos[pm.pipe.from_node]]])
            dep(pm.Q[0], np.concatenate([s0.p[:3], s0.q[:3]]))
            dep(pm.P[pm.M], [pm.P[pm.M], self.node_p[self._node_pos[pm.pipe.to_node]]])
            dep(pm.Q[pm.M], np.concatenate([s1.p[-3:], s1.q[-3:]]))
        for fm in self.fault_maps:
            cs = np.concatenate([fm.p, fm.q[[0, 1, 3, 4]], [fm.qj1, fm.qj2, fm.ql]])
            dep([fm.pj, fm.qj1, fm.qj2, fm.ql], cs)
        for i, node in enumerate(self.gas.nodes):
            extra = []
            if self.eps is not None and node.kind is NodeKind.COUPLING_GT and node.unit is not None:
                extra = [self.gt_z[node.unit][2]]
            dep(self.node_p[i], [self.node_p[i], self.node_q[i]] + extra)
            ends = [pm.Q[pm.M] for pm in self.pipe_maps if pm.pipe.to_node == node.id]
            ends += [pm.Q[0] for pm in self.pipe_maps if pm.pipe.from_node == node.id]
            dep(self.node_q[i], [self.node_q[i]] + ends)
        if self.eps:
            self._eps_pattern(dep)
        r = np.concatenate(rows)
        c = np.concatenate(cols)
        key = np.unique(r.astype(np.int64) * self.N + c)
        r, c = key // self.N, key % self.N
        colors, n_colors = color_columns(r, c, self.N)
        self.jac = SparseJacobian(r, c, colors, n_colors, (self.N, self.N))
        self._linear_rows = self._static_linear_rows()

    def _eps_pattern(self, dep):
        e = self.eps
        Ystruct = (np.abs(e.network.G) + np.abs(e.network.B) + np.eye(e.n_bus)) > 0
        for b in range(e.n_bus):
            nb = np.flatnonzero(Ystruct[b])
            cs = [self.bus_x[nb], self.bus_y[nb]]
            for i, m in enumerate(e.machines):
                if m.bus == b:
                    cs.append([self.m_Ix[i], self.m_Iy[i]])
            for u, unit in enumerate(e.p2gs):
                if unit.bus == b:
                    cs.append([self.p2g_P[u], self.bus_x[b], self.bus_y[b]])
            cs = np.concatenate([np.atleast_1d(v) for v in cs])
            dep([self.bus_x[b], self.bus_y[b]], cs)
        for i, m in enumerate(e.machines):
            cs = [self.m_delta[i], self.bus_x[m.bus], self.bus_y[m.bus], self.m_Ix[i], self.m_Iy[i], self.m_Pe[i]]
            dep([self.m_Ix[i], self.m_Iy[i], self.m_Pe[i]], cs)
            cs = [self.m_omega[i], self.m_Pe[i]] + ([self.gt_z[m.gt][1]] if m.gt is not None else [])
            dep(self.m_omega[i], cs)
            dep(self.m_delta[i], self.m_omega)
        for g, gt in enumerate(e.gts):
            cs = np.concatenate([self.gt_x[g], self.gt_z[g], [self.m_omega[gt.machine]]])
            dep(np.concatenate([self.gt_x[g], self.gt_z[g]]), cs)
        for u, unit in enumerate(e.p2gs):
            k = self._node_pos[unit.gas_node]
            dep(self.p2g_P[u], [self.p2g_P[u], self.node_p[k], self.node_q[k]])

    def _static_linear_rows(self):
        """Exact entries of rows that are linear with constant coefficients."""
        rows, cols, vals = [], [], []
        c = self.props.c
        for pm in self.pipe_maps:
            w = pm.pipe.S / c
            s0, s1 = pm.segments[0], pm.segments[-1]
            for r, cc, v in ((pm.P[0], [self.node_p[self._node_pos[pm.pipe.from_node]], pm.P[0]], [1, -1]),
                             (pm.P[pm.M], [self.node_p[self._node_pos[pm.pipe.to_node]], pm.P[pm.M]], [1, -1]),
                             (pm.Q[0], list(s0.p[:3]) + list(s0.q[:3]), [w, -2 * w, w, -1, 2, -1]),
                             (pm.Q[pm.M], list(s1.p[-3:]) + list(s1.q[-3:]), [w, -2 * w, w, 1, -2, 1])):
                rows += [r] * len(cc)
                cols += list(cc)
                vals += list(v)
        for i, node in enumerate(self.gas.nodes):
            rows.append(self.node_q[i])
            cols.append(self.node_q[i])
            vals.append(-1.0)
            for pm in self.pipe_maps:
                if pm.pipe.to_node == node.id:
                    rows.append(self.node_q[i]); cols.append(pm.Q[pm.M]); vals.append(1.0)
                if pm.pipe.from_node == node.id:
                    rows.append(self.node_q[i]); cols.append(pm.Q[0]); vals.append(-1.0)
        return np.array(rows, dtype=int), np.array(cols, dtype=int), np.array(vals, dtype=float)

    def _closure_rows(self):
        rows, cols, vals = [], [], []
        for i, node in enumerate(self.gas.nodes):
            r = self.node_p[i]
            k = node.kind
            if k is NodeKind.CONSTANT_PRESSURE or k is NodeKind.COUPLING_P2G:
                rows.append(r); cols.append(self.node_p[i]); vals.append(1.0)
            else:
                rows.append(r); cols.append(self.node_q[i]); vals.append(1.0)
                if k is NodeKind.COUPLING_GT and self.eps is not None and node.unit is not None:
                    rows.append(r); cols.append(self.gt_z[node.unit][2]); vals.append(-1.0)
        return np.array(rows, dtype=int), np.array(cols, dtype=int), np.array(vals)

    def jacobian(self, t, x):
        """Sparse ``dF/dx``: colored central differences plus exact linear rows."""
        x = np.asarray(x, dtype=float)
        J = self.jac
        h = FD_STEP * (1.0 + np.abs(x))
        D = np.zeros((self.N, J.n_colors))
        D[np.arange(self.N), J.colors] = h
        F = self.residual(t, np.hstack([x[:, None] + D, x[:, None] - D]))
        cc = J.colors[J.cols]
        vals = (F[J.rows, cc] - F[J.rows, J.n_colors + cc]) / (2.0 * h[J.cols])
        lr, lc, lv = self._linear_rows
        cr, ccl, cv = self._closure_rows()
        linear = np.zeros(self.N, dtype=bool)
        linear[lr] = True
        linear[cr] = True
        vals = np.where(linear[J.rows], 0.0, vals)
        rows = np.concatenate([J.rows, lr, cr])
        cols = np.concatenate([J.cols, lc, ccl])
        vals = np.concatenate([vals, lv, cv])
        return sp.csc_matrix((vals, (rows, cols)), shape=J.shape)

    # -- event actions ----------------------------------------------------

    def fault_events(self):
        """Time events that activate each gas fault at its onset time."""
        from .events import EventAction, EventKind, EventSpec
        return [EventSpec(EventKind.FAULT_ONSET, fm.state.spec.t_start, EventAction.ACTIVATE_FAULT,
                          target=k, channel=f"fault{k}")
                for k, fm in enumerate(self.fault_maps)]

    def tstops(self):
        out = []
        for fm in self.fault_maps:
            s = fm.state.spec
            out += [s.t_start, s.t_start + s.ramp]
        return out

    def activate_fault(self, k, t, x):
        st = self.fault_maps[k].state
        if st.active:
            return
        st.active = True
        st.p_prefault = float(x[self.fault_maps[k].pj])
        log.info("fault %d (%s) active at t=%.6f s", k, st.spec.kind.value, t)

    def trip_gt(self, g):
        gt = self.eps.gts[g]
        if gt.tripped:
            return
        gt.tripped = True
        self.eps.machines[gt.machine].online = False
        log.info("gas turbine %d tripped", g)

    def convert_node(self, node_id, q_node=None, x=None):
        node = self.gas.nodes[self._node_pos[node_id]]
        if node.kind is NodeKind.CONSTANT_MASS_FLOW:
            return
        if q_node is None:
            q_node = float(x[self.node_q[self._node_pos[node_id]]])
        if node.kind is NodeKind.COUPLING_P2G and self.eps is not None:
            for unit in self.eps.p2gs:
                if unit.gas_node == node_id:
                    unit.saturated = True
        node.kind = NodeKind.CONSTANT_MASS_FLOW
        node.setpoint = float(q_node)
        log.info("node %s converted to constant mass flow %.6g kg/s", node_id, q_node)

    def cut_load(self, node_id):
        node = self.gas.nodes[self._node_pos[node_id]]
        if node.kind is NodeKind.COUPLING_GT and self.eps is not None and node.unit is not None:
            self.trip_gt(node.unit)
            return
        node.kind = NodeKind.CONSTANT_MASS_FLOW
        node.setpoint = 0.0

    def apply_bus_fault(self, bus, admittance):
        self.eps.network = apply_bus_fault(self.eps.network, bus, admittance)

    def clear_bus_fault(self, bus=None):
        self.eps.network = clear_bus_fault(self.eps.network)

    def reinitialize_algebraic(self, t, x, tol=1e-10, max_iter=30):
        """Newton on ``g(t, y, z) = 0`` for ``z`` with ``y`` held fixed."""
        x = np.array(x, dtype=float)
        n = self.n
        try:
            for _ in range(max_iter):
                g = self.residual(t, x)[n:]
                J = self.jacobian(t, x)[n:, n:]
                dz = spla.spsolve(sp.csc_matrix(J), -g)
                if not np.all(np.isfinite(dz)):
                    raise InconsistentRestart("algebraic re-solve produced non-finite values")
                x[n:] += dz
                if np.max(np.abs(dz) / (1.0 + np.abs(x[n:])), initial=0.0) < tol:
                    return x
        except GasGridError as exc:
            if isinstance(exc, InconsistentRestart):
                raise
            raise InconsistentRestart(f"algebraic re-solve failed at t={t}: {exc}") from exc
        raise InconsistentRestart(f"algebraic re-solve did not converge at t={t}")

    def algebraic_residual_norm(self, t, x):
        return float(np.max(np.abs(self.residual(t, x)[self.n:])))


def color_columns(rows, cols, N):
    """Greedy distance-2 coloring: columns sharing a row get different colors."""
    P = sp.csr_matrix((np.ones(rows.size, dtype=np.int8), (rows, cols)), shape=(N, N))
    A = (P.T @ P).tocsr()
    colors = -np.ones(N, dtype=int)
    for j in range(N):
        nb = A.indices[A.indptr[j]: A.indptr[j + 1]]
        used = set(colors[nb][colors[nb] >= 0].tolist())
        c = 0
        while c in used:
            c += 1
        colors[j] = c
    return colors, int(colors.max()) + 1 if N else 0


# -- steady state ---------------------------------------------------------


def pipe_resistance(pipe, props):
    """``K`` in the steady relation ``p_in^2 - p_out^2 = K q|q|``."""
    return pipe.lam * props.c**2 * pipe.L / (pipe.D * pipe.S**2)


def analytic_steady(network: GasNetwork, demands, node_position=None):
    """Pipe flows and node pressures of the continuous steady state.

    Solves ``p_from^2 - p_to^2 = K q|q|`` on every pipe together with the
    mass balances of the nodes that are not pressure controlled. With a
    single pressure-controlled node on a tree the flows follow from the
    balances alone. Returns ``(q_pipe, p_node)``.
    """
    props = network.props
    nodes = network.nodes
    pos = node_position or {nd.id: i for i, nd in enumerate(nodes)}.__getitem__
    A = network.incidence.matrix.toarray()
    demands = np.asarray(demands, dtype=float)
    fixed = [i for i, nd in enumerate(nodes) if nd.pressure_controlled]
    free = [i for i, nd in enumerate(nodes) if not nd.pressure_controlled]
    if not fixed:
        raise NoConvergence("network has no pressure-controlled node", residual=np.inf)
    n_p = len(network.pipes)
    ends = np.array([(pos(p.from_node), pos(p.to_node)) for p in network.pipes], dtype=int).reshape(-1, 2)
    K = np.array([pipe_resistance(p, props) for p in network.pipes])
    p2_ref = max(nodes[i].setpoint for i in fixed) ** 2
    q0 = np.linalg.lstsq(A[free], demands[free], rcond=None)[0] if free else np.zeros(n_p)
    q_ref = max(1.0, float(np.max(np.abs(q0), initial=0.0)), float(np.max(np.abs(demands), initial=0.0)))

    def unpack(v):
        p2 = np.empty(len(nodes))
        p2[fixed] = [nodes[i].setpoint**2 / p2_ref for i in fixed]
        p2[free] = v[n_p:]
        return v[:n_p], p2

    def fun(v):
        qs, p2 = unpack(v)
        q = qs * q_ref
        r_pipe = p2[ends[:, 0]] - p2[ends[:, 1]] - K * q * np.abs(q) / p2_ref
        r_node = (A[free] @ q - demands[free]) / q_ref
        return np.concatenate([r_pipe, r_node])

    v = np.concatenate([q0 / q_ref, np.full(len(free), 1.0)])
    # initial pressures propagated from the controlled nodes
    _, p2 = unpack(v)
    p2[free] = np.nan
    for _ in range(len(nodes)):
        for k, (a, b) in enumerate(ends):
            dk = K[k] * q0[k] * abs(q0[k]) / p2_ref
            if np.isnan(p2[b]) and not np.isnan(p2[a]):
                p2[b] = p2[a] - dk
            elif np.isnan(p2[a]) and not np.isnan(p2[b]):
                p2[a] = p2[b] + dk
    v[n_p:] = np.where(np.isnan(p2[free]), 1.0, p2[free])
    if fun(v).size:
        sol = optimize.root(fun, v, method="hybr", options={"xtol": 1e-14})
        if not np.max(np.abs(fun(sol.x)), initial=0.0) < 1e-10:
            raise NoConvergence("steady network flows did not converge", residual=float(np.max(np.abs(fun(sol.x)))))
        v = sol.x
    qs, p2 = unpack(v)
    return qs * q_ref, np.sqrt(np.maximum(p2 * p2_ref, 0.0))


def _gas_initial_guess(system: DaeSystem, x, demands):
    gas = system.gas
    q, p_node = analytic_steady(gas, demands, system.node_position)
    p_node = np.maximum(p_node, 0.1 * np.max(p_node))
    p2 = p_node**2
    for k, pm in enumerate(system.pipe_maps):
        a, b = system.node_position(pm.pipe.from_node), system.node_position(pm.pipe.to_node)
        s = np.arange(pm.M + 1) / pm.M
        x[pm.P] = np.sqrt(np.maximum(p2[a] + (p2[b] - p2[a]) * s, 1.0))
        x[pm.Q] = q[k]
    for fm in system.fault_maps:
        x[fm.qj2] = x[fm.qj1]
        x[fm.ql] = 0.0
    x[system.node_p] = p_node
    x[system.node_q] = demands
    A = gas.incidence.matrix
    flows = A @ q
    for i, nd in enumerate(gas.nodes):
        if nd.pressure_controlled:
            x[system.node_q[i]] = flows[i]


ROUNDOFF_FACTOR = 100.0


def _newton(system, x, idx, tol, max_iter, t=0.0):
    """Damped Newton on the rows and columns ``idx`` of ``F``."""
    res = np.inf
    for it in range(max_iter):
        try:
            F = system.residual(t, x)[idx]
        except GasGridError as exc:
            raise NoConvergence(f"steady state left the physical domain: {exc}", residual=res) from exc
        res = float(np.max(np.abs(F)))
        if res < tol:
            return x, res, it
        J = system.jacobian(t, x)[idx][:, idx]
        dx = spla.spsolve(sp.csc_matrix(J), -F)
        if not np.all(np.isfinite(dx)):
            raise NoConvergence("singular steady-state Jacobian", residual=res)
        if res < ROUNDOFF_FACTOR * tol and np.max(np.abs(dx) / (1.0 + np.abs(x[idx]))) < 1e-11:
            # round-off floor of the flux differences on fine grids
            return x, res, it
        lam = 1.0
        best, best_res, full = None, np.inf, None
        for _ in range(30):
            trial = x.copy()
            trial[idx] += lam * dx
            try:
                Ft = system.residual(t, trial)[idx]
                rt = float(np.max(np.abs(Ft))) if np.all(np.isfinite(Ft)) else np.inf
            except GasGridError:
                rt = np.inf
            if lam == 1.0 and np.isfinite(rt):
                full = trial
            if rt < best_res:
                best, best_res = trial, rt
            if rt < (1 - 1e-4 * lam) * res:
                break
            lam *= 0.5
        else:
            # no monotone decrease: Newton is non-monotone far from the root, so
            # take the full step when it stays in the physical domain
            trial = full if full is not None else best
            if trial is None:
                raise NoConvergence(f"line search failed, residual {res:.3e}", residual=res)
        x = trial
    raise NoConvergence(f"no steady state after {max_iter} iterations, residual {res:.3e}", residual=res)


def _init_eps(system: DaeSystem, x, p2g_load):
    e = system.eps
    base_G, base_B = admittance_from_lines(e.n_bus, e.lines)
    base = EpsNetwork(base_G, base_B, e.omega_B, e.s_base)
    types = [b.kind for b in e.buses]
    P = np.array([b.P_gen - b.P_load for b in e.buses]) - p2g_load
    Q = np.array([-b.Q_load for b in e.buses])
    V = np.array([b.V for b in e.buses])
    U = power_flow(base, types, P, Q, V)
    S = U * np.conj((base.G + 1j * base.B) @ U)
    load = np.array([complex(b.P_load, b.Q_load) for b in e.buses])
    shunt = np.conj(load) / np.abs(U) ** 2
    e.network = EpsNetwork(base_G + np.diag(shunt.real), base_B + np.diag(shunt.imag), e.omega_B, e.s_base)
    for i, m in enumerate(e.machines):
        b = m.bus
        S_gen = S[b] + load[b] + p2g_load[b]
        I = initialize_machine(m, U[b], S_gen)
        x[system.m_omega[i]] = 1.0
        x[system.m_delta[i]] = m.delta
        x[system.m_Ix[i]], x[system.m_Iy[i]] = I.real, I.imag
        x[system.m_Pe[i]] = m.P_e
    x[system.bus_x] = U.real
    x[system.bus_y] = U.imag
    for g, gt in enumerate(e.gts):
        xs, zs = gt.equilibrium(e.machines[gt.machine].P_m)
        x[system.gt_x[g]] = xs
        x[system.gt_z[g]] = zs


def steady_state(system: DaeSystem, tol=1e-8, max_iter=50, max_coupling_iter=30):
    """Consistent initial point with ``||F||_inf < tol``.

    On fine grids the flux differences hit a round-off floor; Newton then
    stops once its step stagnates and the residual is below
    ``ROUNDOFF_FACTOR * tol``. The power flow fixes the electric operating point and the turbine fuel
    demands; the gas network is then solved by damped Newton from the
    analytic steady pressure profile. P2G consumption depends on the gas
    solution, so the two solves alternate until the P2G power settles.
    """
    if any(fm.state.active for fm in system.fault_maps):
        raise ValueError("steady state requires all faults inactive")
    x = np.zeros(system.N)
    gas_idx = system.gas_indices()
    nb = system.eps.n_bus if system.eps else 0
    p2g_load = np.zeros(nb)
    first = True
    for _ in range(max_coupling_iter):
        if system.eps:
            _init_eps(system, x, p2g_load)
        demands = np.zeros(len(system.gas.nodes))
        for i, nd in enumerate(system.gas.nodes):
            if nd.kind is NodeKind.CONSTANT_MASS_FLOW:
                demands[i] = nd.setpoint
            elif nd.kind is NodeKind.COUPLING_GT:
                if system.eps is not None and nd.unit is not None:
                    demands[i] = x[system.gt_z[nd.unit][2]]
                else:
                    demands[i] = nd.setpoint
        if first:
            _gas_initial_guess(system, x, demands)
            first = False
        x, res, _ = _newton(system, x, gas_idx, tol, max_iter)
        if not system.eps or not system.eps.p2gs:
            break
        new = np.zeros(nb)
        for u, unit in enumerate(system.eps.p2gs):
            k = system.node_position(unit.gas_node)
            P = p2g_power(-x[system.node_q[k]], x[system.node_p[k]], unit, system.props) / system.eps.s_base
            x[system.p2g_P[u]] = P
            new[unit.bus] += P
        if np.max(np.abs(new - p2g_load)) < 1e-13:
            break
        p2g_load = new
    else:
        raise NoConvergence("gas/power coupling iteration did not settle", residual=np.inf)
    res = float(np.max(np.abs(system.residual(0.0, x))))
    if not res < ROUNDOFF_FACTOR * tol:
        raise NoConvergence(f"steady-state residual {res:.3e} above {tol:.1e}", residual=res)
    system.x0 = x
    return x[: system.n].copy(), x[system.n:].copy()
