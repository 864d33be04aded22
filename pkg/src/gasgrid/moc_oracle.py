"""Method-of-characteristics reference solver for gas-only networks.

With ``dt = dx / c`` the characteristics through a grid node at the new time
level start exactly on the neighbouring nodes of the old level. Each
interior node solves the pair::

    p_i - p_a + B (q_i - q_a) + R s_a|s_a| / (p_i + p_a) = 0    (from i-1)
    p_b - p_i + B (q_i - q_b) + R s_b|s_b| / (p_i + p_b) = 0    (from i+1)

with ``B = c/S``, ``R = lambda c^2 dx / (4 D S^2)`` and ``s = q_i + q_{a,b}``.
Pipe ends obtain one relation from the characteristic leaving the pipe and
close with the node condition; fault nodes carry one relation per side plus
the fault closure.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NewtonDivergence
from .faults import FaultKind, FaultState, leak_mass_flow
from .gasnet import GasNetwork, NodeKind, cell_count

MAX_NEWTON = 30
NEWTON_TOL = 1e-10


@dataclass
class MocGrid:
    """Two-level (``p``, ``q``) node arrays for every pipe on a common ``dx``."""

    network: GasNetwork
    dx: float
    p: list
    q: list
    t: float = 0.0

    @property
    def dt(self) -> float:
        return self.dx / self.network.props.c

    def copy(self):
        return MocGrid(self.network, self.dx, [a.copy() for a in self.p], [a.copy() for a in self.q], self.t)


@dataclass
class _PipeCoef:
    B: float
    R: float
    M: int


def _coefs(network, dx):
    c = network.props.c
    out = []
    for pipe in network.pipes:
        out.append(_PipeCoef(c / pipe.S, pipe.lam * c**2 * dx / (4.0 * pipe.D * pipe.S**2),
                             cell_count(pipe.L, dx)))
    return out


def _fr(R, s, P):
    return R * s * np.abs(s) / P


def _solve_interior(pa, qa, pb, qb, B, R, p_guess, q_guess):
    """Vectorized Newton for the interior node pairs."""
    p = p_guess.copy()
    q = q_guess.copy()
    for _ in range(MAX_NEWTON):
        sa, Pa = q + qa, p + pa
        sb, Pb = q + qb, p + pb
        e1 = p - pa + B * (q - qa) + _fr(R, sa, Pa)
        e2 = pb - p + B * (q - qb) + _fr(R, sb, Pb)
        a11 = 1.0 - _fr(R, sa, Pa) / Pa
        a12 = B + 2.0 * R * np.abs(sa) / Pa
        a21 = -1.0 - _fr(R, sb, Pb) / Pb
        a22 = B + 2.0 * R * np.abs(sb) / Pb
        det = a11 * a22 - a12 * a21
        dp = -(a22 * e1 - a12 * e2) / det
        dq = -(-a21 * e1 + a11 * e2) / det
        p += dp
        q += dq
        if np.all(np.abs(dp) <= NEWTON_TOL * np.abs(p)) and np.all(np.abs(dq) <= NEWTON_TOL * (1.0 + np.abs(q))):
            return p, q
    raise NewtonDivergence(f"interior characteristic Newton did not converge in {MAX_NEWTON} iterations")


def _end_flow(p, p_nb, q_nb, B, R, sign):
    """Flow at an end node with pressure ``p`` from the characteristic arriving from its neighbour.

    ``sign = +1`` for a pipe outlet (C+ from ``M-1``), ``-1`` for an inlet (C- from 1).
    Returns ``(q, dq/dp)``.
    """
    # linear guess from the frictionless invariant
    q = q_nb + sign * (p_nb - p) / B
    for _ in range(MAX_NEWTON):
        s, P = q + q_nb, p + p_nb
        if sign > 0:
            e = p - p_nb + B * (q - q_nb) + _fr(R, s, P)
            ep = 1.0 - _fr(R, s, P) / P
        else:
            e = p_nb - p + B * (q - q_nb) + _fr(R, s, P)
            ep = -1.0 - _fr(R, s, P) / P
        eq = B + 2.0 * R * abs(s) / P
        dq = -e / eq
        q += dq
        if abs(dq) <= NEWTON_TOL * (1.0 + abs(q)):
            s, P = q + q_nb, p + p_nb
            eq = B + 2.0 * R * abs(s) / P
            ep = (1.0 if sign > 0 else -1.0) - _fr(R, s, P) / P
            return q, -ep / eq
    raise NewtonDivergence("end characteristic Newton did not converge")


@dataclass
class MocFault:
    state: FaultState
    pipe_pos: int
    j: int
    q_j1: float = 0.0
    q_j2: float = 0.0
    q_leak: float = 0.0


def _scalar_newton(fun, x0, scale):
    x = x0
    for _ in range(MAX_NEWTON):
        r, d = fun(x)
        dx = -r / d
        x += dx
        if abs(dx) <= NEWTON_TOL * scale:
            return x
    raise NewtonDivergence("scalar characteristic Newton did not converge")


def moc_step(grid: MocGrid, coefs, faults=(), demand=None) -> MocGrid:
    """Advance ``grid`` by one time level ``dt = dx/c``.

    ``demand`` maps node ids to ``q_node`` for kinds without a fixed setpoint
    (e.g. recorded turbine fuel demand at ``COUPLING_GT`` nodes).
    """
    net = grid.network
    props = net.props
    t1 = grid.t + grid.dt
    new_p, new_q = [], []
    for k, (p, q) in enumerate(zip(grid.p, grid.q)):
        cf = coefs[k]
        pn, qn = p.copy(), q.copy()
        if cf.M > 1:
            i = slice(1, cf.M)
            qa = q[:-2].copy()
            # the node right of a split fault sees the downstream-side flow
            for f in faults:
                if f.pipe_pos == k and f.state.active:
                    qa[f.j] = f.q_j2
            guess_p = 0.5 * (p[:-2] + p[2:] + cf.B * (qa - q[2:]))
            guess_q = 0.5 * (qa + q[2:] + (p[:-2] - p[2:]) / cf.B)
            pn[i], qn[i] = _solve_interior(p[:-2], qa, p[2:], q[2:], cf.B, cf.R, guess_p, guess_q)
        new_p.append(pn)
        new_q.append(qn)

    for f in faults:
        st = f.state
        spec = st.spec
        if not st.active and t1 >= spec.t_start - 1e-12:
            st.active = True
            st.p_prefault = float(grid.p[f.pipe_pos][f.j])
        if not st.active:
            f.q_j1 = f.q_j2 = float(new_q[f.pipe_pos][f.j])
            f.q_leak = 0.0
            continue
        cf = coefs[f.pipe_pos]
        p, q = grid.p[f.pipe_pos], grid.q[f.pipe_pos]
        j = f.j
        if spec.kind is FaultKind.RUPTURE:
            pj = float(st.rupture_target(t1, props.p_a))
        else:
            area = spec.hole_area(t1)

            def balance(pj):
                q1, d1 = _end_flow(pj, p[j - 1], q[j - 1], cf.B, cf.R, +1)
                q2, d2 = _end_flow(pj, p[j + 1], q[j + 1], cf.B, cf.R, -1)
                h = 1e-6 * pj
                ql = float(leak_mass_flow(pj, spec, props, area=area))
                dl = (float(leak_mass_flow(pj + h, spec, props, area=area)) - ql) / h
                return q1 - q2 - ql, d1 - d2 - dl

            pj = _scalar_newton(balance, float(new_p[f.pipe_pos][j]), float(p[j]))
        f.q_j1, _ = _end_flow(pj, p[j - 1], q[j - 1], cf.B, cf.R, +1)
        f.q_j2, _ = _end_flow(pj, p[j + 1], q[j + 1], cf.B, cf.R, -1)
        f.q_leak = f.q_j1 - f.q_j2
        new_p[f.pipe_pos][j] = pj
        new_q[f.pipe_pos][j] = f.q_j1

    for node in net.nodes:
        ends = []
        for k, pipe in enumerate(net.pipes):
            cf = coefs[k]
            p, q = grid.p[k], grid.q[k]
            if pipe.to_node == node.id:
                ends.append((k, cf.M, p[cf.M - 1], q[cf.M - 1], cf, +1))
            if pipe.from_node == node.id:
                ends.append((k, 0, p[1], q[1], cf, -1))
        if node.kind in (NodeKind.CONSTANT_PRESSURE, NodeKind.COUPLING_P2G):
            pn = node.setpoint
        else:
            if node.kind is NodeKind.CONSTANT_MASS_FLOW:
                qd = node.setpoint
            elif node.kind is NodeKind.COUPLING_GT:
                qd = demand(node.id, t1) if demand is not None else node.setpoint
            else:
                qd = 0.0

            def balance(pn):
                r, d = -qd, 0.0
                for _, _, pnb, qnb, cf, sgn in ends:
                    qe, de = _end_flow(pn, pnb, qnb, cf.B, cf.R, sgn)
                    r += sgn * qe
                    d += sgn * de
                return r, d

            p_guess = float(np.mean([grid.p[k][cell] for k, cell, *_ in ends]))
            pn = _scalar_newton(balance, p_guess, p_guess)
        for k, cell, pnb, qnb, cf, sgn in ends:
            new_p[k][cell] = pn
            new_q[k][cell] = _end_flow(pn, pnb, qnb, cf.B, cf.R, sgn)[0]
    return MocGrid(net, grid.dx, new_p, new_q, t1)


@dataclass
class MocResult:
    t: np.ndarray
    channels: dict = field(default_factory=dict)


def steady_grid(network: GasNetwork, dx, x_profile):
    """Grid initialised from per-pipe ``(p, q)`` callables of position."""
    ps, qs = [], []
    for pipe in network.pipes:
        M = cell_count(pipe.L, dx)
        x = np.arange(M + 1) * dx
        p, q = x_profile(pipe, x)
        ps.append(np.asarray(p, dtype=float))
        qs.append(np.asarray(q, dtype=float))
    return MocGrid(network, float(dx), ps, qs)


def moc_simulate(network: GasNetwork, dx, t_end, faults=(), channels=None, initial=None,
                 demand=None, n_settle=0) -> MocResult:
    """Run the oracle to ``t_end`` and record ``channels`` at every level.

    ``channels`` maps names to ``("p"|"q", pipe_id, x_m)``,
    ``("q_j1"|"q_j2"|"q_leak"|"p_j", fault_index)`` or ``("node_p", node_id)``.
    ``initial`` is a :class:`MocGrid`; by default the steady profile is
    obtained by running ``n_settle`` frictional steps from the analytic
    guess (which is already steady to discretization accuracy).
    """
    coefs = _coefs(network, dx)
    if initial is None:
        initial = analytic_steady_grid(network, dx)
    grid = initial.copy()
    grid.t = 0.0
    fmaps = []
    for spec in faults:
        pos = next(i for i, p in enumerate(network.pipes) if p.id == spec.pipe_id)
        j = spec.cell_index(network.pipes[pos], dx)
        fmaps.append(MocFault(FaultState(spec, j), pos, j))
    for _ in range(n_settle):
        grid = moc_step(grid, coefs, (), demand)
        grid.t = 0.0
    channels = channels or {}
    pos_of = {p.id: i for i, p in enumerate(network.pipes)}
    n_steps = int(np.floor(t_end / grid.dt + 1e-9))
    out = {name: np.empty(n_steps + 1) for name in channels}
    times = np.arange(n_steps + 1) * grid.dt

    def record(n):
        for name, ch in channels.items():
            kind = ch[0]
            if kind in ("p", "q"):
                k = pos_of[ch[1]]
                cell = int(round(ch[2] / dx))
                arr = grid.p[k] if kind == "p" else grid.q[k]
                out[name][n] = arr[cell]
            elif kind == "node_p":
                nd = ch[1]
                k, cell = next((pos_of[p.id], cell_count(p.L, dx)) for p in network.pipes if p.to_node == nd) \
                    if any(p.to_node == nd for p in network.pipes) else \
                    next((pos_of[p.id], 0) for p in network.pipes if p.from_node == nd)
                out[name][n] = grid.p[k][cell]
            else:
                f = fmaps[ch[1]]
                if kind == "p_j":
                    out[name][n] = grid.p[f.pipe_pos][f.j]
                else:
                    if not f.state.active:
                        v = grid.q[f.pipe_pos][f.j] if kind != "q_leak" else 0.0
                    else:
                        v = getattr(f, kind)
                    out[name][n] = v

    record(0)
    for n in range(1, n_steps + 1):
        grid = moc_step(grid, coefs, fmaps, demand)
        record(n)
    return MocResult(times, out)


def analytic_steady_grid(network: GasNetwork, dx, demands=None):
    """Grid holding the continuous steady state, which the scheme preserves exactly.

    With uniform ``q`` both characteristic relations reduce to
    ``p_i^2 - p_{i-1}^2 = -4 R q|q|``, the cell-wise form of the steady
    pipe law, so the analytic profile is a fixed point of :func:`moc_step`.
    ``demands`` gives ``q_node`` per node (defaults to mass-flow setpoints).
    """
    from .daesys import analytic_steady

    if demands is None:
        demands = [nd.setpoint if nd.kind in (NodeKind.CONSTANT_MASS_FLOW, NodeKind.COUPLING_GT) else 0.0
                   for nd in network.nodes]
    q, p_node = analytic_steady(network, demands)
    pos = {nd.id: i for i, nd in enumerate(network.nodes)}
    ps, qs = [], []
    for k, pipe in enumerate(network.pipes):
        M = cell_count(pipe.L, dx)
        s = np.arange(M + 1) / M
        p0, p1 = p_node[pos[pipe.from_node]], p_node[pos[pipe.to_node]]
        ps.append(np.sqrt(p0**2 + (p1**2 - p0**2) * s))
        qs.append(np.full(M + 1, q[k]))
    return MocGrid(network, float(dx), ps, qs)
