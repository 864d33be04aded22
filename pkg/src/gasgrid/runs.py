"""Run orchestration: simulate, compare against the oracle, sweep and steady state.

Trajectory CSV columns, in order: ``time`` (s), ``pipe{i}.p[{cell}]`` (MPa),
``pipe{i}.q[{cell}]`` (kg/s), ``node{k}.p`` (MPa), ``bus{b}.Vmag`` (pu),
``gt{g}.Pm`` (pu), ``gt{g}.fuel`` (kg/s), ``p2g{u}.P`` (MW).
"""

from __future__ import annotations

import csv
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .daesys import steady_state
from .errors import LengthMismatch
from .events import apply_event_action, format_hit
from .moc_oracle import moc_simulate
from .rosenbrock import IntegrationResult, dense_eval, integrate
from .scenario import Scenario, build_events, build_faults, build_gas_network, build_system

log = logging.getLogger(__name__)

MPA = 1e-6


def rmse(a, b) -> float:
    """Root-mean-square difference of two series on a common grid."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise LengthMismatch(f"series lengths differ: {a.shape} vs {b.shape}")
    if a.size == 0:
        raise LengthMismatch("empty series")
    return float(np.sqrt(np.mean((a - b) ** 2)))


# -- channels -------------------------------------------------------------


def output_channels(system):
    """Ordered ``(name, function of the state matrix)`` pairs of the trajectory CSV."""
    out = []
    for pm in system.pipe_maps:
        i = pm.pipe.id
        for cell, k in enumerate(pm.P):
            out.append((f"pipe{i}.p[{cell}]", _scaled(k, MPA)))
        for cell, k in enumerate(pm.Q):
            out.append((f"pipe{i}.q[{cell}]", _scaled(k, 1.0)))
    for node, k in zip(system.gas.nodes, system.node_p):
        out.append((f"node{node.id}.p", _scaled(k, MPA)))
    eps = system.eps
    if eps is not None:
        for b in range(eps.n_bus):
            bx, by = system.bus_x[b], system.bus_y[b]
            out.append((f"bus{b}.Vmag", lambda X, bx=bx, by=by: np.hypot(X[:, bx], X[:, by])))
        for g in range(len(eps.gts)):
            out.append((f"gt{g}.Pm", _scaled(system.gt_z[g][1], 1.0)))
            out.append((f"gt{g}.fuel", _scaled(system.gt_z[g][2], 1.0)))
        for u in range(len(eps.p2gs)):
            out.append((f"p2g{u}.P", _scaled(system.p2g_P[u], eps.s_base * 1e-6)))
    return out


def _scaled(k, s):
    k = int(k)
    return lambda X: X[:, k] * s


def write_trajectory_csv(path, times, X, channels):
    cols = [fn(X) for _, fn in channels]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["time"] + [name for name, _ in channels])
        for r, t in enumerate(times):
            w.writerow([repr(float(t))] + [f"{c[r]:.10g}" for c in cols])


def read_trajectory_csv(path):
    """Return ``(times, {name: values})`` from a trajectory CSV."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, data = rows[0], np.array(rows[1:], dtype=float).reshape(-1, len(rows[0]))
    return data[:, 0], {name: data[:, i] for i, name in enumerate(header) if i > 0}


# -- simulate -------------------------------------------------------------


@dataclass
class SimulationRun:
    system: object
    result: IntegrationResult
    x_initial: np.ndarray
    steady_residual: float
    reinit_residuals: list = field(default_factory=list)


def simulate(sc: Scenario, dx=None, scheme=None, t_end=None, terminal_first=False,
             on_step=None) -> SimulationRun:
    """Initialize at steady state and integrate the scenario.

    With ``terminal_first`` the run stops at the first crossing of a
    configured (non-time) event. ``on_step(system, step, t1, x1)`` is called
    after every accepted step.
    """
    system = build_system(sc, dx, scheme)
    steady_state(system)
    x0 = system.x0.copy()
    res0 = float(np.max(np.abs(system.residual(0.0, x0)[system.n:])))
    events, terminal = build_events(sc, system)
    if terminal_first:
        terminal = [e for e in events if not e.is_time_event]
    reinit = []

    def on_event(sys_, hit, x):
        x = apply_event_action(sys_, hit, x)
        reinit.append((hit.t_cr, sys_.algebraic_residual_norm(hit.t_cr, x)))
        return x

    t_end = sc.t_end if t_end is None else t_end
    stops = system.tstops()
    if sc.eps is not None:
        stops += [bf.t_start + bf.duration for bf in sc.eps.bus_faults]
    hook = None if on_step is None else (lambda step, t1, x1: on_step(system, step, t1, x1))
    result = integrate(system, (0.0, t_end), sc.solver, events, x0=x0, tstops=stops,
                       names=system.names, on_event=on_event, terminal=terminal, on_step=hook)
    return SimulationRun(system, result, x0, res0, reinit)


_GAUSS4 = np.polynomial.legendre.leggauss(4)


def linepack_balance(system, step, t1):
    """Per-pipe linepack balance defect [kg/s] over one accepted step.

    The linepack change of the differential pressure cells is compared with
    the 4-point Gauss integral, along the dense output, of the face-flux
    divergence driving those cells. Evaluate before the system changes
    structure at ``t1``.
    """
    c2 = system.props.c ** 2
    h = t1 - step.t0
    th1 = min(h / step.h, 1.0)
    nodes, weights = _GAUSS4
    thetas = (nodes + 1.0) / 2.0 * th1
    X = np.array([np.concatenate(dense_eval(step, th)) for th in thetas]).T
    F = system.residual(step.t0 + thetas * step.h, X)
    x1 = np.concatenate(dense_eval(step, th1))
    out = []
    for pm in system.pipe_maps:
        diff = pm.P[pm.P < system.n]
        w = pm.pipe.S * system.dx / c2
        d_lp = w * np.sum(x1[diff] - step.x0[diff])
        flux = h * np.sum(weights / 2.0 * (w * F[diff].sum(axis=0)))
        out.append(abs(d_lp - flux) / h)
    return np.array(out)


def run_simulate(sc: Scenario, out_dir, **kw) -> SimulationRun:
    """Simulate and write ``trajectory.csv``, ``events.log`` and ``summary.json``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    run = simulate(sc, **kw)
    tr = run.result.trajectory
    write_trajectory_csv(out / "trajectory.csv", tr.times, tr.states, output_channels(run.system))
    with open(out / "events.log", "w") as fh:
        for hit in run.result.hits:
            fh.write(format_hit(hit) + "\n")
    c = run.result.counters
    summary = {
        "scenario": sc.name,
        "t_final": run.result.t_final,
        "steps_accepted": c.accepted,
        "steps_rejected": c.rejected,
        "lu_factorizations": c.lu,
        "jacobians": c.jacobians,
        "residual_evaluations": c.residuals,
        "wall_time_s": run.result.wall_time,
        "events": [{"kind": h.spec.kind.value, "channel": h.spec.channel, "t_cr": h.t_cr,
                    "action": h.spec.action.value} for h in run.result.hits],
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2))
    return run


# -- compare --------------------------------------------------------------

COMPARE_CHANNELS = ("p_out", "q_in", "p_leak_up", "p_leak_down", "q_leak_up", "q_leak_down")


def _single_fault_pipe(sc: Scenario):
    if len(sc.faults) != 1 or sc.eps is not None:
        raise ValueError("compare needs a gas-only scenario with exactly one fault")
    f = sc.faults[0]
    pipe = next(p for p in sc.gas.pipes if p.id == f.pipe)
    return f, pipe


def solver_compare_series(run: SimulationRun, sc: Scenario, times, dx):
    """The comparison channels of a solver run resampled at ``times``."""
    f, pipe = _single_fault_pipe(sc)
    s = run.system
    j = int(round(f.x / dx))
    cols = {
        "p_out": (s.index("pipe", pipe.id, "p"), MPA),
        "q_in": (s.index("pipe", pipe.id, "q", 0), 1.0),
        "p_leak_up": (s.index("pipe", pipe.id, "p", j - 1), MPA),
        "p_leak_down": (s.index("pipe", pipe.id, "p", j + 1), MPA),
        "q_leak_up": (s.fault_maps[0].qj1, 1.0),
        "q_leak_down": (s.fault_maps[0].qj2, 1.0),
    }
    X = run.result.trajectory.sample(times)
    return {k: X[:, i] * sc_ for k, (i, sc_) in cols.items()}


def oracle_compare_series(sc: Scenario, oracle_dx, dx, t_end=None):
    """Oracle run of ``sc`` with the comparison channels; returns ``(times, series)``."""
    f, pipe = _single_fault_pipe(sc)
    t_end = sc.t_end if t_end is None else t_end
    ch = {
        "p_out": ("p", pipe.id, pipe.L),
        "q_in": ("q", pipe.id, 0.0),
        "p_leak_up": ("p", pipe.id, f.x - dx),
        "p_leak_down": ("p", pipe.id, f.x + dx),
        "q_leak_up": ("q_j1", 0),
        "q_leak_down": ("q_j2", 0),
    }
    res = moc_simulate(build_gas_network(sc), oracle_dx, t_end, build_faults(sc), ch)
    scale = {k: (MPA if k.startswith("p") else 1.0) for k in ch}
    return res.t, {k: v * scale[k] for k, v in res.channels.items()}


@dataclass
class CompareResult:
    rmse: dict
    times: np.ndarray
    solver: dict
    oracle: dict
    run: SimulationRun


def run_compare(sc: Scenario, oracle_dx=None, dx=None, scheme=None, t_end=None, out_dir=None) -> CompareResult:
    """RMSE of the solver against the characteristics oracle per channel."""
    dx = dx or sc.gas.dx
    oracle_dx = oracle_dx or sc.output.oracle_dx or dx / 2
    t_end = sc.t_end if t_end is None else t_end
    run = simulate(sc, dx, scheme, t_end)
    times, ora = oracle_compare_series(sc, oracle_dx, dx, t_end)
    times = times[times <= run.result.t_final]
    ora = {k: v[: times.size] for k, v in ora.items()}
    sol = solver_compare_series(run, sc, times, dx)
    table = {k: rmse(sol[k], ora[k]) for k in COMPARE_CHANNELS}
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "rmse.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["scheme"] + [f"{k} ({'MPa' if k.startswith('p') else 'kg/s'})" for k in COMPARE_CHANNELS])
            w.writerow([scheme or sc.gas.scheme] + [f"{table[k]:.3e}" for k in COMPARE_CHANNELS])
        with open(out / "compare.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["time"] + [f"{src}.{k}" for src in ("solver", "oracle") for k in COMPARE_CHANNELS])
            for r, t in enumerate(times):
                w.writerow([f"{t:.6f}"] + [f"{d[k][r]:.10g}" for d in (sol, ora) for k in COMPARE_CHANNELS])
    return CompareResult(table, times, sol, ora, run)


def format_rmse_table(rows: dict) -> str:
    """Tables of RMSE per scheme, pressures in MPa and flows in kg/s."""
    head = "scheme  " + "  ".join(f"{k:>12s}" for k in COMPARE_CHANNELS)
    lines = [head]
    for name, tab in rows.items():
        lines.append(f"{name:6s}  " + "  ".join(f"{tab[k]:12.3e}" for k in COMPARE_CHANNELS))
    return "\n".join(lines)


# -- sweep ----------------------------------------------------------------

SWEEP_PARAMETERS = ("fault.distance", "fault.x", "fault.d_ratio", "pipe.lambda", "pipe.D")


def apply_parameter(sc: Scenario, name: str, value: float) -> Scenario:
    """Copy of ``sc`` with one swept parameter set.

    ``fault.distance`` is measured from the downstream end of the faulted
    pipe; ``fault.d_ratio`` sets the leak hole diameter as a fraction of
    the pipe diameter.
    """
    s = sc.copy()
    f = s.faults[0] if s.faults else None
    pipe = next((p for p in s.gas.pipes if f is not None and p.id == f.pipe), s.gas.pipes[0])
    if name == "fault.x":
        f.x = float(value)
    elif name == "fault.distance":
        f.x = pipe.L - float(value)
    elif name == "fault.d_ratio":
        f.d = float(value) * pipe.D
    elif name == "pipe.lambda":
        pipe.lam = float(value)
    elif name == "pipe.D":
        ratio = None if f is None or f.d is None else f.d / pipe.D
        pipe.D = float(value)
        if ratio is not None:
            f.d = ratio * pipe.D
    else:
        raise ValueError(f"unknown sweep parameter {name!r}; choose from {SWEEP_PARAMETERS}")
    from .scenario import validate
    validate(s)
    return s


def critical_time(sc: Scenario) -> float:
    """Time from fault onset to the first configured-event crossing (nan if none)."""
    run = simulate(sc, terminal_first=True)
    onset = min((f.t_start for f in sc.faults), default=0.0)
    hits = [h for h in run.result.hits if not h.spec.is_time_event]
    return hits[0].t_cr - onset if hits else math.nan


def _sweep_point(args):
    sc, name, value = args
    try:
        return value, critical_time(apply_parameter(sc, name, value)), "ok"
    except Exception as exc:  # per-point failures are recorded, the sweep continues
        log.warning("sweep point %s=%s failed: %s", name, value, exc)
        return value, math.nan, f"{type(exc).__name__}: {exc}"


def run_sweep(sc: Scenario, name: str, values, jobs=1, out_path=None):
    """Critical time per parameter value; returns ``[(value, t_cr, status)]``."""
    values = list(values)
    tasks = [(sc, name, v) for v in values]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=min(jobs, len(tasks))) as ex:
            rows = list(ex.map(_sweep_point, tasks))
    else:
        rows = [_sweep_point(t) for t in tasks]
    if out_path is not None:
        Path(out_path).parent.mkdir(parents=True, exist_ok=True)
        with open(out_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([name, "t_cr", "status"])
            for v, t, st in rows:
                w.writerow([f"{v:.10g}", f"{t:.6f}", st])
    return rows


# -- steady ---------------------------------------------------------------


def run_steady(sc: Scenario, out_dir=None, dx=None, scheme=None):
    """Steady state of the scenario; writes ``steady.csv`` (name, value) if asked."""
    system = build_system(sc, dx, scheme)
    steady_state(system)
    x = system.x0
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "steady.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["variable", "value"])
            for name, v in zip(system.names, x):
                w.writerow([name, f"{v:.12g}"])
    return system, x


def default_jobs():
    return max(1, (os.cpu_count() or 1) // 2)


__all__ = ["rmse", "simulate", "run_simulate", "run_compare", "run_sweep", "run_steady",
           "critical_time", "apply_parameter", "output_channels"]
