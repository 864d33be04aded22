"""Scenario files: TOML parsing, validation, serialization and system assembly.

A scenario is a TOML document with the sections ``[gas]`` (with
``[[gas.nodes]]`` and ``[[gas.pipes]]``), ``[[faults]]``, ``[[events]]``,
``[eps]`` (with ``[[eps.buses]]``, ``[[eps.lines]]``, ``[[eps.machines]]``,
``[[eps.gas_turbines]]``, ``[[eps.p2g]]``, ``[[eps.bus_faults]]``),
``[solver]`` and ``[output]``. See ``README.md`` for the full key list.
"""

from __future__ import annotations

import copy
import dataclasses
import re
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

import tomli_w

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import ParseError, ValidationError
from .events import EventAction, EventKind, EventSpec
from .faults import MIN_HOLE_RATIO, FaultKind, FaultSpec
from .gasnet import GasNetwork, GasNode, GasProperties, NodeKind, Pipe, Scheme
from .powersys import GasTurbine, Machine, P2G
from .rosenbrock import SolverConfig

_CHANNEL = re.compile(r"^(pipe|node|bus|gt|p2g|fault|machine)(\d+)\.([A-Za-z_]+)(\[(-?\d+)\])?$")


@dataclass
class NodeConfig:
    id: int
    kind: str
    setpoint: float = 0.0
    unit: int | None = None


@dataclass
class PipeConfig:
    id: int
    from_node: int
    to_node: int
    L: float
    D: float
    lam: float


@dataclass
class GasConfig:
    nodes: list
    pipes: list
    dx: float = 100.0
    scheme: str = "weno3"
    c: float = 340.0
    k: float = 1.3
    M_molar: float = 0.016
    T: float = 273.15
    Z: float = 0.8143
    R: float = 8.314462618
    p_a: float = 101000.0

    @property
    def props(self) -> GasProperties:
        return GasProperties(self.c, self.k, self.M_molar, self.T, self.Z, self.R, self.p_a)


@dataclass
class FaultConfig:
    kind: str
    pipe: int
    x: float
    t_start: float
    ramp: float = 0.0
    d: float | None = None


@dataclass
class EventConfig:
    kind: str
    threshold: float
    channel: str | None = None
    action: str = "record_only"
    target: int | None = None
    direction: int = 0
    scale: float | None = None
    terminal: bool = False


@dataclass
class BusConfig:
    id: int
    kind: str = "pq"
    V: float = 1.0
    P_gen: float = 0.0
    P_load: float = 0.0
    Q_load: float = 0.0


@dataclass
class LineConfig:
    from_bus: int
    to_bus: int
    r: float
    x: float
    b: float = 0.0


@dataclass
class MachineConfig:
    bus: int
    T_j: float
    D_damp: float = 0.0
    r_a: float = 0.0
    X_d: float = 0.3
    X_q: float = 0.3
    gt: int | None = None


@dataclass
class BusFaultConfig:
    bus: int
    t_start: float
    duration: float
    g: float = 0.0
    b: float = -1e4


@dataclass
class EpsConfig:
    buses: list
    lines: list
    machines: list
    gas_turbines: list = field(default_factory=list)
    p2g: list = field(default_factory=list)
    bus_faults: list = field(default_factory=list)
    s_base: float = 100e6
    f_base: float = 50.0


@dataclass
class OutputConfig:
    dir: str = "out"
    channels: list | None = None
    oracle_dx: float | None = None


@dataclass
class Scenario:
    gas: GasConfig
    faults: list = field(default_factory=list)
    events: list = field(default_factory=list)
    eps: EpsConfig | None = None
    solver: SolverConfig = field(default_factory=SolverConfig)
    output: OutputConfig = field(default_factory=OutputConfig)
    t_end: float = 1800.0
    name: str = "scenario"

    def copy(self) -> Scenario:
        return copy.deepcopy(self)


# -- parsing --------------------------------------------------------------

_RENAMES = {"from": "from_node", "to": "to_node", "lambda": "lam"}
_LINE_RENAMES = {"from": "from_bus", "to": "to_bus"}
_GT_FIELDS = {f.name for f in dataclasses.fields(GasTurbine)} - {"x", "z", "tripped"}
_SOLVER_FIELDS = {f.name for f in dataclasses.fields(SolverConfig)}


def _build(cls, raw, where, renames=None, allowed=None):
    if not isinstance(raw, dict):
        raise ParseError(f"{where}: expected a table", field=where)
    renames = renames or {}
    kwargs = {renames.get(k, k): v for k, v in raw.items()}
    names = allowed if allowed is not None else {f.name for f in dataclasses.fields(cls)}
    unknown = set(kwargs) - set(names)
    if unknown:
        raise ParseError(f"{where}: unknown key(s) {sorted(unknown)}", field=f"{where}.{sorted(unknown)[0]}")
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ParseError(f"{where}: {exc}", field=where) from None


def _num(v, where):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ParseError(f"{where}: expected a number, got {v!r}", field=where)
    return float(v)


def scenario_from_dict(doc: dict) -> Scenario:
    """Build a :class:`Scenario` from a TOML-shaped dict and validate it."""
    doc = dict(doc)
    if "gas" not in doc:
        raise ParseError("missing [gas] section", field="gas")
    gas_raw = dict(doc["gas"])
    nodes = [_build(NodeConfig, n, f"gas.nodes[{i}]") for i, n in enumerate(gas_raw.pop("nodes", []))]
    pipes = [_build(PipeConfig, p, f"gas.pipes[{i}]", _RENAMES) for i, p in enumerate(gas_raw.pop("pipes", []))]
    gas = _build(GasConfig, {**gas_raw, "nodes": nodes, "pipes": pipes}, "gas")
    for f in ("dx", "c", "k", "M_molar", "T", "Z", "R", "p_a"):
        setattr(gas, f, _num(getattr(gas, f), f"gas.{f}"))
    faults = [_build(FaultConfig, f, f"faults[{i}]") for i, f in enumerate(doc.get("faults", []))]
    events = [_build(EventConfig, e, f"events[{i}]") for i, e in enumerate(doc.get("events", []))]
    eps = None
    if "eps" in doc:
        e = dict(doc["eps"])
        eps = EpsConfig(
            buses=[_build(BusConfig, b, f"eps.buses[{i}]") for i, b in enumerate(e.pop("buses", []))],
            lines=[_build(LineConfig, ln, f"eps.lines[{i}]", _LINE_RENAMES) for i, ln in enumerate(e.pop("lines", []))],
            machines=[_build(MachineConfig, m, f"eps.machines[{i}]") for i, m in enumerate(e.pop("machines", []))],
            gas_turbines=[_gt_table(g, f"eps.gas_turbines[{i}]") for i, g in enumerate(e.pop("gas_turbines", []))],
            p2g=[_p2g_table(u, f"eps.p2g[{i}]") for i, u in enumerate(e.pop("p2g", []))],
            bus_faults=[_build(BusFaultConfig, b, f"eps.bus_faults[{i}]") for i, b in enumerate(e.pop("bus_faults", []))],
        )
        for k, v in e.items():
            if k not in ("s_base", "f_base"):
                raise ParseError(f"eps: unknown key {k!r}", field=f"eps.{k}")
            setattr(eps, k, _num(v, f"eps.{k}"))
    solver = _build(SolverConfig, doc.get("solver", {}), "solver", allowed=_SOLVER_FIELDS)
    output = _build(OutputConfig, doc.get("output", {}), "output")
    known = {"gas", "faults", "events", "eps", "solver", "output", "t_end", "name"}
    extra = set(doc) - known
    if extra:
        raise ParseError(f"unknown top-level key(s) {sorted(extra)}", field=sorted(extra)[0])
    sc = Scenario(gas, faults, events, eps, solver, output,
                  _num(doc.get("t_end", 1800.0), "t_end"), str(doc.get("name", "scenario")))
    validate(sc)
    return sc


def _gt_table(raw, where):
    if not isinstance(raw, dict):
        raise ParseError(f"{where}: expected a table", field=where)
    unknown = set(raw) - _GT_FIELDS
    if unknown:
        raise ParseError(f"{where}: unknown key(s) {sorted(unknown)}", field=f"{where}.{sorted(unknown)[0]}")
    return dict(raw)


def _p2g_table(raw, where):
    allowed = {"bus", "gas_node", "h_P2G", "eta", "q_max"}
    if not isinstance(raw, dict) or set(raw) - allowed:
        raise ParseError(f"{where}: keys must be among {sorted(allowed)}", field=where)
    return dict(raw)


def parse_scenario(path) -> Scenario:
    """Read and validate a scenario file."""
    path = Path(path)
    text = path.read_text()
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        m = re.search(r"line (\d+)", str(exc))
        raise ParseError(f"{path}: {exc}", line=int(m.group(1)) if m else None) from None
    return scenario_from_dict(doc)


def scenario_to_dict(sc: Scenario) -> dict:
    def clean(d):
        return {k: v for k, v in d.items() if v is not None}

    def ren(d, mapping):
        inv = {v: k for k, v in mapping.items()}
        return {inv.get(k, k): v for k, v in d.items()}

    gas = asdict(sc.gas)
    gas["nodes"] = [clean(n) for n in gas["nodes"]]
    gas["pipes"] = [ren(p, _RENAMES) for p in gas["pipes"]]
    doc = {"name": sc.name, "t_end": sc.t_end, "gas": gas}
    if sc.faults:
        doc["faults"] = [clean(asdict(f)) for f in sc.faults]
    if sc.events:
        doc["events"] = [clean(asdict(e)) for e in sc.events]
    if sc.eps is not None:
        e = asdict(sc.eps)
        e["lines"] = [ren(ln, _LINE_RENAMES) for ln in e["lines"]]
        e["machines"] = [clean(m) for m in e["machines"]]
        doc["eps"] = {k: v for k, v in e.items() if v != []}
    solver = asdict(sc.solver)
    doc["solver"] = {k: v for k, v in solver.items() if v is not None and v != float("inf")}
    doc["output"] = clean(asdict(sc.output))
    return doc


def serialize_scenario(sc: Scenario) -> str:
    return tomli_w.dumps(scenario_to_dict(sc))


def write_scenario(sc: Scenario, path):
    Path(path).write_text(serialize_scenario(sc))


# -- validation -----------------------------------------------------------


def validate(sc: Scenario):
    """Raise :class:`ValidationError` listing every violation found."""
    v = []
    g = sc.gas
    node_ids = [n.id for n in g.nodes]
    pipe_ids = [p.id for p in g.pipes]
    if len(set(node_ids)) != len(node_ids):
        v.append("gas.nodes: duplicate node ids")
    if len(set(pipe_ids)) != len(pipe_ids):
        v.append("gas.pipes: duplicate pipe ids")
    if not g.nodes:
        v.append("gas.nodes: at least one node required")
    try:
        Scheme(g.scheme)
    except ValueError:
        v.append(f"gas.scheme: unknown scheme {g.scheme!r}")
    if not g.dx > 0:
        v.append("gas.dx must be positive")
    try:
        g.props
    except ValueError as exc:
        v.append(f"gas: {exc}")
    for n in g.nodes:
        try:
            NodeKind(n.kind)
        except ValueError:
            v.append(f"node {n.id}: unknown kind {n.kind!r}")
    for p in g.pipes:
        for end in (p.from_node, p.to_node):
            if end not in node_ids:
                v.append(f"pipe {p.id}: unknown node {end}")
        if not (p.L > 0 and p.D > 0 and p.lam > 0):
            v.append(f"pipe {p.id}: L, D and lambda must be positive")
        elif g.dx > 0 and abs(p.L / g.dx - round(p.L / g.dx)) > 1e-9 * max(1.0, p.L / g.dx):
            v.append(f"pipe {p.id}: L/dx = {p.L / g.dx} is not an integer")
    pipes = {p.id: p for p in g.pipes}
    for i, f in enumerate(sc.faults):
        try:
            kind = FaultKind(f.kind)
        except ValueError:
            v.append(f"faults[{i}]: unknown kind {f.kind!r}")
            continue
        p = pipes.get(f.pipe)
        if p is None:
            v.append(f"faults[{i}]: unknown pipe {f.pipe}")
            continue
        if not 0 < f.x < p.L:
            v.append(f"faults[{i}]: position {f.x} m outside pipe {p.id} of length {p.L} m")
        elif g.dx > 0 and abs(f.x / g.dx - round(f.x / g.dx)) > 1e-9 * max(1.0, f.x / g.dx):
            v.append(f"faults[{i}]: position {f.x} m is not on a cell boundary")
        elif g.dx > 0 and not 2 <= round(f.x / g.dx) <= round(p.L / g.dx) - 2:
            v.append(f"faults[{i}]: position {f.x} m needs two cells to each pipe end")
        if f.ramp < 0:
            v.append(f"faults[{i}]: ramp must be non-negative")
        if kind is FaultKind.LEAK and (f.d is None or f.d / p.D < MIN_HOLE_RATIO):
            v.append(f"faults[{i}]: leak needs d/D >= {MIN_HOLE_RATIO}")
    n_gt = len(sc.eps.gas_turbines) if sc.eps else 0
    for i, e in enumerate(sc.events):
        try:
            kind = EventKind(e.kind)
            EventAction(e.action)
        except ValueError as exc:
            v.append(f"events[{i}]: {exc}")
            continue
        if kind not in (EventKind.FAULT_ONSET, EventKind.FAULT_CLEAR):
            if e.channel is None or not _CHANNEL.match(e.channel):
                v.append(f"events[{i}]: channel {e.channel!r} is not of the form node1.p / pipe0.q[0]")
        if e.action == "trip_gt" and not (e.target is not None and 0 <= e.target < n_gt):
            v.append(f"events[{i}]: trip_gt target {e.target} is not a gas turbine index")
        if e.action in ("convert_node_to_const_flow", "cut_load") and e.target not in node_ids:
            v.append(f"events[{i}]: target {e.target} is not a gas node")
        if e.direction not in (-1, 0, 1):
            v.append(f"events[{i}]: direction must be -1, 0 or 1")
    if sc.eps is not None:
        _validate_eps(sc, v, node_ids)
    if not sc.t_end > 0:
        v.append("t_end must be positive")
    if not (sc.solver.atol > 0 and sc.solver.rtol > 0):
        v.append("solver: atol and rtol must be positive")
    if v:
        raise ValidationError(v)


def _validate_eps(sc, v, node_ids):
    e = sc.eps
    nb = len(e.buses)
    if sorted(b.id for b in e.buses) != list(range(nb)):
        v.append("eps.buses: ids must be 0..n-1")
    if sum(b.kind == "slack" for b in e.buses) != 1:
        v.append("eps.buses: exactly one slack bus required")
    for b in e.buses:
        if b.kind not in ("slack", "pv", "pq"):
            v.append(f"bus {b.id}: unknown kind {b.kind!r}")
    for i, ln in enumerate(e.lines):
        if not (0 <= ln.from_bus < nb and 0 <= ln.to_bus < nb):
            v.append(f"eps.lines[{i}]: unknown bus")
    buses_with_machine = set()
    for i, m in enumerate(e.machines):
        if not 0 <= m.bus < nb:
            v.append(f"eps.machines[{i}]: unknown bus {m.bus}")
        if m.bus in buses_with_machine:
            v.append(f"eps.machines[{i}]: one machine per bus")
        buses_with_machine.add(m.bus)
        if not m.T_j > 0:
            v.append(f"eps.machines[{i}]: T_j must be positive")
        if m.gt is not None and not 0 <= m.gt < len(e.gas_turbines):
            v.append(f"eps.machines[{i}]: unknown gas turbine {m.gt}")
    for g, gt in enumerate(e.gas_turbines):
        if not 0 <= gt.get("machine", -1) < len(e.machines):
            v.append(f"eps.gas_turbines[{g}]: unknown machine {gt.get('machine')}")
        node = gt.get("gas_node")
        if node is not None and node not in node_ids:
            v.append(f"eps.gas_turbines[{g}]: unknown gas node {node}")
        if gt.get("p_min_inlet", 1.0) <= 0:
            v.append(f"eps.gas_turbines[{g}]: p_min_inlet must be positive")
    for u, unit in enumerate(e.p2g):
        if not 0 <= unit.get("bus", -1) < nb:
            v.append(f"eps.p2g[{u}]: unknown bus")
        if unit.get("gas_node") not in node_ids:
            v.append(f"eps.p2g[{u}]: unknown gas node")
        if not 0 < unit.get("eta", 0) <= 1:
            v.append(f"eps.p2g[{u}]: eta must lie in (0, 1]")
    for i, bf in enumerate(e.bus_faults):
        if not 0 <= bf.bus < nb:
            v.append(f"eps.bus_faults[{i}]: unknown bus {bf.bus}")


# -- assembly -------------------------------------------------------------


def build_gas_network(sc: Scenario) -> GasNetwork:
    g = sc.gas
    pipes = [Pipe(p.id, p.from_node, p.to_node, p.L, p.D, p.lam) for p in g.pipes]
    nodes = [GasNode(n.id, NodeKind(n.kind), float(n.setpoint), n.unit) for n in g.nodes]
    return GasNetwork(g.props, pipes, nodes)


def build_faults(sc: Scenario):
    return [FaultSpec(FaultKind(f.kind), f.pipe, f.x, f.t_start, f.ramp, f.d) for f in sc.faults]


def build_system(sc: Scenario, dx=None, scheme=None):
    """Assemble the :class:`~gasgrid.daesys.DaeSystem` described by ``sc``."""
    from .daesys import Bus, DaeSystem, EpsModel

    gas = build_gas_network(sc)
    eps = None
    if sc.eps is not None:
        e = sc.eps
        buses = [Bus(b.id, b.kind, b.V, b.P_gen, b.P_load, b.Q_load) for b in sorted(e.buses, key=lambda b: b.id)]
        lines = [(ln.from_bus, ln.to_bus, ln.r, ln.x, ln.b) for ln in e.lines]
        machines = [Machine(m.bus, m.T_j, m.D_damp, m.r_a, m.X_d, m.X_q, gt=m.gt) for m in e.machines]
        gts = [GasTurbine(**gt) for gt in e.gas_turbines]
        p2gs = [P2G(u["bus"], u["gas_node"], u["h_P2G"], u["eta"], u["q_max"]) for u in e.p2g]
        eps = EpsModel(buses, lines, machines, gts, p2gs, e.s_base, 2 * 3.141592653589793 * e.f_base)
    return DaeSystem(gas, dx or sc.gas.dx, scheme or sc.gas.scheme, build_faults(sc), eps)


def resolve_channel(system, name):
    """Global index of a channel name such as ``node1.p`` or ``pipe0.q[0]``."""
    m = _CHANNEL.match(name)
    if not m:
        raise ValueError(f"bad channel name {name!r}")
    comp, ident, var, _, cell = m.groups()
    ident = int(ident)
    if comp == "pipe":
        return system.index("pipe", ident, var, None if cell is None else int(cell))
    return system.index(comp, ident, var)


_DEFAULT_SCALE = {EventKind.SOURCE_MAX_FLOW: -1.0, EventKind.P2G_SATURATION: -1.0}


def build_events(sc: Scenario, system):
    """Event specs for the configured events, bus faults and gas fault onsets."""
    out = list(system.fault_events())
    terminal = []
    for e in sc.events:
        kind = EventKind(e.kind)
        action = EventAction(e.action)
        index = None if e.channel is None else resolve_channel(system, e.channel)
        scale = e.scale if e.scale is not None else _DEFAULT_SCALE.get(kind, 1.0)
        params = {}
        if action is EventAction.CONVERT_NODE_TO_CONST_FLOW:
            params["q_node"] = -e.threshold if scale < 0 else e.threshold
        spec = EventSpec(kind, e.threshold, action, index, e.target, e.direction, scale, e.channel, params)
        out.append(spec)
        if e.terminal:
            terminal.append(spec)
    if sc.eps is not None:
        for bf in sc.eps.bus_faults:
            out.append(EventSpec(EventKind.FAULT_ONSET, bf.t_start, EventAction.ACTIVATE_FAULT,
                                 target=("bus", bf.bus), channel=f"bus{bf.bus}",
                                 params={"admittance": complex(bf.g, bf.b)}))
            out.append(EventSpec(EventKind.FAULT_CLEAR, bf.t_start + bf.duration, EventAction.CLEAR_BUS_FAULT,
                                 target=bf.bus, channel=f"bus{bf.bus}"))
    return out, terminal
