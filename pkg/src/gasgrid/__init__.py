"""Gas pipeline / power system transient co-simulation."""

from .cases import list_cases, load_case
from .daesys import DaeSystem, steady_state
from .errors import GasGridError
from .events import EventAction, EventKind, EventSpec
from .faults import FaultKind, FaultSpec
from .gasnet import GasNetwork, GasNode, GasProperties, NodeKind, Pipe, Scheme
from .moc_oracle import moc_simulate
from .rosenbrock import RODAS4, SolverConfig, integrate
from .runs import critical_time, run_compare, run_sweep, simulate
from .scenario import Scenario, build_system, parse_scenario

__all__ = [
    "DaeSystem",
    "EventAction",
    "EventKind",
    "EventSpec",
    "FaultKind",
    "FaultSpec",
    "GasGridError",
    "GasNetwork",
    "GasNode",
    "GasProperties",
    "NodeKind",
    "Pipe",
    "RODAS4",
    "Scenario",
    "Scheme",
    "SolverConfig",
    "build_system",
    "critical_time",
    "integrate",
    "list_cases",
    "load_case",
    "moc_simulate",
    "parse_scenario",
    "run_compare",
    "run_sweep",
    "simulate",
    "steady_state",
]

__version__ = "0.1.0"
