"""A gas-side rupture cascading into the power system.

The reduced network has two gas sources, four pipes, two gas turbines and
a power-to-gas unit feeding a source node, all coupled to a three-bus
grid. A rupture upstream of turbine 0 drains its supply: the turbine trips
on low inlet pressure, the remaining machine picks up load through its
governor, and the P2G unit, running harder to hold its node pressure,
saturates and turns into a fixed injection. A second scenario applies a
30 ms three-phase bus fault instead and shows the gas side barely notices.
"""

import numpy as np

from gasgrid import load_case
from gasgrid.events import format_hit
from gasgrid.runs import simulate

run = simulate(load_case("reduced_cascade"))
s, tr = run.system, run.result.trajectory
print("events:")
for hit in run.result.hits:
    print("  " + format_hit(hit))
print(f"largest algebraic residual after a restart: {max(r for _, r in run.reinit_residuals):.1e}")

names = ["machine1.omega", "gt1.q_fuel", "node2.p", "p2g0.P"]
cols = [s.names.index(n) for n in names]
print("\n     t [s] " + "".join(f"{n:>16s}" for n in names))
for t in (0.0, 20.0, 32.0, 34.0, 40.0, 60.0, 100.0, 102.0, 150.0, tr.times[-1]):
    x = tr.sample(np.array([t]))[0]
    print(f"{t:10.1f} " + "".join(f"{x[c]:16.6g}" for c in cols))

bf = simulate(load_case("reduced_bus_fault"))
P = bf.result.trajectory.states[:, bf.system.node_p]
V = bf.result.trajectory.states[:, bf.system.bus_x[2]]
print(f"\nbus fault: bus 2 Ux dips to {V.min():.3f} pu, "
      f"largest relative gas node pressure change {np.max(np.abs(P / P[0] - 1)):.1e}")
