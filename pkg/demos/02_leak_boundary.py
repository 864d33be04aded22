"""Leak through an orifice: the switching pressure and a d/D = 0.9 leak.

The leak law has a subsonic branch and a choked branch that meet at the
switching pressure p_sw. With k = 1.3 and p_a = 101 kPa it sits near
185 kPa, far below pipeline pressures, so a leak in a high-pressure line
is choked from the start and its flow is linear in the local pressure.
"""

import math

import numpy as np

from gasgrid import GasProperties, load_case
from gasgrid.faults import choked_leak_flow, leak_mass_flow, leak_regime, subsonic_leak_flow, switching_pressure
from gasgrid.runs import simulate
from gasgrid.scenario import build_faults

props = GasProperties()
p_sw = switching_pressure(props)
print(f"switching pressure: {p_sw / 1e3:.2f} kPa")

sc = load_case("single_pipe_leak")
spec = sc.faults[0]
area = math.pi * spec.d**2 / 4
print(f"branches at p_sw: subsonic {subsonic_leak_flow(p_sw, area, props):.4f} kg/s, "
      f"choked {choked_leak_flow(p_sw, area, props):.4f} kg/s")

fault = build_faults(sc)[0]
for p in (1.2e5, 1.5e5, p_sw, 1e6, 6.62e6):
    print(f"  p = {p / 1e6:6.3f} MPa  {leak_regime(p, props):8s}  q = {leak_mass_flow(p, fault, props):9.2f} kg/s")

# The constant-pressure source has to cover the leak: its output soars
# within minutes while the delivery node keeps drawing 14 kg/s.
run = simulate(sc)
s = run.system
k = s.index("pipe", sc.gas.pipes[0].id, "q", 0)
for t in (300.0, 330.0, 360.0, 420.0, 480.0, 900.0, 1800.0):
    q = run.result.trajectory.sample(np.array([t]))[0, k]
    print(f"t = {t:6.0f} s  inlet flow {q:8.1f} kg/s")
