"""How long until the turbine at the outlet loses its inlet pressure.

For each fault distance, measured from the outlet, we integrate until the
outlet pressure falls below the turbine's 2.8 MPa minimum and report the
time since the fault began. Rupture and full-bore leak curves should
nearly coincide; a smaller hole buys time.
"""

import time

from gasgrid import load_case
from gasgrid.runs import apply_parameter, run_sweep

distances = [2e3, 5e3, 10e3, 15e3, 20e3, 25.5e3, 30e3, 40e3]

rupture = load_case("single_pipe_rupture")
rupture.t_end = 4000.0
leak = load_case("single_pipe_leak")
leak.t_end = 4000.0
leak.gas.dx = 100.0

curves = {}
t0 = time.perf_counter()
curves["rupture"] = run_sweep(rupture, "fault.distance", distances)
for ratio in (1.0, 0.6):
    curves[f"leak d/D={ratio}"] = run_sweep(apply_parameter(leak, "fault.d_ratio", ratio), "fault.distance",
                                            distances)
print(f"{sum(len(c) for c in curves.values())} runs in {time.perf_counter() - t0:.0f} s\n")

print("distance [km] " + "".join(f"{name:>16s}" for name in curves))
for i, d in enumerate(distances):
    print(f"{d / 1e3:13.1f} " + "".join(f"{c[i][1]:16.1f}" for c in curves.values()))

# The friction coefficient shifts the whole curve: with less friction the
# break drains the line faster.
print()
for lam in (0.01, 0.02, 0.03):
    rows = run_sweep(apply_parameter(rupture, "pipe.lambda", lam), "fault.distance", [15e3])
    print(f"lambda = {lam:.2f}: t_cr at 15 km = {rows[0][1]:.1f} s")
