"""A plain barrier controller stalls in front of a sphere; the tangent rows get around it.

The goal sits straight behind a static sphere.  In cbf-only mode the goal pull and
the barrier push cancel and the base stops.  In sewb mode the adaptive rows
pick a side and the base drives around.
"""

from sewb.scenario import load_scenario
from sewb.sim import run_scenario

for mode in ("cbf-only", "sewb"):
    sc = load_scenario("pseudo_eq", mode=mode)
    records, summary = run_scenario(sc, sc.model)
    print(f"--- {mode} ---")
    print(" t[s]    x[m]    y[m]   base speed   clearance   |eps|")
    for r in records[:: int(2.0 / sc.dt)]:
        print(f"{r.time:5.1f} {r.q.x:7.3f} {r.q.y:7.3f} {abs(r.qdot[0]):10.4f} {r.min_distance:11.3f} {r.e_norm:7.3f}")
    if summary.success:
        print(f"goal reached at t = {summary.completion_time:.2f} s, closest approach {summary.min_distance:.3f} m")
    else:
        print(f"stalled at t = {summary.stall_time:.2f} s, final error {summary.final_error:.3f}")
    lateral = max(abs(r.q.y) for r in records)
    print(f"largest sideways excursion of the base: {lateral:.3f} m\n")
