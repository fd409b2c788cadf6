"""Holding a pose while a pole head swings through the workspace.

The arm keeps its end effector still until the swinging sphere enters the
operating set, dodges, and then returns to the goal.  The printout marks
when the obstacle is active and how far the end effector was pushed away.
"""

import numpy as np

from sewb.scenario import load_scenario
from sewb.sim import run_scenario

sc = load_scenario("pole_single")
records, summary = run_scenario(sc, sc.model, record_aci=True)

print(" t[s]  active  clearance  |eps_pos|  rows")
for r in records[:: int(0.25 / sc.dt)]:
    rows = " ".join(f"{k}={v}" for k, v in sorted(r.row_counts.items()) if "aci" in k or "dcbf" in k)
    print(f"{r.time:5.2f}  {r.n_ob:6d}  {r.min_distance:9.3f}  {np.linalg.norm(r.error[:3]):9.4f}  {rows}")

active = [i for i, r in enumerate(records) if r.n_ob > 0]
worst = max(np.linalg.norm(r.error[:3]) for r in records)
print(f"\nobstacle active from t = {records[active[0]].time:.2f} s to {records[active[-1]].time:.2f} s")
print(f"largest end effector displacement {worst:.3f} m, closest approach {summary.min_distance:.3f} m")
back = next(r.time for r in records[active[-1]:] if np.linalg.norm(r.error[:3]) < sc.tol_pos)
print(f"back within {sc.tol_pos} m of the goal at t = {back:.2f} s")

chosen = [res for r in records for res in r.aci if res.context == "arm"]
if chosen:
    dirs = np.array([res.l_star for res in chosen])
    print(f"{len(chosen)} arm tangent choices, mean direction {np.round(dirs.mean(axis=0), 3)}")
