"""One control cycle taken apart.

A sphere drifts toward the gripper while the end effector is asked to move
0.4 m forward.  We build the cycle's QP, look at the clearances, the cost
weights and the safety rows, then solve it and check the result.
"""

import numpy as np

from sewb import qp
from sewb.controller import Controller
from sewb.kinematics import Transform, forward_kinematics
from sewb.scenario import load_scenario
from sewb.world import ObstacleState

np.set_printoptions(precision=3, suppress=True)

sc = load_scenario("straight")
model, q = sc.model, sc.start
T = forward_kinematics(model, q)
goal = Transform(T.rotation, T.translation + [0.4, 0.0, 0.0])
ball = ObstacleState(T.translation + np.array([0.3, 0.1, 0.05]), np.array([-0.4, 0.0, 0.0]), 0.08, "ball")

ctrl = Controller(model)
ctrl.prev_qdot[0] = 0.3  # the base was already rolling forward
cycle = ctrl.build(q, goal, [ball])

print("end effector at", T.translation, "goal", goal.translation)
print(f"clearance: base {cycle.base_b:.3f} m, whole body {cycle.whole_b:.3f} m")
lam_b, lam_m, lam_d = cycle.weights
print(f"cost weights: base {lam_b:.3f}  arm {lam_m:.3f}  slack {lam_d:.3f}")
print("servo target v* =", cycle.expectation.v_star)

print("\nsafety rows")
for row in cycle.rows:
    if row.tag.startswith(("base", "arm")):
        print(f"  {row.tag:10s} obstacle={row.obstacle}  bound={row.bound:+.4f}")
internal = sum(r.tag in ("joint-bound", "max-reach") for r in cycle.rows)
print(f"  plus {internal} internal rows (joint limits and reach)")

for res in cycle.trace.aci:
    print(f"\nACI ({res.context}) picked tangent {res.l_star} out of {res.count} candidates, objective {res.objective:.3f}")

out = ctrl.step(q, goal, [ball])
print("\nQP status:", out.status, f"in {out.iterations} iterations, {out.solve_ms:.2f} ms")
print("base  (d_dot, phi_dot):", out.qdot[:2])
print("arm   q_dot:", out.qdot[2:])
print("slack delta:", out.delta)

u = np.concatenate((out.qdot, out.delta))
eq, ineq, dual = qp.kkt_residuals(cycle.problem, u)
print(f"\nKKT residuals: equality {eq:.1e}, inequality {ineq:.1e}, stationarity {dual:.1e}")
