"""Recover a hidden control from the trajectory it produced.

Run:  python demos/tracking.py        (about a minute)

A uniform magnetisation starting along e1 is relaxed under a small field
u_true = 0.05 e3; that trajectory becomes the target.  Starting from u = 0,
projected gradient descent in the H1 metric drives the cost down, and the
audit at the end reports the first-order residual, admissibility and the
global-optimality product.
"""

import numpy as np

from llgcontrol import algebra, mesh
from llgcontrol.optimize import ControlProblem, optimize
from llgcontrol.sensitivity import TargetData
from llgcontrol.state import StateProblem, solve_state

g = mesh.Grid.from_horizon(5, 5, 15.0, 0.01)
m0 = algebra.constant_field([1, 0, 0], g)
u_true = algebra.constant_trajectory(algebra.constant_field([0, 0, 0.05], g), g)
m_d = solve_state(StateProblem(g, m0, u_true))

problem = ControlProblem(g, m0, TargetData(m_d, m_d[-1]), a=-2.0, b=2.0, R=2.0)


def show(entry):
    if entry["iter"] % 5 == 0:
        print(f"  iter {entry['iter']:3d}  cost {entry['cost']:.6e}  fooc {entry['fooc']:.3e}")


res = optimize(problem, np.zeros_like(u_true), tol=1e-3, callback=show)
h = res.history
print(f"\n{res.message} after {h[-1]['iter']} iterations")
print(f"cost {h[0]['cost']:.4e} -> {h[-1]['cost']:.4e} ({100 * h[-1]['cost'] / h[0]['cost']:.1f}%)")

# the cost also rewards a small control, so u* sits near, not on, u_true
mid = res.control.u[:, :, 2, 2]
print(f"u*(centre) at t = 0, T/2, T: {np.round(mid[[0, g.nt // 2, -1]], 4).tolist()}")
print(f"m*(T) vs target endpoint: {np.abs(res.m[-1] - m_d[-1]).max():.2e}")

r = res.report
print(f"\naudit: fooc {r.fooc_residual:.2e}, in_box {r.in_box}, "
      f"cost <= R/2 {r.cost_leq_R_half}, global product {r.global_product:.3e}")
