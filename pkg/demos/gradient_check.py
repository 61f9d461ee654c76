"""Verify the sensitivity machinery on the desk tracking problem.

Run:  python demos/gradient_check.py

Three checks, in the order one would debug them:

1. the tangent solve is the exact derivative of the state march
   (the error of G(u + eps h) - G(u) - eps z drops by 4 when eps halves);
2. the adjoint directional derivative agrees with a central difference of
   the reduced cost, and the mismatch shrinks as h and dt are refined;
3. the second-order form agrees with a second difference of the cost.
"""

import copy
import os
import warnings

import numpy as np

from llgcontrol import config, mesh
from llgcontrol.errors import StabilityWarning
from llgcontrol.optimize import ControlProblem, random_direction, second_order_form

warnings.simplefilter("ignore", StabilityWarning)
HERE = os.path.dirname(os.path.abspath(__file__))
base_cfg = config.load(os.path.join(HERE, os.pardir, "configs", "gradcheck.json"))


def setup(nx, dt):
    cfg = copy.deepcopy(base_cfg)
    cfg["grid"].update(nx=nx, ny=nx)
    cfg["time"]["dt"] = dt
    b = config.build(cfg)
    p = ControlProblem(b["grid"], b["m0"], b["targets"], warn_stability=False)
    return b["grid"], b["u"], p


g, u, p = setup(17, 4e-3)
m = p.state(u)
h = random_direction(g, np.random.default_rng(0))
z = p.tangent(u, m, h)
print("tangent check (h = 1/16)")
prev = None
for eps in (1e-2, 5e-3, 2.5e-3, 1.25e-3):
    d = p.state(u + eps * h) - m - eps * z
    err = np.sqrt(mesh.time_inner(d, d, g))
    print(f"  eps {eps:.2e}  err {err:.3e}" + (f"  ratio {prev / err:.3f}" if prev else ""))
    prev = err

print("\nadjoint gradient vs central difference (eps = 1e-3)")
for nx, dt in ((17, 4e-3), (33, 1e-3), (65, 2.5e-4)):
    g, u, p = setup(nx, dt)
    h = random_direction(g, np.random.default_rng(base_cfg["seed"]))
    adj = p.directional_derivative(u, h)
    fd = (p.reduced_cost(u + 1e-3 * h) - p.reduced_cost(u - 1e-3 * h)) / 2e-3
    print(f"  h = 1/{nx - 1:<3d} dt = {dt:.1e}  adjoint {adj:+.8e}  fd {fd:+.8e}  "
          f"rel {abs(adj - fd) / abs(fd):.2e}")

print("\nsecond-order form vs second difference (h = 1/16, eps = 1e-2)")
g, u, p = setup(17, 4e-3)
i0 = p.reduced_cost(u)
for seed in range(3):
    h = random_direction(g, np.random.default_rng(seed))
    q = second_order_form(p, u, h)
    fd = (p.reduced_cost(u + 1e-2 * h) - 2 * i0 + p.reduced_cost(u - 1e-2 * h)) / 1e-4
    print(f"  direction {seed}: I''[h,h] {q:.6f}  fd {fd:.6f}  rel {abs(q - fd) / abs(fd):.1e}")
