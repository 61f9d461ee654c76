"""Cost functional, reduced gradient, box constraints and optimality audits.

The reduced cost is ``I(u) = J(G(u), u)`` with

    J = 1/4 |grad m - grad m_d|^4_{L4L4} + 1/2 |m(T) - m_omega|^2
        + 1/2 |u|^2_{L2L2} + 1/2 |grad u|^2_{L2L2}.

Box bounds ``a <= u <= b`` act on each of the three control components.
"""

import json
import logging
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from . import mesh
from .algebra import cross
from .errors import ConvergenceError, GridMismatchError, InstabilityError, NormalizationError
from .sensitivity import (AdjointProblem, LinearizedProblem, TargetData, control_adjoint,
                          deriv_rhs, solve_adjoint, solve_costate_derivative,
                          solve_linearized)
from .state import StateProblem, energy_report, solve_state

log = logging.getLogger(__name__)

__all__ = [
    "Control",
    "CostBreakdown",
    "ControlProblem",
    "OptimalityReport",
    "OptimizeResult",
    "cost",
    "reduced_gradient",
    "project_box",
    "fooc_residual",
    "critical_cone_project",
    "second_order_form",
    "second_order_report",
    "global_condition_report",
    "optimality_report",
    "random_direction",
    "optimize",
]


@dataclass
class Control:
    """Control trajectory with scalar box bounds and the cost cap ``R``.

    ``a`` and ``b`` are floats or arrays broadcastable to ``(nt + 1, ny, nx)``.
    """
    u: np.ndarray
    a: object = -np.inf
    b: object = np.inf
    R: float = np.inf

    def bounds(self):
        a, b = _bounds(self.u, self.a, self.b)
        return a, b

    def projected(self):
        return Control(project_box(self.u, self.a, self.b), self.a, self.b, self.R)

    def in_box(self, tol=0.0):
        a, b = self.bounds()
        return bool(np.all(self.u >= a - tol) and np.all(self.u <= b + tol))


def _bounds(u, a, b):
    # broadcast scalar-field bounds over the component axis
    shape = u.shape[:1] + u.shape[2:]
    a = np.broadcast_to(np.asarray(a, dtype=float), shape)[:, None]
    b = np.broadcast_to(np.asarray(b, dtype=float), shape)[:, None]
    if np.any(a > b):
        raise ValueError("box bounds violate a <= b")
    return a, b


@dataclass
class CostBreakdown:
    j_track_grad: float
    j_terminal: float
    j_ctrl_l2: float
    j_ctrl_grad: float
    total: float

    def to_dict(self):
        return asdict(self)


def cost(m, u, targets, grid):
    """All four cost terms with trapezoidal quadrature in space and time.

    ``|grad(m - m_d)|^2`` is formed at the nodes before squaring, matching
    the divergence-form adjoint forcing.
    """
    shape = (grid.nt + 1, 3) + grid.shape
    if m.shape != shape or u.shape != shape:
        raise GridMismatchError(f"state {m.shape} / control {u.shape}, expected {shape}")
    targets.validate(grid)
    q = mesh.grad_sq(m - targets.m_d, grid)
    wt = grid.time_weights
    track = 0.25 * float(np.dot(wt, np.sum(grid.weights * q * q, axis=(-2, -1))))
    d = m[-1] - targets.m_omega
    term = 0.5 * mesh.inner(d, d, grid)
    l2 = 0.5 * mesh.time_inner(u, u, grid)
    ux, uy = mesh.gradient(u, grid)
    fx, fy = grid.face_weights
    gsq = np.sum(fx * ux * ux, axis=(1, 2, 3)) + np.sum(fy * uy * uy, axis=(1, 2, 3))
    grad = 0.5 * float(np.dot(wt, gsq))
    return CostBreakdown(track, term, l2, grad, track + term + l2 + grad)


def reduced_gradient(u, m, phi, grid):
    """L2 and H1 representatives of the reduced gradient.

    ``g_l2 = u - lap u + phi x m + m x (phi x m)`` and ``g_h1`` solves
    ``(I - lap) g_h1 = g_l2``.  ``u`` may be a :class:`Control` or an array.
    """
    u = getattr(u, "u", u)
    if not (u.shape == m.shape == phi.shape):
        raise GridMismatchError(f"shapes {u.shape}, {m.shape}, {phi.shape} differ")
    g_l2 = u - mesh.laplacian(u, grid) + control_adjoint(m, phi)
    g_h1 = mesh.helmholtz_solve(g_l2, 1.0, grid)
    return g_l2, g_h1


def project_box(u, a, b):
    """Componentwise clip of ``u`` into ``[a, b]``."""
    lo, hi = _bounds(u, a, b)
    return np.minimum(np.maximum(u, lo), hi)


def fooc_residual(u, g_l2, grid, s=1.0, a=None, b=None):
    """Projected-gradient stationarity ``|P(u - s g) - u|_{L2L2} / s``.

    Bounds default to those carried by ``u`` when it is a :class:`Control`.
    """
    if s <= 0:
        raise ValueError("step s must be positive")
    if isinstance(u, Control):
        a = u.a if a is None else a
        b = u.b if b is None else b
        u = u.u
    a = -np.inf if a is None else a
    b = np.inf if b is None else b
    d = project_box(u - s * g_l2, a, b) - u
    return float(np.sqrt(mesh.time_inner(d, d, grid))) / s


def critical_cone_project(h, u, active_tol=None):
    """Zero the wrong-signed parts of ``h`` on the active sets of ``u``.

    ``h >= 0`` is enforced where ``u`` sits on ``a`` and ``h <= 0`` where it
    sits on ``b``, both within ``active_tol`` (default ``1e-8 (b - a)``).
    """
    a, b = u.bounds()
    tol = 1e-8 * (b - a) if active_tol is None else active_tol
    with np.errstate(invalid="ignore"):
        at_a = np.abs(u.u - a) <= tol
        at_b = np.abs(b - u.u) <= tol
    out = h.copy()
    out[at_a & (out < 0)] = 0.0
    out[at_b & (out > 0)] = 0.0
    return out


class ControlProblem:
    """Control-to-state/costate maps for fixed ``m0`` and targets."""

    def __init__(self, grid, m0, targets, a=-np.inf, b=np.inf, R=np.inf, warn_stability=True):
        self.grid = grid
        self.m0 = m0
        self.targets = targets.validate(grid)
        self.a, self.b, self.R = a, b, R
        self.warn_stability = warn_stability

    def control(self, u):
        return Control(u, self.a, self.b, self.R)

    def state(self, u):
        return solve_state(StateProblem(self.grid, self.m0, u,
                                        warn_stability=self.warn_stability))

    def cost(self, u, m=None):
        if m is None:
            m = self.state(u)
        return cost(m, u, self.targets, self.grid)

    def reduced_cost(self, u):
        return self.cost(u).total

    def adjoint_problem(self, u, m):
        return AdjointProblem(self.grid, m, u, self.targets, self.warn_stability)

    def adjoint(self, u, m):
        return solve_adjoint(self.adjoint_problem(u, m))

    def evaluate(self, u):
        """State, costate, cost and both gradient representatives at ``u``."""
        m = self.state(u)
        phi = self.adjoint(u, m)
        g_l2, g_h1 = reduced_gradient(u, m, phi, self.grid)
        return dict(m=m, phi=phi, cost=self.cost(u, m), g_l2=g_l2, g_h1=g_h1)

    def directional_derivative(self, u, h, phi=None, m=None):
        if m is None:
            m = self.state(u)
        if phi is None:
            phi = self.adjoint(u, m)
        g_l2, _ = reduced_gradient(u, m, phi, self.grid)
        return mesh.time_inner(g_l2, h, self.grid)

    def tangent(self, u, m, h):
        return solve_linearized(LinearizedProblem(self.grid, m, u, deriv_rhs(m, h)))


def second_order_form(problem, u, h, m=None, phi=None):
    """``I''(u)[h, h]`` from the tangent ``z`` and costate derivative ``phi'``.

    Sum of ``|h|^2 + |grad h|^2`` and the five coupling integrals
    ``(phi' x m + phi x z + z x (phi x m) + m x (phi' x m) + m x (phi x z)) . h``.
    """
    g = problem.grid
    u = getattr(u, "u", u)
    if m is None:
        m = problem.state(u)
    if phi is None:
        phi = problem.adjoint(u, m)
    z = problem.tangent(u, m, h)
    dphi = solve_costate_derivative(problem.adjoint_problem(u, m), phi, z, h)
    pm = cross(phi, m)
    coupling = (cross(dphi, m) + cross(phi, z) + cross(z, pm)
                + cross(m, cross(dphi, m)) + cross(m, cross(phi, z)))
    hx, hy = mesh.gradient(h, g)
    fx, fy = g.face_weights
    gsq = np.sum(fx * hx * hx, axis=(1, 2, 3)) + np.sum(fy * hy * hy, axis=(1, 2, 3))
    return mesh.time_inner(h, h, g) + float(np.dot(g.time_weights, gsq)) \
        + mesh.time_inner(coupling, h, g)


def second_order_report(problem, u, directions=None, delta=0.0, n_random=3, seed=0,
                        active_tol=None):
    """Evaluate ``I''[h,h]`` against ``delta |h|^2_{L2H1}`` on a batch of cone directions.

    Directions are projected onto the critical cone of ``u``; without
    explicit ones, ``n_random`` smooth random directions are drawn.  Only the
    sampled directions are certified.
    """
    ctrl = u if isinstance(u, Control) else problem.control(u)
    g = problem.grid
    if directions is None:
        rng = np.random.default_rng(seed)
        directions = [random_direction(g, rng) for _ in range(n_random)]
    m = problem.state(ctrl.u)
    phi = problem.adjoint(ctrl.u, m)
    out = []
    for i, h in enumerate(directions):
        h = critical_cone_project(h, ctrl, active_tol)
        val = second_order_form(problem, ctrl.u, h, m, phi)
        bound = delta * mesh.norms(h, g, "L2H1") ** 2
        out.append({"id": i, "value": float(val), "delta_bound": float(bound),
                    "holds": bool(val >= bound)})
    return out


def random_direction(grid, rng, modes=3):
    """Smooth random trajectory built from a few low cosine modes in space and time."""
    X, Y = grid.xy
    t = grid.t / max(grid.T, 1e-300)
    h = np.zeros((grid.nt + 1, 3) + grid.shape)
    for c in range(3):
        for _ in range(modes):
            kx, ky, kt = rng.integers(0, 3, size=3)
            amp = rng.normal()
            space = np.cos(kx * np.pi * X / grid.Lx) * np.cos(ky * np.pi * Y / grid.Ly)
            h[:, c] += amp * np.cos(kt * np.pi * t)[:, None, None] * space
    return h


def global_condition_report(u, m, phi, grid, user_C=1.0):
    """Raw global-optimality product and the check ``user_C * product <= 1/2``.

    The product is ``(1 + max_t |m|_{H2proxy} + |u|_{L2H1}) |phi|_{L2L2}``.
    """
    u = getattr(u, "u", u)
    factor = 1.0 + mesh.norms(m, grid, "LinfH2") + mesh.norms(u, grid, "L2H1")
    phi_norm = mesh.norms(phi, grid, "L2L2")
    product = factor * phi_norm
    return {"factor": float(factor), "phi_L2L2": float(phi_norm),
            "global_product": float(product), "user_C": float(user_C),
            "holds": bool(user_C * product <= 0.5)}


REPORT_KEYS = ("fooc_residual", "grad_norm_l2", "grad_norm_h1", "global_product",
               "in_box", "cost_leq_R_half", "cost")


@dataclass
class OptimalityReport:
    fooc_residual: float
    grad_norm_l2: float
    grad_norm_h1: float
    global_product: float
    in_box: bool
    cost_leq_R_half: bool
    cost: CostBreakdown
    second_order_values: list = field(default_factory=list)
    global_condition: dict = field(default_factory=dict)
    energy: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)

    def to_dict(self):
        d = asdict(self)
        d["cost"] = self.cost.to_dict()
        return d

    def to_json(self, **kw):
        return json.dumps(self.to_dict(), indent=kw.pop("indent", 2), **kw)

    @classmethod
    def from_dict(cls, d):
        missing = [k for k in REPORT_KEYS if k not in d]
        if missing:
            raise ValueError(f"report lacks keys {missing}")
        d = dict(d)
        d["cost"] = CostBreakdown(**d["cost"])
        return cls(**d)

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


def optimality_report(problem, u, m=None, phi=None, s=1.0, user_C=1.0,
                      second_order=None, delta=0.0):
    """Audit first-order, global and (optionally) sampled second-order conditions at ``u``.

    ``second_order`` is a list of directions or an integer number of random
    ones; ``None`` skips the second-order batch.
    """
    g = problem.grid
    ctrl = u if isinstance(u, Control) else problem.control(u)
    if m is None:
        m = problem.state(ctrl.u)
    if phi is None:
        phi = problem.adjoint(ctrl.u, m)
    g_l2, g_h1 = reduced_gradient(ctrl.u, m, phi, g)
    c = problem.cost(ctrl.u, m)
    glob = global_condition_report(ctrl.u, m, phi, g, user_C)
    so = []
    if second_order is not None:
        dirs = None if isinstance(second_order, int) else second_order
        n = second_order if isinstance(second_order, int) else 0
        so = second_order_report(problem, ctrl, dirs, delta, n_random=n)
    notes = ["grad m_d checked in L6(0,T;L6) for the costate; the cost only needs L4"]
    return OptimalityReport(
        fooc_residual=fooc_residual(ctrl, g_l2, g, s),
        grad_norm_l2=float(np.sqrt(mesh.time_inner(g_l2, g_l2, g))),
        grad_norm_h1=mesh.norms(g_h1, g, "L2H1"),
        global_product=glob["global_product"],
        in_box=ctrl.in_box(),
        cost_leq_R_half=bool(c.total <= 0.5 * ctrl.R),
        cost=c, second_order_values=so, global_condition=glob,
        energy=energy_report(m, ctrl.u, problem.m0, g).to_dict(), notes=notes)


@dataclass
class OptimizeResult:
    control: Control
    m: np.ndarray
    phi: np.ndarray
    report: OptimalityReport
    history: list
    converged: bool
    message: str


def _metric_sq(v, grid, direction):
    n = mesh.time_inner(v, v, grid)
    if direction == "h1":
        n -= mesh.time_inner(v, mesh.laplacian(v, grid), grid)
    return n


def optimize(problem, u0, tol=1e-3, max_iters=200, direction="h1", c1=1e-4,
             max_halvings=40, step0=1.0, step_max=1e3, step_rule="bb", callback=None):
    """Projected gradient descent with Armijo backtracking.

    A trial ``u+ = P(u - s d)`` (``d`` the H1 or L2 gradient) is accepted when
    ``I(u+) <= I(u) - c1 <g_l2, u - u+>`` and is halved up to
    ``max_halvings`` times otherwise.  The first trial of each iteration is
    the Barzilai-Borwein step ``|du|^2 / <du, dg>`` measured in the metric of
    the direction (``step_rule="bb"``), or twice the previous accepted step
    (``"double"``).  Stops when the FOOC residual drops to ``tol``; a failed
    line search ends the run with the best iterate.
    """
    if direction not in ("h1", "l2"):
        raise ValueError("direction must be 'h1' or 'l2'")
    if step_rule not in ("bb", "double"):
        raise ValueError("step_rule must be 'bb' or 'double'")
    g = problem.grid
    u = project_box(u0, problem.a, problem.b)
    ev = problem.evaluate(u)
    history = []
    s = step0
    converged, message = False, "max_iters reached"
    for it in range(max_iters + 1):
        r = fooc_residual(u, ev["g_l2"], g, 1.0, problem.a, problem.b)
        history.append({"iter": it, "cost": ev["cost"].total, "fooc": r, "step": s})
        if callback is not None:
            callback(history[-1])
        log.info("iter %d cost %.6e fooc %.3e step %.3g", it, ev["cost"].total, r, s)
        if r <= tol:
            converged, message = True, "fooc residual below tolerance"
            break
        if it == max_iters:
            break
        d = ev["g_h1"] if direction == "h1" else ev["g_l2"]
        accepted = False
        for k in range(max_halvings + 1):
            trial = project_box(u - s * d, problem.a, problem.b)
            dec = mesh.time_inner(ev["g_l2"], u - trial, g)
            try:
                ev_t = problem.evaluate(trial)
            except (InstabilityError, NormalizationError, ConvergenceError) as exc:
                log.debug("trial step %g failed: %s", s, exc)
                s *= 0.5
                continue
            if ev_t["cost"].total <= ev["cost"].total - c1 * dec:
                accepted = True
                break
            s *= 0.5
        if not accepted:
            message = f"line search failed after {max_halvings} halvings"
            log.warning(message)
            break
        du = trial - u
        curv = mesh.time_inner(du, ev_t["g_l2"] - ev["g_l2"], g)
        u, ev = trial, ev_t
        if step_rule == "bb" and curv > 0:
            s = min(max(_metric_sq(du, g, direction) / curv, 1e-8), step_max)
        elif k == 0:
            s = min(2.0 * s, step_max)
    report = optimality_report(problem, u, ev["m"], ev["phi"])
    return OptimizeResult(problem.control(u), ev["m"], ev["phi"], report, history,
                          converged, message)
