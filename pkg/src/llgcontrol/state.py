"""Forward LLG solvers and energy diagnostics.

The state equation is advanced in its heat-flow form

    m_t - lap m = |grad m|^2 m + m x lap m + m x u - m x (m x u)

with an IMEX step (Laplacian implicit, everything else explicit) followed by
nodewise projection back onto the unit sphere.  A penalised relaxation that
drops the projection in favour of a ``2k(|m|^2 - 1) m`` restoring term is
available for comparison.
"""

import logging
import warnings
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from . import mesh
from .algebra import cross, dot, norm, renormalize, skew_solve, unit_defect
from .errors import GridMismatchError, InstabilityError, StabilityWarning

log = logging.getLogger(__name__)

BLOWUP = 1e3
BOUNDARY_TOL = 1e-8

__all__ = [
    "StateProblem",
    "EnergyReport",
    "effective_rhs",
    "predict",
    "step_projection",
    "step_penalized",
    "solve_state",
    "energy_report",
    "exchange_energy",
    "check_stability",
]


@dataclass
class StateProblem:
    grid: mesh.Grid
    m0: np.ndarray  # (3, ny, nx), unit length
    u: np.ndarray  # (nt + 1, 3, ny, nx)
    scheme: str = "projection"
    penalty_k: Optional[float] = None
    warn_stability: bool = True

    def validate(self):
        g = self.grid
        if self.m0.shape != (3,) + g.shape:
            raise GridMismatchError(f"m0 has shape {self.m0.shape}, expected {(3,) + g.shape}")
        if self.u.shape != (g.nt + 1, 3) + g.shape:
            raise GridMismatchError(
                f"control has shape {self.u.shape}, expected {(g.nt + 1, 3) + g.shape}")
        if not (np.all(np.isfinite(self.m0)) and np.all(np.isfinite(self.u))):
            raise ValueError("non-finite initial data or control")
        if self.scheme not in ("projection", "penalized"):
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if self.scheme == "penalized" and not (self.penalty_k and self.penalty_k > 0):
            raise ValueError("penalized scheme needs a positive penalty_k")
        d = unit_defect(self.m0)
        if d > 1e-12:
            raise ValueError(f"initial data is not unit length (max defect {d:.2e})")
        nd = boundary_normal_derivative(self.m0, g)
        if nd > BOUNDARY_TOL:
            log.warning("initial data: one-sided normal derivative %.2e at boundary "
                        "(tolerance %.0e)", nd, BOUNDARY_TOL)
        return self


def boundary_normal_derivative(f, grid):
    """Largest second-order one-sided estimate of ``df/dn`` on the boundary."""
    hx, hy = grid.hx, grid.hy
    d = [(-3 * f[..., :, 0] + 4 * f[..., :, 1] - f[..., :, 2]) / (2 * hx),
         (-3 * f[..., :, -1] + 4 * f[..., :, -2] - f[..., :, -3]) / (2 * hx),
         (-3 * f[..., 0, :] + 4 * f[..., 1, :] - f[..., 2, :]) / (2 * hy),
         (-3 * f[..., -1, :] + 4 * f[..., -2, :] - f[..., -3, :]) / (2 * hy)]
    return float(max(np.max(np.abs(x)) for x in d))


def check_stability(grid, warn=True):
    """True when ``dt <= h^2/4``; otherwise optionally emit a StabilityWarning."""
    ok = grid.dt <= grid.h ** 2 / 4
    if not ok and warn:
        warnings.warn(f"dt={grid.dt:g} exceeds h^2/4={grid.h ** 2 / 4:.3g}; the explicit "
                      "m x lap m term is outside its stability guidance", StabilityWarning,
                      stacklevel=3)
    return ok


def effective_rhs(m, u, grid):
    """``|grad m|^2 m + m x lap m + m x u - m x (m x u)`` at the nodes."""
    if m.shape != u.shape:
        raise GridMismatchError(f"state {m.shape} and control {u.shape} differ")
    q = mesh.grad_sq(m, grid)[..., None, :, :]
    mu = cross(m, u)
    return q * m + cross(m, mesh.laplacian(m, grid)) + mu - cross(m, mu)


def predict(m, u, grid):
    """Unprojected IMEX predictor ``(I - dt lap)^{-1}(m + dt F(m, u))``."""
    return mesh.helmholtz_solve(m + grid.dt * effective_rhs(m, u, grid), grid.dt, grid)


def _guard(m, step):
    if not np.all(np.isfinite(m)) or np.max(np.abs(m)) > BLOWUP:
        raise InstabilityError(
            f"solution left the bounded regime at time step {step} "
            f"(max |component| = {np.nanmax(np.abs(m)):.3e})", step=step)


def step_projection(m, u, grid, step=None):
    m_star = predict(m, u, grid)
    _guard(m_star, step)
    return renormalize(m_star)


def _penalty_flow(m, k, dt):
    # exact solution of m_t = -2k(|m|^2 - 1) m, which only rescales m
    rho = dot(m, m)
    with np.errstate(divide="ignore", invalid="ignore"):
        v = 1.0 + (1.0 / rho - 1.0) * np.exp(-4.0 * k * dt)
        s = np.where(rho > 0, np.sqrt(1.0 / (v * rho)), 0.0)
    return m * s[..., None, :, :]


def step_penalized(m, u, grid, k, step=None):
    """One step of the penalised system.

    The penalty term is integrated exactly (it is a radial flow), then the
    remaining ``m_t - m x m_t = 2 lap m + 2u`` is advanced with the diagonal
    part of the Laplacian implicit.
    """
    dt = grid.dt
    mh = _penalty_flow(m, k, dt)
    lap = mesh.laplacian(mh, grid)
    mt = skew_solve(mh, 2.0 * lap + 2.0 * u)
    out = mesh.helmholtz_solve(mh + dt * (mt - lap), dt, grid)
    _guard(out, step)
    return out


def solve_state(problem):
    """March the state from ``m0`` over all time levels; returns ``(nt+1, 3, ny, nx)``."""
    p = problem.validate()
    g = p.grid
    check_stability(g, warn=p.warn_stability)
    m = np.empty((g.nt + 1, 3) + g.shape)
    m[0] = p.m0
    for n in range(g.nt):
        if p.scheme == "projection":
            m[n + 1] = step_projection(m[n], p.u[n], g, step=n + 1)
        else:
            m[n + 1] = step_penalized(m[n], p.u[n], g, p.penalty_k, step=n + 1)
    return m


def exchange_energy(m, grid):
    """``1/2 |grad m|^2_L2`` for a field, or per time level for a trajectory."""
    q = mesh.grad_sq(m, grid)
    return 0.5 * np.sum(grid.weights * q, axis=(-2, -1))


@dataclass
class EnergyReport:
    lhs_weak: float
    rhs_weak: float
    slack: float
    lhs_running: float
    slack_running: float
    penalty_violation: float
    constraint_violation: float
    grad_L4L4: float
    regularity_bound_exponent: float
    regular: bool

    def to_dict(self):
        return asdict(self)


def energy_report(m, u, m0, grid, penalty_k=None):
    """Energy bookkeeping for a solved trajectory.

    ``lhs_weak``/``rhs_weak`` are ``1/2|m_t|^2_{L2L2} + sup_t |grad m(t)|^2`` and
    ``|grad m0|^2 + 2|u|^2_{L2L2}``.  ``lhs_running`` is the time-resolved
    form ``max_n (1/2 int_0^t_n |m_t|^2 + |grad m(t_n)|^2)`` compared with
    ``|grad m0|^2 + 2 int_0^t_n |u|^2``.  Violations are reported as negative
    slack, never raised.
    """
    if m.shape != u.shape or m.shape[0] != grid.nt + 1 or m0.shape != m.shape[1:]:
        raise GridMismatchError(f"state {m.shape}, control {u.shape}, m0 {m0.shape} disagree")
    dt = grid.dt
    mt = np.diff(m, axis=0) / dt
    mt_sq = np.sum(grid.weights * np.sum(mt * mt, axis=1), axis=(-2, -1))
    grad_e = 2.0 * exchange_energy(m, grid)
    e0 = 2.0 * float(exchange_energy(m0, grid))
    u_sq = np.sum(grid.weights * np.sum(u * u, axis=1), axis=(-2, -1))

    lhs = 0.5 * dt * mt_sq.sum() + grad_e.max()
    rhs = e0 + 2.0 * float(np.dot(grid.time_weights, u_sq))

    cum_mt = np.concatenate([[0.0], np.cumsum(dt * mt_sq)])
    cum_u = np.concatenate([[0.0], np.cumsum(dt * u_sq[:-1])])
    run_l = 0.5 * cum_mt + grad_e
    run_r = e0 + 2.0 * cum_u

    defect = norm(m) ** 2 - 1.0
    dsq = np.sum(grid.weights * defect ** 2, axis=(-2, -1))
    pen = 0.5 * penalty_k * float(dsq.max()) if penalty_k else 0.0

    gl4 = mesh.grad_norm(m, grid, p=4) ** 4
    lap0 = mesh.laplacian(m0, grid)
    u_h1 = mesh.norms(u, grid, "L2H1")
    expo = 1.0 + mesh.inner(lap0, lap0, grid) ** 2 + gl4 ** 2 + u_h1 ** 4
    return EnergyReport(
        lhs_weak=float(lhs), rhs_weak=float(rhs), slack=float(rhs - lhs),
        lhs_running=float(run_l.max()), slack_running=float(np.min(run_r - run_l)),
        penalty_violation=pen, constraint_violation=float(np.dot(grid.time_weights, dsq)),
        grad_L4L4=float(gl4), regularity_bound_exponent=float(expo),
        regular=bool(np.isfinite(gl4)))
