"""Tangent-linear, adjoint, and costate-derivative solvers.

Notation: ``m``/``u`` are the base state and control trajectories, ``z`` a
state perturbation, ``phi`` the costate.  The linearised right-hand side is

    A z = 2 (grad m : grad z) m + |grad m|^2 z + z x lap m + m x lap z
          + z x u - z x (m x u) - m x (z x u)

so that ``z_t - lap z - A z = f``.  The adjoint operator ``R`` below is the
exact transpose of ``A`` under the trapezoidal inner product, term by term,
and the costate solves ``phi_t + lap phi + R phi = g`` backwards from
``phi(T) = m(T) - m_target``.

The tangent march is the exact derivative of the projected IMEX state step,
so finite-difference tangent checks converge at second order.  The adjoint is
a discretisation of the continuous costate equation (not the transpose of the
tangent march), so gradients agree with finite differences only up to the
time-discretisation error.
"""

from dataclasses import dataclass

import numpy as np

from . import mesh
from .algebra import cross, dot, norm
from .errors import GridMismatchError, InstabilityError
from .state import BLOWUP, check_stability, predict

__all__ = [
    "TargetData",
    "LinearizedProblem",
    "AdjointProblem",
    "linearized_apply_rhs_terms",
    "adjoint_apply_terms",
    "deriv_rhs",
    "control_adjoint",
    "tracking_flux",
    "adjoint_forcing",
    "solve_linearized",
    "solve_adjoint",
    "costate_derivative_forcing",
    "solve_costate_derivative",
    "duality_residual",
]


def _s(a):
    # broadcast a nodal scalar against a vector field
    return a[..., None, :, :]


@dataclass
class TargetData:
    m_d: np.ndarray  # (nt + 1, 3, ny, nx)
    m_omega: np.ndarray  # (3, ny, nx)

    def validate(self, grid, strict=False):
        shape = (grid.nt + 1, 3) + grid.shape
        if self.m_d.shape != shape or self.m_omega.shape != shape[1:]:
            raise GridMismatchError(
                f"targets {self.m_d.shape}/{self.m_omega.shape} do not fit {shape}")
        if not (np.all(np.isfinite(self.m_d)) and np.all(np.isfinite(self.m_omega))):
            raise ValueError("non-finite target data")
        if strict and not np.isfinite(mesh.grad_norm(self.m_d, grid, p=6)):
            raise ValueError("grad m_d is not in L6(0,T;L6); the costate is not defined")
        return self


@dataclass
class LinearizedProblem:
    grid: mesh.Grid
    m: np.ndarray
    u: np.ndarray
    f: np.ndarray
    z0: np.ndarray = None

    def validate(self):
        shape = (self.grid.nt + 1, 3) + self.grid.shape
        for name in ("m", "u", "f"):
            if getattr(self, name).shape != shape:
                raise GridMismatchError(f"{name} has shape {getattr(self, name).shape}, "
                                        f"expected {shape}")
        if self.z0 is None:
            self.z0 = np.zeros(shape[1:])
        elif self.z0.shape != shape[1:]:
            raise GridMismatchError(f"z0 has shape {self.z0.shape}")
        d = np.max(np.abs(norm(self.m) - 1.0))
        if d > 1e-12:
            raise ValueError(f"base state is not unit length (defect {d:.2e})")
        return self


@dataclass
class AdjointProblem:
    grid: mesh.Grid
    m: np.ndarray
    u: np.ndarray
    targets: TargetData
    warn_stability: bool = True

    def validate(self):
        shape = (self.grid.nt + 1, 3) + self.grid.shape
        if self.m.shape != shape or self.u.shape != shape:
            raise GridMismatchError(f"base {self.m.shape}/{self.u.shape}, expected {shape}")
        self.targets.validate(self.grid, strict=True)
        return self


# --- pointwise/stencil operators ---------------------------------------------

def linearized_apply_rhs_terms(m, u, z, grid):
    """``A z`` at one time level (or vectorised over leading axes)."""
    if not (m.shape == u.shape == z.shape):
        raise GridMismatchError(f"shapes {m.shape}, {u.shape}, {z.shape} differ")
    mx, my = mesh.gradient(m, grid)
    zx, zy = mesh.gradient(z, grid)
    mdz = mesh.node_average((mx * zx).sum(-3), (my * zy).sum(-3), grid)
    q = mesh.node_average((mx * mx).sum(-3), (my * my).sum(-3), grid)
    lap_m = mesh.divergence(mx, my, grid)
    lap_z = mesh.divergence(zx, zy, grid)
    zu = cross(z, u)
    return (2.0 * _s(mdz) * m + _s(q) * z + cross(z, lap_m) + cross(m, lap_z)
            + zu - cross(z, cross(m, u)) - cross(m, zu))


def adjoint_apply_terms(m, u, phi, grid):
    """``R phi``, the transpose of :func:`linearized_apply_rhs_terms`.

    ``-2 div((m.phi) grad m)`` takes ``m.phi`` to the faces by averaging,
    and ``lap(phi x m)`` is applied to the product directly; both choices make
    ``<phi, A z> == <R phi, z>`` hold to rounding error.
    """
    if not (m.shape == u.shape == phi.shape):
        raise GridMismatchError(f"shapes {m.shape}, {u.shape}, {phi.shape} differ")
    mx, my = mesh.gradient(m, grid)
    q = mesh.node_average((mx * mx).sum(-3), (my * my).sum(-3), grid)
    lap_m = mesh.divergence(mx, my, grid)
    sx, sy = mesh.face_average(dot(m, phi), grid)
    pm = cross(phi, m)
    return (_s(q) * phi - 2.0 * mesh.divergence(_s(sx) * mx, _s(sy) * my, grid)
            + mesh.laplacian(pm, grid) + cross(lap_m, phi) - cross(phi, u)
            + cross(pm, u) + cross(phi, cross(m, u)))


def deriv_rhs(m, h):
    """State forcing ``m x h - m x (m x h)`` produced by a control direction ``h``."""
    if m.shape != h.shape:
        raise GridMismatchError(f"shapes {m.shape} and {h.shape} differ")
    mh = cross(m, h)
    return mh - cross(m, mh)


def control_adjoint(m, phi):
    """Transpose of :func:`deriv_rhs`: ``phi x m + m x (phi x m)``."""
    pm = cross(phi, m)
    return pm + cross(m, pm)


def tracking_flux(m, m_d, grid):
    """Face flux ``|grad e|^2 grad e`` with ``e = m - m_d``.

    ``|grad e|^2`` is formed at the nodes and averaged back to the faces; this
    is the exact gradient of the quadrature used for the tracking cost.
    """
    ex, ey = mesh.gradient(m - m_d, grid)
    q = mesh.node_average((ex * ex).sum(-3), (ey * ey).sum(-3), grid)
    qx, qy = mesh.face_average(q, grid)
    return _s(qx) * ex, _s(qy) * ey


def adjoint_forcing(m, m_d, grid):
    """``div(|grad e|^2 grad e)`` in divergence form."""
    if m.shape != m_d.shape:
        raise GridMismatchError(f"shapes {m.shape} and {m_d.shape} differ")
    return mesh.divergence(*tracking_flux(m, m_d, grid), grid)


def _tracking_forcing_derivative(m, m_d, z, grid):
    ex, ey = mesh.gradient(m - m_d, grid)
    zx, zy = mesh.gradient(z, grid)
    q = mesh.node_average((ex * ex).sum(-3), (ey * ey).sum(-3), grid)
    dq = 2.0 * mesh.node_average((ex * zx).sum(-3), (ey * zy).sum(-3), grid)
    qx, qy = mesh.face_average(q, grid)
    dqx, dqy = mesh.face_average(dq, grid)
    return mesh.divergence(_s(dqx) * ex + _s(qx) * zx, _s(dqy) * ey + _s(qy) * zy, grid)


def costate_derivative_forcing(m, u, m_d, phi, z, h, grid):
    """Source for the costate derivative at one time level.

    Returns ``dR[z, h] phi - dg[z]``: the derivative of the adjoint coupling
    terms and tracking forcing along the state/control perturbation ``(z, h)``.
    Its negative is the twelve-term right-hand side of the costate-derivative
    equation written in ``E phi' = ...`` form.
    """
    mx, my = mesh.gradient(m, grid)
    zx, zy = mesh.gradient(z, grid)
    mdz = mesh.node_average((mx * zx).sum(-3), (my * zy).sum(-3), grid)
    lap_z = mesh.divergence(zx, zy, grid)
    zpx, zpy = mesh.face_average(dot(z, phi), grid)
    mpx, mpy = mesh.face_average(dot(m, phi), grid)
    pz = cross(phi, z)
    pm = cross(phi, m)
    d_r = (2.0 * _s(mdz) * phi
           - 2.0 * mesh.divergence(_s(zpx) * mx + _s(mpx) * zx, _s(zpy) * my + _s(mpy) * zy,
                                   grid)
           + mesh.laplacian(pz, grid) + cross(lap_z, phi)
           - cross(phi, h) + cross(pz, u) + cross(pm, h)
           + cross(phi, cross(z, u)) + cross(phi, cross(m, h)))
    return d_r - _tracking_forcing_derivative(m, m_d, z, grid)


# --- marches ----------------------------------------------------------------

def _guard(x, step, what):
    if not np.all(np.isfinite(x)) or np.max(np.abs(x)) > BLOWUP:
        raise InstabilityError(f"{what} blew up at time step {step}", step=step)


def solve_linearized(p, project=True):
    """Forward tangent march for ``z_t - lap z - A z = f`` from ``z0``.

    Each step is ``v = (I - dt lap)^{-1}(z + dt(A z + f))``.  With ``project``
    the derivative of the unit-sphere projection at the predictor ``m*`` is
    applied, ``z_next = (v - (m.v) m)/|m*|``, making the march the exact
    linearisation of the state step.
    """
    p = p.validate()
    g = p.grid
    z = np.empty_like(p.m)
    z[0] = p.z0
    for n in range(g.nt):
        rhs = z[n] + g.dt * (linearized_apply_rhs_terms(p.m[n], p.u[n], z[n], g) + p.f[n])
        v = mesh.helmholtz_solve(rhs, g.dt, g)
        if project:
            mn = p.m[n + 1]
            scale = norm(predict(p.m[n], p.u[n], g))
            v = (v - _s(dot(mn, v)) * mn) / _s(scale)
        _guard(v, n + 1, "tangent solution")
        z[n + 1] = v
    return z


def _backward(grid, m, u, terminal, source, warn=True):
    """March ``phi_t + lap phi + R phi = -source`` backwards from ``terminal``.

    ``phi_n = (I - dt lap)^{-1}(phi_{n+1} + dt(R_{n+1} phi_{n+1} + s_{n+1}))``;
    ``source(k, phi_k)`` returns the explicit source at level ``k``.
    """
    check_stability(grid, warn)
    phi = np.empty_like(m)
    phi[-1] = terminal
    dt = grid.dt
    for n in range(grid.nt - 1, -1, -1):
        # explicit in reversed time: coefficients at the known level n + 1
        nxt = phi[n + 1]
        rhs = nxt + dt * (adjoint_apply_terms(m[n + 1], u[n + 1], nxt, grid) + source(n + 1, nxt))
        phi[n] = mesh.helmholtz_solve(rhs, dt, grid)
        _guard(phi[n], n, "costate")
    return phi


def solve_adjoint(p, terminal=None, forcing=None):
    """Costate ``phi`` with ``phi(T) = m(T) - m_omega`` and tracking forcing.

    ``terminal`` and ``forcing`` (a trajectory of ``g``) override the defaults;
    this is used to check linearity of the march.
    """
    p = p.validate()
    g = p.grid
    if terminal is None:
        terminal = p.m[-1] - p.targets.m_omega
    if forcing is None:
        forcing = adjoint_forcing(p.m, p.targets.m_d, g)
    return _backward(g, p.m, p.u, terminal, lambda n, _: -forcing[n], p.warn_stability)


def solve_costate_derivative(base, phi, z, h):
    """Derivative of the costate along control direction ``h``.

    ``z`` must be the tangent response to ``h`` (zero initial value).  The
    march is the exact derivative of :func:`solve_adjoint` with respect to
    the control, and ends at ``phi'(T) = z(T)``.
    """
    base = base.validate()
    g = base.grid
    m, u, m_d = base.m, base.u, base.targets.m_d
    if not (phi.shape == z.shape == h.shape == m.shape):
        raise GridMismatchError("phi, z, h must match the base trajectory")

    def source(k, _):
        return costate_derivative_forcing(m[k], u[k], m_d[k], phi[k], z[k], h[k], g)

    return _backward(g, m, u, z[-1], source, base.warn_stability)


def duality_residual(grid, m, u, phi, z, f, targets):
    """Relative residual of the time integration-by-parts identity.

    Left side ``int (z_t, phi) + int (phi_t, z)``, with ``z_t`` and ``phi_t``
    taken from the tangent and costate equations evaluated on the computed
    trajectories.  Right side ``(m(T) - m_omega, z(T))``.  Returns
    ``(lhs, rhs, |lhs - rhs| / |rhs|)``.
    """
    lap_z = mesh.laplacian(z, grid)
    lap_p = mesh.laplacian(phi, grid)
    z_t = lap_z + linearized_apply_rhs_terms(m, u, z, grid) + f
    p_t = -lap_p - adjoint_apply_terms(m, u, phi, grid) + adjoint_forcing(m, targets.m_d, grid)
    lhs = mesh.time_inner(z_t, phi, grid) + mesh.time_inner(p_t, z, grid)
    rhs = mesh.inner(m[-1] - targets.m_omega, z[-1], grid)
    return lhs, rhs, abs(lhs - rhs) / abs(rhs)
