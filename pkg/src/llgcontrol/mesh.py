"""Node-centred rectangular grid with zero-Neumann difference operators.

Nodes sit on ``x_i = i*hx`` and ``y_j = j*hy`` including the boundary.  The
gradient lives on cell faces; the two boundary fluxes of every row/column are
zero, which is the discrete form of ``dm/dn = 0``.  The divergence is built as
the negative adjoint of the gradient with respect to trapezoidal inner
products, and the Laplacian is ``divergence(gradient(f))``.  With this choice
the identity ``<lap f, w> = -<grad f, grad w>`` holds to rounding error.

Array layout: a scalar field is ``(ny, nx)``; anything with extra leading axes
(vector components, time levels) is handled by broadcasting, so a vector field
is ``(3, ny, nx)`` and a vector trajectory ``(nt + 1, 3, ny, nx)``.
"""

from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import fft

from .errors import ConvergenceError, GridMismatchError

__all__ = [
    "Grid",
    "gradient",
    "divergence",
    "laplacian",
    "helmholtz_solve",
    "node_average",
    "face_average",
    "grad_dot",
    "grad_sq",
    "inner",
    "face_inner",
    "time_inner",
    "norms",
    "grad_norm",
    "NORM_KINDS",
]


@dataclass(frozen=True)
class Grid:
    """Space-time grid on ``[0, Lx] x [0, Ly] x [0, nt*dt]``."""

    nx: int
    ny: int
    Lx: float = 1.0
    Ly: float = 1.0
    dt: float = 1e-3
    nt: int = 1

    def __post_init__(self):
        if int(self.nx) != self.nx or int(self.ny) != self.ny or int(self.nt) != self.nt:
            raise ValueError("nx, ny, nt must be integers")
        if self.nx < 3 or self.ny < 3:
            raise ValueError(f"need nx, ny >= 3, got nx={self.nx}, ny={self.ny}")
        if self.nt < 1:
            raise ValueError(f"need nt >= 1, got {self.nt}")
        for name in ("Lx", "Ly", "dt"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise ValueError(f"{name} must be positive and finite, got {v}")

    @classmethod
    def from_horizon(cls, nx, ny, T, dt, Lx=1.0, Ly=1.0):
        """Build a grid from a horizon ``T``; ``T/dt`` must be an integer."""
        nt = int(round(T / dt))
        if nt < 1 or abs(nt * dt - T) > 1e-12 * max(1.0, abs(T)):
            raise ValueError(f"T={T} is not an integer multiple of dt={dt}")
        return cls(nx=nx, ny=ny, Lx=Lx, Ly=Ly, dt=dt, nt=nt)

    @property
    def hx(self):
        return self.Lx / (self.nx - 1)

    @property
    def hy(self):
        return self.Ly / (self.ny - 1)

    @property
    def h(self):
        return min(self.hx, self.hy)

    @property
    def T(self):
        return self.nt * self.dt

    @property
    def shape(self):
        return (self.ny, self.nx)

    @property
    def area(self):
        return self.Lx * self.Ly

    @cached_property
    def x(self):
        return np.linspace(0.0, self.Lx, self.nx)

    @cached_property
    def y(self):
        return np.linspace(0.0, self.Ly, self.ny)

    @cached_property
    def xy(self):
        """Node coordinates as two ``(ny, nx)`` arrays."""
        return np.meshgrid(self.x, self.y)

    @cached_property
    def t(self):
        return self.dt * np.arange(self.nt + 1)

    @cached_property
    def wx(self):
        w = np.full(self.nx, self.hx)
        w[0] = w[-1] = 0.5 * self.hx
        return w

    @cached_property
    def wy(self):
        w = np.full(self.ny, self.hy)
        w[0] = w[-1] = 0.5 * self.hy
        return w

    @cached_property
    def weights(self):
        """Trapezoidal node weights, shape ``(ny, nx)``; they sum to the area."""
        return self.wy[:, None] * self.wx[None, :]

    @cached_property
    def face_weights(self):
        """Weights of the x-faces ``(ny, nx-1)`` and y-faces ``(ny-1, nx)``."""
        return (self.hx * self.wy[:, None] * np.ones(self.nx - 1),
                self.hy * self.wx[None, :] * np.ones((self.ny - 1, 1)))

    @cached_property
    def time_weights(self):
        w = np.full(self.nt + 1, self.dt)
        w[0] = w[-1] = 0.5 * self.dt
        return w

    @cached_property
    def laplacian_eigenvalues(self):
        """Eigenvalues of ``-lap`` on the DCT-I basis, shape ``(ny, nx)``."""
        kx = np.arange(self.nx)
        ky = np.arange(self.ny)
        lx = (2.0 - 2.0 * np.cos(np.pi * kx / (self.nx - 1))) / self.hx ** 2
        ly = (2.0 - 2.0 * np.cos(np.pi * ky / (self.ny - 1))) / self.hy ** 2
        return ly[:, None] + lx[None, :]

    @cached_property
    def _node_from_face_x(self):
        # weight of each adjacent x-face when averaging to a node
        return (0.5 * self.hx) / self.wx

    @cached_property
    def _node_from_face_y(self):
        return ((0.5 * self.hy) / self.wy)[:, None]

    def check(self, f, what="field"):
        if f.shape[-2:] != self.shape:
            raise GridMismatchError(
                f"{what} has spatial shape {f.shape[-2:]}, grid expects {self.shape}")

    def refined(self, factor=2, dt_factor=None):
        """Grid with spacing divided by ``factor``; dt divided by ``dt_factor``."""
        dt_factor = factor if dt_factor is None else dt_factor
        return Grid(nx=factor * (self.nx - 1) + 1, ny=factor * (self.ny - 1) + 1,
                    Lx=self.Lx, Ly=self.Ly, dt=self.dt / dt_factor,
                    nt=int(round(self.nt * dt_factor)))


def _check_faces(vx, vy, grid):
    ny, nx = grid.shape
    if vx.shape[-2:] != (ny, nx - 1) or vy.shape[-2:] != (ny - 1, nx):
        raise GridMismatchError(
            f"face fields {vx.shape[-2:]}, {vy.shape[-2:]} do not fit grid {grid.shape}")


def gradient(f, grid):
    """Face-centred gradient ``(df/dx on x-faces, df/dy on y-faces)``.

    The fluxes through the boundary are zero by convention and are not stored.
    """
    f = np.asarray(f, dtype=float)
    grid.check(f)
    return ((f[..., 1:] - f[..., :-1]) / grid.hx,
            (f[..., 1:, :] - f[..., :-1, :]) / grid.hy)


def divergence(vx, vy, grid):
    """Nodal divergence of a face field; the negative adjoint of :func:`gradient`."""
    _check_faces(vx, vy, grid)
    # boundary fluxes are zero, so the end nodes see a single face
    d = np.empty(np.broadcast_shapes(vx.shape[:-1] + (vx.shape[-1] + 1,),
                                     vy.shape[:-2] + (vy.shape[-2] + 1, vy.shape[-1])))
    d[..., 0] = vx[..., 0]
    d[..., 1:-1] = vx[..., 1:] - vx[..., :-1]
    d[..., -1] = -vx[..., -1]
    d /= grid.wx
    d[..., 0, :] += vy[..., 0, :] / grid.wy[0]
    d[..., 1:-1, :] += (vy[..., 1:, :] - vy[..., :-1, :]) / grid.wy[1:-1, None]
    d[..., -1, :] -= vy[..., -1, :] / grid.wy[-1]
    return d


def laplacian(f, grid):
    return divergence(*gradient(f, grid), grid)


def helmholtz_solve(b, tau, grid, check=True, rtol=1e-10):
    """Solve ``(I - tau*lap) x = b`` with the zero-Neumann Laplacian.

    Uses the DCT-I diagonalisation of the node-centred Neumann stencil, so the
    solve is direct.  With ``check`` the residual is verified against ``rtol``.
    """
    if not tau > 0:
        raise ValueError(f"tau must be positive, got {tau}")
    b = np.asarray(b, dtype=float)
    grid.check(b)
    bh = fft.dctn(b, type=1, axes=(-2, -1))
    x = fft.idctn(bh / (1.0 + tau * grid.laplacian_eigenvalues), type=1, axes=(-2, -1))
    if check:
        r = x - tau * laplacian(x, grid) - b
        rn = np.sqrt(np.sum(grid.weights * r * r))
        bn = np.sqrt(np.sum(grid.weights * b * b))
        if rn > rtol * bn + 1e-300:
            raise ConvergenceError(
                f"Helmholtz residual {rn:.3e} exceeds {rtol:.0e} * |b| = {rtol * bn:.3e}")
    return x


def node_average(px, py, grid):
    """Average face quantities to nodes.

    Each node takes the mean of its two neighbouring faces per direction; a
    boundary node has a single interior face (the boundary flux is zero) and
    takes that face's value.  The weights are chosen so that
    ``sum(weights * node_average(p)) == face_inner``-style sums hold exactly.
    """
    _check_faces(px, py, grid)
    zx = np.zeros(px.shape[:-1] + (1,))
    zy = np.zeros(py.shape[:-2] + (1, py.shape[-1]))
    qx = np.concatenate([zx, px, zx], axis=-1)
    qy = np.concatenate([zy, py, zy], axis=-2)
    return ((qx[..., :-1] + qx[..., 1:]) * grid._node_from_face_x
            + (qy[..., :-1, :] + qy[..., 1:, :]) * grid._node_from_face_y)


def face_average(s, grid):
    """Arithmetic mean of nodal values onto x-faces and y-faces."""
    grid.check(s)
    return 0.5 * (s[..., :-1] + s[..., 1:]), 0.5 * (s[..., :-1, :] + s[..., 1:, :])


def grad_dot(a, b, grid, vector=True):
    """Nodal ``grad a : grad b`` (summed over components when ``vector``)."""
    ax, ay = gradient(a, grid)
    bx, by = gradient(b, grid)
    px, py = ax * bx, ay * by
    if vector:
        px, py = px.sum(axis=-3), py.sum(axis=-3)
    return node_average(px, py, grid)


def grad_sq(a, grid, vector=True):
    """Nodal ``|grad a|^2``."""
    return grad_dot(a, a, grid, vector=vector)


def inner(a, b, grid):
    """Trapezoidal L2 inner product summed over all leading axes."""
    return float(np.sum(grid.weights * a * b))


def face_inner(a, b, grid):
    """Inner product of two face fields ``(vx, vy)`` summed over leading axes."""
    wx, wy = grid.face_weights
    return float(np.sum(wx * a[0] * b[0]) + np.sum(wy * a[1] * b[1]))


def time_inner(a, b, grid):
    """Space-time L2 inner product of two trajectories (time on axis 0)."""
    if a.shape[0] != grid.nt + 1 or b.shape[0] != grid.nt + 1:
        raise GridMismatchError(
            f"trajectories with {a.shape[0]}, {b.shape[0]} levels; grid has {grid.nt + 1}")
    s = np.sum(grid.weights * a * b, axis=tuple(range(1, a.ndim)))
    return float(np.dot(grid.time_weights, s))


NORM_KINDS = ("L2", "H1", "L4", "L6", "Linf", "H2proxy",
              "L2L2", "L2H1", "L4L4", "L6L6", "LinfL2", "LinfH2")


def _abs(f, vector):
    return np.sqrt(np.sum(f * f, axis=-3)) if vector else np.abs(f)


def _spatial(f, grid, kind, vector):
    if kind == "Linf":
        return float(np.max(_abs(f, vector)))
    if kind in ("L2", "L4", "L6"):
        p = int(kind[1])
        return float(np.sum(grid.weights * _abs(f, vector) ** p)) ** (1.0 / p)
    if kind == "H1":
        g = gradient(f, grid)
        return np.sqrt(inner(f, f, grid) + face_inner(g, g, grid))
    if kind == "H2proxy":
        lap = laplacian(f, grid)
        return np.sqrt(inner(f, f, grid)) + np.sqrt(inner(lap, lap, grid))
    raise ValueError(f"unknown norm kind {kind!r}")


def norms(f, grid, kind):
    """Discrete norm of a field or trajectory.

    Spatial kinds (``L2, H1, L4, L6, Linf, H2proxy``) take a scalar ``(ny, nx)``
    or vector ``(3, ny, nx)`` field.  Space-time kinds (``L2L2, L2H1, L4L4,
    L6L6, LinfL2, LinfH2``) take a trajectory with time on axis 0.  ``H2proxy``
    is ``|f|_L2 + |lap f|_L2``, the stand-in for the H2 norm of a Neumann field.
    """
    f = np.asarray(f, dtype=float)
    grid.check(f)
    if kind not in NORM_KINDS:
        raise ValueError(f"unknown norm kind {kind!r}; choose from {NORM_KINDS}")
    if not np.all(np.isfinite(f)):
        raise ValueError("field contains non-finite values")
    if kind in ("L2", "H1", "L4", "L6", "Linf", "H2proxy"):
        if f.ndim not in (2, 3):
            raise GridMismatchError(f"spatial norm needs a field, got shape {f.shape}")
        return _spatial(f, grid, kind, f.ndim == 3)
    if f.ndim not in (3, 4) or f.shape[0] != grid.nt + 1:
        raise GridMismatchError(
            f"space-time norm needs {grid.nt + 1} time levels, got shape {f.shape}")
    vector = f.ndim == 4
    wt = grid.time_weights
    if kind in ("LinfL2", "LinfH2"):
        sub = "L2" if kind == "LinfL2" else "H2proxy"
        return max(_spatial(ft, grid, sub, vector) for ft in f)
    if kind == "L2H1":
        return np.sqrt(sum(w * _spatial(ft, grid, "H1", vector) ** 2 for w, ft in zip(wt, f)))
    p = int(kind[1])
    a = _abs(f, vector) ** p
    return float(np.dot(wt, np.sum(grid.weights * a, axis=(-2, -1)))) ** (1.0 / p)


def grad_norm(f, grid, p=2, vector=True):
    """``L^p`` norm of ``|grad f|``.

    A vector field ``(3, ny, nx)`` (or scalar ``(ny, nx)`` with
    ``vector=False``) gives the spatial norm; one extra leading time axis gives
    the ``L^p(0,T;L^p)`` norm.  ``|grad f|^2`` is formed at the nodes by
    :func:`node_average`.
    """
    f = np.asarray(f, dtype=float)
    grid.check(f)
    q = grad_sq(f, grid, vector=vector)
    s = np.sum(grid.weights * q ** (p / 2.0), axis=(-2, -1))
    if q.ndim == 3:
        if q.shape[0] != grid.nt + 1:
            raise GridMismatchError(f"expected {grid.nt + 1} time levels, got {q.shape[0]}")
        s = np.dot(grid.time_weights, s)
    elif q.ndim != 2:
        raise GridMismatchError(f"cannot take gradient norm of shape {f.shape}")
    return float(s) ** (1.0 / p)
