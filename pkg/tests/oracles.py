"""Independent reference computations used by the tests.

Nothing here imports the package's solvers; each oracle is written from the
underlying mathematics with plain numpy loops or closed forms.
"""

import numpy as np


def cross3(a, b):
    # textbook component formula on plain 3-vectors
    return np.array([a[1] * b[2] - a[2] * b[1],
                     a[2] * b[0] - a[0] * b[2],
                     a[0] * b[1] - a[1] * b[0]])


def cross_field_bruteforce(a, b):
    """Node-by-node cross product of two (3, ny, nx) fields."""
    out = np.empty_like(a)
    for j in range(a.shape[1]):
        for i in range(a.shape[2]):
            out[:, j, i] = cross3(a[:, j, i], b[:, j, i])
    return out


def skew_matrix(m):
    """Matrix of ``x -> m x x``."""
    return np.array([[0.0, -m[2], m[1]], [m[2], 0.0, -m[0]], [-m[1], m[0], 0.0]])


def skew_solve_direct(m, r):
    """Solve ``(I - [m]_x) x = r`` with a dense 3x3 solve at every node."""
    out = np.empty_like(r)
    for j in range(r.shape[1]):
        for i in range(r.shape[2]):
            out[:, j, i] = np.linalg.solve(np.eye(3) - skew_matrix(m[:, j, i]), r[:, j, i])
    return out


def macrospin_rhs(m, u):
    """Spatially uniform LLG: ``m' = m x u - m x (m x u)``."""
    mu = cross3(m, u)
    return mu - cross3(m, mu)


def macrospin_rk4(m0, u, T, dt):
    """Classical RK4 for the macrospin ODE with constant field ``u``."""
    n = int(round(T / dt))
    m = np.array(m0, float)
    for _ in range(n):
        k1 = macrospin_rhs(m, u)
        k2 = macrospin_rhs(m + 0.5 * dt * k1, u)
        k3 = macrospin_rhs(m + 0.5 * dt * k2, u)
        k4 = macrospin_rhs(m + dt * k3, u)
        m = m + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    return m


def macrospin_imex_step(m, u, dt):
    """One projected explicit step for a uniform field (the Laplacian is zero)."""
    ms = m + dt * macrospin_rhs(m, u)
    return ms / np.linalg.norm(ms)


def neumann_laplacian_matrix(n, h):
    """1D node-centred Neumann Laplacian with mirror ghosts (dense)."""
    L = np.zeros((n, n))
    for i in range(n):
        if i == 0:
            L[0, 0], L[0, 1] = -2.0, 2.0
        elif i == n - 1:
            L[i, i], L[i, i - 1] = -2.0, 2.0
        else:
            L[i, i - 1], L[i, i], L[i, i + 1] = 1.0, -2.0, 1.0
    return L / h ** 2


def laplacian_dense(f, hx, hy):
    """2D Neumann Laplacian by Kronecker assembly of the 1D mirror-ghost stencil."""
    ny, nx = f.shape
    Lx = neumann_laplacian_matrix(nx, hx)
    Ly = neumann_laplacian_matrix(ny, hy)
    return f @ Lx.T + Ly @ f


def helmholtz_dense(b, tau, hx, hy):
    """Solve ``(I - tau lap) x = b`` by a dense linear solve."""
    ny, nx = b.shape
    A = np.eye(nx * ny) - tau * (np.kron(np.eye(ny), neumann_laplacian_matrix(nx, hx))
                                 + np.kron(neumann_laplacian_matrix(ny, hy), np.eye(nx)))
    return np.linalg.solve(A, b.ravel()).reshape(ny, nx)


def trapezoid_2d(f, x, y):
    """Tensor trapezoid rule over the last two axes."""
    return np.trapezoid(np.trapezoid(f, x, axis=-1), y, axis=-1)


def smooth_unit_field(X, Y, theta0=0.4, amp=0.6):
    """Unit field tilted by a Neumann-compatible cosine angle (test input, not an oracle)."""
    th = theta0 + amp * np.cos(np.pi * X) * np.cos(np.pi * Y)
    return np.stack([np.sin(th), np.zeros_like(th), np.cos(th)])
