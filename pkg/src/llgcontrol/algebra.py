"""Nodewise R^3 algebra on fields, unit-sphere helpers, and trajectory files.

Vector fields carry their components on axis ``-3``: a field is
``(3, ny, nx)`` and a trajectory ``(nt + 1, 3, ny, nx)``.

LLGF binary layout (little endian)::

    b"LLGF" | u32 version=1 | u32 nx | u32 ny | u32 ncomp=3 | u32 nt+1
    | f64 dt | f64 hx | f64 hy | f64 payload[time][y][x][component]
"""

import csv
import struct
from typing import NamedTuple

import numpy as np

from .errors import FormatError, GridMismatchError, NormalizationError

UNIT_TOL = 1e-12

MAGIC = b"LLGF"
VERSION = 1
_HEADER = struct.Struct("<4s5I3d")


def _same_shape(*arrays):
    s = arrays[0].shape
    for a in arrays[1:]:
        if a.shape != s:
            raise GridMismatchError(f"shape mismatch: {s} vs {a.shape}")


def _c(a):
    return a[..., 0, :, :], a[..., 1, :, :], a[..., 2, :, :]


def cross(a, b):
    """Nodewise cross product of two vector fields (or trajectories)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape[-3] != 3 or b.shape[-3] != 3:
        raise GridMismatchError("cross product needs 3 components on axis -3")
    a1, a2, a3 = _c(a)
    b1, b2, b3 = _c(b)
    return np.stack([a2 * b3 - a3 * b2, a3 * b1 - a1 * b3, a1 * b2 - a2 * b1], axis=-3)


def dot(a, b):
    """Nodewise dot product; drops the component axis."""
    return np.sum(np.asarray(a) * np.asarray(b), axis=-3)


def norm(a):
    return np.sqrt(dot(a, a))


def renormalize(m):
    """Project every nodal vector onto the unit sphere."""
    m = np.asarray(m, dtype=float)
    r = norm(m)
    bad = ~(r > 0)
    if np.any(bad):
        idx = tuple(int(i) for i in np.argwhere(bad)[0])
        raise NormalizationError(f"zero-length vector at node {idx}", node=idx)
    return m / r[..., None, :, :]


def unit_defect(m):
    """Largest ``| |m| - 1 |`` over all nodes."""
    return float(np.max(np.abs(norm(m) - 1.0)))


def is_unit(m, tol=UNIT_TOL):
    return unit_defect(m) <= tol


def skew_solve(m, r):
    """Solve ``x - m x x = r`` nodewise.

    Closed form ``x = (r + m x r + (m.r) m) / (1 + |m|^2)``.
    """
    m = np.asarray(m, dtype=float)
    r = np.asarray(r, dtype=float)
    _same_shape(m, r)
    mr = dot(m, r)[..., None, :, :]
    den = (1.0 + dot(m, m))[..., None, :, :]
    return (r + cross(m, r) + mr * m) / den


def constant_field(vec, grid):
    """Vector field equal to ``vec`` at every node."""
    v = np.asarray(vec, dtype=float).reshape(3, 1, 1)
    return np.broadcast_to(v, (3,) + grid.shape).copy()


def constant_trajectory(field, grid):
    """Repeat a field over all ``nt + 1`` time levels."""
    return np.broadcast_to(field, (grid.nt + 1,) + field.shape).copy()


# --- trajectory files -------------------------------------------------------

class TrajectoryFile(NamedTuple):
    data: np.ndarray  # (nt + 1, 3, ny, nx)
    dt: float
    hx: float
    hy: float

    @property
    def nx(self):
        return self.data.shape[-1]

    @property
    def ny(self):
        return self.data.shape[-2]

    @property
    def nt(self):
        return self.data.shape[0] - 1

    def matches(self, grid, rtol=1e-12):
        return (self.nx == grid.nx and self.ny == grid.ny and self.nt == grid.nt
                and abs(self.dt - grid.dt) <= rtol * grid.dt
                and abs(self.hx - grid.hx) <= rtol * grid.hx
                and abs(self.hy - grid.hy) <= rtol * grid.hy)


def write_trajectory(path, data, grid=None, *, dt=None, hx=None, hy=None):
    """Write a vector trajectory ``(nt + 1, 3, ny, nx)`` as LLGF."""
    data = np.asarray(data, dtype=float)
    if data.ndim == 3:
        data = data[None]
    if data.ndim != 4 or data.shape[1] != 3:
        raise GridMismatchError(f"expected (nt+1, 3, ny, nx), got {data.shape}")
    if grid is not None:
        grid.check(data)
        dt, hx, hy = grid.dt, grid.hx, grid.hy
    if dt is None or hx is None or hy is None:
        raise ValueError("need either a grid or dt, hx, hy")
    ntp1, _, ny, nx = data.shape
    header = _HEADER.pack(MAGIC, VERSION, nx, ny, 3, ntp1, dt, hx, hy)
    payload = np.ascontiguousarray(np.moveaxis(data, 1, -1), dtype="<f8").tobytes()
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload)


def read_trajectory(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 4 or raw[:4] != MAGIC:
        raise FormatError("bad magic")
    if len(raw) < _HEADER.size:
        raise FormatError("truncated header")
    magic, version, nx, ny, ncomp, ntp1, dt, hx, hy = _HEADER.unpack_from(raw)
    if version != VERSION:
        raise FormatError(f"version mismatch: file has {version}, reader expects {VERSION}")
    if ncomp != 3:
        raise FormatError(f"expected 3 components, header says {ncomp}")
    if min(nx, ny, ntp1) < 1:
        raise FormatError(f"degenerate dimensions nx={nx} ny={ny} nt+1={ntp1}")
    expected = ntp1 * ny * nx * ncomp * 8
    got = len(raw) - _HEADER.size
    if got < expected:
        raise FormatError(f"truncated payload: {got} bytes, header implies {expected}")
    if got > expected:
        raise FormatError(f"payload length {got} inconsistent with header ({expected} bytes)")
    vals = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size).reshape(ntp1, ny, nx, 3)
    data = np.moveaxis(vals, -1, 1).astype(float)
    return TrajectoryFile(data, dt, hx, hy)


def write_csv(path, data, grid):
    """Export a trajectory as CSV rows ``t,x,y,c1,c2,c3`` (17 significant digits)."""
    data = np.asarray(data, dtype=float)
    if data.ndim == 3:
        data = data[None]
    grid.check(data)
    X, Y = grid.xy
    fmt = "{:.17g}".format
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "x", "y", "c1", "c2", "c3"])
        for n, frame in enumerate(data):
            t = n * grid.dt
            for j in range(grid.ny):
                for i in range(grid.nx):
                    w.writerow([fmt(t), fmt(X[j, i]), fmt(Y[j, i]),
                                fmt(frame[0, j, i]), fmt(frame[1, j, i]), fmt(frame[2, j, i])])


def read_csv(path, grid):
    rows = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    n = rows.shape[0] // (grid.nx * grid.ny)
    vals = rows[:, 3:].reshape(n, grid.ny, grid.nx, 3)
    return np.moveaxis(vals, -1, 1)
