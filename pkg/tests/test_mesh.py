import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from llgcontrol import mesh
from llgcontrol.errors import GridMismatchError

import oracles


def grid(n=17, **kw):
    return mesh.Grid(n, n, **kw)


# --- Grid -------------------------------------------------------------------

def test_grid_spacings_and_horizon():
    g = mesh.Grid(5, 9, Lx=2.0, Ly=4.0, dt=0.01, nt=30)
    assert g.hx == pytest.approx(0.5)
    assert g.hy == pytest.approx(0.5)
    assert g.T == pytest.approx(0.3, rel=1e-12)
    assert g.weights.sum() == pytest.approx(8.0, rel=1e-14)


@pytest.mark.parametrize("kw", [dict(nx=2, ny=5), dict(nx=5, ny=5, nt=0),
                                dict(nx=5, ny=5, dt=-1.0), dict(nx=5, ny=5, Lx=0.0)])
def test_grid_rejects_degenerate(kw):
    with pytest.raises(ValueError):
        mesh.Grid(**kw)


def test_from_horizon_requires_integer_step_count():
    assert mesh.Grid.from_horizon(5, 5, 0.1, 1e-3).nt == 100
    with pytest.raises(ValueError):
        mesh.Grid.from_horizon(5, 5, 0.1, 3e-2)


# --- gradient ---------------------------------------------------------------

def test_gradient_of_constant_is_zero():
    g = grid(9)
    gx, gy = mesh.gradient(np.full(g.shape, 5.0), g)
    assert gx.shape == (9, 8) and gy.shape == (8, 9)
    assert not gx.any() and not gy.any()


def test_gradient_exact_for_linear():
    g = mesh.Grid(5, 5)
    X, _ = g.xy
    gx, gy = mesh.gradient(X, g)
    np.testing.assert_allclose(gx, 1.0, rtol=1e-14)
    np.testing.assert_allclose(gy, 0.0, atol=1e-14)


def test_gradient_second_order_for_cosine():
    # analytic derivative -pi sin(pi x) sampled at face midpoints
    errs = []
    for n in (17, 33, 65):
        g = grid(n)
        X, _ = g.xy
        gx, _ = mesh.gradient(np.cos(np.pi * X), g)
        xf = 0.5 * (X[:, 1:] + X[:, :-1])
        errs.append(np.max(np.abs(gx + np.pi * np.sin(np.pi * xf))))
    assert 3.5 <= errs[0] / errs[1] <= 4.5
    assert 3.5 <= errs[1] / errs[2] <= 4.5


def test_gradient_shape_mismatch():
    with pytest.raises(GridMismatchError):
        mesh.gradient(np.zeros((4, 5)), grid(5))


# --- divergence / laplacian ---------------------------------------------------

def test_divergence_of_zero():
    g = grid(7)
    out = mesh.divergence(np.zeros((7, 6)), np.zeros((6, 7)), g)
    assert out.shape == g.shape and not out.any()


def test_divergence_is_negative_adjoint_of_gradient():
    g = mesh.Grid(11, 8, Lx=1.3, Ly=0.7)
    rng = np.random.default_rng(0)
    for _ in range(10):
        f, w = rng.normal(size=(2,) + g.shape)
        v = mesh.gradient(f, g)
        lhs = mesh.inner(mesh.divergence(*v, g), w, g)
        rhs = mesh.face_inner(v, mesh.gradient(w, g), g)
        assert abs(lhs + rhs) <= 1e-12 * max(1.0, abs(rhs))


def test_divergence_face_shape_mismatch():
    g = grid(5)
    with pytest.raises(GridMismatchError):
        mesh.divergence(np.zeros((5, 5)), np.zeros((4, 5)), g)


def test_laplacian_of_constant_is_zero():
    g = grid(9)
    assert np.max(np.abs(mesh.laplacian(np.full(g.shape, 3.0), g))) == 0.0


def test_laplacian_spike_stencil():
    g = grid(9)
    f = np.zeros(g.shape)
    f[4, 4] = 1.0
    lap = mesh.laplacian(f, g) * g.hx ** 2
    expected = np.zeros(g.shape)
    expected[4, 4] = -4.0
    expected[3, 4] = expected[5, 4] = expected[4, 3] = expected[4, 5] = 1.0
    np.testing.assert_allclose(lap, expected, atol=1e-12)


def test_laplacian_matches_mirror_ghost_stencil():
    g = mesh.Grid(7, 5, Lx=1.0, Ly=0.6)
    f = np.random.default_rng(3).normal(size=g.shape)
    np.testing.assert_allclose(mesh.laplacian(f, g), oracles.laplacian_dense(f, g.hx, g.hy),
                               rtol=1e-12, atol=1e-9)


def test_laplacian_cosine_mode_second_order():
    errs = []
    for n in (17, 33, 65):
        g = grid(n)
        X, Y = g.xy
        f = np.cos(np.pi * X) * np.cos(np.pi * Y)
        errs.append(np.max(np.abs(mesh.laplacian(f, g) + 2 * np.pi ** 2 * f)))
    assert 3.5 <= errs[0] / errs[1] <= 4.5
    assert 3.5 <= errs[1] / errs[2] <= 4.5


def test_divergence_of_gradient_cos_x():
    errs = []
    for n in (17, 33):
        g = grid(n)
        X, _ = g.xy
        f = np.cos(np.pi * X)
        errs.append(np.max(np.abs(mesh.laplacian(f, g) + np.pi ** 2 * f)))
    assert errs[0] < 0.05 and 3.5 <= errs[0] / errs[1] <= 4.5


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (2, 6, 7), elements=st.floats(-1e3, 1e3)),
       st.floats(-10, 10), st.floats(-10, 10))
def test_operators_are_linear(fg, a, b):
    g = mesh.Grid(7, 6)
    f, w = fg
    lhs = mesh.laplacian(a * f + b * w, g)
    rhs = a * mesh.laplacian(f, g) + b * mesh.laplacian(w, g)
    scale = 1e-12 * (abs(a) * np.abs(f).max() + abs(b) * np.abs(w).max() + 1) / g.h ** 2
    assert np.max(np.abs(lhs - rhs)) <= scale


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (2, 5, 8), elements=st.floats(-1e2, 1e2)))
def test_summation_by_parts(fw):
    g = mesh.Grid(8, 5, Lx=0.9, Ly=1.7)
    f, w = fw
    lhs = mesh.inner(mesh.laplacian(f, g), w, g)
    rhs = mesh.face_inner(mesh.gradient(f, g), mesh.gradient(w, g), g)
    # max-abs scale (squared L2 norms underflow for tiny entries); carries 1/h^2
    scale = np.abs(f).max() * np.abs(w).max() * g.area / g.h ** 2
    assert abs(lhs + rhs) <= 1e-12 * scale + 1e-300


# --- helmholtz ------------------------------------------------------------------

def test_helmholtz_constant():
    g = grid(9)
    x = mesh.helmholtz_solve(np.full(g.shape, 2.5), 0.3, g)
    np.testing.assert_allclose(x, 2.5, rtol=1e-13)


def test_helmholtz_discrete_mode_exact():
    g = grid(17)
    X, Y = g.xy
    mode = np.cos(np.pi * X) * np.cos(np.pi * Y)
    lam = 2 * (2 - 2 * np.cos(np.pi * g.hx)) / g.hx ** 2  # discrete eigenvalue of -lap
    tau = 0.05
    x = mesh.helmholtz_solve((1 + tau * lam) * mode, tau, g)
    np.testing.assert_allclose(x, mode, atol=1e-13)
    # the continuous eigenvalue gives the mode up to O(h^2)
    x2 = mesh.helmholtz_solve((1 + 2 * np.pi ** 2 * tau) * mode, tau, g)
    assert np.max(np.abs(x2 - mode)) < 5e-3


def test_helmholtz_random_residual_and_dense_oracle():
    g = mesh.Grid(9, 6, Lx=1.0, Ly=0.5)
    b = np.random.default_rng(2).normal(size=g.shape)
    x = mesh.helmholtz_solve(b, 0.01, g)
    r = x - 0.01 * mesh.laplacian(x, g) - b
    assert np.sqrt(mesh.inner(r, r, g)) <= 1e-10 * np.sqrt(mesh.inner(b, b, g))
    np.testing.assert_allclose(x, oracles.helmholtz_dense(b, 0.01, g.hx, g.hy), atol=1e-12)


def test_helmholtz_vectorised_over_leading_axes():
    g = grid(9)
    b = np.random.default_rng(4).normal(size=(2, 3) + g.shape)
    x = mesh.helmholtz_solve(b, 0.1, g)
    np.testing.assert_allclose(x[1, 2], mesh.helmholtz_solve(b[1, 2], 0.1, g), atol=1e-14)


def test_helmholtz_rejects_bad_tau():
    with pytest.raises(ValueError):
        mesh.helmholtz_solve(np.zeros((5, 5)), 0.0, grid(5))


# --- averaging ------------------------------------------------------------------

def test_node_average_preserves_face_integral():
    g = mesh.Grid(9, 7, Lx=1.0, Ly=2.0)
    rng = np.random.default_rng(5)
    px, py = rng.random((7, 8)), rng.random((6, 9))
    fx, fy = g.face_weights
    node = mesh.node_average(px, py, g)
    assert np.sum(g.weights * node) == pytest.approx(np.sum(fx * px) + np.sum(fy * py),
                                                     rel=1e-13)


def test_grad_sq_of_linear_field():
    g = mesh.Grid(5, 5)
    X, Y = g.xy
    np.testing.assert_allclose(mesh.grad_sq(2 * X + 3 * Y, g, vector=False), 13.0, rtol=1e-13)


# --- norms ----------------------------------------------------------------------

def test_norms_constants_on_unit_square():
    g = grid(9, nt=4)
    assert mesh.norms(np.ones(g.shape), g, "L2") == pytest.approx(1.0, rel=1e-14)
    assert mesh.norms(np.full(g.shape, 2.0), g, "L4") == pytest.approx(2.0, rel=1e-14)
    assert mesh.norms(np.full(g.shape, 2.0), g, "Linf") == 2.0
    assert mesh.norms(np.full(g.shape, 3.0), g, "H2proxy") == pytest.approx(3.0)
    traj = np.ones((g.nt + 1,) + g.shape)
    assert mesh.norms(traj, g, "L2L2") == pytest.approx(np.sqrt(g.T), rel=1e-14)


def test_norm_of_cosine_exact_and_quadratic_converges():
    # trapezoid weights integrate cos^2 exactly on a node grid
    g = grid(17)
    X, _ = g.xy
    assert mesh.norms(np.cos(np.pi * X), g, "L2") == pytest.approx(np.sqrt(0.5), rel=1e-14)
    errs = []
    for n in (17, 33):
        g = grid(n)
        X, _ = g.xy
        errs.append(abs(mesh.norms(X ** 2, g, "L2") - np.sqrt(0.2)))
    assert errs[0] < 1e-2 and 3.5 <= errs[0] / errs[1] <= 4.5


def test_vector_norms_use_pointwise_length():
    g = grid(5, nt=2)
    f = np.zeros((3,) + g.shape)
    f[0], f[1] = 3.0, 4.0
    assert mesh.norms(f, g, "L6") == pytest.approx(5.0)
    traj = np.broadcast_to(f, (3,) + f.shape)
    assert mesh.norms(traj, g, "L4L4") == pytest.approx(5.0 * g.T ** 0.25)
    assert mesh.norms(traj, g, "LinfL2") == pytest.approx(5.0)


def test_h1_norm_of_linear():
    g = mesh.Grid(9, 9)
    X, _ = g.xy
    # |x|^2_L2 = 1/3 up to quadrature error, |grad|^2 = 1
    assert mesh.norms(X, g, "H1") == pytest.approx(np.sqrt(1 / 3 + 1), rel=2e-3)


def test_grad_norm_space_time():
    g = mesh.Grid(9, 9, dt=0.5, nt=2)
    X, _ = g.xy
    f = np.broadcast_to(np.stack([X, 0 * X, 0 * X]), (3, 3, 9, 9))
    assert mesh.grad_norm(f, g, p=4) == pytest.approx(1.0, rel=1e-13)
    assert mesh.grad_norm(f[0], g, p=6) == pytest.approx(1.0, rel=1e-13)


def test_norms_errors():
    g = grid(5, nt=4)
    with pytest.raises(ValueError):
        mesh.norms(np.ones(g.shape), g, "L3")
    with pytest.raises(GridMismatchError):
        mesh.norms(np.ones((3,) + g.shape), g, "L2L2")
    with pytest.raises(GridMismatchError):
        mesh.norms(np.ones((4, 4)), g, "L2")
