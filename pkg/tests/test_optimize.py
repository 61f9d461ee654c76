import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from llgcontrol import algebra, mesh
from llgcontrol.optimize import (Control, ControlProblem, CostBreakdown, OptimalityReport,
                                 cost, critical_cone_project, fooc_residual,
                                 global_condition_report, optimality_report, optimize,
                                 project_box, random_direction, reduced_gradient,
                                 second_order_form, second_order_report)
from llgcontrol.sensitivity import TargetData
from llgcontrol.state import StateProblem, solve_state

import oracles

E1, E2, E3 = np.eye(3)

# first verified run of the global-condition product on the desk problem below
GLOBAL_PRODUCT_FROZEN = 3.1029762109799153


def ctraj(v, g):
    return algebra.constant_trajectory(algebra.constant_field(v, g), g)


def perfect(g):
    m = ctraj(E3, g)
    return m, TargetData(m, m[-1])


@pytest.fixture(scope="module")
def desk():
    g = mesh.Grid.from_horizon(9, 9, 0.05, 1e-3)
    X, Y = g.xy
    m0 = oracles.smooth_unit_field(X, Y, amp=0.6)
    u = algebra.constant_trajectory(np.stack([np.cos(np.pi * X), 0.5 + 0 * X, 0 * X]), g)
    m_d = solve_state(StateProblem(g, m0, 0.5 * u))
    t = TargetData(m_d, algebra.renormalize(algebra.constant_field([-1, 1, 0], g)))
    p = ControlProblem(g, m0, t)
    m = p.state(u)
    return dict(g=g, u=u, p=p, m=m, phi=p.adjoint(u, m))


# --- cost -----------------------------------------------------------------------------

def test_cost_zero_for_perfect_tracking():
    g = mesh.Grid(5, 5, dt=0.1, nt=10)
    m, t = perfect(g)
    assert cost(m, 0 * m, t, g).total == 0.0


def test_cost_constant_control():
    g = mesh.Grid(5, 5, dt=0.1, nt=10)
    m, t = perfect(g)
    c = cost(m, ctraj([1.7, 0, 0], g), t, g)
    assert c.j_ctrl_l2 == pytest.approx(1.7 ** 2 / 2, rel=1e-13)
    assert c.j_ctrl_grad == 0.0 and c.j_track_grad == 0.0 and c.j_terminal == 0.0


def test_cost_sine_control_converges():
    errs = []
    for n in (17, 33):
        g = mesh.Grid(n, n, dt=0.1, nt=10)
        m, t = perfect(g)
        X, _ = g.xy
        u = algebra.constant_trajectory(np.stack([np.sin(np.pi * X), 0 * X, 0 * X]), g)
        c = cost(m, u, t, g)
        assert c.j_ctrl_l2 == pytest.approx(0.25, rel=1e-12)  # trapezoid is exact here
        errs.append(abs(c.j_ctrl_grad - np.pi ** 2 / 4))
    assert errs[0] < 0.02 and 3.5 <= errs[0] / errs[1] <= 4.5


def test_cost_total_is_sum_of_parts(desk):
    c = desk["p"].cost(desk["u"], desk["m"])
    parts = c.j_track_grad + c.j_terminal + c.j_ctrl_l2 + c.j_ctrl_grad
    assert min(c.j_track_grad, c.j_terminal, c.j_ctrl_l2, c.j_ctrl_grad) > 0
    assert abs(c.total - parts) <= 1e-12 * c.total


# --- gradient ---------------------------------------------------------------------------

def test_reduced_gradient_examples():
    g = mesh.Grid(5, 5, dt=0.1, nt=3)
    m = ctraj(E3, g)
    g_l2, g_h1 = reduced_gradient(0 * m, m, 0 * m, g)
    assert not g_l2.any() and not g_h1.any()
    c = ctraj([0.3, -2.0, 1.0], g)
    g_l2, g_h1 = reduced_gradient(c, m, 0 * m, g)
    np.testing.assert_allclose(g_l2, c, atol=1e-15)
    np.testing.assert_allclose(g_h1, c, atol=1e-14)


def test_directional_derivative_exact_for_aligned_problem():
    # m0 = m_d = m_omega = e3 and u parallel to e3: the costate vanishes and the
    # derivative is <u, h> + <grad u, grad h>, so the difference quotient must agree
    g = mesh.Grid.from_horizon(9, 9, 0.05, 1e-3)
    m, t = perfect(g)
    p = ControlProblem(g, m[0], t)
    u = ctraj(0.7 * E3, g)
    h = random_direction(g, np.random.default_rng(3)) + ctraj([0.2, -0.1, 0.3], g)
    dd = p.directional_derivative(u, h)
    eps = 1e-4
    fd = (p.reduced_cost(u + eps * h) - p.reduced_cost(u - eps * h)) / (2 * eps)
    assert abs(dd - fd) <= 1e-8 * abs(fd)


# --- box projection / fooc -----------------------------------------------------------

def test_project_box_examples():
    u = np.zeros((2, 3, 2, 2))
    assert project_box(u + 0.5, -1, 1).tobytes() == (u + 0.5).tobytes()
    u[1, 2, 0, 1] = 2.5
    out = project_box(u, -1, 1)
    assert out[1, 2, 0, 1] == 1.0
    assert project_box(out, -1, 1).tobytes() == out.tobytes()
    with pytest.raises(ValueError):
        project_box(u, 1, -1)


def test_project_box_spatially_varying_bounds():
    u = np.full((2, 3, 2, 2), 5.0)
    b = np.arange(8.0).reshape(2, 2, 2)
    out = project_box(u, -np.inf, b)
    np.testing.assert_array_equal(out[:, 1], np.minimum(5.0, b))


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, (2, 2, 3, 2, 2), elements=st.floats(-5, 5)))
def test_project_box_nonexpansive_idempotent(uv):
    u, v = uv
    pu, pv = project_box(u, -1.0, 0.5), project_box(v, -1.0, 0.5)
    assert np.linalg.norm(pu - pv) <= np.linalg.norm(u - v) + 1e-15
    assert project_box(pu, -1.0, 0.5).tobytes() == pu.tobytes()


def test_fooc_examples():
    g = mesh.Grid(4, 4, dt=0.5, nt=2)
    u = ctraj([0.1, 0.2, 0.3], g)
    assert fooc_residual(u, 0 * u, g) == 0.0
    gl2 = ctraj([1.0, -2.0, 0.5], g)
    want = np.sqrt(mesh.time_inner(gl2, gl2, g))
    assert fooc_residual(u, gl2, g) == pytest.approx(want, rel=1e-14)
    assert fooc_residual(u, gl2, g, a=-1e12, b=1e12) == pytest.approx(want, rel=1e-12)
    # pinned at the upper bound with the descent direction pushing further up
    one = mesh.Grid(3, 3, dt=1.0, nt=1)
    u1 = ctraj([1.0, 1.0, 1.0], one)
    assert fooc_residual(Control(u1, -1.0, 1.0), ctraj([-3.0, -0.5, -2.0], one), one) == 0.0
    with pytest.raises(ValueError):
        fooc_residual(u, gl2, g, s=0.0)


def test_critical_cone_projection():
    u = np.zeros((1, 3, 2, 2))
    h = np.full_like(u, -0.3)
    assert critical_cone_project(h, Control(u, -1.0, 1.0)).tobytes() == h.tobytes()
    u[0, 0, 1, 1] = -1.0
    u[0, 2, 0, 0] = 1.0
    h[0, 2, 0, 0] = 0.4
    out = critical_cone_project(h, Control(u, -1.0, 1.0))
    assert out[0, 0, 1, 1] == 0.0 and out[0, 2, 0, 0] == 0.0 and out[0, 1, 0, 0] == -0.3
    assert critical_cone_project(out, Control(u, -1.0, 1.0)).tobytes() == out.tobytes()


# --- second order -----------------------------------------------------------------------

def test_second_order_zero_direction(desk):
    assert second_order_form(desk["p"], desk["u"], 0 * desk["u"], desk["m"], desk["phi"]) == 0


def test_second_order_perfect_tracking_is_h1_norm():
    # h parallel to m = e3 produces no state response, so phi = phi' = 0
    g = mesh.Grid.from_horizon(9, 9, 0.02, 1e-3)
    m, t = perfect(g)
    p = ControlProblem(g, m[0], t)
    h = random_direction(g, np.random.default_rng(1))
    h[:, :2] = 0.0
    val = second_order_form(p, 0 * m, h)
    hx, hy = mesh.gradient(h, g)
    want = mesh.time_inner(h, h, g) + float(np.dot(g.time_weights, [
        mesh.face_inner((a, b), (a, b), g) for a, b in zip(hx, hy)]))
    assert val > 0
    assert val == pytest.approx(want, rel=1e-12)


def test_second_order_is_quadratic(desk):
    h = random_direction(desk["g"], np.random.default_rng(2))
    a = second_order_form(desk["p"], desk["u"], h, desk["m"], desk["phi"])
    b = second_order_form(desk["p"], desk["u"], 3 * h, desk["m"], desk["phi"])
    assert abs(b - 9 * a) <= 1e-10 * abs(b)


def test_second_order_report_structure(desk):
    rows = second_order_report(desk["p"], desk["u"], n_random=2, delta=0.0)
    assert [r["id"] for r in rows] == [0, 1]
    assert all(set(r) == {"id", "value", "delta_bound", "holds"} for r in rows)


# --- global condition / reports ---------------------------------------------------------

def test_global_condition_examples(desk):
    g, u, m, phi = desk["g"], desk["u"], desk["m"], desk["phi"]
    r0 = global_condition_report(u, m, 0 * phi, g, user_C=1e9)
    assert r0["global_product"] == 0 and r0["holds"]
    r1 = global_condition_report(u, m, phi, g)
    r2 = global_condition_report(u, m, 2 * phi, g)
    assert r2["global_product"] == pytest.approx(2 * r1["global_product"], rel=1e-15)
    assert r1["global_product"] == pytest.approx(GLOBAL_PRODUCT_FROZEN, rel=1e-9)


def test_report_json_roundtrip(desk):
    rep = optimality_report(desk["p"], desk["u"], desk["m"], desk["phi"])
    text = rep.to_json()
    d = json.loads(text)
    for key in ("fooc_residual", "grad_norm_l2", "grad_norm_h1", "global_product",
                "in_box", "cost_leq_R_half"):
        assert key in d
    assert set(d["cost"]) == {"j_track_grad", "j_terminal", "j_ctrl_l2", "j_ctrl_grad", "total"}
    back = OptimalityReport.from_json(text)
    assert back.to_dict() == rep.to_dict()
    assert isinstance(back.cost, CostBreakdown)
    with pytest.raises(ValueError):
        OptimalityReport.from_dict({"fooc_residual": 0.0})


# --- optimizer ------------------------------------------------------------------------

def test_optimize_at_stationary_point_returns_immediately():
    g = mesh.Grid.from_horizon(5, 5, 0.05, 5e-3)
    m, t = perfect(g)
    res = optimize(ControlProblem(g, m[0], t), 0 * m, tol=1e-10)
    assert res.converged and len(res.history) == 1 and res.history[0]["iter"] == 0


def test_optimize_descends_and_respects_box():
    g = mesh.Grid.from_horizon(3, 3, 2.0, 0.02)
    u_true = ctraj([0, 0, 0.5], g)
    m_d = solve_state(StateProblem(g, algebra.constant_field(E1, g), u_true))
    p = ControlProblem(g, algebra.constant_field(E1, g), TargetData(m_d, m_d[-1]),
                       a=-0.3, b=0.3, R=10.0)
    res = optimize(p, ctraj([0.2, 0.2, 0.0], g), max_iters=8)
    costs = [h["cost"] for h in res.history]
    assert all(b <= a for a, b in zip(costs, costs[1:]))
    assert costs[-1] < costs[0]
    assert res.control.in_box() and res.report.in_box


def test_optimize_rejects_bad_options(desk):
    with pytest.raises(ValueError):
        optimize(desk["p"], desk["u"], direction="newton")
