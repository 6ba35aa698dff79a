import math

import numpy as np
import pytest

from lsbnav import cbf, control, maps
from lsbnav.dataset import NormStats
from lsbnav.net import MlpConfig, MlpModel

from fdcheck import central_diff, assert_grad_close


def tiny_model():
    return MlpModel.init(MlpConfig(width=8, n_blocks=2, skip_stride=1,
                                   skip_sources=(1,), seed=7))


# sigma_log kept small so the untrained head cannot overflow the exp
STATS = NormStats(mu_x=(0.0, 0.0, 0.0), sigma_x=(1.0, 1.0, 1.0),
                  mu_log=0.0, sigma_log=0.2, epsilon=0.5)


def far_context(d_pred=100.0):
    """Ball so large every chain constraint is slack."""
    return cbf.BarrierContext(d_pred=d_pred, center=(50.0, 50.0))


def build(s, ctx, weights, bounds=control.Bounds(),
          cbf_cfg=cbf.CbfConfig(), dt=0.05, model=None):
    return control.assemble_nlp(s, ctx, maps.rectangle_shape(),
                                model or tiny_model(), STATS, weights,
                                bounds, cbf_cfg, dt)


# ---------------------------------------------------------------------------
# dynamics

def test_step_dynamics_hand_cases():
    s = control.step_dynamics(control.State(0, 0, 0, 1),
                              control.Control(0, 0), 0.05)
    assert (s.x, s.y, s.theta, s.v) == pytest.approx((0.05, 0, 0, 1))

    s = control.step_dynamics(control.State(0, 0, math.pi / 2, 2),
                              control.Control(1, -2), 0.05)
    assert s.x == pytest.approx(0.0, abs=1e-15)
    assert s.y == pytest.approx(0.1)
    assert s.theta == pytest.approx(math.pi / 2 + 0.05)
    assert s.v == pytest.approx(1.9)


def test_step_dynamics_wraps_heading():
    s = control.step_dynamics(control.State(0, 0, 3.0, 0),
                              control.Control(4.0, 0), 0.05)
    assert s.theta == pytest.approx(3.2 - 2 * math.pi)
    assert -math.pi < s.theta <= math.pi


def test_drift_is_zero_input():
    s0 = control.State(1.0, 2.0, 0.3, 1.5)
    assert control.drift(s0, 0.1) == control.step_dynamics(
        s0, control.Control(0.0, 0.0), 0.1)


def test_drift_jacobian_matches_fd():
    s0 = control.State(0.4, -0.2, 0.9, 1.3)
    J = control._drift_jacobian(s0, 0.05)
    for i in range(4):
        def comp(v, i=i):
            st = control.drift(control.State(*v), 0.05)
            return st.as_array()[i]
        fd = central_diff(comp, s0.as_array())
        assert_grad_close(J[i], fd, label=f"drift row {i}")


# ---------------------------------------------------------------------------
# assembly

def test_problem_dimensions():
    w = control.experiment_weights(control.State(1, 1, 0, 0), order=3)
    cfg = cbf.CbfConfig(gammas=(0.1, 0.1, 0.1))
    p = build(control.State(0, 0, 0, 1), far_context(), w, cbf_cfg=cfg)
    assert p.z0.shape == (5,)
    assert np.array_equal(p.z0, [0, 0, 1, 1, 1])
    assert np.array_equal(p.z_lo, [-10, -10, 0, 0, 0])
    assert np.array_equal(p.z_hi, [10, 10, 1, 1, 1])
    assert p.n_chain == 3
    f, g, df, J = p.evaluate(p.z0, True)
    assert g.shape == (3 + 8,)
    assert df.shape == (5,)
    assert J.shape == (11, 5)
    f2, g2, df2, J2 = p.evaluate(p.z0, False)
    assert f2 == f and np.array_equal(g2, g) and df2 is None and J2 is None


def test_cost_offset_is_current_tracking_term():
    xr = control.State(1.0, 2.0, 0.5, 0.3)
    w = control.experiment_weights(xr)
    s = control.State(0.2, -0.1, 0.1, 1.0)
    p = build(s, far_context(), w)
    e0 = s.as_array() - xr.as_array()
    assert p.cost_offset == pytest.approx(100.0 * float(e0 @ e0), rel=1e-12)


def test_evaluate_matches_hand_assembly():
    from lsbnav.net import predict_metric
    xr = control.State(1.0, 1.0, 0.0, 0.5)
    w = control.experiment_weights(xr)
    s = control.State(0.1, 0.2, 0.3, 0.8)
    ctx = cbf.BarrierContext(d_pred=1.5, center=(0.5, 0.4))
    model = tiny_model()
    dt = 0.05
    p = build(s, ctx, w, model=model, dt=dt)
    z = np.array([0.7, -0.4, 0.9, 0.8])
    f, g, _, _ = p.evaluate(z, False)

    s1 = control.step_dynamics(s, control.Control(0.7, -0.4), dt)
    s2 = control.drift(s1, dt)
    shape = maps.rectangle_shape()
    vals = np.array([cbf.psi0(st.cfg, ctx, shape) for st in (s, s1, s2)])
    chain = cbf.relaxed_chain(vals, (0.1, 0.1), z[2:])
    assert np.allclose(g[:2], chain, atol=1e-9)

    s1a = s1.as_array()
    assert np.allclose(g[2:6], s1a - np.full(4, -5.0), atol=1e-12)
    assert np.allclose(g[6:], np.full(4, 5.0) - s1a, atol=1e-12)

    d_next = predict_metric(model, STATS, np.array([s1.x, s1.y, s1.theta]))
    e1 = s1a - xr.as_array()
    du = z[:2] - w.u_ref
    dom = z[2:] - w.omega_ref
    want = float(du @ (w.r * du)) + float(dom @ (w.s * dom)) \
        + float(e1 @ (w.p * e1)) - w.lam * d_next
    assert f == pytest.approx(want, rel=1e-12)


def test_nlp_gradients_match_fd():
    rng = np.random.default_rng(11)
    w = control.experiment_weights(control.State(1.5, 1.5, 0.2, 0.5))
    for trial in range(12):
        s = control.State(*rng.uniform([-1, -1, -2, 0.2], [1, 1, 2, 1.5]))
        ctx = cbf.BarrierContext(
            d_pred=float(rng.uniform(0.5, 2.0)),
            center=(s.x + rng.uniform(-0.5, 0.5),
                    s.y + rng.uniform(-0.5, 0.5)))
        p = build(s, ctx, w)
        z = rng.uniform(p.z_lo * 0.1, p.z_hi * 0.1)
        z[2:] = rng.uniform(0.1, 0.9, 2)
        f, g, df, J = p.evaluate(z, True)
        fd_f = central_diff(lambda v: p.evaluate(v, False)[0], z.copy())
        assert_grad_close(df, fd_f, label=f"cost trial {trial}")
        for k in range(g.size):
            fd_g = central_diff(lambda v, k=k: p.evaluate(v, False)[1][k],
                                z.copy())
            assert_grad_close(J[k], fd_g, label=f"cons {k} trial {trial}")


# ---------------------------------------------------------------------------
# solver on problems with known answers

def closed_form_inputs(s, xr, w, dt):
    # with lam = 0 and every constraint slack the problem separates:
    # min r1 u1^2 + p3 (theta0 + u1 dt - theta_r)^2 and likewise for u2
    u1 = w.p[2] * dt * (xr.theta - s.theta) / (w.r[0] + w.p[2] * dt * dt)
    u2 = w.p[3] * dt * (xr.v - s.v) / (w.r[1] + w.p[3] * dt * dt)
    return u1, u2


def test_solver_matches_separable_quadratic():
    xr = control.State(0.0, 0.0, 0.4, 1.2)
    s = control.State(0.0, 0.0, 0.0, 1.0)
    w = control.experiment_weights(xr)
    w.lam = 0.0
    p = build(s, far_context(), w)
    sol = control.solve(p)
    assert sol.status == "optimal"
    u1, u2 = closed_form_inputs(s, xr, w, 0.05)
    assert sol.control.u1 == pytest.approx(u1, abs=1e-6)
    assert sol.control.u2 == pytest.approx(u2, abs=1e-6)
    assert np.allclose(sol.omegas, [1.0, 1.0], atol=1e-6)
    assert sol.solve_ms > 0.0
    assert sol.n_evals >= 1


def test_solver_pins_active_input_bound():
    xr = control.State(0.0, 0.0, 0.0, 4.0)
    s = control.State(0.0, 0.0, 0.0, 1.0)
    w = control.experiment_weights(xr)
    w.lam = 0.0
    bounds = control.Bounds(input_hi=(10.0, 0.1))
    u1_free, u2_free = closed_form_inputs(s, xr, w, 0.05)
    assert u2_free > 0.1  # the bound must actually bind
    p = build(s, far_context(), w, bounds=bounds)
    sol = control.solve(p)
    assert sol.status == "optimal"
    assert sol.control.u2 == pytest.approx(0.1, abs=1e-9)


def test_reported_cost_includes_offset():
    xr = control.State(1.0, 1.0, 0.0, 0.5)
    s = control.State(0.2, 0.3, 0.1, 0.9)
    w = control.experiment_weights(xr)
    p = build(s, far_context(), w)
    sol = control.solve(p)
    f_raw, _, _, _ = p.evaluate(sol.z, False)
    assert sol.cost == pytest.approx(f_raw + p.cost_offset, rel=1e-12)


def test_optimal_solutions_satisfy_kkt_independently():
    rng = np.random.default_rng(23)
    n_checked = 0
    for _ in range(10):
        s = control.State(*rng.uniform([-1, -1, -2, 0.2], [1, 1, 2, 1.2]))
        xr = control.State(*rng.uniform([-2, -2, -2, 0.0], [2, 2, 2, 1.5]))
        ctx = cbf.BarrierContext(
            d_pred=float(rng.uniform(0.6, 1.5)),
            center=(s.x + rng.uniform(-0.3, 0.3),
                    s.y + rng.uniform(-0.3, 0.3)))
        w = control.experiment_weights(xr)
        p = build(s, ctx, w)
        sol = control.solve(p)
        if sol.status != "optimal":
            continue
        n_checked += 1
        f, g, df, J = p.evaluate(sol.z, True)
        lam = sol.multipliers
        assert lam.shape == g.shape
        assert (lam >= 0.0).all()
        grad_l = df - J.T @ lam
        stat = np.abs(sol.z - np.clip(sol.z - grad_l, p.z_lo, p.z_hi)).max()
        feas = max(0.0, float(-g.min()))
        compl = float(np.abs(lam * g).max())
        assert max(stat, feas, compl) <= 1.0e-6 + 1e-12
        assert max(stat, feas, compl) == pytest.approx(sol.kkt_residual,
                                                       abs=1e-9)
    assert n_checked >= 5  # the sampler must exercise the optimal path


def test_safety_handoff_one_step():
    # at an optimal solution with psi0(current) >= 0, the order-1 residual
    # keeps psi0(next) above -tol: the continuous claim's discrete skeleton
    rng = np.random.default_rng(31)
    shape = maps.rectangle_shape()
    checked = 0
    for _ in range(15):
        s = control.State(*rng.uniform([-1, -1, -2, 0.2], [1, 1, 2, 1.2]))
        ctx = cbf.BarrierContext(
            d_pred=float(rng.uniform(0.4, 1.0)),
            center=(s.x + rng.uniform(-0.2, 0.2),
                    s.y + rng.uniform(-0.2, 0.2)))
        if cbf.psi0(s.cfg, ctx, shape) < 0.0:
            continue
        w = control.experiment_weights(control.State(2.0, 2.0, 0.0, 0.8))
        p = build(s, ctx, w)
        sol = control.solve(p)
        if sol.status != "optimal":
            continue
        checked += 1
        assert sol.cons[:2].min() >= -1e-6
        assert cbf.psi0(sol.next_state.cfg, ctx, shape) >= -2e-6
    assert checked >= 5


def test_next_state_matches_dynamics():
    s = control.State(0.1, 0.2, 0.3, 0.9)
    w = control.experiment_weights(control.State(1, 1, 0, 0.5))
    sol = control.solve(build(s, far_context(), w))
    want = control.step_dynamics(s, sol.control, 0.05)
    assert sol.next_state == want


def test_warm_start_does_not_degrade():
    # contract: warm cost <= cold cost + 1e-9, with logged exceptions
    # tolerated (the problem is non-convex and both solves only promise a
    # 1e-6 KKT point; at an active chain constraint the cost gradient is
    # balanced by multipliers ~lam, so tolerance jitter can show up in the
    # cost at ~kkt_tol * |multipliers| scale)
    rng = np.random.default_rng(41)
    cold_evals = warm_evals = 0
    for trial in range(5):
        s = control.State(*rng.uniform([-0.5, -0.5, -1, 0.3], [0.5, 0.5, 1, 1]))
        ctx = cbf.BarrierContext(
            d_pred=float(rng.uniform(0.5, 1.0)),
            center=(s.x + 0.2, s.y - 0.1))
        w = control.experiment_weights(control.State(1.5, 1.5, 0, 0.8))
        p = build(s, ctx, w)
        cold = control.solve(p)
        warm = control.solve(p, warm_start=cold.z,
                             warm_multipliers=cold.multipliers,
                             warm_rho=cold.rho_final)
        delta = warm.cost - cold.cost
        if delta > 1e-9:
            print(f"warm-start exception trial {trial}: cost delta "
                  f"{delta:.3e} (cold {cold.cost:.6f}, statuses "
                  f"{cold.status}/{warm.status})")
            mult_scale = 1.0 + float(np.abs(cold.multipliers).sum())
            assert delta <= 1e-5 * mult_scale  # jitter, not divergence
        else:
            assert delta <= 1e-9
        cold_evals += cold.n_evals
        warm_evals += warm.n_evals
    # warming must pay for itself on aggregate
    assert warm_evals < cold_evals


def test_eval_budget_still_returns_solution():
    s = control.State(0.0, 0.0, 0.0, 1.0)
    w = control.experiment_weights(control.State(2, 2, 0, 1))
    p = build(s, far_context(), w)
    sol = control.solve(p, control.SolverOptions(max_evals=3))
    assert sol.status in ("max_iter", "infeasible_fallback")
    assert np.isfinite(sol.z).all()
    assert (sol.z >= p.z_lo - 1e-12).all() and (sol.z <= p.z_hi + 1e-12).all()
    assert sol.cons.shape == (10,)


# ---------------------------------------------------------------------------
# full control step

def test_control_step_reports_raw_prediction():
    from lsbnav.net import predict_metric
    s = control.State(0.3, 0.2, 0.4, 0.8)
    model = tiny_model()
    w = control.experiment_weights(control.State(1, 1, 0, 0.5))
    sol = control.control_step(s, model, STATS, maps.rectangle_shape(), w,
                               control.Bounds(), cbf.CbfConfig(), 0.05,
                               margin=0.2)
    want = predict_metric(model, STATS, np.array([s.x, s.y, s.theta]))
    assert sol.d_pred == pytest.approx(want, rel=1e-12)
    assert sol.solve_ms > 0.0


def test_braking_fallback_when_ball_collapses():
    # a margin larger than any prediction forces a non-positive radius:
    # no control satisfies the order-1 constraint, so the step must brake
    s = control.State(0.3, 0.2, 0.4, 1.0)
    w = control.experiment_weights(control.State(1, 1, 0, 0.5))
    sol = control.control_step(s, tiny_model(), STATS,
                               maps.rectangle_shape(), w, control.Bounds(),
                               cbf.CbfConfig(), 0.05, margin=1e9)
    assert sol.status == "infeasible_fallback"
    assert sol.n_evals == 1
    assert sol.control.u1 == 0.0
    assert sol.control.u2 == -10.0  # -v/dt = -20, clipped at the input box
    assert sol.next_state.v == pytest.approx(0.5)
    assert math.isinf(sol.kkt_residual)
    assert sol.multipliers is None
    assert math.isfinite(sol.d_pred)


# ---------------------------------------------------------------------------
# configuration plumbing

def test_experiment_weights_pinned_values():
    w = control.experiment_weights(control.State(0, 0, 0, 0))
    assert np.array_equal(w.q, 100.0 * np.ones(4))
    assert np.array_equal(w.p, 100.0 * np.ones(4))
    assert np.array_equal(w.r, np.ones(2))
    assert np.array_equal(w.s, 100.0 * np.ones(2))
    assert w.lam == 1000.0
    assert np.array_equal(w.u_ref, np.zeros(2))
    assert np.array_equal(w.omega_ref, np.ones(2))


def test_controller_config_sizes_follow_order():
    cfg = control.ControllerConfig(cbf=cbf.CbfConfig(gammas=(0.2, 0.2, 0.2)))
    assert cfg.s.shape == (3,)
    assert cfg.omega_ref.shape == (3,)
    w = cfg.weights_for(control.State(1, 0, 0, 0))
    assert w.x_ref == control.State(1, 0, 0, 0)
    assert w.lam == 1000.0
    assert cfg.margin == 0.0
