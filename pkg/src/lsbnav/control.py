"""Per-step safe control around a discrete unicycle model.

Each control step solves a small NLP in the decision vector
z = (u1, u2, omega_1, ..., omega_m):

    minimise   q(x_t, u) + p(x_{t+1}) - lambda * dhat(x_{t+1})
    subject to relaxed barrier chain values >= 0  (m constraints)
               x_{t+1} inside the state box       (8 constraints)
               u inside the input box, omega inside the slack box
               (both handled by projection)

The next state is substituted directly (single shooting), so the only
decision variables are the two inputs and the m slacks.  The barrier chain
is evaluated on the window [x_t, x_{t+1}, drift rollouts of x_{t+1}] with
the safety ball frozen at x_t.  ``dhat`` is the metric clearance prediction;
rewarding it pushes the plan toward locally safer states.

The solver is a PHR augmented Lagrangian outer loop with a projected BFGS
inner descent; multiplier estimates double as the KKT certificate.  When no
iterate satisfies the tolerance the best evaluated feasible point is
returned (status ``max_iter``), and when nothing feasible was seen the
safest evaluated point, the one maximising the minimum chain residual
(status ``infeasible_fallback``).
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .cbf import BarrierContext, CbfConfig, relaxed_chain_with_grads
from .geometry import Configuration, RobotShape, extreme_point, wrap_angle
from .net import MlpModel, predict_metric, predict_metric_with_gradient
from .dataset import NormStats


class NonFiniteEvaluationError(Exception):
    """Cost or constraint evaluation produced a non-finite value."""


@dataclass(frozen=True)
class State:
    """Unicycle state: position, heading, forward speed."""

    x: float
    y: float
    theta: float
    v: float

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.theta, self.v])

    @property
    def cfg(self) -> Configuration:
        return Configuration(self.x, self.y, self.theta)


@dataclass(frozen=True)
class Control:
    """Inputs: turn rate u1 (rad/s) and forward acceleration u2 (m/s^2)."""

    u1: float
    u2: float


@dataclass(frozen=True)
class Bounds:
    """Box bounds on the state and the inputs."""

    state_lo: tuple[float, float, float, float] = (-5.0, -5.0, -5.0, -5.0)
    state_hi: tuple[float, float, float, float] = (5.0, 5.0, 5.0, 5.0)
    input_lo: tuple[float, float] = (-10.0, -10.0)
    input_hi: tuple[float, float] = (10.0, 10.0)


@dataclass
class CostWeights:
    """Diagonal weights and references for the per-step objective."""

    q: np.ndarray
    r: np.ndarray
    s: np.ndarray
    p: np.ndarray
    lam: float
    x_ref: State
    u_ref: np.ndarray
    omega_ref: np.ndarray


def experiment_weights(x_ref: State, order: int = 2) -> CostWeights:
    """Weights used by the navigation experiments: Q = P = 100 I, R = I,
    S = 100 I, lambda = 1000, input reference zero, slack reference one."""
    return CostWeights(q=100.0 * np.ones(4), r=np.ones(2),
                       s=100.0 * np.ones(order), p=100.0 * np.ones(4),
                       lam=1000.0, x_ref=x_ref, u_ref=np.zeros(2),
                       omega_ref=np.ones(order))


@dataclass
class ControllerConfig:
    """Everything the closed loop needs besides the per-step target."""

    dt: float = 0.05
    cbf: CbfConfig = field(default_factory=CbfConfig)
    bounds: Bounds = field(default_factory=Bounds)
    opts: "SolverOptions" = None
    q: np.ndarray = field(default_factory=lambda: 100.0 * np.ones(4))
    r: np.ndarray = field(default_factory=lambda: np.ones(2))
    s: np.ndarray = None
    p: np.ndarray = field(default_factory=lambda: 100.0 * np.ones(4))
    lam: float = 1000.0
    u_ref: np.ndarray = field(default_factory=lambda: np.zeros(2))
    omega_ref: np.ndarray = None
    # shrink the safety-ball radius by this much before it reaches the
    # barrier; buys robustness against clearance prediction error
    margin: float = 0.0

    def __post_init__(self):
        if self.opts is None:
            self.opts = SolverOptions()
        m = self.cbf.order
        if self.s is None:
            self.s = 100.0 * np.ones(m)
        if self.omega_ref is None:
            self.omega_ref = np.ones(m)

    def weights_for(self, x_ref: State) -> CostWeights:
        return CostWeights(q=self.q, r=self.r, s=self.s, p=self.p,
                           lam=self.lam, x_ref=x_ref, u_ref=self.u_ref,
                           omega_ref=self.omega_ref)


@dataclass(frozen=True)
class SolverOptions:
    kkt_tol: float = 1e-6
    max_outer: int = 25
    max_inner: int = 40
    ls_max: int = 30
    rho0: float = 100.0
    rho_growth: float = 10.0
    rho_max: float = 1e8
    viol_decay: float = 0.5    # required per-outer shrink of max(feas, compl)
    inner_tol0: float = 1e-2
    max_evals: int = 4000      # hard budget; exceeding it ends the solve
    smooth_eps: float = 1e-12


@dataclass
class StepSolution:
    """Outcome of one control step."""

    control: Control
    omegas: np.ndarray
    next_state: State
    cost: float
    cons: np.ndarray
    kkt_residual: float
    status: str            # optimal | max_iter | infeasible_fallback
    solve_ms: float
    d_pred: float
    z: np.ndarray
    n_evals: int
    multipliers: np.ndarray | None = None
    rho_final: float = 0.0


# ---------------------------------------------------------------------------
# dynamics

def step_dynamics(s: State, u: Control, dt: float) -> State:
    """One explicit-Euler unicycle step; heading wrapped to (-pi, pi]."""
    return State(s.x + s.v * math.cos(s.theta) * dt,
                 s.y + s.v * math.sin(s.theta) * dt,
                 wrap_angle(s.theta + u.u1 * dt),
                 s.v + u.u2 * dt)


def drift(s: State, dt: float) -> State:
    """Zero-input step (coasting at the current speed and heading)."""
    return step_dynamics(s, Control(0.0, 0.0), dt)


def _drift_jacobian(s: State, dt: float) -> np.ndarray:
    """d(drift(s)) / ds for the unicycle."""
    c, si = math.cos(s.theta), math.sin(s.theta)
    return np.array([
        [1.0, 0.0, -s.v * si * dt, c * dt],
        [0.0, 1.0, s.v * c * dt, si * dt],
        [0.0, 0.0, 1.0, 0.0],
        [0.0, 0.0, 0.0, 1.0],
    ])


# ---------------------------------------------------------------------------
# problem assembly

@dataclass
class NlpProblem:
    """Smooth inequality-constrained problem min f(z) s.t. g(z) >= 0, z in box.

    ``evaluate(z, need_grad)`` returns (f, g, df, J) with df/J None when
    need_grad is False.  ``n_chain`` marks how many leading entries of g are
    barrier-chain residuals (used by the infeasibility fallback).
    """

    z0: np.ndarray
    z_lo: np.ndarray
    z_hi: np.ndarray
    evaluate: callable
    n_chain: int
    predict_next: callable | None = None
    curvature: np.ndarray | None = None   # diag cost-Hessian estimate, >0
    cost_offset: float = 0.0              # z-independent part, added on report


def assemble_nlp(s: State, ctx: BarrierContext, shape: RobotShape,
                 model: MlpModel, stats: NormStats, weights: CostWeights,
                 bounds: Bounds, cbf_cfg: CbfConfig, dt: float,
                 smooth_eps: float = 1e-12) -> NlpProblem:
    """Build the per-step problem around the current state and safety ball."""
    m = cbf_cfg.order
    gammas = cbf_cfg.gammas
    slo = np.asarray(bounds.state_lo)
    shi = np.asarray(bounds.state_hi)
    xr = weights.x_ref.as_array()
    c0, s0 = math.cos(s.theta), math.sin(s.theta)
    # constant part: state tracking term at the current state
    e0 = s.as_array() - xr
    e0[2] = wrap_angle(e0[2])
    q_term = float(e0 @ (weights.q * e0))
    B = np.array([[0.0, 0.0], [0.0, 0.0], [dt, 0.0], [0.0, dt]])

    cx, sx = math.cos(s.theta), math.sin(s.theta)
    ox, oy = shape.extreme_offset

    def _psi0_and_grad(st: State):
        """Smoothed psi0 at a state and its gradient w.r.t. (x, y, theta, v)."""
        cc, ss = math.cos(st.theta), math.sin(st.theta)
        rx = cc * ox - ss * oy + st.x
        ry = ss * ox + cc * oy + st.y
        ddx = rx - ctx.center[0]
        ddy = ry - ctx.center[1]
        norm = math.sqrt(smooth_eps + ddx * ddx + ddy * ddy)
        val = ctx.d_pred - norm
        if norm == 0.0:
            return val, np.zeros(4)
        drx = -ss * ox - cc * oy
        dry = cc * ox - ss * oy
        return val, np.array([-ddx / norm, -ddy / norm,
                              -(ddx * drx + ddy * dry) / norm, 0.0])

    def evaluate(z: np.ndarray, need_grad: bool):
        u1, u2 = z[0], z[1]
        om = z[2:]
        s1_raw_theta = s.theta + u1 * dt
        s1 = State(s.x + s.v * c0 * dt, s.y + s.v * s0 * dt,
                   s1_raw_theta, s.v + u2 * dt)

        # barrier window: current state, next state, drift rollout
        window = [s]
        jacs = [None]          # d state / d u, (4, 2)
        window.append(s1)
        jacs.append(B)
        for _ in range(m - 1):
            prev = window[-1]
            window.append(drift(prev, dt))
            jacs.append(_drift_jacobian(prev, dt) @ jacs[-1])

        vals = np.empty(m + 1)
        dval_du = np.zeros((m + 1, 2))
        for j, st in enumerate(window):
            val, gst = _psi0_and_grad(st)
            vals[j] = val
            if j > 0:
                dval_du[j] = gst @ jacs[j]
        chain, dch_dv, dch_dom = relaxed_chain_with_grads(vals, gammas, om)

        # predicted clearance at the next state (heading wrapped for the net)
        x1vec = np.array([s1.x, s1.y, wrap_angle(s1.theta)])
        if need_grad:
            d_next, d_grad = predict_metric_with_gradient(model, stats, x1vec)
        else:
            d_next = predict_metric(model, stats, x1vec)
            d_grad = None

        e1 = s1.as_array() - xr
        e1[2] = wrap_angle(e1[2])
        du = np.array([u1, u2]) - weights.u_ref
        dom_ref = om - weights.omega_ref
        # constant q_term lives in cost_offset so the solver's line search
        # is not asked to resolve tiny decrements against a large constant
        cost = float(du @ (weights.r * du)) \
            + float(dom_ref @ (weights.s * dom_ref)) \
            + float(e1 @ (weights.p * e1)) - weights.lam * d_next

        s1arr = s1.as_array()
        cons = np.concatenate([chain, s1arr - slo, shi - s1arr])
        if not (math.isfinite(cost) and np.isfinite(cons).all()):
            raise NonFiniteEvaluationError(
                f"non-finite NLP evaluation at z={z}")
        if not need_grad:
            return cost, cons, None, None

        nz = 2 + m
        # constraint Jacobian
        J = np.zeros((m + 8, nz))
        J[:m, :2] = dch_dv @ dval_du
        J[:m, 2:] = dch_dom
        J[m:m + 4, :2] = B
        J[m + 4:, :2] = -B
        # cost gradient
        dcost = np.zeros(nz)
        dcost[:2] = 2.0 * weights.r * du
        dcost[:2] += (2.0 * weights.p * e1) @ B
        dcost[:2] -= weights.lam * (d_grad @ B[:3])
        dcost[2:] = 2.0 * weights.s * dom_ref
        if not np.isfinite(dcost).all() or not np.isfinite(J).all():
            raise NonFiniteEvaluationError(
                f"non-finite NLP gradient at z={z}")
        return cost, cons, dcost, J

    def predict_next(z: np.ndarray) -> State:
        return step_dynamics(s, Control(float(z[0]), float(z[1])), dt)

    z0 = np.concatenate([np.zeros(2), np.asarray(weights.omega_ref, float)])
    z_lo = np.concatenate([bounds.input_lo,
                           np.full(m, cbf_cfg.slack_min)])
    z_hi = np.concatenate([bounds.input_hi,
                           np.full(m, cbf_cfg.slack_max)])
    z0 = np.clip(z0, z_lo, z_hi)
    # separable cost curvature (input penalty + tracking through B, slack
    # penalty); the omega block is ~100x stiffer than the input block, so the
    # solver uses this to precondition its quasi-Newton iteration
    curv = np.concatenate([
        2.0 * weights.r + 2.0 * np.array([weights.p[2], weights.p[3]]) * dt * dt,
        2.0 * weights.s])
    return NlpProblem(z0=z0, z_lo=z_lo, z_hi=z_hi, evaluate=evaluate,
                      n_chain=m, predict_next=predict_next,
                      curvature=np.maximum(curv, 1e-8), cost_offset=q_term)


# ---------------------------------------------------------------------------
# solver

def _project(z, lo, hi):
    return np.minimum(np.maximum(z, lo), hi)


class _EvalRecorder:
    """Wraps problem.evaluate; tracks the best feasible and safest iterates."""

    def __init__(self, problem: NlpProblem, feas_tol: float):
        self.problem = problem
        self.feas_tol = feas_tol
        self.n_evals = 0
        self.best_feasible = None   # (f, z, g)
        self.safest = None          # (min chain residual, f, z, g)

    def __call__(self, z, need_grad):
        out = self.problem.evaluate(z, need_grad)
        f, g = out[0], out[1]
        self.n_evals += 1
        if g.size == 0 or g.min() >= -self.feas_tol:
            if self.best_feasible is None or f < self.best_feasible[0]:
                self.best_feasible = (f, z.copy(), g.copy())
        if self.problem.n_chain:
            resid = g[:self.problem.n_chain].min()
        else:
            resid = g.min() if g.size else 0.0
        if self.safest is None or resid > self.safest[0]:
            self.safest = (resid, f, z.copy(), g.copy())
        return out


def _phi(rec, z, mu, rho, need_grad):
    """PHR augmented Lagrangian for inequalities g >= 0.

    The value is evaluated branchwise, -mu g + rho g^2 / 2 on the active
    branch and -mu^2 / (2 rho) on the inactive one, instead of the textbook
    (act^2 - mu^2) / (2 rho); the latter cancels two O(mu^2 / rho) numbers
    and loses the digits the line search needs near convergence.
    """
    f, g, df, J = rec(z, need_grad)
    act = mu - rho * g
    val = f
    if g.size:
        on = act > 0.0
        val += float(np.sum(-mu[on] * g[on] + 0.5 * rho * g[on] * g[on]))
        val -= float(np.sum(mu[~on] * mu[~on])) / (2.0 * rho)
    if not need_grad:
        return val, None
    return val, df - J.T @ np.maximum(0.0, act)


def _inner_minimize(rec, z, mu, rho, lo, hi, tol, opts: SolverOptions,
                    H0: np.ndarray | None = None):
    """Projected BFGS descent on the augmented Lagrangian within the box.

    ``H0`` seeds the inverse-Hessian estimate (a diagonal preconditioner
    built from the separable cost curvature); without it the first
    curvature pair sets a scalar scale.
    """
    nz = z.size
    if H0 is None:
        H0 = np.eye(nz)
        precond = False
    else:
        precond = True
    H = H0.copy()
    phi, gphi = _phi(rec, z, mu, rho, True)
    have_pair = precond
    for _ in range(opts.max_inner):
        if rec.n_evals > opts.max_evals:
            break
        pg = z - _project(z - gphi, lo, hi)
        if np.abs(pg).max() <= tol:
            break
        d = -H @ gphi
        if float(d @ gphi) > -1e-14:
            H = H0.copy()
            have_pair = precond
            d = -H @ gphi
        moved = False
        # roundoff floor: decrements below this are not measurable in phi
        noise = 16.0 * np.finfo(float).eps * (1.0 + abs(phi))
        for attempt in range(2):
            alpha = 1.0
            for _ in range(opts.ls_max):
                zn = _project(z + alpha * d, lo, hi)
                step = zn - z
                if np.abs(step).max() < 1e-15:
                    break
                phin, _ = _phi(rec, zn, mu, rho, False)
                slope = float(gphi @ step)
                if phin <= phi + 1e-4 * min(slope, 0.0) + noise:
                    moved = True
                    break
                alpha *= 0.5
            if moved or attempt == 1:
                break
            # quasi-Newton direction failed under projection: retry from the
            # preconditioned steepest-descent direction
            H = H0.copy()
            have_pair = precond
            d = -H @ gphi
        if not moved:
            break
        phin, gn = _phi(rec, zn, mu, rho, True)
        svec = zn - z
        yvec = gn - gphi
        sy = float(svec @ yvec)
        if sy > 1e-12 * np.linalg.norm(svec) * np.linalg.norm(yvec):
            if not have_pair:
                H = (sy / float(yvec @ yvec)) * np.eye(nz)
                have_pair = True
            rho_b = 1.0 / sy
            Hy = H @ yvec
            H = H - rho_b * (np.outer(svec, Hy) + np.outer(Hy, svec)) \
                + rho_b * (1.0 + rho_b * float(yvec @ Hy)) * np.outer(svec, svec)
        z, phi, gphi = zn, phin, gn
    return z


def solve(problem: NlpProblem, opts: SolverOptions = SolverOptions(),
          warm_start: np.ndarray | None = None,
          warm_multipliers: np.ndarray | None = None,
          warm_rho: float | None = None) -> StepSolution:
    """Solve a per-step problem; always returns a usable StepSolution.

    Statuses: ``optimal`` (KKT residual under tolerance), ``max_iter``
    (tolerance missed; best feasible iterate returned), or
    ``infeasible_fallback`` (nothing feasible was evaluated; the iterate
    with the largest minimum chain residual is returned).

    ``warm_multipliers`` and ``warm_rho`` seed the outer loop; consecutive
    control steps solve near-identical problems, so reusing the previous
    step's multipliers and penalty usually collapses the outer loop to one
    or two rounds.  The penalty matters: active-constraint multipliers
    scale with the clearance reward, and the outer loop converges at a
    rate proportional to their size over rho.
    """
    t0 = time.perf_counter()
    lo, hi = problem.z_lo, problem.z_hi
    z = _project(np.array(warm_start if warm_start is not None
                          else problem.z0, dtype=float), lo, hi)
    rec = _EvalRecorder(problem, opts.kkt_tol)
    f, g, df, J = rec(z, True)
    if warm_multipliers is not None and warm_multipliers.size == g.size:
        mu = np.maximum(0.0, np.asarray(warm_multipliers, float))
        # constraints clearly slack at the warm point get their multiplier
        # dropped; a stale positive multiplier there acts as a phantom force
        # the outer loop decays only at O(rho * g) per round
        mu[g > 1e-2] = 0.0
        inner_tol = 0.5 * opts.kkt_tol
    else:
        mu = np.zeros(g.size)
        inner_tol = opts.inner_tol0
    rho = opts.rho0
    if warm_rho is not None and warm_rho > 0.0:
        rho = min(max(warm_rho, opts.rho0), opts.rho_max)
    prev_viol = math.inf
    status = "max_iter"
    kkt = math.inf
    zs = z
    lam = mu
    H0 = (np.diag(1.0 / problem.curvature)
          if problem.curvature is not None else None)
    for _ in range(opts.max_outer):
        if rec.n_evals > opts.max_evals:
            break
        z = _inner_minimize(rec, z, mu, rho, lo, hi, inner_tol, opts, H0)
        f, g, df, J = rec(z, True)
        lam = np.maximum(0.0, mu - rho * g)
        grad_l = df - J.T @ lam
        stat = float(np.abs(z - _project(z - grad_l, lo, hi)).max())
        feas = float(np.maximum(0.0, -g).max()) if g.size else 0.0
        compl = float(np.abs(lam * g).max()) if g.size else 0.0
        kkt = max(stat, feas, compl)
        if kkt <= opts.kkt_tol:
            status = "optimal"
            zs = z
            break
        mu = lam
        # escalate the penalty when either infeasibility or complementarity
        # stops shrinking fast enough; complementarity stalls are how stale
        # multipliers on inactive constraints die off
        viol = max(feas, compl)
        if viol > opts.viol_decay * prev_viol and viol > opts.kkt_tol:
            rho = min(rho * opts.rho_growth, opts.rho_max)
        prev_viol = viol
        inner_tol = max(0.1 * inner_tol, 0.5 * opts.kkt_tol)
    solve_ms = (time.perf_counter() - t0) * 1e3

    if status != "optimal":
        if rec.best_feasible is not None:
            _, zs, _ = rec.best_feasible
        else:
            status = "infeasible_fallback"
            _, _, zs, _ = rec.safest
    f, g, _, _ = problem.evaluate(zs, False)
    f += problem.cost_offset
    nxt = problem.predict_next(zs) if problem.predict_next else None
    m = problem.n_chain
    return StepSolution(control=Control(float(zs[0]), float(zs[1])),
                        omegas=zs[2:].copy(), next_state=nxt, cost=float(f),
                        cons=g.copy(), kkt_residual=float(kkt), status=status,
                        solve_ms=solve_ms, d_pred=math.nan, z=zs.copy(),
                        n_evals=rec.n_evals, multipliers=lam.copy(),
                        rho_final=float(rho))


def _braking_fallback(s: State, problem: NlpProblem, weights: CostWeights,
                      bounds: Bounds, dt: float) -> StepSolution:
    """Stop as fast as the input box allows; no constraint is satisfiable."""
    u2 = float(np.clip(-s.v / dt, bounds.input_lo[1], bounds.input_hi[1]))
    z = problem.z0.copy()
    z[0] = 0.0
    z[1] = u2
    z[2:] = weights.omega_ref
    z = _project(z, problem.z_lo, problem.z_hi)
    f, g, _, _ = problem.evaluate(z, False)
    nxt = problem.predict_next(z) if problem.predict_next else None
    return StepSolution(control=Control(float(z[0]), float(z[1])),
                        omegas=z[2:].copy(), next_state=nxt,
                        cost=float(f) + problem.cost_offset, cons=g.copy(),
                        kkt_residual=math.inf, status="infeasible_fallback",
                        solve_ms=0.0, d_pred=math.nan, z=z.copy(),
                        n_evals=1, multipliers=None, rho_final=0.0)


def control_step(s: State, model: MlpModel, stats: NormStats,
                 shape: RobotShape, weights: CostWeights, bounds: Bounds,
                 cbf_cfg: CbfConfig, dt: float,
                 warm_start: np.ndarray | None = None,
                 warm_multipliers: np.ndarray | None = None,
                 warm_rho: float | None = None,
                 margin: float = 0.0,
                 opts: SolverOptions = SolverOptions()) -> StepSolution:
    """Build the safety ball at ``s``, assemble and solve the step problem.

    ``margin`` is subtracted from the predicted clearance before it becomes
    the ball radius; the reported d_pred stays the raw prediction.
    """
    t0 = time.perf_counter()
    d_pred = predict_metric(model, stats,
                            np.array([s.x, s.y, s.theta]))
    rc = extreme_point(shape, s.cfg)
    ctx = BarrierContext(d_pred=float(d_pred) - margin, center=(rc[0], rc[1]))
    problem = assemble_nlp(s, ctx, shape, model, stats, weights, bounds,
                           cbf_cfg, dt, smooth_eps=opts.smooth_eps)
    if ctx.d_pred <= 0.0:
        # the ball is centered at the current extreme point, so with a
        # non-positive radius the first-order constraint fails for every
        # control; brake instead of grinding through the eval budget
        sol = _braking_fallback(s, problem, weights, bounds, dt)
        sol.d_pred = float(d_pred)
        sol.solve_ms = (time.perf_counter() - t0) * 1e3
        return sol
    sol = solve(problem, opts, warm_start=warm_start,
                warm_multipliers=warm_multipliers, warm_rho=warm_rho)
    sol.d_pred = float(d_pred)
    sol.solve_ms = (time.perf_counter() - t0) * 1e3
    return sol
