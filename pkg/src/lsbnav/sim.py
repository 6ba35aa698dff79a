"""Closed-loop navigation runs with continuous-motion auditing.

Each step: build the safety ball at the current state, solve the step NLP,
apply the control, then audit the executed motion by sweeping the body along
the interpolated path and checking ground-truth clearance.  The audit is a
verification layer only; the controller never sees it.

Scenario file grammar (``#`` comments, blank lines ignored)::

    map <builtin name or path>        # optional, CLI flag overrides
    shape <builtin name or path>      # optional, CLI flag overrides
    start <x> <y> <speed> [theta]     # theta defaults to aiming at waypoint 1
    waypoint <x> <y> <radius> <speed>
    max_steps <n>
    n_interp <n>
    stall_steps <n>
    stall_tol <d>
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .cbf import BarrierContext, CbfConfig, psi0, relaxed_chain
from .control import (Bounds, Control, ControllerConfig, SolverOptions, State,
                      StepSolution, control_step, drift,
                      NonFiniteEvaluationError, step_dynamics)
from .geometry import (Configuration, ObstacleSet, RobotShape, check_step_safe,
                       clearance, extreme_point, sweep_displacement)
from .net import MlpModel
from .dataset import NormStats


class ScenarioFormatError(Exception):
    """Scenario file does not follow the grammar."""


# speed-reference taper near the active waypoint (see run())
APPROACH_SPEED_FLOOR = 0.3
APPROACH_SPEED_GAIN = 1.5


@dataclass(frozen=True)
class Waypoint:
    x: float
    y: float
    radius: float
    speed: float


@dataclass
class ScenarioFile:
    """Parsed scenario file; map and shape still given by name/path."""

    map_spec: str | None
    shape_spec: str | None
    start: tuple[float, float, float]
    start_theta: float | None
    waypoints: list[Waypoint]
    max_steps: int = 1500
    n_interp: int = 20
    stall_steps: int = 200
    stall_tol: float = 1e-3


@dataclass
class Scenario:
    """Fully resolved scenario: geometry objects plus the route."""

    obstacles: ObstacleSet
    shape: RobotShape
    start: tuple[float, float, float]
    start_theta: float | None
    waypoints: list[Waypoint]
    max_steps: int = 1500
    n_interp: int = 20
    stall_steps: int = 200
    stall_tol: float = 1e-3


@dataclass
class StepRecord:
    step: int
    state: State
    control: Control
    omegas: np.ndarray
    d_pred: float
    d_true: float
    psi0_next: float
    status: str
    solve_ms: float
    sweep_ok: bool
    sweep_worst: float = math.nan
    sweep_disp: float = math.nan
    chain: np.ndarray | None = None
    kkt_residual: float = math.nan
    n_evals: int = 0


@dataclass
class TrajectoryLog:
    records: list[StepRecord]
    outcome: str               # reached | collided | stalled | step-limit
    final_state: State | None
    order: int                 # barrier order m (sets CSV slack columns)


@dataclass
class AuditReport:
    """Post-hoc summary of a run; all clearance numbers are ground truth."""

    outcome: str
    n_steps: int
    reached: bool
    min_clearance: float
    worst_psi0: float
    mean_solve_ms: float
    std_solve_ms: float
    max_solve_ms: float
    n_infeasible: int
    n_max_iter: int
    n_sweep_violations: int
    n_risk_steps: int
    max_pred_error: float


def maze_scenario(shape_name: str) -> ScenarioFile:
    """Serpentine-maze route from (0.5, 4.7) to (4.7, 0.5).

    Shared waypoints for every body; the final target speed is zero for the
    rectangle and 0.1 for the triangle and cross (matching the experiment
    configuration for each body).
    """
    final_speed = 0.0 if shape_name == "rectangle" else 0.1
    # the leg under the hanging wall runs at y ~ 0.65 so even the triangle
    # (extreme radius 0.4) clears the wall bottom (y = 1.2) in any pose;
    # the east-to-north corner is rounded by a via-point so no single turn
    # exceeds ~1.2 rad next to the second wall (a sharp turn there swings
    # the nose into the wall face and the barrier wedges the body in place);
    # the mid-maze corridor runs right of center (x ~ 2.5) because the
    # triangle body hangs entirely to its left while heading north, so the
    # clearance-reward lean-left equilibrium stays clear of the west wall
    wps = [
        Waypoint(0.65, 3.0, 0.1, 1.0),
        Waypoint(0.75, 0.7, 0.1, 1.0),
        Waypoint(2.05, 0.65, 0.1, 1.0),
        Waypoint(2.4, 1.2, 0.1, 1.0),
        Waypoint(2.5, 2.5, 0.1, 1.0),
        Waypoint(2.5, 4.3, 0.1, 1.0),
        Waypoint(4.05, 4.4, 0.1, 1.0),
        Waypoint(4.5, 3.0, 0.1, 1.0),
        Waypoint(4.7, 0.5, 0.1, final_speed),
    ]
    return ScenarioFile(map_spec="maze", shape_spec=shape_name,
                        start=(0.5, 4.7, 0.5), start_theta=None,
                        waypoints=wps)


_BUILTIN_SCENARIOS = {
    "maze-rectangle": lambda: maze_scenario("rectangle"),
    "maze-triangle": lambda: maze_scenario("triangle"),
    "maze-cross": lambda: maze_scenario("cross"),
}


def builtin_scenario(name: str) -> ScenarioFile:
    try:
        return _BUILTIN_SCENARIOS[name]()
    except KeyError:
        raise ScenarioFormatError(
            f"unknown scenario '{name}' "
            f"(have {sorted(_BUILTIN_SCENARIOS)})") from None


def loads_scenario(text: str) -> ScenarioFile:
    map_spec = shape_spec = None
    start = None
    start_theta = None
    waypoints: list[Waypoint] = []
    opts = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tok = line.split()
        key = tok[0]
        try:
            if key == "map" and len(tok) == 2:
                map_spec = tok[1]
            elif key == "shape" and len(tok) == 2:
                shape_spec = tok[1]
            elif key == "start" and len(tok) in (4, 5):
                start = (float(tok[1]), float(tok[2]), float(tok[3]))
                start_theta = float(tok[4]) if len(tok) == 5 else None
            elif key == "waypoint" and len(tok) == 5:
                waypoints.append(Waypoint(*[float(v) for v in tok[1:]]))
            elif key in ("max_steps", "n_interp", "stall_steps") \
                    and len(tok) == 2:
                opts[key] = int(tok[1])
            elif key == "stall_tol" and len(tok) == 2:
                opts[key] = float(tok[1])
            else:
                raise ScenarioFormatError(f"line {lineno}: bad entry {line!r}")
        except ValueError:
            raise ScenarioFormatError(
                f"line {lineno}: bad number in {line!r}") from None
    if start is None or not waypoints:
        raise ScenarioFormatError("scenario needs a start and >= 1 waypoint")
    return ScenarioFile(map_spec=map_spec, shape_spec=shape_spec, start=start,
                        start_theta=start_theta, waypoints=waypoints, **opts)


def load_scenario(path) -> ScenarioFile:
    with open(path, "r", encoding="utf-8") as fh:
        return loads_scenario(fh.read())


def resolve_scenario(sf: ScenarioFile, max_gap: float | None = None) -> Scenario:
    """Materialise the named map/shape of a scenario file."""
    from .maps import DEFAULT_MAX_GAP, resolve_map, resolve_shape
    if sf.map_spec is None or sf.shape_spec is None:
        raise ScenarioFormatError("scenario gives no map/shape")
    gap = DEFAULT_MAX_GAP if max_gap is None else max_gap
    return Scenario(obstacles=resolve_map(sf.map_spec, max_gap=gap),
                    shape=resolve_shape(sf.shape_spec, max_gap=gap),
                    start=sf.start, start_theta=sf.start_theta,
                    waypoints=sf.waypoints, max_steps=sf.max_steps,
                    n_interp=sf.n_interp, stall_steps=sf.stall_steps,
                    stall_tol=sf.stall_tol)


def dumps_scenario(sf: ScenarioFile) -> str:
    lines = []
    if sf.map_spec:
        lines.append(f"map {sf.map_spec}")
    if sf.shape_spec:
        lines.append(f"shape {sf.shape_spec}")
    start = f"start {sf.start[0]:.6f} {sf.start[1]:.6f} {sf.start[2]:.6f}"
    if sf.start_theta is not None:
        start += f" {sf.start_theta:.6f}"
    lines.append(start)
    for w in sf.waypoints:
        lines.append(f"waypoint {w.x:.6f} {w.y:.6f} {w.radius:.6f} "
                     f"{w.speed:.6f}")
    lines.append(f"max_steps {sf.max_steps}")
    lines.append(f"n_interp {sf.n_interp}")
    lines.append(f"stall_steps {sf.stall_steps}")
    lines.append(f"stall_tol {sf.stall_tol!r}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# closed loop

def run(scenario: Scenario, model: MlpModel, stats: NormStats,
        ctrl: ControllerConfig) -> TrajectoryLog:
    """Run the controller until the target, a failure, or the step limit.

    Deterministic: no randomness anywhere in the loop, so repeated runs
    produce identical logs (solve times excepted).
    """
    shape = scenario.shape
    obs = scenario.obstacles
    wps = scenario.waypoints
    sx, sy, sv = scenario.start
    theta0 = scenario.start_theta
    if theta0 is None:
        theta0 = math.atan2(wps[0].y - sy, wps[0].x - sx)
    s = State(sx, sy, theta0, sv)

    start_clear = clearance(shape, s.cfg, obs).distance
    if start_clear < 0.0:
        raise ValueError(f"start configuration penetrates an obstacle "
                         f"(clearance {start_clear:.4f})")

    records: list[StepRecord] = []
    outcome = "step-limit"
    wp_idx = 0
    warm = None
    warm_mu = None
    warm_rho = None
    positions = [(s.x, s.y)]
    m = ctrl.cbf.order

    v_cruise = max(w.speed for w in wps)

    def _advance(idx: int) -> int:
        while idx < len(wps) and math.hypot(s.x - wps[idx].x,
                                            s.y - wps[idx].y) \
                <= wps[idx].radius:
            idx += 1
        return idx

    wp_idx = _advance(wp_idx)
    for step in range(scenario.max_steps):
        if wp_idx == len(wps):
            outcome = "reached"
            break
        wp = wps[wp_idx]
        dist = math.hypot(wp.x - s.x, wp.y - s.y)
        theta_ref = math.atan2(wp.y - s.y, wp.x - s.x)
        # speed reference: cruise on the leg, brake linearly on approach,
        # never below the waypoint's own target (floored for via-points so
        # the turn radius v / u1_max stays inside the capture radius, and
        # tapering to zero for stop-points so the robot can actually halt)
        v_ref = max(min(wp.speed, APPROACH_SPEED_FLOOR),
                    min(v_cruise, APPROACH_SPEED_GAIN * dist))
        x_ref = State(wp.x, wp.y, theta_ref, v_ref)
        weights = ctrl.weights_for(x_ref)

        d_true = clearance(shape, s.cfg, obs).distance
        try:
            sol = control_step(s, model, stats, shape, weights, ctrl.bounds,
                               ctrl.cbf, ctrl.dt, warm_start=warm,
                               warm_multipliers=warm_mu, warm_rho=warm_rho,
                               margin=ctrl.margin, opts=ctrl.opts)
        except NonFiniteEvaluationError:
            outcome = "stalled"
            break
        s_next = step_dynamics(s, sol.control, ctrl.dt)

        rc = extreme_point(shape, s.cfg)
        ctx = BarrierContext(d_pred=sol.d_pred, center=(rc[0], rc[1]))
        p0_next = psi0(s_next.cfg, ctx, shape)
        ok, worst = check_step_safe(shape, s.cfg, s_next.cfg, obs,
                                    scenario.n_interp)
        disp = sweep_displacement(shape, s.cfg, s_next.cfg, scenario.n_interp)

        records.append(StepRecord(
            step=step, state=s, control=sol.control,
            omegas=sol.omegas.copy(), d_pred=sol.d_pred, d_true=d_true,
            psi0_next=p0_next, status=sol.status, solve_ms=sol.solve_ms,
            sweep_ok=ok, sweep_worst=worst, sweep_disp=disp,
            chain=sol.cons[:m].copy(), kkt_residual=sol.kkt_residual,
            n_evals=sol.n_evals))

        if not ok:
            outcome = "collided"
            s = s_next
            break
        s = s_next
        warm = sol.z
        warm_mu = sol.multipliers
        warm_rho = sol.rho_final
        positions.append((s.x, s.y))
        # capture first, then the stall ring: a state that just entered the
        # active waypoint must not be declared stalled
        wp_idx = _advance(wp_idx)
        if wp_idx == len(wps):
            outcome = "reached"
            break
        if len(positions) > scenario.stall_steps:
            ox, oy = positions[-1 - scenario.stall_steps]
            if math.hypot(s.x - ox, s.y - oy) < scenario.stall_tol:
                outcome = "stalled"
                break
    return TrajectoryLog(records=records, outcome=outcome, final_state=s,
                         order=m)


def audit_report(log: TrajectoryLog) -> AuditReport:
    """Aggregate safety and performance numbers from a run."""
    recs = log.records
    if not recs:
        return AuditReport(outcome=log.outcome, n_steps=0,
                           reached=log.outcome == "reached",
                           min_clearance=math.inf, worst_psi0=math.inf,
                           mean_solve_ms=0.0, std_solve_ms=0.0,
                           max_solve_ms=0.0, n_infeasible=0, n_max_iter=0,
                           n_sweep_violations=0, n_risk_steps=0,
                           max_pred_error=0.0)
    solve_ms = np.array([r.solve_ms for r in recs])
    sweep_worst = np.array([r.sweep_worst for r in recs])
    psi0s = np.array([min(r.d_pred, r.psi0_next) for r in recs])
    pred_err = np.array([abs(r.d_pred - r.d_true) for r in recs])
    risk = sum(1 for r in recs if r.sweep_disp > r.d_true)
    return AuditReport(
        outcome=log.outcome,
        n_steps=len(recs),
        reached=log.outcome == "reached",
        min_clearance=float(sweep_worst.min()),
        worst_psi0=float(psi0s.min()),
        mean_solve_ms=float(solve_ms.mean()),
        std_solve_ms=float(solve_ms.std()),
        max_solve_ms=float(solve_ms.max()),
        n_infeasible=sum(1 for r in recs if r.status == "infeasible_fallback"),
        n_max_iter=sum(1 for r in recs if r.status == "max_iter"),
        n_sweep_violations=sum(1 for r in recs if not r.sweep_ok),
        n_risk_steps=risk,
        max_pred_error=float(pred_err.max()),
    )


def format_report(rep: AuditReport) -> str:
    lines = [
        f"outcome            {rep.outcome}",
        f"steps              {rep.n_steps}",
        f"min clearance      {rep.min_clearance:.6f}",
        f"worst psi0         {rep.worst_psi0:.6f}",
        f"solve ms           {rep.mean_solve_ms:.3f} +/- {rep.std_solve_ms:.3f}"
        f" (max {rep.max_solve_ms:.3f})",
        f"infeasible steps   {rep.n_infeasible}",
        f"max-iter steps     {rep.n_max_iter}",
        f"sweep violations   {rep.n_sweep_violations}",
        f"risk steps         {rep.n_risk_steps}",
        f"max |dpred-dtrue|  {rep.max_pred_error:.6f}",
    ]
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# CSV logging

def csv_header(order: int) -> str:
    omegas = ",".join(f"omega_{i}" for i in range(1, order + 1))
    return (f"step,x,y,theta,v,u1,u2,{omegas},d_pred,d_true,psi0,"
            f"status,solve_ms,sweep_ok")


def write_csv(log: TrajectoryLog, path) -> None:
    """One row per executed step; floats use shortest-round-trip repr."""
    lines = [csv_header(log.order)]
    for r in log.records:
        vals = [str(r.step), repr(r.state.x), repr(r.state.y),
                repr(r.state.theta), repr(r.state.v), repr(r.control.u1),
                repr(r.control.u2)]
        vals.extend(repr(float(w)) for w in r.omegas)
        vals.extend([repr(r.d_pred), repr(r.d_true), repr(r.psi0_next),
                     r.status, repr(r.solve_ms), str(int(r.sweep_ok))])
        lines.append(",".join(vals))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def read_csv(path) -> TrajectoryLog:
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln.rstrip("\n") for ln in fh if ln.strip()]
    if not lines:
        raise ValueError("empty trajectory file")
    header = lines[0].split(",")
    n_om = sum(1 for h in header if h.startswith("omega_"))
    if csv_header(n_om).split(",") != header:
        raise ValueError(f"unexpected trajectory header {lines[0]!r}")
    records = []
    for ln in lines[1:]:
        f = ln.split(",")
        base = 7
        omegas = np.array([float(v) for v in f[base:base + n_om]])
        k = base + n_om
        records.append(StepRecord(
            step=int(f[0]),
            state=State(float(f[1]), float(f[2]), float(f[3]), float(f[4])),
            control=Control(float(f[5]), float(f[6])),
            omegas=omegas, d_pred=float(f[k]), d_true=float(f[k + 1]),
            psi0_next=float(f[k + 2]), status=f[k + 3],
            solve_ms=float(f[k + 4]), sweep_ok=bool(int(f[k + 5]))))
    return TrajectoryLog(records=records, outcome="unknown",
                         final_state=None, order=n_om)


def replay_states(log: TrajectoryLog, dt: float) -> list[State]:
    """Re-integrate the logged controls from the logged initial state.

    Returns len(records) + 1 states; element k must equal the state recorded
    at step k exactly (the dynamics are deterministic float arithmetic).
    """
    if not log.records:
        return []
    s = log.records[0].state
    out = [s]
    for r in log.records:
        s = step_dynamics(s, r.control, dt)
        out.append(s)
    return out
