"""Discrete-time high-order barrier recursions over safety-ball radii.

The base barrier compares a frozen safety ball against the current extreme
point::

    psi0(x | ctx) = d_ctx - || r_c(x) - center_ctx ||

where ``ctx`` carries the ball built at decision time (predicted clearance
d_ctx, center at the extreme point).  The unrelaxed recursion for relative
degree m applies a linear class-kappa rate gamma_i at each order::

    psi_i(x_t) = psi_{i-1}(x_{t+1}) - psi_{i-1}(x_t) + gamma_i psi_{i-1}(x_t)

The relaxed recursion multiplies the decayed carry-over term by a slack
omega_i >= 0::

    rpsi_i(x_t) = rpsi_{i-1}(x_{t+1}) + omega_i (gamma_i - 1) rpsi_{i-1}(x_t)

With omega in [0, 1) (and 0 < gamma <= 1) the relaxed constraints still force
rpsi_0 >= 0 forward in time whenever it starts non-negative; omega_i = 1
recovers the unrelaxed recursion exactly.  Multiplying (rather than adding)
the slack is what preserves the sign structure: an additive slack can drag
the carry-over term negative and break the forward argument.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import Configuration, LsbSpec, RobotShape, extreme_point


@dataclass(frozen=True)
class CbfConfig:
    """Barrier order and rates: one gamma per order, plus slack bounds.

    Slack upper bound 1.0 keeps every admissible slack inside the regime
    covered by the invariance argument while still allowing the unrelaxed
    limit.
    """

    gammas: tuple[float, ...] = (0.1, 0.1)
    slack_min: float = 0.0
    slack_max: float = 1.0

    def __post_init__(self):
        if not self.gammas:
            raise ValueError("need at least one gamma")
        for g in self.gammas:
            if not 0.0 < g <= 1.0:
                raise ValueError(f"gamma {g} outside (0, 1]")
        if not 0.0 <= self.slack_min <= self.slack_max:
            raise ValueError("need 0 <= slack_min <= slack_max")

    @property
    def order(self) -> int:
        return len(self.gammas)

    def clip_slack(self, omegas) -> np.ndarray:
        return np.clip(np.asarray(omegas, dtype=float),
                       self.slack_min, self.slack_max)


@dataclass(frozen=True)
class BarrierContext:
    """Safety ball frozen at decision time: predicted radius and center."""

    d_pred: float
    center: tuple[float, float]

    @classmethod
    def from_lsb(cls, ball: LsbSpec) -> "BarrierContext":
        return cls(d_pred=ball.radius, center=ball.center)


def psi0(cfg: Configuration, ctx: BarrierContext, shape: RobotShape,
         smooth_eps: float = 0.0) -> float:
    """Ball-membership barrier of the extreme point at a configuration.

    ``smooth_eps`` > 0 replaces the norm by sqrt(eps + ||.||^2) so the value
    is differentiable at the center (used inside the solver; the default is
    the exact norm).
    """
    rc = extreme_point(shape, cfg)
    dx = rc[0] - ctx.center[0]
    dy = rc[1] - ctx.center[1]
    if smooth_eps > 0.0:
        return ctx.d_pred - math.sqrt(smooth_eps + dx * dx + dy * dy)
    return ctx.d_pred - math.hypot(dx, dy)


def psi0_gradient(cfg: Configuration, ctx: BarrierContext, shape: RobotShape,
                  smooth_eps: float = 0.0) -> np.ndarray:
    """d psi0 / d (x, y, theta) at a configuration.

    With smooth_eps = 0 the gradient at the exact center is taken as zero
    (any subgradient choice works for the solver; the smoothed form avoids
    the issue entirely).
    """
    c, s = math.cos(cfg.theta), math.sin(cfg.theta)
    ox, oy = shape.extreme_offset
    rx = c * ox - s * oy + cfg.x
    ry = s * ox + c * oy + cfg.y
    dx = rx - ctx.center[0]
    dy = ry - ctx.center[1]
    norm = math.sqrt(smooth_eps + dx * dx + dy * dy)
    if norm == 0.0:
        return np.zeros(3)
    # d r_c / d theta = (-s*ox - c*oy, c*ox - s*oy)
    drx = -s * ox - c * oy
    dry = c * ox - s * oy
    return np.array([-dx / norm, -dy / norm,
                     -(dx * drx + dy * dry) / norm])


def dcbf_chain(values: np.ndarray, gammas) -> np.ndarray:
    """Unrelaxed high-order chain from a window of psi0 values.

    ``values[j]`` is psi0 at time t+j for j = 0..m.  Returns the m values
    psi_1(x_t) ... psi_m(x_t), each computed by the difference form
    psi_i(x_t) = psi_{i-1}(x_{t+1}) - psi_{i-1}(x_t) + gamma_i psi_{i-1}(x_t).
    """
    level = np.asarray(values, dtype=float).copy()
    gammas = tuple(gammas)
    if level.shape != (len(gammas) + 1,):
        raise ValueError("need m+1 psi0 values for m gammas")
    out = np.empty(len(gammas))
    for i, g in enumerate(gammas):
        nxt = level[1:] - level[:-1] + g * level[:-1]
        out[i] = nxt[0]
        level = nxt
    return out


def relaxed_chain(values: np.ndarray, gammas, omegas) -> np.ndarray:
    """Relaxed chain values rpsi_1(x_t) ... rpsi_m(x_t).

    ``values`` as in :func:`dcbf_chain`; ``omegas`` has one slack per order.
    omegas = 1 reproduces :func:`dcbf_chain` exactly.
    """
    level = np.asarray(values, dtype=float).copy()
    gammas = tuple(gammas)
    om = np.asarray(omegas, dtype=float)
    if level.shape != (len(gammas) + 1,) or om.shape != (len(gammas),):
        raise ValueError("need m+1 values, m gammas, m omegas")
    out = np.empty(len(gammas))
    for i, g in enumerate(gammas):
        nxt = level[1:] + om[i] * (g - 1.0) * level[:-1]
        out[i] = nxt[0]
        level = nxt
    return out


def relaxed_chain_with_grads(values: np.ndarray, gammas, omegas):
    """Relaxed chain plus derivatives w.r.t. the inputs.

    Returns (chain (m,), d_values (m, m+1), d_omegas (m, m)):
    ``d_values[i, j]`` = d rpsi_i / d values[j], ``d_omegas[i, k]`` =
    d rpsi_i / d omega_k.  Forward-mode sweep over the same recursion the
    solver constrains, so the Jacobians match the values exactly.
    """
    gammas = tuple(gammas)
    m = len(gammas)
    om = np.asarray(omegas, dtype=float)
    level = np.asarray(values, dtype=float).copy()
    if level.shape != (m + 1,) or om.shape != (m,):
        raise ValueError("need m+1 values, m gammas, m omegas")
    dlevel_dv = np.eye(m + 1)           # rows: window entries
    dlevel_dom = np.zeros((m + 1, m))
    chain = np.empty(m)
    d_values = np.zeros((m, m + 1))
    d_omegas = np.zeros((m, m))
    for i, g in enumerate(gammas):
        co = om[i] * (g - 1.0)
        nxt = level[1:] + co * level[:-1]
        dv = dlevel_dv[1:] + co * dlevel_dv[:-1]
        dom = dlevel_dom[1:] + co * dlevel_dom[:-1]
        dom[:, i] += (g - 1.0) * level[:-1]
        chain[i] = nxt[0]
        d_values[i] = dv[0]
        d_omegas[i] = dom[0]
        level, dlevel_dv, dlevel_dom = nxt, dv, dom
    return chain, d_values, d_omegas


def relaxed_psi_chain(states, ctx: BarrierContext, shape: RobotShape,
                      cfg: CbfConfig, omegas) -> np.ndarray:
    """Relaxed chain evaluated from a window of configurations.

    ``states`` is the m+1 configurations [x_t, x_{t+1}, ..., x_{t+m}] (the
    tail coming from the drift rollout in the controller).
    """
    states = list(states)
    if len(states) != cfg.order + 1:
        raise ValueError(f"need {cfg.order + 1} configurations")
    values = np.array([psi0(s, ctx, shape) for s in states])
    return relaxed_chain(values, cfg.gammas, omegas)


def verify_invariance(windows: np.ndarray, gammas, slacks: np.ndarray,
                      tol: float = 1e-9) -> bool:
    """Check a recorded rollout for forward invariance of the base barrier.

    ``windows[t]`` holds the m+1 psi0 values seen by the constraint at step
    t (indices t..t+m under the step-t context); ``slacks[t]`` the slack
    vector applied there.  The check passes when the premise psi0 >= 0 holds
    at the start, every relaxed constraint evaluates >= -tol, and psi0 stays
    >= -tol at every index covered by some window.  An empty record passes
    vacuously.
    """
    windows = np.asarray(windows, dtype=float)
    slacks = np.asarray(slacks, dtype=float)
    if windows.size == 0:
        return True
    if windows.ndim != 2 or slacks.shape != (windows.shape[0],
                                             windows.shape[1] - 1):
        raise ValueError("windows (T, m+1) and slacks (T, m) required")
    if windows[0, 0] < -tol:
        return False
    if windows.min() < -tol:
        return False
    for t in range(windows.shape[0]):
        chain = relaxed_chain(windows[t], gammas, slacks[t])
        if chain.min() < -tol:
            return False
    return True
