"""Boundary-sampled 2-D geometry.

Shapes (robot bodies and obstacles) are represented by ordered point samples
along a simple closed boundary loop.  All distances are derived from these
samples, so every quantity here is exact for the sampled geometry and within
half a sample gap of the underlying continuous shape.

Conventions:

* world frame is a right-handed x/y plane, angles in radians wrapped to
  (-pi, pi]
* a configuration is (x, y, theta): translation of the body reference point
  plus rotation about it
* clearance is positive outside obstacles (closest pair of boundary samples)
  and negative under penetration (deepest robot sample, measured to the
  boundary of the obstacle containing it)
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.spatial import cKDTree

TWO_PI = 2.0 * math.pi

#: default spacing bound for boundary resampling, in meters
DEFAULT_MAX_GAP = 0.01

#: tolerance used for on-boundary point classification
_EDGE_EPS = 1e-12


def wrap_angle(theta: float) -> float:
    """Wrap an angle into (-pi, pi]."""
    w = (theta + math.pi) % TWO_PI - math.pi
    if w == -math.pi:
        w = math.pi
    return w


def wrap_angles(theta: np.ndarray) -> np.ndarray:
    """Vectorised :func:`wrap_angle`."""
    w = (np.asarray(theta, dtype=float) + math.pi) % TWO_PI - math.pi
    return np.where(w == -math.pi, math.pi, w)


def rotation(theta: float) -> np.ndarray:
    """2x2 rotation matrix for a counter-clockwise angle."""
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])


@dataclass(frozen=True)
class Configuration:
    """Rigid placement of a body: reference point (x, y) and heading theta.

    theta is wrapped into (-pi, pi] on construction.
    """

    x: float
    y: float
    theta: float

    def __post_init__(self):
        object.__setattr__(self, "x", float(self.x))
        object.__setattr__(self, "y", float(self.y))
        object.__setattr__(self, "theta", wrap_angle(float(self.theta)))

    @property
    def position(self) -> np.ndarray:
        return np.array([self.x, self.y])

    def inverse(self) -> "Configuration":
        """Configuration that undoes this one (transform round-trip)."""
        c, s = math.cos(self.theta), math.sin(self.theta)
        # -R(-theta) @ [x, y]
        return Configuration(-(c * self.x + s * self.y),
                             -(-s * self.x + c * self.y),
                             -self.theta)


class BoundarySamples:
    """Ordered samples tracing one simple closed loop.

    The loop is implicitly closed: the edge from the last sample back to the
    first is part of the boundary.  Consecutive spacing (including that
    closing edge) must not exceed ``max_gap``.

    ``corners`` optionally carries the source polygon vertices the samples
    were drawn from; containment tests then walk only the true edges instead
    of every sample.  Without it, corners are recovered by dropping
    collinear runs.
    """

    def __init__(self, points: np.ndarray, max_gap: float,
                 corners: np.ndarray | None = None):
        pts = np.ascontiguousarray(np.asarray(points, dtype=float))
        if pts.ndim != 2 or pts.shape[1] != 2:
            raise ValueError(f"boundary points must be (n, 2), got {pts.shape}")
        if pts.shape[0] < 3:
            raise ValueError("a closed loop needs at least 3 samples")
        if not np.isfinite(pts).all():
            raise ValueError("boundary points must be finite")
        gaps = np.linalg.norm(np.roll(pts, -1, axis=0) - pts, axis=1)
        if gaps.max() > max_gap + 1e-9:
            raise ValueError(
                f"sample spacing {gaps.max():.6g} exceeds max_gap {max_gap:.6g}")
        pts.setflags(write=False)
        self.points = pts
        self.max_gap = float(max_gap)
        self._corners = None
        if corners is not None:
            self._corners = np.ascontiguousarray(np.asarray(corners, float))
            self._corners.setflags(write=False)

    def __len__(self) -> int:
        return self.points.shape[0]

    @cached_property
    def bbox(self) -> np.ndarray:
        """[xmin, xmax, ymin, ymax] of the samples."""
        return np.array([self.points[:, 0].min(), self.points[:, 0].max(),
                         self.points[:, 1].min(), self.points[:, 1].max()])

    @cached_property
    def tree(self) -> cKDTree:
        return cKDTree(self.points)

    @cached_property
    def corner_points(self) -> np.ndarray:
        """Polygon vertices for containment tests (collinear runs dropped)."""
        if self._corners is not None:
            return self._corners
        p = self.points
        prev = np.roll(p, 1, axis=0)
        nxt = np.roll(p, -1, axis=0)
        v1 = p - prev
        v2 = nxt - p
        cross = v1[:, 0] * v2[:, 1] - v1[:, 1] * v2[:, 0]
        scale = np.linalg.norm(v1, axis=1) * np.linalg.norm(v2, axis=1)
        keep = np.abs(cross) > 1e-10 * np.maximum(scale, 1e-300)
        if keep.sum() < 3:
            return p
        return p[keep]


def resample_closed(vertices: np.ndarray, max_gap: float) -> np.ndarray:
    """Uniform arc-length resampling of a closed polyline.

    Returns n = max(3, ceil(perimeter / max_gap)) points at arc positions
    k * perimeter / n measured from the first vertex, walking the edges in
    order.  Every original vertex whose cumulative arc length is an exact
    multiple of the step lands on a sample.
    """
    verts = np.asarray(vertices, dtype=float)
    if verts.ndim != 2 or verts.shape[1] != 2 or verts.shape[0] < 3:
        raise ValueError("need at least 3 polyline vertices of shape (n, 2)")
    closed = np.vstack([verts, verts[:1]])
    seg = np.diff(closed, axis=0)
    seg_len = np.linalg.norm(seg, axis=1)
    if (seg_len == 0.0).any():
        raise ValueError("degenerate zero-length polyline edge")
    cum = np.concatenate([[0.0], np.cumsum(seg_len)])
    perim = cum[-1]
    n = max(3, int(math.ceil(perim / max_gap - 1e-12)))
    s = perim * np.arange(n) / n
    # locate each arc position on its edge
    idx = np.clip(np.searchsorted(cum, s, side="right") - 1, 0, len(seg_len) - 1)
    frac = (s - cum[idx]) / seg_len[idx]
    return closed[idx] + frac[:, None] * seg[idx]


def is_simple_loop(points: np.ndarray) -> bool:
    """True if the closed polyline through ``points`` has no self crossing.

    O(n^2) edge pair test; intended for validation at load time, not per
    clearance query.  Shared endpoints of adjacent edges do not count.
    """
    pts = np.asarray(points, dtype=float)
    n = pts.shape[0]
    a = pts
    b = np.roll(pts, -1, axis=0)
    d = b - a
    for i in range(n):
        # strict crossing of edge i against all non-adjacent later edges
        js = np.arange(i + 2, n if i > 0 else n - 1)
        if js.size == 0:
            continue
        r = d[i]
        qp = a[js] - a[i]
        denom = r[0] * d[js, 1] - r[1] * d[js, 0]
        cross1 = qp[:, 0] * d[js, 1] - qp[:, 1] * d[js, 0]
        cross2 = qp[:, 0] * r[1] - qp[:, 1] * r[0]
        with np.errstate(divide="ignore", invalid="ignore"):
            t = cross1 / denom
            u = cross2 / denom
        hit = (np.abs(denom) > 1e-15) & (t > 1e-12) & (t < 1 - 1e-12) \
            & (u > 1e-12) & (u < 1 - 1e-12)
        if hit.any():
            return False
    return True


class RobotShape:
    """Rigid body boundary in its own frame, with the extreme point cached.

    The extreme point is the boundary sample farthest from the body reference
    point (the body-frame origin); ties resolve to the lowest sample index.
    Its distance is the circumscribed radius used by safety-ball reasoning.
    """

    def __init__(self, boundary: BoundarySamples):
        self.boundary = boundary
        radii = np.hypot(boundary.points[:, 0], boundary.points[:, 1])
        idx = int(np.argmax(radii))  # argmax takes the first max: lowest index
        self.extreme_index = idx
        self.extreme_offset = boundary.points[idx].copy()
        self.extreme_offset.setflags(write=False)
        self.extreme_radius = float(radii[idx])

    def __len__(self) -> int:
        return len(self.boundary)


class ObstacleSet:
    """Static obstacles plus the world sampling box.

    ``world_bounds`` is [xmin, xmax, ymin, ymax].  The bounds delimit where
    clearance data is collected; they are not themselves obstacles.  An empty
    obstacle list is permitted (free-space tests); clearance is then +inf.
    """

    def __init__(self, obstacles: list[BoundarySamples], world_bounds):
        wb = np.asarray(world_bounds, dtype=float)
        if wb.shape != (4,) or wb[0] >= wb[1] or wb[2] >= wb[3]:
            raise ValueError("world_bounds must be [xmin, xmax, ymin, ymax]")
        wb.setflags(write=False)
        self.obstacles = list(obstacles)
        self.world_bounds = wb
        for k, ob in enumerate(self.obstacles):
            bb = ob.bbox
            if bb[0] < wb[0] - 1e-9 or bb[1] > wb[1] + 1e-9 \
                    or bb[2] < wb[2] - 1e-9 or bb[3] > wb[3] + 1e-9:
                raise ValueError(f"obstacle {k} leaves world bounds")

    def __len__(self) -> int:
        return len(self.obstacles)

    @cached_property
    def all_points(self) -> np.ndarray:
        if not self.obstacles:
            return np.zeros((0, 2))
        return np.vstack([ob.points for ob in self.obstacles])

    @cached_property
    def tree(self) -> cKDTree:
        return cKDTree(self.all_points)


@dataclass
class ClearanceResult:
    """Signed clearance plus the witness pair that realises it.

    Witnesses are None when there are no obstacles (distance = +inf).
    """

    distance: float
    robot_witness: np.ndarray | None
    obstacle_witness: np.ndarray | None


@dataclass(frozen=True)
class LsbSpec:
    """Local safety ball: center (world frame) and radius.

    A non-positive radius marks the ball infeasible (no safe dilation).
    """

    center: tuple[float, float]
    radius: float

    @property
    def feasible(self) -> bool:
        return self.radius > 0.0


# ---------------------------------------------------------------------------
# rigid transforms

def transform_points(points: np.ndarray, cfg: Configuration) -> np.ndarray:
    """Apply the rigid transform of ``cfg`` to body-frame points (n, 2)."""
    c, s = math.cos(cfg.theta), math.sin(cfg.theta)
    px, py = points[:, 0], points[:, 1]
    out = np.empty_like(points)
    out[:, 0] = c * px - s * py + cfg.x
    out[:, 1] = s * px + c * py + cfg.y
    return out


def transform_boundary(shape: RobotShape, cfg: Configuration) -> BoundarySamples:
    """World-frame boundary samples of the body at a configuration."""
    return BoundarySamples(transform_points(shape.boundary.points, cfg),
                           shape.boundary.max_gap,
                           corners=transform_points(
                               shape.boundary.corner_points, cfg))


def extreme_point(shape: RobotShape, cfg: Configuration) -> np.ndarray:
    """World position of the body's extreme boundary sample at ``cfg``."""
    c, s = math.cos(cfg.theta), math.sin(cfg.theta)
    ox, oy = shape.extreme_offset
    return np.array([c * ox - s * oy + cfg.x, s * ox + c * oy + cfg.y])


def build_lsb(shape: RobotShape, cfg: Configuration, radius: float) -> LsbSpec:
    """Safety ball anchored at the extreme point with the given radius."""
    cx, cy = extreme_point(shape, cfg)
    return LsbSpec(center=(float(cx), float(cy)), radius=float(radius))


# ---------------------------------------------------------------------------
# point containment

def _points_in_loop(pts: np.ndarray, loop: BoundarySamples) -> np.ndarray:
    """Even-odd containment of pts (k, 2) in one closed loop.

    Points on the boundary (within a tight tolerance) count as inside, which
    is the conservative choice for collision checking.
    """
    n = pts.shape[0]
    if n == 0:
        return np.zeros(0, dtype=bool)
    a = loop.corner_points
    b = np.roll(a, -1, axis=0)
    px = pts[:, 0][:, None]
    py = pts[:, 1][:, None]
    ay, by = a[:, 1][None, :], b[:, 1][None, :]
    ax, bx = a[:, 0][None, :], b[:, 0][None, :]
    straddle = (ay > py) != (by > py)
    with np.errstate(divide="ignore", invalid="ignore"):
        xcross = ax + (py - ay) * (bx - ax) / (by - ay)
    crossing = straddle & (px < xcross)
    inside = (crossing.sum(axis=1) % 2).astype(bool)

    # on-edge test: |cross| small and projection within the segment
    ex = (bx - ax)
    ey = (by - ay)
    rx = px - ax
    ry = py - ay
    cross = rx * ey - ry * ex
    dot = rx * ex + ry * ey
    seg2 = ex * ex + ey * ey
    scale = np.maximum(seg2, 1e-300)
    on_edge = (cross * cross <= _EDGE_EPS * _EDGE_EPS * scale) \
        & (dot >= -_EDGE_EPS) & (dot <= seg2 + _EDGE_EPS)
    return inside | on_edge.any(axis=1)


def points_in_obstacles(pts: np.ndarray, obs: ObstacleSet) -> np.ndarray:
    """Boolean mask: which of pts (k, 2) lie inside (or on) any obstacle."""
    pts = np.asarray(pts, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ValueError("pts must be (k, 2)")
    hit = np.zeros(pts.shape[0], dtype=bool)
    for ob in obs.obstacles:
        cand = np.flatnonzero(~hit)
        if cand.size == 0:
            break
        bb = ob.bbox
        m = (pts[cand, 0] >= bb[0] - 1e-12) & (pts[cand, 0] <= bb[1] + 1e-12) \
            & (pts[cand, 1] >= bb[2] - 1e-12) & (pts[cand, 1] <= bb[3] + 1e-12)
        cand = cand[m]
        if cand.size == 0:
            continue
        hit[cand] = _points_in_loop(pts[cand], ob)
    return hit


def point_in_obstacles(p, obs: ObstacleSet) -> bool:
    """Scalar version of :func:`points_in_obstacles`."""
    return bool(points_in_obstacles(np.asarray(p, dtype=float)[None, :], obs)[0])


# ---------------------------------------------------------------------------
# clearance

def _penetration_of(pts: np.ndarray, obs: ObstacleSet):
    """Deepest penetration among ``pts`` known to be in some obstacle.

    For each point inside an obstacle, depth is the distance to the boundary
    of the obstacle(s) containing it (minimum over containing obstacles when
    they overlap).  Returns (depth, robot_idx, witness_point) for the deepest
    point, or (None, ...) if nothing is inside.
    """
    best_depth = None
    best_idx = -1
    best_wit = None
    remaining = np.ones(pts.shape[0], dtype=bool)
    depth = np.full(pts.shape[0], np.inf)
    wit = np.zeros((pts.shape[0], 2))
    seen = np.zeros(pts.shape[0], dtype=bool)
    for ob in obs.obstacles:
        bb = ob.bbox
        m = (pts[:, 0] >= bb[0] - 1e-12) & (pts[:, 0] <= bb[1] + 1e-12) \
            & (pts[:, 1] >= bb[2] - 1e-12) & (pts[:, 1] <= bb[3] + 1e-12)
        cand = np.flatnonzero(m)
        if cand.size == 0:
            continue
        inside = _points_in_loop(pts[cand], ob)
        cand = cand[inside]
        if cand.size == 0:
            continue
        d, j = ob.tree.query(pts[cand])
        upd = d < depth[cand]
        tgt = cand[upd]
        depth[tgt] = d[upd]
        wit[tgt] = ob.points[j[upd]]
        seen[cand] = True
    if not seen.any():
        return None, -1, None
    pen_idx = np.flatnonzero(seen)
    k = pen_idx[np.argmax(depth[pen_idx])]
    return float(depth[k]), int(k), wit[k].copy()


def clearance(shape: RobotShape, cfg: Configuration,
              obs: ObstacleSet) -> ClearanceResult:
    """Signed clearance of the body at ``cfg`` against all obstacles.

    Positive: minimum distance over all (robot sample, obstacle sample)
    pairs.  Negative: minus the deepest penetration of a robot sample inside
    its containing obstacle.  Witness points realise the reported value.
    """
    if len(obs) == 0:
        return ClearanceResult(math.inf, None, None)
    pts = transform_points(shape.boundary.points, cfg)
    depth, ridx, owit = _penetration_of(pts, obs)
    if depth is not None:
        return ClearanceResult(-depth, pts[ridx].copy(), owit)
    d, j = obs.tree.query(pts)
    k = int(np.argmin(d))
    return ClearanceResult(float(d[k]), pts[k].copy(),
                           obs.all_points[j[k]].copy())


def clearance_many(shape: RobotShape, cfgs: np.ndarray,
                   obs: ObstacleSet) -> np.ndarray:
    """Signed clearance for a batch of configurations (n, 3) -> (n,).

    Matches :func:`clearance` exactly (same trees, same reductions); the
    batch form exists so dataset generation and sweep checks stay fast.
    """
    cfgs = np.asarray(cfgs, dtype=float)
    if cfgs.ndim != 2 or cfgs.shape[1] != 3:
        raise ValueError("cfgs must be (n, 3)")
    n = cfgs.shape[0]
    if len(obs) == 0:
        return np.full(n, math.inf)
    body = shape.boundary.points
    nr = body.shape[0]
    c = np.cos(cfgs[:, 2])
    s = np.sin(cfgs[:, 2])
    px, py = body[:, 0], body[:, 1]
    allpts = np.empty((n, nr, 2))
    allpts[:, :, 0] = c[:, None] * px[None, :] - s[:, None] * py[None, :] \
        + cfgs[:, 0][:, None]
    allpts[:, :, 1] = s[:, None] * px[None, :] + c[:, None] * py[None, :] \
        + cfgs[:, 1][:, None]
    flat = allpts.reshape(-1, 2)
    d, _ = obs.tree.query(flat, workers=-1)
    out = d.reshape(n, nr).min(axis=1)

    # configurations with penetrating samples get the negative branch:
    # per point, depth to the containing obstacle's boundary (min over
    # containing obstacles); per configuration, the deepest such point
    depth = None
    for ob in obs.obstacles:
        bb = ob.bbox
        m = (flat[:, 0] >= bb[0] - 1e-12) & (flat[:, 0] <= bb[1] + 1e-12) \
            & (flat[:, 1] >= bb[2] - 1e-12) & (flat[:, 1] <= bb[3] + 1e-12)
        cand = np.flatnonzero(m)
        if cand.size == 0:
            continue
        inside = _points_in_loop(flat[cand], ob)
        idx = cand[inside]
        if idx.size == 0:
            continue
        dk, _ = ob.tree.query(flat[idx])
        if depth is None:
            depth = np.full(flat.shape[0], np.inf)
        np.minimum.at(depth, idx, dk)
    if depth is not None:
        pen = np.where(np.isfinite(depth), depth, -np.inf).reshape(n, nr)
        mx = pen.max(axis=1)
        bad = mx > -np.inf
        out[bad] = -mx[bad]
    return out


# ---------------------------------------------------------------------------
# swept motion

def interpolate_cfgs(a: Configuration, b: Configuration,
                     taus: np.ndarray) -> np.ndarray:
    """Straight-line interpolation in (x, y), shortest arc in theta.

    Returns (len(taus), 3) with theta wrapped.
    """
    taus = np.asarray(taus, dtype=float)
    dth = wrap_angle(b.theta - a.theta)
    out = np.empty((taus.shape[0], 3))
    out[:, 0] = a.x + taus * (b.x - a.x)
    out[:, 1] = a.y + taus * (b.y - a.y)
    out[:, 2] = wrap_angles(a.theta + taus * dth)
    return out


def sweep_displacement(shape: RobotShape, a: Configuration, b: Configuration,
                       n_interp: int) -> float:
    """Largest boundary-sample displacement from ``a`` along the sweep to ``b``.

    The sweep interpolates linearly in position and along the shortest arc in
    heading, evaluated at n_interp parameters spanning [0, 1].  This is the
    swept-motion bound compared against the safety-ball radius.
    """
    if n_interp < 2:
        raise ValueError("n_interp must be >= 2")
    taus = np.linspace(0.0, 1.0, n_interp)
    cfgs = interpolate_cfgs(a, b, taus)
    body = shape.boundary.points
    start = transform_points(body, a)
    c = np.cos(cfgs[:, 2])
    s = np.sin(cfgs[:, 2])
    px, py = body[:, 0], body[:, 1]
    dx = c[:, None] * px[None, :] - s[:, None] * py[None, :] \
        + cfgs[:, 0][:, None] - start[:, 0][None, :]
    dy = s[:, None] * px[None, :] + c[:, None] * py[None, :] \
        + cfgs[:, 1][:, None] - start[:, 1][None, :]
    return float(np.sqrt(dx * dx + dy * dy).max())


def check_step_safe(shape: RobotShape, a: Configuration, b: Configuration,
                    obs: ObstacleSet, n_interp: int) -> tuple[bool, float]:
    """Clearance audit along the interpolated sweep from ``a`` to ``b``.

    Returns (safe, worst): ``worst`` is the minimum signed clearance over the
    n_interp interpolated configurations, ``safe`` is worst >= 0.  n_interp
    is a safety parameter: larger values catch faster sweeps.
    """
    if n_interp < 2:
        raise ValueError("n_interp must be >= 2")
    taus = np.linspace(0.0, 1.0, n_interp)
    cfgs = interpolate_cfgs(a, b, taus)
    worst = float(clearance_many(shape, cfgs, obs).min())
    return worst >= 0.0, worst
