import math

import numpy as np
import pytest

from lsbnav import geometry as geo
from lsbnav import maps


# ---------------------------------------------------------------------------
# oracles (independent, deliberately slow)

def oracle_clearance(shape: geo.RobotShape, cfg: geo.Configuration,
                     obs: geo.ObstacleSet) -> float:
    """Exhaustive pair scan, no trees, no bbox pruning.

    Positive branch: min over every (robot sample, obstacle sample) pair.
    Negative branch: for each robot sample inside some obstacle, distance to
    the boundary samples of the obstacle(s) containing it; report minus the
    deepest such point.
    """
    if len(obs) == 0:
        return math.inf
    pts = geo.transform_points(shape.boundary.points, cfg)
    worst_pen = None
    for p in pts:
        pen = None
        for ob in obs.obstacles:
            if _oracle_in_loop(p, ob.corner_points):
                d = np.linalg.norm(ob.points - p, axis=1).min()
                pen = d if pen is None else min(pen, d)
        if pen is not None:
            worst_pen = pen if worst_pen is None else max(worst_pen, pen)
    if worst_pen is not None:
        return -worst_pen
    best = math.inf
    for ob in obs.obstacles:
        for p in pts:
            best = min(best, np.linalg.norm(ob.points - p, axis=1).min())
    return best


def _oracle_in_loop(p, corners) -> bool:
    # plain even-odd crossing count, written independently of the library
    x, y = p
    inside = False
    n = len(corners)
    for i in range(n):
        ax, ay = corners[i]
        bx, by = corners[(i + 1) % n]
        # on-segment check first (ties count as inside)
        ex, ey = bx - ax, by - ay
        rx, ry = x - ax, y - ay
        cross = rx * ey - ry * ex
        seg2 = ex * ex + ey * ey
        dot = rx * ex + ry * ey
        if cross * cross <= 1e-24 * max(seg2, 1e-300) and -1e-12 <= dot <= seg2 + 1e-12:
            return True
        if (ay > y) != (by > y):
            xc = ax + (y - ay) * ex / ey
            if x < xc:
                inside = not inside
    return inside


def oracle_extreme(shape: geo.RobotShape, cfg: geo.Configuration):
    """Brute-force argmax of distance-to-reference over transformed samples.

    Ties (distances equal within 1e-9, e.g. the four corners of a centered
    rectangle) resolve to the lowest sample index, matching the tie rule.
    """
    pts = geo.transform_points(shape.boundary.points, cfg)
    d = np.linalg.norm(pts - np.array([cfg.x, cfg.y]), axis=1)
    idx = int(np.flatnonzero(d >= d.max() - 1e-9)[0])
    return idx, pts[idx]


def circle_obstacle(cx, cy, r, max_gap=geo.DEFAULT_MAX_GAP, n=360):
    verts = maps.circle_vertices(cx, cy, r, n=n)
    return geo.ObstacleSet([geo.BoundarySamples(
        geo.resample_closed(verts, max_gap), max_gap)],
        [cx - 2 * r, cx + 2 * r, cy - 2 * r, cy + 2 * r])


# ---------------------------------------------------------------------------
# transforms

def test_transform_identity():
    pts = np.array([[1.0, 0.0]])
    out = geo.transform_points(pts, geo.Configuration(0, 0, 0))
    assert np.array_equal(out, pts)


def test_transform_quarter_turn():
    out = geo.transform_points(np.array([[1.0, 0.0]]),
                               geo.Configuration(0, 0, math.pi / 2))
    assert np.allclose(out, [[0.0, 1.0]], atol=1e-12)


def test_transform_translate_and_flip():
    out = geo.transform_points(np.array([[1.0, 0.0]]),
                               geo.Configuration(2, 3, math.pi))
    assert np.allclose(out, [[1.0, 3.0]], atol=1e-12)


def test_transform_round_trip():
    rng = np.random.default_rng(3)
    pts = rng.normal(size=(40, 2))
    for _ in range(25):
        cfg = geo.Configuration(*rng.uniform(-3, 3, 2), rng.uniform(-np.pi, np.pi))
        back = geo.transform_points(geo.transform_points(pts, cfg), cfg.inverse())
        assert np.abs(back - pts).max() < 1e-9


def test_transform_boundary_preserves_order_and_gap():
    shape = maps.rectangle_shape()
    cfg = geo.Configuration(0.3, -0.2, 1.1)
    bs = geo.transform_boundary(shape, cfg)
    assert len(bs) == len(shape.boundary)
    expect = geo.transform_points(shape.boundary.points, cfg)
    assert np.allclose(bs.points, expect, atol=1e-12)


def test_wrap_angle_bounds():
    for t in [-4 * math.pi, -math.pi, -1e-9, 0.0, math.pi, 3.5 * math.pi]:
        w = geo.wrap_angle(t)
        assert -math.pi < w <= math.pi
        assert abs(math.sin(w - t)) < 1e-12 and math.cos(w - t) > 0.999


# ---------------------------------------------------------------------------
# resampling and loop validation

def test_resample_square_count_and_spacing():
    verts = np.array([[0, 0], [1, 0], [1, 1], [0, 1]], dtype=float)
    pts = geo.resample_closed(verts, 0.1)
    assert pts.shape == (40, 2)  # perimeter 4 / 0.1
    gaps = np.linalg.norm(np.roll(pts, -1, axis=0) - pts, axis=1)
    assert gaps.max() <= 0.1 + 1e-9
    # original corners land on samples (cumulative lengths are multiples of 0.1)
    for v in verts:
        assert np.linalg.norm(pts - v, axis=1).min() < 1e-12


def test_boundary_samples_rejects_sparse():
    verts = np.array([[0, 0], [1, 0], [1, 1], [0, 1]], dtype=float)
    with pytest.raises(ValueError):
        geo.BoundarySamples(verts, max_gap=0.5)  # edges are length 1


def test_is_simple_loop():
    square = np.array([[0, 0], [1, 0], [1, 1], [0, 1]], dtype=float)
    bowtie = np.array([[0, 0], [1, 1], [1, 0], [0, 1]], dtype=float)
    assert geo.is_simple_loop(square)
    assert not geo.is_simple_loop(bowtie)


# ---------------------------------------------------------------------------
# containment

def unit_square_obs():
    verts = np.array([[-1, -1], [1, -1], [1, 1], [-1, 1]], dtype=float)
    bs = geo.BoundarySamples(geo.resample_closed(verts, 0.05), 0.05)
    return geo.ObstacleSet([bs], [-2, 2, -2, 2])


def test_point_in_obstacles_interior():
    assert geo.point_in_obstacles((0.0, 0.0), unit_square_obs())


def test_point_in_obstacles_exterior():
    assert not geo.point_in_obstacles((5.0, 5.0), unit_square_obs())


def test_point_on_vertex_counts_inside():
    # tie rule: boundary (including vertices) classifies as inside
    obs = unit_square_obs()
    assert geo.point_in_obstacles((1.0, 1.0), obs)
    assert geo.point_in_obstacles((1.0, 0.0), obs)


def test_points_in_obstacles_matches_oracle():
    obs = unit_square_obs()
    rng = np.random.default_rng(11)
    pts = rng.uniform(-1.8, 1.8, size=(300, 2))
    got = geo.points_in_obstacles(pts, obs)
    want = np.array([_oracle_in_loop(p, obs.obstacles[0].corner_points)
                     for p in pts])
    assert np.array_equal(got, want)


# ---------------------------------------------------------------------------
# clearance

def test_clearance_point_outside_circle():
    obs = circle_obstacle(3.0, 0.0, 1.0)
    shape = maps.point_shape()
    res = geo.clearance(shape, geo.Configuration(0, 0, 0), obs)
    assert abs(res.distance - 2.0) <= geo.DEFAULT_MAX_GAP
    assert abs(res.distance - oracle_clearance(shape, geo.Configuration(0, 0, 0), obs)) < 1e-12


def test_clearance_point_at_circle_center():
    obs = circle_obstacle(3.0, 0.0, 1.0)
    shape = maps.point_shape()
    res = geo.clearance(shape, geo.Configuration(3.0, 0.0, 0), obs)
    assert abs(res.distance - (-1.0)) <= geo.DEFAULT_MAX_GAP
    assert abs(res.distance - oracle_clearance(shape, geo.Configuration(3.0, 0.0, 0), obs)) < 1e-12


def test_clearance_empty_obstacles():
    obs = geo.ObstacleSet([], [0, 1, 0, 1])
    res = geo.clearance(maps.rectangle_shape(), geo.Configuration(0.5, 0.5, 0), obs)
    assert res.distance == math.inf
    assert res.robot_witness is None and res.obstacle_witness is None


def test_clearance_witnesses_realize_distance():
    obs = circle_obstacle(2.0, 0.5, 0.6)
    shape = maps.rectangle_shape()
    res = geo.clearance(shape, geo.Configuration(0.2, 0.4, 0.7), obs)
    assert res.distance > 0
    assert abs(np.linalg.norm(res.robot_witness - res.obstacle_witness)
               - res.distance) < 1e-12


def test_clearance_matches_oracle_randomized():
    obs = maps.toy_map(max_gap=0.05)
    shape = maps.rectangle_shape(max_gap=0.05)
    rng = np.random.default_rng(7)
    for _ in range(30):
        cfg = geo.Configuration(rng.uniform(0, 5), rng.uniform(0, 5),
                                rng.uniform(-np.pi, np.pi))
        got = geo.clearance(shape, cfg, obs).distance
        want = oracle_clearance(shape, cfg, obs)
        assert abs(got - want) < 1e-9, cfg


def test_clearance_many_matches_scalar():
    obs = maps.toy_map(max_gap=0.05)
    shape = maps.rectangle_shape(max_gap=0.05)
    rng = np.random.default_rng(19)
    cfgs = np.column_stack([rng.uniform(0, 5, 50), rng.uniform(0, 5, 50),
                            rng.uniform(-np.pi, np.pi, 50)])
    batch = geo.clearance_many(shape, cfgs, obs)
    for k in range(cfgs.shape[0]):
        one = geo.clearance(shape, geo.Configuration(*cfgs[k]), obs).distance
        assert abs(batch[k] - one) < 1e-12


def test_clearance_refinement_bounded_by_max_gap():
    # halving max_gap never increases clearance by more than the old gap
    shape = maps.point_shape()
    cfg = geo.Configuration(0.0, 0.0, 0.0)
    coarse = circle_obstacle(3.0, 0.0, 1.0, max_gap=0.08)
    fine = circle_obstacle(3.0, 0.0, 1.0, max_gap=0.04)
    dc = geo.clearance(shape, cfg, coarse).distance
    df = geo.clearance(shape, cfg, fine).distance
    assert df <= dc + 1e-12
    assert dc - df <= 0.08


# ---------------------------------------------------------------------------
# extreme point and safety ball

def test_extreme_point_rectangle():
    shape = maps.rectangle_shape()  # 0.35 x 0.2, reference at center
    p = geo.extreme_point(shape, geo.Configuration(0, 0, 0))
    assert np.allclose(p, [0.175, 0.1], atol=1e-12)
    assert abs(shape.extreme_radius - math.hypot(0.175, 0.1)) < 1e-12
    assert abs(shape.extreme_radius - 0.20156) < 5e-5


def test_extreme_point_identity_is_offset():
    for factory in (maps.rectangle_shape, maps.triangle_shape, maps.cross_shape):
        shape = factory()
        p = geo.extreme_point(shape, geo.Configuration(0, 0, 0))
        assert np.array_equal(p, shape.extreme_offset)


def test_extreme_point_half_turn_flips():
    shape = maps.rectangle_shape()
    s = np.array([0.7, -0.3])
    p0 = geo.extreme_point(shape, geo.Configuration(s[0], s[1], 0))
    p1 = geo.extreme_point(shape, geo.Configuration(s[0], s[1], math.pi))
    assert np.allclose(p1 - s, -(p0 - s), atol=1e-12)


def test_extreme_point_matches_brute_force():
    rng = np.random.default_rng(23)
    shape = maps.rectangle_shape()
    for _ in range(100):
        cfg = geo.Configuration(*rng.uniform(-2, 2, 2), rng.uniform(-np.pi, np.pi))
        idx, pt = oracle_extreme(shape, cfg)
        assert idx == shape.extreme_index  # tie rule: lowest index wins
        assert np.allclose(geo.extreme_point(shape, cfg), pt, atol=1e-9)


def test_build_lsb_center_and_radius():
    ball = geo.build_lsb(maps.rectangle_shape(), geo.Configuration(1, 1, 0), 0.5)
    assert np.allclose(ball.center, (1.175, 1.1), atol=1e-12)
    assert ball.radius == 0.5
    assert ball.feasible


def test_build_lsb_infeasible_radii():
    shape = maps.rectangle_shape()
    cfg = geo.Configuration(0, 0, 0)
    assert not geo.build_lsb(shape, cfg, 0.0).feasible
    assert not geo.build_lsb(shape, cfg, -0.2).feasible


# ---------------------------------------------------------------------------
# swept motion

def test_sweep_zero_motion():
    shape = maps.rectangle_shape()
    cfg = geo.Configuration(0.4, 0.2, 0.3)
    assert geo.sweep_displacement(shape, cfg, cfg, 10) == 0.0


def test_sweep_pure_translation():
    shape = maps.rectangle_shape()
    a = geo.Configuration(0, 0, 0.9)
    b = geo.Configuration(0.3, 0.4, 0.9)
    assert abs(geo.sweep_displacement(shape, a, b, 5) - 0.5) < 1e-12


def test_sweep_pure_rotation_chord():
    shape = maps.rectangle_shape()
    for dth in (0.3, 1.2, 2.5):
        a = geo.Configuration(1, 1, 0.0)
        b = geo.Configuration(1, 1, dth)
        n = 200
        got = geo.sweep_displacement(shape, a, b, n)
        chord = shape.extreme_radius * 2.0 * math.sin(dth / 2.0)
        assert abs(got - chord) <= 1.0 / n
        # dense-interpolation oracle agrees
        dense = geo.sweep_displacement(shape, a, b, 2000)
        assert abs(dense - chord) < 1e-5


def test_sweep_monotone_in_density():
    # more interpolation points can only find a larger (or equal) sup
    shape = maps.triangle_shape()
    a = geo.Configuration(0, 0, -2.0)
    b = geo.Configuration(0.5, -0.2, 2.8)
    d_coarse = geo.sweep_displacement(shape, a, b, 3)
    d_fine = geo.sweep_displacement(shape, a, b, 99)
    assert d_fine >= d_coarse - 1e-12


def test_check_step_safe_stationary():
    obs = maps.toy_map()
    shape = maps.rectangle_shape()
    cfg = geo.Configuration(0.5, 0.5, 0.0)
    ok, worst = geo.check_step_safe(shape, cfg, cfg, obs, 5)
    assert ok and worst > 0


def test_check_step_safe_lemma_property():
    # displacement-bounded steps stay collision free; verify against the
    # same check at 10x interpolation density
    obs = maps.toy_map(max_gap=0.02)
    shape = maps.rectangle_shape(max_gap=0.02)
    rng = np.random.default_rng(101)
    n_checked = 0
    while n_checked < 50:
        a = geo.Configuration(rng.uniform(0, 5), rng.uniform(0, 5),
                              rng.uniform(-np.pi, np.pi))
        d0 = geo.clearance(shape, a, obs).distance
        if d0 <= 0.01:
            continue
        b = geo.Configuration(a.x + rng.uniform(-0.3, 0.3) * d0,
                              a.y + rng.uniform(-0.3, 0.3) * d0,
                              a.theta + rng.uniform(-0.5, 0.5))
        if geo.sweep_displacement(shape, a, b, 50) > d0:
            continue
        ok, _ = geo.check_step_safe(shape, a, b, obs, 50)
        ok10, _ = geo.check_step_safe(shape, a, b, obs, 500)
        assert ok and ok10
        n_checked += 1


def test_check_step_safe_thin_wall_density():
    # teleporting across a thin wall: 2 interpolation points can miss it,
    # 50 must catch it
    wall = np.array([[2.0, -1.0], [2.02, -1.0], [2.02, 1.0], [2.0, 1.0]])
    bs = geo.BoundarySamples(geo.resample_closed(wall, 0.01), 0.01)
    obs = geo.ObstacleSet([bs], [-1, 5, -2, 2])
    shape = maps.rectangle_shape()
    a = geo.Configuration(0.0, 0.0, 0.0)
    b = geo.Configuration(4.0, 0.0, 0.0)
    ok2, _ = geo.check_step_safe(shape, a, b, obs, 2)
    ok50, worst50 = geo.check_step_safe(shape, a, b, obs, 50)
    assert ok2  # endpoints are clear of the wall
    assert not ok50 and worst50 < 0


def test_interpolate_cfgs_shortest_arc():
    a = geo.Configuration(0, 0, 3.0)
    b = geo.Configuration(1, 0, -3.0)  # shortest arc crosses pi, not zero
    mid = geo.interpolate_cfgs(a, b, np.array([0.5]))[0]
    assert abs(abs(mid[2]) - math.pi) < 1e-9
