import math

import numpy as np
import pytest

from lsbnav import dataset as ds
from lsbnav import geometry as geo
from lsbnav import maps


def tiny_world():
    obs = maps.toy_map(max_gap=0.05)
    shape = maps.rectangle_shape(max_gap=0.05)
    return shape, obs


# ---------------------------------------------------------------------------
# grids and generation

def test_theta_grid_four():
    got = sorted(ds.theta_grid(4).tolist())
    want = sorted([math.pi, -math.pi / 2, 0.0, math.pi / 2])
    assert np.allclose(got, want, atol=1e-12)
    assert all(-math.pi < t <= math.pi for t in got)


def test_theta_grid_spacing():
    g = ds.theta_grid(36)
    assert g.shape == (36,)
    # wrapped uniform grid: consecutive raw angles differ by 2 pi / 36
    raw = -math.pi + 2 * math.pi * np.arange(36) / 36
    assert np.allclose(np.sin(g), np.sin(raw), atol=1e-12)
    assert np.allclose(np.cos(g), np.cos(raw), atol=1e-12)


def test_generate_counts_and_bounds():
    shape, obs = tiny_world()
    s = ds.generate(shape, obs, n_locations=7, n_theta=5, seed=42)
    assert len(s) == 35
    wb = obs.world_bounds
    assert (s.xytheta[:, 0] >= wb[0]).all() and (s.xytheta[:, 0] <= wb[1]).all()
    assert (s.xytheta[:, 1] >= wb[2]).all() and (s.xytheta[:, 1] <= wb[3]).all()
    # location-major ordering: heading cycles fastest
    assert np.allclose(s.xytheta[:5, 0], s.xytheta[0, 0])
    assert np.allclose(s.xytheta[:5, 2], ds.theta_grid(5), atol=1e-12)


def test_generate_single_location_four_thetas():
    shape, obs = tiny_world()
    s = ds.generate(shape, obs, n_locations=1, n_theta=4, seed=0)
    assert len(s) == 4
    assert np.allclose(sorted(s.xytheta[:, 2]),
                       sorted(ds.theta_grid(4)), atol=1e-12)


def test_generate_deterministic():
    shape, obs = tiny_world()
    a = ds.generate(shape, obs, 5, 3, seed=9)
    b = ds.generate(shape, obs, 5, 3, seed=9)
    assert np.array_equal(a.xytheta, b.xytheta)
    assert np.array_equal(a.d, b.d)
    c = ds.generate(shape, obs, 5, 3, seed=10)
    assert not np.array_equal(a.xytheta, c.xytheta)


def test_generate_labels_match_scalar_clearance():
    shape, obs = tiny_world()
    s = ds.generate(shape, obs, 4, 3, seed=1)
    for k in range(len(s)):
        want = geo.clearance(shape, geo.Configuration(*s.xytheta[k]), obs).distance
        assert abs(s.d[k] - want) < 1e-12


def test_generate_grid_cell_centers():
    shape, obs = tiny_world()
    s = ds.generate_grid(shape, obs, nx=2, ny=2, n_theta=3)
    assert len(s) == 12
    xs = sorted(set(np.round(s.xytheta[:, 0], 9)))
    ys = sorted(set(np.round(s.xytheta[:, 1], 9)))
    assert np.allclose(xs, [1.25, 3.75])  # centers of a 2-cell split of [0, 5]
    assert np.allclose(ys, [1.25, 3.75])


# ---------------------------------------------------------------------------
# normalisation statistics

def test_fit_stats_hand_case():
    # d in {0, e-1} with epsilon forced to 1: log targets {0, 1}
    xyt = np.array([[0.0, 0.0, 0.0], [1.0, 1.0, 1.0]])
    s = ds.ClearanceSamples(xyt, np.array([0.0, math.e - 1.0]))
    st = ds.fit_norm_stats(s, epsilon=1.0)
    assert st.epsilon == 1.0
    assert abs(st.mu_log - 0.5) < 1e-12
    assert abs(st.sigma_log - 0.5) < 1e-12


def test_fit_stats_epsilon_rule():
    xyt = np.random.default_rng(0).normal(size=(4, 3))
    s = ds.ClearanceSamples(xyt, np.array([-0.25, 0.1, 0.5, 1.0]))
    st = ds.fit_norm_stats(s, margin=0.1)
    assert abs(st.epsilon - 0.35) < 1e-12  # |min d| + margin


def test_fit_stats_degenerate_targets():
    xyt = np.random.default_rng(1).normal(size=(3, 3))
    s = ds.ClearanceSamples(xyt, np.zeros(3))
    with pytest.raises(ds.DegenerateFeatureError):
        ds.fit_norm_stats(s, epsilon=1.0)  # log(1) = 0 everywhere


def test_fit_stats_degenerate_single_theta():
    rng = np.random.default_rng(2)
    xyt = np.column_stack([rng.uniform(0, 5, 8), rng.uniform(0, 5, 8),
                           np.zeros(8)])
    s = ds.ClearanceSamples(xyt, rng.uniform(0.1, 1.0, 8))
    with pytest.raises(ds.DegenerateFeatureError):
        ds.fit_norm_stats(s)


def test_normalized_inputs_are_standard():
    shape, obs = tiny_world()
    s = ds.generate(shape, obs, 50, 6, seed=3)
    st = ds.fit_norm_stats(s)
    z = ds.normalize_inputs(s.xytheta, st)
    assert np.abs(z.mean(axis=0)).max() < 1e-9
    assert np.abs(z.std(axis=0) - 1.0).max() < 1e-9
    zt = ds.normalize_target(s.d, st)
    assert abs(zt.mean()) < 1e-9 and abs(zt.std() - 1.0) < 1e-9


def test_target_round_trip():
    st = ds.NormStats(mu_x=(0, 0, 0), sigma_x=(1, 1, 1),
                      mu_log=-0.3, sigma_log=0.7, epsilon=0.4)
    rng = np.random.default_rng(4)
    d = rng.uniform(-0.39, 3.0, size=1000)
    back = ds.denormalize(ds.normalize_target(d, st), st)
    assert np.abs(back - d).max() < 1e-9


def test_target_hand_values():
    st = ds.NormStats(mu_x=(0, 0, 0), sigma_x=(1, 1, 1),
                      mu_log=0.0, sigma_log=1.0, epsilon=1.0)
    assert ds.normalize_target(0.0, st) == 0.0
    assert abs(ds.normalize_target(-0.5, st) - math.log(0.5)) < 1e-12


def test_normalize_target_shift_violation():
    st = ds.NormStats(mu_x=(0, 0, 0), sigma_x=(1, 1, 1),
                      mu_log=0.0, sigma_log=1.0, epsilon=0.2)
    with pytest.raises(ds.NonPositiveShiftedError):
        ds.normalize_target(-0.2, st)
    with pytest.raises(ds.NonPositiveShiftedError):
        ds.normalize_target(np.array([0.5, -0.3]), st)


# ---------------------------------------------------------------------------
# split and audit

def test_split_sizes_and_disjoint():
    s = ds.ClearanceSamples(np.arange(30, dtype=float).reshape(10, 3),
                            np.arange(10, dtype=float))
    a, b = ds.split(s, 0.8, seed=5)
    assert len(a) == 8 and len(b) == 2
    together = sorted(np.concatenate([a.d, b.d]).tolist())
    assert together == sorted(s.d.tolist())


def test_split_deterministic():
    s = ds.ClearanceSamples(np.arange(60, dtype=float).reshape(20, 3),
                            np.arange(20, dtype=float))
    a1, b1 = ds.split(s, 0.5, seed=6)
    a2, b2 = ds.split(s, 0.5, seed=6)
    assert np.array_equal(a1.d, a2.d) and np.array_equal(b1.d, b2.d)


def test_audit_clean_and_corrupted():
    shape, obs = tiny_world()
    s = ds.generate(shape, obs, 20, 4, seed=7)
    assert ds.audit(s, shape, obs, frac=1.0) == 0
    bad = ds.ClearanceSamples(s.xytheta.copy(), s.d.copy())
    bad.d[13] += 0.5
    assert ds.audit(bad, shape, obs, frac=1.0) == 1


# ---------------------------------------------------------------------------
# storage

def test_save_load_round_trip(tmp_path):
    shape, obs = tiny_world()
    s = ds.generate(shape, obs, 10, 4, seed=8)
    p = tmp_path / "x.lsbd"
    ds.save(p, s)
    back = ds.load(p)
    # storage is float32: round-tripped values equal the rounded originals
    assert np.array_equal(back.xytheta, np.float64(np.float32(s.xytheta)))
    assert np.array_equal(back.d, np.float64(np.float32(s.d)))


def test_save_load_byte_identical(tmp_path):
    shape, obs = tiny_world()
    s = ds.generate(shape, obs, 6, 3, seed=12)
    p1, p2 = tmp_path / "a.lsbd", tmp_path / "b.lsbd"
    ds.save(p1, s)
    ds.save(p2, s)
    assert p1.read_bytes() == p2.read_bytes()


def test_load_rejects_garbage(tmp_path):
    p = tmp_path / "bad.lsbd"
    p.write_bytes(b"NOPE" + b"\x00" * 16)
    with pytest.raises(ds.DatasetFormatError):
        ds.load(p)


def test_load_rejects_truncation(tmp_path):
    shape, obs = tiny_world()
    s = ds.generate(shape, obs, 5, 2, seed=13)
    p = tmp_path / "t.lsbd"
    ds.save(p, s)
    blob = p.read_bytes()
    p.write_bytes(blob[:-7])
    with pytest.raises(ds.DatasetFormatError):
        ds.load(p)


def test_stats_save_load_round_trip(tmp_path):
    st = ds.NormStats(mu_x=(0.1, -0.2, 0.3), sigma_x=(1.0, 2.0, 0.5),
                      mu_log=-0.77, sigma_log=0.31, epsilon=0.42)
    p = tmp_path / "stats.json"
    ds.save_stats(p, st)
    back = ds.load_stats(p)
    assert back == st
