import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import sort_oracle
from smallgrasp.errors import EmptyRegion
from smallgrasp.grasp_planner import (PREGRASP_HEIGHT, ROI_SIDE, TOP_K, HeightMap, apex_center,
                                      grasp_pose, load_heightmap, plan_grasp, save_heightmap,
                                      top_k_mean)


def random_map(rng, quantize=False):
    grid = rng.normal(10, 4, size=(80, 90))
    if quantize:
        grid = np.round(grid)            # plenty of ties at the k-th value
    grid[rng.random(grid.shape) < 0.03] = np.nan
    hm = HeightMap(grid, origin=rng.uniform(-50, 50, 2), resolution=0.5)
    hm.roi_center = (hm.origin[0] + rng.uniform(15, 30), hm.origin[1] + rng.uniform(15, 25))
    return hm


def test_defaults_match_published_constants():
    assert ROI_SIDE == 24.0 and TOP_K == 800
    assert PREGRASP_HEIGHT == 600.0
    hm = HeightMap(np.zeros((100, 100)), (0, 0), roi_center=(25, 25))
    rs, cs = hm.roi_slices()
    assert (rs.stop - rs.start, cs.stop - cs.start) == (48, 48)


def test_top_k_matches_sort_oracle_on_random_maps():
    rng = np.random.default_rng(0)
    for trial in range(100):
        hm = random_map(rng, quantize=trial % 2 == 1)
        k = int(rng.choice([1, 7, 800, 2304, 5000]))
        np.testing.assert_allclose(top_k_mean(hm, k), sort_oracle(hm, k), rtol=0, atol=1e-9)


def test_flat_roi_with_all_cells_is_roi_center():
    hm = HeightMap(np.full((100, 100), 3.0), (0, 0), roi_center=(25.0, 25.0))
    np.testing.assert_allclose(top_k_mean(hm, 48 * 48), [25.0, 25.0, 3.0], atol=1e-12)


def test_flat_roi_at_default_k_follows_row_major_tie_break():
    hm = HeightMap(np.full((100, 100), 3.0), (0, 0), roi_center=(25.0, 25.0))
    p = top_k_mean(hm)
    np.testing.assert_allclose(p, sort_oracle(hm, TOP_K), atol=1e-12)
    assert p[1] < 25.0     # the first 800 cells are the lowest rows


def test_single_peak_k1():
    grid = np.zeros((60, 60))
    grid[31, 22] = 9.0
    hm = HeightMap(grid, (-10, 5), roi_center=(1.0, 20.0))
    np.testing.assert_allclose(top_k_mean(hm, 1), [-10 + 22.5 * 0.5, 5 + 31.5 * 0.5, 9.0])


def test_empty_region():
    hm = HeightMap(np.full((60, 60), np.nan), (0, 0), roi_center=(15, 15))
    with pytest.raises(EmptyRegion):
        top_k_mean(hm)
    with pytest.raises(EmptyRegion):
        top_k_mean(HeightMap(np.zeros((60, 60)), (0, 0), roi_center=(500, 500)))
    with pytest.raises(EmptyRegion):
        plan_grasp(HeightMap(np.full((10, 10), np.nan), (0, 0)), np.zeros(3))


def test_top_k_permutation_invariant_without_ties():
    rng = np.random.default_rng(1)
    grid = rng.random((48, 48))
    hm = HeightMap(grid, (0, 0), roi_center=(12, 12))
    p = top_k_mean(hm, 300)
    # transposing the map swaps x and y but keeps the selected set
    ht = HeightMap(grid.T.copy(), (0, 0), roi_center=(12, 12))
    np.testing.assert_allclose(top_k_mean(ht, 300)[[1, 0, 2]], p, atol=1e-12)


@pytest.mark.parametrize("v,theta", [((0, 1), 0.0), ((1, 1), np.pi / 4), ((1, 0), np.pi / 2),
                                     ((-1, 0), -np.pi / 2), ((0, -1), np.pi), ((0, 0), 0.0),
                                     ((-2, -2), -3 * np.pi / 4)])
def test_grasp_pose_branches(v, theta):
    t = grasp_pose([v[0] + 5, v[1] - 3, 7], [5, -3, 40])
    assert t.theta == pytest.approx(theta)
    np.testing.assert_array_equal(t.v, np.array([v[0], v[1], -33.0]))


def test_grasp_pose_matches_principal_branch():
    rng = np.random.default_rng(2)
    for _ in range(500):
        v = rng.normal(size=3)
        v[1] = abs(v[1]) + 1e-3
        assert grasp_pose(v, np.zeros(3)).theta == pytest.approx(np.arctan(v[0] / v[1]), abs=1e-12)


@given(st.floats(-100, 100), st.floats(-100, 100), st.floats(1e-3, 1e3))
def test_grasp_pose_scale_invariant(vx, vy, s):
    a = grasp_pose([vx, vy, 1.0], np.zeros(3)).theta
    b = grasp_pose([s * vx, s * vy, 1.0], np.zeros(3)).theta
    assert np.isfinite(a)
    if vx == 0 and vy == 0:
        assert a == b == 0.0
    elif np.hypot(vx, vy) * min(s, 1.0) > 1e-300:
        assert b == pytest.approx(a, abs=1e-12)


def pile(apex_xy, height, width=6.0, n=120, res=0.5, second=None):
    xs = (np.arange(n) + 0.5) * res
    X, Y = np.meshgrid(xs, xs)
    z = height * np.exp(-((X - apex_xy[0]) ** 2 + (Y - apex_xy[1]) ** 2) / (2 * width ** 2))
    if second is not None:
        z = np.maximum(z, height * np.exp(-((X - second[0]) ** 2 + (Y - second[1]) ** 2)
                                          / (2 * width ** 2)))
    return HeightMap(z, (0, 0), res)


def test_plan_grasp_lands_near_apex():
    hm = pile((31.3, 27.8), 20.0)
    t = plan_grasp(hm, np.array([30.0, 30.0, 40.0]))
    assert np.hypot(t.p_mean[0] - 31.3, t.p_mean[1] - 27.8) <= hm.resolution
    np.testing.assert_array_equal(t.v, t.p_mean - t.p_cen)
    names = [w["name"] for w in t.waypoints]
    assert names[0] == "pregrasp" and names[-1] == "close"
    assert t.waypoints[0]["position"][2] == PREGRASP_HEIGHT


def test_symmetric_piles_stay_on_symmetry_line():
    hm = pile((24.0, 30.0), 10.0, width=3.0, second=(36.0, 30.0))
    hm.roi_center = (30.0, 30.0)
    p = top_k_mean(hm, 48 * 48)
    assert p[0] == pytest.approx(30.0, abs=1e-9)


def test_plan_grasp_deterministic():
    hm = pile((20.0, 25.0), 15.0)
    a = plan_grasp(HeightMap(hm.grid.copy(), hm.origin), np.zeros(3))
    b = plan_grasp(HeightMap(hm.grid.copy(), hm.origin), np.zeros(3))
    np.testing.assert_array_equal(a.p_mean, b.p_mean)
    assert a.theta == b.theta and a.waypoints == b.waypoints


def test_apex_center_ignores_nan():
    grid = np.zeros((10, 10))
    grid[2, 3] = np.nan
    grid[7, 1] = 4.0
    assert apex_center(HeightMap(grid, (0, 0), 1.0)) == (1.5, 7.5)


def test_heightmap_roundtrip(tmp_path):
    rng = np.random.default_rng(3)
    hm = random_map(rng)
    save_heightmap(hm, tmp_path / "h.npz")
    back = load_heightmap(tmp_path / "h.npz")
    np.testing.assert_array_equal(back.grid, hm.grid)
    assert back.origin == hm.origin and back.roi_center == pytest.approx(hm.roi_center)
    np.testing.assert_array_equal(top_k_mean(back), top_k_mean(hm))
