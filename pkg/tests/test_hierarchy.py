import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from smoothquad.hierarchy import (HierarchicalCoords, PathGrid, ShapeError, bridge_increments, bridge_matrix,
                                  build_rotation, haar_levels, merge_coords, split_coords)


def test_grid_dt_times_n_is_T():
    g = PathGrid(7, 0.3)
    assert g.dt * g.n_steps == pytest.approx(0.3, rel=1e-15)
    with pytest.raises(ValueError):
        PathGrid(0)
    with pytest.raises(ValueError):
        PathGrid(4, 1.0, 0)


def test_rotation_identity_for_one_asset():
    np.testing.assert_array_equal(build_rotation(1).A, [[1.0]])


def test_rotation_two_assets():
    A = build_rotation(2).A
    np.testing.assert_allclose(A[0], [1 / math.sqrt(2)] * 2, atol=1e-15)
    np.testing.assert_allclose(A @ A.T, np.eye(2), atol=1e-12)


def test_rotation_four_assets_by_explicit_product():
    A = build_rotation(4).A
    np.testing.assert_allclose(A[0], [0.5] * 4, atol=1e-15)
    # explicit triple loop, not numpy matmul
    for i in range(4):
        for j in range(4):
            s = sum(A[k, i] * A[k, j] for k in range(4))
            assert abs(s - (i == j)) < 1e-12


@given(st.integers(1, 40))
def test_rotation_orthonormal(d):
    A = build_rotation(d).A
    assert np.max(np.abs(A @ A.T - np.eye(d))) < 1e-12
    assert np.max(np.abs(A[0] - 1 / math.sqrt(d))) < 1e-12


def test_bridge_zero_input():
    assert np.all(bridge_increments(PathGrid(4), 0.0, np.zeros(3)) == 0)


def test_bridge_linear_term():
    np.testing.assert_allclose(bridge_increments(PathGrid(4), 1.0, np.zeros(3)), [0.25] * 4, atol=1e-15)


def test_bridge_two_steps_matches_path_covariance():
    grid = PathGrid(2)
    L = bridge_matrix(grid)
    a, b = 0.7, -1.3
    dw = bridge_increments(grid, a, [b])
    assert dw.sum() == pytest.approx(a, abs=1e-15)
    # midpoint sd of the bridge on [0, 1] is 1/2
    np.testing.assert_allclose(dw, [a / 2 + b / 2, a / 2 - b / 2], atol=1e-15)
    # (W(1/2), W(1)) has covariance [[1/2, 1/2], [1/2, 1]]
    W = np.cumsum(L, axis=0)
    np.testing.assert_allclose(W @ W.T, [[0.5, 0.5], [0.5, 1.0]], atol=1e-15)


@pytest.mark.parametrize("N,T", [(1, 1.0), (3, 2.0), (8, 1.0), (12, 0.5), (64, 1.0)])
def test_bridge_covariance(N, T):
    L = bridge_matrix(PathGrid(N, T))
    assert np.max(np.abs(L @ L.T - (T / N) * np.eye(N))) < 1e-12


def test_bridge_sum_is_terminal():
    rng = np.random.default_rng(1)
    zc, zf = rng.standard_normal(5), rng.standard_normal((5, 7))
    dw = bridge_increments(PathGrid(8, 2.0), zc, zf)
    np.testing.assert_allclose(dw.sum(axis=1), math.sqrt(2.0) * zc, atol=1e-13)


def test_bridge_shape_error():
    with pytest.raises(ShapeError):
        bridge_increments(PathGrid(4), 0.0, np.zeros(2))


def test_haar_levels():
    lv = haar_levels(8)
    assert [(h.n, h.k) for h in lv] == [(-1, 0), (0, 0), (1, 0), (1, 1), (2, 0), (2, 1), (2, 2), (2, 3)]
    assert lv[5].support() == (0.25, 0.5)
    with pytest.raises(ValueError):
        haar_levels(6)


def test_split_one_asset():
    c = split_coords([0.3, 1.0, 2.0], build_rotation(1), PathGrid(3))
    assert c.y1 == 0.3 and c.y_rest.size == 0


def test_split_two_assets_symmetric():
    c = split_coords([1.0, 0.0, 1.0, 0.0], build_rotation(2), PathGrid(2, d=2))
    assert c.y1 == pytest.approx(math.sqrt(2), abs=1e-15)
    assert abs(c.y_rest[0]) < 1e-15


def test_split_four_assets_unit_coarse():
    z = np.zeros(8)
    z[0] = 1.0
    c = split_coords(z, build_rotation(4), PathGrid(2, d=4))
    assert c.y1 == pytest.approx(0.5, abs=1e-15)


@settings(max_examples=50)
@given(st.integers(1, 5), st.integers(1, 6), st.integers(0, 2**31))
def test_split_merge_roundtrip(d, N, seed):
    z = np.random.default_rng(seed).standard_normal(d * N)
    c = split_coords(z, build_rotation(d), PathGrid(N, d=d))
    assert c.size == d * N
    np.testing.assert_allclose(merge_coords(c, build_rotation(d)), z, atol=1e-12)


def test_coords_reject_nonfinite():
    with pytest.raises(ValueError):
        HierarchicalCoords(float("nan"), np.zeros(0), np.zeros((1, 2)))
