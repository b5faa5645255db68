"""Pyramid structure, occupancy closure, and interpolation algebra."""

import numpy as np
import pytest

from vqad.grid import (
    EmptyOccupancyError,
    GridConfig,
    OutsideDomainError,
    build_pyramid,
    dense_occupancy,
    interpolate,
    sphere_occupancy,
    vertex_count,
)


def test_dense_3d_vertex_count():
    cfg = GridConfig(levels=1, base_resolution=2, feature_width=2, dim=3)
    pyramid = build_pyramid(cfg)
    assert vertex_count(pyramid, 0) == 27  # (R+1)^3


def test_dense_2d_vertex_count():
    cfg = GridConfig(levels=1, base_resolution=4, feature_width=2, dim=2)
    assert build_pyramid(cfg).vertex_count(0) == 25


def test_resolutions_double_from_32():
    cfg = GridConfig(levels=4, base_resolution=32, feature_width=4, dim=3)
    assert cfg.resolutions == [32, 64, 128, 256]


def test_resolution_must_double_is_structural():
    cfg = GridConfig(levels=3, base_resolution=8, feature_width=4, dim=2)
    assert cfg.resolutions == [8, 16, 32]


def test_sphere_occupancy_parent_closure():
    cfg = GridConfig(levels=2, base_resolution=2, feature_width=2, dim=3)
    pyramid = build_pyramid(cfg, occupancy=sphere_occupancy(radius=0.5))
    coarse = pyramid.mask.cells[0].reshape(2, 2, 2)
    fine = pyramid.mask.cells[1].reshape(4, 4, 4)
    for idx in np.argwhere(fine):
        assert coarse[tuple(idx // 2)]


def test_coarsest_level_fully_occupied():
    cfg = GridConfig(levels=2, base_resolution=4, feature_width=2, dim=2)
    pyramid = build_pyramid(cfg, occupancy=sphere_occupancy(radius=0.3))
    assert pyramid.mask.cells[0].all()


def test_empty_occupancy_raises():
    cfg = GridConfig(levels=2, base_resolution=4, feature_width=2, dim=2)
    with pytest.raises(EmptyOccupancyError):
        build_pyramid(cfg, occupancy=lambda centers: np.zeros(len(centers), bool))


def test_interpolation_exact_at_vertices():
    cfg = GridConfig(levels=1, base_resolution=4, feature_width=3, dim=2)
    pyramid = build_pyramid(cfg, seed=1)
    res = cfg.resolutions[0]
    for ij in [(0, 0), (2, 3), (4, 4)]:
        x = np.array(ij) / res * 2.0 - 1.0
        row = pyramid.vertex_rows[0][np.ravel_multi_index(ij, (res + 1, res + 1))]
        np.testing.assert_allclose(
            pyramid.interpolate(x, lod=0),
            pyramid.levels[0][row],
            rtol=0,
            atol=1e-12,
        )


def test_cell_center_is_corner_mean():
    cfg = GridConfig(levels=1, base_resolution=2, feature_width=2, dim=3)
    pyramid = build_pyramid(cfg, seed=2)
    center = np.array([-0.5, -0.5, -0.5])  # center of cell (0, 0, 0)
    rows, weights = pyramid.gather_plan(center[None], 0)[0]
    np.testing.assert_allclose(weights, np.full((1, 8), 0.125), atol=1e-12)
    expected = pyramid.levels[0][rows[0]].mean(axis=0)
    np.testing.assert_allclose(pyramid.interpolate(center, 0), expected, atol=1e-12)


def test_interpolation_affine_along_axis():
    cfg = GridConfig(levels=1, base_resolution=4, feature_width=2, dim=2)
    pyramid = build_pyramid(cfg, seed=3, dtype=np.float64)
    # three collinear points inside one cell row
    y = 0.3
    xs = np.array([[0.05, y], [0.1, y], [0.15, y]])
    vals = pyramid.interpolate(xs, 0)
    np.testing.assert_allclose(vals[1], (vals[0] + vals[2]) / 2, atol=1e-12)


def test_partition_of_unity():
    cfg = GridConfig(levels=3, base_resolution=4, feature_width=2, dim=3)
    pyramid = build_pyramid(cfg, seed=4)
    rng = np.random.default_rng(0)
    x = rng.uniform(-1, 1, size=(50, 3))
    for rows, weights in pyramid.gather_plan(x, 2):
        np.testing.assert_allclose(weights.sum(axis=1), 1.0, atol=1e-12)


def test_zero_fill_matches_coarser_lod():
    # region occupied at the coarsest level but not at level 1: the finer
    # query must equal the coarser one exactly
    cfg = GridConfig(levels=2, base_resolution=4, feature_width=2, dim=2)
    pyramid = build_pyramid(cfg, occupancy=sphere_occupancy(radius=0.4), seed=5)
    x = np.array([0.9, 0.9])  # far outside the sphere
    cell, _, occupied = pyramid.locate(x[None], 1)
    assert not occupied[0]
    np.testing.assert_array_equal(
        pyramid.interpolate(x, lod=1), pyramid.interpolate(x, lod=0)
    )


def test_writing_zeros_in_finer_levels_is_a_noop():
    cfg = GridConfig(levels=3, base_resolution=2, feature_width=2, dim=2)
    pyramid = build_pyramid(cfg, seed=6)
    rng = np.random.default_rng(1)
    x = rng.uniform(-1, 1, size=(20, 2))
    truncated = pyramid.interpolate(x, lod=1)
    pyramid.levels[2][:] = 0.0
    full = pyramid.interpolate(x, lod=2)
    np.testing.assert_array_equal(full, truncated)


def test_outside_domain_raises():
    cfg = GridConfig(levels=1, base_resolution=2, feature_width=2, dim=2)
    pyramid = build_pyramid(cfg)
    with pytest.raises(OutsideDomainError):
        pyramid.interpolate(np.array([1.2, 0.0]), 0)


def test_interpolate_requires_raw_storage():
    cfg = GridConfig(levels=1, base_resolution=2, feature_width=2, dim=2)
    pyramid = build_pyramid(cfg)
    pyramid.set_storage("baked", [np.zeros(pyramid.vertex_count(0), dtype=np.int64)])
    with pytest.raises(ValueError, match="raw"):
        interpolate(pyramid, np.zeros(2), 0)


def test_vertex_rows_cover_occupied_cells_only():
    cfg = GridConfig(levels=2, base_resolution=2, feature_width=2, dim=2)
    pyramid = build_pyramid(cfg, occupancy=sphere_occupancy(radius=0.45))
    level = 1
    res = cfg.resolutions[level]
    rows = pyramid.vertex_rows[level].reshape(res + 1, res + 1)
    occupied = pyramid.mask.cells[level].reshape(res, res)
    for ci, cj in np.argwhere(occupied):
        assert (rows[ci : ci + 2, cj : cj + 2] >= 0).all()


def test_resolution_overflow_rejected():
    with pytest.raises(ValueError, match="overflow"):
        GridConfig(levels=8, base_resolution=64, feature_width=2, dim=3)


def test_invalid_configs_rejected():
    with pytest.raises(ValueError):
        GridConfig(levels=0, base_resolution=4, feature_width=2, dim=2)
    with pytest.raises(ValueError):
        GridConfig(levels=1, base_resolution=4, feature_width=2, dim=4)


def test_total_vertices_and_counts():
    cfg = GridConfig(levels=2, base_resolution=2, feature_width=2, dim=2)
    pyramid = build_pyramid(cfg)
    assert pyramid.vertex_counts == [9, 25]
    assert pyramid.total_vertices() == 34
