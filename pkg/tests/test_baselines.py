"""Post-hoc compressors: eigenbasis truncation, k-means, random indices."""

import numpy as np
import pytest

from vqad.baselines import (
    klt_fit,
    klt_transform,
    klt_truncate,
    kmeans_vq,
    random_index_grid,
)
from vqad.vq import bake, hard_features


def test_klt_rank_one_data():
    rng = np.random.default_rng(0)
    direction = rng.normal(size=6)
    direction /= np.linalg.norm(direction)
    rows = rng.normal(size=(200, 1)) * direction
    transform = klt_fit(rows)
    lead = transform.basis[:, 0]
    assert abs(abs(lead @ direction) - 1.0) < 1e-10
    assert np.abs(transform.eigenvalues[1:]).max() < 1e-10


def test_klt_isotropic_eigenvalues():
    rng = np.random.default_rng(1)
    rows = rng.normal(size=(100_000, 8))
    transform = klt_fit(rows)
    np.testing.assert_allclose(transform.eigenvalues, 1.0, rtol=0.05)


def test_klt_basis_orthonormal():
    rng = np.random.default_rng(2)
    rows = rng.normal(size=(500, 10)) @ rng.normal(size=(10, 10))
    transform = klt_fit(rows)
    gram = transform.basis.T @ transform.basis
    np.testing.assert_allclose(gram, np.eye(10), atol=1e-10)


def test_klt_sign_convention_deterministic():
    rng = np.random.default_rng(3)
    rows = rng.normal(size=(300, 5))
    a = klt_fit(rows)
    b = klt_fit(rows)
    np.testing.assert_array_equal(a.basis, b.basis)
    for j in range(5):
        pivot = np.argmax(np.abs(a.basis[:, j]))
        assert a.basis[pivot, j] > 0


def test_klt_full_rank_roundtrip():
    rng = np.random.default_rng(4)
    rows = rng.normal(size=(120, 16))
    transform = klt_fit(rows)
    np.testing.assert_allclose(klt_truncate(rows, transform, 16), rows, atol=1e-10)


def test_klt_half_rank_payload_ratio():
    # retaining 8 of 16 coefficients stores exactly half the raw rows
    retained, width = 8, 16
    m = 100
    raw_values = m * width
    stored_values = m * retained
    assert raw_values / stored_values == 2.0


def test_klt_truncation_error_matches_eigenvalue_tail():
    rng = np.random.default_rng(5)
    rows = rng.normal(size=(2000, 6)) @ np.diag([3.0, 2.0, 1.5, 1.0, 0.5, 0.1])
    transform = klt_fit(rows)
    for retained in (1, 3, 5):
        approx = klt_truncate(rows, transform, retained)
        mse = np.mean((approx - rows) ** 2)
        expected = transform.eigenvalues[retained:].sum() / rows.shape[1]
        assert abs(mse - expected) < 1e-8


def test_klt_truncation_error_monotone():
    rng = np.random.default_rng(6)
    rows = rng.normal(size=(400, 8)) @ rng.normal(size=(8, 8))
    transform = klt_fit(rows)
    errors = [
        np.mean((klt_truncate(rows, transform, f) - rows) ** 2) for f in range(1, 9)
    ]
    assert all(a >= b - 1e-12 for a, b in zip(errors, errors[1:]))


def test_klt_transform_shape_and_range_check():
    rng = np.random.default_rng(7)
    rows = rng.normal(size=(50, 4))
    transform = klt_fit(rows)
    assert klt_transform(rows, transform, 2).shape == (50, 2)
    with pytest.raises(ValueError):
        klt_truncate(rows, transform, 0)
    with pytest.raises(ValueError):
        klt_truncate(rows, transform, 5)


def test_klt_rejects_non_finite():
    with pytest.raises(ValueError):
        klt_fit(np.array([[1.0, np.nan]]))


def test_kmeans_exact_when_rows_equal_clusters():
    rng = np.random.default_rng(8)
    rows = rng.normal(size=(16, 4)) * 10
    result = kmeans_vq(rows, bitwidth=4, seed=0)
    assert result.inertia < 1e-18
    recon = result.codebook[result.assignments]
    np.testing.assert_allclose(recon, rows, atol=1e-9)


def test_kmeans_single_cluster_is_mean():
    # 2^b = 1: the codebook collapses to the row mean
    rng = np.random.default_rng(9)
    rows = rng.normal(size=(50, 3))
    result = kmeans_vq(rows, bitwidth=0)
    np.testing.assert_allclose(result.codebook[0], rows.mean(axis=0), atol=1e-12)


def test_kmeans_bitwidth_4_yields_16_clusters():
    rng = np.random.default_rng(10)
    rows = rng.normal(size=(300, 5))
    result = kmeans_vq(rows, bitwidth=4, seed=1)
    assert result.codebook.shape == (16, 5)
    assert result.assignments.max() < 16


def test_kmeans_objective_non_increasing():
    rng = np.random.default_rng(11)
    rows = np.concatenate(
        [rng.normal(loc=c, size=(100, 4)) for c in (-3.0, 0.0, 3.0, 6.0)]
    )
    result = kmeans_vq(rows, bitwidth=3, seed=2)
    history = result.inertia_history
    assert all(a >= b - 1e-9 for a, b in zip(history, history[1:]))


def test_kmeans_deterministic_per_seed():
    rng = np.random.default_rng(12)
    rows = rng.normal(size=(200, 4))
    a = kmeans_vq(rows, bitwidth=3, seed=5)
    b = kmeans_vq(rows, bitwidth=3, seed=5)
    np.testing.assert_array_equal(a.codebook, b.codebook)
    np.testing.assert_array_equal(a.assignments, b.assignments)


def test_kmeans_assignments_are_nearest():
    rng = np.random.default_rng(13)
    rows = rng.normal(size=(150, 3))
    result = kmeans_vq(rows, bitwidth=3, seed=3)
    d = ((rows[:, None, :] - result.codebook[None]) ** 2).sum(axis=2)
    np.testing.assert_array_equal(result.assignments, d.argmin(axis=1))


def test_kmeans_recovers_baked_assignments_for_separated_codebook():
    # quantizing a grid already built from a well-separated codebook
    # reproduces the same assignments
    rng = np.random.default_rng(14)
    codebook = rng.normal(size=(8, 4)) * 20.0
    indices = rng.integers(0, 8, size=400)
    rows = hard_features(indices, codebook) + rng.normal(scale=0.01, size=(400, 4))
    result = kmeans_vq(rows, bitwidth=3, seed=4)
    # map learned clusters back to the generating rows
    d = ((result.codebook[:, None, :] - codebook[None]) ** 2).sum(axis=2)
    relabel = d.argmin(axis=1)
    np.testing.assert_array_equal(relabel[result.assignments], indices)


def test_random_index_grid_bounds_and_determinism():
    grid = random_index_grid(5000, bitwidth=4, seed=0)
    assert grid.min() >= 0
    assert grid.max() < 16
    np.testing.assert_array_equal(grid, random_index_grid(5000, bitwidth=4, seed=0))
    assert not np.array_equal(grid, random_index_grid(5000, bitwidth=4, seed=1))


def test_random_index_b16_codebook_payload():
    # 4 levels of 2^16 x 16 half floats
    payload = 4 * (1 << 16) * 16 * 2
    assert payload == 8_388_608  # the 8388 kB figure


def test_random_indices_work_with_bake_lookup():
    rng = np.random.default_rng(15)
    codebook = rng.normal(size=(16, 3))
    grid = random_index_grid(100, bitwidth=4, seed=2)
    feats = hard_features(grid, codebook)
    assert feats.shape == (100, 3)
