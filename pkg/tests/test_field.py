"""Decoder heads, view encoding, sampling, and compositing."""

import numpy as np
import pytest

from vqad.field import (
    FieldModel,
    Ray,
    VIEW_EMBED_DIM,
    composite,
    decode_point,
    init_decoder,
    positional_encode,
    render_ray,
    render_rays,
    sample_segments,
)
from vqad.grid import GridConfig, build_pyramid


def make_model(head="radiance", levels=2, base=2, k=4, dim=3, seed=0, zero=False):
    cfg = GridConfig(levels=levels, base_resolution=base, feature_width=k, dim=dim)
    pyramid = build_pyramid(cfg, seed=seed, init="zeros" if zero else "normal",
                            dtype=np.float64)
    decoder = init_decoder(k, head, hidden=16, seed=seed, dtype=np.float64)
    if zero:
        decoder.w1[:] = 0
        decoder.w2[:] = 0
    return FieldModel(grid=cfg, pyramid=pyramid, codebooks=None, decoder=decoder,
                      background=np.zeros(3))


def test_positional_encode_width_27():
    assert positional_encode(np.array([0.3, -0.5, 0.8])).shape == (27,)
    assert VIEW_EMBED_DIM == 27
    batch = positional_encode(np.tile([0.0, 0.0, 1.0], (5, 1)))
    assert batch.shape == (5, 27)


def test_positional_encode_zero_vector():
    out = positional_encode(np.zeros(3))
    assert np.all(out[:3] == 0)
    sin_terms = out[3::2]
    cos_terms = out[4::2]
    np.testing.assert_array_equal(sin_terms, np.zeros(12))
    np.testing.assert_array_equal(cos_terms, np.ones(12))


def test_positional_encode_unit_x():
    out = positional_encode(np.array([1.0, 0.0, 0.0]))
    # first sin entry is sin(2^0 * pi * 1)
    assert abs(out[3] - np.sin(np.pi)) < 1e-6
    assert abs(out[3]) < 1e-6


def test_positional_encode_component_major_layout():
    d = np.array([0.2, -0.4, 0.7])
    out = positional_encode(d)
    idx = 3
    for c in range(3):
        for j in range(4):
            angle = 2.0**j * np.pi * d[c]
            assert out[idx] == pytest.approx(np.sin(angle), abs=1e-12)
            assert out[idx + 1] == pytest.approx(np.cos(angle), abs=1e-12)
            idx += 2


def test_radiance_head_output_ranges():
    model = make_model("radiance")
    rng = np.random.default_rng(1)
    x = rng.uniform(-1, 1, size=(20, 3))
    d = np.array([0.0, 0.0, 1.0])
    out = decode_point(model, x, d)
    assert out.shape == (20, 4)
    assert (out[:, 0] >= 0).all()
    assert ((out[:, 1:] > 0) & (out[:, 1:] < 1)).all()


def test_zero_model_outputs():
    model = make_model("radiance", zero=True)
    out = decode_point(model, np.zeros(3), np.array([0.0, 0.0, 1.0]))
    assert out[0] == 0.0  # density relu(0)
    np.testing.assert_allclose(out[1:], 0.5)  # rgb sigmoid(0)


def test_radiance_input_width_is_43_for_k16():
    decoder = init_decoder(16, "radiance")
    assert decoder.widths[0] == 16 + 27 == 43


def test_image_head_requires_no_direction():
    model = make_model("image", dim=2)
    with pytest.raises(ValueError):
        decode_point(model, np.zeros(2), np.array([0.0, 0.0, 1.0]))
    out = decode_point(model, np.zeros(2))
    assert out.shape == (3,)


def test_radiance_head_requires_direction():
    model = make_model("radiance")
    with pytest.raises(ValueError):
        decode_point(model, np.zeros(3))


def test_render_zero_density_gives_background():
    model = make_model("radiance", zero=True)
    model.decoder.b2[:] = [-10.0, 0.0, 0.0, 0.0]  # density relu(-10) = 0
    bg = np.array([0.2, 0.4, 0.6])
    rgb, opacity = render_ray(
        model, Ray(origin=[0, 0, -3.0], direction=[0, 0, 1.0]), background=bg
    )
    np.testing.assert_allclose(rgb, bg, atol=1e-12)
    assert opacity == pytest.approx(0.0, abs=1e-12)


def test_single_saturated_sample():
    density = np.array([[50.0]])
    rgb = np.array([[[0.7, 0.2, 0.1]]])
    delta = np.array([[1.0]])
    color, opacity = composite(density, rgb, delta, background=np.array([1.0, 1.0, 1.0]))
    np.testing.assert_allclose(color[0], rgb[0, 0], atol=1e-6)
    assert opacity[0] == pytest.approx(1.0, abs=1e-6)


def test_two_sample_hand_compositing():
    # alphas (0.5, 0.5) and colors red, green: (0.5, 0.25, 0) + 0.25 bg
    delta = np.array([[1.0, 1.0]])
    density = -np.log(1.0 - 0.5) * np.ones((1, 2))
    rgb = np.array([[[1.0, 0, 0], [0, 1.0, 0]]])
    bg = np.array([0.3, 0.5, 0.7])
    color, opacity = composite(density, rgb, delta, bg)
    expected = np.array([0.5, 0.25, 0.0]) + 0.25 * bg
    np.testing.assert_allclose(color[0], expected, atol=1e-12)
    assert opacity[0] == pytest.approx(0.75)


def test_transmittance_conservation_bulk():
    rng = np.random.default_rng(7)
    n, s = 10_000, 12
    density = rng.uniform(0, 30, size=(n, s))
    delta = rng.uniform(0, 0.4, size=(n, s))
    rgb = rng.uniform(0, 1, size=(n, s, 3))
    _, opacity = composite(density, rgb, delta, np.zeros(3))
    final_trans = np.exp(-(density * delta).sum(axis=1))
    np.testing.assert_allclose(opacity + final_trans, 1.0, atol=1e-6)


def test_decode_zeroed_finer_levels_match_bit_exact():
    model = make_model("image", dim=2, levels=3, base=2)
    rng = np.random.default_rng(3)
    x = rng.uniform(-1, 1, size=(30, 2))
    coarse = decode_point(model, x, lod=1)
    model.pyramid.levels[2][:] = 0.0
    fine = decode_point(model, x, lod=2)
    np.testing.assert_array_equal(fine, coarse)


def test_degenerate_ray_rejected():
    with pytest.raises(ValueError, match="degenerate"):
        Ray(origin=[0, 0, 0], direction=[0, 0, 0])
    with pytest.raises(ValueError, match="unit"):
        Ray(origin=[0, 0, 0], direction=[0, 0, 2.0])


def test_missing_ray_returns_background():
    model = make_model("radiance")
    bg = np.array([0.9, 0.1, 0.2])
    rgb, opacity = render_rays(
        model, np.array([[5.0, 5.0, 5.0]]), np.array([[0.0, 0.0, 1.0]]),
        background=bg,
    )
    np.testing.assert_allclose(rgb[0], bg)
    assert opacity[0] == 0.0


def test_sample_segments_inside_domain():
    cfg = GridConfig(levels=1, base_resolution=4, feature_width=2, dim=3)
    origins = np.array([[0.0, 0.0, -2.5]])
    dirs = np.array([[0.0, 0.0, 1.0]])
    positions, deltas, hit = sample_segments(cfg, origins, dirs, samples_per_cell=4)
    assert hit[0]
    assert np.abs(positions).max() <= 1.0
    # total covered length equals the chord through the box
    assert deltas[0].sum() == pytest.approx(2.0, abs=1e-9)


def test_sample_segments_respects_near_far():
    cfg = GridConfig(levels=1, base_resolution=2, feature_width=2, dim=3)
    origins = np.array([[0.0, 0.0, -2.0]])
    dirs = np.array([[0.0, 0.0, 1.0]])
    _, deltas, hit = sample_segments(cfg, origins, dirs, near=1.5, far=2.5,
                                     samples_per_cell=2)
    assert hit[0]
    assert deltas[0].sum() == pytest.approx(1.0, abs=1e-9)


def test_render_rays_batch_matches_single():
    model = make_model("radiance", seed=4)
    ray = Ray(origin=[0.3, -0.2, -2.8], direction=[0, 0, 1.0])
    rgb_one, op_one = render_ray(model, ray, samples_per_cell=3)
    rgb_batch, op_batch = render_rays(
        model, ray.origin[None], ray.direction[None], samples_per_cell=3
    )
    np.testing.assert_array_equal(rgb_one, rgb_batch[0])
    assert op_one == op_batch[0]
