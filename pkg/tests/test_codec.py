"""Bitstream: framing, round trips, prefix decode, size accounting."""

import numpy as np
import pytest

from vqad.codec import (
    BitstreamError,
    IncompleteLevelError,
    decode,
    decode_prefix,
    encode,
    mlp_nbytes,
    pack_indices,
    prefix_sizes,
    size_report,
    unpack_indices,
)
from vqad.field import FieldModel, init_decoder
from vqad.grid import GridConfig, build_pyramid, sphere_occupancy
from vqad.vq import bake


def make_raw_model(seed=0, levels=2, base=2, k=3, dim=2, head="image",
                   occupancy=None):
    cfg = GridConfig(levels=levels, base_resolution=base, feature_width=k, dim=dim)
    pyramid = build_pyramid(cfg, occupancy=occupancy, seed=seed)
    decoder = init_decoder(k, head, hidden=8, seed=seed)
    rng = np.random.default_rng(seed)
    return FieldModel(
        grid=cfg, pyramid=pyramid, codebooks=None, decoder=decoder,
        background=rng.uniform(0, 1, 3),
    )


def make_vq_model(seed=0, levels=2, base=2, k=3, dim=2, bitwidth=3, head="image",
                  occupancy=None):
    model = make_raw_model(seed, levels, base, k, dim, head, occupancy)
    rng = np.random.default_rng(seed + 100)
    codebooks = [
        rng.normal(size=(1 << bitwidth, k)).astype(np.float32)
        for _ in range(levels)
    ]
    indices = [
        rng.integers(0, 1 << bitwidth, size=m).astype(np.int64)
        for m in model.pyramid.vertex_counts
    ]
    baked = model.pyramid.copy_structure()
    baked.set_storage("baked", indices)
    return FieldModel(
        grid=model.grid, pyramid=baked, codebooks=codebooks,
        decoder=model.decoder, background=model.background,
    )


def test_pack_indices_payload_size():
    values = np.arange(1000) % 64
    packed = pack_indices(values, 6)
    assert len(packed) == 750  # ceil(1000 * 6 / 8)
    np.testing.assert_array_equal(unpack_indices(packed, 1000, 6), values)


@pytest.mark.parametrize("bitwidth", [1, 2, 3, 4, 6, 8, 11, 16])
def test_pack_roundtrip_all_bitwidths(bitwidth):
    rng = np.random.default_rng(bitwidth)
    values = rng.integers(0, 1 << bitwidth, size=537)
    packed = pack_indices(values, bitwidth)
    assert len(packed) == (537 * bitwidth + 7) // 8
    np.testing.assert_array_equal(unpack_indices(packed, 537, bitwidth), values)


def test_pack_indices_lsb_first():
    # value 1 at bitwidth 1 occupies the least significant bit first
    assert pack_indices(np.array([1, 0, 1, 1]), 1) == bytes([0b1101])
    # two 4-bit values per byte, first value in the low nibble
    assert pack_indices(np.array([0xA, 0x3]), 4) == bytes([0x3A])


def test_pack_rejects_out_of_range():
    with pytest.raises(ValueError):
        pack_indices(np.array([4]), 2)


def test_mlp_nbytes_paper_configuration():
    assert mlp_nbytes([43, 128, 4]) == 12_296


def test_roundtrip_raw_model_bit_exact():
    model = make_raw_model(seed=1)
    stream = encode(model)
    decoded = decode(stream)
    for lv in range(model.grid.levels):
        np.testing.assert_array_equal(
            decoded.pyramid.levels[lv],
            model.pyramid.levels[lv].astype(np.float16).astype(np.float32),
        )
    np.testing.assert_array_equal(
        decoded.decoder.w1, model.decoder.w1.astype(np.float16).astype(np.float32)
    )


@pytest.mark.parametrize("seed", range(10))
def test_encode_decode_encode_idempotent(seed):
    if seed % 2:
        model = make_vq_model(seed=seed, dim=2 + seed % 2, bitwidth=1 + seed % 5,
                              occupancy=sphere_occupancy(0.7) if seed % 3 else None)
    else:
        model = make_raw_model(seed=seed, dim=2 + seed % 2,
                               head=("image", "sdf", "radiance")[seed % 3],
                               occupancy=sphere_occupancy(0.7) if seed % 3 else None)
    stream = encode(model)
    again = encode(decode(stream))
    assert stream == again


def test_vq_codebook_payload_accounting():
    model = make_vq_model(seed=3, levels=4, base=2, k=16, bitwidth=6, dim=2)
    report = size_report(model)
    assert sum(report.level_codebook_bytes) == 4 * 64 * 16 * 2 == 8192
    assert report.total_bytes == len(encode(model))


def test_size_report_matches_stream_exactly():
    for maker in (make_raw_model, make_vq_model):
        model = maker(seed=4)
        report = size_report(model)
        stream = encode(model)
        assert report.total_bytes == len(stream)
        parts = (
            report.header_bytes
            + report.mlp_bytes
            + sum(report.level_framing_bytes)
            + sum(report.level_occupancy_bytes)
            + sum(report.level_codebook_bytes)
            + sum(report.level_feature_bytes)
            + sum(report.level_index_bytes)
        )
        assert parts == report.total_bytes


def test_prefix_sizes_strictly_increasing():
    model = make_vq_model(seed=5, levels=3, base=2)
    stream = encode(model)
    sizes = prefix_sizes(stream)
    assert len(sizes) == 3
    assert all(a < b for a, b in zip(sizes, sizes[1:]))
    assert sizes[-1] == len(stream)
    # each prefix is a strict byte prefix of the next
    for lv, size in enumerate(sizes):
        decode_prefix(stream[:size], lv + 1)


def test_prefix_decode_matches_full_decode():
    model = make_vq_model(seed=6, levels=3)
    stream = encode(model)
    full = decode(stream)
    for keep in range(1, 4):
        sub = decode_prefix(stream, keep)
        assert sub.grid.levels == keep
        for lv in range(keep):
            np.testing.assert_array_equal(
                sub.pyramid.levels[lv], full.pyramid.levels[lv]
            )
            np.testing.assert_array_equal(
                sub.codebooks[lv], full.codebooks[lv]
            )


def test_truncation_mid_chunk_reports_last_lod():
    model = make_vq_model(seed=7, levels=3)
    stream = encode(model)
    sizes = prefix_sizes(stream)
    with pytest.raises(IncompleteLevelError) as info:
        decode_prefix(stream[: sizes[1] - 1], 2)
    assert info.value.last_renderable_lod == 0
    with pytest.raises(IncompleteLevelError) as info:
        decode_prefix(stream[: sizes[2] - 1], 3)
    assert info.value.last_renderable_lod == 1


def test_truncated_header_is_distinct_error():
    model = make_raw_model(seed=8)
    stream = encode(model)
    with pytest.raises(BitstreamError, match="header"):
        decode(stream[:6])


def test_bad_magic_rejected():
    with pytest.raises(BitstreamError, match="magic"):
        decode(b"NOPE" + bytes(100))


def test_unbaked_soft_model_rejected():
    model = make_raw_model(seed=9)
    soft = model.pyramid.copy_structure()
    soft.set_storage(
        "soft",
        [np.zeros((m, 4), dtype=np.float32) for m in model.pyramid.vertex_counts],
    )
    bad = FieldModel(grid=model.grid, pyramid=soft, codebooks=None,
                     decoder=model.decoder, background=model.background)
    with pytest.raises(BitstreamError, match="bake"):
        encode(bad)


def test_golden_header_layout():
    # Pins the byte layout: magic, version, task/dim/levels/k/b/flags,
    # widths, background, resolutions. Any change here is a format break.
    cfg = GridConfig(levels=2, base_resolution=2, feature_width=2, dim=2)
    pyramid = build_pyramid(cfg, init="zeros")
    indices = [np.zeros(m, dtype=np.int64) for m in pyramid.vertex_counts]
    baked = pyramid.copy_structure()
    baked.set_storage("baked", indices)
    decoder = init_decoder(2, "image", hidden=4, seed=0)
    for arr in (decoder.w1, decoder.b1, decoder.w2, decoder.b2):
        arr[:] = 0
    model = FieldModel(
        grid=cfg, pyramid=baked,
        codebooks=[np.zeros((2, 2), dtype=np.float32)] * 2,
        decoder=decoder, background=np.array([0.0, 0.5, 1.0]),
    )
    stream = encode(model)
    header_len = 4 + 2 + 6 + 1 + 2 * 3 + 6 + 2 * 2
    golden = (
        "56514144"  # magic "VQAD"
        "0100"      # version 1
        "00"        # task: image
        "02"        # dim
        "02"        # levels
        "02"        # feature width
        "01"        # bitwidth
        "01"        # flags: vq payload
        "03"        # three layer widths
        "020004000300"  # widths 2, 4, 3
        "000000380038"  # background (0, 0.5, 1) as f16
        "02000400"  # resolutions 2, 4
    )
    assert stream[:header_len].hex() == golden


def test_decoded_render_is_usable():
    from vqad.field import decode_point

    model = make_vq_model(seed=10, dim=2, head="image")
    decoded = decode(encode(model))
    out = decode_point(decoded, np.zeros(2))
    assert out.shape == (3,)
    assert np.isfinite(out).all()
