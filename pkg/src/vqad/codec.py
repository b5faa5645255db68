"""Serialization of trained fields into a streamable bitstream.

The on-disk layout (extension ``.vqad``) is a fixed header, the decoder
weights, then one chunk per pyramid level in coarse-to-fine order. A
prefix of the stream that ends on a chunk boundary decodes into a model
that renders the covered levels exactly as the full model would, which
is what makes progressive delivery work: coarse content displays after
the first chunk and later chunks only refine it.

All multi-byte integers are little-endian; bit-packed fields fill each
byte starting at the least significant bit. Floats are stored as IEEE
half precision (round-to-nearest-even from single). No entropy coding
is applied; reported sizes are raw.

Layout::

    header:  magic "VQAD" | version u16 | task u8 | dim u8 | levels u8
             | feature_width u8 | bitwidth u8 (0 = raw) | flags u8
             | n_widths u8 | mlp widths u16 * n | background f16 * 3
             | cell resolution u16 per level
    mlp:     w1, b1, w2, b2 as f16, row-major
    chunk:   level u8 | m u32 | occupancy bitmap | payload
             payload = codebook f16 (2^b * k) + packed indices (m * b bits)
                     | raw features f16 (m * k)
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .field import DecoderMLP, FieldModel, HEADS
from .grid import FeatureGridPyramid, GridConfig, OccupancyMask

__all__ = [
    "encode",
    "decode",
    "decode_prefix",
    "size_report",
    "prefix_sizes",
    "SizeReport",
    "BitstreamError",
    "IncompleteLevelError",
    "pack_indices",
    "unpack_indices",
    "mlp_nbytes",
]

MAGIC = b"VQAD"
VERSION = 1
FLAG_VQ = 0x01

TASK_CODES = {"image": 0, "sdf": 1, "radiance": 2}
TASK_NAMES = {v: k for k, v in TASK_CODES.items()}


class BitstreamError(ValueError):
    pass


class IncompleteLevelError(BitstreamError):
    """Stream truncated inside a chunk; carries the last renderable LOD."""

    def __init__(self, last_renderable_lod: int):
        self.last_renderable_lod = last_renderable_lod
        if last_renderable_lod < 0:
            detail = "no level is renderable"
        else:
            detail = f"last renderable lod is {last_renderable_lod}"
        super().__init__(f"incomplete level chunk: {detail}")


# ------------------------------------------------------------- packing


def _f16_bytes(arr: np.ndarray) -> bytes:
    return np.ascontiguousarray(arr, dtype="<f2").tobytes()


def _f16_read(buf: memoryview, count: int) -> np.ndarray:
    return np.frombuffer(buf[: count * 2], dtype="<f2").astype(np.float32)


def pack_indices(values: np.ndarray, bitwidth: int) -> bytes:
    """Pack integers < 2^bitwidth, LSB-first within little-endian bytes."""
    values = np.asarray(values)
    if values.size and (values.min() < 0 or values.max() >= (1 << bitwidth)):
        raise ValueError(f"index out of range for bitwidth {bitwidth}")
    raw = values.astype("<u2").tobytes()
    bits = np.unpackbits(
        np.frombuffer(raw, dtype=np.uint8).reshape(-1, 2), axis=1, bitorder="little"
    )[:, :bitwidth]
    return np.packbits(bits.reshape(-1), bitorder="little").tobytes()


def unpack_indices(buf, m: int, bitwidth: int) -> np.ndarray:
    data = np.frombuffer(buf, dtype=np.uint8)
    bits = np.unpackbits(data, bitorder="little")[: m * bitwidth].reshape(m, bitwidth)
    padded = np.zeros((m, 16), dtype=np.uint8)
    padded[:, :bitwidth] = bits
    packed = np.packbits(padded, axis=1, bitorder="little")
    return packed.copy().view("<u2").reshape(m).astype(np.int64)


def _pack_mask(cells: np.ndarray) -> bytes:
    return np.packbits(cells.astype(np.uint8), bitorder="little").tobytes()


def _unpack_mask(buf, n_cells: int) -> np.ndarray:
    bits = np.unpackbits(np.frombuffer(buf, dtype=np.uint8), bitorder="little")
    return bits[:n_cells].astype(bool)


def mlp_nbytes(widths) -> int:
    """Half-precision byte count of a dense stack of (weights, bias) layers."""
    return 2 * sum(
        widths[i] * widths[i + 1] + widths[i + 1] for i in range(len(widths) - 1)
    )


def _mask_nbytes(res: int, dim: int) -> int:
    return (res**dim + 7) // 8


# -------------------------------------------------------------- encode


def _header_bytes(model: FieldModel) -> bytes:
    cfg = model.grid
    is_vq = model.pyramid.storage_kind == "baked"
    bitwidth = 0
    if is_vq:
        bitwidth = int(np.log2(model.codebooks[0].shape[0]))
    widths = model.decoder.widths
    out = bytearray()
    out += MAGIC
    out += struct.pack("<H", VERSION)
    out += struct.pack(
        "<6B",
        TASK_CODES[model.head],
        cfg.dim,
        cfg.levels,
        cfg.feature_width,
        bitwidth,
        FLAG_VQ if is_vq else 0,
    )
    out += struct.pack("<B", len(widths))
    out += struct.pack(f"<{len(widths)}H", *widths)
    out += _f16_bytes(np.asarray(model.background, dtype=np.float64))
    out += struct.pack(f"<{cfg.levels}H", *cfg.resolutions)
    return bytes(out)


def _mlp_bytes(decoder: DecoderMLP) -> bytes:
    return b"".join(
        _f16_bytes(a) for a in (decoder.w1, decoder.b1, decoder.w2, decoder.b2)
    )


def _chunk_bytes(model: FieldModel, level: int) -> bytes:
    pyramid = model.pyramid
    m = pyramid.vertex_counts[level]
    out = bytearray()
    out += struct.pack("<BI", level, m)
    out += _pack_mask(pyramid.mask.cells[level])
    if pyramid.storage_kind == "baked":
        bitwidth = int(np.log2(model.codebooks[level].shape[0]))
        out += _f16_bytes(model.codebooks[level])
        out += pack_indices(pyramid.levels[level], bitwidth)
    else:
        out += _f16_bytes(pyramid.levels[level])
    return bytes(out)


def encode(model: FieldModel, task: str | None = None) -> bytes:
    """Serialize a model; quantized models must be baked first."""
    if model.pyramid.storage_kind == "soft":
        raise BitstreamError("cannot encode unbaked soft indices; bake first")
    if model.pyramid.storage_kind is None:
        raise BitstreamError("model has no grid payload")
    if task is not None and task != model.head:
        raise ValueError(f"task {task!r} does not match model head {model.head!r}")
    parts = [_header_bytes(model), _mlp_bytes(model.decoder)]
    parts += [_chunk_bytes(model, lv) for lv in range(model.grid.levels)]
    return b"".join(parts)


# -------------------------------------------------------------- decode


class _Reader:
    def __init__(self, data: bytes):
        self.data = memoryview(data)
        self.pos = 0

    def take(self, n: int) -> memoryview:
        if self.pos + n > len(self.data):
            raise EOFError
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, bytes(self.take(struct.calcsize(fmt))))


def _read_header(reader: _Reader):
    if bytes(reader.take(4)) != MAGIC:
        raise BitstreamError("bad magic: not a vqad stream")
    (version,) = reader.unpack("<H")
    if version != VERSION:
        raise BitstreamError(f"unsupported stream version {version}")
    task, dim, levels, k, bitwidth, flags = reader.unpack("<6B")
    if task not in TASK_NAMES:
        raise BitstreamError(f"unknown task code {task}")
    (n_widths,) = reader.unpack("<B")
    widths = list(reader.unpack(f"<{n_widths}H"))
    background = _f16_read(reader.take(6), 3).astype(np.float64)
    resolutions = list(reader.unpack(f"<{levels}H"))
    for lv in range(1, levels):
        if resolutions[lv] != 2 * resolutions[lv - 1]:
            raise BitstreamError("level resolutions must double")
    return {
        "task": TASK_NAMES[task],
        "dim": dim,
        "levels": levels,
        "feature_width": k,
        "bitwidth": bitwidth,
        "is_vq": bool(flags & FLAG_VQ),
        "widths": widths,
        "background": background,
        "resolutions": resolutions,
    }


def _read_mlp(reader: _Reader, widths, head: str) -> DecoderMLP:
    arrays = []
    for i in range(len(widths) - 1):
        w = _f16_read(reader.take(widths[i] * widths[i + 1] * 2),
                      widths[i] * widths[i + 1]).reshape(widths[i], widths[i + 1])
        b = _f16_read(reader.take(widths[i + 1] * 2), widths[i + 1])
        arrays += [w, b]
    return DecoderMLP(arrays[0], arrays[1], arrays[2], arrays[3], head)


def decode_prefix(data: bytes, levels_available: int) -> FieldModel:
    """Decode the header, decoder and the first *levels_available* chunks.

    The returned model has only those levels; rendering it at its finest
    level is bit-identical to rendering the fully decoded model there.
    Truncation inside a chunk raises :class:`IncompleteLevelError` naming
    the last level that did decode.
    """
    reader = _Reader(data)
    try:
        header = _read_header(reader)
        decoder = _read_mlp(
            reader,
            header["widths"],
            header["task"] if header["task"] in ("image", "sdf") else "radiance",
        )
    except (EOFError, struct.error):
        raise BitstreamError("truncated stream: incomplete header or decoder")

    if not 1 <= levels_available <= header["levels"]:
        raise ValueError(
            f"levels_available must be in 1..{header['levels']}, got {levels_available}"
        )

    dim, k = header["dim"], header["feature_width"]
    cells, payloads, codebooks = [], [], []
    for lv in range(levels_available):
        res = header["resolutions"][lv]
        try:
            level_idx, m = reader.unpack("<BI")
            if level_idx != lv:
                raise BitstreamError(f"chunk out of order: expected level {lv}")
            mask = _unpack_mask(reader.take(_mask_nbytes(res, dim)), res**dim)
            if header["is_vq"]:
                rows = 1 << header["bitwidth"]
                codebooks.append(_f16_read(reader.take(rows * k * 2), rows * k)
                                 .reshape(rows, k))
                n_idx_bytes = (m * header["bitwidth"] + 7) // 8
                payloads.append(
                    unpack_indices(reader.take(n_idx_bytes), m, header["bitwidth"])
                )
            else:
                payloads.append(_f16_read(reader.take(m * k * 2), m * k).reshape(m, k))
            cells.append(mask)
        except (EOFError, struct.error):
            raise IncompleteLevelError(last_renderable_lod=lv - 1)

    grid_config = GridConfig(
        levels=levels_available,
        base_resolution=header["resolutions"][0],
        feature_width=k,
        dim=dim,
    )
    mask = OccupancyMask(
        resolutions=grid_config.resolutions, dim=dim, cells=cells
    )
    pyramid = FeatureGridPyramid(grid_config, mask)
    for lv in range(levels_available):
        expect = pyramid.vertex_counts[lv]
        if payloads[lv].shape[0] != expect:
            raise BitstreamError(
                f"level {lv}: stored vertex count {payloads[lv].shape[0]} "
                f"does not match occupancy ({expect})"
            )
    pyramid.set_storage("baked" if header["is_vq"] else "raw", payloads)
    return FieldModel(
        grid=grid_config,
        pyramid=pyramid,
        codebooks=codebooks if header["is_vq"] else None,
        decoder=decoder,
        background=header["background"],
    )


def decode(data: bytes) -> FieldModel:
    reader = _Reader(data)
    try:
        header = _read_header(reader)
    except (EOFError, struct.error):
        raise BitstreamError("truncated stream: incomplete header")
    return decode_prefix(data, header["levels"])


# ---------------------------------------------------------------- sizes


@dataclass
class SizeReport:
    header_bytes: int
    mlp_bytes: int
    level_framing_bytes: list[int]
    level_occupancy_bytes: list[int]
    level_codebook_bytes: list[int]
    level_feature_bytes: list[int]
    level_index_bytes: list[int]
    total_bytes: int
    uncompressed_grid_bytes: int
    compression_ratio: float

    def as_dict(self) -> dict:
        return {
            "header_bytes": self.header_bytes,
            "mlp_bytes": self.mlp_bytes,
            "level_framing_bytes": self.level_framing_bytes,
            "level_occupancy_bytes": self.level_occupancy_bytes,
            "level_codebook_bytes": self.level_codebook_bytes,
            "level_feature_bytes": self.level_feature_bytes,
            "level_index_bytes": self.level_index_bytes,
            "total_bytes": self.total_bytes,
            "uncompressed_grid_bytes": self.uncompressed_grid_bytes,
            "compression_ratio": self.compression_ratio,
        }


def size_report(model: FieldModel) -> SizeReport:
    """Exact per-component byte counts; totals match :func:`encode` output."""
    cfg = model.grid
    is_vq = model.pyramid.storage_kind == "baked"
    k = cfg.feature_width
    header = len(_header_bytes(model))
    mlp = mlp_nbytes(model.decoder.widths)
    framing, occupancy, codebook, features, indices = [], [], [], [], []
    bitwidth = 0
    if is_vq:
        bitwidth = int(np.log2(model.codebooks[0].shape[0]))
    for lv, res in enumerate(cfg.resolutions):
        m = model.pyramid.vertex_counts[lv]
        framing.append(5)
        occupancy.append(_mask_nbytes(res, cfg.dim))
        if is_vq:
            codebook.append((1 << bitwidth) * k * 2)
            indices.append((m * bitwidth + 7) // 8)
            features.append(0)
        else:
            codebook.append(0)
            indices.append(0)
            features.append(m * k * 2)
    total = header + mlp + sum(framing) + sum(occupancy) + sum(codebook) \
        + sum(features) + sum(indices)
    raw_grid = sum(model.pyramid.vertex_counts) * k * 2
    return SizeReport(
        header_bytes=header,
        mlp_bytes=mlp,
        level_framing_bytes=framing,
        level_occupancy_bytes=occupancy,
        level_codebook_bytes=codebook,
        level_feature_bytes=features,
        level_index_bytes=indices,
        total_bytes=total,
        uncompressed_grid_bytes=raw_grid,
        compression_ratio=raw_grid / total,
    )


def prefix_sizes(data: bytes) -> list[int]:
    """Cumulative byte count needed to decode levels 1..L, in order."""
    reader = _Reader(data)
    try:
        header = _read_header(reader)
        for w_in, w_out in zip(header["widths"], header["widths"][1:]):
            reader.take((w_in * w_out + w_out) * 2)
    except (EOFError, struct.error):
        raise BitstreamError("truncated stream: incomplete header or decoder")
    sizes = []
    for lv in range(header["levels"]):
        try:
            _, m = reader.unpack("<BI")
            reader.take(_mask_nbytes(header["resolutions"][lv], header["dim"]))
            if header["is_vq"]:
                reader.take((1 << header["bitwidth"]) * header["feature_width"] * 2)
                reader.take((m * header["bitwidth"] + 7) // 8)
            else:
                reader.take(m * header["feature_width"] * 2)
        except (EOFError, struct.error):
            raise IncompleteLevelError(last_renderable_lod=lv - 1)
        sizes.append(reader.pos)
    return sizes
