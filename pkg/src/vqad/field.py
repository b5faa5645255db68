"""Decoder network and forward maps.

A single small MLP is shared across all pyramid levels. It consumes the
interpolated feature vector (plus an encoded view direction for the
radiance head) and emits the task signal: RGB for images, a signed
distance, or density + color for volume rendering. The volume forward
map marches rays through the coarsest-level cells, takes a fixed number
of stratified samples per crossed cell, and composites them with
emission-absorption weights over a configurable background.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .grid import FeatureGridPyramid, GridConfig
from .vq import resolve_features

__all__ = [
    "DecoderMLP",
    "FieldModel",
    "Ray",
    "HEADS",
    "VIEW_EMBED_DIM",
    "positional_encode",
    "init_decoder",
    "decode_point",
    "render_ray",
    "render_rays",
    "composite",
    "sample_segments",
]

HEADS = {"image": 3, "sdf": 1, "radiance": 4}
_N_FREQS = 4
VIEW_EMBED_DIM = 3 + 3 * 2 * _N_FREQS  # direction + sin/cos at 4 frequencies


@dataclass
class DecoderMLP:
    """Two-layer ReLU network; the output activation depends on the head."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    head: str

    def __post_init__(self):
        if self.head not in HEADS:
            raise ValueError(f"unknown head {self.head!r}")
        if self.w2.shape[1] != HEADS[self.head]:
            raise ValueError("output width does not match the head")

    @property
    def widths(self) -> list[int]:
        return [self.w1.shape[0], self.w1.shape[1], self.w2.shape[1]]

    def astype(self, dtype) -> "DecoderMLP":
        return DecoderMLP(
            self.w1.astype(dtype),
            self.b1.astype(dtype),
            self.w2.astype(dtype),
            self.b2.astype(dtype),
            self.head,
        )


@dataclass
class FieldModel:
    """Everything inference needs: grid payloads plus the decoder."""

    grid: GridConfig
    pyramid: FeatureGridPyramid
    codebooks: list[np.ndarray] | None
    decoder: DecoderMLP
    background: np.ndarray = field(default_factory=lambda: np.zeros(3))

    _resolved: FeatureGridPyramid | None = None

    @property
    def head(self) -> str:
        return self.decoder.head

    @property
    def is_quantized(self) -> bool:
        return self.pyramid.storage_kind in ("soft", "baked")

    def feature_pyramid(self) -> FeatureGridPyramid:
        """Raw-feature view of the grid (quantized storage resolved once)."""
        if self.pyramid.storage_kind == "raw":
            return self.pyramid
        if self._resolved is None:
            self._resolved = resolve_features(self.pyramid, self.codebooks)
        return self._resolved

    def invalidate_cache(self):
        self._resolved = None


@dataclass
class Ray:
    origin: np.ndarray
    direction: np.ndarray
    near: float = 0.0
    far: float = np.inf

    def __post_init__(self):
        self.origin = np.asarray(self.origin, dtype=np.float64)
        self.direction = np.asarray(self.direction, dtype=np.float64)
        norm = np.linalg.norm(self.direction)
        if norm == 0.0:
            raise ValueError("degenerate ray: zero direction")
        if abs(norm - 1.0) > 1e-6:
            raise ValueError("ray direction must be unit length")


def positional_encode(direction: np.ndarray) -> np.ndarray:
    """Embed view directions as [d, sin(2^j pi d_c), cos(2^j pi d_c)].

    Layout is component-major: each of the 3 components contributes its
    sin/cos pair at frequencies 2^0..2^3 before the next component
    starts. Output width is 27 for any input.
    """
    d = np.atleast_2d(np.asarray(direction, dtype=np.float64))
    parts = [d]
    for c in range(3):
        for j in range(_N_FREQS):
            angle = (2.0**j) * np.pi * d[:, c]
            parts.append(np.stack([np.sin(angle), np.cos(angle)], axis=1))
    out = np.concatenate(parts, axis=1)
    return out[0] if np.asarray(direction).ndim == 1 else out


def init_decoder(
    feature_width: int,
    head: str,
    hidden: int = 128,
    seed: int = 0,
    dtype=np.float32,
) -> DecoderMLP:
    if head not in HEADS:
        raise ValueError(f"unknown head {head!r}")
    in_width = feature_width + (VIEW_EMBED_DIM if head == "radiance" else 0)
    rng = np.random.default_rng(seed)
    w1 = rng.standard_normal((in_width, hidden)) * np.sqrt(2.0 / in_width)
    w2 = rng.standard_normal((hidden, HEADS[head])) / np.sqrt(hidden)
    return DecoderMLP(
        w1.astype(dtype),
        np.zeros(hidden, dtype=dtype),
        w2.astype(dtype),
        np.zeros(HEADS[head], dtype=dtype),
        head,
    )


def _relu(x):
    return np.where(x > 0, x, 0.0)


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def mlp_forward(decoder: DecoderMLP, z: np.ndarray) -> np.ndarray:
    """Raw pre-head output of the decoder for stacked inputs (n, in)."""
    h = _relu(z @ decoder.w1 + decoder.b1)
    return h @ decoder.w2 + decoder.b2


def apply_head(head: str, raw: np.ndarray) -> np.ndarray:
    if head == "image":
        return _sigmoid(raw)
    if head == "sdf":
        return raw
    density = _relu(raw[:, :1])
    rgb = _sigmoid(raw[:, 1:])
    return np.concatenate([density, rgb], axis=1)


def decode_point(model: FieldModel, x, direction=None, lod: int | None = None):
    """Evaluate the field at coordinates.

    ``direction`` is required for (and only for) the radiance head.
    Accepts a single point or an (n, d) batch; the output matches.
    """
    single = np.asarray(x).ndim == 1
    pts = np.atleast_2d(np.asarray(x, dtype=np.float64))
    feats = model.feature_pyramid().interpolate(pts, lod)
    if model.head == "radiance":
        if direction is None:
            raise ValueError("the radiance head needs a view direction")
        emb = np.atleast_2d(positional_encode(direction))
        if emb.shape[0] == 1 and feats.shape[0] > 1:
            emb = np.broadcast_to(emb, (feats.shape[0], emb.shape[1]))
        z = np.concatenate([feats, emb.astype(feats.dtype)], axis=1)
    else:
        if direction is not None:
            raise ValueError(f"head {model.head!r} takes no view direction")
        z = feats
    out = apply_head(model.head, mlp_forward(model.decoder, z.astype(model.decoder.w1.dtype)))
    return out[0] if single else out


# ------------------------------------------------------------ sampling


def sample_segments(
    config: GridConfig,
    origins: np.ndarray,
    directions: np.ndarray,
    near=0.0,
    far=np.inf,
    samples_per_cell: int = 16,
):
    """Stratified sample positions along rays crossing the coarsest grid.

    Rays are clipped to the [-1, 1]^d domain box, split at every
    coarsest-level cell boundary they cross, and each crossing segment
    receives ``samples_per_cell`` midpoint-stratified samples. All rays
    produce the same sample count; segments a ray does not reach have
    zero length and therefore zero compositing weight.

    Returns (positions (n, s, d), deltas (n, s), hit (n,)).
    """
    origins = np.atleast_2d(np.asarray(origins, dtype=np.float64))
    directions = np.atleast_2d(np.asarray(directions, dtype=np.float64))
    n, d = origins.shape
    res = config.base_resolution
    near = np.broadcast_to(np.asarray(near, dtype=np.float64), (n,))
    far = np.broadcast_to(np.asarray(far, dtype=np.float64), (n,))

    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / directions
        t_lo = (-1.0 - origins) * inv
        t_hi = (1.0 - origins) * inv
        t_enter = np.maximum(np.nanmax(np.minimum(t_lo, t_hi), axis=1), near)
        t_exit = np.minimum(np.nanmin(np.maximum(t_lo, t_hi), axis=1), far)
    hit = t_exit > t_enter
    t_enter = np.where(hit, t_enter, 0.0)
    t_exit = np.where(hit, t_exit, 0.0)

    # Crossing parameters for every axis-aligned cell plane, clipped to the
    # chord; out-of-chord crossings collapse onto its endpoints and produce
    # zero-length segments.
    planes = -1.0 + np.arange(res + 1) * (2.0 / res)
    with np.errstate(divide="ignore", invalid="ignore"):
        t_cross = (planes[None, None, :] - origins[:, :, None]) * inv[:, :, None]
    t_cross = t_cross.reshape(n, -1)
    t_cross = np.where(np.isfinite(t_cross), t_cross, np.inf)
    t_cross = np.clip(t_cross, t_enter[:, None], t_exit[:, None])
    bounds = np.sort(
        np.concatenate([t_enter[:, None], t_cross, t_exit[:, None]], axis=1), axis=1
    )

    seg_len = np.diff(bounds, axis=1)
    s = samples_per_cell
    offsets = (np.arange(s) + 0.5) / s
    t_samples = bounds[:, :-1, None] + seg_len[:, :, None] * offsets
    deltas = np.repeat(seg_len[:, :, None] / s, s, axis=2).reshape(n, -1)
    t_samples = t_samples.reshape(n, -1)
    positions = origins[:, None, :] + t_samples[:, :, None] * directions[:, None, :]
    # Clamp samples that land exactly on the box wall back into the domain.
    positions = np.clip(positions, -1.0, 1.0)
    return positions, deltas, hit


def composite(density, rgb, deltas, background):
    """Emission-absorption compositing along the sample axis.

    ``density`` and ``deltas`` are (n, s); ``rgb`` is (n, s, 3). Returns
    (color (n, 3), opacity (n,)). Transmittance uses the running optical
    depth so sum(weights) + final transmittance telescopes to one.
    """
    tau = density * deltas
    running = np.cumsum(tau, axis=1)
    trans = np.exp(-(running - tau))  # transmittance before each sample
    alpha = 1.0 - np.exp(-tau)
    weights = alpha * trans
    color = np.einsum("ns,nsk->nk", weights, rgb)
    opacity = weights.sum(axis=1)
    color = color + (1.0 - opacity)[:, None] * np.asarray(background)
    return color, opacity


def render_rays(
    model: FieldModel,
    origins,
    directions,
    near=0.0,
    far=np.inf,
    lod: int | None = None,
    samples_per_cell: int = 16,
    background=None,
):
    """Render a batch of rays; returns (rgb (n, 3), opacity (n,))."""
    if model.head != "radiance":
        raise ValueError("ray rendering needs the radiance head")
    bg = model.background if background is None else np.asarray(background)
    positions, deltas, hit = sample_segments(
        model.grid, origins, directions, near, far, samples_per_cell
    )
    n, s, _ = positions.shape
    out_rgb = np.tile(np.asarray(bg, dtype=np.float64), (n, 1))
    out_opacity = np.zeros(n)
    if hit.any():
        idx = np.flatnonzero(hit)
        flat = positions[idx].reshape(-1, model.grid.dim)
        dirs = np.repeat(np.atleast_2d(directions)[idx], s, axis=0)
        decoded = decode_point(model, flat, dirs, lod=lod)
        density = decoded[:, 0].reshape(len(idx), s)
        rgb = decoded[:, 1:].reshape(len(idx), s, 3)
        color, opacity = composite(density, rgb, deltas[idx], bg)
        out_rgb[idx] = color
        out_opacity[idx] = opacity
    return out_rgb, out_opacity


def render_ray(
    model: FieldModel,
    ray: Ray,
    lod: int | None = None,
    samples_per_cell: int = 16,
    background=None,
):
    """Render a single ray; returns (rgb (3,), opacity scalar)."""
    rgb, opacity = render_rays(
        model,
        ray.origin[None],
        ray.direction[None],
        near=ray.near,
        far=ray.far,
        lod=lod,
        samples_per_cell=samples_per_cell,
        background=background,
    )
    return rgb[0], float(opacity[0])
