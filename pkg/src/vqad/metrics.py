"""Image quality metrics and rate-distortion reporting.

PSNR and single-scale SSIM are computed in the same color space the
training targets use. Rate-distortion walks the bitstream prefixes:
each level of detail is decoded from the shortest byte prefix that
contains it, rendered, and scored against the reference, giving one
point per level in streaming order.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from . import codec
from .datasets import Camera, camera_rays, image_coords
from .field import FieldModel, decode_point, render_rays

__all__ = [
    "PSNR_CAP_DB",
    "RDPoint",
    "psnr",
    "ssim",
    "rate_distortion",
    "rd_points_to_csv",
    "ImageEvalSet",
    "VolumeEvalSet",
]

PSNR_CAP_DB = 99.0

_SSIM_WINDOW = 11
_SSIM_SIGMA = 1.5
_SSIM_K1 = 0.01
_SSIM_K2 = 0.03


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """Peak signal-to-noise ratio in dB for unit-range images.

    Identical inputs report the cap value instead of infinity.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_CAP_DB
    return min(10.0 * np.log10(1.0 / mse), PSNR_CAP_DB)


def _gaussian_window(size: int, sigma: float) -> np.ndarray:
    half = (size - 1) / 2.0
    x = np.arange(size) - half
    w = np.exp(-(x**2) / (2.0 * sigma**2))
    return w / w.sum()


def _filter2d_valid(img: np.ndarray, window: np.ndarray) -> np.ndarray:
    """Separable valid-mode correlation with a 1-D window along both axes."""
    size = len(window)
    h, w = img.shape
    rows = np.zeros((h, w - size + 1))
    for i, coeff in enumerate(window):
        rows += coeff * img[:, i : i + w - size + 1]
    out = np.zeros((h - size + 1, rows.shape[1]))
    for i, coeff in enumerate(window):
        out += coeff * rows[i : i + h - size + 1]
    return out


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Mean single-scale structural similarity, channels averaged.

    Uses an 11x11 Gaussian window (sigma 1.5), stabilizers K1=0.01 and
    K2=0.03 at dynamic range 1. Images must be at least the window size.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    if a.ndim == 2:
        a = a[:, :, None]
        b = b[:, :, None]
    if a.shape[0] < _SSIM_WINDOW or a.shape[1] < _SSIM_WINDOW:
        raise ValueError(f"image smaller than the {_SSIM_WINDOW}x{_SSIM_WINDOW} window")

    window = _gaussian_window(_SSIM_WINDOW, _SSIM_SIGMA)
    c1 = _SSIM_K1**2
    c2 = _SSIM_K2**2
    scores = []
    for ch in range(a.shape[2]):
        x, y = a[:, :, ch], b[:, :, ch]
        mu_x = _filter2d_valid(x, window)
        mu_y = _filter2d_valid(y, window)
        xx = _filter2d_valid(x * x, window) - mu_x**2
        yy = _filter2d_valid(y * y, window) - mu_y**2
        xy = _filter2d_valid(x * y, window) - mu_x * mu_y
        num = (2.0 * mu_x * mu_y + c1) * (2.0 * xy + c2)
        den = (mu_x**2 + mu_y**2 + c1) * (xx + yy + c2)
        scores.append(float(np.mean(num / den)))
    return float(np.mean(scores))


# ----------------------------------------------------------- evaluation


@dataclass
class ImageEvalSet:
    """Scores a 2-D field by reconstructing the full pixel grid."""

    reference: np.ndarray  # (h, w, 3)

    def render(self, model: FieldModel, lod: int) -> np.ndarray:
        h, w = self.reference.shape[:2]
        coords = image_coords(h, w)
        return decode_point(model, coords, lod=lod).reshape(h, w, 3)


@dataclass
class VolumeEvalSet:
    """Scores a radiance field from one reference camera."""

    reference: np.ndarray
    camera: Camera
    samples_per_cell: int = 16

    def render(self, model: FieldModel, lod: int) -> np.ndarray:
        origins, dirs = camera_rays(self.camera)
        rgb, _ = render_rays(
            model, origins, dirs, lod=lod, samples_per_cell=self.samples_per_cell
        )
        return rgb.reshape(self.camera.height, self.camera.width, 3)


@dataclass
class RDPoint:
    lod: int
    bytes_streamed: int
    psnr_db: float
    ssim: float


def rate_distortion(model: FieldModel, eval_set, stream: bytes) -> list[RDPoint]:
    """One quality point per level of detail along the stream prefixes."""
    sizes = codec.prefix_sizes(stream)
    points = []
    for lv in range(model.grid.levels):
        sub = codec.decode_prefix(stream, lv + 1)
        image = eval_set.render(sub, lod=lv)
        points.append(
            RDPoint(
                lod=lv,
                bytes_streamed=sizes[lv],
                psnr_db=psnr(image, eval_set.reference),
                ssim=ssim(image, eval_set.reference),
            )
        )
    return points


def rd_points_to_csv(points: list[RDPoint]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["lod", "bytes", "psnr_db", "ssim"])
    for p in points:
        writer.writerow([p.lod, p.bytes_streamed, f"{p.psnr_db:.4f}", f"{p.ssim:.6f}"])
    return buf.getvalue()
