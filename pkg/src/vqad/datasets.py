"""Task datasets and desk-scale scene generation.

Three supervision setups are supported: direct RGB targets on a pixel
grid (2-D), signed-distance targets at sampled 3-D points, and posed
RGB views of a synthetic volume for the rendered task. Everything here
is procedurally generated or loaded from PNG + JSON, so tests and the
acceptance run need no external data.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

__all__ = [
    "IdentityDataset",
    "VolumeDataset",
    "Camera",
    "SceneObject",
    "synthetic_image",
    "load_png",
    "save_png",
    "image_coords",
    "make_image_dataset",
    "sdf_sphere",
    "sdf_box",
    "make_sdf_dataset",
    "orbit_cameras",
    "camera_rays",
    "default_scene",
    "render_scene_reference",
    "make_volume_views",
    "load_volume_dataset",
]


@dataclass
class IdentityDataset:
    """Coordinate -> target pairs for the image and sdf heads."""

    coords: np.ndarray  # (n, d)
    targets: np.ndarray  # (n, c)
    head: str
    image_shape: tuple[int, int] | None = None  # (h, w) when from a pixel grid
    occupancy: object = None  # optional cell predicate for the grid builder

    def __len__(self):
        return len(self.coords)


@dataclass
class VolumeDataset:
    """Posed rays with RGB targets for the radiance head."""

    origins: np.ndarray  # (n, 3)
    directions: np.ndarray  # (n, 3), unit
    targets: np.ndarray  # (n, 3)
    background: np.ndarray
    cameras: list["Camera"] = field(default_factory=list)
    image_shape: tuple[int, int] | None = None
    occupancy: object = None  # optional cell predicate for the grid builder

    def __len__(self):
        return len(self.origins)


# --------------------------------------------------------------- images


def synthetic_image(size: int = 128, seed: int = 7) -> np.ndarray:
    """Deterministic test image used by the bundled 2-D task.

    Composition is tuned for compression experiments: smooth color
    ramps and soft-edged flat shapes (coarse-level content), a periodic
    texture whose period is a few finest-grid cells (fine-level content
    that collapses to a small set of local patterns), and a per-pixel
    checker that no feature grid can represent, which acts as a common
    reconstruction-error floor across methods.
    """
    rng = np.random.default_rng(seed)
    yy, xx = np.meshgrid(
        np.linspace(-1, 1, size), np.linspace(-1, 1, size), indexing="ij"
    )
    img = np.zeros((size, size, 3))
    img[..., 0] = 0.45 + 0.25 * xx
    img[..., 1] = 0.5 + 0.2 * yy
    img[..., 2] = 0.55 - 0.2 * xx * yy

    palette = np.array(
        [
            [0.92, 0.28, 0.22],
            [0.22, 0.75, 0.34],
            [0.23, 0.38, 0.9],
            [0.95, 0.82, 0.25],
            [0.65, 0.28, 0.85],
            [0.9, 0.9, 0.92],
        ]
    )
    soft = 0.045  # edge half-width, a few pixels at size 128

    def smoothstep(t):
        return 1.0 / (1.0 + np.exp(-t))

    for i in range(6):
        kind = rng.integers(2)
        cx, cy = rng.uniform(-0.65, 0.65, 2)
        color = palette[i % len(palette)]
        if kind == 0:
            r = rng.uniform(0.15, 0.32)
            dist = np.sqrt((xx - cx) ** 2 + (yy - cy) ** 2)
            m = smoothstep((r - dist) / soft)
        else:
            w, h = rng.uniform(0.12, 0.3, 2)
            m = smoothstep((w - np.abs(xx - cx)) / soft) * smoothstep(
                (h - np.abs(yy - cy)) / soft
            )
        img = img * (1 - m[..., None]) + color * m[..., None]

    texture = 0.22 * np.sin(16 * np.pi * xx) * np.sin(16 * np.pi * yy)
    img += texture[..., None]
    ii, jj = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
    checker = (((ii + jj) % 2) * 2.0 - 1.0) * 0.05
    img += checker[..., None]
    return np.clip(img, 0.01, 0.99)


def load_png(path, background=(0.0, 0.0, 0.0)) -> np.ndarray:
    """Load a PNG as float RGB in [0, 1].

    RGBA inputs are alpha-premultiplied and laid over *background* so
    boundary pixels match what the renderer will be asked to produce.
    """
    img = Image.open(path)
    arr = np.asarray(img, dtype=np.float64) / 255.0
    if arr.ndim == 2:
        arr = np.repeat(arr[:, :, None], 3, axis=2)
    if arr.shape[2] == 4:
        alpha = arr[:, :, 3:4]
        arr = arr[:, :, :3] * alpha + np.asarray(background) * (1.0 - alpha)
    return arr[:, :, :3]


def save_png(path, image: np.ndarray):
    data = np.clip(np.asarray(image), 0.0, 1.0)
    Image.fromarray((data * 255.0 + 0.5).astype(np.uint8)).save(path)


def image_coords(height: int, width: int) -> np.ndarray:
    """Pixel-center coordinates in [-1, 1]^2, row-major (x0 = column axis)."""
    cols = -1.0 + 2.0 * (np.arange(width) + 0.5) / width
    rows = -1.0 + 2.0 * (np.arange(height) + 0.5) / height
    cc, rr = np.meshgrid(cols, rows)
    return np.stack([cc.reshape(-1), rr.reshape(-1)], axis=1)


def make_image_dataset(image: np.ndarray) -> IdentityDataset:
    image = np.asarray(image, dtype=np.float64)
    h, w = image.shape[:2]
    return IdentityDataset(
        coords=image_coords(h, w),
        targets=image.reshape(-1, 3),
        head="image",
        image_shape=(h, w),
    )


# ------------------------------------------------------------------ sdf


def sdf_sphere(points: np.ndarray, radius: float = 0.6, center=(0.0, 0.0, 0.0)):
    p = np.atleast_2d(points) - np.asarray(center)
    return np.linalg.norm(p, axis=1) - radius


def sdf_box(points: np.ndarray, half_extents=(0.5, 0.5, 0.5), center=(0.0, 0.0, 0.0)):
    p = np.abs(np.atleast_2d(points) - np.asarray(center)) - np.asarray(half_extents)
    outside = np.linalg.norm(np.maximum(p, 0.0), axis=1)
    inside = np.minimum(p.max(axis=1), 0.0)
    return outside + inside


_SDF_SHAPES = {"sphere": sdf_sphere, "box": sdf_box}


def make_sdf_dataset(
    shape: str = "sphere",
    n_samples: int = 20000,
    seed: int = 0,
    **shape_params,
) -> IdentityDataset:
    """Uniform plus near-surface samples of an analytic signed distance."""
    if shape not in _SDF_SHAPES:
        raise ValueError(f"unknown sdf shape {shape!r}; options: {sorted(_SDF_SHAPES)}")
    fn = _SDF_SHAPES[shape]
    rng = np.random.default_rng(seed)
    uniform = rng.uniform(-1.0, 1.0, size=(n_samples // 2, 3))
    base = rng.uniform(-1.0, 1.0, size=(n_samples - len(uniform), 3))
    near = np.clip(base + rng.normal(0.0, 0.05, size=base.shape), -1.0, 1.0)
    coords = np.concatenate([uniform, near], axis=0)
    targets = fn(coords, **shape_params)[:, None]
    return IdentityDataset(coords=coords, targets=targets, head="sdf")


# --------------------------------------------------------------- volume


@dataclass
class Camera:
    camera_to_world: np.ndarray  # (4, 4)
    focal_px: float
    width: int
    height: int

    def to_json(self):
        return {
            "camera_to_world": self.camera_to_world.tolist(),
            "focal_px": self.focal_px,
            "width": self.width,
            "height": self.height,
        }


def orbit_cameras(
    n_views: int, radius: float = 2.6, focal_px: float = 50.0,
    width: int = 48, height: int = 48, elevation: float = 0.35,
) -> list[Camera]:
    """Cameras on a tilted circle, all looking at the origin."""
    cams = []
    for i in range(n_views):
        phi = 2.0 * np.pi * i / n_views
        eye = radius * np.array(
            [np.cos(phi) * np.cos(elevation), np.sin(phi) * np.cos(elevation),
             np.sin(elevation)]
        )
        forward = -eye / np.linalg.norm(eye)
        up = np.array([0.0, 0.0, 1.0])
        right = np.cross(forward, up)
        right /= np.linalg.norm(right)
        down = np.cross(forward, right)
        c2w = np.eye(4)
        c2w[:3, 0] = right
        c2w[:3, 1] = down
        c2w[:3, 2] = forward
        c2w[:3, 3] = eye
        cams.append(Camera(c2w, focal_px, width, height))
    return cams


def camera_rays(camera: Camera):
    """Unit world-space rays through each pixel center, row-major."""
    j, i = np.meshgrid(np.arange(camera.width), np.arange(camera.height))
    x = (j.reshape(-1) + 0.5 - camera.width / 2.0) / camera.focal_px
    y = (i.reshape(-1) + 0.5 - camera.height / 2.0) / camera.focal_px
    dirs_cam = np.stack([x, y, np.ones_like(x)], axis=1)
    dirs = dirs_cam @ camera.camera_to_world[:3, :3].T
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    origins = np.broadcast_to(camera.camera_to_world[:3, 3], dirs.shape).copy()
    return origins, dirs


@dataclass
class SceneObject:
    """Constant-density, constant-color primitive with a closed-form render."""

    kind: str  # "sphere" | "box"
    center: np.ndarray
    size: float | np.ndarray  # radius or half extents
    density: float
    color: np.ndarray


def default_scene() -> list[SceneObject]:
    return [
        SceneObject("sphere", np.array([-0.35, 0.0, 0.0]), 0.42, 9.0,
                    np.array([0.85, 0.25, 0.2])),
        SceneObject("box", np.array([0.45, 0.1, -0.1]), np.array([0.28, 0.3, 0.34]),
                    6.0, np.array([0.2, 0.45, 0.9])),
    ]


def _object_interval(obj: SceneObject, origins, dirs):
    """Entry/exit ray parameters per ray; empty intervals collapse to zero."""
    if obj.kind == "sphere":
        oc = origins - obj.center
        b = (oc * dirs).sum(axis=1)
        c = (oc**2).sum(axis=1) - float(obj.size) ** 2
        disc = b * b - c
        root = np.sqrt(np.maximum(disc, 0.0))
        t0, t1 = -b - root, -b + root
        miss = disc <= 0.0
    elif obj.kind == "box":
        half = np.asarray(obj.size)
        with np.errstate(divide="ignore", invalid="ignore"):
            inv = 1.0 / dirs
            lo = (obj.center - half - origins) * inv
            hi = (obj.center + half - origins) * inv
        t0 = np.nanmax(np.minimum(lo, hi), axis=1)
        t1 = np.nanmin(np.maximum(lo, hi), axis=1)
        miss = t1 <= t0
    else:
        raise ValueError(f"unknown scene object kind {obj.kind!r}")
    t0 = np.where(miss, 0.0, np.maximum(t0, 0.0))
    t1 = np.where(miss, 0.0, np.maximum(t1, t0))
    return t0, t1


def render_scene_reference(scene, camera: Camera, background=(0.0, 0.0, 0.0)):
    """Exact emission-absorption render of piecewise-constant objects.

    Objects must not overlap; their ray intervals are composited in
    depth order with analytic transmittance per segment.
    """
    origins, dirs = camera_rays(camera)
    n = len(origins)
    intervals = [_object_interval(obj, origins, dirs) for obj in scene]
    order = np.argsort([iv[0] for iv in intervals], axis=0)

    color = np.zeros((n, 3))
    transmittance = np.ones(n)
    for rank in range(len(scene)):
        for k, obj in enumerate(scene):
            sel = order[rank] == k
            if not sel.any():
                continue
            t0, t1 = intervals[k]
            seg = np.maximum(t1[sel] - t0[sel], 0.0)
            absorb = 1.0 - np.exp(-obj.density * seg)
            color[sel] += transmittance[sel, None] * absorb[:, None] * obj.color
            transmittance[sel] *= 1.0 - absorb
    color += transmittance[:, None] * np.asarray(background)
    return color.reshape(camera.height, camera.width, 3)


def make_volume_views(
    out_dir,
    scene=None,
    n_views: int = 8,
    width: int = 48,
    height: int = 48,
    background=(0.0, 0.0, 0.0),
    focal_px: float = 50.0,
):
    """Write posed ground-truth PNG views plus a cameras.json manifest."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    scene = default_scene() if scene is None else scene
    cams = orbit_cameras(n_views, width=width, height=height, focal_px=focal_px)
    manifest = {"background": list(background), "views": []}
    for i, cam in enumerate(cams):
        name = f"view_{i:03d}.png"
        save_png(out_dir / name, render_scene_reference(scene, cam, background))
        entry = cam.to_json()
        entry["file"] = name
        manifest["views"].append(entry)
    (out_dir / "cameras.json").write_text(json.dumps(manifest, indent=2))
    return out_dir


def load_volume_dataset(views_dir) -> VolumeDataset:
    """Read a views directory (PNGs + cameras.json) into flat ray targets.

    Optional per-view depth files in the manifest are accepted and
    ignored; occupancy comes from the run configuration instead.
    """
    views_dir = Path(views_dir)
    manifest = json.loads((views_dir / "cameras.json").read_text())
    background = np.asarray(manifest.get("background", [0.0, 0.0, 0.0]), dtype=np.float64)
    origins, dirs, targets, cams = [], [], [], []
    shape = None
    for entry in manifest["views"]:
        cam = Camera(
            camera_to_world=np.asarray(entry["camera_to_world"], dtype=np.float64),
            focal_px=float(entry["focal_px"]),
            width=int(entry["width"]),
            height=int(entry["height"]),
        )
        image = load_png(views_dir / entry["file"], background)
        if image.shape[:2] != (cam.height, cam.width):
            raise ValueError(f"view {entry['file']} does not match its camera size")
        o, d = camera_rays(cam)
        origins.append(o)
        dirs.append(d)
        targets.append(image.reshape(-1, 3))
        cams.append(cam)
        shape = (cam.height, cam.width)
    return VolumeDataset(
        origins=np.concatenate(origins),
        directions=np.concatenate(dirs),
        targets=np.concatenate(targets),
        background=background,
        cameras=cams,
        image_shape=shape,
    )
