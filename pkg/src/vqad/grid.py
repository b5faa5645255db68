"""Multiresolution occupancy-masked vertex grids.

A pyramid holds one vertex grid per level, each twice the cell
resolution of the previous. Cells are gated by an occupancy mask with a
tree property (an occupied fine cell always sits inside an occupied
coarse cell; the coarsest level is fully occupied so it defines the
queryable domain). Features live on the distinct corner vertices of
occupied cells, shared between neighbours, and a query sums the
d-linear interpolation of each level up to the requested level of
detail. Levels whose containing cell is unoccupied contribute an exact
zero, so a truncated pyramid behaves like the full one rendered coarse.

Coordinates are normalized to [-1, 1]^d.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "GridConfig",
    "OccupancyMask",
    "FeatureGridPyramid",
    "OutsideDomainError",
    "EmptyOccupancyError",
    "build_pyramid",
    "interpolate",
    "vertex_count",
    "dense_occupancy",
    "sphere_occupancy",
    "box_occupancy",
]

# Guard against accidentally huge vertex tables (per level, flat int32).
_MAX_TABLE_ENTRIES = 1 << 28


class OutsideDomainError(ValueError):
    """Raised for query points outside the coarsest occupied region."""


class EmptyOccupancyError(ValueError):
    """Raised when the occupancy predicate selects no cell at all."""


@dataclass(frozen=True)
class GridConfig:
    levels: int
    base_resolution: int
    feature_width: int
    dim: int = 3

    def __post_init__(self):
        if self.levels < 1:
            raise ValueError("levels must be >= 1")
        if self.base_resolution < 1:
            raise ValueError("base_resolution must be >= 1")
        if self.feature_width < 1:
            raise ValueError("feature_width must be >= 1")
        if self.dim not in (2, 3):
            raise ValueError("dim must be 2 or 3")
        finest = self.base_resolution << (self.levels - 1)
        if (finest + 1) ** self.dim > _MAX_TABLE_ENTRIES:
            raise ValueError("resolution overflow: vertex table too large")

    @property
    def resolutions(self) -> list[int]:
        """Cell resolution per level; doubles level to level."""
        return [self.base_resolution << lv for lv in range(self.levels)]

    def vertex_shape(self, level: int) -> tuple[int, ...]:
        r = self.resolutions[level]
        return (r + 1,) * self.dim


@dataclass
class OccupancyMask:
    """Per-level boolean cell masks, flat in C order over cell coords."""

    resolutions: list[int]
    dim: int
    cells: list[np.ndarray] = field(default_factory=list)

    def occupied_count(self, level: int) -> int:
        return int(self.cells[level].sum())

    def is_occupied(self, level: int, flat_cell_idx: np.ndarray) -> np.ndarray:
        return self.cells[level][flat_cell_idx]


# ----------------------------------------------------------- predicates
#
# Occupancy callables receive (n, d) cell-center coordinates and return a
# boolean vector. They replace capture-driven initialization with small
# analytic regions usable at desk scale.


def dense_occupancy():
    def predicate(centers):
        return np.ones(len(centers), dtype=bool)

    return predicate


def sphere_occupancy(radius=0.8, center=None):
    def predicate(centers):
        c = np.zeros(centers.shape[1]) if center is None else np.asarray(center)
        return ((centers - c) ** 2).sum(axis=1) <= radius * radius

    return predicate


def box_occupancy(half_extents, center=None):
    half = np.asarray(half_extents, dtype=float)

    def predicate(centers):
        c = np.zeros(centers.shape[1]) if center is None else np.asarray(center)
        return (np.abs(centers - c) <= half).all(axis=1)

    return predicate


# -------------------------------------------------------------- pyramid


class FeatureGridPyramid:
    """Occupancy-masked vertex storage for all levels.

    Every level holds exactly one storage kind:

    * ``"raw"``   -- float feature rows, one per vertex
    * ``"soft"``  -- per-vertex logits over codebook rows (training state)
    * ``"baked"`` -- integer codebook indices, one per vertex
    * ``None``    -- structure only, no payload yet
    """

    def __init__(self, config: GridConfig, mask: OccupancyMask):
        self.config = config
        self.mask = mask
        self.storage_kind: str | None = None
        self.levels: list[np.ndarray] = []
        # vertex_rows[level] maps a flat lattice coordinate to its storage
        # row, or -1 when no occupied cell touches that vertex.
        self.vertex_rows: list[np.ndarray] = []
        self.vertex_counts: list[int] = []
        self._build_vertex_tables()

    def _build_vertex_tables(self):
        d = self.config.dim
        offsets = _corner_offsets(d)
        for level, res in enumerate(self.config.resolutions):
            occupied_flat = np.flatnonzero(self.mask.cells[level])
            cells = np.stack(np.unravel_index(occupied_flat, (res,) * d), axis=1)
            vshape = (res + 1,) * d
            flags = np.zeros(int(np.prod(vshape)), dtype=bool)
            for off in offsets:
                corner = cells + off
                flags[np.ravel_multi_index(tuple(corner.T), vshape)] = True
            rows = np.full(flags.shape, -1, dtype=np.int32)
            rows[flags] = np.arange(int(flags.sum()), dtype=np.int32)
            self.vertex_rows.append(rows)
            self.vertex_counts.append(int(flags.sum()))

    # --------------------------------------------------------- payloads

    def set_storage(self, kind: str, levels: list[np.ndarray]):
        if kind not in ("raw", "soft", "baked"):
            raise ValueError(f"unknown storage kind {kind!r}")
        if len(levels) != self.config.levels:
            raise ValueError("one payload array per level required")
        for level, arr in enumerate(levels):
            if arr.shape[0] != self.vertex_counts[level]:
                raise ValueError(
                    f"level {level}: payload rows {arr.shape[0]} != "
                    f"vertex count {self.vertex_counts[level]}"
                )
        self.storage_kind = kind
        self.levels = list(levels)

    def copy_structure(self, levels_kept: int | None = None) -> "FeatureGridPyramid":
        """New pyramid sharing geometry, optionally truncated, no payload."""
        keep = self.config.levels if levels_kept is None else levels_kept
        cfg = GridConfig(
            levels=keep,
            base_resolution=self.config.base_resolution,
            feature_width=self.config.feature_width,
            dim=self.config.dim,
        )
        mask = OccupancyMask(
            resolutions=cfg.resolutions,
            dim=cfg.dim,
            cells=[c.copy() for c in self.mask.cells[:keep]],
        )
        return FeatureGridPyramid(cfg, mask)

    # --------------------------------------------------------- geometry

    def locate(self, x: np.ndarray, level: int):
        """Cell coords, interpolation fractions and occupancy for (n, d) points."""
        res = self.config.resolutions[level]
        u = (x + 1.0) * (0.5 * res)
        cell = np.minimum(u.astype(np.int64), res - 1)
        cell = np.maximum(cell, 0)
        frac = u - cell
        flat = np.ravel_multi_index(tuple(cell.T), (res,) * self.config.dim)
        return cell, frac, self.mask.cells[level][flat]

    def gather_plan(self, x: np.ndarray, lod: int):
        """Per level up to *lod*: (corner rows, corner weights) for (n, d) points.

        Rows for unoccupied cells are clamped to 0 with zero weights so a
        blend over the plan contributes an exact zero for those levels.
        """
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if x.shape[1] != self.config.dim:
            raise ValueError(f"expected points of dimension {self.config.dim}")
        if np.any(np.abs(x) > 1.0):
            raise OutsideDomainError("query point outside the [-1, 1]^d domain")
        if not 0 <= lod < self.config.levels:
            raise ValueError(f"lod {lod} out of range for {self.config.levels} levels")

        d = self.config.dim
        offsets = _corner_offsets(d)
        plan = []
        for level in range(lod + 1):
            cell, frac, occ = self.locate(x, level)
            vshape = self.config.vertex_shape(level)
            rows = np.empty((len(x), len(offsets)), dtype=np.int64)
            weights = np.empty((len(x), len(offsets)), dtype=np.float64)
            for j, off in enumerate(offsets):
                corner = cell + off
                rows[:, j] = self.vertex_rows[level][
                    np.ravel_multi_index(tuple(corner.T), vshape)
                ]
                w = np.ones(len(x))
                for axis in range(d):
                    w = w * (frac[:, axis] if off[axis] else 1.0 - frac[:, axis])
                weights[:, j] = w
            weights[~occ] = 0.0
            rows[~occ] = 0
            rows[rows < 0] = 0  # unused corners of unoccupied cells
            plan.append((rows, weights))
        return plan

    # ----------------------------------------------------------- queries

    def interpolate(self, x: np.ndarray, lod: int | None = None) -> np.ndarray:
        """Sum of the d-linear feature interpolation over levels 0..lod."""
        if self.storage_kind != "raw":
            raise ValueError(
                "interpolate needs raw features; resolve quantized storage first"
            )
        single = np.asarray(x).ndim == 1
        lod = self.config.levels - 1 if lod is None else lod
        plan = self.gather_plan(x, lod)
        out = None
        for level, (rows, weights) in enumerate(plan):
            feats = self.levels[level][rows]
            contrib = np.einsum("nj,njk->nk", weights.astype(feats.dtype), feats)
            out = contrib if out is None else out + contrib
        return out[0] if single else out

    def vertex_count(self, level: int) -> int:
        if not 0 <= level < self.config.levels:
            raise ValueError("level out of range")
        return self.vertex_counts[level]

    def total_vertices(self) -> int:
        return sum(self.vertex_counts)


def _corner_offsets(dim: int) -> np.ndarray:
    """Corner j has offset bit a of j along axis a (corner 0 = cell origin)."""
    n = 1 << dim
    out = np.zeros((n, dim), dtype=np.int64)
    for j in range(n):
        for a in range(dim):
            out[j, a] = (j >> a) & 1
    return out


def build_pyramid(
    config: GridConfig,
    occupancy=None,
    init: str = "normal",
    init_std: float = 0.01,
    seed: int = 0,
    dtype=np.float32,
) -> FeatureGridPyramid:
    """Construct a pyramid and its raw feature storage.

    *occupancy* decides cell membership at the finest level from cell
    centers; coarser masks are the parent closure of the finest one and
    the coarsest level is always fully occupied. ``init`` is ``"normal"``
    for N(0, init_std^2) features or ``"zeros"``.
    """
    predicate = occupancy or dense_occupancy()
    resolutions = config.resolutions
    d = config.dim

    finest = resolutions[-1]
    idx = np.stack(
        np.unravel_index(np.arange(finest**d), (finest,) * d), axis=1
    ).astype(np.float64)
    centers = -1.0 + (idx + 0.5) * (2.0 / finest)
    occ = np.asarray(predicate(centers), dtype=bool)
    if not occ.any():
        raise EmptyOccupancyError("occupancy predicate selected no cell")

    cells = [None] * config.levels
    cells[-1] = occ
    for level in range(config.levels - 2, -1, -1):
        fine = cells[level + 1].reshape((resolutions[level + 1],) * d)
        shape = []
        for _ in range(d):
            shape.extend([resolutions[level], 2])
        coarse = fine.reshape(shape).any(axis=tuple(range(1, 2 * d, 2)))
        cells[level] = coarse.reshape(-1)
    cells[0] = np.ones_like(cells[0])  # coarsest level defines the domain

    mask = OccupancyMask(resolutions=resolutions, dim=d, cells=cells)
    pyramid = FeatureGridPyramid(config, mask)

    rng = np.random.default_rng(seed)
    feats = []
    for m in pyramid.vertex_counts:
        if init == "zeros":
            feats.append(np.zeros((m, config.feature_width), dtype=dtype))
        elif init == "normal":
            feats.append(
                (rng.standard_normal((m, config.feature_width)) * init_std).astype(dtype)
            )
        else:
            raise ValueError(f"unknown init {init!r}")
    pyramid.set_storage("raw", feats)
    return pyramid


def interpolate(pyramid: FeatureGridPyramid, x, lod: int | None = None) -> np.ndarray:
    return pyramid.interpolate(x, lod)


def vertex_count(pyramid: FeatureGridPyramid, level: int) -> int:
    return pyramid.vertex_count(level)
