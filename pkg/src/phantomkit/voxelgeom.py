"""Voxel volumes, binary masks, rigid/scale transforms and surface similarity metrics.

Axis convention used everywhere: array axis 0 = LR, axis 1 = AP, axis 2 = IS.
A voxel with index (i, j, k) has its center at origin + (index + 0.5) * spacing,
in millimetres.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    EmptyMask,
    GeometryMismatch,
    InvalidScale,
    InvalidTolerance,
    TransplantClipped,
)

DEFAULT_FILL_HU = 78  # generic soft abdominal tissue

VOLUME_SCALE_BOUNDS = (0.25, 1.25)


@dataclass(frozen=True)
class Point3:
    """A position in mm along the LR / AP / IS axes."""

    lr: float
    ap: float
    is_: float

    def as_array(self) -> np.ndarray:
        return np.array([self.lr, self.ap, self.is_], dtype=float)

    @staticmethod
    def from_array(a) -> "Point3":
        return Point3(float(a[0]), float(a[1]), float(a[2]))

    def __add__(self, other: "Point3") -> "Point3":
        return Point3(self.lr + other.lr, self.ap + other.ap, self.is_ + other.is_)

    def __sub__(self, other: "Point3") -> "Point3":
        return Point3(self.lr - other.lr, self.ap - other.ap, self.is_ - other.is_)


def _check_geometry_fields(dims, spacing, origin, buffer_size):
    dims = tuple(int(d) for d in dims)
    spacing = tuple(float(s) for s in spacing)
    origin = tuple(float(o) for o in origin)
    if len(dims) != 3 or any(d <= 0 for d in dims):
        raise ValueError(f"dims must be three positive counts, got {dims}")
    if len(spacing) != 3 or any(s <= 0 for s in spacing):
        raise ValueError(f"spacing must be three positive mm values, got {spacing}")
    if len(origin) != 3:
        raise ValueError(f"origin must be a 3-vector, got {origin}")
    n = dims[0] * dims[1] * dims[2]
    if buffer_size != n:
        raise ValueError(f"value buffer has {buffer_size} entries, expected {n}")
    return dims, spacing, origin


@dataclass(frozen=True)
class VoxelGrid:
    """3D scalar volume in Hounsfield-unit semantics (int16 storage)."""

    dims: tuple
    spacing: tuple
    origin: tuple
    values: np.ndarray  # shape dims, int16

    def __post_init__(self):
        dims, spacing, origin = _check_geometry_fields(
            self.dims, self.spacing, self.origin, self.values.size
        )
        values = np.ascontiguousarray(self.values, dtype=np.int16).reshape(dims)
        values.flags.writeable = False
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "values", values)

    def same_geometry(self, other) -> bool:
        return (
            self.dims == other.dims
            and self.spacing == other.spacing
            and self.origin == other.origin
        )

    def with_values(self, values: np.ndarray) -> "VoxelGrid":
        return VoxelGrid(self.dims, self.spacing, self.origin, values)


@dataclass(frozen=True)
class Mask:
    """Binary segmentation sharing the geometry of the grid it annotates."""

    dims: tuple
    spacing: tuple
    origin: tuple
    occupancy: np.ndarray  # shape dims, bool

    def __post_init__(self):
        dims, spacing, origin = _check_geometry_fields(
            self.dims, self.spacing, self.origin, self.occupancy.size
        )
        occ = np.ascontiguousarray(self.occupancy, dtype=bool).reshape(dims)
        occ.flags.writeable = False
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "occupancy", occ)

    def same_geometry(self, other) -> bool:
        return (
            self.dims == other.dims
            and self.spacing == other.spacing
            and self.origin == other.origin
        )

    def with_occupancy(self, occ: np.ndarray) -> "Mask":
        return Mask(self.dims, self.spacing, self.origin, occ)

    @property
    def voxel_count(self) -> int:
        return int(self.occupancy.sum())

    def is_empty(self) -> bool:
        return not self.occupancy.any()


@dataclass(frozen=True)
class SurfacePointSet:
    """Boundary voxel centers of a mask, one (lr, ap, is) row per point, in mm."""

    points: np.ndarray  # (n, 3) float64

    def __len__(self):
        return self.points.shape[0]


def mask_like(grid: VoxelGrid, occupancy: np.ndarray) -> Mask:
    return Mask(grid.dims, grid.spacing, grid.origin, occupancy)


def _require_non_empty(m: Mask, what: str = "mask"):
    if m.is_empty():
        raise EmptyMask(f"{what} has no occupied voxels")


def _require_same_geometry(a, b):
    if not a.same_geometry(b):
        raise GeometryMismatch(
            f"geometry mismatch: {a.dims}/{a.spacing}/{a.origin} vs "
            f"{b.dims}/{b.spacing}/{b.origin}"
        )


def _occupied_indices(m: Mask) -> np.ndarray:
    return np.argwhere(m.occupancy).astype(np.int64)


def voxel_centers_mm(m: Mask, indices: np.ndarray) -> np.ndarray:
    """Centers of the given (n, 3) voxel indices in mm."""
    spacing = np.asarray(m.spacing)
    origin = np.asarray(m.origin)
    return origin + (indices + 0.5) * spacing


def center_of_mass(m: Mask) -> Point3:
    """Unweighted mean of occupied-voxel center positions, in mm."""
    _require_non_empty(m)
    idx = _occupied_indices(m)
    mean_idx = idx.sum(axis=0) / idx.shape[0]  # exact int64 sums
    com = np.asarray(m.origin) + (mean_idx + 0.5) * np.asarray(m.spacing)
    return Point3.from_array(com)


def _boundary_occupancy(occ: np.ndarray) -> np.ndarray:
    """Occupied voxels with at least one of 6 face-neighbors unoccupied (OOB counts as unoccupied)."""
    padded = np.pad(occ, 1, mode="constant", constant_values=False)
    interior = padded[2:, 1:-1, 1:-1] & padded[:-2, 1:-1, 1:-1]
    interior &= padded[1:-1, 2:, 1:-1] & padded[1:-1, :-2, 1:-1]
    interior &= padded[1:-1, 1:-1, 2:] & padded[1:-1, 1:-1, :-2]
    return occ & ~interior


def surface_voxels(m: Mask) -> SurfacePointSet:
    """Surface discretization: centers of 6-connectivity boundary voxels, in mm."""
    _require_non_empty(m)
    idx = np.argwhere(_boundary_occupancy(m.occupancy)).astype(np.int64)
    return SurfacePointSet(voxel_centers_mm(m, idx))


def _surface_points_for_sdsc(m: Mask, centered: bool) -> np.ndarray:
    """Boundary voxel centers, optionally translated so the mask COM sits at the origin.

    Centering is done in integer index space (idx * n - sum(idx), scaled by
    spacing / n) so that whole-voxel translations of the mask leave the
    centered coordinates bit-identical, which makes COM-aligned sDSC exactly
    symmetric and exactly translation invariant.
    """
    occ_idx = _occupied_indices(m)
    surf_idx = np.argwhere(_boundary_occupancy(m.occupancy)).astype(np.int64)
    spacing = np.asarray(m.spacing)
    if not centered:
        return voxel_centers_mm(m, surf_idx)
    n = occ_idx.shape[0]
    sums = occ_idx.sum(axis=0)  # exact
    offsets = surf_idx * n - sums  # exact int64
    return offsets * (spacing / n)


def _min_sq_dists(points: np.ndarray, other: np.ndarray) -> np.ndarray:
    """Min squared Euclidean distance from each row of `points` to the set `other`.

    Chunked broadcasting; per-pair arithmetic is dx*dx + dy*dy + dz*dz so the
    all-pairs oracle reproduces it bit-exactly.
    """
    n = points.shape[0]
    m = other.shape[0]
    out = np.empty(n, dtype=np.float64)
    chunk = max(1, 4_000_000 // max(m, 1))
    ox, oy, oz = other[:, 0], other[:, 1], other[:, 2]
    for s in range(0, n, chunk):
        block = points[s : s + chunk]
        dx = block[:, 0, None] - ox[None, :]
        dy = block[:, 1, None] - oy[None, :]
        dz = block[:, 2, None] - oz[None, :]
        d2 = dx * dx + dy * dy + dz * dz
        out[s : s + chunk] = d2.min(axis=1)
    return out


def _count_within(points: np.ndarray, other: np.ndarray, tau2: float, tau: float) -> int:
    """Number of rows of `points` with some `other` point at squared distance <= tau2.

    Uses a uniform cell grid of size tau: any hit lies in the 27 cells around
    the query's cell, so only those candidates are tested. The per-pair
    predicate is the same dx*dx + dy*dy + dz*dz <= tau2 as the brute-force
    scan, which keeps the counts exactly equal to the all-pairs oracle.
    """
    if points.shape[0] * other.shape[0] <= 250_000:
        return int(np.count_nonzero(_min_sq_dists(points, other) <= tau2))
    buckets: dict = {}
    other_cells = np.floor(other / tau).astype(np.int64)
    for i, cell in enumerate(map(tuple, other_cells)):
        buckets.setdefault(cell, []).append(i)
    point_cells = np.floor(points / tau).astype(np.int64)
    groups: dict = {}
    for i, cell in enumerate(map(tuple, point_cells)):
        groups.setdefault(cell, []).append(i)
    neighborhood = [
        (di, dj, dk) for di in (-1, 0, 1) for dj in (-1, 0, 1) for dk in (-1, 0, 1)
    ]
    hits = 0
    for cell, rows in groups.items():
        cand: list = []
        for di, dj, dk in neighborhood:
            cand.extend(buckets.get((cell[0] + di, cell[1] + dj, cell[2] + dk), ()))
        if not cand:
            continue
        cx = other[cand]
        block = points[rows]
        dx = block[:, 0, None] - cx[None, :, 0]
        dy = block[:, 1, None] - cx[None, :, 1]
        dz = block[:, 2, None] - cx[None, :, 2]
        d2 = dx * dx + dy * dy + dz * dz
        hits += int(np.count_nonzero((d2 <= tau2).any(axis=1)))
    return hits


def sdsc(a: Mask, b: Mask, tau_mm: float, align: bool = True) -> float:
    """Surface Dice-Sorensen coefficient as a percentage.

    Counts surface points of each mask lying within `tau_mm` of the other
    mask's surface. With `align`, b's point set is translated (continuously)
    so both centers of mass coincide before measuring distances.
    """
    _require_non_empty(a, "first mask")
    _require_non_empty(b, "second mask")
    if not tau_mm > 0:
        raise InvalidTolerance(f"tau must be > 0 mm, got {tau_mm}")
    sa = _surface_points_for_sdsc(a, centered=align)
    sb = _surface_points_for_sdsc(b, centered=align)
    tau2 = tau_mm * tau_mm
    hits_a = _count_within(sa, sb, tau2, tau_mm)
    hits_b = _count_within(sb, sa, tau2, tau_mm)
    return 100.0 * (hits_a + hits_b) / (sa.shape[0] + sb.shape[0])


def dsc(a: Mask, b: Mask) -> float:
    """Volumetric Dice-Sorensen coefficient as a percentage."""
    _require_same_geometry(a, b)
    na = a.voxel_count
    nb = b.voxel_count
    if na == 0 and nb == 0:
        raise EmptyMask("both masks empty")
    inter = int(np.count_nonzero(a.occupancy & b.occupancy))
    return 100.0 * 2.0 * inter / (na + nb)


def translate_mask_counted(m: Mask, delta: Point3) -> tuple:
    """Shift occupancy by round(delta / spacing) voxels; returns (mask, clipped_count)."""
    spacing = np.asarray(m.spacing)
    shift = np.rint(delta.as_array() / spacing).astype(int)
    if not shift.any():
        return m, 0
    occ = m.occupancy
    new_occ = np.zeros_like(occ)
    src = []
    dst = []
    for axis in range(3):
        k = int(shift[axis])
        size = m.dims[axis]
        lo_src = max(0, -k)
        hi_src = min(size, size - k)
        if hi_src <= lo_src:
            return m.with_occupancy(new_occ), m.voxel_count
        src.append(slice(lo_src, hi_src))
        dst.append(slice(lo_src + k, hi_src + k))
    new_occ[tuple(dst)] = occ[tuple(src)]
    clipped = m.voxel_count - int(new_occ.sum())
    return m.with_occupancy(new_occ), clipped


def translate_mask(m: Mask, delta: Point3) -> Mask:
    """Shift occupancy by round(delta / spacing) voxels; out-of-grid voxels drop."""
    return translate_mask_counted(m, delta)[0]


def _nearest_indices(positions: np.ndarray, origin, spacing) -> np.ndarray:
    """Nearest voxel index per (n, 3) position in mm (may be out of bounds)."""
    rel = (positions - np.asarray(origin)) / np.asarray(spacing) - 0.5
    return np.rint(rel).astype(np.int64)


def _rescale_occupancy(m: Mask, linear_factor: float) -> np.ndarray:
    """Nearest-neighbor uniform rescale of occupancy about the mask COM."""
    com = center_of_mass(m).as_array()
    spacing = np.asarray(m.spacing)
    origin = np.asarray(m.origin)
    idx = _occupied_indices(m)
    lo_mm = origin + (idx.min(axis=0) + 0.5) * spacing
    hi_mm = origin + (idx.max(axis=0) + 0.5) * spacing
    # Target bounding box: source box scaled about COM, padded one voxel.
    t_lo = com + (lo_mm - com) * linear_factor - spacing
    t_hi = com + (hi_mm - com) * linear_factor + spacing
    lo_idx = np.maximum(_nearest_indices(t_lo[None, :], origin, spacing)[0], 0)
    hi_idx = np.minimum(
        _nearest_indices(t_hi[None, :], origin, spacing)[0], np.array(m.dims) - 1
    )
    new_occ = np.zeros(m.dims, dtype=bool)
    if np.any(hi_idx < lo_idx):
        return new_occ
    ii, jj, kk = np.meshgrid(
        np.arange(lo_idx[0], hi_idx[0] + 1),
        np.arange(lo_idx[1], hi_idx[1] + 1),
        np.arange(lo_idx[2], hi_idx[2] + 1),
        indexing="ij",
    )
    targets = np.stack([ii, jj, kk], axis=-1).reshape(-1, 3)
    centers = origin + (targets + 0.5) * spacing
    sources = com + (centers - com) / linear_factor
    src_idx = _nearest_indices(sources, origin, spacing)
    valid = np.all((src_idx >= 0) & (src_idx < np.array(m.dims)), axis=1)
    occ_hit = np.zeros(len(targets), dtype=bool)
    sv = src_idx[valid]
    occ_hit[valid] = m.occupancy[sv[:, 0], sv[:, 1], sv[:, 2]]
    tv = targets[occ_hit]
    new_occ[tv[:, 0], tv[:, 1], tv[:, 2]] = True
    return new_occ


def scale_mask(m: Mask, volume_factor: float) -> Mask:
    """Rescale a mask about its COM by volume_factor (linear factor = cube root)."""
    lo, hi = VOLUME_SCALE_BOUNDS
    if not (lo <= volume_factor <= hi):
        raise InvalidScale(f"volume factor {volume_factor} outside [{lo}, {hi}]")
    _require_non_empty(m)
    if volume_factor == 1.0:
        return m
    return m.with_occupancy(_rescale_occupancy(m, volume_factor ** (1.0 / 3.0)))


def overlap_count(a: Mask, b: Mask) -> int:
    """|a intersect b| in voxels."""
    _require_same_geometry(a, b)
    return int(np.count_nonzero(a.occupancy & b.occupancy))


def outside_count(oar: Mask, body: Mask) -> int:
    """|oar \\ body| in voxels."""
    _require_same_geometry(oar, body)
    return int(np.count_nonzero(oar.occupancy & ~body.occupancy))


def resect(ct: VoxelGrid, oar: Mask, fill_hu: int = DEFAULT_FILL_HU) -> VoxelGrid:
    """Replace the HU values under `oar` with `fill_hu`; all other voxels unchanged."""
    _require_same_geometry(ct, oar)
    values = ct.values.copy()
    values[oar.occupancy] = fill_hu
    return ct.with_values(values)


@dataclass(frozen=True)
class TransplantResult:
    grid: VoxelGrid
    mask: Mask
    clipped_voxels: int


def transplant(
    ct: VoxelGrid, donor_ct: VoxelGrid, donor_mask: Mask, target_com: Point3
) -> TransplantResult:
    """Insert the donor organ into the receiver at the requested COM.

    Donor voxels are mapped by physical position (pure translation, nearest
    neighbor in each grid), so receiver and donor geometries may differ. HU
    values under the translated mask are copied from the donor scan.
    """
    _require_non_empty(donor_mask, "donor mask")
    com_d = center_of_mass(donor_mask).as_array()
    t = target_com.as_array() - com_d

    r_origin = np.asarray(ct.origin)
    r_spacing = np.asarray(ct.spacing)
    r_dims = np.array(ct.dims)

    # Forward check: how many donor voxels land inside the receiver grid.
    d_idx = _occupied_indices(donor_mask)
    d_centers = voxel_centers_mm(donor_mask, d_idx)
    fwd = _nearest_indices(d_centers + t, r_origin, r_spacing)
    inside = np.all((fwd >= 0) & (fwd < r_dims), axis=1)
    clipped = int(np.count_nonzero(~inside))
    if clipped == d_idx.shape[0]:
        raise TransplantClipped("no donor voxel lands inside the receiver grid")

    # Inverse fill over the target bounding box (avoids holes when resampling).
    lo = np.maximum(fwd[inside].min(axis=0) - 1, 0)
    hi = np.minimum(fwd[inside].max(axis=0) + 1, r_dims - 1)
    ii, jj, kk = np.meshgrid(
        np.arange(lo[0], hi[0] + 1),
        np.arange(lo[1], hi[1] + 1),
        np.arange(lo[2], hi[2] + 1),
        indexing="ij",
    )
    targets = np.stack([ii, jj, kk], axis=-1).reshape(-1, 3)
    centers = r_origin + (targets + 0.5) * r_spacing
    src_idx = _nearest_indices(
        centers - t, np.asarray(donor_ct.origin), np.asarray(donor_ct.spacing)
    )
    d_dims = np.array(donor_ct.dims)
    valid = np.all((src_idx >= 0) & (src_idx < d_dims), axis=1)
    hit = np.zeros(len(targets), dtype=bool)
    sv = src_idx[valid]
    hit[valid] = donor_mask.occupancy[sv[:, 0], sv[:, 1], sv[:, 2]]
    if not hit.any():
        raise TransplantClipped("transplanted mask resampled to zero voxels")

    new_occ = np.zeros(ct.dims, dtype=bool)
    tv = targets[hit]
    new_occ[tv[:, 0], tv[:, 1], tv[:, 2]] = True
    values = ct.values.copy()
    sh = src_idx[hit]
    values[tv[:, 0], tv[:, 1], tv[:, 2]] = donor_ct.values[sh[:, 0], sh[:, 1], sh[:, 2]]
    return TransplantResult(
        grid=ct.with_values(values),
        mask=mask_like(ct, new_occ),
        clipped_voxels=clipped,
    )
