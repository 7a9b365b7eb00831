import numpy as np
import pytest

from phantomkit.voxelgeom import Mask, VoxelGrid


def random_blob_mask(
    rng,
    dims=(12, 12, 12),
    spacing=(1.0, 1.0, 1.0),
    origin=(0.0, 0.0, 0.0),
    margin=2,
    max_radius=None,
):
    """Non-empty random blob: a few overlapping balls on the grid."""
    occ = np.zeros(dims, dtype=bool)
    grid = np.stack(
        np.meshgrid(*[np.arange(d) for d in dims], indexing="ij"), axis=-1
    ).astype(float)
    hi = np.maximum(np.array(dims) - margin, margin + 1e-9)
    r_hi = max(1.6, min(dims) / 3 if max_radius is None else max_radius)
    for _ in range(rng.integers(1, 4)):
        center = rng.uniform(margin, hi)
        radius = rng.uniform(1.5, r_hi)
        occ |= ((grid - center) ** 2).sum(axis=-1) <= radius**2
    if not occ.any():
        occ[tuple(d // 2 for d in dims)] = True
    return Mask(dims, spacing, origin, occ)


def cube_mask(side, dims=None, spacing=(1.0, 1.0, 1.0), origin=(0.0, 0.0, 0.0), corner=None):
    dims = dims or (side + 4, side + 4, side + 4)
    corner = corner or tuple((d - side) // 2 for d in dims)
    occ = np.zeros(dims, dtype=bool)
    occ[
        corner[0] : corner[0] + side,
        corner[1] : corner[1] + side,
        corner[2] : corner[2] + side,
    ] = True
    return Mask(dims, spacing, origin, occ)


def random_grid(rng, dims=(12, 12, 12), spacing=(1.0, 1.0, 1.0), origin=(0.0, 0.0, 0.0)):
    values = rng.integers(-1000, 1500, size=dims, dtype=np.int16)
    return VoxelGrid(dims, spacing, origin, values)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
