"""Independent brute-force reference computations used by the test suite.

These deliberately avoid the production code paths: explicit index loops and
all-pairs distance scans, kept simple enough to be obviously correct.
"""

import numpy as np

from phantomkit.voxelgeom import Mask, _surface_points_for_sdsc


def com_by_index_loop(mask: Mask):
    """Mean occupied-voxel center via a plain triple loop."""
    total = np.zeros(3)
    count = 0
    nx, ny, nz = mask.dims
    for i in range(nx):
        for j in range(ny):
            for k in range(nz):
                if mask.occupancy[i, j, k]:
                    total += np.asarray(mask.origin) + (np.array([i, j, k]) + 0.5) * np.asarray(mask.spacing)
                    count += 1
    return total / count


def surface_indices_by_loop(mask: Mask):
    """Boundary voxels via explicit 6-neighborhood checks."""
    occ = mask.occupancy
    nx, ny, nz = mask.dims
    out = []
    for i in range(nx):
        for j in range(ny):
            for k in range(nz):
                if not occ[i, j, k]:
                    continue
                boundary = False
                for di, dj, dk in ((1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1)):
                    a, b, c = i + di, j + dj, k + dk
                    if not (0 <= a < nx and 0 <= b < ny and 0 <= c < nz) or not occ[a, b, c]:
                        boundary = True
                        break
                if boundary:
                    out.append((i, j, k))
    return out


def sdsc_all_pairs(a: Mask, b: Mask, tau_mm: float, align: bool):
    """All-pairs O(|Sa|*|Sb|) surface Dice; per-pair arithmetic mirrors production.

    Shares the surface point-set construction with production (by design: both
    evaluate the same point sets) but replaces the chunked nearest-distance
    search with an explicit per-point scan over the full distance matrix.
    """
    sa = _surface_points_for_sdsc(a, centered=align)
    sb = _surface_points_for_sdsc(b, centered=align)
    tau2 = tau_mm * tau_mm

    def hits(points, others):
        count = 0
        for p in points:
            dx = others[:, 0] - p[0]
            dy = others[:, 1] - p[1]
            dz = others[:, 2] - p[2]
            d2 = dx * dx + dy * dy + dz * dz
            best = d2[0]
            for v in d2[1:]:
                if v < best:
                    best = v
            if best <= tau2:
                count += 1
        return count

    return 100.0 * (hits(sa, sb) + hits(sb, sa)) / (len(sa) + len(sb))


def wilcoxon_by_enumeration(a, b):
    """Exact two-sided signed-rank p-value by enumerating all 2^n sign vectors."""
    d = np.asarray(a, dtype=float) - np.asarray(b, dtype=float)
    d = d[d != 0]
    n = len(d)
    if n == 0:
        return 1.0
    absd = np.abs(d)
    order = np.argsort(absd, kind="stable")
    ranks = np.empty(n)
    sorted_abs = absd[order]
    i = 0
    while i < n:
        j = i
        while j + 1 < n and sorted_abs[j + 1] == sorted_abs[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    w_obs = ranks[d > 0].sum()
    total = 2**n
    le = 0
    ge = 0
    for signs in range(total):
        w = 0.0
        for idx in range(n):
            if signs >> idx & 1:
                w += ranks[idx]
        if w <= w_obs:
            le += 1
        if w >= w_obs:
            ge += 1
    p = 2.0 * min(le / total, ge / total)
    return min(p, 1.0)
