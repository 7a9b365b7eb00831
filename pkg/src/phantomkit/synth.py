"""Synthetic cohort generator with planted, recoverable ground truth.

Anatomies are ellipsoid-composed (body, liver, spleen, plus a cylindrical
cord). Organ centers follow a latent linear coefficient table over the
patient features, spleen size follows an exponential age law, and every organ
center is snapped to a voxel center so that the voxelized center of mass
reproduces the planted value exactly (the inclusion test is evaluated on
integer index offsets, which makes the voxelization symmetric bit-for-bit).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .cohort import PatientFeatures, PatientRecord
from .errors import GenerationFailure, InvalidConfig
from .voxelgeom import Mask, Point3, VoxelGrid, outside_count

E = 2.718281828459045

# Table-style feature statistics: (mean, sd, lo, hi).
FEATURE_STATS = {
    "AGE": (3.8, 1.2, 2.0, 6.0),
    "ADAP": (13.3, 1.2, 11.1, 16.0),
    "ADLR": (19.4, 1.4, 16.3, 23.5),
    "ICSC": (5.5, 0.6, 4.3, 6.8),
    "HESZ": (8.5, 0.7, 6.8, 9.9),
    "HEIG": (103.0, 10.7, 86.0, 123.0),
    "LDLR": (8.4, 0.9, 6.5, 10.7),
    "RDLR": (8.3, 0.8, 6.2, 10.5),
    "RDIS": (5.9, 1.0, 4.0, 7.8),
    "SPIS": (9.3, 0.8, 7.0, 10.9),
    "WEIG": (16.4, 3.7, 10.0, 28.0),
}

# Loading of each feature on the shared "size" latent; the remainder is
# independent noise. RDIS is fully independent (breathing-state proxy).
SIZE_LOADING = {
    "AGE": 0.90,
    "ADAP": 0.65,
    "ADLR": 0.70,
    "ICSC": 0.50,
    "HESZ": 0.55,
    "HEIG": 0.90,
    "LDLR": 0.60,
    "RDLR": 0.60,
    "RDIS": 0.00,
    "SPIS": 0.75,
    "WEIG": 0.85,
}


@dataclass(frozen=True)
class LatentTable:
    """Planted anatomy laws: organ center offsets from L2 (mm) and size scales.

    Offsets are linear in raw features; the spleen size driver carries the
    exponential age term e^(AGE/2.5) * 0.057 * SPIS.
    """

    body_ax_lr: float = 2.00  # * ADLR
    body_ax_ap: float = 2.30  # * ADAP
    body_ax_is: float = 4.40  # * SPIS
    liver_lr: tuple = (-4.0, -0.55)  # intercept, * ADLR
    liver_ap: tuple = (-2.0, -0.45)  # intercept, * ADAP
    liver_is: tuple = (4.0, 0.90)  # intercept, * RDIS
    spleen_lr: tuple = (3.0, 0.50)  # intercept, * ADLR
    spleen_ap: tuple = (-1.0, -0.30)  # intercept, * ADAP
    spleen_is: tuple = (-1.0, 0.60)  # intercept, * SPIS
    liver_axes: tuple = (14.0, 12.5, 11.0)
    spleen_axes: tuple = (12.0, 10.5, 9.5)
    liver_scale_span: tuple = (0.60, 0.80)  # base + span * unit(driver)
    spleen_scale_span: tuple = (0.58, 0.80)
    aspect_span: float = 0.24  # per-axis spread of the volume-preserving shape factors
    cord_radius_mm: float = 4.0
    cord_ap_offset_mm: float = 6.0  # posterior of L2
    l2_is_fraction: float = 0.46  # of body IS extent, from the inferior end

    def liver_offsets_mm(self, f: PatientFeatures) -> np.ndarray:
        return np.array(
            [
                self.liver_lr[0] + self.liver_lr[1] * f.adlr,
                self.liver_ap[0] + self.liver_ap[1] * f.adap,
                self.liver_is[0] + self.liver_is[1] * f.rdis,
            ]
        )

    def spleen_offsets_mm(self, f: PatientFeatures) -> np.ndarray:
        return np.array(
            [
                self.spleen_lr[0] + self.spleen_lr[1] * f.adlr,
                self.spleen_ap[0] + self.spleen_ap[1] * f.adap,
                self.spleen_is[0] + self.spleen_is[1] * f.spis,
            ]
        )

    def liver_scale(self, f: PatientFeatures) -> float:
        raw = 0.018 * f.heig + 0.020 * f.weig  # in [1.75, 2.77] over the feature box
        unit = (raw - 1.75) / (2.77 - 1.75)
        return self.liver_scale_span[0] + self.liver_scale_span[1] * unit

    def spleen_scale(self, f: PatientFeatures) -> float:
        raw = E ** (f.age / 2.5) * 0.057 * f.spis  # in [0.89, 6.85]
        unit = (raw - 0.89) / (6.85 - 0.89)
        return self.spleen_scale_span[0] + self.spleen_scale_span[1] * unit

    def _aspect(self, units) -> np.ndarray:
        # volume-preserving shape factors: each in 1 +- aspect_span/2, product ~ 1
        m = 1.0 + self.aspect_span * (np.asarray(units) - 0.5)
        return m / np.cbrt(m.prod())

    def liver_aspect(self, f: PatientFeatures) -> np.ndarray:
        units = [
            (f.ldlr - 6.5) / (10.7 - 6.5),
            (f.icsc - 4.3) / (6.8 - 4.3),
            (f.rdis - 4.0) / (7.8 - 4.0),
        ]
        return self._aspect(units)

    def spleen_aspect(self, f: PatientFeatures) -> np.ndarray:
        units = [
            (f.rdlr - 6.2) / (10.5 - 6.2),
            (f.hesz - 6.8) / (9.9 - 6.8),
            (f.icsc - 4.3) / (6.8 - 4.3),
        ]
        return self._aspect(units)


@dataclass(frozen=True)
class SynthConfig:
    n_patients: int = 12
    seed: int = 0
    grid_dims: tuple = (52, 52, 48)
    spacing_mm: tuple = (2.0, 2.0, 2.5)
    feature_noise: float = 1.0
    anatomy_noise_mm: float = 1.0
    latent: LatentTable = field(default_factory=LatentTable)

    def __post_init__(self):
        if self.n_patients < 4:
            raise InvalidConfig(f"n_patients must be >= 4, got {self.n_patients}")
        if self.feature_noise < 0 or self.anatomy_noise_mm < 0:
            raise InvalidConfig("noise scales must be >= 0")


def _sample_features(rng, noise_scale) -> PatientFeatures:
    size = rng.normal()
    values = {}
    for name, (mean, sd, lo, hi) in FEATURE_STATS.items():
        load = SIZE_LOADING[name]
        resid = np.sqrt(max(1.0 - load * load, 0.0))
        z = load * size + resid * noise_scale * rng.normal()
        values[name] = float(np.clip(mean + sd * z, lo, hi))
    gend = int(rng.integers(0, 2))
    return PatientFeatures(
        age=values["AGE"],
        adap=values["ADAP"],
        adlr=values["ADLR"],
        icsc=values["ICSC"],
        gend=gend,
        hesz=values["HESZ"],
        heig=values["HEIG"],
        ldlr=values["LDLR"],
        rdlr=values["RDLR"],
        rdis=values["RDIS"],
        spis=values["SPIS"],
        weig=values["WEIG"],
    )


def _snap_to_center_index(pos_mm, origin, spacing, dims):
    idx = np.rint((np.asarray(pos_mm) - np.asarray(origin)) / np.asarray(spacing) - 0.5)
    return np.clip(idx, 0, np.array(dims) - 1).astype(np.int64)


def _center_mm(idx, origin, spacing):
    return np.asarray(origin) + (np.asarray(idx) + 0.5) * np.asarray(spacing)


def _ellipsoid_occupancy(dims, spacing, center_idx, semi_axes_mm) -> np.ndarray:
    """Voxelized ellipsoid about a voxel center, symmetric in index space."""
    ratios = [spacing[a] / semi_axes_mm[a] for a in range(3)]
    axes = [
        ((np.arange(dims[a], dtype=np.int64) - center_idx[a]) * ratios[a]) ** 2
        for a in range(3)
    ]
    lhs = (
        axes[0][:, None, None] + axes[1][None, :, None] + axes[2][None, None, :]
    )
    return lhs <= 1.0


def _cylinder_occupancy(dims, spacing, center_idx, radius_mm, is_lo_idx, is_hi_idx) -> np.ndarray:
    r2 = radius_mm * radius_mm
    di = ((np.arange(dims[0], dtype=np.int64) - center_idx[0]) * spacing[0]) ** 2
    dj = ((np.arange(dims[1], dtype=np.int64) - center_idx[1]) * spacing[1]) ** 2
    disc = di[:, None] + dj[None, :] <= r2
    occ = np.zeros(dims, dtype=bool)
    occ[:, :, is_lo_idx : is_hi_idx + 1] = disc[:, :, None]
    return occ


@dataclass(frozen=True)
class PlantedTruth:
    """Per-patient generator ground truth (offsets snapped to the voxel grid)."""

    offsets_mm: dict  # organ -> np.ndarray (lr, ap, is), exactly the target values
    raw_offsets_mm: dict  # pre-snap formula values
    scales: dict  # organ -> uniform size scale actually applied

    def to_json(self) -> dict:
        return {
            "offsets_mm": {k: list(map(float, v)) for k, v in self.offsets_mm.items()},
            "raw_offsets_mm": {k: list(map(float, v)) for k, v in self.raw_offsets_mm.items()},
            "scales": {k: float(v) for k, v in self.scales.items()},
        }


def gen_synthetic_cohort(cfg: SynthConfig) -> tuple:
    """Deterministic cohort for a seed; returns (records, {patient_id: PlantedTruth})."""
    rng = np.random.default_rng(cfg.seed)
    lat = cfg.latent
    dims, spacing = tuple(cfg.grid_dims), tuple(cfg.spacing_mm)
    origin = (0.0, 0.0, 0.0)
    records, truths = [], {}
    for n in range(cfg.n_patients):
        pid = f"p{n:03d}"
        f = _sample_features(rng, cfg.feature_noise)
        rec, truth = _build_anatomy(pid, f, cfg, rng, dims, spacing, origin, lat)
        records.append(rec)
        truths[pid] = truth
    return records, truths


def _build_anatomy(pid, f, cfg, rng, dims, spacing, origin, lat):
    grid_extent = np.array(dims) * np.asarray(spacing)
    body_center = np.asarray(origin) + grid_extent / 2.0
    body_axes = np.array(
        [lat.body_ax_lr * f.adlr, lat.body_ax_ap * f.adap, lat.body_ax_is * f.spis]
    )
    body_axes = body_axes + cfg.anatomy_noise_mm * 0.5 * rng.normal(size=3)
    body_axes = np.minimum(body_axes, grid_extent / 2.0 - 2.0 * np.asarray(spacing))
    body_idx = _snap_to_center_index(body_center, origin, spacing, dims)
    body_occ = _ellipsoid_occupancy(dims, spacing, body_idx, body_axes)
    body_c_mm = _center_mm(body_idx, origin, spacing)

    # L2 landmark: fixed fraction of the body IS extent, posterior of center.
    l2_mm = np.array(
        [
            body_c_mm[0],
            body_c_mm[1] + 0.22 * body_axes[1],
            body_c_mm[2] - body_axes[2] + lat.l2_is_fraction * 2.0 * body_axes[2],
        ]
    )
    l2_idx = _snap_to_center_index(l2_mm, origin, spacing, dims)
    l2_mm = _center_mm(l2_idx, origin, spacing)

    cord_c = np.array([l2_mm[0], l2_mm[1] + lat.cord_ap_offset_mm, body_c_mm[2]])
    cord_idx = _snap_to_center_index(cord_c, origin, spacing, dims)
    is_half = 0.80 * body_axes[2]
    is_lo = int(_snap_to_center_index(body_c_mm - [0, 0, is_half], origin, spacing, dims)[2])
    is_hi = int(_snap_to_center_index(body_c_mm + [0, 0, is_half], origin, spacing, dims)[2])
    cord_occ = _cylinder_occupancy(dims, spacing, cord_idx, lat.cord_radius_mm, is_lo, is_hi)
    cord_occ &= body_occ

    organs = {}
    offsets, raw_offsets, scales = {}, {}, {}
    for organ in ("liver", "spleen"):
        if organ == "liver":
            raw = lat.liver_offsets_mm(f)
            scale = lat.liver_scale(f)
            base_axes = np.array(lat.liver_axes) * lat.liver_aspect(f)
        else:
            raw = lat.spleen_offsets_mm(f)
            scale = lat.spleen_scale(f)
            base_axes = np.array(lat.spleen_axes) * lat.spleen_aspect(f)
        noisy = raw + cfg.anatomy_noise_mm * rng.normal(size=3)
        center_idx = _snap_to_center_index(l2_mm + noisy, origin, spacing, dims)
        center_mm = _center_mm(center_idx, origin, spacing)
        axes = base_axes * scale + cfg.anatomy_noise_mm * 0.25 * rng.normal(size=3)
        axes = np.maximum(axes, 2.0 * np.asarray(spacing))
        keep_clear = cord_occ if "liver" not in organs else (cord_occ | organs["liver"])
        occ, applied = _fit_organ(
            pid, organ, dims, spacing, center_idx, axes, body_occ, keep_clear
        )
        organs[organ] = occ
        offsets[organ] = center_mm - l2_mm
        raw_offsets[organ] = raw
        scales[organ] = scale * applied

    ct_values = _render_ct(rng, dims, body_occ, organs["liver"], organs["spleen"], cord_occ)

    make_mask = lambda occ: Mask(dims, spacing, origin, occ)
    record = PatientRecord(
        id=pid,
        features=f,
        ct=VoxelGrid(dims, spacing, origin, ct_values),
        body=make_mask(body_occ),
        liver=make_mask(organs["liver"]),
        spleen=make_mask(organs["spleen"]),
        cord=make_mask(cord_occ),
        l2_center=Point3.from_array(l2_mm),
    )
    for organ in ("liver", "spleen"):
        n_out = outside_count(record.organ_mask(organ), record.body)
        if n_out:
            raise GenerationFailure(
                f"{pid}: {organ} extends {n_out} voxels outside the body"
            )
    truth = PlantedTruth(offsets_mm=offsets, raw_offsets_mm=raw_offsets, scales=scales)
    return record, truth


def _fit_organ(pid, organ, dims, spacing, center_idx, axes, body_occ, keep_clear):
    """Voxelize an organ ellipsoid, shrinking it until it fits the anatomy.

    Fit means: fully inside the body, fully on the grid (so the symmetric
    voxelization keeps the planted COM exact) and clear of the cord and of
    previously placed organs. Returns (occupancy, applied_shrink_factor).
    """
    factor = 1.0
    for _ in range(14):
        eff = axes * factor
        half = np.ceil(eff / np.asarray(spacing)).astype(int)
        on_grid = np.all(center_idx - half >= 0) and np.all(
            center_idx + half < np.array(dims)
        )
        if on_grid:
            occ = _ellipsoid_occupancy(dims, spacing, center_idx, eff)
            if not (occ & ~body_occ).any() and not (occ & keep_clear).any():
                return occ, factor
        factor *= 0.93
        if factor < 0.45:
            break
    raise GenerationFailure(f"{pid}: cannot fit {organ} inside the body")


def _render_ct(rng, dims, body, liver, spleen, cord) -> np.ndarray:
    values = np.full(dims, -1000, dtype=np.int16)
    texture = rng.integers(-5, 6, size=dims, dtype=np.int16)
    values[body] = 40
    values[liver] = 60
    values[spleen] = 54
    values[cord] = 250
    return np.where(body, values + texture, values).astype(np.int16)


def clone_record(rec: PatientRecord, new_id: str, rng=None, feature_jitter: float = 0.0) -> PatientRecord:
    """Near-duplicate of a record under a new id (anatomy copied verbatim)."""
    features = rec.features
    if rng is not None and feature_jitter > 0:
        vec = features.as_vector()
        jitter = rng.normal(scale=feature_jitter, size=vec.shape)
        jitter[4] = 0.0  # keep gender binary
        features = PatientFeatures.from_vector(vec + jitter)
    return replace(rec, id=new_id, features=features)
