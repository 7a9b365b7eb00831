"""Patient feature schema, z-scoring, and construction of the nine learning datasets.

Nine tasks: one body retrieval task, and per organ (liver, spleen) three
position tasks (LR/AP/IS offset from the L2 landmark, mm) plus one retrieval
task (pairwise surface Dice, %).
"""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from . import vph1
from .errors import ConstantFeature, SchemaError, ShapeError
from .voxelgeom import Mask, Point3, VoxelGrid, center_of_mass, sdsc

FEATURE_NAMES = (
    "AGE",
    "ADAP",
    "ADLR",
    "ICSC",
    "GEND",
    "HESZ",
    "HEIG",
    "LDLR",
    "RDLR",
    "RDIS",
    "SPIS",
    "WEIG",
)

ORGANS = ("liver", "spleen")
AXES = ("lr", "ap", "is")
DEFAULT_TAU_MM = 5.0


class TaskId(str, Enum):
    """The nine prediction tasks, in reporting order."""

    BODY_S = "BodyS"
    LIVER_LR = "LiverLR"
    LIVER_AP = "LiverAP"
    LIVER_IS = "LiverIS"
    LIVER_S = "LiverS"
    SPLEEN_LR = "SpleenLR"
    SPLEEN_AP = "SpleenAP"
    SPLEEN_IS = "SpleenIS"
    SPLEEN_S = "SpleenS"


TASK_ORDER = tuple(TaskId)

POSITION_TASKS = {
    ("liver", "lr"): TaskId.LIVER_LR,
    ("liver", "ap"): TaskId.LIVER_AP,
    ("liver", "is"): TaskId.LIVER_IS,
    ("spleen", "lr"): TaskId.SPLEEN_LR,
    ("spleen", "ap"): TaskId.SPLEEN_AP,
    ("spleen", "is"): TaskId.SPLEEN_IS,
}

RETRIEVAL_TASKS = {
    "body": TaskId.BODY_S,
    "liver": TaskId.LIVER_S,
    "spleen": TaskId.SPLEEN_S,
}


@dataclass(frozen=True)
class PatientFeatures:
    """One row of the cohort table; gend is 0 for female, 1 for male."""

    age: float
    adap: float
    adlr: float
    icsc: float
    gend: int
    hesz: float
    heig: float
    ldlr: float
    rdlr: float
    rdis: float
    spis: float
    weig: float

    def __post_init__(self):
        vec = self.as_vector()
        if not np.all(np.isfinite(vec)):
            raise ValueError(f"non-finite feature value in {vec}")
        if self.gend not in (0, 1):
            raise ValueError(f"gend must be 0 or 1, got {self.gend}")

    def as_vector(self) -> np.ndarray:
        return np.array(
            [
                self.age,
                self.adap,
                self.adlr,
                self.icsc,
                self.gend,
                self.hesz,
                self.heig,
                self.ldlr,
                self.rdlr,
                self.rdis,
                self.spis,
                self.weig,
            ],
            dtype=float,
        )

    @staticmethod
    def from_vector(vec) -> "PatientFeatures":
        vec = list(vec)
        return PatientFeatures(
            age=float(vec[0]),
            adap=float(vec[1]),
            adlr=float(vec[2]),
            icsc=float(vec[3]),
            gend=int(round(vec[4])),
            hesz=float(vec[5]),
            heig=float(vec[6]),
            ldlr=float(vec[7]),
            rdlr=float(vec[8]),
            rdis=float(vec[9]),
            spis=float(vec[10]),
            weig=float(vec[11]),
        )


@dataclass(frozen=True)
class PatientRecord:
    id: str
    features: PatientFeatures
    ct: VoxelGrid
    body: Mask
    liver: Mask
    spleen: Mask
    cord: Mask
    l2_center: Point3
    extended_body: Mask | None = None

    def __post_init__(self):
        for name in ("body", "liver", "spleen", "cord"):
            mask = getattr(self, name)
            if not mask.same_geometry(self.ct):
                raise ValueError(f"{name} mask geometry differs from CT for {self.id}")
        if self.liver.is_empty() or self.spleen.is_empty():
            raise ValueError(f"liver/spleen must be non-empty for {self.id}")
        lo = np.asarray(self.ct.origin)
        hi = lo + np.array(self.ct.dims) * np.asarray(self.ct.spacing)
        p = self.l2_center.as_array()
        if np.any(p < lo) or np.any(p > hi):
            raise ValueError(f"l2_center {p} outside CT bounds for {self.id}")

    def organ_mask(self, organ: str) -> Mask:
        return {"body": self.body, "liver": self.liver, "spleen": self.spleen, "cord": self.cord}[organ]


def zscore_fit(values) -> tuple:
    """Sample mean and (n-1)-denominator standard deviation of a column."""
    values = np.asarray(values, dtype=float)
    if values.size < 2:
        raise ShapeError("z-scoring needs at least 2 values")
    mean = float(values.mean())
    sd = float(values.std(ddof=1))
    if sd == 0.0:
        raise ConstantFeature("column is constant; cannot z-score")
    return mean, sd


@dataclass(frozen=True)
class ZScoreParams:
    """Normalization fitted on training rows; constant columns are dropped."""

    feature_names: tuple
    kept: tuple  # indices into the raw 12-feature vector
    mean: np.ndarray
    sd: np.ndarray
    target_mean: float
    target_sd: float

    @staticmethod
    def fit(raw_features: np.ndarray, raw_targets: np.ndarray, feature_names=FEATURE_NAMES) -> "ZScoreParams":
        kept, means, sds = [], [], []
        for j, name in enumerate(feature_names):
            try:
                mean, sd = zscore_fit(raw_features[:, j])
            except ConstantFeature:
                warnings.warn(f"dropping constant feature column {name}", stacklevel=2)
                continue
            kept.append(j)
            means.append(mean)
            sds.append(sd)
        if not kept:
            raise ConstantFeature("all feature columns constant")
        try:
            t_mean, t_sd = zscore_fit(raw_targets)
        except ConstantFeature:
            # Degenerate task: identical targets. Pass through unscaled so the
            # regressors' constant-target path can still predict the value.
            warnings.warn("constant target column; passing through unscaled", stacklevel=2)
            t_mean, t_sd = float(np.asarray(raw_targets, dtype=float)[0]), 1.0
        return ZScoreParams(
            feature_names=tuple(feature_names[j] for j in kept),
            kept=tuple(kept),
            mean=np.array(means),
            sd=np.array(sds),
            target_mean=t_mean,
            target_sd=t_sd,
        )

    def apply_features(self, raw: np.ndarray) -> np.ndarray:
        raw = np.atleast_2d(np.asarray(raw, dtype=float))
        return (raw[:, list(self.kept)] - self.mean) / self.sd

    def apply_target(self, raw) -> np.ndarray:
        return (np.asarray(raw, dtype=float) - self.target_mean) / self.target_sd

    def invert_target(self, normalized) -> np.ndarray:
        return np.asarray(normalized, dtype=float) * self.target_sd + self.target_mean

    def to_json(self) -> dict:
        return {
            "feature_names": list(self.feature_names),
            "kept": list(self.kept),
            "mean": self.mean.tolist(),
            "sd": self.sd.tolist(),
            "target_mean": self.target_mean,
            "target_sd": self.target_sd,
        }

    @staticmethod
    def from_json(d: dict) -> "ZScoreParams":
        return ZScoreParams(
            feature_names=tuple(d["feature_names"]),
            kept=tuple(d["kept"]),
            mean=np.array(d["mean"], dtype=float),
            sd=np.array(d["sd"], dtype=float),
            target_mean=float(d["target_mean"]),
            target_sd=float(d["target_sd"]),
        )


@dataclass(frozen=True)
class Dataset:
    """Normalized design matrix + targets for one task."""

    task: TaskId
    X: np.ndarray  # (n, k) z-scored features
    y: np.ndarray  # (n,) z-scored target
    provenance: tuple  # per row: patient id, or ordered (p, q) pair
    zscore: ZScoreParams

    def __post_init__(self):
        if self.X.shape[0] != self.y.shape[0] or len(self.provenance) != self.y.shape[0]:
            raise ShapeError("rows, targets and provenance must have equal length")
        for prov in self.provenance:
            if isinstance(prov, tuple) and prov[0] == prov[1]:
                raise ValueError(f"self-pair row {prov}")

    @property
    def n_rows(self) -> int:
        return self.X.shape[0]

    @property
    def n_features(self) -> int:
        return self.X.shape[1]


def pairwise_features(p: PatientFeatures, q: PatientFeatures, params: ZScoreParams | None = None) -> np.ndarray:
    """Per-feature absolute differences |x_p - x_q| on raw features.

    With `params`, the raw differences are normalized with the pair-dataset
    z-score parameters (and constant columns dropped).
    """
    raw = np.abs(p.as_vector() - q.as_vector())
    if params is None:
        return raw
    return params.apply_features(raw)[0]


def position_target_mm(record: PatientRecord, organ: str, axis: str) -> float:
    """Signed offset of the organ COM from the L2 landmark along one axis, mm."""
    com = center_of_mass(record.organ_mask(organ))
    offset = com - record.l2_center
    return {"lr": offset.lr, "ap": offset.ap, "is": offset.is_}[axis]


def build_position_dataset(cohort, organ: str, axis: str) -> Dataset:
    """One row per patient; target = L2-relative COM offset, z-scored."""
    if len(cohort) < 2:
        raise ShapeError("position dataset needs at least 2 patients")
    task = POSITION_TASKS[(organ, axis)]
    raw_X = np.stack([r.features.as_vector() for r in cohort])
    raw_y = np.array([position_target_mm(r, organ, axis) for r in cohort])
    params = ZScoreParams.fit(raw_X, raw_y)
    return Dataset(
        task=task,
        X=params.apply_features(raw_X),
        y=params.apply_target(raw_y),
        provenance=tuple(r.id for r in cohort),
        zscore=params,
    )


def retrieval_target_pct(p: PatientRecord, q: PatientRecord, organ: str, tau_mm: float = DEFAULT_TAU_MM) -> float:
    """Pairwise surface Dice (%) between two patients' segmentations, COM aligned."""
    return sdsc(p.organ_mask(organ), q.organ_mask(organ), tau_mm, align=True)


def build_retrieval_dataset(cohort, organ: str, tau_mm: float = DEFAULT_TAU_MM, target_cache=None) -> Dataset:
    """One row per unordered patient pair; target = sDSC(p, q) in %, z-scored.

    `target_cache` maps (organ, id_p, id_q) with id_p < id_q to a precomputed
    sDSC value; missing entries are computed and added.
    """
    if len(cohort) < 3:
        raise ShapeError("retrieval dataset needs at least 3 patients")
    task = RETRIEVAL_TASKS[organ]
    by_id = sorted(cohort, key=lambda r: r.id)
    rows, targets, prov = [], [], []
    for i, p in enumerate(by_id):
        for q in by_id[i + 1 :]:
            key = (organ, p.id, q.id)
            if target_cache is not None and key in target_cache:
                value = target_cache[key]
            else:
                value = retrieval_target_pct(p, q, organ, tau_mm)
                if target_cache is not None:
                    target_cache[key] = value
            rows.append(pairwise_features(p.features, q.features))
            targets.append(value)
            prov.append((p.id, q.id))
    raw_X = np.stack(rows)
    raw_y = np.array(targets)
    params = ZScoreParams.fit(raw_X, raw_y)
    return Dataset(
        task=task,
        X=params.apply_features(raw_X),
        y=params.apply_target(raw_y),
        provenance=tuple(prov),
        zscore=params,
    )


# ---------------------------------------------------------------------------
# On-disk cohort layout: cohort.csv + per-patient manifest JSON + VPH1 files.

CSV_HEADER = ["id"] + list(FEATURE_NAMES)
MANIFEST_MASKS = ("body", "liver", "spleen", "cord")


def save_cohort(directory, cohort, ground_truth: dict | None = None) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    with open(directory / "cohort.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER)
        for rec in cohort:
            vec = rec.features.as_vector()
            writer.writerow([rec.id] + [repr(float(v)) for v in vec])
    for rec in cohort:
        pdir = directory / "patients" / rec.id
        pdir.mkdir(parents=True, exist_ok=True)
        vph1.write_grid(pdir / "ct.json", rec.ct)
        manifest = {
            "id": rec.id,
            "l2_center_mm": [rec.l2_center.lr, rec.l2_center.ap, rec.l2_center.is_],
            "ct": "ct.json",
        }
        for name in MANIFEST_MASKS:
            vph1.write_mask(pdir / f"{name}.json", getattr(rec, name))
            manifest[name] = f"{name}.json"
        if rec.extended_body is not None:
            vph1.write_mask(pdir / "extended_body.json", rec.extended_body)
            manifest["extended_body"] = "extended_body.json"
        (pdir / "manifest.json").write_text(json.dumps(manifest, indent=1) + "\n")
    if ground_truth is not None:
        (directory / "ground_truth.json").write_text(json.dumps(ground_truth, indent=1) + "\n")


def load_cohort(directory) -> list:
    directory = Path(directory)
    csv_path = directory / "cohort.csv"
    if not csv_path.exists():
        raise SchemaError(f"{csv_path}: cohort table not found")
    with open(csv_path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != CSV_HEADER:
            raise SchemaError(f"{csv_path}: header {header} != {CSV_HEADER}")
        feature_rows = {}
        for row in reader:
            if len(row) != len(CSV_HEADER):
                raise SchemaError(f"{csv_path}: row length {len(row)} != {len(CSV_HEADER)}")
            feature_rows[row[0]] = PatientFeatures.from_vector([float(v) for v in row[1:]])
    cohort = []
    for pid in sorted(feature_rows):
        pdir = directory / "patients" / pid
        manifest_path = pdir / "manifest.json"
        try:
            manifest = json.loads(manifest_path.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise SchemaError(f"{manifest_path}: unreadable manifest ({exc})") from exc
        for key in ("id", "l2_center_mm", "ct", *MANIFEST_MASKS):
            if key not in manifest:
                raise SchemaError(f"{manifest_path}: missing field {key!r}")
        if manifest["id"] != pid:
            raise SchemaError(f"{manifest_path}: id {manifest['id']!r} != directory {pid!r}")
        masks = {name: vph1.read_mask(pdir / manifest[name]) for name in MANIFEST_MASKS}
        extended = None
        if manifest.get("extended_body"):
            extended = vph1.read_mask(pdir / manifest["extended_body"])
        cohort.append(
            PatientRecord(
                id=pid,
                features=feature_rows[pid],
                ct=vph1.read_grid(pdir / manifest["ct"]),
                l2_center=Point3(*[float(v) for v in manifest["l2_center_mm"]]),
                extended_body=extended,
                **masks,
            )
        )
    return cohort
