"""VPH1 on-disk format: a JSON header plus a raw little-endian binary payload.

Header schema: {"format": "VPH1", "dims": [nx, ny, nz], "spacing_mm": [...],
"origin_mm": [...], "dtype": "i16" | "u8", "data_file": "<relative path>"}.
The payload is x-fastest: flat index = i + nx * (j + ny * k). Masks are u8
with values {0, 1}; volumes are i16.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import SchemaError
from .voxelgeom import Mask, VoxelGrid

_DTYPES = {"i16": np.dtype("<i2"), "u8": np.dtype("u1")}


def _flatten(values: np.ndarray) -> np.ndarray:
    # x-fastest layout == Fortran-order ravel of array[i, j, k]
    return np.asarray(values).ravel(order="F")


def _unflatten(buf: np.ndarray, dims) -> np.ndarray:
    return buf.reshape(dims, order="F")


def _write(header_path: Path, dims, spacing, origin, dtype_tag, values):
    header_path = Path(header_path)
    data_file = header_path.with_suffix(".raw").name
    header = {
        "format": "VPH1",
        "dims": list(dims),
        "spacing_mm": list(spacing),
        "origin_mm": list(origin),
        "dtype": dtype_tag,
        "data_file": data_file,
    }
    payload = _flatten(values).astype(_DTYPES[dtype_tag]).tobytes()
    header_path.parent.mkdir(parents=True, exist_ok=True)
    header_path.write_text(json.dumps(header, indent=1) + "\n")
    (header_path.parent / data_file).write_bytes(payload)


def write_grid(path, grid: VoxelGrid) -> None:
    _write(path, grid.dims, grid.spacing, grid.origin, "i16", grid.values)


def write_mask(path, mask: Mask) -> None:
    _write(path, mask.dims, mask.spacing, mask.origin, "u8", mask.occupancy.astype(np.uint8))


def read_header(path) -> dict:
    path = Path(path)
    try:
        header = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise SchemaError(f"{path}: unreadable VPH1 header ({exc})") from exc
    validate_header(header, path)
    return header


def validate_header(header: dict, path="<header>") -> None:
    if not isinstance(header, dict) or header.get("format") != "VPH1":
        raise SchemaError(f"{path}: not a VPH1 header")
    for key in ("dims", "spacing_mm", "origin_mm", "dtype", "data_file"):
        if key not in header:
            raise SchemaError(f"{path}: missing field {key!r}")
    dims = header["dims"]
    if len(dims) != 3 or any(int(d) <= 0 for d in dims):
        raise SchemaError(f"{path}: bad dims {dims}")
    if len(header["spacing_mm"]) != 3 or any(float(s) <= 0 for s in header["spacing_mm"]):
        raise SchemaError(f"{path}: bad spacing {header['spacing_mm']}")
    if len(header["origin_mm"]) != 3:
        raise SchemaError(f"{path}: bad origin {header['origin_mm']}")
    if header["dtype"] not in _DTYPES:
        raise SchemaError(f"{path}: dtype must be i16 or u8, got {header['dtype']!r}")


def _read_payload(path: Path, header: dict) -> np.ndarray:
    data_path = Path(path).parent / header["data_file"]
    dims = [int(d) for d in header["dims"]]
    dtype = _DTYPES[header["dtype"]]
    expected = dims[0] * dims[1] * dims[2] * dtype.itemsize
    try:
        raw = data_path.read_bytes()
    except OSError as exc:
        raise SchemaError(f"{data_path}: unreadable payload ({exc})") from exc
    if len(raw) != expected:
        raise SchemaError(
            f"{data_path}: payload is {len(raw)} bytes, expected {expected}"
        )
    return _unflatten(np.frombuffer(raw, dtype=dtype), dims)


def read_grid(path) -> VoxelGrid:
    header = read_header(path)
    if header["dtype"] != "i16":
        raise SchemaError(f"{path}: volume files must be i16")
    values = _read_payload(path, header)
    return VoxelGrid(header["dims"], header["spacing_mm"], header["origin_mm"], values)


def read_mask(path) -> Mask:
    header = read_header(path)
    if header["dtype"] != "u8":
        raise SchemaError(f"{path}: mask files must be u8")
    buf = _read_payload(path, header)
    bad = np.setdiff1d(np.unique(buf), [0, 1])
    if bad.size:
        raise SchemaError(f"{path}: mask payload contains values {bad.tolist()}")
    return Mask(header["dims"], header["spacing_mm"], header["origin_mm"], buf.astype(bool))
