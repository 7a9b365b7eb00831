import json

import numpy as np
import pytest

from phantomkit.errors import SchemaError
from phantomkit import vph1

from .conftest import random_blob_mask, random_grid


def test_grid_round_trip(tmp_path, rng):
    g = random_grid(rng, dims=(5, 7, 3), spacing=(1.0, 1.25, 2.5), origin=(-10.0, 4.0, 0.5))
    path = tmp_path / "ct.json"
    vph1.write_grid(path, g)
    back = vph1.read_grid(path)
    assert back.dims == g.dims and back.spacing == g.spacing and back.origin == g.origin
    assert np.array_equal(back.values, g.values)


def test_mask_round_trip(tmp_path, rng):
    m = random_blob_mask(rng, dims=(6, 5, 4))
    path = tmp_path / "liver.json"
    vph1.write_mask(path, m)
    back = vph1.read_mask(path)
    assert np.array_equal(back.occupancy, m.occupancy)


def test_payload_is_x_fastest_little_endian(tmp_path):
    dims = (2, 3, 2)
    values = np.arange(12, dtype=np.int16).reshape(dims)
    g = vph1.VoxelGrid(dims, (1, 1, 1), (0, 0, 0), values)
    vph1.write_grid(tmp_path / "v.json", g)
    raw = np.frombuffer((tmp_path / "v.raw").read_bytes(), dtype="<i2")
    # index = i + nx*(j + ny*k)
    for k in range(2):
        for j in range(3):
            for i in range(2):
                assert raw[i + 2 * (j + 3 * k)] == values[i, j, k]


def test_header_validation_errors(tmp_path, rng):
    g = random_grid(rng, dims=(3, 3, 3))
    path = tmp_path / "v.json"
    vph1.write_grid(path, g)

    header = json.loads(path.read_text())
    header["dtype"] = "f32"
    path.write_text(json.dumps(header))
    with pytest.raises(SchemaError):
        vph1.read_grid(path)

    header["dtype"] = "i16"
    del header["dims"]
    path.write_text(json.dumps(header))
    with pytest.raises(SchemaError):
        vph1.read_grid(path)


def test_truncated_payload_rejected(tmp_path, rng):
    g = random_grid(rng, dims=(3, 3, 3))
    path = tmp_path / "v.json"
    vph1.write_grid(path, g)
    raw = (tmp_path / "v.raw").read_bytes()
    (tmp_path / "v.raw").write_bytes(raw[:-2])
    with pytest.raises(SchemaError):
        vph1.read_grid(path)


def test_mask_values_restricted(tmp_path, rng):
    m = random_blob_mask(rng, dims=(3, 3, 3))
    path = tmp_path / "m.json"
    vph1.write_mask(path, m)
    payload = bytearray((tmp_path / "m.raw").read_bytes())
    payload[0] = 7
    (tmp_path / "m.raw").write_bytes(bytes(payload))
    with pytest.raises(SchemaError):
        vph1.read_mask(path)


def test_dtype_mismatch_between_readers(tmp_path, rng):
    g = random_grid(rng, dims=(3, 3, 3))
    vph1.write_grid(tmp_path / "v.json", g)
    with pytest.raises(SchemaError):
        vph1.read_mask(tmp_path / "v.json")
