import hashlib
import struct

import numpy as np
import pytest
from numpy.testing import assert_array_equal

from core.errors import UsageError
from core.run_storage import (SNSF_HEADER, compare_runs, list_run_files, read_field_dump, run_id, save_csv,
                              save_json, write_field_dump)


def test_run_id_is_a_config_hash():
    text = "command=verify\nseed=24301\n"
    assert run_id(text) == hashlib.sha256(text.encode("utf-8")).hexdigest()[:12]
    assert run_id(text) != run_id(text.replace("24301", "24302"))


def test_field_dump_layout(tmp_path):
    values = np.arange(12, dtype=float).reshape(4, 3)
    path = write_field_dump(str(tmp_path / "v.snsf"), values, t=0.25)
    raw = open(path, "rb").read()
    magic, version, nodes, comps, t = struct.unpack("<4sIQId", raw[:SNSF_HEADER.size])
    assert (magic, version, nodes, comps, t) == (b"SNSF", 1, 4, 3, 0.25)
    assert_array_equal(np.frombuffer(raw[SNSF_HEADER.size:], dtype="<f8"), values.ravel())

    back, t = read_field_dump(path)
    assert_array_equal(back, values)
    assert t == 0.25


def test_scalar_dump(tmp_path):
    path = write_field_dump(str(tmp_path / "q.snsf"), np.linspace(0.0, 1.0, 5))
    back, t = read_field_dump(path)
    assert back.shape == (5, 1)
    assert t == 0.0


@pytest.mark.parametrize("damage", ["magic", "truncated", "short_body"])
def test_bad_dumps(tmp_path, damage):
    path = write_field_dump(str(tmp_path / "v.snsf"), np.ones((3, 3)))
    raw = open(path, "rb").read()
    if damage == "magic":
        raw = b"XXXX" + raw[4:]
    elif damage == "truncated":
        raw = raw[:10]
    else:
        raw = raw[:-8]
    open(path, "wb").write(raw)
    with pytest.raises(UsageError):
        read_field_dump(path)


def test_compare_runs(tmp_path):
    rows = [{"t": 0.0, "energy": 1.5}]
    for name in ("a", "b"):
        save_csv(rows, ["t", "energy"], tmp_path / name, "solve.csv")
        save_json({"worst": 1e-12}, tmp_path / name, "solve.json")
    assert list_run_files(tmp_path / "a") == ["solve.csv", "solve.json"]
    assert list_run_files(tmp_path / "a", ".csv") == ["solve.csv"]
    assert compare_runs(tmp_path / "a", tmp_path / "b")["identical"]

    save_json({"worst": 2e-12}, tmp_path / "b", "solve.json")
    save_json({}, tmp_path / "b", "extra.json")
    result = compare_runs(tmp_path / "a", tmp_path / "b")
    assert not result["identical"]
    assert len(result["differences"]) == 2
    assert compare_runs(tmp_path / "a", tmp_path / "b", ".csv")["identical"]
