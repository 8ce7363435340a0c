import json
import struct

import numpy as np
import pytest

from subband_kd.checkpoint import (MAGIC, VERSION, Checkpoint, CheckpointError, from_bytes, load,
                                   quantize, save, to_bytes)
from subband_kd.network import init_params, param_names, param_shapes


def test_layout():
    p = init_params(4, 3, 0)
    blob = to_bytes(Checkpoint(p, "teacher", 2))
    assert blob[:4] == MAGIC
    version, hlen = struct.unpack("<II", blob[4:12])
    assert version == VERSION == 1
    header = json.loads(blob[12:12 + hlen])
    assert header["kind"] == "teacher" and header["band_index"] == 2
    assert (header["w"], header["h"]) == (4, 3)
    assert [r["name"] for r in header["arrays"]] == param_names()
    payload = blob[12 + hlen:]
    assert len(payload) == 4 * p.size
    rec = header["arrays"][-1]
    bias = np.frombuffer(payload, "<f4", count=4, offset=rec["offset"])
    np.testing.assert_array_equal(bias, p["out.bias"].astype(np.float32))


def test_roundtrip_through_file(tmp_path):
    p = init_params(5, 2, 1)
    path = save(tmp_path / "sub" / "s.sbse", Checkpoint(p, "student", "all"))
    ck = load(path)
    assert ck.kind == "student" and ck.band_index == "all" and (ck.w, ck.h) == (5, 2)
    q = quantize(p)
    for name in param_shapes(5, 2):
        np.testing.assert_array_equal(ck.params[name], q[name])


def test_bytes_deterministic():
    p = init_params(3, 2, 7)
    assert to_bytes(Checkpoint(p, "teacher", 0)) == to_bytes(Checkpoint(p.copy(), "teacher", 0))


def test_rejects_bad_input(tmp_path):
    blob = to_bytes(Checkpoint(init_params(3, 2), "teacher", 0))
    with pytest.raises(CheckpointError, match="bad magic"):
        from_bytes(b"XXXX" + blob[4:])
    with pytest.raises(CheckpointError, match="version"):
        from_bytes(MAGIC + struct.pack("<I", 9) + blob[8:])
    with pytest.raises(CheckpointError, match="truncated"):
        from_bytes(blob[:-8])
    with pytest.raises(CheckpointError, match="not found"):
        load(tmp_path / "missing.sbse")
    with pytest.raises(CheckpointError):
        to_bytes(Checkpoint(init_params(3, 2), "oracle", 0))
