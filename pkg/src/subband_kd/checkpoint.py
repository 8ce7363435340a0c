"""Binary checkpoint container.

Layout::

    b"SBSE" | version: u32 LE | header_len: u32 LE | header: UTF-8 JSON | payload

The header holds ``kind`` ("teacher" or "student"), ``band_index`` (int, or
"all" for a student), ``w``, ``h`` and an ``arrays`` manifest of
``{name, shape, offset}`` records in declared order.  Offsets are byte offsets
into the payload, which is a concatenation of little-endian float32 arrays.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Union

import numpy as np

from .network import ModelParams, param_names, param_shapes

MAGIC = b"SBSE"
VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    params: ModelParams
    kind: str
    band_index: Union[int, str]

    @property
    def w(self) -> int:
        return self.params.w

    @property
    def h(self) -> int:
        return self.params.h


def to_bytes(ckpt: Checkpoint) -> bytes:
    if ckpt.kind not in ("teacher", "student"):
        raise CheckpointError(f"unknown model kind {ckpt.kind!r}")
    manifest = []
    chunks = []
    offset = 0
    for name in param_names():
        a = np.ascontiguousarray(ckpt.params[name], dtype="<f4")
        manifest.append({"name": name, "shape": list(a.shape), "offset": offset})
        chunks.append(a.tobytes())
        offset += a.nbytes
    header = {
        "kind": ckpt.kind,
        "band_index": ckpt.band_index,
        "w": ckpt.params.w,
        "h": ckpt.params.h,
        "arrays": manifest,
    }
    hbytes = json.dumps(header, separators=(",", ":")).encode("utf-8")
    return MAGIC + struct.pack("<II", VERSION, len(hbytes)) + hbytes + b"".join(chunks)


def from_bytes(blob: bytes) -> Checkpoint:
    if blob[:4] != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    if len(blob) < 12:
        raise CheckpointError("truncated checkpoint header")
    version, hlen = struct.unpack("<II", blob[4:12])
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    try:
        header = json.loads(blob[12:12 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"corrupt checkpoint header: {e}") from None
    payload = blob[12 + hlen:]
    w, h = int(header["w"]), int(header["h"])
    expected = param_shapes(w, h)
    arrays = {}
    for rec in header["arrays"]:
        shape = tuple(rec["shape"])
        if expected.get(rec["name"]) != shape:
            raise CheckpointError(f"unexpected array {rec['name']} with shape {shape}")
        n = int(np.prod(shape))
        start = rec["offset"]
        if start + 4 * n > len(payload):
            raise CheckpointError(f"payload truncated in {rec['name']}")
        arrays[rec["name"]] = np.frombuffer(
            payload, dtype="<f4", count=n, offset=start).reshape(shape).astype(np.float64)
    missing = set(expected) - set(arrays)
    if missing:
        raise CheckpointError(f"checkpoint lacks arrays {sorted(missing)}")
    return Checkpoint(ModelParams(w, h, arrays), header["kind"], header["band_index"])


def save(path, ckpt: Checkpoint) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(to_bytes(ckpt))
    return path


def load(path) -> Checkpoint:
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"checkpoint not found: {path}")
    return from_bytes(path.read_bytes())


def quantize(params: ModelParams) -> ModelParams:
    """Round parameters through float32, as a save/load round trip would."""
    return ModelParams(params.w, params.h,
                       {k: v.astype(np.float32).astype(np.float64) for k, v in params.arrays.items()})
