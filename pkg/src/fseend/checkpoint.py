"""Self-describing binary checkpoints.

Layout (little-endian)::

    b"FSEENDCK"  u32 version  u32 meta_len  meta (JSON, utf-8)  u32 n_tensors
    per tensor:  u16 name_len  name  u8 dtype (1=f32, 2=f64)  u8 ndim  u64 dims...  payload

The JSON block carries the model config and training metadata; tensors are
named ``param/<name>`` or ``optim/<key>``. Parameters are stored as float64 by
default so a save/load round trip is bit-exact.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .model import FSEEND, ModelConfig

MAGIC = b"FSEENDCK"
VERSION = 1
_DTYPES = {1: np.dtype("<f4"), 2: np.dtype("<f8")}
_CODES = {"float32": 1, "float64": 2}


@dataclass
class Checkpoint:
    config: ModelConfig
    params: dict[str, np.ndarray]
    meta: dict = field(default_factory=dict)
    optimizer_state: dict[str, np.ndarray] = field(default_factory=dict)

    def model(self) -> FSEEND:
        return FSEEND(self.config, dict(self.params))


def _write_tensor(fh, name: str, arr: np.ndarray, dtype: str) -> None:
    code = _CODES[dtype]
    raw = name.encode()
    arr = np.ascontiguousarray(arr, dtype=_DTYPES[code])
    fh.write(struct.pack("<H", len(raw)) + raw)
    fh.write(struct.pack("<BB", code, arr.ndim))
    fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
    fh.write(arr.tobytes())


def save(path, model: FSEEND, meta: dict | None = None, optimizer_state=None, dtype: str = "float64") -> None:
    header = {"format_version": VERSION, "config": model.config.to_dict(), "meta": meta or {}}
    blob = json.dumps(header, sort_keys=True).encode()
    tensors = [(f"param/{k}", v) for k, v in sorted(model.params.items())]
    tensors += [(f"optim/{k}", np.asarray(v)) for k, v in sorted((optimizer_state or {}).items())]
    tmp = Path(str(path) + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC + struct.pack("<II", VERSION, len(blob)) + blob)
        fh.write(struct.pack("<I", len(tensors)))
        for name, arr in tensors:
            # optimizer moments stay float64 regardless of the parameter dtype
            _write_tensor(fh, name, arr, dtype if name.startswith("param/") else "float64")
    tmp.replace(path)


def load(path) -> Checkpoint:
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise ValueError(f"{path}: not a checkpoint (magic {raw[:8]!r})")
    version, meta_len = struct.unpack_from("<II", raw, 8)
    if version != VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    pos = 16
    header = json.loads(raw[pos : pos + meta_len])
    pos += meta_len
    (n,) = struct.unpack_from("<I", raw, pos)
    pos += 4
    params, optim = {}, {}
    for _ in range(n):
        (name_len,) = struct.unpack_from("<H", raw, pos)
        pos += 2
        name = raw[pos : pos + name_len].decode()
        pos += name_len
        code, ndim = struct.unpack_from("<BB", raw, pos)
        pos += 2
        shape = struct.unpack_from(f"<{ndim}Q", raw, pos)
        pos += 8 * ndim
        dt = _DTYPES[code]
        count = int(np.prod(shape, dtype=np.int64))
        arr = np.frombuffer(raw, dtype=dt, count=count, offset=pos).reshape(shape).astype(np.float64)
        pos += count * dt.itemsize
        kind, key = name.split("/", 1)
        (params if kind == "param" else optim)[key] = arr
    config = ModelConfig.from_dict(header["config"])
    expected = set(FSEEND.init(config).params) if len(params) else set()
    if set(params) != expected:
        raise ValueError(f"{path}: parameter names do not match the stored config")
    return Checkpoint(config, params, header.get("meta", {}), optim)
