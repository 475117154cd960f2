"""Binary checkpoint format.

Layout (all integers little-endian u32, floats little-endian f64):

    magic "FSMR" | version | config_len | config UTF-8 JSON |
    repeat per parameter (sorted by name):
        name_len | name UTF-8 | ndim | dim_0..dim_{ndim-1} | raw float64 data

Round-trips are bit-identical; truncation anywhere raises a corruption error
carrying the byte offset where the file ran out."""

from __future__ import annotations

import json
import os
import struct

import numpy as np

from .errors import (
    CheckpointFormatError,
    ConfigError,
    CorruptCheckpointError,
    UnsupportedVersionError,
)
from .numerics import Tensor

MAGIC = b"FSMR"
VERSION = 1

_U32 = struct.Struct("<I")


def save_checkpoint(params: dict[str, Tensor], config: dict, path: str) -> None:
    """Serialize parameters and the config echo; atomic (temp + rename)."""
    chunks: list[bytes] = [MAGIC, _U32.pack(VERSION)]
    cfg_bytes = json.dumps(config, sort_keys=True).encode("utf-8")
    chunks.append(_U32.pack(len(cfg_bytes)))
    chunks.append(cfg_bytes)
    for name in sorted(params):
        data = params[name].data
        nb = name.encode("utf-8")
        chunks.append(_U32.pack(len(nb)))
        chunks.append(nb)
        chunks.append(_U32.pack(data.ndim))
        for dim in data.shape:
            chunks.append(_U32.pack(dim))
        chunks.append(np.ascontiguousarray(data, dtype="<f8").tobytes())
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(b"".join(chunks))
    os.replace(tmp, path)


class _Reader:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.off = 0

    def take(self, k: int, what: str) -> bytes:
        if self.off + k > len(self.blob):
            raise CorruptCheckpointError(
                f"checkpoint truncated at byte {len(self.blob)} while reading {what} "
                f"(needed {self.off + k} bytes)"
            )
        out = self.blob[self.off : self.off + k]
        self.off += k
        return out

    def u32(self, what: str) -> int:
        return _U32.unpack(self.take(4, what))[0]

    @property
    def exhausted(self) -> bool:
        return self.off >= len(self.blob)


def load_checkpoint(path: str) -> tuple[dict[str, Tensor], dict]:
    """Read a checkpoint back; returns (parameters, config dict)."""
    with open(path, "rb") as fh:
        blob = fh.read()
    r = _Reader(blob)
    magic = r.take(4, "magic")
    if magic != MAGIC:
        raise CheckpointFormatError(f"bad magic {magic!r}; expected {MAGIC!r}")
    version = r.u32("version")
    if version > VERSION:
        raise UnsupportedVersionError(f"checkpoint version {version} is newer than supported {VERSION}")
    cfg_len = r.u32("config length")
    try:
        config = json.loads(r.take(cfg_len, "config").decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptCheckpointError(f"config block at byte 12 is not valid JSON: {exc}") from exc
    if not isinstance(config, dict):
        raise ConfigError("checkpoint config echo must be a JSON object")

    params: dict[str, Tensor] = {}
    while not r.exhausted:
        name_len = r.u32("parameter name length")
        name = r.take(name_len, "parameter name").decode("utf-8")
        ndim = r.u32(f"ndim of '{name}'")
        shape = tuple(r.u32(f"dim {i} of '{name}'") for i in range(ndim))
        count = 1
        for dim in shape:
            count *= dim
        raw = r.take(8 * count, f"data of '{name}'")
        arr = np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(shape)
        params[name] = Tensor(arr.copy(), requires_grad=True)
    return params, config
