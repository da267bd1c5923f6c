"""Single-file binary checkpoints.

Layout (all integers little-endian)::

    magic   b"CSFMCKPT"
    u32     format version
    u32     header length H
    H bytes UTF-8 JSON header (sorted keys): config, ablation, seed, extra
    u32     record count R
    R records:
        u32 name length, name bytes (UTF-8)
        u32 ndim, ndim x u64 axis lengths
        prod(shape) x f64 payload, row-major

Records hold every learnable parameter (``param:<path>``) followed by batch
norm running statistics (``buffer:<path>``).
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import DataError
from .model import AblationConfig, CSformer, ModelConfig
from .training import restore, snapshot

MAGIC = b"CSFMCKPT"
VERSION = 1


def dumps(model: CSformer, extra: Optional[dict] = None) -> bytes:
    header = {
        "config": model.config.to_dict(),
        "ablation": model.ablation.to_dict(),
        "seed": model.seed,
        "extra": extra or {},
    }
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    state = snapshot(model)
    parts = [MAGIC, struct.pack("<II", VERSION, len(hbytes)), hbytes, struct.pack("<I", len(state))]
    for name, arr in state.items():
        nb = name.encode("utf-8")
        arr = np.ascontiguousarray(arr, dtype="<f8")
        parts.append(struct.pack("<I", len(nb)) + nb)
        parts.append(struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(arr.tobytes())
    return b"".join(parts)


def loads(blob: bytes) -> tuple[CSformer, dict]:
    """Rebuild a model from checkpoint bytes; returns ``(model, extra)``."""
    if blob[:8] != MAGIC:
        raise DataError("not a checkpoint file (bad magic)")
    version, hlen = struct.unpack_from("<II", blob, 8)
    if version != VERSION:
        raise DataError(f"unsupported checkpoint version {version}")
    pos = 16
    header = json.loads(blob[pos:pos + hlen].decode("utf-8"))
    pos += hlen
    (count,) = struct.unpack_from("<I", blob, pos)
    pos += 4
    state = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<I", blob, pos)
        pos += 4
        name = blob[pos:pos + nlen].decode("utf-8")
        pos += nlen
        (ndim,) = struct.unpack_from("<I", blob, pos)
        pos += 4
        shape = struct.unpack_from(f"<{ndim}Q", blob, pos)
        pos += 8 * ndim
        size = int(np.prod(shape)) if ndim else 1
        state[name] = np.frombuffer(blob, dtype="<f8", count=size, offset=pos).reshape(shape).astype(np.float64)
        pos += 8 * size
    if pos != len(blob):
        raise DataError("trailing bytes after checkpoint records")

    model = CSformer(ModelConfig.from_dict(header["config"]), AblationConfig.from_dict(header["ablation"]), seed=header["seed"])
    expected = set(snapshot(model))
    if expected != set(state):
        missing = sorted(expected - set(state))
        unknown = sorted(set(state) - expected)
        raise DataError(f"checkpoint does not match its config (missing={missing[:3]}, unknown={unknown[:3]})")
    restore(model, state)
    model.eval()
    return model, header["extra"]


def save(model: CSformer, path, extra: Optional[dict] = None) -> None:
    Path(path).write_bytes(dumps(model, extra))


def load(path) -> tuple[CSformer, dict]:
    return loads(Path(path).read_bytes())
