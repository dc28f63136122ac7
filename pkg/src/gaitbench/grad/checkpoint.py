"""``model.ckpt``: u64 header length, JSON header, then raw little-endian f32 blobs.

The header lists entries in payload order; optimizer moments, when saved, are
extra entries named ``adam.m/<param>`` and ``adam.v/<param>``.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"GBCKPT01"


def save_checkpoint(path, params, optimizer_state=None, extra=None):
    arrays = {name: t.data if hasattr(t, "data") else t for name, t in params.items()}
    entries = list(arrays.items())
    header = {"layers": [], "optimizer": None, "step": 0, "extra": extra or {}}
    if optimizer_state is not None:
        header["optimizer"] = optimizer_state.hyperparams()
        header["step"] = optimizer_state.step
        for name in arrays:
            if name in optimizer_state.m:
                entries.append((f"adam.m/{name}", optimizer_state.m[name]))
                entries.append((f"adam.v/{name}", optimizer_state.v[name]))
            elif name in optimizer_state.v:
                entries.append((f"sgd.v/{name}", optimizer_state.v[name]))
    header["layers"] = [{"name": n, "shape": list(a.shape)} for n, a in entries]
    blob = json.dumps(header, sort_keys=True).encode()
    path = Path(path)
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<Q", len(blob)))
        f.write(blob)
        for _, a in entries:
            f.write(np.ascontiguousarray(a, dtype="<f4").tobytes())


def load_checkpoint(path):
    """Return ``(arrays, header)``; arrays maps every header entry name to an f32 array."""
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise ValueError(f"{path}: not a gaitbench checkpoint")
    (n,) = struct.unpack("<Q", raw[8:16])
    header = json.loads(raw[16 : 16 + n])
    off = 16 + n
    arrays = {}
    for layer in header["layers"]:
        count = int(np.prod(layer["shape"], dtype=np.int64))
        a = np.frombuffer(raw, dtype="<f4", count=count, offset=off).reshape(layer["shape"])
        arrays[layer["name"]] = a.astype(np.float32)
        off += 4 * count
    if off != len(raw):
        raise ValueError(f"{path}: payload size does not match header")
    return arrays, header
