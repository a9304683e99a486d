"""Named-tensor checkpoint files.

Layout: 8-byte magic, uint64 little-endian header length, UTF-8 JSON index
(name -> shape/offset/length, in insertion order), then the concatenated
little-endian float64 payloads.  Writing the same parameters twice produces
byte-identical files.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .autodiff import Tensor

_MAGIC = b"PGTENS1\n"


class CheckpointError(ValueError):
    pass


def save_tensors(params: dict[str, Tensor], path: str | Path) -> None:
    entries = []
    payloads = []
    offset = 0
    for name, t in params.items():
        buf = np.ascontiguousarray(t.data, dtype="<f8").tobytes()
        entries.append({"name": name, "shape": list(t.data.shape),
                        "offset": offset, "nbytes": len(buf)})
        payloads.append(buf)
        offset += len(buf)
    header = json.dumps({"tensors": entries}, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<Q", len(header)))
        f.write(header)
        for buf in payloads:
            f.write(buf)


def load_tensors(path: str | Path) -> dict[str, np.ndarray]:
    with open(path, "rb") as f:
        magic = f.read(len(_MAGIC))
        if magic != _MAGIC:
            raise CheckpointError(f"{path}: not a tensor checkpoint")
        (hlen,) = struct.unpack("<Q", f.read(8))
        header = json.loads(f.read(hlen).decode("utf-8"))
        payload = f.read()
    out: dict[str, np.ndarray] = {}
    for e in header["tensors"]:
        raw = payload[e["offset"]:e["offset"] + e["nbytes"]]
        arr = np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(e["shape"])
        out[e["name"]] = arr
    return out


def restore_into(params: dict[str, Tensor], path: str | Path) -> None:
    """Load a checkpoint into an existing parameter dict (shapes must match)."""
    loaded = load_tensors(path)
    missing = set(params) - set(loaded)
    extra = set(loaded) - set(params)
    if missing or extra:
        raise CheckpointError(
            f"{path}: parameter names mismatch (missing {sorted(missing)[:3]}, "
            f"unexpected {sorted(extra)[:3]})")
    for name, t in params.items():
        if tuple(loaded[name].shape) != t.data.shape:
            raise CheckpointError(f"{path}: {name}: shape {loaded[name].shape} "
                                  f"!= expected {t.data.shape}")
        t.data = loaded[name]
