"""Weights bundle: one archive file per model.

Layout: 5-byte magic ``TFSB1``, a little-endian uint32 header length, a
JSON header ``{"meta": {...}, "entries": [{"name", "shape"}, ...]}``, then
the entries' float32 little-endian payloads concatenated in header order.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"TFSB1"


class BundleError(ValueError):
    """Raised on malformed bundle files."""


def save_bundle(path: str | Path, tensors: dict[str, np.ndarray],
                meta: dict | None = None) -> None:
    entries = []
    payloads = []
    for name, arr in tensors.items():
        arr = np.asarray(arr, dtype=np.float32)
        entries.append({"name": name, "shape": list(arr.shape)})
        payloads.append(arr.astype("<f4").tobytes())
    header = json.dumps({"meta": meta or {}, "entries": entries}).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        for p in payloads:
            fh.write(p)


def load_bundle(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    with open(path, "rb") as fh:
        if fh.read(5) != MAGIC:
            raise BundleError(f"{path}: not a weights bundle (bad magic)")
        (hlen,) = struct.unpack("<I", fh.read(4))
        try:
            header = json.loads(fh.read(hlen))
        except json.JSONDecodeError as exc:
            raise BundleError(f"{path}: corrupt header: {exc}") from exc
        tensors: dict[str, np.ndarray] = {}
        for entry in header["entries"]:
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            raw = fh.read(count * 4)
            if len(raw) != count * 4:
                raise BundleError(f"{path}: truncated payload for {entry['name']}")
            tensors[entry["name"]] = np.frombuffer(raw, dtype="<f4").reshape(shape).copy()
    return tensors, header.get("meta", {})
