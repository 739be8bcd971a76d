"""Flat binary container for named parameter blocks.

Layout, all integers little-endian u32:
    magic "SLNK" | version | block count
    per block: name length | UTF-8 name | rows | cols | rows*cols float64 LE
"""

from __future__ import annotations

import struct

import numpy as np

MAGIC = b"SLNK"
VERSION = 1


def save_blocks(path, blocks: dict[str, np.ndarray]) -> None:
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(blocks)))
        for name, arr in blocks.items():
            a = np.ascontiguousarray(arr, dtype="<f8")
            if a.ndim != 2:
                raise ValueError(f"block {name!r} is not 2-D")
            raw = name.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<II", a.shape[0], a.shape[1]))
            fh.write(a.tobytes())


def load_blocks(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        if fh.read(4) != MAGIC:
            raise ValueError(f"{path}: not a SLNK container")
        version, count = struct.unpack("<II", fh.read(8))
        if version != VERSION:
            raise ValueError(f"{path}: unsupported container version {version}")
        blocks: dict[str, np.ndarray] = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<I", fh.read(4))
            name = fh.read(name_len).decode("utf-8")
            rows, cols = struct.unpack("<II", fh.read(8))
            payload = fh.read(rows * cols * 8)
            if len(payload) != rows * cols * 8:
                raise ValueError(f"{path}: truncated block {name!r}")
            blocks[name] = np.frombuffer(payload, dtype="<f8").reshape(rows, cols).copy()
        return blocks
