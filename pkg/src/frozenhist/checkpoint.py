"""Binary checkpoint format shared by every component.

Layout (all integers little-endian):

    magic   4 bytes  b"HELM"
    version u16      currently 1
    count   u32      number of named arrays
    entry*  count times:
        name_len u16
        name     name_len bytes, UTF-8
        rank     u16
        extents  rank x u32
        values   prod(extents) x f64, raw little-endian bits

Round-trips are bit-exact: values are written with ``tobytes`` and read with
``frombuffer``, so every float64 pattern survives unchanged.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"HELM"
VERSION = 1


def save_arrays(path: str | Path, arrays: dict[str, np.ndarray]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    chunks = [MAGIC, struct.pack("<HI", VERSION, len(arrays))]
    for name, arr in arrays.items():
        a = np.asarray(arr, dtype=np.float64)
        if not a.flags["C_CONTIGUOUS"]:  # ascontiguousarray would flatten 0-d
            a = np.ascontiguousarray(a)
        nb = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(nb)))
        chunks.append(nb)
        chunks.append(struct.pack("<H", a.ndim))
        chunks.append(struct.pack(f"<{a.ndim}I", *a.shape))
        if a.dtype.byteorder == ">":  # big-endian host; not expected, but exact
            a = a.astype("<f8")
        chunks.append(a.tobytes())
    path.write_bytes(b"".join(chunks))


def load_arrays(path: str | Path) -> dict[str, np.ndarray]:
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise ValueError(f"{path}: not a checkpoint file (bad magic {raw[:4]!r})")
    version, count = struct.unpack_from("<HI", raw, 4)
    if version != VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    off = 10
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", raw, off)
        off += 2
        name = raw[off : off + name_len].decode("utf-8")
        off += name_len
        (rank,) = struct.unpack_from("<H", raw, off)
        off += 2
        extents = struct.unpack_from(f"<{rank}I", raw, off)
        off += 4 * rank
        n = int(np.prod(extents)) if rank else 1
        values = np.frombuffer(raw, dtype="<f8", count=n, offset=off).copy()
        off += 8 * n
        out[name] = values.reshape(extents)
    return out
