"""Model parameter file format.

Layout, all little-endian:

    magic   4 bytes  b"DTFM"
    version u16      currently 1
    count   u32      number of named arrays
    entries          count times:
        name_len u16, name UTF-8, rank u8, dims u32 each, values f64 raw
    opt     optional trailing section: b"OPT0", count u32, same entry layout

Entry order is preserved on round trip. The 8-byte model hash that streams
embed is the SHA-256 prefix of the parameter section bytes; the optimizer
appendix is excluded so a mid-training checkpoint and the final export of
the same weights agree, while any parameter edit invalidates old streams.
"""

from __future__ import annotations

import hashlib
import struct

import numpy as np

MAGIC = b"DTFM"
OPT_MAGIC = b"OPT0"
VERSION = 1


class ModelFormatError(ValueError):
    pass


def _pack_entry(name: str, arr: np.ndarray) -> bytes:
    raw = name.encode("utf-8")
    a = np.asarray(arr, dtype=np.float64)  # ascontiguousarray would promote 0-d to 1-d
    head = struct.pack("<H", len(raw)) + raw + struct.pack("<B", a.ndim)
    head += struct.pack(f"<{a.ndim}I", *a.shape) if a.ndim else b""
    return head + a.astype("<f8").tobytes()


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise ModelFormatError("truncated model file")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def u16(self):
        return struct.unpack("<H", self.take(2))[0]

    def u32(self):
        return struct.unpack("<I", self.take(4))[0]

    def u8(self):
        return self.take(1)[0]


def _read_entries(r: _Reader, count: int):
    entries = {}
    for _ in range(count):
        name = r.take(r.u16()).decode("utf-8")
        rank = r.u8()
        dims = tuple(r.u32() for _ in range(rank))
        n = int(np.prod(dims)) if rank else 1
        arr = np.frombuffer(r.take(8 * n), dtype="<f8").reshape(dims).copy()
        if name in entries:
            raise ModelFormatError(f"duplicate entry: {name}")
        entries[name] = arr
    return entries


def serialize_entries(entries, opt_entries=None) -> bytes:
    out = [MAGIC, struct.pack("<HI", VERSION, len(entries))]
    for name, arr in entries.items():
        out.append(_pack_entry(name, np.asarray(arr)))
    if opt_entries:
        out.append(OPT_MAGIC + struct.pack("<I", len(opt_entries)))
        for name, arr in opt_entries.items():
            out.append(_pack_entry(name, np.asarray(arr)))
    return b"".join(out)


def deserialize_entries(data: bytes):
    """Returns (entries, opt_entries); opt_entries is {} when absent."""
    r = _Reader(data)
    if r.take(4) != MAGIC:
        raise ModelFormatError("bad model magic")
    version = r.u16()
    if version != VERSION:
        raise ModelFormatError(f"unsupported model version {version}")
    entries = _read_entries(r, r.u32())
    opt = {}
    if r.pos < len(data):
        if r.take(4) != OPT_MAGIC:
            raise ModelFormatError("unrecognized trailing section")
        opt = _read_entries(r, r.u32())
    if r.pos != len(data):
        raise ModelFormatError("trailing bytes after final section")
    return entries, opt


def save_model(path, entries, opt_entries=None) -> bytes:
    params = serialize_entries(entries)
    blob = params
    if opt_entries:
        tail = [OPT_MAGIC + struct.pack("<I", len(opt_entries))]
        for name, arr in opt_entries.items():
            tail.append(_pack_entry(name, np.asarray(arr)))
        blob = params + b"".join(tail)
    with open(path, "wb") as f:
        f.write(blob)
    return model_hash(params)


def load_model(path):
    with open(path, "rb") as f:
        blob = f.read()
    entries, opt = deserialize_entries(blob)
    # re-serialization is byte-identical (order and layout are deterministic),
    # which keeps the hash independent of any optimizer appendix
    return entries, opt, model_hash(serialize_entries(entries))


def model_hash(blob: bytes) -> bytes:
    """8-byte stream-compatibility tag for a serialized parameter section."""
    return hashlib.sha256(blob).digest()[:8]
