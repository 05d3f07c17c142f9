"""Enrollment profiles: speaker embedding plus frozen normalization stats.

Vectors travel as 16-bit scalar-quantized values with float32 min/max bounds.
A profile keeps the raw float statistics it was computed from (for analysis)
next to the quantized transport form; every decode path reads the quantized
form so that local decoding and stream-based decoding see identical numbers.

File layout ("DTFP", little-endian):

    magic 4 | version u16 | model_hash 8 | mode u8 | duration f32
    embedding qvec
    enc_site_count u16, per site: mean qvec, var qvec
    dec_site_count u16, per site: mean qvec, var qvec

where a qvec is: n u32 | min f32 | max f32 | n x u16.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

MAGIC = b"DTFP"
VERSION = 1

MODES = ("global", "global_in", "local")


class ProfileError(ValueError):
    pass


@dataclass
class QuantizedVector:
    values: np.ndarray  # u16
    vmin: float  # stored at f32 precision
    vmax: float

    @classmethod
    def quantize(cls, arr) -> "QuantizedVector":
        arr = np.asarray(arr, dtype=np.float64).ravel()
        vmin = np.float32(arr.min())
        vmax = np.float32(arr.max())
        span = np.float64(vmax) - np.float64(vmin)
        if span <= 0.0:
            q = np.zeros(arr.size, dtype=np.uint16)
        else:
            q = np.clip(np.rint((arr - np.float64(vmin)) / span * 65535.0),
                        0, 65535).astype(np.uint16)
        return cls(q, float(vmin), float(vmax))

    def dequantize(self) -> np.ndarray:
        vmin = np.float64(np.float32(self.vmin))
        vmax = np.float64(np.float32(self.vmax))
        return vmin + self.values.astype(np.float64) / 65535.0 * (vmax - vmin)

    def pack(self) -> bytes:
        head = struct.pack("<Iff", len(self.values), np.float32(self.vmin),
                           np.float32(self.vmax))
        return head + self.values.astype("<u2").tobytes()


def parse_qvec(data: bytes, offset: int):
    if offset + 12 > len(data):
        raise ProfileError("unexpected end of stream")
    n, vmin, vmax = struct.unpack_from("<Iff", data, offset)
    offset += 12
    if offset + 2 * n > len(data):
        raise ProfileError("unexpected end of stream")
    vals = np.frombuffer(data[offset : offset + 2 * n], dtype="<u2").copy()
    return QuantizedVector(vals, float(vmin), float(vmax)), offset + 2 * n


def pack_stats(stats_q):
    out = [struct.pack("<H", len(stats_q))]
    for mean_q, var_q in stats_q:
        out.append(mean_q.pack())
        out.append(var_q.pack())
    return b"".join(out)


def parse_stats(data: bytes, offset: int):
    if offset + 2 > len(data):
        raise ProfileError("unexpected end of stream")
    (n,) = struct.unpack_from("<H", data, offset)
    offset += 2
    stats = []
    for _ in range(n):
        mean_q, offset = parse_qvec(data, offset)
        var_q, offset = parse_qvec(data, offset)
        stats.append((mean_q, var_q))
    return stats, offset


@dataclass
class EnrollmentProfile:
    mode: str
    duration_s: float
    model_hash: bytes
    embedding_q: QuantizedVector
    enc_stats_q: list = field(default_factory=list)  # [(mean_q, var_q)] per site
    dec_stats_q: list = field(default_factory=list)
    # raw float stats as computed (not serialized; None after a file load)
    embedding_raw: np.ndarray | None = None
    enc_stats_raw: list | None = None
    dec_stats_raw: list | None = None

    def embedding(self) -> np.ndarray:
        """Transport-precision speaker embedding, shape (1, D_s)."""
        return self.embedding_q.dequantize()[None, :]

    def enc_stats(self):
        return [(m.dequantize(), v.dequantize()) for m, v in self.enc_stats_q]

    def dec_stats(self):
        return [(m.dequantize(), v.dequantize()) for m, v in self.dec_stats_q]

    def pack(self) -> bytes:
        mode_id = MODES.index(self.mode)
        head = MAGIC + struct.pack("<H", VERSION) + self.model_hash
        head += struct.pack("<Bf", mode_id, self.duration_s)
        return (head + self.embedding_q.pack() + pack_stats(self.enc_stats_q)
                + pack_stats(self.dec_stats_q))


def parse_profile(data: bytes, expect_hash: bytes | None = None) -> EnrollmentProfile:
    if len(data) < 19:
        raise ProfileError("unexpected end of stream")
    if data[:4] != MAGIC:
        raise ProfileError("bad profile magic")
    (version,) = struct.unpack_from("<H", data, 4)
    if version != VERSION:
        raise ProfileError(f"unsupported profile version {version}")
    model_hash = data[6:14]
    if expect_hash is not None and model_hash != expect_hash:
        raise ProfileError("profile was produced by a different model")
    mode_id, duration = struct.unpack_from("<Bf", data, 14)
    if mode_id >= len(MODES):
        raise ProfileError("unknown profile mode")
    offset = 19
    emb_q, offset = parse_qvec(data, offset)
    enc_q, offset = parse_stats(data, offset)
    dec_q, offset = parse_stats(data, offset)
    if offset != len(data):
        raise ProfileError("trailing bytes after profile")
    return EnrollmentProfile(MODES[mode_id], float(duration), model_hash,
                             emb_q, enc_q, dec_q)


def save_profile(path, profile: EnrollmentProfile):
    with open(path, "wb") as f:
        f.write(profile.pack())


def load_profile(path, expect_hash: bytes | None = None) -> EnrollmentProfile:
    with open(path, "rb") as f:
        return parse_profile(f.read(), expect_hash)
