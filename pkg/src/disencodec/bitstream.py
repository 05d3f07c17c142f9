"""Wire format for encoded speech.

Layout, all little-endian, sections zero-padded to byte boundaries:

    header    magic b"DTFC", version u16, mode u8, sample_rate u32,
              target_bps u32, model_hash 8 bytes, L u16 (0 outside local
              mode), spec_frames u32 (spectrogram frames at 100 Hz; the
              latent frame count follows as ceil(spec_frames / 4))
    enrollment  global modes only: quantized speaker embedding, and in
              global_in mode the decoder normalization statistics
    content   per latent frame, G huffman-coded group indices MSB-first;
              frame boundaries are implicit (the decoder counts symbols)
    packets   local mode only: after the frames of window j, a speaker
              packet (window index u32, G codebook indices u8) for every
              window j whose successor window has at least one frame

Huffman tables are not carried in the stream; both ends derive them from
the model file, and the header's model hash guards that agreement.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from . import dsp, huffman
from .profiles import MODES, QuantizedVector, pack_stats, parse_qvec, parse_stats
from .quantizer import LATENT_RATE

MAGIC = b"DTFC"
VERSION = 1
HEADER_BYTES = 29  # fixed fields incl. the frame count
SPEC_RATE = dsp.SAMPLE_RATE / dsp.HOP  # spectrogram frames per second
LATENT_DOWN = round(SPEC_RATE / LATENT_RATE)  # spectrogram frames per latent


class StreamError(ValueError):
    pass


class BadMagic(StreamError):
    pass


class BadVersion(StreamError):
    pass


class HashMismatch(StreamError):
    pass


class ModeError(StreamError):
    pass


class Truncated(StreamError):
    pass


@dataclass
class StreamHeader:
    mode: str
    sample_rate: int
    target_bps: int
    model_hash: bytes
    window_frames: int = 0  # L; meaningful in local mode only

    def __post_init__(self):
        if self.mode not in MODES:
            raise ModeError(f"unknown mode: {self.mode}")
        if len(self.model_hash) != 8:
            raise StreamError("model hash must be 8 bytes")
        if self.mode == "local" and self.window_frames < 1:
            raise ModeError("local mode requires a positive window length")


@dataclass
class EnrollmentBlock:
    embedding_q: QuantizedVector
    dec_stats_q: list = field(default_factory=list)


@dataclass
class SpeakerPacket:
    window_index: int
    indices: np.ndarray  # (G,) codebook indices

    def __post_init__(self):
        self.indices = np.asarray(self.indices, dtype=np.int64)


@dataclass
class ParsedStream:
    header: StreamHeader
    enrollment: EnrollmentBlock | None
    frame_indices: np.ndarray  # (n_latents, G)
    speaker_packets: list
    spec_frames: int
    header_bits: int
    enrollment_bits: int
    content_bits: int
    speaker_bits: int


@dataclass
class BitAccounting:
    header_bits: int
    enrollment_bits: int
    content_bits: int
    speaker_bits: int
    duration_s: float

    @property
    def total_bits(self) -> int:
        return (self.header_bits + self.enrollment_bits
                + self.content_bits + self.speaker_bits)

    @property
    def bps(self) -> float:
        return self.total_bits / self.duration_s

    def as_dict(self) -> dict:
        return {"header_bits": self.header_bits,
                "enrollment_bits": self.enrollment_bits,
                "content_bits": self.content_bits,
                "speaker_bits": self.speaker_bits,
                "total_bits": self.total_bits,
                "duration_s": self.duration_s,
                "bps": self.bps}


def _encode_run(frames: np.ndarray, tables) -> np.ndarray:
    """Frame-major, group-minor huffman bits for a (n, G) index block."""
    n, groups = frames.shape
    if n == 0:
        return np.zeros(0, dtype=np.uint8)
    lens = np.empty((n, groups), dtype=np.int64)
    codes = np.empty((n, groups), dtype=np.uint64)
    for g in range(groups):
        sym = frames[:, g]
        if sym.min() < 0 or sym.max() >= len(tables[g].lengths):
            raise StreamError("content index outside codebook range")
        lens[:, g] = tables[g].lengths[sym]
        codes[:, g] = tables[g].codes[sym]
    lens, codes = lens.ravel(), codes.ravel()
    ends = np.cumsum(lens)
    owner = np.repeat(np.arange(lens.size), lens)
    offset = np.arange(ends[-1]) - np.repeat(ends - lens, lens)
    shift = (lens[owner] - 1 - offset).astype(np.uint64)
    return ((codes[owner] >> shift) & 1).astype(np.uint8)


def _decode_run(bits: np.ndarray, tables, n: int, start: int):
    groups = len(tables)
    out = np.empty((n, groups), dtype=np.int64)
    pos = start
    for i in range(n):
        for g in range(groups):
            sym, pos = huffman.decode_bits(bits, tables[g], 1, pos)
            out[i, g] = sym[0]
    return out, pos


def _pack_header(header: StreamHeader, spec_frames: int) -> bytes:
    return (MAGIC
            + struct.pack("<HB", VERSION, MODES.index(header.mode))
            + struct.pack("<II", header.sample_rate, header.target_bps)
            + header.model_hash
            + struct.pack("<HI",
                          header.window_frames if header.mode == "local" else 0,
                          spec_frames))


def expected_packet_count(n_frames: int, window_frames: int) -> int:
    """Packets cover every window followed by at least one more frame."""
    return max(0, -(-n_frames // window_frames) - 1)


def write_stream(header: StreamHeader, enrollment, frames, speaker_packets,
                 content_tables, spec_frames=None) -> bytes:
    frames = np.asarray(frames, dtype=np.int64)
    if frames.ndim != 2 or frames.shape[1] != len(content_tables):
        raise StreamError("frame index block must be (n_frames, groups)")
    if spec_frames is None:
        spec_frames = LATENT_DOWN * len(frames)
    if -(-spec_frames // LATENT_DOWN) != len(frames):
        raise StreamError("spectrogram and latent frame counts disagree")
    if header.mode == "local":
        if enrollment is not None:
            raise ModeError("local mode carries no enrollment block")
        want = expected_packet_count(len(frames), header.window_frames)
        if len(speaker_packets) != want:
            raise ModeError(f"expected {want} speaker packets")
    else:
        if enrollment is None:
            raise ModeError("global modes require an enrollment block")
        if speaker_packets:
            raise ModeError("speaker packets exist only in local mode")
        if header.mode == "global_in" and not enrollment.dec_stats_q:
            raise ModeError("global_in enrollment requires decoder statistics")
        if header.mode == "global" and enrollment.dec_stats_q:
            raise ModeError("decoder statistics travel only in global_in mode")

    out = [_pack_header(header, spec_frames)]
    if enrollment is not None:
        out.append(enrollment.embedding_q.pack())
        if header.mode == "global_in":
            out.append(pack_stats(enrollment.dec_stats_q))

    if header.mode == "local":
        span = header.window_frames
        for j, packet in enumerate(speaker_packets):
            if packet.window_index != j:
                raise ModeError("speaker packet window indices must be 0,1,...")
            if packet.indices.min() < 0 or packet.indices.max() > 0xFF:
                raise StreamError("speaker index does not fit the wire format")
            out.append(huffman.pack_bits(
                _encode_run(frames[j * span : (j + 1) * span], content_tables)))
            out.append(struct.pack("<I", j)
                       + bytes(packet.indices.astype(np.uint8)))
        tail = len(speaker_packets) * span
        out.append(huffman.pack_bits(_encode_run(frames[tail:], content_tables)))
    else:
        out.append(huffman.pack_bits(_encode_run(frames, content_tables)))
    return b"".join(out)


def read_stream(data: bytes, content_tables, speaker_groups=None,
                expect_hash: bytes | None = None) -> ParsedStream:
    if len(data) < HEADER_BYTES:
        raise Truncated("unexpected end of stream")
    if data[:4] != MAGIC:
        raise BadMagic("bad stream magic")
    version, mode_id = struct.unpack("<HB", data[4:7])
    if version != VERSION:
        raise BadVersion(f"unsupported stream version {version}")
    if mode_id >= len(MODES):
        raise ModeError(f"unknown mode id {mode_id}")
    sample_rate, target_bps = struct.unpack("<II", data[7:15])
    model_hash = data[15:23]
    window_frames, spec_frames = struct.unpack("<HI", data[23:29])
    n_frames = -(-spec_frames // LATENT_DOWN)
    if expect_hash is not None and model_hash != bytes(expect_hash):
        raise HashMismatch("stream was produced by a different model")
    mode = MODES[mode_id]
    header = StreamHeader(mode, sample_rate, target_bps, model_hash,
                          window_frames)

    offset = HEADER_BYTES
    enrollment = None
    if mode != "local":
        try:
            emb_q, offset = parse_qvec(data, offset)
            stats = []
            if mode == "global_in":
                stats, offset = parse_stats(data, offset)
        except ValueError as e:
            raise Truncated("unexpected end of stream") from e
        enrollment = EnrollmentBlock(emb_q, stats)
    enrollment_bits = (offset - HEADER_BYTES) * 8

    payload = data[offset:]
    bits = huffman.unpack_bits(payload)
    groups = len(content_tables)
    packets = []
    speaker_bits = 0
    try:
        if mode == "local":
            if speaker_groups is None:
                raise StreamError("speaker group count required in local mode")
            span = header.window_frames
            n_packets = expected_packet_count(n_frames, span)
            chunks, pos = [], 0
            for j in range(n_packets + 1):
                take = min(span, n_frames - j * span) if j < n_packets \
                    else n_frames - n_packets * span
                idx, pos = _decode_run(bits, content_tables, take, pos)
                chunks.append(idx)
                pos = (pos + 7) & ~7
                if j < n_packets:
                    at = pos // 8
                    if at + 4 + speaker_groups > len(payload):
                        raise Truncated("unexpected end of stream")
                    w = struct.unpack("<I", payload[at : at + 4])[0]
                    if w != j:
                        raise StreamError("speaker packet out of order")
                    packet_idx = np.frombuffer(
                        payload[at + 4 : at + 4 + speaker_groups], dtype=np.uint8)
                    packets.append(SpeakerPacket(w, packet_idx.astype(np.int64)))
                    pos += (4 + speaker_groups) * 8
            frame_indices = np.concatenate(chunks) if chunks \
                else np.zeros((0, groups), dtype=np.int64)
            speaker_bits = n_packets * (4 + speaker_groups) * 8
        else:
            frame_indices, pos = _decode_run(bits, content_tables, n_frames, 0)
            pos = (pos + 7) & ~7
    except huffman.TruncatedStream as e:
        raise Truncated("unexpected end of stream") from e
    if pos != len(payload) * 8:
        raise StreamError("trailing bytes after stream end")

    return ParsedStream(header, enrollment, frame_indices, packets,
                        spec_frames=spec_frames,
                        header_bits=HEADER_BYTES * 8,
                        enrollment_bits=enrollment_bits,
                        content_bits=len(payload) * 8 - speaker_bits,
                        speaker_bits=speaker_bits)


def account(parsed: ParsedStream) -> BitAccounting:
    """Per-section bit tallies; duration comes from the carried frame count."""
    if parsed.spec_frames == 0:
        raise StreamError("cannot account an empty stream")
    return BitAccounting(parsed.header_bits, parsed.enrollment_bits,
                         parsed.content_bits, parsed.speaker_bits,
                         duration_s=parsed.spec_frames / SPEC_RATE)
