"""Canonical huffman coding of quantizer indices.

Codes are canonical: only per-symbol code lengths are stored (u16 symbol
count, then one u8 length per symbol) and codewords are reassigned in
(length, symbol) order on load. Tree construction breaks count ties
deterministically so identical count tables always yield identical tables.

Bit I/O works on arrays of 0/1 bytes packed MSB-first; callers pack to bytes
with np.packbits at section boundaries (final partial byte zero-padded).
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field

import numpy as np


class TruncatedStream(ValueError):
    def __init__(self, msg="unexpected end of stream"):
        super().__init__(msg)


def _code_lengths(counts: np.ndarray) -> np.ndarray:
    """Huffman code length per symbol from (smoothed) counts."""
    n = len(counts)
    if n == 1:
        return np.array([1], dtype=np.uint8)
    # heap of (count, tiebreak, node id); leaves are 0..n-1, internals follow
    heap = [(int(c), s, s) for s, c in enumerate(counts)]
    heapq.heapify(heap)
    parent = {}
    next_id = n
    while len(heap) > 1:
        c0, _, a = heapq.heappop(heap)
        c1, _, b = heapq.heappop(heap)
        parent[a] = next_id
        parent[b] = next_id
        heapq.heappush(heap, (c0 + c1, next_id, next_id))
        next_id += 1
    lengths = np.zeros(n, dtype=np.uint8)
    for s in range(n):
        d, node = 0, s
        while node in parent:
            node = parent[node]
            d += 1
        lengths[s] = d
    return lengths


@dataclass
class HuffmanTable:
    lengths: np.ndarray  # u8 code length per symbol
    codes: np.ndarray = field(init=False)  # canonical codeword values

    def __post_init__(self):
        self.lengths = np.asarray(self.lengths, dtype=np.uint8)
        if len(self.lengths) == 0:
            raise ValueError("empty huffman table")
        order = sorted(range(len(self.lengths)), key=lambda s: (self.lengths[s], s))
        codes = np.zeros(len(self.lengths), dtype=np.uint64)
        code, prev_len = 0, int(self.lengths[order[0]])
        for s in order:
            code <<= int(self.lengths[s]) - prev_len
            prev_len = int(self.lengths[s])
            codes[s] = code
            code += 1
        self.codes = codes
        # canonical decode tables, per present length
        self._order = np.array(order)
        lens_sorted = self.lengths[self._order].astype(int)
        self._first_code = {}
        self._first_pos = {}
        self._count = {}
        for pos, (s, l) in enumerate(zip(self._order, lens_sorted)):
            if l not in self._first_code:
                self._first_code[l] = int(self.codes[s])
                self._first_pos[l] = pos
                self._count[l] = 0
            self._count[l] += 1

    @property
    def n_symbols(self) -> int:
        return len(self.lengths)

    def average_length(self, counts) -> float:
        counts = np.asarray(counts, dtype=np.float64)
        return float((counts * self.lengths).sum() / counts.sum())


def huffman_build(counts) -> HuffmanTable:
    """Canonical table from an index frequency table.

    Zero counts are bumped to 1 so every symbol stays encodable; they end up
    with the longest codes.
    """
    counts = np.asarray(counts)
    if counts.size == 0:
        raise ValueError("empty huffman table")
    if not (counts > 0).any():
        raise ValueError("all symbol counts are zero")
    return HuffmanTable(_code_lengths(np.where(counts > 0, counts, 1)))


def serialize_table(table: HuffmanTable) -> bytes:
    return len(table.lengths).to_bytes(2, "little") + table.lengths.tobytes()


def parse_table(data: bytes, offset=0):
    """Returns (table, next_offset)."""
    if offset + 2 > len(data):
        raise TruncatedStream()
    n = int.from_bytes(data[offset : offset + 2], "little")
    if n == 0:
        raise ValueError("empty huffman table")
    if offset + 2 + n > len(data):
        raise TruncatedStream()
    lengths = np.frombuffer(data[offset + 2 : offset + 2 + n], dtype=np.uint8)
    return HuffmanTable(lengths.copy()), offset + 2 + n


def encode_bits(symbols, table: HuffmanTable) -> np.ndarray:
    """Symbols -> array of 0/1 bytes, each codeword MSB-first."""
    symbols = np.asarray(symbols, dtype=np.int64)
    if symbols.size == 0:
        return np.zeros(0, dtype=np.uint8)
    if symbols.min() < 0 or symbols.max() >= table.n_symbols:
        raise ValueError("unknown symbol")
    lens = table.lengths[symbols].astype(np.int64)
    vals = table.codes[symbols]
    total = int(lens.sum())
    ends = np.cumsum(lens)
    # bit j of the output belongs to symbol i(j); shift selects its code bit
    owner_end = np.repeat(ends, lens)
    shift = (owner_end - 1 - np.arange(total)).astype(np.uint64)
    bits = (np.repeat(vals, lens) >> shift) & np.uint64(1)
    return bits.astype(np.uint8)


def decode_bits(bits, table: HuffmanTable, n: int, start=0):
    """Decode n symbols from a 0/1 array starting at bit `start`.

    Returns (symbols, next_bit_offset). Raises TruncatedStream if the bits
    run out mid-symbol.
    """
    out = np.empty(n, dtype=np.int64)
    pos = start
    limit = len(bits)
    first_code, first_pos, count = table._first_code, table._first_pos, table._count
    order = table._order
    for i in range(n):
        code = 0
        length = 0
        while True:
            if pos >= limit:
                raise TruncatedStream()
            code = (code << 1) | int(bits[pos])
            pos += 1
            length += 1
            fc = first_code.get(length)
            if fc is not None and fc <= code < fc + count[length]:
                out[i] = order[first_pos[length] + (code - fc)]
                break
            if length > 64:
                raise ValueError("corrupt huffman payload")
    return out, pos


def pack_bits(bits: np.ndarray) -> bytes:
    """MSB-first packing; the final partial byte is zero-padded."""
    return np.packbits(np.asarray(bits, dtype=np.uint8)).tobytes()


def unpack_bits(data: bytes) -> np.ndarray:
    return np.unpackbits(np.frombuffer(data, dtype=np.uint8))
