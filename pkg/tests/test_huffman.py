import numpy as np
import pytest

from disencodec import huffman as H


def round_trip(symbols, table):
    bits = H.encode_bits(symbols, table)
    out, end = H.decode_bits(bits, table, len(symbols))
    assert end == len(bits)
    return out


def test_two_symbols_one_bit_each():
    table = H.huffman_build([7, 3])
    assert np.array_equal(table.lengths, [1, 1])
    assert table.average_length([7, 3]) == 1.0


def test_dyadic_lengths_match_entropy():
    counts = np.array([8, 4, 2, 2])
    table = H.huffman_build(counts)
    assert sorted(table.lengths.tolist()) == [1, 2, 3, 3]
    assert table.lengths[0] == 1 and table.lengths[1] == 2
    p = counts / counts.sum()
    entropy = -(p * np.log2(p)).sum()
    assert abs(table.average_length(counts) - entropy) < 1e-12
    assert entropy == 1.75


def test_single_symbol_alphabet():
    table = H.huffman_build([5])
    assert np.array_equal(table.lengths, [1])
    bits = H.encode_bits(np.zeros(8, dtype=int), table)
    assert len(bits) == 8 and H.pack_bits(bits) == b"\x00"
    assert np.array_equal(round_trip(np.zeros(8, dtype=int), table), np.zeros(8))


def test_empty_and_zero_tables_rejected():
    with pytest.raises(ValueError, match="empty"):
        H.huffman_build([])
    with pytest.raises(ValueError, match="zero"):
        H.huffman_build([0, 0, 0])


def test_zero_counts_still_encodable_with_longest_codes():
    table = H.huffman_build([100, 50, 0, 25])
    assert table.lengths[2] == table.lengths.max()
    assert np.array_equal(round_trip(np.array([2, 0, 2, 3]), table),
                          [2, 0, 2, 3])


def test_deterministic_ties():
    a = H.huffman_build([5, 5, 5, 5, 5])
    b = H.huffman_build([5, 5, 5, 5, 5])
    assert np.array_equal(a.lengths, b.lengths)
    assert np.array_equal(a.codes, b.codes)


def test_prefix_free_property():
    rng = np.random.default_rng(0)
    table = H.huffman_build(rng.integers(1, 100, size=16))
    words = [format(int(c), f"0{l}b") for c, l in zip(table.codes, table.lengths)]
    assert len(set(words)) == len(words)
    for i, w in enumerate(words):
        for j, v in enumerate(words):
            if i != j:
                assert not v.startswith(w)


def test_random_table_round_trip_and_kraft_bound():
    rng = np.random.default_rng(1)
    counts = rng.integers(1, 500, size=16)
    table = H.huffman_build(counts)
    p = counts / counts.sum()
    entropy = -(p * np.log2(p)).sum()
    avg = table.average_length(counts)
    assert entropy <= avg <= entropy + 1.0
    seq = rng.choice(16, size=1000, p=p)
    assert np.array_equal(round_trip(seq, table), seq)
    # arithmetic per-symbol count oracle
    total_bits = sum(int(table.lengths[s]) for s in seq)
    assert len(H.encode_bits(seq, table)) == total_bits


def test_empty_sequence():
    table = H.huffman_build([3, 1])
    bits = H.encode_bits(np.array([], dtype=int), table)
    assert bits.size == 0
    out, end = H.decode_bits(bits, table, 0)
    assert out.size == 0 and end == 0


def test_unknown_symbol_rejected():
    table = H.huffman_build([3, 1])
    with pytest.raises(ValueError, match="unknown"):
        H.encode_bits(np.array([2]), table)
    with pytest.raises(ValueError, match="unknown"):
        H.encode_bits(np.array([-1]), table)


def test_truncated_bits_raise():
    table = H.huffman_build([10, 5, 3, 1])
    bits = H.encode_bits(np.array([3, 3, 3]), table)
    with pytest.raises(H.TruncatedStream, match="unexpected end"):
        H.decode_bits(bits[:-1], table, 3)


def test_decode_offset_chaining():
    table = H.huffman_build([4, 3, 2, 1])
    a = H.encode_bits(np.array([0, 1]), table)
    b = H.encode_bits(np.array([3, 2, 0]), table)
    bits = np.concatenate([a, b])
    got_a, mid = H.decode_bits(bits, table, 2)
    got_b, end = H.decode_bits(bits, table, 3, start=mid)
    assert np.array_equal(got_a, [0, 1]) and np.array_equal(got_b, [3, 2, 0])
    assert end == len(bits)


def test_table_serialization_round_trip():
    rng = np.random.default_rng(2)
    table = H.huffman_build(rng.integers(0, 50, size=24))
    blob = H.serialize_table(table)
    assert len(blob) == 2 + 24
    parsed, off = H.parse_table(b"\xff" + blob, offset=1)
    assert off == 1 + len(blob)
    assert np.array_equal(parsed.lengths, table.lengths)
    assert np.array_equal(parsed.codes, table.codes)
    with pytest.raises(H.TruncatedStream):
        H.parse_table(blob[:-1])


def test_pack_bits_msb_first_and_padding():
    bits = np.array([1, 0, 1, 1, 0, 0, 1, 1, 1], dtype=np.uint8)
    packed = H.pack_bits(bits)
    assert packed == bytes([0b10110011, 0b10000000])
    assert np.array_equal(H.unpack_bits(packed)[:9], bits)


def test_large_stream_round_trip_within_entropy_bound():
    rng = np.random.default_rng(3)
    k = 64
    weights = rng.uniform(0.1, 1.0, k) ** 3
    p = weights / weights.sum()
    seq = rng.choice(k, size=100_000, p=p)
    counts = np.bincount(seq, minlength=k)
    table = H.huffman_build(counts)
    bits = H.encode_bits(seq, table)
    out, end = H.decode_bits(bits, table, len(seq))
    assert np.array_equal(out, seq) and end == len(bits)
    emp = counts / counts.sum()
    nz = emp > 0
    emp_entropy = -(emp[nz] * np.log2(emp[nz])).sum()
    assert len(bits) / len(seq) <= emp_entropy + 1.0
