import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from buddysim import codec
from buddysim.codec import (
    CompressedBlock,
    SizeClass,
    compress_block,
    decompress_block,
    size_bucket,
    size_class,
)
from buddysim.errors import CodecDecodeError

from conftest import ramp_block, random_block
from oracle_bpc import oracle_compress_bits

ZERO_BLOCK = bytes(128)


def to_bitstring(cb: CompressedBlock) -> str:
    return "".join(format(b, "08b") for b in cb.data)[: cb.bit_length]


# --- hand-computed sizes (worked out from the symbol table before coding) ---

def test_all_zero_block_encodes_to_11_bits():
    # base '000' (3) + one zero-run code '001'+5 (8) covering all 33 planes
    cb = compress_block(ZERO_BLOCK)
    assert cb.bit_length == 11
    assert cb.byte_size == 2
    # '000' '001' '11111' padded right with zeros
    assert cb.data == bytes([0b00000111, 0b11100000])


def test_ramp_stride7_encodes_to_54_bits():
    # base '1'+32 (33) + zero-run(30) (8) + all-ones plane (5) + zero-run(2) (8)
    cb = compress_block(ramp_block(100, 7))
    assert cb.bit_length == 54
    assert cb.byte_size == 7
    expected = (
        "1" + format(100, "032b")
        + "001" + format(28, "05b")
        + "00000"
        + "001" + format(0, "05b")
    )
    assert to_bitstring(cb) == expected


def test_random_block_expands_past_raw_threshold(rng):
    cb = compress_block(random_block(rng))
    assert cb.bit_length > 1024
    assert cb.stored_bytes == 128


# --- roundtrips -------------------------------------------------------------

@pytest.mark.parametrize(
    "block",
    [
        ZERO_BLOCK,
        b"\xff" * 128,
        ramp_block(100, 7),
        ramp_block(0, 1),
        ramp_block(2**31 - 16, 1),            # deltas straddle the sign boundary
        bytes.fromhex("00000080" * 32),        # every word 0x80000000
        (b"\xff\xff\xff\xff" + b"\x00" * 4) * 16,  # max-magnitude deltas
    ],
)
def test_roundtrip_structured(block):
    assert decompress_block(compress_block(block)) == block


def test_roundtrip_random_corpus(rng):
    for _ in range(2000):
        block = random_block(rng)
        assert decompress_block(compress_block(block)) == block


def test_roundtrip_every_stride():
    for stride in range(1, 256):
        block = ramp_block(12345, stride)
        assert decompress_block(compress_block(block)) == block


@settings(max_examples=300, deadline=None)
@given(st.lists(st.integers(0, 2**32 - 1), min_size=32, max_size=32))
def test_roundtrip_property(words):
    block = codec.block_from_words(words)
    assert decompress_block(compress_block(block)) == block


@settings(max_examples=200, deadline=None)
@given(
    st.lists(st.sampled_from([0, 1, 7, 0xFF, 2**31 - 1, 2**31, 2**32 - 1]),
             min_size=32, max_size=32)
)
def test_roundtrip_boundary_words(words):
    block = codec.block_from_words(words)
    assert decompress_block(compress_block(block)) == block


# --- oracle equivalence -----------------------------------------------------

def test_matches_string_oracle_structured():
    blocks = [ZERO_BLOCK, b"\xff" * 128] + [ramp_block(b, s) for b in (0, 100) for s in (1, 5, 7, 255)]
    for block in blocks:
        cb = compress_block(block)
        assert to_bitstring(cb) == oracle_compress_bits(codec.words_from_block(block))


def test_matches_string_oracle_random(rng):
    for _ in range(300):
        words = [int(w) for w in rng.integers(0, 2**32, size=32, dtype=np.uint64)]
        cb = compress_block(words)
        assert to_bitstring(cb) == oracle_compress_bits(words)


def test_matches_string_oracle_sparse(rng):
    # sparse planes exercise the single-one / two-ones / plane-zero codes
    for _ in range(300):
        words = [0] * 32
        for pos in rng.integers(0, 32, size=3):
            words[int(pos)] = 1 << int(rng.integers(0, 32))
        cb = compress_block(words)
        assert to_bitstring(cb) == oracle_compress_bits(words)


# --- malformed streams ------------------------------------------------------

def test_truncated_stream_raises():
    cb = compress_block(ramp_block())
    truncated = CompressedBlock(cb.data[:3], 24)
    with pytest.raises(CodecDecodeError) as exc:
        decompress_block(truncated)
    assert exc.value.bit_offset is not None


def test_trailing_bits_raise():
    cb = compress_block(ZERO_BLOCK)
    padded = CompressedBlock(cb.data + b"\xff", cb.bit_length + 8)
    with pytest.raises(CodecDecodeError):
        decompress_block(padded)


def test_overlong_zero_run_raises():
    # base '000' + one zero plane + run(33) overruns the 33-plane budget
    bits = "000" + "01" + "001" + "11111"
    padded = bits + "0" * (-len(bits) % 8)
    data = int(padded, 2).to_bytes(len(padded) // 8, "big")
    with pytest.raises(CodecDecodeError):
        decompress_block(CompressedBlock(data, len(bits)))


def test_bit_length_longer_than_buffer_raises():
    with pytest.raises(CodecDecodeError):
        decompress_block(CompressedBlock(b"\x00", 64))


@settings(max_examples=300, deadline=None)
@given(st.binary(min_size=1, max_size=140), st.integers(1, 1120))
def test_decoder_total_on_garbage(data, bit_length):
    # arbitrary bytes either decode to a well-formed block or raise a decode
    # error with an offset; never anything else
    try:
        block = decompress_block(CompressedBlock(data, min(bit_length, 8 * len(data))))
    except CodecDecodeError as exc:
        assert exc.bit_offset is not None
    else:
        assert len(block) == 128


def test_bitflip_corruption_is_contained(rng):
    # single bit flips in a valid stream: clean decode error or a (possibly
    # different) well-formed block, deterministically
    cb = compress_block(ramp_block(123, 9))
    for _ in range(200):
        pos = int(rng.integers(0, cb.bit_length))
        corrupted = bytearray(cb.data)
        corrupted[pos // 8] ^= 0x80 >> (pos % 8)
        try:
            block = decompress_block(CompressedBlock(bytes(corrupted), cb.bit_length))
        except CodecDecodeError:
            continue
        assert len(block) == 128


# --- classification ---------------------------------------------------------

def test_size_class_examples(rng):
    assert size_class(ZERO_BLOCK) is SizeClass.FITS_8B
    assert size_class(ZERO_BLOCK).sectors == 1
    assert size_class(ramp_block(100, 7)).sectors == 1
    assert size_class(random_block(rng)) is SizeClass.RAW


def test_class_from_byte_size_boundaries():
    expect = {
        2: SizeClass.FITS_8B, 8: SizeClass.FITS_8B,
        9: SizeClass.SECTORS_1, 32: SizeClass.SECTORS_1,
        33: SizeClass.SECTORS_2, 64: SizeClass.SECTORS_2,
        65: SizeClass.SECTORS_3, 96: SizeClass.SECTORS_3,
        97: SizeClass.SECTORS_4, 127: SizeClass.SECTORS_4,
        128: SizeClass.RAW, 137: SizeClass.RAW,
    }
    for nbytes, sc in expect.items():
        assert codec.class_from_byte_size(nbytes) is sc


def test_size_bucket_examples(rng):
    assert size_bucket(ZERO_BLOCK) == 0
    assert size_bucket(ramp_block(100, 7)) == 8
    assert size_bucket(random_block(rng)) == 128


def test_quantization_soundness(rng):
    for _ in range(200):
        words = [int(w) for w in rng.integers(0, 2**32, size=32, dtype=np.uint64)]
        if rng.random() < 0.5:   # mix in compressible shapes
            words[8:] = [words[7]] * 24
        block = codec.block_from_words(words)
        cb = compress_block(block)
        sc = size_class(block)
        assert size_bucket(block) >= cb.stored_bytes or not any(words)
        assert 1 <= sc.sectors <= 4
        assert sc.sectors * 32 >= min(cb.byte_size, 128) or sc is SizeClass.RAW
        assert (sc is SizeClass.RAW) == (cb.byte_size >= 128)


# --- algebraic properties ---------------------------------------------------

def test_determinism():
    block = ramp_block(7, 3)
    assert compress_block(block) == compress_block(block)


def test_shift_invariance_of_planes(rng):
    # adding a constant (without u32 wraparound) changes only the base field
    words = [int(w) for w in rng.integers(0, 2**20, size=32, dtype=np.uint64)]
    shifted = [w + 1000 for w in words]
    a = to_bitstring(compress_block(codec.block_from_words(words)))
    b = to_bitstring(compress_block(codec.block_from_words(shifted)))
    skip_a = 3 if words[0] == 0 else 33
    assert a[skip_a:] == b[33:]


def test_prefix_freeness_of_symbol_table():
    codes = ["001", "01", "00000", "00001", "00010", "00011", "1"]
    for i, a in enumerate(codes):
        for j, b in enumerate(codes):
            if i != j:
                assert not b.startswith(a), (a, b)


def test_block_validation():
    with pytest.raises(ValueError):
        compress_block(b"\x00" * 127)
    with pytest.raises(ValueError):
        compress_block([0] * 31)
    with pytest.raises(ValueError):
        compress_block([2**32] + [0] * 31)
