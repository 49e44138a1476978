"""Lossless bit-plane codec for 128-byte memory entries.

A memory entry is 32 little-endian unsigned 32-bit words. Compression runs the
classic delta / bit-plane / adjacent-XOR transform and then emits one
prefix-free code per transformed plane:

    base word      '000'                        base == 0
                   '1' + 32 raw bits            otherwise
    plane symbols  '001' + 5 bits (run-2)       run of 2..33 all-zero XOR planes
                   '01'                         single all-zero XOR plane
                   '00000'                      all-ones XOR plane
                   '00001'                      XOR plane != 0, original plane == 0
                   '00010' + 5-bit position     exactly two consecutive ones
                   '00011' + 5-bit position     exactly one one
                   '1' + 31 raw bits            anything else

Deltas between consecutive words are kept as 33-bit two's complement, so there
are 33 planes of 31 bits each; plane 0 is the sign plane and plane 32 the LSB
plane. Within a plane, delta i occupies bit (30 - i), i.e. positions count
from the first delta. Every block round-trips exactly; worst case output is
1089 bits. Size classes quantize the encoded size to 32-byte sectors for the
memory layout; size buckets quantize it to the eight-level scale used by
snapshot statistics.
"""

from dataclasses import dataclass
from enum import IntEnum
from typing import Iterable, Sequence, Union

from .bitstream import BitReader, BitWriter
from .errors import CodecDecodeError

BLOCK_BYTES = 128
SECTOR_BYTES = 32
WORDS_PER_BLOCK = 32
NUM_PLANES = 33               # 33-bit deltas -> sign plane + 32 value planes
PLANE_WIDTH = 31              # one bit per delta
MAX_STREAM_BITS = 33 + NUM_PLANES * 32
MAX_STREAM_BYTES = (MAX_STREAM_BITS + 7) // 8

SIZE_BUCKETS = (0, 8, 16, 32, 64, 80, 96, 128)

_DELTA_MASK = (1 << 33) - 1
_PLANE_ONES = (1 << PLANE_WIDTH) - 1

BlockLike = Union[bytes, bytearray, memoryview, Sequence[int]]


class SizeClass(IntEnum):
    """Quantized compressed size of one entry; what the 4-bit metadata encodes."""

    FITS_8B = 0
    SECTORS_1 = 1
    SECTORS_2 = 2
    SECTORS_3 = 3
    SECTORS_4 = 4
    RAW = 5

    @property
    def sectors(self) -> int:
        """Device-granularity sectors this entry occupies (raw entries fill all 4)."""
        if self is SizeClass.FITS_8B:
            return 1
        if self is SizeClass.RAW:
            return 4
        return int(self)

    @property
    def label(self) -> str:
        return _CLASS_LABELS[self]


_CLASS_LABELS = {
    SizeClass.FITS_8B: "Fits8B",
    SizeClass.SECTORS_1: "Sectors1",
    SizeClass.SECTORS_2: "Sectors2",
    SizeClass.SECTORS_3: "Sectors3",
    SizeClass.SECTORS_4: "Sectors4",
    SizeClass.RAW: "Raw",
}
SIZE_CLASS_BY_LABEL = {label: sc for sc, label in _CLASS_LABELS.items()}


@dataclass(frozen=True)
class CompressedBlock:
    """Encoded bitstream for one 128-byte entry."""

    data: bytes
    bit_length: int

    @property
    def byte_size(self) -> int:
        return (self.bit_length + 7) // 8

    @property
    def stored_bytes(self) -> int:
        """Storage cost: raw fallback caps any entry at 128 bytes."""
        return min(self.byte_size, BLOCK_BYTES)


def words_from_block(block: BlockLike) -> list:
    """Interpret a 128-byte entry as 32 little-endian u32 words."""
    if isinstance(block, (bytes, bytearray, memoryview)):
        buf = bytes(block)
        if len(buf) != BLOCK_BYTES:
            raise ValueError(f"block must be {BLOCK_BYTES} bytes, got {len(buf)}")
        return [int.from_bytes(buf[i : i + 4], "little") for i in range(0, BLOCK_BYTES, 4)]
    words = list(block)
    if len(words) != WORDS_PER_BLOCK:
        raise ValueError(f"block must have {WORDS_PER_BLOCK} words, got {len(words)}")
    for w in words:
        if not 0 <= w < (1 << 32):
            raise ValueError(f"word {w:#x} out of u32 range")
    return words


def block_from_words(words: Iterable[int]) -> bytes:
    out = b"".join(int(w).to_bytes(4, "little") for w in words)
    if len(out) != BLOCK_BYTES:
        raise ValueError("expected 32 words")
    return out


def _dbx_planes(words: Sequence[int]):
    """Yield (xor_plane, original_plane) pairs, sign plane first."""
    deltas = [(words[i + 1] - words[i]) & _DELTA_MASK for i in range(WORDS_PER_BLOCK - 1)]
    prev = 0
    for k in range(NUM_PLANES):
        shift = 32 - k
        plane = 0
        for i, d in enumerate(deltas):
            plane |= ((d >> shift) & 1) << (PLANE_WIDTH - 1 - i)
        yield plane ^ prev, plane
        prev = plane


def _flush_zero_run(writer: BitWriter, run: int) -> None:
    if run == 1:
        writer.write(0b01, 2)
    elif run >= 2:
        writer.write(0b001, 3)
        writer.write(run - 2, 5)


def compress_block(block: BlockLike) -> CompressedBlock:
    """Encode one entry. Total function: any 128-byte input is accepted."""
    words = words_from_block(block)
    writer = BitWriter()

    base = words[0]
    if base == 0:
        writer.write(0b000, 3)
    else:
        writer.write(1, 1)
        writer.write(base, 32)

    run = 0
    for xor_plane, plane in _dbx_planes(words):
        if xor_plane == 0:
            run += 1
            continue
        _flush_zero_run(writer, run)
        run = 0
        if xor_plane == _PLANE_ONES:
            writer.write(0b00000, 5)
        elif plane == 0:
            writer.write(0b00001, 5)
        elif xor_plane.bit_count() == 2 and (xor_plane & (xor_plane >> 1)):
            writer.write(0b00010, 5)
            writer.write(PLANE_WIDTH - xor_plane.bit_length(), 5)
        elif xor_plane.bit_count() == 1:
            writer.write(0b00011, 5)
            writer.write(PLANE_WIDTH - xor_plane.bit_length(), 5)
        else:
            writer.write(1, 1)
            writer.write(xor_plane, PLANE_WIDTH)
    _flush_zero_run(writer, run)

    return CompressedBlock(writer.getvalue(), writer.bit_length)


def decompress_block(cb: CompressedBlock) -> bytes:
    """Invert compress_block. Raises CodecDecodeError on malformed streams."""
    reader = BitReader(cb.data, cb.bit_length)

    if reader.read(1):
        base = reader.read(32)
    else:
        if reader.read(2) != 0:
            raise CodecDecodeError("invalid base-word code", bit_offset=reader.pos)
        base = 0

    planes = []
    prev = 0
    while len(planes) < NUM_PLANES:
        if reader.read(1):                       # '1' + raw plane
            prev ^= reader.read(PLANE_WIDTH)
            planes.append(prev)
            continue
        if reader.read(1):                       # '01' single zero XOR plane
            planes.append(prev)
            continue
        if reader.read(1):                       # '001' + run length
            run = reader.read(5) + 2
            if len(planes) + run > NUM_PLANES:
                raise CodecDecodeError(
                    f"zero-run overruns plane count ({len(planes)} + {run})",
                    bit_offset=reader.pos,
                )
            planes.extend([prev] * run)
            continue
        sub = reader.read(2)                     # '000' + 2 discriminator bits
        if sub == 0b00:
            prev ^= _PLANE_ONES
        elif sub == 0b01:
            prev = 0
        else:
            pos = reader.read(5)
            width = 2 if sub == 0b10 else 1
            if pos + width > PLANE_WIDTH:
                raise CodecDecodeError(
                    f"one-bits position {pos} out of range", bit_offset=reader.pos
                )
            mask = ((1 << width) - 1) << (PLANE_WIDTH - width - pos)
            prev ^= mask
        planes.append(prev)

    if reader.remaining:
        raise CodecDecodeError(
            f"{reader.remaining} trailing bits after final plane", bit_offset=reader.pos
        )

    words = [base]
    for i in range(WORDS_PER_BLOCK - 1):
        delta = 0
        for k, plane in enumerate(planes):
            delta |= ((plane >> (PLANE_WIDTH - 1 - i)) & 1) << (32 - k)
        if delta & (1 << 32):
            delta -= 1 << 33
        words.append((words[-1] + delta) & 0xFFFFFFFF)
    return block_from_words(words)


def class_from_byte_size(nbytes: int) -> SizeClass:
    """Map an encoded byte count onto the sector-quantized size class."""
    if nbytes >= BLOCK_BYTES:
        return SizeClass.RAW
    if nbytes <= 8:
        return SizeClass.FITS_8B
    return SizeClass(min(4, (nbytes + SECTOR_BYTES - 1) // SECTOR_BYTES))


def bucket_from_byte_size(nbytes: int, all_zero: bool) -> int:
    """Smallest of the eight bucket sizes that holds the stored entry.

    Only a literally all-zero entry reports the 0-byte bucket; every other
    entry costs at least its (raw-capped) encoded size.
    """
    if all_zero:
        return 0
    stored = min(nbytes, BLOCK_BYTES)
    for bucket in SIZE_BUCKETS[1:]:
        if bucket >= stored:
            return bucket
    return BLOCK_BYTES


def size_class(block: BlockLike) -> SizeClass:
    return class_from_byte_size(compress_block(block).byte_size)


def size_bucket(block: BlockLike) -> int:
    words = words_from_block(block)
    cb = compress_block(words)
    return bucket_from_byte_size(cb.byte_size, all_zero=not any(words))
