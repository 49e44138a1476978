"""MSB-first bit packing for the prefix-free codec.

Bits are appended most-significant-first within each byte; the final byte is
zero-padded on the right. A (bytes, bit_length) pair therefore identifies a
bitstream exactly.
"""

from .errors import CodecDecodeError


class BitWriter:
    """Accumulates variable-width codes into a byte string."""

    def __init__(self):
        self._acc = 0
        self._nbits = 0

    def write(self, value: int, nbits: int) -> None:
        if value < 0 or value >> nbits:
            raise ValueError(f"value {value} does not fit in {nbits} bits")
        self._acc = (self._acc << nbits) | value
        self._nbits += nbits

    @property
    def bit_length(self) -> int:
        return self._nbits

    def getvalue(self) -> bytes:
        pad = (8 - self._nbits % 8) % 8
        nbytes = (self._nbits + pad) // 8
        return (self._acc << pad).to_bytes(nbytes, "big")


class BitReader:
    """Consumes variable-width codes from a byte string.

    Reading past bit_length raises CodecDecodeError with the offending offset,
    which is how truncated streams are reported.
    """

    def __init__(self, data: bytes, bit_length: int):
        if bit_length > 8 * len(data):
            raise CodecDecodeError(
                f"bit_length {bit_length} exceeds buffer of {len(data)} bytes",
                bit_offset=8 * len(data),
            )
        self._value = int.from_bytes(data, "big")
        self._total_bits = 8 * len(data)
        self._bit_length = bit_length
        self._pos = 0

    @property
    def pos(self) -> int:
        return self._pos

    @property
    def remaining(self) -> int:
        return self._bit_length - self._pos

    def read(self, nbits: int) -> int:
        if self._pos + nbits > self._bit_length:
            raise CodecDecodeError("truncated bitstream", bit_offset=self._pos)
        shift = self._total_bits - self._pos - nbits
        self._pos += nbits
        return (self._value >> shift) & ((1 << nbits) - 1)
