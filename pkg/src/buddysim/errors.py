"""Exception types shared across the package."""


class BuddySimError(Exception):
    """Base class for all errors raised by this package."""


class CodecDecodeError(BuddySimError):
    """Malformed compressed bitstream.

    bit_offset is the position (in bits from stream start) where decoding
    failed; block_index is set when the failure came from a batch decode.
    """

    def __init__(self, message, bit_offset=None, block_index=None):
        detail = message
        if bit_offset is not None:
            detail += f" (bit offset {bit_offset})"
        if block_index is not None:
            detail += f" (block {block_index})"
        super().__init__(detail)
        self.bit_offset = bit_offset
        self.block_index = block_index


class SnapshotFormatError(BuddySimError):
    """Snapshot file is structurally invalid (bad magic, version, truncation)."""

    def __init__(self, message, byte_offset=None):
        if byte_offset is not None:
            message += f" (byte offset {byte_offset})"
        super().__init__(message)
        self.byte_offset = byte_offset


class ValidationError(BuddySimError):
    """Input violates a documented invariant (alignment, overlap, bad flag value)."""


class AddressFaultError(BuddySimError):
    """Virtual address does not fall inside any known allocation."""

    def __init__(self, va, event_index=None):
        message = f"address fault: va 0x{va:x} is outside every allocation"
        if event_index is not None:
            message += f" (trace event {event_index})"
        super().__init__(message)
        self.va = va
        self.event_index = event_index


class ConfigError(BuddySimError):
    """Inconsistent configuration (missing target, empty series, zero baseline)."""
