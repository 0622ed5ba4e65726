"""Extraction of the fixed 328-byte header region from executable files.

The region is the 64-byte MS-DOS header followed by the 264 bytes at the
PE header offset (read as a little-endian u32 from file offset 0x3C),
which is enough to cover the COFF header and either flavor of Optional
header. Missing bytes are zero-padded; nothing is ever rejected, since
hostile files routinely violate the format.
"""

from __future__ import annotations

from dataclasses import dataclass

DOS_HEADER_LEN = 64
TAIL_LEN = 264
REGION_LEN = DOS_HEADER_LEN + TAIL_LEN  # 328
PE_OFFSET_FIELD = 0x3C


@dataclass(frozen=True)
class RawBinary:
    """An arbitrary byte stream plus an opaque identifier for reporting."""

    data: bytes
    source_id: str = ""


@dataclass(frozen=True)
class HeaderRegion:
    """The 328-byte header region with provenance flags.

    ``pe_offset`` is the u32 read from the file (0 when unreadable),
    ``padded_tail`` counts zero bytes appended to the 264-byte tail, and
    ``degenerate`` is set when the offset field could not be read or
    pointed past end of file (the tail then falls back to offset 0).
    """

    data: bytes
    pe_offset: int
    padded_tail: int
    degenerate: bool

    def __post_init__(self):
        if len(self.data) != REGION_LEN:
            raise ValueError(f"header region must be {REGION_LEN} bytes, got {len(self.data)}")


def extract_header_region(file: RawBinary | bytes) -> HeaderRegion:
    """Extract the 328-byte header region from any byte stream.

    Total function: malformed input is recorded in the flags, never raised.
    """
    raw = file.data if isinstance(file, RawBinary) else bytes(file)
    n = len(raw)

    head = raw[:DOS_HEADER_LEN]
    if len(head) < DOS_HEADER_LEN:
        head = head + b"\x00" * (DOS_HEADER_LEN - len(head))

    degenerate = False
    if n < PE_OFFSET_FIELD + 4:
        pe_offset = 0
        tail_start = 0
        degenerate = True
    else:
        pe_offset = int.from_bytes(raw[PE_OFFSET_FIELD:PE_OFFSET_FIELD + 4], "little")
        if pe_offset > n:
            tail_start = 0
            degenerate = True
        else:
            tail_start = pe_offset

    tail = raw[tail_start:tail_start + TAIL_LEN]
    padded_tail = TAIL_LEN - len(tail)
    if padded_tail:
        tail = tail + b"\x00" * padded_tail

    return HeaderRegion(
        data=head + tail,
        pe_offset=pe_offset,
        padded_tail=padded_tail,
        degenerate=degenerate,
    )
