import json
from pathlib import Path

import numpy as np
import pytest

from pehl.header import REGION_LEN, HeaderRegion, RawBinary, extract_header_region

FIXTURES = Path(__file__).parent / "fixtures"


def _file_with_offset(length: int, offset: int, rng=None) -> bytes:
    rng = rng or np.random.default_rng(0)
    data = bytearray(rng.integers(0, 256, size=length, dtype=np.uint8).tobytes())
    data[0x3C:0x40] = offset.to_bytes(4, "little")
    return bytes(data)


def _oracle_region(raw: bytes) -> tuple[bytes, int, int, bool]:
    """Spec rule, written independently: head 64 (zero-padded), tail 264
    from the little-endian u32 at 0x3C (fallback 0 when unreadable or past
    EOF), zero-padded past end of file."""
    head = (raw[:64] + b"\x00" * 64)[:64]
    degenerate = False
    if len(raw) < 0x40:
        offset, start, degenerate = 0, 0, True
    else:
        offset = int.from_bytes(raw[0x3C:0x40], "little")
        if offset > len(raw):
            start, degenerate = 0, True
        else:
            start = offset
    tail = raw[start:start + 264]
    padded = 264 - len(tail)
    return head + tail + b"\x00" * padded, offset, padded, degenerate


def test_offset_128_slices_as_specified():
    raw = _file_with_offset(1000, 128)
    region = extract_header_region(RawBinary(raw, "t"))
    assert region.data == raw[:64] + raw[128:392]
    assert region.padded_tail == 0
    assert not region.degenerate


def test_offset_at_eof_pads_264_zeros():
    raw = _file_with_offset(64, 64)
    region = extract_header_region(raw)
    assert region.data == raw + b"\x00" * 264
    assert region.padded_tail == 264
    assert not region.degenerate


def test_short_file_is_degenerate_with_tail_from_offset_zero():
    raw = bytes(range(10))
    region = extract_header_region(raw)
    assert region.degenerate
    assert region.data == raw + b"\x00" * 54 + raw + b"\x00" * 254
    assert region.padded_tail == 254


def test_offset_past_eof_is_degenerate():
    raw = _file_with_offset(500, 501)
    region = extract_header_region(raw)
    assert region.degenerate
    assert region.data[64:] == (raw + b"\x00" * 500)[:264]


def test_empty_file():
    region = extract_header_region(b"")
    assert region.data == b"\x00" * REGION_LEN
    assert region.degenerate
    assert region.padded_tail == 264


def test_fuzz_length_and_idempotence_and_oracle():
    """10^5 random files of length 0..4096: output always 328 bytes,
    extraction is bit-deterministic, and matches the independent rule."""
    rng = np.random.default_rng(1234)
    lengths = rng.integers(0, 4097, size=100_000)
    for k, n in enumerate(lengths):
        raw = rng.integers(0, 256, size=n, dtype=np.uint8).tobytes()
        region = extract_header_region(raw)
        assert len(region.data) == REGION_LEN
        assert region.data[:64] == (raw[:64] + b"\x00" * 64)[:64]
        assert 0 <= region.padded_tail <= 264
        if k % 199 == 0:  # spot-check the heavier properties
            again = extract_header_region(raw)
            assert again == region
            expected = _oracle_region(raw)
            assert (region.data, region.pe_offset, region.padded_tail, region.degenerate) == expected


def test_well_formed_offsets_never_pad():
    rng = np.random.default_rng(5)
    for _ in range(200):
        offset = int(rng.integers(0x40, 0x200))
        length = offset + 264 + int(rng.integers(0, 100))
        raw = _file_with_offset(length, offset, rng)
        region = extract_header_region(raw)
        assert region.padded_tail == 0
        assert not region.degenerate
        assert region.pe_offset == offset


def test_region_rejects_wrong_length():
    with pytest.raises(ValueError):
        HeaderRegion(data=b"\x00" * 100, pe_offset=0, padded_tail=0, degenerate=False)


def test_golden_fixture_suite():
    """Crafted files (truncated, zero-length, offset-past-EOF, sub-64-byte,
    overlapping offsets) against frozen hex dumps."""
    doc = json.loads((FIXTURES / "golden_headers.json").read_text())
    assert len(doc) >= 12
    for case in doc:
        raw = bytes.fromhex(case["input_hex"])
        region = extract_header_region(RawBinary(raw, case["name"]))
        assert region.data.hex() == case["region_hex"], case["name"]
        assert region.pe_offset == case["pe_offset"], case["name"]
        assert region.padded_tail == case["padded_tail"], case["name"]
        assert region.degenerate == case["degenerate"], case["name"]
