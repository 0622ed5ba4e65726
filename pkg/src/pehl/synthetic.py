"""Synthetic PE-shaped corpora with a planted labeling rule.

Each file is a minimal well-formed image: MS-DOS header with a valid PE
offset (the stub length varies), signature, COFF header, a 32- or 64-bit
Optional header with randomized fields, and random trailing bytes. The
label is a known predicate over header fields (by default: Subsystem == 3
AND the IMAGE_FILE_DLL characteristic set), optionally flipped with a
noise probability, so ground truth stays available for every downstream
check. Generation is byte-deterministic in the seed.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import features
from .features import SCHEMA, FeatureVector115
from .manifest import DatasetManifest, ManifestEntry, save_manifest

_SUBSYSTEM_COL = SCHEMA.names.index("opt.subsystem")
_DLL_COL = SCHEMA.names.index("coff.characteristics.dll")


@dataclass(frozen=True)
class PlantedRule:
    subsystem_value: int = 3
    require_dll: bool = True

    def evaluate(self, fv: FeatureVector115) -> bool:
        vec = fv.as_array()
        sub_ok = vec[_SUBSYSTEM_COL] == features._encode_categorical(
            "opt.subsystem", self.subsystem_value
        )
        if not self.require_dll:
            return bool(sub_ok)
        return bool(sub_ok and vec[_DLL_COL] == 1.0)

    def planted_field_names(self) -> list[str]:
        names = ["opt.subsystem"]
        if self.require_dll:
            names.append("coff.characteristics.dll")
        return names

    def planted_byte_positions(self) -> list[int]:
        """Region byte positions carrying the rule's fields."""
        out = []
        for name in self.planted_field_names():
            entry = SCHEMA.entries[SCHEMA.names.index(name)]
            out.extend(range(entry.span_32[0], entry.span_32[1]))
        return out

    def other_subsystem(self) -> int:
        return 2 if self.subsystem_value != 2 else 3


def _u16(v):
    return struct.pack("<H", int(v) & 0xFFFF)


def _u32(v):
    return struct.pack("<I", int(v) & 0xFFFFFFFF)


def _u64(v):
    return struct.pack("<Q", int(v) & 0xFFFFFFFFFFFFFFFF)


def _dos_header(rng: np.random.Generator, e_lfanew: int) -> bytes:
    out = bytearray(b"MZ")
    out += _u16(rng.choice([0x40, 0x50, 0x78, 0x90, 0x0100, 0x0110, 0x0144, 0x01F0]))
    out += _u16(rng.choice([4, 5, 6, 8, 10, 12, 16, 24]))  # pages
    out += _u16(0)                         # relocations
    out += _u16(4)                         # header paragraphs
    out += _u16(0) + _u16(0xFFFF)          # min/max alloc
    out += _u16(0) + _u16(0xB8)            # ss/sp
    out += _u16(0)                         # checksum
    out += _u16(0) + _u16(0)               # ip/cs
    out += _u16(0x40) + _u16(0)            # reloc table offset, overlay
    out += b"\x00" * 8                     # reserved words
    out += _u16(0) + _u16(0)               # oem id/info
    out += b"\x00" * 20                    # reserved words 2
    out += _u32(e_lfanew)
    assert len(out) == 64
    return bytes(out)


# Shared pools for high-entropy fields. Real corpora reuse compile
# timestamps and directory layouts heavily; a handful of pool values per
# field keeps files realistic without letting any single field act as a
# per-file fingerprint a sequence model could memorize.
_TIMESTAMP_POOL = np.random.default_rng(0xC0FFEE).integers(0x30000000, 0x66000000, size=64)
_CHECKSUM_POOL = np.random.default_rng(0xFEED).integers(0x10000, 0x400000, size=32)


def _optional_header(rng: np.random.Generator, is64: bool, subsystem: int) -> bytes:
    # Field ranges are chosen so random fields rarely shed the byte pairs
    # that encode the planted subsystem values (small ints followed by 0):
    # sizes are coarse multiples, version minors stay in {0, 1}.
    out = bytearray()
    out += _u16(0x20B if is64 else 0x10B)
    out += bytes([int(rng.integers(4, 15)), int(rng.integers(0, 2))])  # linker version
    out += _u32(rng.integers(1, 128) * 0x200)     # size of code
    out += _u32(rng.integers(0, 128) * 0x200)     # size of initialized data
    out += _u32(0)                                # size of uninitialized data
    out += _u32(rng.integers(1, 128) * 0x20 + 0x1000)  # entry point
    out += _u32(0x1000)                           # base of code
    if is64:
        out += _u64(0x140000000)                  # image base
    else:
        out += _u32(0x2000)                       # base of data
        out += _u32(0x400000)                     # image base
    out += _u32(0x1000) + _u32(0x200)             # section/file alignment
    out += _u16(rng.choice([5, 6, 10])) + _u16(rng.integers(0, 2))  # os version
    out += _u16(rng.integers(4, 20)) + _u16(0)    # image version
    out += _u16(rng.choice([5, 6, 10])) + _u16(0)  # subsystem version
    out += _u32(0)                                # win32 version value
    out += _u32(rng.integers(2, 32) * 0x1000)     # size of image
    out += _u32(0x400)                            # size of headers
    out += _u32(rng.choice(_CHECKSUM_POOL) if rng.random() < 0.5 else 0)  # checksum
    out += _u16(subsystem)
    dllchar = 0
    for mask in (0x0040, 0x0100, 0x8000):         # dynamic base, nx, tsa
        if rng.random() < 0.5:
            dllchar |= mask
    out += _u16(dllchar)
    if is64:
        out += _u64(0x100000) + _u64(0x1000)      # stack reserve/commit
        out += _u64(0x100000) + _u64(0x1000)      # heap reserve/commit
    else:
        out += _u32(0x100000) + _u32(0x1000)
        out += _u32(0x100000) + _u32(0x1000)
    out += _u32(0)                                # loader flags
    out += _u32(16)                               # number of rva and sizes
    for k in range(16):
        present = rng.random() < (0.3 if k in (4, 6, 14) else 0.5)
        if present:
            out += _u32(rng.integers(1, 8) * 0x1000)
            out += _u32(rng.integers(1, 8) * 0x400)
        else:
            out += _u32(0) + _u32(0)
    assert len(out) == (240 if is64 else 224)
    return bytes(out)


_SECTION_NAMES = [b".text\x00\x00\x00", b".data\x00\x00\x00", b".rdata\x00\x00",
                  b".rsrc\x00\x00\x00", b".reloc\x00\x00", b".bss\x00\x00\x00\x00"]
_SECTION_FLAGS = [0x60000020, 0xC0000040, 0x40000040, 0x42000040]


def _section_table(rng: np.random.Generator, count: int) -> bytes:
    out = bytearray()
    va = 0x1000
    raw = 0x400
    for i in range(count):
        vsize = int(rng.integers(1, 16)) * 0x200
        rsize = int(rng.integers(1, 16)) * 0x200
        out += _SECTION_NAMES[i % len(_SECTION_NAMES)]
        out += _u32(vsize) + _u32(va)
        out += _u32(rsize) + _u32(raw)
        out += _u32(0) + _u32(0) + _u16(0) + _u16(0)
        out += _u32(int(rng.choice(_SECTION_FLAGS)))
        va += max(vsize, 0x1000)
        raw += rsize
    return bytes(out)


def make_pe_file(rng: np.random.Generator, rule: PlantedRule, positive: bool) -> bytes:
    """One synthetic PE-shaped binary whose parsed fields satisfy the rule
    iff ``positive``."""
    is64 = bool(rng.random() < 0.5)
    if positive:
        subsystem = rule.subsystem_value
        dll = rule.require_dll or bool(rng.random() < 0.5)
    elif rule.require_dll:
        subsystem, dll = [
            (rule.other_subsystem(), True),
            (rule.subsystem_value, False),
            (rule.other_subsystem(), False),
        ][int(rng.integers(3))]
    else:
        subsystem, dll = rule.other_subsystem(), bool(rng.random() < 0.5)

    e_lfanew = 64 + 4 * int(rng.integers(0, 17))
    n_sections = int(rng.integers(4, 9))
    out = bytearray(_dos_header(rng, e_lfanew))
    out += rng.integers(0, 256, size=e_lfanew - 64, dtype=np.uint8).tobytes()  # DOS stub
    out += b"PE\x00\x00"
    out += _u16(0x8664 if is64 else 0x014C)
    out += _u16(n_sections)
    out += _u32(rng.choice(_TIMESTAMP_POOL))       # timestamp
    out += _u32(0) + _u32(0)                       # symbol table ptr/count
    out += _u16(240 if is64 else 224)
    characteristics = 0x0002
    if not is64:
        characteristics |= 0x0100
    if rng.random() < 0.5:
        characteristics |= 0x0004
    if dll:
        characteristics |= 0x2000
    out += _u16(characteristics)
    out += _optional_header(rng, is64, subsystem)
    out += _section_table(rng, n_sections)
    out += bytes(int(rng.integers(1, 9)) * 0x40)   # header padding to file alignment
    return bytes(out)


def generate_synthetic_corpus(
    out_dir,
    n: int = 2000,
    rule: PlantedRule | None = None,
    noise: float = 0.05,
    seed: int = 0,
    train_frac: float = 0.7,
    calibrate_count: int = 0,
) -> DatasetManifest:
    """Write n files plus a manifest.csv under out_dir; balanced classes,
    stratified train/test split, optional calibrate entries carved from
    the test side."""
    if not 0.0 <= noise < 0.5:
        raise ValueError(f"noise must be in [0, 0.5), got {noise}")
    rule = rule or PlantedRule()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)

    n_pos = n // 2
    labels = []
    for i in range(n):
        positive = i < n_pos
        blob = make_pe_file(rng, rule, positive)
        label = int(positive)
        if noise > 0 and rng.random() < noise:
            label = 1 - label
        name = f"sample_{i:05d}.bin"
        (out_dir / name).write_bytes(blob)
        labels.append((name, label))

    idx_by_label = {0: [], 1: []}
    for i, (_, label) in enumerate(labels):
        idx_by_label[label].append(i)
    splits = [""] * n
    test_pool = []
    for label, idxs in sorted(idx_by_label.items()):
        perm = rng.permutation(len(idxs))
        cut = int(round(train_frac * len(idxs)))
        for j, k in enumerate(perm):
            if j < cut:
                splits[idxs[k]] = "train"
            else:
                test_pool.append(idxs[k])
                splits[idxs[k]] = "test"
    if calibrate_count:
        if calibrate_count > len(test_pool):
            raise ValueError("calibrate_count exceeds the test split size")
        chosen = rng.permutation(len(test_pool))[:calibrate_count]
        for k in chosen:
            splits[test_pool[k]] = "calibrate"

    entries = [
        ManifestEntry(path=name, label=label, split=splits[i])
        for i, (name, label) in enumerate(labels)
    ]
    manifest = DatasetManifest(entries=entries, base_dir=out_dir)
    save_manifest(manifest, out_dir / "manifest.csv")
    return manifest
