"""Parsing the header region into the 115-feature field representation.

The schema covers every field of the MS-DOS, COFF and Optional headers
that falls inside the 328-byte region: 112 numeric entries (plain fields
plus individual flag bits) and 3 categorical entries (Machine, Magic,
Subsystem). Fields whose location differs between PE32 and PE32+ carry
two byte spans; the Optional-header magic at region offset [88, 90)
selects which one is read.

Offsets are region offsets: the Optional header starts at 88
(64 DOS + 4 signature + 20 COFF).
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

import numpy as np

from .header import REGION_LEN, HeaderRegion

NUMERIC = "numeric"
FLAG = "flag-bit"
CATEGORICAL = "categorical"

MAGIC_SPAN = (88, 90)
PE32_MAGIC = 0x10B
PE32PLUS_MAGIC = 0x20B

# Categorical vocabularies. Code 0 is reserved for out-of-vocabulary raw
# values; known raw values map to 1..K in list order. The format's own
# "unknown" sentinels (machine 0x0000, subsystem 0) deliberately stay out
# of the lists so they land on the unknown code.
MACHINE_VALUES = [
    0x014C, 0x8664, 0x01C0, 0x01C4, 0xAA64, 0x0200, 0x01F0, 0x01F1,
    0x0166, 0x0169, 0x0266, 0x0366, 0x0466, 0x0EBC, 0x5032, 0x5064, 0x01A2,
    0x01A3, 0x01A6, 0x01A8, 0x01C2, 0x0184,
]
MAGIC_VALUES = [PE32_MAGIC, PE32PLUS_MAGIC, 0x107]
SUBSYSTEM_VALUES = [1, 2, 3, 5, 7, 8, 9, 10, 11, 12, 13, 14, 16, 17]

UNKNOWN_CODE = 0

COFF_CHARACTERISTICS_BITS = [
    ("relocs_stripped", 0x0001),
    ("executable_image", 0x0002),
    ("line_nums_stripped", 0x0004),
    ("local_syms_stripped", 0x0008),
    ("aggressive_ws_trim", 0x0010),
    ("large_address_aware", 0x0020),
    ("reserved_0040", 0x0040),
    ("bytes_reversed_lo", 0x0080),
    ("machine_32bit", 0x0100),
    ("debug_stripped", 0x0200),
    ("removable_run_from_swap", 0x0400),
    ("net_run_from_swap", 0x0800),
    ("system_file", 0x1000),
    ("dll", 0x2000),
    ("up_system_only", 0x4000),
    ("bytes_reversed_hi", 0x8000),
]

# The 11 defined DllCharacteristics bits (0x0001..0x0010 are reserved).
DLL_CHARACTERISTICS_BITS = [
    ("high_entropy_va", 0x0020),
    ("dynamic_base", 0x0040),
    ("force_integrity", 0x0080),
    ("nx_compat", 0x0100),
    ("no_isolation", 0x0200),
    ("no_seh", 0x0400),
    ("no_bind", 0x0800),
    ("appcontainer", 0x1000),
    ("wdm_driver", 0x2000),
    ("guard_cf", 0x4000),
    ("terminal_server_aware", 0x8000),
]

DATA_DIRECTORY_NAMES = [
    "export_table", "import_table", "resource_table", "exception_table",
    "certificate_table", "base_relocation_table", "debug_directory",
    "architecture", "global_ptr", "tls_table", "load_config_table",
    "bound_import", "import_address_table", "delay_import_descriptor",
    "clr_runtime_header", "reserved_directory",
]


@dataclass(frozen=True)
class SchemaEntry:
    name: str
    kind: str  # numeric | flag-bit | categorical
    span_32: tuple[int, int] | None
    span_64: tuple[int, int] | None
    bit_mask: int | None = None


@dataclass(frozen=True)
class FeatureSchema:
    entries: tuple[SchemaEntry, ...]

    @property
    def names(self) -> list[str]:
        return [e.name for e in self.entries]

    @property
    def categorical_indices(self) -> list[int]:
        return [i for i, e in enumerate(self.entries) if e.kind == CATEGORICAL]

    def covering_fields(self, position: int, layout: str) -> list[str]:
        """Names of fields whose span for the given layout covers a byte position."""
        key = "span_32" if layout == "32" else "span_64"
        out = []
        for e in self.entries:
            span = getattr(e, key)
            if span is not None and span[0] <= position < span[1]:
                out.append(e.name)
        return out

    def to_json(self) -> str:
        doc = {
            "entries": [
                {
                    "name": e.name,
                    "kind": e.kind,
                    "span_32": list(e.span_32) if e.span_32 else None,
                    "span_64": list(e.span_64) if e.span_64 else None,
                    "bit_mask": e.bit_mask,
                }
                for e in self.entries
            ]
        }
        return json.dumps(doc, indent=2, sort_keys=True)

    def digest(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()


def _build_schema() -> FeatureSchema:
    entries: list[SchemaEntry] = []
    SAME = "same"

    def num(name, span32, span64=SAME):
        entries.append(SchemaEntry(name, NUMERIC, span32, span32 if span64 is SAME else span64))

    def cat(name, span):
        entries.append(SchemaEntry(name, CATEGORICAL, span, span))

    def flags(prefix, span, bits):
        for bit_name, mask in bits:
            entries.append(SchemaEntry(f"{prefix}.{bit_name}", FLAG, span, span, mask))

    # MS-DOS header: the named fields plus the first four reserved words
    # ([40, 60) is dropped to land on the 112-numeric total).
    dos_fields = [
        ("dos.magic", 0, 2), ("dos.bytes_last_page", 2, 4), ("dos.pages", 4, 6),
        ("dos.relocations", 6, 8), ("dos.header_paragraphs", 8, 10),
        ("dos.min_alloc", 10, 12), ("dos.max_alloc", 12, 14),
        ("dos.initial_ss", 14, 16), ("dos.initial_sp", 16, 18),
        ("dos.checksum", 18, 20), ("dos.initial_ip", 20, 22),
        ("dos.initial_cs", 22, 24), ("dos.reloc_table_offset", 24, 26),
        ("dos.overlay_number", 26, 28), ("dos.reserved0", 28, 30),
        ("dos.reserved1", 30, 32), ("dos.reserved2", 32, 34),
        ("dos.reserved3", 34, 36), ("dos.oem_id", 36, 38),
        ("dos.oem_info", 38, 40), ("dos.pe_offset", 60, 64),
    ]
    for name, lo, hi in dos_fields:
        num(name, (lo, hi))

    # COFF header at [68, 88) after the 4-byte signature.
    cat("coff.machine", (68, 70))
    num("coff.number_of_sections", (70, 72))
    num("coff.time_date_stamp", (72, 76))
    num("coff.symbol_table_pointer", (76, 80))
    num("coff.number_of_symbols", (80, 84))
    num("coff.optional_header_size", (84, 86))
    flags("coff.characteristics", (86, 88), COFF_CHARACTERISTICS_BITS)

    # Optional header, standard fields.
    cat("opt.magic", MAGIC_SPAN)
    num("opt.linker_version_major", (90, 91))
    num("opt.linker_version_minor", (91, 92))
    num("opt.size_of_code", (92, 96))
    num("opt.size_of_initialized_data", (96, 100))
    num("opt.size_of_uninitialized_data", (100, 104))
    num("opt.entry_point", (104, 108))
    num("opt.base_of_code", (108, 112))
    num("opt.base_of_data", (112, 116), None)  # absent in PE32+, reads 0

    # Optional header, Windows-specific fields.
    num("opt.image_base", (116, 120), (112, 120))
    num("opt.section_alignment", (120, 124))
    num("opt.file_alignment", (124, 128))
    num("opt.os_version_major", (128, 130))
    num("opt.os_version_minor", (130, 132))
    num("opt.image_version_major", (132, 134))
    num("opt.image_version_minor", (134, 136))
    num("opt.subsystem_version_major", (136, 138))
    num("opt.subsystem_version_minor", (138, 140))
    num("opt.win32_version_value", (140, 144))
    num("opt.size_of_image", (144, 148))
    num("opt.size_of_headers", (148, 152))
    num("opt.checksum", (152, 156))
    cat("opt.subsystem", (156, 158))
    flags("opt.dll_characteristics", (158, 160), DLL_CHARACTERISTICS_BITS)
    num("opt.stack_reserve", (160, 164), (160, 168))
    num("opt.stack_commit", (164, 168), (168, 176))
    num("opt.heap_reserve", (168, 172), (176, 184))
    num("opt.heap_commit", (172, 176), (184, 192))
    num("opt.loader_flags", (176, 180), (192, 196))
    num("opt.number_of_rva_and_sizes", (180, 184), (196, 200))

    # 16 data directories: (virtual address, size) pairs.
    for k, name in enumerate(DATA_DIRECTORY_NAMES):
        lo32, lo64 = 184 + 8 * k, 200 + 8 * k
        num(f"dir.{name}.offset", (lo32, lo32 + 4), (lo64, lo64 + 4))
        num(f"dir.{name}.size", (lo32 + 4, lo32 + 8), (lo64 + 4, lo64 + 8))

    schema = FeatureSchema(tuple(entries))
    n_cat = len(schema.categorical_indices)
    assert len(entries) == 115 and n_cat == 3, (len(entries), n_cat)
    for e in entries:
        for span in (e.span_32, e.span_64):
            assert span is None or (0 <= span[0] < span[1] <= REGION_LEN), e
    return schema


SCHEMA = _build_schema()


@dataclass(frozen=True)
class FeatureVector115:
    """Parsed header fields: 112 numeric values and 3 categorical codes.

    ``numeric`` and ``categorical`` follow schema order within their kind;
    ``as_array`` interleaves them back into full schema column order.
    """

    numeric: np.ndarray
    categorical: np.ndarray
    is_64bit: bool

    def as_array(self) -> np.ndarray:
        out = np.empty(len(SCHEMA.entries))
        ni = ci = 0
        for i, e in enumerate(SCHEMA.entries):
            if e.kind == CATEGORICAL:
                out[i] = float(self.categorical[ci])
                ci += 1
            else:
                out[i] = self.numeric[ni]
                ni += 1
        return out


def _encode_categorical(name: str, raw: int) -> int:
    table = {
        "coff.machine": MACHINE_VALUES,
        "opt.magic": MAGIC_VALUES,
        "opt.subsystem": SUBSYSTEM_VALUES,
    }[name]
    try:
        return table.index(raw) + 1
    except ValueError:
        return UNKNOWN_CODE


def parse_features(region: HeaderRegion) -> FeatureVector115:
    """Read every schema entry from the region. Total function: anything
    unparseable comes back as 0 / unknown."""
    data = region.data
    magic = int.from_bytes(data[MAGIC_SPAN[0]:MAGIC_SPAN[1]], "little")
    is_64 = magic == PE32PLUS_MAGIC

    numeric = []
    categorical = []
    for e in SCHEMA.entries:
        span = e.span_64 if is_64 else e.span_32
        raw = 0 if span is None else int.from_bytes(data[span[0]:span[1]], "little")
        if e.kind == CATEGORICAL:
            categorical.append(_encode_categorical(e.name, raw))
        elif e.kind == FLAG:
            numeric.append(1.0 if raw & e.bit_mask else 0.0)
        else:
            numeric.append(float(raw))

    return FeatureVector115(
        numeric=np.array(numeric),
        categorical=np.array(categorical, dtype=np.int64),
        is_64bit=is_64,
    )


def parse_feature_matrix(regions) -> np.ndarray:
    """Stack parse_features over regions into an (n, 115) array in schema
    column order (categorical codes stored as floats)."""
    return np.array([parse_features(r).as_array() for r in regions])
