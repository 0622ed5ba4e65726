"""Dataset manifests: CSV files with header ``path,label,split``.

Relative paths resolve against the manifest's directory. Labels are 0
(benign) or 1 (malicious); splits are train, test, or calibrate.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path

from .errors import DataError

VALID_SPLITS = ("train", "test", "calibrate")
HEADER = ["path", "label", "split"]


@dataclass
class ManifestEntry:
    path: str
    label: int
    split: str


@dataclass
class DatasetManifest:
    entries: list[ManifestEntry]
    base_dir: Path = field(default_factory=Path)

    def resolve(self, entry: ManifestEntry) -> Path:
        p = Path(entry.path)
        return p if p.is_absolute() else self.base_dir / p

    def split(self, name: str) -> list[ManifestEntry]:
        return [e for e in self.entries if e.split == name]


def load_manifest(path) -> DatasetManifest:
    path = Path(path)
    if not path.exists():
        raise DataError(f"manifest not found: {path}")
    entries = []
    seen = set()
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty manifest") from None
        if header != HEADER:
            raise DataError(f"{path}: expected header {','.join(HEADER)!r}, got {','.join(header)!r}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise DataError(f"{path}:{lineno}: expected 3 fields, got {len(row)}")
            p, label_raw, split = row
            if label_raw not in ("0", "1"):
                raise DataError(f"{path}:{lineno}: label must be 0 or 1, got {label_raw!r}")
            if split not in VALID_SPLITS:
                raise DataError(f"{path}:{lineno}: unknown split {split!r}")
            if p in seen:
                raise DataError(f"{path}:{lineno}: duplicate path {p!r}")
            seen.add(p)
            entries.append(ManifestEntry(path=p, label=int(label_raw), split=split))
    return DatasetManifest(entries=entries, base_dir=path.parent)


def serialize_manifest(manifest: DatasetManifest) -> str:
    """Normalized CSV text: header plus one minimally quoted row per entry."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(HEADER)
    for e in manifest.entries:
        writer.writerow([e.path, e.label, e.split])
    return buf.getvalue()


def save_manifest(manifest: DatasetManifest, path) -> None:
    Path(path).write_text(serialize_manifest(manifest))
