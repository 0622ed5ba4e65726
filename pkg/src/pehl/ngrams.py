"""Byte n-gram vocabularies and binary presence vectors over header regions.

A gram is any contiguous byte window of length n; a document contributes
each distinct gram at most once. Grams kept are those whose document
frequency is at least ``min_doc_frac`` of the corpus. When several n are
requested the per-n vocabularies are concatenated, n ascending, grams
lexicographic within each n, to keep builds deterministic.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import DataError
from .header import HeaderRegion


@dataclass
class NGramVocabulary:
    n_values: tuple[int, ...]
    grams: dict[bytes, int]          # gram -> dense column index
    doc_freq: np.ndarray             # per-column document counts
    corpus_size: int
    min_doc_frac: float

    @property
    def dim(self) -> int:
        return len(self.grams)

    def gram_list(self) -> list[bytes]:
        out: list[bytes] = [b""] * self.dim
        for g, j in self.grams.items():
            out[j] = g
        return out


@dataclass
class SparseBinaryVector:
    active: np.ndarray  # sorted int column indices
    dim: int

    def __post_init__(self):
        self.active = np.asarray(self.active, dtype=np.int64)


def _region_bytes(region) -> bytes:
    return region.data if isinstance(region, HeaderRegion) else bytes(region)


def _distinct_grams(data: bytes, n: int) -> set[bytes]:
    return {data[i:i + n] for i in range(len(data) - n + 1)}


def build_vocabulary(
    regions: Sequence,
    n_values: Iterable[int] = (2,),
    min_doc_frac: float = 0.01,
) -> NGramVocabulary:
    """Scan the corpus once per n and keep grams meeting the document-
    frequency threshold (inclusive)."""
    ns = tuple(sorted(set(int(n) for n in n_values)))
    if not ns or ns[0] < 2 or ns[-1] > 6:
        raise ValueError(f"n values must lie in [2, 6], got {ns}")
    if not 0.0 <= min_doc_frac <= 1.0:
        raise ValueError(f"min_doc_frac must be in [0, 1], got {min_doc_frac}")
    docs = [_region_bytes(r) for r in regions]
    if not docs:
        raise DataError("cannot build an n-gram vocabulary from an empty corpus")

    grams: dict[bytes, int] = {}
    freqs: list[int] = []
    min_count = min_doc_frac * len(docs)
    for n in ns:
        counts: Counter[bytes] = Counter()
        for data in docs:
            counts.update(_distinct_grams(data, n))
        for g in sorted(k for k, c in counts.items() if c >= min_count):
            grams[g] = len(grams)
            freqs.append(counts[g])

    return NGramVocabulary(
        n_values=ns,
        grams=grams,
        doc_freq=np.array(freqs, dtype=np.int64),
        corpus_size=len(docs),
        min_doc_frac=min_doc_frac,
    )


def vectorize(region, vocab: NGramVocabulary) -> SparseBinaryVector:
    """Presence vector: column j active iff vocabulary gram j occurs in the
    region at least once. Grams outside the vocabulary are ignored."""
    data = _region_bytes(region)
    active = set()
    for n in vocab.n_values:
        for i in range(len(data) - n + 1):
            j = vocab.grams.get(data[i:i + n])
            if j is not None:
                active.add(j)
    return SparseBinaryVector(active=np.array(sorted(active), dtype=np.int64), dim=vocab.dim)


def vectorize_all(regions, vocab: NGramVocabulary) -> list[SparseBinaryVector]:
    return [vectorize(r, vocab) for r in regions]
