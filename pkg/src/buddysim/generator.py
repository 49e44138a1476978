"""Synthetic snapshot series with ground-truth manifests.

Entries are drawn from named kinds with known compressibility: "zero" is the
8-byte class, "ramp" compresses to a handful of bytes (8-byte class for
simple strides, one sector for bit-busy ones), "random" is incompressible,
and the "rand14" / "rand20" / "rand26" kinds random-walk with bounded deltas
to hit the middle sector classes. The manifest records the codec's own
classification of every generated entry. Drift flips a chosen count of
entries across the compressible/incompressible divide between consecutive
snapshots, so class changes are exact by construction. Everything is a pure
function of the seed.
"""

from dataclasses import dataclass
from typing import Dict, List, Sequence, Tuple

import numpy as np

from . import batch
from .codec import BLOCK_BYTES, SizeClass
from .errors import ConfigError
from .memory import PAGE_BYTES, AllocationRecord, Snapshot

DEFAULT_BASE_VA = 0x10000000

#: kinds whose entries compress into the 8-byte class
_FITS_KINDS = ("zero", "ramp")
KINDS = ("zero", "ramp", "random", "rand14", "rand20", "rand26")


@dataclass(frozen=True)
class ManifestRow:
    snapshot: int
    alloc_id: int
    entry_index: int
    kind: str
    size_class: SizeClass


@dataclass
class GeneratedSeries:
    snapshots: List[Snapshot]
    manifest: List[ManifestRow]

    def rows_for(self, snapshot: int, alloc_id: int) -> List[ManifestRow]:
        return [
            r for r in self.manifest
            if r.snapshot == snapshot and r.alloc_id == alloc_id
        ]


def _entry_bytes(kind: str, rng) -> bytes:
    if kind == "zero":
        return bytes(BLOCK_BYTES)
    if kind == "ramp":
        base = int(rng.integers(1, 2**31))
        stride = int(rng.integers(1, 256))
        words = (base + stride * np.arange(32, dtype=np.uint64)) % 2**32
        return words.astype("<u4").tobytes()
    if kind == "random":
        return rng.integers(0, 256, size=BLOCK_BYTES, dtype=np.uint8).tobytes()
    if kind.startswith("rand"):
        bits = int(kind[4:])
        base = rng.integers(0, 2**32, dtype=np.uint64)
        deltas = rng.integers(0, 2**bits, size=31, dtype=np.uint64)
        words = (base + np.concatenate(([0], np.cumsum(deltas)))) % 2**32
        return words.astype("<u4").tobytes()
    raise ConfigError(f"unknown entry kind {kind!r}")


def _exact_counts(total: int, fractions: Sequence[float]) -> List[int]:
    """Largest-remainder rounding so counts sum to total exactly."""
    raw = [total * f for f in fractions]
    counts = [int(x) for x in raw]
    remainders = sorted(
        range(len(raw)), key=lambda i: (raw[i] - counts[i], -i), reverse=True
    )
    for i in remainders[: total - sum(counts)]:
        counts[i] += 1
    return counts


def generate_series(
    entries: int,
    mix: Sequence[Tuple[str, float]],
    snapshots: int = 1,
    drift: float = 0.0,
    seed: int = 0,
    allocs: int = 1,
    base_va: int = DEFAULT_BASE_VA,
) -> GeneratedSeries:
    """Build a deterministic snapshot series plus its per-entry manifest.

    drift d > 0 flips exactly ceil(d * entries) entries between compressible
    and incompressible kinds at every snapshot transition.
    """
    if entries < 1:
        raise ConfigError("need at least one entry")
    if snapshots < 1:
        raise ConfigError("need at least one snapshot")
    if not 1 <= allocs <= entries:
        raise ConfigError(f"alloc count {allocs} not in [1, {entries}]")
    if not 0.0 <= drift <= 1.0:
        raise ConfigError(f"drift {drift} not in [0, 1]")
    kinds = [k for k, _ in mix]
    fractions = [f for _, f in mix]
    for k in kinds:
        if k not in KINDS:
            raise ConfigError(f"unknown entry kind {k!r}")
    if any(f < 0 for f in fractions) or abs(sum(fractions) - 1.0) > 1e-9:
        raise ConfigError(f"mix fractions must be non-negative and sum to 1, got {fractions}")

    rng = np.random.default_rng(seed)

    counts = _exact_counts(entries, fractions)
    kind_list: List[str] = []
    for kind, n in zip(kinds, counts):
        kind_list.extend([kind] * n)
    kind_arr = np.array(kind_list, dtype=object)[rng.permutation(entries)]

    per_alloc = [entries // allocs] * allocs
    for i in range(entries % allocs):
        per_alloc[i] += 1
    alloc_ids = list(range(1, allocs + 1))
    bounds = np.concatenate(([0], np.cumsum(per_alloc)))

    allocations = []
    va = base_va
    for alloc_id, n in zip(alloc_ids, per_alloc):
        length = n * BLOCK_BYTES
        allocations.append(AllocationRecord(alloc_id, va, length))
        va += -(-length // PAGE_BYTES) * PAGE_BYTES + PAGE_BYTES

    data = np.empty((entries, BLOCK_BYTES), dtype=np.uint8)
    for e in range(entries):
        data[e] = np.frombuffer(_entry_bytes(kind_arr[e], rng), dtype=np.uint8)

    series: List[Snapshot] = []
    manifest: List[ManifestRow] = []
    flip_count = int(np.ceil(drift * entries)) if drift > 0 else 0

    for s in range(snapshots):
        if s > 0 and flip_count:
            flips = rng.choice(entries, size=min(flip_count, entries), replace=False)
            for e in sorted(int(i) for i in flips):
                kind_arr[e] = "random" if kind_arr[e] in _FITS_KINDS else "zero"
                data[e] = np.frombuffer(_entry_bytes(kind_arr[e], rng), dtype=np.uint8)

        bufs = [
            data[bounds[i] : bounds[i + 1]].tobytes()
            for i in range(allocs)
        ]
        series.append(Snapshot(index=s, allocations=list(allocations), data=bufs))

        codes = batch.classify_blocks(data.reshape(-1).tobytes())
        for i, alloc_id in enumerate(alloc_ids):
            for local, e in enumerate(range(bounds[i], bounds[i + 1])):
                manifest.append(
                    ManifestRow(s, alloc_id, local, str(kind_arr[e]), SizeClass(int(codes[e])))
                )

    return GeneratedSeries(snapshots=series, manifest=manifest)


def write_manifest_csv(manifest: Sequence[ManifestRow], path) -> None:
    import csv

    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["snapshot", "alloc_id", "entry_index", "kind", "size_class"])
        for row in manifest:
            writer.writerow(
                [row.snapshot, row.alloc_id, row.entry_index, row.kind,
                 row.size_class.label]
            )


def load_manifest_csv(path) -> List[ManifestRow]:
    import csv

    from .codec import SIZE_CLASS_BY_LABEL

    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for rec in reader:
            rows.append(
                ManifestRow(
                    int(rec["snapshot"]), int(rec["alloc_id"]),
                    int(rec["entry_index"]), rec["kind"],
                    SIZE_CLASS_BY_LABEL[rec["size_class"]],
                )
            )
    return rows


def codec_test_corpus(seed: int = 0, random_blocks: int = 1000) -> np.ndarray:
    """Structured plus seeded-random blocks, as a word matrix for the codec.

    Covers the degenerate inputs the codec must survive: all-zero, all-ones,
    every ramp stride, and sign-boundary patterns with maximal deltas.
    """
    rows = [
        np.zeros(32, dtype=np.uint32),
        np.full(32, 0xFFFFFFFF, dtype=np.uint32),
    ]
    for stride in range(1, 256):
        rows.append(((100 + stride * np.arange(32, dtype=np.uint64)) % 2**32).astype(np.uint32))
    boundary_words = [
        [0x7FFFFFFF, 0x80000000] * 16,
        [0x00000000, 0xFFFFFFFF] * 16,
        [0x80000000] * 32,
        list(range(2**31 - 16, 2**31 + 16)),
        [(0xFFFFFFF0 + 7 * i) % 2**32 for i in range(32)],   # wraps past 2^32
        [0xAAAAAAAA, 0x55555555] * 16,
    ]
    rows.extend(np.array(w, dtype=np.uint32) for w in boundary_words)
    rng = np.random.default_rng(seed)
    rand = rng.integers(0, 2**32, size=(random_blocks, 32), dtype=np.uint64).astype(np.uint32)
    return np.vstack([np.stack(rows), rand])
