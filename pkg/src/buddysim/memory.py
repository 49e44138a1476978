"""Snapshot data model and the split device/buddy memory layout.

An allocation's entries live in 8KB pages of 64 entries. A per-allocation
target ratio reserves the first device_sectors of every entry in device
memory; whatever a given entry needs beyond that is read from its fixed,
offset-addressed spot in the buddy carve-out. Nothing ever moves when an
entry's compressibility changes, which is the property the simulator leans on.
"""

import io
import struct
from bisect import bisect_right
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import List, Mapping, Optional, Sequence, Tuple

import numpy as np

from . import batch
from .codec import BLOCK_BYTES, SECTOR_BYTES, SizeClass
from .errors import AddressFaultError, ConfigError, SnapshotFormatError, ValidationError

PAGE_BYTES = 8192
ENTRIES_PER_PAGE = PAGE_BYTES // BLOCK_BYTES          # 64
METADATA_LINE_BYTES = 32                              # 4 bits x 64 entries
METADATA_BITS_PER_ENTRY = 4

SNAPSHOT_MAGIC = b"BDYC"
SNAPSHOT_VERSION = 1

DEFAULT_BUDDY_BASE = 1 << 40
DEFAULT_METADATA_BASE = 0


class TargetRatio(Enum):
    """Per-allocation compression target: how much device memory is reserved."""

    R1 = "R1"
    R4OVER3 = "R4over3"
    R2 = "R2"
    R4 = "R4"
    R16ZERO = "R16zero"

    @property
    def device_sectors(self) -> int:
        return _DEVICE_SECTORS[self]

    @property
    def device_bytes(self) -> int:
        """Device bytes reserved per 128B entry (zero mode keeps an 8B slot)."""
        return 8 if self is TargetRatio.R16ZERO else self.device_sectors * SECTOR_BYTES

    @property
    def ratio(self) -> float:
        return BLOCK_BYTES / self.device_bytes

    @property
    def buddy_page_bytes(self) -> int:
        """Buddy carve-out bytes backing one 8KB page at this target."""
        if self is TargetRatio.R16ZERO:
            return ENTRIES_PER_PAGE * BLOCK_BYTES
        return ENTRIES_PER_PAGE * (4 - self.device_sectors) * SECTOR_BYTES

    @property
    def buddy_stride_bytes(self) -> int:
        """Buddy bytes per entry within this target's buddy page."""
        return self.buddy_page_bytes // ENTRIES_PER_PAGE


_DEVICE_SECTORS = {
    TargetRatio.R1: 4,
    TargetRatio.R4OVER3: 3,
    TargetRatio.R2: 2,
    TargetRatio.R4: 1,
    TargetRatio.R16ZERO: 0,
}

#: normal-mode candidates in ascending ratio order
NORMAL_TARGETS = (TargetRatio.R1, TargetRatio.R4OVER3, TargetRatio.R2, TargetRatio.R4)

TARGET_BY_NAME = {t.value: t for t in TargetRatio}


@dataclass(frozen=True)
class AllocationRecord:
    alloc_id: int
    base_va: int
    length_bytes: int

    def __post_init__(self):
        if self.base_va % BLOCK_BYTES:
            raise ValidationError(
                f"allocation {self.alloc_id}: base_va 0x{self.base_va:x} not 128B-aligned"
            )
        if self.length_bytes <= 0 or self.length_bytes % BLOCK_BYTES:
            raise ValidationError(
                f"allocation {self.alloc_id}: length {self.length_bytes} not a "
                "positive multiple of 128"
            )

    @property
    def num_entries(self) -> int:
        return self.length_bytes // BLOCK_BYTES

    @property
    def num_pages(self) -> int:
        return -(-self.num_entries // ENTRIES_PER_PAGE)

    @property
    def end_va(self) -> int:
        return self.base_va + self.length_bytes

    def contains(self, va: int) -> bool:
        return self.base_va <= va < self.end_va


@dataclass
class Snapshot:
    """Point-in-time dump of all allocated memory."""

    index: int
    allocations: List[AllocationRecord]
    data: List[bytes]

    def __post_init__(self):
        if len(self.allocations) != len(self.data):
            raise ValidationError("one data buffer required per allocation")
        for alloc, buf in zip(self.allocations, self.data):
            if len(buf) != alloc.length_bytes:
                raise ValidationError(
                    f"allocation {alloc.alloc_id}: data length {len(buf)} != "
                    f"declared {alloc.length_bytes}"
                )
        ordered = sorted(self.allocations, key=lambda a: a.base_va)
        for prev, cur in zip(ordered, ordered[1:]):
            if cur.base_va < prev.end_va:
                raise ValidationError(
                    f"allocations {prev.alloc_id} and {cur.alloc_id} overlap"
                )
        ids = [a.alloc_id for a in self.allocations]
        if len(set(ids)) != len(ids):
            raise ValidationError("duplicate alloc_id in snapshot")

    @property
    def total_entries(self) -> int:
        return sum(a.num_entries for a in self.allocations)

    @property
    def total_bytes(self) -> int:
        return sum(a.length_bytes for a in self.allocations)

    def allocation_by_id(self, alloc_id: int) -> AllocationRecord:
        for alloc in self.allocations:
            if alloc.alloc_id == alloc_id:
                return alloc
        raise KeyError(alloc_id)

    def data_by_id(self, alloc_id: int) -> bytes:
        for alloc, buf in zip(self.allocations, self.data):
            if alloc.alloc_id == alloc_id:
                return buf
        raise KeyError(alloc_id)

    def entry_bytes(self, alloc_id: int, entry_index: int) -> bytes:
        buf = self.data_by_id(alloc_id)
        off = entry_index * BLOCK_BYTES
        return buf[off : off + BLOCK_BYTES]


def write_snapshot(snapshot: Snapshot, path) -> None:
    with open(path, "wb") as fh:
        fh.write(SNAPSHOT_MAGIC)
        fh.write(struct.pack("<II", SNAPSHOT_VERSION, len(snapshot.allocations)))
        for alloc in snapshot.allocations:
            fh.write(struct.pack("<QQQ", alloc.alloc_id, alloc.base_va, alloc.length_bytes))
        for buf in snapshot.data:
            fh.write(buf)


def load_snapshot(path, index: int = 0) -> Snapshot:
    """Parse one snapshot file; format errors carry the failing byte offset."""
    with open(path, "rb") as fh:
        raw = fh.read()
    buf = io.BytesIO(raw)

    magic = buf.read(4)
    if magic != SNAPSHOT_MAGIC:
        raise SnapshotFormatError(f"bad magic {magic!r}", byte_offset=0)
    header = buf.read(8)
    if len(header) < 8:
        raise SnapshotFormatError("truncated header", byte_offset=buf.tell())
    version, alloc_count = struct.unpack("<II", header)
    if version != SNAPSHOT_VERSION:
        raise SnapshotFormatError(f"unsupported version {version}", byte_offset=4)

    allocations = []
    for _ in range(alloc_count):
        rec = buf.read(24)
        if len(rec) < 24:
            raise SnapshotFormatError("truncated allocation table", byte_offset=buf.tell())
        alloc_id, base_va, length_bytes = struct.unpack("<QQQ", rec)
        allocations.append(AllocationRecord(alloc_id, base_va, length_bytes))

    data = []
    for alloc in allocations:
        chunk = buf.read(alloc.length_bytes)
        if len(chunk) < alloc.length_bytes:
            raise SnapshotFormatError(
                f"truncated data for allocation {alloc.alloc_id}", byte_offset=buf.tell()
            )
        data.append(chunk)
    if buf.read(1):
        raise SnapshotFormatError("trailing bytes after snapshot data", byte_offset=buf.tell() - 1)
    return Snapshot(index=index, allocations=allocations, data=data)


def series_path(stem, index: int):
    return Path(f"{stem}.{index:03d}.snap")


def write_series(snapshots: Sequence[Snapshot], stem) -> List[Path]:
    paths = []
    for snap in snapshots:
        path = series_path(stem, snap.index)
        write_snapshot(snap, path)
        paths.append(path)
    return paths


def load_series(paths) -> List[Snapshot]:
    return [load_snapshot(p, index=i) for i, p in enumerate(paths)]


def discover_series(stem) -> List[Path]:
    stem = Path(stem)
    return sorted(stem.parent.glob(stem.name + ".*.snap"))


@dataclass(frozen=True)
class GbbrConfig:
    """Base address and size of the contiguous buddy carve-out."""

    buddy_base: int = DEFAULT_BUDDY_BASE
    carveout_bytes: int = 0           # 0 -> sized automatically by the layout

    @classmethod
    def recommended(cls, device_capacity_bytes: int, buddy_base: int = DEFAULT_BUDDY_BASE):
        """Carve-out sized for the worst case at the 4x maximum target:
        3 of every entry's 4 sectors live in buddy memory."""
        return cls(buddy_base=buddy_base, carveout_bytes=3 * device_capacity_bytes)


@dataclass(frozen=True)
class TranslationEntry:
    """Per-8KB-page translation state (the page-table extension we model)."""

    compressed_flag: bool
    target: TargetRatio
    buddy_page_offset: int

    _TARGET_CODES = {t: i for i, t in enumerate(TargetRatio)}

    def encode24(self) -> int:
        """Pack into the 24-bit budget: flag(1) | target(3) | offset(20)."""
        if not 0 <= self.buddy_page_offset < (1 << 20):
            raise ValidationError(
                f"buddy page offset {self.buddy_page_offset} exceeds 20-bit field"
            )
        return (
            (int(self.compressed_flag) << 23)
            | (self._TARGET_CODES[self.target] << 20)
            | self.buddy_page_offset
        )


@dataclass(frozen=True)
class AccessSplit:
    """How one entry access divides between device and buddy memory."""

    device_sectors: int
    buddy_sectors: int
    device_bytes: int
    buddy_bytes: int

    @property
    def touches_buddy(self) -> bool:
        return self.buddy_bytes > 0


def entry_access_split(sc: SizeClass, target: TargetRatio) -> AccessSplit:
    """Sectors touched on each side for an entry of class sc under a target.

    Zero mode: an entry that fits the 8-byte slot is served entirely from
    device memory; anything else is read wholly from buddy storage.
    """
    n = sc.sectors
    if target is TargetRatio.R16ZERO:
        if sc is SizeClass.FITS_8B:
            return AccessSplit(0, 0, 8, 0)
        return AccessSplit(0, n, 0, n * SECTOR_BYTES)
    device = min(n, target.device_sectors)
    buddy = n - device
    return AccessSplit(device, buddy, device * SECTOR_BYTES, buddy * SECTOR_BYTES)


@dataclass(frozen=True)
class Placement:
    """Result of translating a VA: where the entry's sectors live."""

    alloc_id: int
    entry_index: int
    page_index: int
    entry_in_page: int
    target: TargetRatio
    device_sector_slots: Tuple[int, ...]
    buddy_sector_slots: Tuple[int, ...]
    device_slot_bytes: int
    buddy_byte_address: Optional[int]
    metadata_address: int


class _AllocLayout:
    __slots__ = ("alloc", "target", "buddy_offset", "page_base", "entry_base")

    def __init__(self, alloc, target, buddy_offset, page_base, entry_base):
        self.alloc = alloc
        self.target = target
        self.buddy_offset = buddy_offset      # bytes from buddy_base
        self.page_base = page_base            # global page index (metadata line)
        self.entry_base = entry_base          # global page-padded entry slot


class BuddyLayout:
    """Static placement of a snapshot under per-allocation targets.

    Buddy pages are handed out contiguously in allocation record order; each
    allocation's region is aligned to its own buddy page size so page offsets
    from the GBBR base stay integral.
    """

    def __init__(
        self,
        snapshot: Snapshot,
        targets: Mapping[int, TargetRatio],
        gbbr: Optional[GbbrConfig] = None,
        metadata_base: int = DEFAULT_METADATA_BASE,
    ):
        self.snapshot = snapshot
        self.targets = dict(targets)
        self.metadata_base = metadata_base

        missing = [a.alloc_id for a in snapshot.allocations if a.alloc_id not in self.targets]
        if missing:
            raise ConfigError(f"no target ratio configured for allocations {missing}")

        self._allocs: List[_AllocLayout] = []
        buddy_cursor = 0
        page_cursor = 0
        for alloc in snapshot.allocations:
            target = self.targets[alloc.alloc_id]
            bp = target.buddy_page_bytes
            if bp:
                buddy_cursor = -(-buddy_cursor // bp) * bp
            self._allocs.append(
                _AllocLayout(alloc, target, buddy_cursor, page_cursor,
                             page_cursor * ENTRIES_PER_PAGE)
            )
            buddy_cursor += alloc.num_pages * bp
            page_cursor += alloc.num_pages
        self.buddy_bytes_used = buddy_cursor
        self.total_pages = page_cursor
        self.total_entry_slots = page_cursor * ENTRIES_PER_PAGE

        if gbbr is None:
            gbbr = GbbrConfig(DEFAULT_BUDDY_BASE, self.buddy_bytes_used)
        elif gbbr.carveout_bytes and gbbr.carveout_bytes < self.buddy_bytes_used:
            raise ConfigError(
                f"carve-out of {gbbr.carveout_bytes} bytes cannot hold "
                f"{self.buddy_bytes_used} bytes of buddy pages"
            )
        self.gbbr = gbbr

        self._starts = [al.alloc.base_va for al in sorted(self._allocs, key=lambda x: x.alloc.base_va)]
        self._by_start = sorted(self._allocs, key=lambda x: x.alloc.base_va)

    def alloc_layout(self, alloc_id: int) -> _AllocLayout:
        for al in self._allocs:
            if al.alloc.alloc_id == alloc_id:
                return al
        raise KeyError(alloc_id)

    def _find(self, va: int) -> _AllocLayout:
        i = bisect_right(self._starts, va) - 1
        if i >= 0 and self._by_start[i].alloc.contains(va):
            return self._by_start[i]
        raise AddressFaultError(va)

    def page_table_entry(self, va: int) -> TranslationEntry:
        al = self._find(va)
        page = (va - al.alloc.base_va) // PAGE_BYTES
        bp = al.target.buddy_page_bytes
        offset = (al.buddy_offset // bp + page) if bp else 0
        return TranslationEntry(
            compressed_flag=al.target is not TargetRatio.R1,
            target=al.target,
            buddy_page_offset=offset,
        )

    def metadata_address_for_slot(self, entry_slot: int) -> int:
        return self.metadata_base + (entry_slot // ENTRIES_PER_PAGE) * METADATA_LINE_BYTES

    def translate(self, va: int) -> Placement:
        al = self._find(va)
        alloc, target = al.alloc, al.target
        entry_index = (va - alloc.base_va) // BLOCK_BYTES
        page_index, entry_in_page = divmod(entry_index, ENTRIES_PER_PAGE)

        ds = target.device_sectors
        if target is TargetRatio.R16ZERO:
            device_slots: Tuple[int, ...] = ()
            buddy_slots = (0, 1, 2, 3)
        else:
            device_slots = tuple(range(ds))
            buddy_slots = tuple(range(ds, 4))

        bp = target.buddy_page_bytes
        if bp:
            buddy_addr = (
                self.gbbr.buddy_base
                + al.buddy_offset
                + page_index * bp
                + entry_in_page * target.buddy_stride_bytes
            )
        else:
            buddy_addr = None

        entry_slot = al.entry_base + page_index * ENTRIES_PER_PAGE + entry_in_page
        return Placement(
            alloc_id=alloc.alloc_id,
            entry_index=entry_index,
            page_index=page_index,
            entry_in_page=entry_in_page,
            target=target,
            device_sector_slots=device_slots,
            buddy_sector_slots=buddy_slots,
            device_slot_bytes=target.device_bytes,
            buddy_byte_address=buddy_addr,
            metadata_address=self.metadata_address_for_slot(entry_slot),
        )

    def entry_slot(self, alloc_id: int, entry_index: int) -> int:
        al = self.alloc_layout(alloc_id)
        page, in_page = divmod(entry_index, ENTRIES_PER_PAGE)
        return al.entry_base + page * ENTRIES_PER_PAGE + in_page


class MetadataStore:
    """4-bit size-class codes, one 32B line per 8KB page."""

    def __init__(self, layout: BuddyLayout):
        self._codes = np.zeros(layout.total_entry_slots, dtype=np.uint8)
        self._layout = layout
        for alloc, buf in zip(layout.snapshot.allocations, layout.snapshot.data):
            al = layout.alloc_layout(alloc.alloc_id)
            codes = batch.classify_blocks(buf)
            base = al.entry_base
            # entries are page-contiguous within an allocation
            self._codes[base : base + alloc.num_entries] = codes

    def get(self, entry_slot: int) -> SizeClass:
        return SizeClass(int(self._codes[entry_slot]))

    def set(self, entry_slot: int, sc: SizeClass) -> None:
        self._codes[entry_slot] = int(sc)

    def classes_for(self, alloc_id: int) -> np.ndarray:
        """Class codes for one allocation's entries, in entry order."""
        al = self._layout.alloc_layout(alloc_id)
        return self._codes[al.entry_base : al.entry_base + al.alloc.num_entries].copy()

    @property
    def metadata_bytes(self) -> int:
        """Accounting size: exactly 4 bits per real entry."""
        entries = self._layout.snapshot.total_entries
        return -(-entries * METADATA_BITS_PER_ENTRY // 8)

    @property
    def capacity_overhead(self) -> float:
        return self.metadata_bytes / self._layout.snapshot.total_bytes


def effective_compression_ratio(
    snapshot: Snapshot, targets: Mapping[int, TargetRatio]
) -> float:
    """Capacity ratio implied by the targets alone: logical over reserved bytes."""
    logical = 0
    reserved = 0
    for alloc in snapshot.allocations:
        if alloc.alloc_id not in targets:
            raise ConfigError(f"no target ratio configured for allocation {alloc.alloc_id}")
        logical += alloc.num_entries * BLOCK_BYTES
        reserved += alloc.num_entries * targets[alloc.alloc_id].device_bytes
    if reserved == 0:
        raise ConfigError("empty snapshot")
    return logical / reserved


def static_buddy_fraction(
    snapshot: Snapshot, targets: Mapping[int, TargetRatio]
) -> float:
    """Fraction of entries whose current contents spill into buddy memory."""
    total = 0
    spilled = 0
    for alloc, buf in zip(snapshot.allocations, snapshot.data):
        if alloc.alloc_id not in targets:
            raise ConfigError(f"no target ratio configured for allocation {alloc.alloc_id}")
        target = targets[alloc.alloc_id]
        codes = batch.classify_blocks(buf)
        spill_by_class = np.array(
            [entry_access_split(sc, target).touches_buddy for sc in SizeClass],
            dtype=bool,
        )
        spilled += int(spill_by_class[codes].sum())
        total += alloc.num_entries
    if total == 0:
        raise ConfigError("empty snapshot")
    return spilled / total


def heatmap_matrix(snapshot: Snapshot) -> np.ndarray:
    """Sector count per entry, one row per 8KB page, ascending VA.

    Cells are 1..4 (Fits8B renders as 1 sector); absent entries of a partial
    trailing page are 0.
    """
    pairs = sorted(zip(snapshot.allocations, snapshot.data), key=lambda p: p[0].base_va)
    rows = []
    for alloc, buf in pairs:
        sectors = batch.sectors_for_classes(batch.classify_blocks(buf)).astype(np.int8)
        padded = np.zeros(alloc.num_pages * ENTRIES_PER_PAGE, dtype=np.int8)
        padded[: sectors.size] = sectors
        rows.append(padded.reshape(-1, ENTRIES_PER_PAGE))
    if not rows:
        return np.zeros((0, ENTRIES_PER_PAGE), dtype=np.int8)
    return np.vstack(rows)
