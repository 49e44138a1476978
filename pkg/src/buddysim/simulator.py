"""Trace replay over a snapshot: traffic accounting and metadata caching.

Events are post-cache memory accesses. Each touched 128-byte entry charges its
full compressed footprint, split between device and buddy memory according to
the entry's current size class and its allocation's target ratio. Writes
recompress the entry in place (no other entry's placement ever changes) and
mark its metadata line dirty. The slowdown estimate is a coarse
bandwidth-bound ratio, not a cycle-accurate claim: whichever of the device or
the interconnect carries more scaled traffic sets the time, and decompression
latency is reported but excluded.
"""

import csv
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from . import batch
from .codec import BLOCK_BYTES, SizeClass, SIZE_CLASS_BY_LABEL
from .errors import AddressFaultError, ConfigError, ValidationError
from .memory import (
    BuddyLayout,
    GbbrConfig,
    MetadataStore,
    Snapshot,
    TargetRatio,
    effective_compression_ratio,
    entry_access_split,
)

#: deterministic stand-in for unknown write payloads
WRITE_PERTURB_BYTE = 0xA5


@dataclass(frozen=True)
class TraceEvent:
    op: str                      # "R" or "W"
    va: int
    size_bytes: int
    payload: Optional[bytes] = None          # writes only
    new_class: Optional[SizeClass] = None    # size-trace mode, writes only

    def __post_init__(self):
        if self.op not in ("R", "W"):
            raise ValidationError(f"trace op must be R or W, got {self.op!r}")
        if self.size_bytes <= 0:
            raise ValidationError("trace event size must be positive")
        if self.payload is not None and len(self.payload) != self.size_bytes:
            raise ValidationError(
                f"payload of {len(self.payload)} bytes does not match size "
                f"{self.size_bytes}"
            )
        if self.payload is not None and self.new_class is not None:
            raise ValidationError("event cannot carry both payload and size_class")


# --- trace files -------------------------------------------------------------

_CSV_HEADERS = {
    ("op", "va", "size"): None,
    ("op", "va", "size", "payload_hex"): "payload",
    ("op", "va", "size", "size_class"): "size_class",
}
_BIN_RECORD = struct.Struct("<BQI")


def _parse_op(text: str) -> str:
    op = text.strip().upper()
    if op in ("R", "READ", "L", "LOAD"):
        return "R"
    if op in ("W", "WRITE", "S", "STORE"):
        return "W"
    raise ValidationError(f"unknown trace op {text!r}")


def load_trace_csv(path) -> List[TraceEvent]:
    events = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = tuple(h.strip() for h in next(reader))
        except StopIteration:
            raise ValidationError(f"{path}: empty trace file") from None
        if header not in _CSV_HEADERS:
            raise ValidationError(f"{path}: unrecognized trace header {header}")
        extra = _CSV_HEADERS[header]
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ValidationError(f"{path}:{lineno}: expected {len(header)} fields")
            try:
                op = _parse_op(row[0])
                va = int(row[1], 16)
                size = int(row[2])
                payload = None
                new_class = None
                if extra == "payload" and row[3].strip():
                    payload = bytes.fromhex(row[3].strip())
                elif extra == "size_class" and row[3].strip():
                    label = row[3].strip()
                    if label not in SIZE_CLASS_BY_LABEL:
                        raise ValidationError(f"unknown size class {label!r}")
                    new_class = SIZE_CLASS_BY_LABEL[label]
                events.append(TraceEvent(op, va, size, payload, new_class))
            except (ValueError, ValidationError) as exc:
                raise ValidationError(f"{path}:{lineno}: {exc}") from None
    return events


def write_trace_csv(events: Sequence[TraceEvent], path) -> None:
    with_payload = any(e.payload is not None for e in events)
    with_class = any(e.new_class is not None for e in events)
    if with_payload and with_class:
        raise ValidationError("trace mixes payload and size_class events")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        if with_payload:
            writer.writerow(["op", "va", "size", "payload_hex"])
            for e in events:
                writer.writerow([e.op, f"0x{e.va:x}", e.size_bytes,
                                 e.payload.hex() if e.payload else ""])
        elif with_class:
            writer.writerow(["op", "va", "size", "size_class"])
            for e in events:
                writer.writerow([e.op, f"0x{e.va:x}", e.size_bytes,
                                 e.new_class.label if e.new_class else ""])
        else:
            writer.writerow(["op", "va", "size"])
            for e in events:
                writer.writerow([e.op, f"0x{e.va:x}", e.size_bytes])


def load_trace_binary(path) -> List[TraceEvent]:
    raw = Path(path).read_bytes()
    if len(raw) % _BIN_RECORD.size:
        raise ValidationError(
            f"{path}: binary trace length {len(raw)} is not a multiple of "
            f"{_BIN_RECORD.size}"
        )
    events = []
    for op_code, va, size in _BIN_RECORD.iter_unpack(raw):
        if op_code not in (0, 1):
            raise ValidationError(f"{path}: bad op code {op_code}")
        events.append(TraceEvent("W" if op_code else "R", va, size))
    return events


def write_trace_binary(events: Sequence[TraceEvent], path) -> None:
    with open(path, "wb") as fh:
        for e in events:
            fh.write(_BIN_RECORD.pack(1 if e.op == "W" else 0, e.va, e.size_bytes))


def load_trace(path, fmt: str = "auto") -> List[TraceEvent]:
    if fmt == "auto":
        with open(path, "rb") as fh:
            head = fh.read(3)
        fmt = "csv" if head == b"op," else "bin"
    if fmt == "csv":
        return load_trace_csv(path)
    if fmt == "bin":
        return load_trace_binary(path)
    raise ConfigError(f"unknown trace format {fmt!r}")


# --- metadata cache ----------------------------------------------------------

def _log2_exact(value: int, what: str) -> int:
    bits = value.bit_length() - 1
    if value <= 0 or (1 << bits) != value:
        raise ConfigError(f"{what} must be a power of two, got {value}")
    return bits


@dataclass(frozen=True)
class MetadataCacheConfig:
    total_bytes: int = 65536
    slices: int = 8
    line_bytes: int = 32
    ways: int = 4

    @property
    def sets_per_slice(self) -> int:
        per_slice = self.total_bytes // self.slices
        sets = per_slice // (self.line_bytes * self.ways)
        if sets * self.line_bytes * self.ways * self.slices != self.total_bytes:
            raise ConfigError("metadata cache geometry does not divide evenly")
        return sets

    def validate(self) -> None:
        _log2_exact(self.slices, "slice count")
        _log2_exact(self.line_bytes, "line size")
        _log2_exact(self.sets_per_slice, "set count")


@dataclass(frozen=True)
class CacheAccessResult:
    hit: bool
    evicted_dirty: bool


class MetadataCache:
    """Set-associative, write-back, write-allocate, true LRU.

    Slice and set come from the metadata address: the 3 bits above the 32B
    line offset pick the slice (mirroring per-channel interleaving), the next
    bits pick the set.
    """

    def __init__(self, cfg: MetadataCacheConfig = MetadataCacheConfig()):
        cfg.validate()
        self.cfg = cfg
        self._offset_bits = _log2_exact(cfg.line_bytes, "line size")
        self._slice_bits = _log2_exact(cfg.slices, "slice count")
        self._set_bits = _log2_exact(cfg.sets_per_slice, "set count")
        # per (slice, set): list of [tag, dirty], LRU first
        self._sets: List[List[list]] = [
            [] for _ in range(cfg.slices * cfg.sets_per_slice)
        ]
        self.accesses = 0
        self.hits = 0

    def _index(self, address: int) -> Tuple[int, int]:
        line = address >> self._offset_bits
        slice_i = line & ((1 << self._slice_bits) - 1)
        set_i = (line >> self._slice_bits) & ((1 << self._set_bits) - 1)
        tag = line >> (self._slice_bits + self._set_bits)
        return slice_i * self.cfg.sets_per_slice + set_i, tag

    def access(self, address: int, is_write: bool) -> CacheAccessResult:
        self.accesses += 1
        set_index, tag = self._index(address)
        ways = self._sets[set_index]
        for i, line in enumerate(ways):
            if line[0] == tag:
                ways.append(ways.pop(i))
                if is_write:
                    ways[-1][1] = True
                self.hits += 1
                return CacheAccessResult(hit=True, evicted_dirty=False)
        evicted_dirty = False
        if len(ways) >= self.cfg.ways:
            evicted_dirty = bool(ways.pop(0)[1])
        ways.append([tag, is_write])
        return CacheAccessResult(hit=False, evicted_dirty=evicted_dirty)

    @property
    def hit_rate(self) -> float:
        return self.hits / self.accesses if self.accesses else 0.0


# --- cost model ----------------------------------------------------------------

@dataclass(frozen=True)
class CostModelParams:
    device_gbps: float = 900.0
    link_gbps: float = 150.0
    decompress_latency_cycles: int = 11

    def __post_init__(self):
        if self.device_gbps <= 0 or self.link_gbps <= 0:
            raise ConfigError("bandwidths must be positive")


@dataclass
class TrafficCounters:
    device_bytes: int = 0
    buddy_bytes: int = 0
    metadata_fill_bytes: int = 0
    metadata_writeback_bytes: int = 0
    entry_accesses: int = 0
    buddy_entry_accesses: int = 0


def cost_estimate(
    counters: TrafficCounters, cost_cfg: CostModelParams, baseline_logical_bytes: int
) -> float:
    """Bandwidth-bound slowdown versus an uncompressed large-memory device.

    Device traffic (data plus metadata fills and writebacks) is paced by
    device bandwidth, buddy traffic by the interconnect; the slower side sets
    the time. A trend model only.
    """
    if baseline_logical_bytes <= 0:
        raise ConfigError("baseline byte count must be positive for a slowdown estimate")
    device_traffic = (
        counters.device_bytes
        + counters.metadata_fill_bytes
        + counters.metadata_writeback_bytes
    )
    t_compressed = max(
        device_traffic / cost_cfg.device_gbps,
        counters.buddy_bytes / cost_cfg.link_gbps,
    )
    t_baseline = baseline_logical_bytes / cost_cfg.device_gbps
    return t_compressed / t_baseline


# --- trace replay ----------------------------------------------------------------

@dataclass
class WindowStat:
    index: int
    entry_accesses: int
    buddy_fraction: float
    compression_ratio: float


@dataclass
class SimReport:
    counters: TrafficCounters
    metadata_accesses: int
    metadata_hits: int
    metadata_hit_rate: float
    buddy_access_fraction: float
    baseline_logical_bytes: int
    effective_ratio: float
    estimated_slowdown: float
    decompress_latency_cycles: int
    event_count: int
    cache_cfg: MetadataCacheConfig
    cost_cfg: CostModelParams
    buddy_flags: np.ndarray = field(repr=False)      # one flag per entry access
    final_classes: Dict[int, np.ndarray] = field(repr=False, default_factory=dict)

    def to_json_dict(self, windows: Optional[int] = None) -> dict:
        doc = {
            "event_count": self.event_count,
            "entry_accesses": self.counters.entry_accesses,
            "buddy_entry_accesses": self.counters.buddy_entry_accesses,
            "buddy_access_fraction": self.buddy_access_fraction,
            "counters": {
                "device_bytes": self.counters.device_bytes,
                "buddy_bytes": self.counters.buddy_bytes,
                "metadata_fill_bytes": self.counters.metadata_fill_bytes,
                "metadata_writeback_bytes": self.counters.metadata_writeback_bytes,
            },
            "metadata_cache": {
                "accesses": self.metadata_accesses,
                "hits": self.metadata_hits,
                "hit_rate": self.metadata_hit_rate,
                "total_bytes": self.cache_cfg.total_bytes,
                "slices": self.cache_cfg.slices,
                "ways": self.cache_cfg.ways,
            },
            "baseline_logical_bytes": self.baseline_logical_bytes,
            "effective_compression_ratio": self.effective_ratio,
            "estimated_slowdown": self.estimated_slowdown,
            "decompress_latency_cycles": self.decompress_latency_cycles,
            "cost_model": {
                "device_gbps": self.cost_cfg.device_gbps,
                "link_gbps": self.cost_cfg.link_gbps,
            },
        }
        if windows is not None:
            doc["windows"] = [
                {
                    "index": w.index,
                    "entry_accesses": w.entry_accesses,
                    "buddy_fraction": w.buddy_fraction,
                    "compression_ratio": w.compression_ratio,
                }
                for w in timeseries_report(self, windows)
            ]
        return doc


def timeseries_report(report: SimReport, windows: int) -> List[WindowStat]:
    """Split the trace into equal event-count windows of buddy-access fractions."""
    if windows < 1:
        raise ConfigError("window count must be >= 1")
    flags = report.buddy_flags
    n = flags.size
    out = []
    for w in range(windows):
        lo = w * n // windows
        hi = (w + 1) * n // windows
        chunk = flags[lo:hi]
        frac = float(chunk.mean()) if chunk.size else 0.0
        out.append(WindowStat(w, int(chunk.size), frac, report.effective_ratio))
    return out


def windows_to_csv(rows: Sequence[WindowStat], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["window", "entry_accesses", "buddy_fraction", "compression_ratio"])
        for row in rows:
            writer.writerow(
                [row.index, row.entry_accesses,
                 f"{row.buddy_fraction:.9f}", f"{row.compression_ratio:.9f}"]
            )


class _SimState:
    """Mutable replay state: entry data copies, metadata store, cache."""

    def __init__(self, snapshot, targets, cache_cfg, gbbr):
        self.layout = BuddyLayout(snapshot, targets, gbbr=gbbr)
        self.metadata = MetadataStore(self.layout)
        self.cache = MetadataCache(cache_cfg)
        self.data = {
            alloc.alloc_id: bytearray(buf)
            for alloc, buf in zip(snapshot.allocations, snapshot.data)
        }

    def entry_class(self, placement) -> SizeClass:
        slot = self.layout.entry_slot(placement.alloc_id, placement.entry_index)
        return self.metadata.get(slot)

    def set_entry_class(self, placement, sc: SizeClass) -> None:
        slot = self.layout.entry_slot(placement.alloc_id, placement.entry_index)
        self.metadata.set(slot, sc)

    def reclassify_entry(self, placement) -> SizeClass:
        buf = self.data[placement.alloc_id]
        off = placement.entry_index * BLOCK_BYTES
        codes = batch.classify_blocks(bytes(buf[off : off + BLOCK_BYTES]))
        return SizeClass(int(codes[0]))


def _entries_spanned(va: int, size: int) -> Iterable[int]:
    first = va // BLOCK_BYTES * BLOCK_BYTES
    last = (va + size - 1) // BLOCK_BYTES * BLOCK_BYTES
    return range(first, last + 1, BLOCK_BYTES)


def run_trace(
    snapshot: Snapshot,
    targets: Mapping[int, TargetRatio],
    trace: Sequence[TraceEvent],
    cache_cfg: MetadataCacheConfig = MetadataCacheConfig(),
    cost_cfg: CostModelParams = CostModelParams(),
    gbbr: Optional[GbbrConfig] = None,
) -> SimReport:
    """Replay a trace. Deterministic for fixed inputs.

    Reads charge the touched sectors of each spanned entry; writes apply the
    payload (or a fixed XOR perturbation, or a declared size class),
    recompress, update metadata, and charge the newly occupied sectors.
    """
    state = _SimState(snapshot, targets, cache_cfg, gbbr)
    counters = TrafficCounters()
    buddy_flags = []

    for index, ev in enumerate(trace):
        try:
            first_placement = state.layout.translate(ev.va)
            last_va = ev.va + ev.size_bytes - 1
            alloc = state.layout.alloc_layout(first_placement.alloc_id).alloc
            if not alloc.contains(last_va):
                raise ValidationError(
                    f"trace event {index} spans past allocation {alloc.alloc_id}"
                )
        except AddressFaultError as exc:
            raise AddressFaultError(exc.va, event_index=index) from None

        for entry_va in _entries_spanned(ev.va, ev.size_bytes):
            placement = state.layout.translate(entry_va)
            result = state.cache.access(placement.metadata_address, ev.op == "W")
            if not result.hit:
                counters.metadata_fill_bytes += cache_cfg.line_bytes
            if result.evicted_dirty:
                counters.metadata_writeback_bytes += cache_cfg.line_bytes

            if ev.op == "W":
                lo = max(ev.va, entry_va)
                hi = min(ev.va + ev.size_bytes, entry_va + BLOCK_BYTES)
                buf = state.data[placement.alloc_id]
                base = placement.entry_index * BLOCK_BYTES + (lo - entry_va)
                if ev.new_class is not None:
                    new_class = ev.new_class
                else:
                    if ev.payload is not None:
                        src = ev.payload[lo - ev.va : hi - ev.va]
                        buf[base : base + len(src)] = src
                    else:
                        for i in range(base, base + (hi - lo)):
                            buf[i] ^= WRITE_PERTURB_BYTE
                    new_class = state.reclassify_entry(placement)
                state.set_entry_class(placement, new_class)
                split = entry_access_split(new_class, placement.target)
            else:
                split = entry_access_split(state.entry_class(placement), placement.target)

            counters.device_bytes += split.device_bytes
            counters.buddy_bytes += split.buddy_bytes
            counters.entry_accesses += 1
            if split.touches_buddy:
                counters.buddy_entry_accesses += 1
            buddy_flags.append(split.touches_buddy)

    baseline = BLOCK_BYTES * counters.entry_accesses
    slowdown = 1.0 if baseline == 0 else cost_estimate(counters, cost_cfg, baseline)
    return SimReport(
        counters=counters,
        metadata_accesses=state.cache.accesses,
        metadata_hits=state.cache.hits,
        metadata_hit_rate=state.cache.hit_rate,
        buddy_access_fraction=(
            counters.buddy_entry_accesses / counters.entry_accesses
            if counters.entry_accesses
            else 0.0
        ),
        baseline_logical_bytes=baseline,
        effective_ratio=effective_compression_ratio(snapshot, targets),
        estimated_slowdown=slowdown,
        decompress_latency_cycles=cost_cfg.decompress_latency_cycles,
        event_count=len(trace),
        cache_cfg=cache_cfg,
        cost_cfg=cost_cfg,
        buddy_flags=np.array(buddy_flags, dtype=np.uint8),
        final_classes={
            alloc.alloc_id: state.metadata.classes_for(alloc.alloc_id)
            for alloc in snapshot.allocations
        },
    )


def one_touch_trace(snapshot: Snapshot) -> List[TraceEvent]:
    """Sequential write-free trace touching every entry exactly once."""
    events = []
    for alloc in snapshot.allocations:
        for e in range(alloc.num_entries):
            events.append(TraceEvent("R", alloc.base_va + e * BLOCK_BYTES, BLOCK_BYTES))
    return events
