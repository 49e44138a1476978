"""Desk-scale toolkit for split device/buddy compressed memory.

Compress 128-byte entries with a bit-plane codec, lay them out between a fast
device region and a slower buddy carve-out, profile snapshots for
per-allocation target ratios under a buddy threshold, and replay access
traces for traffic, metadata-cache, and slowdown estimates.
"""

from .codec import (
    BLOCK_BYTES,
    SECTOR_BYTES,
    CompressedBlock,
    SizeClass,
    compress_block,
    decompress_block,
    size_bucket,
    size_class,
)
from .errors import (
    AddressFaultError,
    BuddySimError,
    CodecDecodeError,
    ConfigError,
    SnapshotFormatError,
    ValidationError,
)
from .memory import (
    AllocationRecord,
    BuddyLayout,
    GbbrConfig,
    MetadataStore,
    Snapshot,
    TargetRatio,
    effective_compression_ratio,
    entry_access_split,
    heatmap_matrix,
    load_snapshot,
    static_buddy_fraction,
    write_snapshot,
)
from .profiler import (
    CompressibilityHistogram,
    ProfileResult,
    ThresholdConfig,
    build_histograms,
    enforce_carveout_cap,
    overflow_fraction,
    select_targets,
    sweep_thresholds,
)
from .simulator import (
    CostModelParams,
    MetadataCache,
    MetadataCacheConfig,
    SimReport,
    TraceEvent,
    cost_estimate,
    run_trace,
    timeseries_report,
)

__version__ = "0.1.0"
