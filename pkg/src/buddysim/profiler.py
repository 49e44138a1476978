"""Compressibility profiling and target-ratio selection.

Histograms of per-entry size classes are accumulated over a snapshot series,
then each allocation gets the most aggressive target whose overflow fraction
(entries that would spill into buddy memory) stays under the buddy threshold.
Mostly-zero allocations may take the 16x zero-mode slot instead, subject to
the same threshold and to the 4x carve-out cap on the overall ratio.
"""

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Dict, Iterable, List, Mapping, Sequence

import numpy as np

from . import batch
from .codec import BLOCK_BYTES, SizeClass
from .errors import ConfigError, ValidationError
from .memory import NORMAL_TARGETS, Snapshot, TargetRatio

_THREADS_ENV = "BUDDY_SIM_THREADS"


def _worker_count() -> int:
    env = os.environ.get(_THREADS_ENV, "")
    if env.strip():
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError(f"{_THREADS_ENV}={env!r} is not an integer") from None
    return min(4, os.cpu_count() or 1)


@dataclass
class CompressibilityHistogram:
    """Size-class counts for one allocation over (entry, snapshot) samples."""

    alloc_id: int
    counts: Dict[SizeClass, int]
    sample_count: int
    entries: int                  # entries per snapshot
    snapshots_seen: int

    def __post_init__(self):
        total = sum(self.counts.values())
        if total != self.sample_count:
            raise ValidationError(
                f"histogram counts sum to {total}, expected {self.sample_count}"
            )

    @property
    def footprint_bytes(self) -> int:
        return self.entries * BLOCK_BYTES


def build_histograms(snapshots: Sequence[Snapshot]) -> Dict[int, CompressibilityHistogram]:
    """Classify every entry of every snapshot, accumulated per allocation.

    Allocations absent from some snapshots contribute samples only while live;
    an alloc_id reappearing with a different base or length is rejected.
    (Work is fanned out over (snapshot, allocation) pairs; merge order is
    fixed, so results do not depend on scheduling.)
    """
    if not snapshots:
        raise ConfigError("snapshot series is empty")

    seen = {}
    tasks = []
    for snap in snapshots:
        for alloc, buf in zip(snap.allocations, snap.data):
            prior = seen.get(alloc.alloc_id)
            if prior is None:
                seen[alloc.alloc_id] = alloc
            elif (prior.base_va, prior.length_bytes) != (alloc.base_va, alloc.length_bytes):
                raise ValidationError(
                    f"allocation {alloc.alloc_id} changes shape across snapshots"
                )
            tasks.append((alloc.alloc_id, buf))

    def classify(task):
        alloc_id, buf = task
        codes = batch.classify_blocks(buf)
        return alloc_id, np.bincount(codes, minlength=len(SizeClass))

    with ThreadPoolExecutor(max_workers=_worker_count()) as pool:
        results = list(pool.map(classify, tasks))

    bins: Dict[int, np.ndarray] = {}
    snaps_seen: Dict[int, int] = {}
    for alloc_id, counts in results:
        if alloc_id in bins:
            bins[alloc_id] += counts
            snaps_seen[alloc_id] += 1
        else:
            bins[alloc_id] = counts.copy()
            snaps_seen[alloc_id] = 1

    out = {}
    for alloc_id in sorted(bins):
        counts = bins[alloc_id]
        out[alloc_id] = CompressibilityHistogram(
            alloc_id=alloc_id,
            counts={sc: int(counts[sc]) for sc in SizeClass},
            sample_count=int(counts.sum()),
            entries=seen[alloc_id].num_entries,
            snapshots_seen=snaps_seen[alloc_id],
        )
    return out


def overflow_fraction(hist: CompressibilityHistogram, candidate: TargetRatio) -> float:
    """Fraction of samples that would need buddy accesses at this target."""
    if hist.sample_count == 0:
        return 0.0
    if candidate is TargetRatio.R1:
        return 0.0
    if candidate is TargetRatio.R16ZERO:
        spill = hist.sample_count - hist.counts[SizeClass.FITS_8B]
    else:
        ds = candidate.device_sectors
        spill = sum(n for sc, n in hist.counts.items() if sc.sectors > ds)
    return spill / hist.sample_count


@dataclass(frozen=True)
class ThresholdConfig:
    buddy_threshold: float = 0.30
    zero_mode_enabled: bool = True
    carveout_cap: float = 4.0

    def __post_init__(self):
        if not 0.0 <= self.buddy_threshold <= 1.0:
            raise ConfigError(f"buddy threshold {self.buddy_threshold} not in [0, 1]")
        if self.carveout_cap <= 0:
            raise ConfigError("carve-out cap must be positive")


@dataclass
class ProfileResult:
    threshold: float
    targets: Dict[int, TargetRatio]
    overflow: Dict[int, Dict[TargetRatio, float]]
    predicted_ratio: float
    predicted_buddy_fraction: float

    def to_json_dict(self) -> dict:
        return {
            "threshold": self.threshold,
            "allocations": [
                {
                    "alloc_id": alloc_id,
                    "target": self.targets[alloc_id].value,
                    "overflow": {t.value: self.overflow[alloc_id][t] for t in TargetRatio},
                }
                for alloc_id in sorted(self.targets)
            ],
            "predicted_ratio": self.predicted_ratio,
            "predicted_buddy_fraction": self.predicted_buddy_fraction,
        }


def targets_from_json_dict(doc: Mapping) -> Dict[int, TargetRatio]:
    """Accept either a ProfileResult document or a bare {alloc_id: name} map."""
    from .memory import TARGET_BY_NAME

    try:
        if "allocations" in doc:
            return {
                int(entry["alloc_id"]): TARGET_BY_NAME[entry["target"]]
                for entry in doc["allocations"]
            }
        return {int(k): TARGET_BY_NAME[v] for k, v in doc.items()}
    except KeyError as exc:
        raise ConfigError(f"unknown target ratio name {exc}") from None
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"malformed targets document: {exc}") from None


def predicted_ratio(
    hists: Mapping[int, CompressibilityHistogram], targets: Mapping[int, TargetRatio]
) -> float:
    logical = sum(h.footprint_bytes for h in hists.values())
    reserved = sum(h.entries * targets[a].device_bytes for a, h in hists.items())
    if reserved == 0:
        raise ConfigError("no entries to profile")
    return logical / reserved


def predicted_buddy_fraction(
    hists: Mapping[int, CompressibilityHistogram], targets: Mapping[int, TargetRatio]
) -> float:
    samples = sum(h.sample_count for h in hists.values())
    if samples == 0:
        return 0.0
    spill = sum(
        overflow_fraction(h, targets[a]) * h.sample_count for a, h in hists.items()
    )
    return spill / samples


def enforce_carveout_cap(
    targets: Mapping[int, TargetRatio],
    hists: Mapping[int, CompressibilityHistogram],
    cap: float = 4.0,
) -> Dict[int, TargetRatio]:
    """Demote zero-mode allocations (largest footprint first) until the
    overall ratio fits the carve-out. Without zero mode the ratio cannot
    exceed 4, so the loop always terminates."""
    out = dict(targets)
    while predicted_ratio(hists, out) > cap:
        zero_mode = [a for a, t in out.items() if t is TargetRatio.R16ZERO]
        if not zero_mode:
            break
        victim = max(zero_mode, key=lambda a: (hists[a].footprint_bytes, -a))
        out[victim] = TargetRatio.R4
    return out


def select_targets(
    hists: Mapping[int, CompressibilityHistogram],
    cfg: ThresholdConfig = ThresholdConfig(),
) -> ProfileResult:
    """Pick the highest-ratio admissible target per allocation.

    Pure function of (histograms, config): repeated calls give identical
    results.
    """
    if not hists:
        raise ConfigError("no histograms to select targets from")

    overflow: Dict[int, Dict[TargetRatio, float]] = {}
    targets: Dict[int, TargetRatio] = {}
    for alloc_id, hist in hists.items():
        fractions = {t: overflow_fraction(hist, t) for t in TargetRatio}
        overflow[alloc_id] = fractions

        choice = TargetRatio.R1
        for cand in NORMAL_TARGETS:
            if fractions[cand] <= cfg.buddy_threshold:
                choice = cand
        if cfg.zero_mode_enabled and fractions[TargetRatio.R16ZERO] <= cfg.buddy_threshold:
            choice = TargetRatio.R16ZERO
        targets[alloc_id] = choice

    targets = enforce_carveout_cap(targets, hists, cfg.carveout_cap)
    return ProfileResult(
        threshold=cfg.buddy_threshold,
        targets=targets,
        overflow=overflow,
        predicted_ratio=predicted_ratio(hists, targets),
        predicted_buddy_fraction=predicted_buddy_fraction(hists, targets),
    )


@dataclass(frozen=True)
class SweepPoint:
    threshold: float
    predicted_ratio: float
    predicted_buddy_fraction: float


@dataclass
class SweepResult:
    points: List[SweepPoint]
    unconstrained_ratio: float      # best ratio with no limit on buddy accesses

    def to_json_dict(self) -> dict:
        return {
            "sweep": [
                {
                    "threshold": p.threshold,
                    "predicted_ratio": p.predicted_ratio,
                    "predicted_buddy_fraction": p.predicted_buddy_fraction,
                }
                for p in self.points
            ],
            "unconstrained_ratio": self.unconstrained_ratio,
        }


def sweep_thresholds(
    hists: Mapping[int, CompressibilityHistogram],
    thresholds: Iterable[float],
    zero_mode_enabled: bool = True,
    carveout_cap: float = 4.0,
) -> SweepResult:
    thresholds = list(thresholds)
    if not thresholds:
        raise ConfigError("no thresholds to sweep")
    points = []
    for t in thresholds:
        res = select_targets(
            hists,
            ThresholdConfig(buddy_threshold=t, zero_mode_enabled=zero_mode_enabled,
                            carveout_cap=carveout_cap),
        )
        points.append(SweepPoint(t, res.predicted_ratio, res.predicted_buddy_fraction))
    best = select_targets(
        hists,
        ThresholdConfig(buddy_threshold=1.0, zero_mode_enabled=zero_mode_enabled,
                        carveout_cap=carveout_cap),
    )
    return SweepResult(points=points, unconstrained_ratio=best.predicted_ratio)
