"""Command-line front end.

Subcommands: stats, heatmap, profile, simulate, gen, codec. Exit codes:
0 success, 1 validation or usage error, 2 I/O or file-format error,
3 internal invariant violation (failed self-check).

Set BUDDY_SIM_THREADS to cap profiling worker parallelism. Every subcommand
is deterministic given its flags and seed.
"""

import argparse
import csv
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import batch, codec, generator, memory, profiler, simulator
from .errors import (
    BuddySimError,
    CodecDecodeError,
    ConfigError,
    SnapshotFormatError,
    ValidationError,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_IO = 2
EXIT_INTERNAL = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _dump_json(doc, path) -> None:
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _load_series(paths):
    return memory.load_series([Path(p) for p in paths])


# --- stats -------------------------------------------------------------------

def _bucket_stats(snapshot):
    """(entries, bucket_bytes) per allocation under 8-bucket accounting."""
    out = {}
    for alloc, buf in zip(snapshot.allocations, snapshot.data):
        buckets = batch.size_buckets(buf)
        out[alloc.alloc_id] = (alloc.num_entries, int(buckets.sum(dtype=np.int64)))
    return out

def _ratio_str(logical, stored):
    if stored == 0:
        return "∞ (all-zero)"
    return f"{logical / stored:.4f}"


def cmd_stats(args) -> int:
    snapshots = _load_series(args.snapshots)
    rows = []           # (snapshot_label, alloc_label, entries, bucket_bytes)
    per_snap_ratio = []

    alloc_totals = {}
    for snap in snapshots:
        stats = _bucket_stats(snap)
        entries = sum(e for e, _ in stats.values())
        stored = sum(s for _, s in stats.values())
        for alloc_id, (e, s) in sorted(stats.items()):
            rows.append((str(snap.index), str(alloc_id), e, s))
            acc = alloc_totals.setdefault(alloc_id, [0, 0])
            acc[0] += e
            acc[1] += s
        rows.append((str(snap.index), "ALL", entries, stored))
        per_snap_ratio.append((entries * codec.BLOCK_BYTES, stored))

    print("snapshot statistics (optimistic 8-bucket accounting)")
    for snap, (logical, stored) in zip(snapshots, per_snap_ratio):
        print(f"  snapshot {snap.index}: ratio {_ratio_str(logical, stored)} "
              f"({logical // codec.BLOCK_BYTES} entries)")
    print("per-allocation, whole series:")
    for alloc_id, (e, s) in sorted(alloc_totals.items()):
        print(f"  alloc {alloc_id}: ratio {_ratio_str(e * codec.BLOCK_BYTES, s)}")

    finite = [l / s for l, s in per_snap_ratio if s > 0]
    if len(finite) == len(per_snap_ratio):
        mean = sum(finite) / len(finite)
        print(f"mean ratio over {len(finite)} snapshots: {mean:.4f}")
        mean_field = f"{mean:.9f}"
    else:
        print("mean ratio over snapshots: ∞ (all-zero snapshots present)")
        mean_field = ""

    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["snapshot", "alloc_id", "entries", "bucket_bytes", "ratio"])
            for snap_label, alloc_label, e, s in rows:
                ratio = f"{e * codec.BLOCK_BYTES / s:.9f}" if s else ""
                writer.writerow([snap_label, alloc_label, e, s, ratio])
            writer.writerow(["mean", "ALL", "", "", mean_field])
    return EXIT_OK


# --- heatmap -----------------------------------------------------------------

def cmd_heatmap(args) -> int:
    snap = memory.load_snapshot(args.snapshot)
    matrix = memory.heatmap_matrix(snap)

    csv_path = Path(f"{args.out}.csv")
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        for row in matrix:
            writer.writerow([int(v) for v in row])

    pgm_path = Path(f"{args.out}.pgm")
    with open(pgm_path, "wb") as fh:
        fh.write(f"P5\n{matrix.shape[1]} {matrix.shape[0]}\n4\n".encode())
        fh.write(matrix.astype(np.uint8).tobytes())

    print(f"wrote {csv_path} and {pgm_path} ({matrix.shape[0]} pages x 64 entries)")
    return EXIT_OK


# --- profile -----------------------------------------------------------------

def cmd_profile(args) -> int:
    if not 0.0 <= args.threshold <= 1.0:
        raise ValidationError(f"threshold {args.threshold} not in [0, 1]")
    snapshots = _load_series(args.snapshots)
    hists = profiler.build_histograms(snapshots)
    cfg = profiler.ThresholdConfig(
        buddy_threshold=args.threshold,
        zero_mode_enabled=not args.no_zero_mode,
        carveout_cap=args.cap,
    )
    result = profiler.select_targets(hists, cfg)
    doc = result.to_json_dict()

    if args.sweep:
        try:
            thresholds = [float(t) for t in args.sweep.split(",") if t.strip()]
        except ValueError:
            raise ValidationError(f"--sweep wants comma-separated numbers, got {args.sweep!r}")
        sweep = profiler.sweep_thresholds(
            hists, thresholds,
            zero_mode_enabled=not args.no_zero_mode, carveout_cap=args.cap,
        )
        doc.update(sweep.to_json_dict())

    _dump_json(doc, args.out)
    print(f"profiled {len(snapshots)} snapshots, {len(hists)} allocations")
    print(f"predicted ratio {result.predicted_ratio:.4f}, "
          f"buddy fraction {result.predicted_buddy_fraction:.4%}")
    print(f"wrote {args.out}")
    return EXIT_OK


# --- simulate ----------------------------------------------------------------

def cmd_simulate(args) -> int:
    snap = memory.load_snapshot(args.snapshot)
    with open(args.targets) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{args.targets}: not valid JSON: {exc}")
    targets = profiler.targets_from_json_dict(doc)
    trace = simulator.load_trace(args.trace, fmt=args.trace_format)

    cache_cfg = simulator.MetadataCacheConfig(total_bytes=args.metadata_cache_kb * 1024)
    cost_cfg = simulator.CostModelParams(
        device_gbps=args.device_gbps, link_gbps=args.link_gbps
    )
    report = simulator.run_trace(snap, targets, trace, cache_cfg, cost_cfg)

    _dump_json(report.to_json_dict(windows=args.windows), args.out)
    if args.windows_csv:
        rows = simulator.timeseries_report(report, args.windows)
        simulator.windows_to_csv(rows, args.windows_csv)

    print(f"replayed {report.event_count} events / "
          f"{report.counters.entry_accesses} entry accesses")
    print(f"buddy access fraction {report.buddy_access_fraction:.4%}, "
          f"metadata hit rate {report.metadata_hit_rate:.4%}")
    print(f"estimated slowdown {report.estimated_slowdown:.4f}")
    print(f"wrote {args.out}")
    return EXIT_OK


# --- gen ---------------------------------------------------------------------

def cmd_gen(args) -> int:
    try:
        fractions = [float(x) for x in args.mix.split(":")]
    except ValueError:
        raise ValidationError(f"--mix wants three fractions, got {args.mix!r}")
    if len(fractions) != 3:
        raise ValidationError("--mix wants three fractions, zero:ramp:random")
    mix = list(zip(("zero", "ramp", "random"), fractions))
    gen = generator.generate_series(
        entries=args.entries, mix=mix, snapshots=args.snapshots,
        drift=args.drift, seed=args.seed, allocs=args.allocs,
    )
    paths = memory.write_series(gen.snapshots, args.out_stem)
    manifest_path = Path(f"{args.out_stem}.manifest.csv")
    generator.write_manifest_csv(gen.manifest, manifest_path)
    if args.trace_out:
        simulator.write_trace_csv(
            simulator.one_touch_trace(gen.snapshots[0]), args.trace_out
        )
    print(f"wrote {len(paths)} snapshots to {args.out_stem}.*.snap")
    print(f"wrote {manifest_path}")
    if args.trace_out:
        print(f"wrote {args.trace_out}")
    return EXIT_OK


# --- codec -------------------------------------------------------------------

def cmd_codec(args) -> int:
    if args.roundtrip:
        data = Path(args.roundtrip).read_bytes()
        if not data or len(data) % codec.BLOCK_BYTES:
            raise ValidationError(
                f"{args.roundtrip}: length {len(data)} is not a positive "
                "multiple of 128"
            )
        words = batch.words_matrix(data)
        streams, lengths = batch.compress_many(words)
        try:
            decoded = batch.decompress_many(streams, lengths)
        except CodecDecodeError as exc:
            print(f"FAIL: decode error: {exc}", file=sys.stderr)
            return EXIT_INTERNAL
        if not np.array_equal(decoded, words):
            bad = int(np.argmax((decoded != words).any(axis=1)))
            print(f"FAIL: block {bad} did not roundtrip", file=sys.stderr)
            return EXIT_INTERNAL
        ratio = len(data) / (int(lengths.sum(dtype=np.int64)) / 8)
        print(f"PASS: {words.shape[0]} blocks roundtrip ({ratio:.3f}x raw bitstream ratio)")
        return EXIT_OK

    corpus = generator.codec_test_corpus(seed=args.seed, random_blocks=args.blocks)
    batch.compress_many(corpus[:256])          # JIT warmup before timing
    started = time.perf_counter()
    streams, lengths = batch.compress_many(corpus)
    compress_seconds = time.perf_counter() - started
    try:
        decoded = batch.decompress_many(streams, lengths)
    except CodecDecodeError as exc:
        print(f"FAIL: decode error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    if not np.array_equal(decoded, corpus):
        print("FAIL: batch roundtrip mismatch", file=sys.stderr)
        return EXIT_INTERNAL

    # scalar spot-check against the batch path
    rng = np.random.default_rng(args.seed)
    for i in (int(x) for x in rng.integers(0, corpus.shape[0], size=32)):
        cb = codec.compress_block([int(w) for w in corpus[i]])
        nbytes = (int(lengths[i]) + 7) // 8
        if cb.bit_length != int(lengths[i]) or cb.data != streams[i, :nbytes].tobytes():
            print(f"FAIL: scalar/batch divergence at block {i}", file=sys.stderr)
            return EXIT_INTERNAL

    mbps = corpus.nbytes / 1e6 / compress_seconds
    print(f"PASS: {corpus.shape[0]} blocks roundtrip, compress {mbps:.0f} MB/s")
    return EXIT_OK


# --- wiring --------------------------------------------------------------------

def build_parser() -> _Parser:
    parser = _Parser(prog="buddysim",
                     description="compressed-memory snapshot analysis and replay")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("stats", help="8-bucket compression statistics for a snapshot series")
    p.add_argument("snapshots", nargs="+", help="snapshot files, series order")
    p.add_argument("--csv", help="also write per-snapshot/per-allocation CSV")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("heatmap", help="per-page compressibility heatmap (CSV + PGM)")
    p.add_argument("snapshot")
    p.add_argument("--out", required=True, help="output stem; writes OUT.csv and OUT.pgm")
    p.set_defaults(func=cmd_heatmap)

    p = sub.add_parser("profile", help="choose per-allocation target ratios")
    p.add_argument("snapshots", nargs="+")
    p.add_argument("--threshold", type=float, default=0.30,
                   help="buddy threshold (default 0.30)")
    p.add_argument("--sweep", help="comma-separated extra thresholds to sweep")
    p.add_argument("--no-zero-mode", action="store_true",
                   help="disable the 16x mostly-zero mode")
    p.add_argument("--cap", type=float, default=4.0,
                   help="carve-out cap on the overall ratio (default 4.0)")
    p.add_argument("--out", required=True, help="profile result JSON path")
    p.set_defaults(func=cmd_profile)

    p = sub.add_parser("simulate", help="replay an access trace over a snapshot")
    p.add_argument("--snapshot", required=True)
    p.add_argument("--targets", required=True,
                   help="profile JSON or {alloc_id: ratio} mapping")
    p.add_argument("--trace", required=True)
    p.add_argument("--trace-format", choices=("auto", "csv", "bin"), default="auto")
    p.add_argument("--link-gbps", type=float, default=150.0)
    p.add_argument("--device-gbps", type=float, default=900.0)
    p.add_argument("--metadata-cache-kb", type=int, default=64)
    p.add_argument("--windows", type=int, default=10)
    p.add_argument("--windows-csv", help="also write the per-window series as CSV")
    p.add_argument("--out", required=True, help="report JSON path")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("gen", help="generate a synthetic snapshot series + manifest")
    p.add_argument("--entries", type=int, required=True)
    p.add_argument("--mix", default="0.4:0.3:0.3",
                   help="zero:ramp:random fractions (default 0.4:0.3:0.3)")
    p.add_argument("--snapshots", type=int, default=1)
    p.add_argument("--drift", type=float, default=0.0,
                   help="fraction of entries changing class per snapshot step")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--allocs", type=int, default=1)
    p.add_argument("--out-stem", required=True)
    p.add_argument("--trace-out", help="also write a one-touch read trace (CSV)")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("codec", help="codec self-test / file roundtrip check")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--selftest", action="store_true")
    group.add_argument("--roundtrip", help="roundtrip every 128B block of a file")
    p.add_argument("--blocks", type=int, default=100_000,
                   help="random blocks for --selftest (default 100000)")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_codec)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except SnapshotFormatError as exc:
        print(f"buddysim: format error: {exc}", file=sys.stderr)
        return EXIT_IO
    except OSError as exc:
        print(f"buddysim: i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ValidationError, ConfigError) as exc:
        print(f"buddysim: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except BuddySimError as exc:
        print(f"buddysim: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except AssertionError as exc:                 # pragma: no cover
        print(f"buddysim: internal invariant violated: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
