#!/usr/bin/env python3
"""Render a latency CSV report (from `iohrt bench latency --out`) as
per-path terminal histograms with the summary stats alongside.

Usage:
    iohrt bench latency --path stream --path datagram --n 200 --out lat.csv
    python scripts/latency_histogram.py lat.csv [--bins 12] [--width 50]
"""

from __future__ import annotations

import argparse
import sys

from iohrt.latencybench import parse_report


def histogram(values: list[float], bins: int, width: int) -> list[str]:
    lo, hi = min(values), max(values)
    span = hi - lo or 1e-9
    counts = [0] * bins
    for v in values:
        index = min(int((v - lo) / span * bins), bins - 1)
        counts[index] += 1
    peak = max(counts)
    lines = []
    for i, count in enumerate(counts):
        left = lo + span * i / bins
        right = lo + span * (i + 1) / bins
        bar = "#" * round(count / peak * width) if peak else ""
        lines.append(f"  {left:9.3f} - {right:9.3f} ms |{bar:<{width}} {count}")
    return lines


def main(argv: list[str]) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("report", help="CSV report file, or - for stdin")
    parser.add_argument("--bins", type=int, default=12)
    parser.add_argument("--width", type=int, default=50)
    args = parser.parse_args(argv)

    text = sys.stdin.read() if args.report == "-" else open(args.report).read()
    try:
        report = parse_report(text)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    for path in sorted(report.samples):
        stats = report.stats(path)
        print(f"{path}: {stats['received']}/{stats['requested']} probes"
              + (f", {stats['lost']} lost" if stats["lost"] else ""))
        if not report.samples[path]:
            print("  (no samples)\n")
            continue
        print("  " + "  ".join(
            f"{key[:-3]}={stats[key]:.3f}ms"
            for key in ("min_ms", "p50_ms", "p95_ms", "p99_ms", "max_ms")))
        values = [ms for _, ms in report.samples[path]]
        print("\n".join(histogram(values, args.bins, args.width)))
        print()
    return 0


if __name__ == "__main__":
    sys.exit(main(sys.argv[1:]))
