#!/usr/bin/env python3
"""
Query the run ledger.

Usage:
    python scripts/query_runs.py --db-path runs/ising5-cold-dual/runs.db              # Aggregates
    python scripts/query_runs.py --db-path runs/ising5-cold-dual/runs.db --sampler dual-gibbs
    python scripts/query_runs.py --db-path runs/ising5-cold-dual/runs.db --recent 5
    python scripts/query_runs.py --db-path runs/ising5-cold-dual/runs.db --export csv
"""
from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from datetime import datetime
from pathlib import Path

# Add parent directory to path
sys.path.insert(0, str(Path(__file__).parent.parent))

from modules.run_ledger import RunLedger


def format_stats(stats: list) -> None:
    print("=" * 72)
    print("Run ledger")
    print("=" * 72)
    for s in stats:
        spread = s["max_fe"] - s["min_fe"]
        print(
            f"{s['preset']:14} {s['sampler']:16} {s['runs']:>4} runs | "
            f"mean (1/N) log Z {s['mean_fe']:.6f} | spread {spread:.2e} | {s['avg_runtime_s']:.1f}s avg"
        )
    print()


def main() -> int:
    parser = argparse.ArgumentParser(description="Query the dualis run ledger")
    parser.add_argument(
        "--db-path",
        default=None,
        help="Path to runs.db (default: DUALIS_LEDGER or runs/runs.db)",
    )
    parser.add_argument("--sampler", help="Filter by sampler label, e.g. dual-is2")
    parser.add_argument("--preset", help="Filter by preset name")
    parser.add_argument("--export", choices=["csv", "json"], help="Export format")
    parser.add_argument("--output", help="Output file path (default: runs_export.csv/json)")
    parser.add_argument("--recent", type=int, default=0, help="Show N most recent runs")
    args = parser.parse_args()

    if args.db_path is None:
        args.db_path = os.environ.get("DUALIS_LEDGER", "runs/runs.db")
    if not os.path.exists(args.db_path):
        print(f"No ledger at {args.db_path}", file=sys.stderr)
        return 1

    ledger = RunLedger(db_path=args.db_path)
    try:
        if args.export:
            runs = ledger.get_recent_runs(limit=1_000_000)
            if args.sampler:
                runs = [r for r in runs if r["sampler"] == args.sampler]
            if args.preset:
                runs = [r for r in runs if r["preset"] == args.preset]
            output_path = args.output or f"runs_export.{args.export}"
            if args.export == "csv":
                with open(output_path, "w", newline="") as f:
                    if runs:
                        writer = csv.DictWriter(f, fieldnames=runs[0].keys())
                        writer.writeheader()
                        writer.writerows(runs)
            else:
                with open(output_path, "w") as f:
                    json.dump(runs, f, indent=2)
            print(f"Exported {len(runs)} runs to {output_path}")
        elif args.recent > 0:
            print(f"=== RECENT {args.recent} RUNS ===")
            for r in ledger.get_recent_runs(limit=args.recent):
                when = datetime.fromtimestamp(r["created_at"]).strftime("%Y-%m-%d %H:%M:%S")
                se = f"{r['std_err']:.2e}" if r["std_err"] is not None else "n/a"
                print(
                    f"{when} | {r['preset']} | {r['sampler']} | {r['rows']}x{r['cols']} {r['family']} | "
                    f"(1/N) log Z {r['free_energy_per_site']:.6f} | SE {se} | {r['runtime_s']:.1f}s"
                )
        else:
            format_stats(ledger.get_stats(sampler=args.sampler, preset=args.preset))
    finally:
        ledger.close()
    return 0


if __name__ == "__main__":
    sys.exit(main())
