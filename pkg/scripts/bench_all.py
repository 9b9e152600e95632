#!/usr/bin/env python3
"""Run the counter, attestation, and approval micro-benchmarks.

Writes one CSV per benchmark into --out and prints the summaries. Absolute
numbers are hardware-dependent; the meaningful results are the orderings
(platform counter cap, shield advantage, local-vs-delayed attestation,
saturation knee, RTT-dominated approval latency).
"""

import argparse
import sys
from pathlib import Path

from teeguard.cli import run_bench


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="bench-results")
    parser.add_argument("--duration", type=float, default=1.0)
    args = parser.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for which in ("counters", "attestation", "approval"):
        print(f"=== {which} ===")
        result = run_bench(which, duration=args.duration, csv_path=out / f"{which}.csv")
        print(result["text"])
        print()
    print(f"CSV written under {out}/")
    return 0


if __name__ == "__main__":
    sys.exit(main())
