#!/usr/bin/env python3
"""Managed inference demo: encrypted model and input, encrypted output.

Stands up a complete deployment in-process, provisions encrypted volumes
with policy-generated keys, runs the attested inference app, and decrypts
the produced output on the owner side.
"""

import argparse
import sys

from teeguard.cli import main as cli_main


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--workdir", default=None, help="keep artifacts here instead of a temp dir")
    parser.add_argument("--json", action="store_true")
    args = parser.parse_args()
    argv = (["--json"] if args.json else []) + ["run-demo", "ml"]
    if args.workdir:
        argv += ["--workdir", args.workdir]
    return cli_main(argv)


if __name__ == "__main__":
    sys.exit(main())
