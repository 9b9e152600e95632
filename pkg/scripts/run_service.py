#!/usr/bin/env python3
"""Start (initializing if needed) a deployment and serve until SIGTERM."""

import argparse
import sys
from pathlib import Path

from teeguard.cli import main as cli_main
from teeguard.deploy import Deployment


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--deployment", default="./deployment")
    parser.add_argument("--data-dir", default=None)
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=0)
    args = parser.parse_args()

    if not (Path(args.deployment) / "deployment.json").exists():
        Deployment.init(args.deployment)
        print(f"initialized deployment at {args.deployment}")
    argv = ["--deployment", args.deployment, "serve", "--host", args.host, "--port", str(args.port)]
    if args.data_dir:
        argv += ["--data-dir", args.data_dir]
    return cli_main(argv)


if __name__ == "__main__":
    sys.exit(main())
