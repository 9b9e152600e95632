#!/usr/bin/env python3
"""Run one board member's approval daemon.

Generates a member key on first use and prints the certificate to put in
policy board definitions.
"""

import argparse
import sys
import time
from pathlib import Path

from teeguard.approval import ApprovalService, rule_from_spec
from teeguard.crypto import SigningKeyPair


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--key-file", default="member.key", help="hex private key (created if missing)")
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=0)
    parser.add_argument("--rule", default="allow-all", choices=["allow-all", "deny-all", "interactive"])
    parser.add_argument("--client-ca", default=None, help="PEM of the CA client certs must chain to")
    args = parser.parse_args()

    key_path = Path(args.key_file)
    if not key_path.exists():
        key_path.write_text(SigningKeyPair.generate().private_bytes().hex())
        print(f"generated member key at {key_path}")
    member_key = SigningKeyPair.from_private_bytes(bytes.fromhex(key_path.read_text().strip()))
    client_ca = Path(args.client_ca).read_bytes() if args.client_ca else None
    service = ApprovalService(
        member_key,
        rule_from_spec({"type": args.rule}),
        host=args.host,
        port=args.port,
        require_client_ca_pem=client_ca,
    ).start()
    print(f"approval service listening on {service.url}")
    print(f"member certificate: {service.member_certificate}")
    try:
        while True:
            time.sleep(0.5)
    except KeyboardInterrupt:
        service.stop()
    return 0


if __name__ == "__main__":
    sys.exit(main())
