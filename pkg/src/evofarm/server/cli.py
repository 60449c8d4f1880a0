"""Server command line."""
from __future__ import annotations

import argparse
import os
import signal
import sys
import threading
from pathlib import Path

from .httpd import Allowlist, ServerApp, ServerHandle
from .logs import LogWriter, null_log


def build_parser() -> argparse.ArgumentParser:
    # Every flag falls back to an EVOFARM_* environment variable.
    env = os.environ
    parser = argparse.ArgumentParser(
        prog="evofarm-server",
        description="Evolutionary-computation master: owns populations, "
        "farms fitness evaluation out to HTTP clients.",
    )
    parser.add_argument("--host", default=env.get("EVOFARM_HOST", "127.0.0.1"))
    parser.add_argument(
        "--port", type=int, default=int(env.get("EVOFARM_PORT", 3000))
    )
    parser.add_argument(
        "--allowlist", type=Path,
        default=Path(env["EVOFARM_ALLOWLIST"]) if "EVOFARM_ALLOWLIST" in env else None,
        help="text file of client IP patterns; omit to allow any client",
    )
    parser.add_argument(
        "--log-mode", choices=["quiet", "debug"],
        default=env.get("EVOFARM_LOG_MODE", "quiet"),
    )
    parser.add_argument(
        "--log-file", type=Path,
        default=Path(env["EVOFARM_LOG_FILE"]) if "EVOFARM_LOG_FILE" in env else None,
        help="where run logs go; omit to disable logging entirely",
    )
    parser.add_argument(
        "--journal-dir", type=Path,
        default=Path(env.get("EVOFARM_JOURNAL_DIR", "journals")),
    )
    parser.add_argument(
        "--lease-seconds", type=int,
        default=int(env.get("EVOFARM_LEASE_SECONDS", 120)),
    )
    parser.add_argument(
        "--service-delay-ms", type=float, default=0.0,
        help="artificial delay inside the per-algorithm critical section, "
        "for scaling experiments",
    )
    parser.add_argument(
        "--assets", type=Path,
        default=Path(env["EVOFARM_ASSETS"]) if "EVOFARM_ASSETS" in env else None,
        help="directory with the built browser worker page (index.html + js)",
    )
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    log = (
        LogWriter(args.log_file, args.log_mode)
        if args.log_file is not None
        else null_log()
    )
    app = ServerApp(
        journal_dir=args.journal_dir,
        allowlist=Allowlist.load(args.allowlist),
        log=log,
        lease_seconds=args.lease_seconds,
        service_delay_ms=args.service_delay_ms,
        assets_dir=args.assets,
    )
    handle = ServerHandle(app, host=args.host, port=args.port)
    print(f"evofarm server listening on {handle.address}", flush=True)
    stop = threading.Event()
    for sig in (signal.SIGINT, signal.SIGTERM):
        signal.signal(sig, lambda *_: stop.set())
    try:
        stop.wait()
    finally:
        handle.close()
    return 0


if __name__ == "__main__":
    sys.exit(main())
