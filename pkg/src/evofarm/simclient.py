"""Native stand-in for browser clients.

Runs the fetch-evaluate-submit loop against a live server, pacing real
evaluations down to a nominal chromosomes/second rate and injecting
artificial per-request latency, so throughput experiments run without
browsers.  A swarm launches several such clients concurrently with a
configurable stagger.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
import threading
import time
from dataclasses import dataclass, field
from typing import Optional

import requests

from . import evocore, protocol

RETRY_ATTEMPTS = 3
RETRY_BACKOFF_S = 0.25
NO_WORK_PAUSE_S = 0.1


@dataclass(frozen=True)
class ClientProfile:
    """Simulated hardware: how fast it evaluates, how far away it sits."""

    eval_rate: float  # chromosomes per second
    extra_latency: float = 0.0  # milliseconds added per request
    label: str = "client"

    def __post_init__(self):
        if self.eval_rate <= 0:
            raise ValueError("eval_rate must be positive")
        if self.extra_latency < 0:
            raise ValueError("extra_latency must be >= 0")


@dataclass
class ClientReport:
    label: str
    packets_completed: int = 0
    chromosomes_evaluated: int = 0
    wall_seconds: float = 0.0
    started_at: float = 0.0
    finished_at: float = 0.0
    error: Optional[str] = None

    @property
    def observed_rate(self) -> float:
        return (
            self.chromosomes_evaluated / self.wall_seconds
            if self.wall_seconds > 0
            else 0.0
        )


class ClientAbort(RuntimeError):
    """Server unreachable after bounded retries; carries the partial report."""

    def __init__(self, message: str, report: ClientReport):
        super().__init__(message)
        self.report = report


def _request_with_retries(send, report: ClientReport):
    delay = RETRY_BACKOFF_S
    for attempt in range(RETRY_ATTEMPTS):
        try:
            return send()
        except requests.RequestException as exc:
            if attempt == RETRY_ATTEMPTS - 1:
                raise ClientAbort(f"server unreachable: {exc}", report) from exc
            time.sleep(delay)
            delay *= 2


def _evaluate_packet(
    packet: protocol.Packet, profile: ClientProfile
) -> protocol.ResultSubmission:
    """Really evaluate every chromosome, then sleep off the difference
    between real speed and the profile's nominal speed."""
    t0 = time.perf_counter()
    results = tuple(
        (ind_id, evocore.evaluate(chromosome, packet.problem))
        for ind_id, chromosome in packet.individuals
    )
    nominal = len(packet.individuals) / profile.eval_rate
    deficit = nominal - (time.perf_counter() - t0)
    if deficit > 0:
        time.sleep(deficit)
    return protocol.ResultSubmission(packet_id=packet.packet_id, results=results)


def run_client(
    server_address: str,
    algorithm_id: str,
    profile: ClientProfile,
    session: Optional[requests.Session] = None,
) -> ClientReport:
    """Loop fetch -> evaluate -> submit until the server says finished.

    Lease expiry causes a refetch; transient 503 (nothing dispatchable yet)
    causes a short pause and retry; network errors abort after bounded
    retries with the partial report attached.
    """
    base = server_address.rstrip("/")
    own_session = session is None
    sess = session or requests.Session()
    headers = {"X-Client-Label": profile.label}
    report = ClientReport(label=profile.label)
    latency_s = profile.extra_latency / 1000.0

    def fetch_first() -> requests.Response:
        if latency_s:
            time.sleep(latency_s)
        return sess.get(
            f"{base}/algorithm/{algorithm_id}/packet", headers=headers, timeout=30
        )

    def submit(body: bytes) -> requests.Response:
        if latency_s:
            time.sleep(latency_s)
        return sess.post(
            f"{base}/algorithm/{algorithm_id}/results",
            data=body,
            headers=dict(headers, **{"Content-Type": "application/json"}),
            timeout=30,
        )

    report.started_at = time.time()
    t0 = time.perf_counter()
    try:
        reply = _next_reply(fetch_first, report)
        while reply.status == "continue":
            submission = _evaluate_packet(reply.next_packet, profile)
            body = protocol.encode_submission(submission)
            response = _request_with_retries(lambda: submit(body), report)
            while response.status_code == 503:
                time.sleep(NO_WORK_PAUSE_S)
                response = _request_with_retries(lambda: submit(body), report)
            if response.status_code == 409:
                # Lease expired under us; the packet's work is lost.
                reply = _next_reply(fetch_first, report)
                continue
            if response.status_code != 200:
                raise ClientAbort(
                    f"submit rejected: {response.status_code} {response.text}",
                    report,
                )
            reply = protocol.decode_loop_reply(response.content)
            if _submission_counted(reply):
                report.packets_completed += 1
                report.chromosomes_evaluated += len(submission.results)
    finally:
        report.wall_seconds = time.perf_counter() - t0
        report.finished_at = time.time()
        if own_session:
            sess.close()
    return report


def _submission_counted(reply: protocol.LoopReply) -> bool:
    if reply.status == "finished" and reply.run_summary is not None:
        return reply.run_summary.get("ingested", True)
    return True


def _next_reply(fetch, report: ClientReport) -> protocol.LoopReply:
    while True:
        response = _request_with_retries(fetch, report)
        if response.status_code == 503:
            time.sleep(NO_WORK_PAUSE_S)
            continue
        if response.status_code != 200:
            raise ClientAbort(
                f"fetch rejected: {response.status_code} {response.text}", report
            )
        return protocol.decode_loop_reply(response.content)


def run_swarm(
    server_address: str,
    algorithm_id: str,
    profiles: list,
    stagger_seconds: float = 0.0,
) -> tuple:
    """Launch one client per profile, the i-th delayed i*stagger_seconds.

    Returns (reports, aggregate_rate); a client abort lands in its report's
    error field and never takes down its siblings.
    """
    if not profiles:
        raise ValueError("need at least one profile")
    reports: list = [None] * len(profiles)

    def worker(i: int, profile: ClientProfile) -> None:
        if stagger_seconds and i:
            time.sleep(stagger_seconds * i)
        try:
            reports[i] = run_client(server_address, algorithm_id, profile)
        except ClientAbort as exc:
            exc.report.error = str(exc)
            reports[i] = exc.report

    threads = [
        threading.Thread(target=worker, args=(i, p), name=f"simclient-{p.label}")
        for i, p in enumerate(profiles)
    ]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    total = sum(r.chromosomes_evaluated for r in reports)
    first_start = min(r.started_at for r in reports)
    last_finish = max(r.finished_at for r in reports)
    span = last_finish - first_start
    aggregate_rate = total / span if span > 0 else 0.0
    return reports, aggregate_rate


def write_reports_csv(reports: list, out=sys.stdout) -> None:
    writer = csv.writer(out)
    writer.writerow(
        ["label", "packets_completed", "chromosomes_evaluated", "wall_seconds",
         "observed_rate", "error"]
    )
    for r in reports:
        writer.writerow(
            [r.label, r.packets_completed, r.chromosomes_evaluated,
             f"{r.wall_seconds:.6f}", f"{r.observed_rate:.6f}", r.error or ""]
        )


def load_profiles(path: str) -> list:
    """Profiles file: one JSON object per line."""
    profiles = []
    with open(path, "r", encoding="utf-8") as fh:
        for n, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            profiles.append(
                ClientProfile(
                    eval_rate=float(obj["eval_rate"]),
                    extra_latency=float(obj.get("extra_latency", 0.0)),
                    label=obj.get("label", f"client-{n}"),
                )
            )
    return profiles


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="simclient", description="Simulated evaluation clients."
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run a single client")
    run_p.add_argument("--server", required=True)
    run_p.add_argument("--algorithm", required=True)
    run_p.add_argument("--eval-rate", type=float, default=1e9)
    run_p.add_argument("--latency", type=float, default=0.0, help="ms per request")
    run_p.add_argument("--label", default="client")

    swarm_p = sub.add_parser("swarm", help="run several clients concurrently")
    swarm_p.add_argument("--server", required=True)
    swarm_p.add_argument("--algorithm", required=True)
    swarm_p.add_argument("--profiles", required=True, help="JSON-lines file")
    swarm_p.add_argument("--stagger", type=float, default=0.0)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "run":
        profile = ClientProfile(
            eval_rate=args.eval_rate, extra_latency=args.latency, label=args.label
        )
        try:
            report = run_client(args.server, args.algorithm, profile)
        except ClientAbort as exc:
            exc.report.error = str(exc)
            write_reports_csv([exc.report])
            return 1
        write_reports_csv([report])
        return 0
    profiles = load_profiles(args.profiles)
    reports, aggregate = run_swarm(
        args.server, args.algorithm, profiles, args.stagger
    )
    write_reports_csv(reports)
    print(f"# aggregate_rate={aggregate:.6f}")
    return 0 if all(r.error is None for r in reports) else 1


if __name__ == "__main__":
    sys.exit(main())
