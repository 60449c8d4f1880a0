"""Experiment orchestrator and analyst.

Reproduces the packet-size, client-scaling, and logging-overhead
experiments end to end against a live (usually self-managed) server, and
fits the linear throughput model rate = a + b * packet_size by ordinary
least squares.  Outputs are CSV tables, a fit JSON, and a plain-text
summary; plotting is somebody else's job.
"""
from __future__ import annotations

import argparse
import contextlib
import csv
import json
import math
import shutil
import statistics
import sys
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import requests
from scipy import stats as scipy_stats

from .server.httpd import ServerApp, ServerHandle
from .server.logs import LogWriter, null_log
from .simclient import ClientAbort, ClientProfile, run_client, run_swarm


class FitRefused(ValueError):
    """Design matrix is degenerate; no line can be estimated."""


class PlanError(ValueError):
    pass


@dataclass(frozen=True)
class LinearFit:
    intercept: float
    slope: float
    intercept_stderr: float
    slope_stderr: float
    r_squared: float

    def to_dict(self) -> dict:
        return {
            "intercept": self.intercept,
            "slope": self.slope,
            "intercept_stderr": self.intercept_stderr,
            "slope_stderr": self.slope_stderr,
            "r_squared": self.r_squared,
        }


def fit_linear(points: list) -> LinearFit:
    """Ordinary least squares of y on x with standard errors.

    Exact on noiseless collinear input; refuses fewer than 3 points or a
    single distinct x.
    """
    if len(points) < 3:
        raise FitRefused("need at least 3 points")
    xs = [float(x) for x, _ in points]
    ys = [float(y) for _, y in points]
    if len(set(xs)) < 2:
        raise FitRefused("need at least 2 distinct x values")
    n = len(xs)
    xbar = sum(xs) / n
    ybar = sum(ys) / n
    sxx = sum((x - xbar) ** 2 for x in xs)
    sxy = sum((x - xbar) * (y - ybar) for x, y in zip(xs, ys))
    slope = sxy / sxx
    intercept = ybar - slope * xbar
    ssr = sum((y - intercept - slope * x) ** 2 for x, y in zip(xs, ys))
    sst = sum((y - ybar) ** 2 for y in ys)
    dof = n - 2
    s2 = ssr / dof
    slope_stderr = math.sqrt(s2 / sxx)
    intercept_stderr = math.sqrt(s2 * (1.0 / n + xbar**2 / sxx))
    r_squared = 1.0 if sst == 0.0 else max(0.0, 1.0 - ssr / sst)
    return LinearFit(intercept, slope, intercept_stderr, slope_stderr, r_squared)


def extrapolate_packet_size(fit: LinearFit, target_rate: float) -> Optional[float]:
    """Packet size the fitted line predicts for a target rate; a model
    extrapolation, never a measurement."""
    if fit.slope == 0:
        return None
    return (target_rate - fit.intercept) / fit.slope


@dataclass
class ExperimentPlan:
    kind: str  # packet_sweep | scaling_sweep | logging_ab
    base_config: dict
    packet_sizes: list = field(default_factory=list)
    client_counts: list = field(default_factory=list)
    repetitions: int = 3
    profiles: list = field(default_factory=list)
    stagger_seconds: float = 0.0
    service_delay_ms: float = 0.0

    def __post_init__(self):
        kinds = ("packet_sweep", "scaling_sweep", "logging_ab")
        if self.kind not in kinds:
            raise PlanError(f"kind must be one of {kinds}")
        if self.kind == "packet_sweep" and not self.packet_sizes:
            raise PlanError("packet_sweep needs packet_sizes")
        if self.kind == "scaling_sweep" and not self.client_counts:
            raise PlanError("scaling_sweep needs client_counts")
        if self.kind in ("packet_sweep", "logging_ab") and self.repetitions < 3:
            # These feed a fit / a rank test; fewer repetitions are useless.
            raise PlanError(f"{self.kind} needs repetitions >= 3")
        if self.repetitions < 1:
            raise PlanError("repetitions must be >= 1")
        if not isinstance(self.base_config, dict) or not self.base_config:
            raise PlanError("base_config (algorithm config object) is required")

    @classmethod
    def from_json(cls, text: str) -> "ExperimentPlan":
        obj = json.loads(text)
        profiles = [
            ClientProfile(
                eval_rate=float(p["eval_rate"]),
                extra_latency=float(p.get("extra_latency", 0.0)),
                label=p.get("label", f"client-{i + 1}"),
            )
            for i, p in enumerate(obj.get("profiles", []))
        ]
        return cls(
            kind=obj["kind"],
            base_config=obj.get("base_config", {}),
            packet_sizes=[int(s) for s in obj.get("packet_sizes", [])],
            client_counts=[int(c) for c in obj.get("client_counts", [])],
            repetitions=int(obj.get("repetitions", 3)),
            profiles=profiles,
            stagger_seconds=float(obj.get("stagger_seconds", 0.0)),
            service_delay_ms=float(obj.get("service_delay_ms", 0.0)),
        )


UNCONSTRAINED = ClientProfile(eval_rate=1e9, extra_latency=0.0, label="bench-client")


# -- talking to the server over its public interface -------------------------


def create_algorithm(address: str, config: dict) -> str:
    response = requests.post(f"{address}/algorithm", json=config, timeout=30)
    if response.status_code != 201:
        raise RuntimeError(f"create failed: {response.status_code} {response.text}")
    return response.json()["algorithm_id"]


def restart_algorithm(address: str, algorithm_id: str) -> None:
    response = requests.post(
        f"{address}/algorithm/{algorithm_id}/restart", timeout=30
    )
    if response.status_code != 200:
        raise RuntimeError(f"restart failed: {response.status_code} {response.text}")


def algorithm_status(address: str, algorithm_id: str) -> dict:
    response = requests.get(
        f"{address}/algorithm/{algorithm_id}/status", timeout=30
    )
    if response.status_code != 200:
        raise RuntimeError(f"status failed: {response.status_code} {response.text}")
    return response.json()


@contextlib.contextmanager
def managed_server(
    log_mode: str = "quiet",
    log_file: Optional[Path] = None,
    service_delay_ms: float = 0.0,
    lease_seconds: int = 120,
    journal_dir: Optional[Path] = None,
):
    """An in-process server on an ephemeral port, torn down afterwards."""
    tmp = None
    if journal_dir is None:
        tmp = tempfile.mkdtemp(prefix="evofarm-bench-")
        journal_dir = Path(tmp)
    log = LogWriter(log_file, log_mode) if log_file is not None else null_log()
    app = ServerApp(
        journal_dir=journal_dir,
        log=log,
        service_delay_ms=service_delay_ms,
        lease_seconds=lease_seconds,
    )
    handle = ServerHandle(app)
    try:
        yield handle
    finally:
        handle.close()
        if tmp is not None:
            shutil.rmtree(tmp, ignore_errors=True)


# -- experiments --------------------------------------------------------------


@dataclass
class SweepResult:
    rows: list  # dicts: algorithm_id, clients, packet_size, repetition, ...
    fit: Optional[LinearFit]
    warnings: list = field(default_factory=list)
    extrapolations: list = field(default_factory=list)
    quiet_rates: list = field(default_factory=list)
    debug_rates: list = field(default_factory=list)
    relative_difference: Optional[float] = None
    p_value: Optional[float] = None


def _row(status: dict, clients: int, repetition: int) -> dict:
    return {
        "algorithm_id": status["algorithm_id"],
        "clients": clients,
        "packet_size": status["config"]["packet_size"],
        "repetition": repetition,
        "evaluated": status["evaluated_count"],
        "seconds": status["elapsed_seconds"],
        "rate": status["eval_rate"],
        "requests": status["request_count"],
    }


def run_packet_sweep(
    plan: ExperimentPlan,
    server_address: Optional[str] = None,
    extrapolation_targets: tuple = (100.0, 1000.0),
) -> SweepResult:
    """One single-paced-client run per packet size x repetition; OLS of
    rate on packet size over all successful runs."""
    if plan.kind != "packet_sweep":
        raise PlanError("plan.kind must be packet_sweep")
    profile = plan.profiles[0] if plan.profiles else UNCONSTRAINED
    with contextlib.ExitStack() as stack:
        if server_address is None:
            handle = stack.enter_context(
                managed_server(service_delay_ms=plan.service_delay_ms)
            )
            server_address = handle.address
        rows: list = []
        warnings: list = []
        for size in plan.packet_sizes:
            config = dict(plan.base_config, packet_size=size)
            config["algorithm_id"] = f"{config.get('algorithm_id', 'sweep')}-s{size}"
            algorithm_id = create_algorithm(server_address, config)
            for rep in range(plan.repetitions):
                if rep:
                    restart_algorithm(server_address, algorithm_id)
                try:
                    run_client(server_address, algorithm_id, profile)
                except ClientAbort as exc:
                    warnings.append(
                        f"run failed (size={size} rep={rep}): {exc}; excluded from fit"
                    )
                    continue
                status = algorithm_status(server_address, algorithm_id)
                rows.append(_row(status, clients=1, repetition=rep))
        fit = None
        extrapolations = []
        try:
            fit = fit_linear([(r["packet_size"], r["rate"]) for r in rows])
            for target in extrapolation_targets:
                size = extrapolate_packet_size(fit, target)
                if size is not None:
                    extrapolations.append(
                        {"target_rate": target, "packet_size": size}
                    )
        except FitRefused as exc:
            warnings.append(f"fit refused: {exc}")
        return SweepResult(
            rows=rows, fit=fit, warnings=warnings, extrapolations=extrapolations
        )


def _swarm_profiles(plan: ExperimentPlan, count: int) -> list:
    if len(plan.profiles) >= count:
        return plan.profiles[:count]
    if len(plan.profiles) == 1:
        base = plan.profiles[0]
        return [
            ClientProfile(base.eval_rate, base.extra_latency, f"{base.label}-{i + 1}")
            for i in range(count)
        ]
    if not plan.profiles:
        return [
            ClientProfile(1e9, 0.0, f"bench-client-{i + 1}") for i in range(count)
        ]
    raise PlanError(
        f"plan has {len(plan.profiles)} profiles but needs {count}"
    )


def run_scaling_sweep(
    plan: ExperimentPlan, server_address: Optional[str] = None
) -> SweepResult:
    """Swarms of increasing size against one algorithm; rates from the
    server's own timestamps."""
    if plan.kind != "scaling_sweep":
        raise PlanError("plan.kind must be scaling_sweep")
    with contextlib.ExitStack() as stack:
        if server_address is None:
            handle = stack.enter_context(
                managed_server(service_delay_ms=plan.service_delay_ms)
            )
            server_address = handle.address
        rows: list = []
        warnings: list = []
        for count in plan.client_counts:
            config = dict(plan.base_config)
            config["algorithm_id"] = f"{config.get('algorithm_id', 'scale')}-c{count}"
            algorithm_id = create_algorithm(server_address, config)
            for rep in range(plan.repetitions):
                if rep:
                    restart_algorithm(server_address, algorithm_id)
                reports, _ = run_swarm(
                    server_address,
                    algorithm_id,
                    _swarm_profiles(plan, count),
                    plan.stagger_seconds,
                )
                failed = [r for r in reports if r.error]
                if failed:
                    warnings.append(
                        f"{len(failed)} client(s) aborted (count={count} rep={rep})"
                    )
                status = algorithm_status(server_address, algorithm_id)
                rows.append(_row(status, clients=count, repetition=rep))
        return SweepResult(rows=rows, fit=None, warnings=warnings)


def best_case_rates(rows: list) -> dict:
    """Max rate per client count: the best-case scaling curve."""
    best: dict = {}
    for row in rows:
        count = row["clients"]
        best[count] = max(best.get(count, 0.0), row["rate"])
    return best


def run_logging_ab(
    plan: ExperimentPlan, out_dir: Optional[Path] = None, warmup: bool = True
) -> SweepResult:
    """Identical single-client runs under debug and quiet logging; medians
    compared with a two-sided rank-sum test.

    One discarded warmup pair runs first so allocator/cache warmup does not
    pollute the measured repetitions.
    """
    if plan.kind != "logging_ab":
        raise PlanError("plan.kind must be logging_ab")
    profile = plan.profiles[0] if plan.profiles else UNCONSTRAINED
    log_dir = Path(out_dir) if out_dir is not None else Path(tempfile.mkdtemp(prefix="evofarm-ab-"))
    log_dir.mkdir(parents=True, exist_ok=True)
    rows: list = []
    warnings: list = []
    rates = {"quiet": [], "debug": []}
    reps = list(range(plan.repetitions))
    if warmup:
        reps = [-1] + reps
    for rep in reps:
        # Alternate which mode goes first so drift within a pair cancels out.
        order = ("debug", "quiet") if rep % 2 == 0 else ("quiet", "debug")
        for mode in order:
            log_file = log_dir / f"ab-{mode}-{rep}.log"
            with managed_server(
                log_mode=mode,
                log_file=log_file,
                service_delay_ms=plan.service_delay_ms,
            ) as handle:
                config = dict(plan.base_config)
                config["algorithm_id"] = f"ab-{mode}-{rep}"
                algorithm_id = create_algorithm(handle.address, config)
                try:
                    run_client(handle.address, algorithm_id, profile)
                except ClientAbort as exc:
                    warnings.append(f"run failed (mode={mode} rep={rep}): {exc}")
                    continue
                if rep < 0:
                    continue  # warmup pair, measured but discarded
                status = algorithm_status(handle.address, algorithm_id)
                row = _row(status, clients=1, repetition=rep)
                row["log_mode"] = mode
                rows.append(row)
                rates[mode].append(row["rate"])
    result = SweepResult(rows=rows, fit=None, warnings=warnings)
    result.quiet_rates = rates["quiet"]
    result.debug_rates = rates["debug"]
    if rates["quiet"] and rates["debug"]:
        quiet_med = statistics.median(rates["quiet"])
        debug_med = statistics.median(rates["debug"])
        result.relative_difference = (
            (quiet_med - debug_med) / debug_med if debug_med else None
        )
        result.p_value = float(
            scipy_stats.mannwhitneyu(
                rates["quiet"], rates["debug"], alternative="two-sided"
            ).pvalue
        )
    return result


# -- output -------------------------------------------------------------------


CSV_COLUMNS = ["algorithm_id", "clients", "packet_size", "repetition",
               "evaluated", "seconds", "rate", "requests"]


def write_results_csv(rows: list, path: Path) -> None:
    columns = CSV_COLUMNS + (["log_mode"] if any("log_mode" in r for r in rows) else [])
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: row.get(k, "") for k in columns})


def write_outputs(result: SweepResult, out_dir: Path, title: str) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    write_results_csv(result.rows, out_dir / "results.csv")
    if result.fit is not None:
        fit_obj = result.fit.to_dict()
        fit_obj["extrapolations"] = result.extrapolations
        (out_dir / "fit.json").write_text(
            json.dumps(fit_obj, indent=2) + "\n", encoding="utf-8"
        )
    lines = [title, f"runs: {len(result.rows)}"]
    if result.fit is not None:
        f = result.fit
        lines.append(
            f"fit: rate = {f.intercept:.4f} (+-{f.intercept_stderr:.4f}) "
            f"+ {f.slope:.6f} (+-{f.slope_stderr:.6f}) * packet_size, "
            f"r^2 = {f.r_squared:.4f}"
        )
        for e in result.extrapolations:
            lines.append(
                "model extrapolation (not a measurement): "
                f"rate {e['target_rate']:.0f}/s would need packet_size "
                f"~= {e['packet_size']:.0f}"
            )
    if result.rows and result.rows[0].get("clients") is not None and not result.fit:
        for count, rate in sorted(best_case_rates(result.rows).items()):
            lines.append(f"best-case rate at {count} client(s): {rate:.2f}/s")
    if result.relative_difference is not None:
        lines.append(
            f"quiet vs debug: relative difference {result.relative_difference:+.2%}, "
            f"rank-sum p = {result.p_value:.4g}"
        )
    for warning in result.warnings:
        lines.append(f"warning: {warning}")
    (out_dir / "summary.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bench", description="Throughput experiments and analysis."
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("packet-sweep", "scaling", "logging-ab"):
        p = sub.add_parser(name)
        p.add_argument("--plan", required=True, type=Path)
        p.add_argument("--out", required=True, type=Path)
        if name != "logging-ab":
            p.add_argument("--server", default=None, help="use a running server")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    plan = ExperimentPlan.from_json(args.plan.read_text(encoding="utf-8"))
    if args.command == "packet-sweep":
        result = run_packet_sweep(plan, server_address=args.server)
        title = "packet-size sweep"
    elif args.command == "scaling":
        result = run_scaling_sweep(plan, server_address=args.server)
        title = "client-scaling sweep"
    else:
        result = run_logging_ab(plan, out_dir=args.out / "logs")
        title = "logging A/B"
    write_outputs(result, args.out, title)
    print((args.out / "summary.txt").read_text(encoding="utf-8"), end="")
    return 0


if __name__ == "__main__":
    sys.exit(main())
