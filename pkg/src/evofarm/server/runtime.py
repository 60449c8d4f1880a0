"""Algorithm lifecycle and population bookkeeping.

One AlgorithmRuntime owns one population: it leases packets of fresh
individuals to clients, generates new individuals on the fly once the
fresh pool runs dry, ingests fitness results, and decides termination.
All mutation happens inside a single per-algorithm lock whose critical
sections stay small; no fitness evaluation ever runs server-side.
"""
from __future__ import annotations

import bisect
import random
import threading
import time
import uuid
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

from .. import evocore, protocol
from ..evocore import (
    Individual,
    IndividualState,
    ObjectiveSense,
    OperatorConfig,
    ProblemSpec,
)
from .journal import Journal
from .logs import LogWriter, null_log


class UnknownAlgorithm(KeyError):
    pass


class DuplicateAlgorithm(ValueError):
    pass


class LeaseExpired(RuntimeError):
    """The packet's lease timed out (or was invalidated by a restart)."""


class NoWorkAvailable(RuntimeError):
    """Nothing dispatchable right now; the client should retry shortly."""


@dataclass(frozen=True)
class AlgorithmConfig:
    """Full experiment definition for one algorithm."""

    algorithm_id: str
    problem: ProblemSpec
    population_size: int
    elite_size: int
    packet_size: int
    operators: OperatorConfig = field(default_factory=OperatorConfig)
    max_evaluations: Optional[int] = None
    fitness_threshold: Optional[float] = None
    seed: int = 0
    lease_seconds: int = 120

    def __post_init__(self):
        if self.population_size < 1:
            raise ValueError("population_size must be >= 1")
        if not 1 <= self.elite_size <= self.population_size:
            raise ValueError("elite_size must lie in [1, population_size]")
        if self.elite_size < self.operators.tournament_size:
            raise ValueError(
                "elite_size must be >= tournament_size or packets can never "
                "be generated on the fly"
            )
        if self.packet_size < 1:
            raise ValueError("packet_size must be >= 1")
        if self.max_evaluations is None and self.fitness_threshold is None:
            raise ValueError(
                "at least one of max_evaluations / fitness_threshold required"
            )
        if self.max_evaluations is not None and self.max_evaluations < 1:
            raise ValueError("max_evaluations must be positive")
        if self.lease_seconds < 1:
            raise ValueError("lease_seconds must be positive")

    def to_dict(self) -> dict:
        return {
            "algorithm_id": self.algorithm_id,
            "problem": self.problem.to_dict(),
            "population_size": self.population_size,
            "elite_size": self.elite_size,
            "packet_size": self.packet_size,
            "operators": {
                "crossover_share": self.operators.crossover_share,
                "mutation_share": self.operators.mutation_share,
                "per_bit_mutation_prob": self.operators.per_bit_mutation_prob,
                "tournament_size": self.operators.tournament_size,
                "losers_per_tournament": self.operators.losers_per_tournament,
            },
            "max_evaluations": self.max_evaluations,
            "fitness_threshold": self.fitness_threshold,
            "seed": self.seed,
            "lease_seconds": self.lease_seconds,
        }

    @classmethod
    def from_dict(cls, d: dict, default_lease_seconds: int = 120) -> "AlgorithmConfig":
        try:
            problem = ProblemSpec.from_dict(d["problem"])
        except KeyError as exc:
            raise ValueError(f"problem descriptor missing field {exc}") from exc
        ops_d = d.get("operators") or {}
        pbm = ops_d.get("per_bit_mutation_prob")
        operators = OperatorConfig(
            crossover_share=float(ops_d.get("crossover_share", 0.8)),
            mutation_share=float(ops_d.get("mutation_share", 0.2)),
            per_bit_mutation_prob=float(pbm) if pbm is not None else None,
            tournament_size=int(ops_d.get("tournament_size", 4)),
            losers_per_tournament=int(ops_d.get("losers_per_tournament", 2)),
        )
        seed = d.get("seed")
        if seed is None:
            seed = uuid.uuid4().int & 0xFFFFFFFF
        max_evaluations = d.get("max_evaluations")
        fitness_threshold = d.get("fitness_threshold")
        return cls(
            algorithm_id=d.get("algorithm_id") or f"alg-{uuid.uuid4().hex[:12]}",
            problem=problem,
            population_size=int(d["population_size"]),
            elite_size=int(d["elite_size"]),
            packet_size=int(d["packet_size"]),
            operators=operators,
            max_evaluations=int(max_evaluations) if max_evaluations is not None else None,
            fitness_threshold=float(fitness_threshold)
            if fitness_threshold is not None
            else None,
            seed=int(seed),
            lease_seconds=int(d.get("lease_seconds", default_lease_seconds)),
        )


@dataclass
class RunStats:
    """Per-run counters; request_count counts packet-issuing requests."""

    evaluated_count: int = 0
    dispatched_count: int = 0
    request_count: int = 0
    best_fitness: Optional[float] = None
    started_at: Optional[float] = None
    finished_at: Optional[float] = None
    per_client: dict = field(default_factory=dict)
    best_history: list = field(default_factory=list)  # (evaluated_count, best)


@dataclass
class Lease:
    packet_id: str
    individual_ids: tuple
    client: str
    issued_at: float
    lease_seconds: int


class AlgorithmRuntime:
    """One algorithm's population, leases, journal, and stats."""

    def __init__(
        self,
        config: AlgorithmConfig,
        journal: Journal,
        now_fn: Callable[[], float] = time.monotonic,
        log: Optional[LogWriter] = None,
        service_delay_s: float = 0.0,
    ):
        self.config = config
        self.journal = journal
        self.now_fn = now_fn
        self.log = log if log is not None else null_log()
        self.service_delay_s = service_delay_s
        self.state = "created"
        self.stats = RunStats()
        self.lock = threading.Lock()
        self.rng = random.Random(config.seed)
        self._individuals: dict = {}
        self._fresh: deque = deque()
        self._ranked: list = []  # (fitness, individual_id), ascending
        self._leases: dict = {}
        self._consumed: set = set()
        self._expired: set = set()
        self._total_created = 0
        self._ind_seq = 0
        self._pkt_seq = 0
        self._populate()
        self.journal.created(config.algorithm_id, config.seed, config.to_dict())

    # -- population plumbing -------------------------------------------------

    def _populate(self) -> None:
        length = self.config.problem.chromosome_length
        for _ in range(self.config.population_size):
            self._add_fresh(evocore.random_chromosome(length, self.rng))

    def _add_fresh(self, chromosome: str) -> str:
        self._ind_seq += 1
        ind_id = f"ind-{self._ind_seq:06d}"
        self._individuals[ind_id] = Individual(id=ind_id, chromosome=chromosome)
        self._fresh.append(ind_id)
        self._total_created += 1
        return ind_id

    def _elite(self) -> list:
        """Best elite_size evaluated individuals, best first."""
        k = self.config.elite_size
        if self.config.problem.objective_sense is ObjectiveSense.MINIMIZE:
            slice_ = self._ranked[:k]
        else:
            slice_ = self._ranked[-k:][::-1]
        return [self._individuals[ind_id] for _, ind_id in slice_]

    def _terminated(self) -> bool:
        return evocore.is_terminated(
            evaluated_count=self.stats.evaluated_count,
            best_fitness=self.stats.best_fitness,
            max_evaluations=self.config.max_evaluations,
            fitness_threshold=self.config.fitness_threshold,
            sense=self.config.problem.objective_sense,
        )

    def _service_delay(self) -> None:
        if self.service_delay_s > 0:
            time.sleep(self.service_delay_s)

    # -- lease / submit ------------------------------------------------------

    def next_packet(self, client: str) -> Optional[protocol.Packet]:
        """Lease a packet, generating the deficit on the fly; None once the
        run is finished."""
        with self.lock:
            self._service_delay()
            self._expire_locked(self.now_fn())
            return self._issue_packet_locked(client)

    def _issue_packet_locked(self, client: str) -> Optional[protocol.Packet]:
        if self.state == "finished" or self._terminated():
            self.state = "finished"
            return None
        if self.state == "created":
            self.state = "running"
            self.stats.started_at = time.time()
        want = self.config.packet_size
        ids = []
        while self._fresh and len(ids) < want:
            ids.append(self._fresh.popleft())
        deficit = want - len(ids)
        if deficit > 0 and len(self._ranked) >= self.config.operators.tournament_size:
            children = evocore.tournament_replace(
                self._elite(),
                self.config.operators,
                deficit,
                self.config.problem.objective_sense,
                self.rng,
            )
            for chromosome in children:
                ind_id = self._add_fresh(chromosome)
                self._fresh.pop()  # leased immediately below
                ids.append(ind_id)
        if not ids:
            raise NoWorkAvailable(
                "no fresh individuals and too few evaluated to breed from"
            )
        for ind_id in ids:
            self._individuals[ind_id].state = IndividualState.LEASED
        self._pkt_seq += 1
        packet_id = f"pkt-{self._pkt_seq:06d}"
        self._leases[packet_id] = Lease(
            packet_id=packet_id,
            individual_ids=tuple(ids),
            client=client,
            issued_at=self.now_fn(),
            lease_seconds=self.config.lease_seconds,
        )
        self.stats.request_count += 1
        self.stats.dispatched_count += len(ids)
        if self.log.debug_enabled:
            for ind_id in ids:
                self.log.debug(
                    f"{time.strftime('%H:%M:%S')} lease alg={self.config.algorithm_id} "
                    f"pkt={packet_id} client={client} ind={ind_id} "
                    f"chromosome={self._individuals[ind_id].chromosome}"
                )
        return protocol.Packet(
            packet_id=packet_id,
            algorithm_id=self.config.algorithm_id,
            individuals=tuple(
                (ind_id, self._individuals[ind_id].chromosome) for ind_id in ids
            ),
            problem=self.config.problem,
            lease_seconds=self.config.lease_seconds,
        )

    def submit(
        self, submission: protocol.ResultSubmission, client: str
    ) -> protocol.LoopReply:
        """Ingest results and reply with the next packet or the run summary.

        Duplicates of an already-consumed packet are acknowledged without
        touching any counter; expired or foreign packets are rejected.
        """
        with self.lock:
            self._service_delay()
            self._expire_locked(self.now_fn())
            pid = submission.packet_id
            if pid in self._consumed:
                return self._loop_reply_locked(client, duplicate=True)
            if pid in self._expired:
                raise LeaseExpired(pid)
            lease = self._leases.get(pid)
            if lease is None:
                raise protocol.ValidationError(
                    f"unknown packet {pid!r}", "packet_id"
                )
            if self.state == "finished":
                # Run is over; release the lease, never count the results.
                for ind_id in lease.individual_ids:
                    ind = self._individuals[ind_id]
                    if ind.state is IndividualState.LEASED:
                        ind.state = IndividualState.FRESH
                        self._fresh.append(ind_id)
                del self._leases[pid]
                self._consumed.add(pid)
                return self._finished_reply(ingested=False)

            lease_ids = set(lease.individual_ids)
            seen = set()
            for i, (ind_id, _) in enumerate(submission.results):
                if ind_id not in lease_ids:
                    raise protocol.ValidationError(
                        f"individual {ind_id!r} not in packet {pid!r}",
                        f"results[{i}]",
                    )
                if ind_id in seen:
                    raise protocol.ValidationError(
                        f"individual {ind_id!r} repeated", f"results[{i}]"
                    )
                seen.add(ind_id)

            self.journal.evaluated(
                pid,
                client,
                [
                    (ind_id, self._individuals[ind_id].chromosome, fitness)
                    for ind_id, fitness in submission.results
                ],
            )
            for ind_id, fitness in submission.results:
                ind = self._individuals[ind_id]
                ind.mark_evaluated(fitness)
                bisect.insort(self._ranked, (ind.fitness, ind_id))
            for ind_id in lease.individual_ids:
                ind = self._individuals[ind_id]
                if ind.state is IndividualState.LEASED:
                    ind.state = IndividualState.FRESH
                    self._fresh.append(ind_id)
            del self._leases[pid]
            self._consumed.add(pid)
            self.stats.evaluated_count += len(submission.results)
            self.stats.per_client[client] = self.stats.per_client.get(client, 0) + len(
                submission.results
            )
            self._update_best_locked()
            if self.log.debug_enabled:
                stamp = time.strftime("%H:%M:%S")
                for ind_id, fitness in submission.results:
                    self.log.debug(
                        f"{stamp} evaluated alg={self.config.algorithm_id} "
                        f"pkt={pid} client={client} ind={ind_id} "
                        f"fitness={fitness!r} "
                        f"chromosome={self._individuals[ind_id].chromosome}"
                    )
            if self._terminated():
                self.state = "finished"
                self.stats.finished_at = time.time()
                self.journal.finished(
                    self.stats.evaluated_count, self.stats.best_fitness
                )
                self.log.debug(
                    f"{time.strftime('%H:%M:%S')} finished "
                    f"alg={self.config.algorithm_id} "
                    f"evaluated={self.stats.evaluated_count} "
                    f"best={self.stats.best_fitness!r}"
                )
                return self._finished_reply()
            return self._loop_reply_locked(client, duplicate=False)

    def _update_best_locked(self) -> None:
        if not self._ranked:
            return
        if self.config.problem.objective_sense is ObjectiveSense.MINIMIZE:
            best = self._ranked[0][0]
            improved = self.stats.best_fitness is None or best < self.stats.best_fitness
        else:
            best = self._ranked[-1][0]
            improved = self.stats.best_fitness is None or best > self.stats.best_fitness
        if improved:
            self.stats.best_fitness = best
            self.stats.best_history.append((self.stats.evaluated_count, best))

    def finished_reply(self) -> protocol.LoopReply:
        with self.lock:
            return self._finished_reply()

    def _finished_reply(
        self, ingested: bool = True, duplicate: bool = False
    ) -> protocol.LoopReply:
        summary = {
            "evaluated_count": self.stats.evaluated_count,
            "best_fitness": self.stats.best_fitness,
        }
        if not ingested:
            summary["ingested"] = False
        return protocol.LoopReply(
            status="finished", run_summary=summary, duplicate=duplicate
        )

    def _loop_reply_locked(self, client: str, duplicate: bool) -> protocol.LoopReply:
        packet = self._issue_packet_locked(client)
        if packet is None:
            return self._finished_reply(duplicate=duplicate)
        return protocol.LoopReply(
            status="continue", next_packet=packet, duplicate=duplicate
        )

    # -- maintenance ---------------------------------------------------------

    def expire_leases(self, now: Optional[float] = None) -> int:
        """Return every over-age leased individual to the fresh pool."""
        with self.lock:
            return self._expire_locked(self.now_fn() if now is None else now)

    def _expire_locked(self, now: float) -> int:
        reclaimed = 0
        for pid in [
            pid
            for pid, lease in self._leases.items()
            if now - lease.issued_at > lease.lease_seconds
        ]:
            lease = self._leases.pop(pid)
            self._expired.add(pid)
            for ind_id in lease.individual_ids:
                ind = self._individuals[ind_id]
                if ind.state is IndividualState.LEASED:
                    ind.state = IndividualState.FRESH
                    self._fresh.append(ind_id)
                    reclaimed += 1
            self.log.debug(
                f"{time.strftime('%H:%M:%S')} lease-expired "
                f"alg={self.config.algorithm_id} pkt={pid} "
                f"reclaimed={len(lease.individual_ids)}"
            )
        return reclaimed

    def restart(self) -> None:
        """Zero the counters and regenerate the population; live leases are
        invalidated and late submissions will see lease-expired."""
        with self.lock:
            self._expired.update(self._leases.keys())
            self._expired.update(self._consumed)
            self._leases.clear()
            self._consumed.clear()
            self._individuals.clear()
            self._fresh.clear()
            self._ranked.clear()
            self._total_created = 0
            self.stats = RunStats()
            self.state = "created"
            self.journal.rotate()
            self._populate()
            self.journal.created(
                self.config.algorithm_id, self.config.seed, self.config.to_dict()
            )

    def run_status(self) -> dict:
        """Consistent snapshot of counters, rate, and pool occupancy."""
        with self.lock:
            now = time.time()
            started = self.stats.started_at
            ended = self.stats.finished_at or now
            elapsed = max(0.0, ended - started) if started is not None else 0.0
            rate = self.stats.evaluated_count / elapsed if elapsed > 0 else 0.0
            pool = {"fresh": 0, "leased": 0, "evaluated": 0}
            for ind in self._individuals.values():
                pool[ind.state.value] += 1
            pool["total_created"] = self._total_created
            return {
                "algorithm_id": self.config.algorithm_id,
                "state": self.state,
                "seed": self.config.seed,
                "evaluated_count": self.stats.evaluated_count,
                "dispatched_count": self.stats.dispatched_count,
                "request_count": self.stats.request_count,
                "best_fitness": self.stats.best_fitness,
                "started_at": self.stats.started_at,
                "finished_at": self.stats.finished_at,
                "elapsed_seconds": elapsed,
                "eval_rate": rate,
                "per_client": dict(self.stats.per_client),
                "best_history": [list(t) for t in self.stats.best_history],
                "pool": pool,
                "config": self.config.to_dict(),
            }

    def conservation_counts(self) -> tuple:
        """(fresh, leased, evaluated, total_created) under the lock."""
        with self.lock:
            counts = {"fresh": 0, "leased": 0, "evaluated": 0}
            for ind in self._individuals.values():
                counts[ind.state.value] += 1
            return (
                counts["fresh"],
                counts["leased"],
                counts["evaluated"],
                self._total_created,
            )


class AlgorithmRegistry:
    """All algorithms hosted by one server; requests for different
    algorithms never contend."""

    def __init__(
        self,
        journal_dir: Path,
        default_lease_seconds: int = 120,
        log: Optional[LogWriter] = None,
        service_delay_s: float = 0.0,
        now_fn: Callable[[], float] = time.monotonic,
    ):
        self.journal_dir = Path(journal_dir)
        self.default_lease_seconds = default_lease_seconds
        self.log = log if log is not None else null_log()
        self.service_delay_s = service_delay_s
        self.now_fn = now_fn
        self._lock = threading.Lock()
        self._algorithms: dict = {}

    def create(self, config_dict: dict) -> AlgorithmRuntime:
        config = AlgorithmConfig.from_dict(
            config_dict, default_lease_seconds=self.default_lease_seconds
        )
        with self._lock:
            if config.algorithm_id in self._algorithms:
                raise DuplicateAlgorithm(config.algorithm_id)
            path = self.journal_dir / f"{config.algorithm_id}.journal"
            stale = path.exists() and path.stat().st_size > 0
            journal = Journal(path)
            if stale:
                journal.rotate()
            runtime = AlgorithmRuntime(
                config,
                journal,
                now_fn=self.now_fn,
                log=self.log,
                service_delay_s=self.service_delay_s,
            )
            self._algorithms[config.algorithm_id] = runtime
            return runtime

    def get(self, algorithm_id: str) -> AlgorithmRuntime:
        with self._lock:
            try:
                return self._algorithms[algorithm_id]
            except KeyError:
                raise UnknownAlgorithm(algorithm_id) from None

    def ids(self) -> list:
        with self._lock:
            return sorted(self._algorithms)

    def expire_all(self) -> int:
        with self._lock:
            runtimes = list(self._algorithms.values())
        return sum(rt.expire_leases() for rt in runtimes)

    def close(self) -> None:
        with self._lock:
            for rt in self._algorithms.values():
                rt.journal.close()
            self._algorithms.clear()
