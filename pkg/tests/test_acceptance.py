"""Acceptance suite: one test per criterion, at the stated tolerances.

Each test prints an [ACCEPTANCE PASS/FAIL] line through the conftest hook.
The timing-sensitive criteria (packet-size effect, scaling, logging A/B)
run real servers and real clients at desk scale.
"""
import math
import random
import re
import signal
import statistics
import subprocess
import sys
import tempfile
import threading
import time
from fractions import Fraction
from pathlib import Path

import pytest
import requests
from scipy import stats as scipy_stats

from evofarm import evocore, protocol
from evofarm.bench import (
    ExperimentPlan,
    best_case_rates,
    fit_linear,
    run_logging_ab,
    run_packet_sweep,
    run_scaling_sweep,
)
from evofarm.evocore import griewank_problem, onemax_problem
from evofarm.server.httpd import ServerApp, ServerHandle
from evofarm.server.journal import Journal, replay
from evofarm.server.runtime import (
    AlgorithmConfig,
    AlgorithmRuntime,
    LeaseExpired,
    NoWorkAvailable,
)
from evofarm.simclient import ClientProfile, run_client


def oracle_decode(code: int) -> float:
    return float(Fraction(1023 * code, 1048575) - 511)


def oracle_griewank_standard(xs) -> float:
    total = 0.0
    for x in xs:
        total += (x**2) / 4000.0
    product = 1.0
    for i in range(len(xs)):
        product = product * math.cos(xs[i] / math.sqrt(i + 1))
    return total - product + 1.0


def test_fitness_correctness():
    """griewank_standard(0)=0 and as-printed(0)=2 exactly; 1000 random
    chromosomes match an independent oracle within 1e-12 relative."""
    assert evocore.griewank_standard([0.0] * 10) == 0.0
    assert evocore.griewank_as_printed([0.0] * 10) == 2.0
    spec = griewank_problem()
    rng = random.Random(20070313)
    for _ in range(1000):
        chromosome = evocore.random_chromosome(200, rng)
        xs = [oracle_decode(int(chromosome[i * 20 : (i + 1) * 20], 2)) for i in range(10)]
        expected = oracle_griewank_standard(xs)
        got = evocore.evaluate(chromosome, spec)
        assert got == pytest.approx(expected, rel=1e-12)


def test_codec_exactness():
    """code 0 -> -511 and code 1048575 -> 512 exactly; monotone over
    10000 sampled codes."""
    codec = evocore.GeneCodec(bits_per_gene=20, range_min=-511.0, range_max=512.0)
    assert evocore.decode_gene(0, codec) == -511.0
    assert evocore.decode_gene(1048575, codec) == 512.0
    rng = random.Random(77)
    codes = sorted(rng.sample(range(codec.max_code + 1), 10000))
    values = [evocore.decode_gene(c, codec) for c in codes]
    assert all(b >= a for a, b in zip(values, values[1:]))


REFERENCE_CONFIG = {
    "problem": griewank_problem().to_dict(),
    "population_size": 512,
    "elite_size": 256,
    "packet_size": 128,
    "max_evaluations": 5000,
    "operators": {"crossover_share": 0.8, "mutation_share": 0.2},
}


def test_end_to_end_reference_configuration(server):
    """Population 512 / elite 256 / 80-20 operators / budget 5000 /
    Griewank-10: run completes, evaluated in [5000, 5000+packet), best
    trace non-increasing, strict improvement in >= 95% of 20 seeded runs."""
    improved = 0
    for seed in range(101, 121):
        config = dict(REFERENCE_CONFIG, algorithm_id=f"e2e-{seed}", seed=seed)
        assert requests.post(server.address + "/algorithm", json=config).status_code == 201
        report = run_client(
            server.address, f"e2e-{seed}", ClientProfile(eval_rate=1e9, label="e2e")
        )
        status = requests.get(
            f"{server.address}/algorithm/e2e-{seed}/status"
        ).json()
        assert status["state"] == "finished"
        assert 5000 <= status["evaluated_count"] < 5000 + 128
        assert report.chromosomes_evaluated == status["evaluated_count"]
        trace = [fitness for _, fitness in status["best_history"]]
        assert trace == sorted(trace, reverse=True), "best trace must not worsen"
        assert trace[-1] <= trace[0]
        improved += trace[-1] < trace[0]
    assert improved >= 19, f"strict improvement in only {improved}/20 runs"


def test_onemax_reaches_optimum(server):
    """20-bit OneMax, population 32, budget 2000: optimum found in >= 90%
    of 20 seeded runs."""
    hits = 0
    for seed in range(201, 221):
        config = {
            "algorithm_id": f"onemax-{seed}",
            "problem": onemax_problem(bits=20).to_dict(),
            "population_size": 32,
            "elite_size": 16,
            "packet_size": 16,
            "max_evaluations": 2000,
            "fitness_threshold": 20.0,
            "seed": seed,
        }
        assert requests.post(server.address + "/algorithm", json=config).status_code == 201
        run_client(
            server.address, f"onemax-{seed}", ClientProfile(eval_rate=1e9, label="om")
        )
        status = requests.get(
            f"{server.address}/algorithm/onemax-{seed}/status"
        ).json()
        hits += status["best_fitness"] == 20.0
    assert hits >= 18, f"optimum reached in only {hits}/20 runs"


@pytest.fixture(scope="module")
def packet_sweep_result():
    """Shared by the packet-size-effect and request-count-law criteria."""
    plan = ExperimentPlan(
        kind="packet_sweep",
        base_config=dict(REFERENCE_CONFIG, max_evaluations=2560, seed=41),
        packet_sizes=[32, 64, 128, 256],
        repetitions=5,
        profiles=[ClientProfile(eval_rate=1e9, extra_latency=20.0, label="lat20")],
    )
    return run_packet_sweep(plan)


def test_packet_size_effect(packet_sweep_result):
    """Fixed 20 ms client latency, sizes {32,64,128,256} x 5 reps: the OLS
    slope of rate on size is positive and exceeds twice its stderr."""
    result = packet_sweep_result
    assert not result.warnings
    assert len(result.rows) == 20
    fit = result.fit
    assert fit is not None
    assert fit.slope > 0
    assert fit.slope > 2 * fit.slope_stderr


def test_request_count_law(packet_sweep_result):
    """Doubling the packet size halves the request count within +-1."""
    requests_by_size = {}
    for row in packet_sweep_result.rows:
        requests_by_size.setdefault(row["packet_size"], set()).add(row["requests"])
    for size, counts in requests_by_size.items():
        assert len(counts) == 1, f"request count must be deterministic, got {counts}"
    for size in (32, 64, 128):
        (here,) = requests_by_size[size]
        (there,) = requests_by_size[size * 2]
        assert abs(there - here / 2) <= 1, (size, here, there)


def test_scaling_shape():
    """1-5 identical clients: best-case rate non-decreasing; with a slowed
    server critical section, rate(5)/rate(1) < 5."""
    plan = ExperimentPlan(
        kind="scaling_sweep",
        base_config={
            "problem": griewank_problem().to_dict(),
            "population_size": 300,
            "elite_size": 150,
            "packet_size": 50,
            "max_evaluations": 1500,
            "seed": 51,
        },
        client_counts=[1, 2, 3, 4, 5],
        repetitions=3,
        profiles=[ClientProfile(eval_rate=400.0, label="node")],
    )
    best = best_case_rates(run_scaling_sweep(plan).rows)
    for count in range(2, 6):
        assert best[count] >= best[count - 1], (
            f"best-case rate dropped from {count - 1} to {count} clients: {best}"
        )

    slowed = ExperimentPlan(
        kind="scaling_sweep",
        base_config={
            "problem": griewank_problem().to_dict(),
            "population_size": 300,
            "elite_size": 150,
            "packet_size": 100,
            "max_evaluations": 600,
            "seed": 52,
        },
        client_counts=[1, 5],
        repetitions=2,
        profiles=[ClientProfile(eval_rate=1e9, label="fast")],
        service_delay_ms=30.0,
    )
    saturated = best_case_rates(run_scaling_sweep(slowed).rows)
    assert saturated[5] / saturated[1] < 5.0, saturated


def test_logging_overhead_direction(tmp_path):
    """Quiet-mode median rate >= debug-mode median over >= 10 paired runs,
    two-sided rank-sum significant at alpha = 0.05."""
    plan = ExperimentPlan(
        kind="logging_ab",
        base_config=dict(REFERENCE_CONFIG, packet_size=100, max_evaluations=12000, seed=91),
        repetitions=12,
    )
    result = run_logging_ab(plan, out_dir=tmp_path)
    assert not result.warnings
    assert len(result.quiet_rates) == 12
    assert len(result.debug_rates) == 12
    quiet_median = statistics.median(result.quiet_rates)
    debug_median = statistics.median(result.debug_rates)
    assert quiet_median >= debug_median, (quiet_median, debug_median)
    assert result.p_value < 0.05, f"rank-sum p = {result.p_value}"


class _SharedClock:
    def __init__(self):
        self.t = 0.0
        self._lock = threading.Lock()

    def __call__(self):
        with self._lock:
            return self.t

    def advance(self, seconds):
        with self._lock:
            self.t += seconds


def test_conservation_under_randomized_interleaving(tmp_path):
    """Concurrent clients, forced lease expiries, lost packets, duplicate
    submissions: conservation holds at every sampled instant, the final
    evaluated count is exact, and journal replay reproduces it."""
    clock = _SharedClock()
    config = AlgorithmConfig.from_dict(
        {
            "algorithm_id": "chaos",
            "problem": griewank_problem().to_dict(),
            "population_size": 200,
            "elite_size": 64,
            "packet_size": 25,
            "max_evaluations": 2000,
            "seed": 61,
            "lease_seconds": 30,
        }
    )
    journal_path = tmp_path / "chaos.journal"
    runtime = AlgorithmRuntime(config, Journal(journal_path), now_fn=clock)
    deadline = time.monotonic() + 60
    violations = []
    done = threading.Event()

    def worker(label, seed):
        rng = random.Random(seed)
        while time.monotonic() < deadline:
            try:
                packet = runtime.next_packet(label)
            except NoWorkAvailable:
                time.sleep(0.001)
                continue
            if packet is None:
                return
            submission = protocol.ResultSubmission(
                packet_id=packet.packet_id,
                results=tuple(
                    (i, evocore.evaluate(c, config.problem))
                    for i, c in packet.individuals
                ),
            )
            if rng.random() < 0.10:
                continue  # client wanders off; the lease must expire
            try:
                runtime.submit(submission, label)
                if rng.random() < 0.15:
                    runtime.submit(submission, label)  # flaky-network retry
            except (LeaseExpired, NoWorkAvailable):
                continue

    def chaos():
        while not done.is_set():
            time.sleep(0.005)
            clock.advance(2.0)
            runtime.expire_leases()

    def observer():
        while not done.is_set():
            fresh, leased, evaluated, total = runtime.conservation_counts()
            if fresh + leased + evaluated != total:
                violations.append((fresh, leased, evaluated, total))
            time.sleep(0.002)

    workers = [
        threading.Thread(target=worker, args=(f"w{i}", 1000 + i)) for i in range(4)
    ]
    side = [threading.Thread(target=chaos), threading.Thread(target=observer)]
    for t in side + workers:
        t.start()
    for t in workers:
        t.join(timeout=70)
    done.set()
    for t in side:
        t.join(timeout=5)

    assert not any(t.is_alive() for t in workers), "workers wedged"
    assert runtime.state == "finished"
    assert violations == [], f"conservation violated: {violations[:3]}"
    fresh, leased, evaluated, total = runtime.conservation_counts()
    assert fresh + leased + evaluated == total
    assert evaluated == runtime.stats.evaluated_count
    assert runtime.stats.evaluated_count == sum(runtime.stats.per_client.values())
    assert 2000 <= runtime.stats.evaluated_count < 2000 + 25

    state = replay(journal_path)
    assert state.evaluated_count == runtime.stats.evaluated_count
    assert state.best_fitness == runtime.stats.best_fitness
    ids = [ind_id for ind_id, _, _ in state.evaluated]
    assert len(ids) == len(set(ids)), "an individual was journaled twice"


def test_journal_replay_after_kill(tmp_path):
    """SIGKILL the server mid-run; replaying its journal reproduces the
    acknowledged counts and best fitness exactly."""
    journal_dir = tmp_path / "journals"
    proc = subprocess.Popen(
        [sys.executable, "-m", "evofarm.server.cli", "--port", "0",
         "--journal-dir", str(journal_dir)],
        stdout=subprocess.PIPE,
        stderr=subprocess.STDOUT,
        text=True,
    )
    try:
        line = proc.stdout.readline()
        match = re.search(r"listening on (http://\S+)", line)
        assert match, f"no address line: {line!r}"
        address = match.group(1)

        config = {
            "algorithm_id": "killme",
            "problem": griewank_problem().to_dict(),
            "population_size": 512,
            "elite_size": 128,
            "packet_size": 50,
            "max_evaluations": 100000,
            "seed": 71,
        }
        assert requests.post(address + "/algorithm", json=config).status_code == 201
        problem = griewank_problem()
        acked = {}
        reply = protocol.decode_loop_reply(
            requests.get(address + "/algorithm/killme/packet").content
        )
        for _ in range(5):
            packet = reply.next_packet
            results = tuple(
                (i, evocore.evaluate(c, problem)) for i, c in packet.individuals
            )
            response = requests.post(
                address + "/algorithm/killme/results",
                data=protocol.encode_submission(
                    protocol.ResultSubmission(packet.packet_id, results)
                ),
            )
            assert response.status_code == 200
            acked.update(dict(results))
            reply = protocol.decode_loop_reply(response.content)
    finally:
        proc.kill()
        proc.wait(timeout=10)

    state = replay(journal_dir / "killme.journal")
    assert state.evaluated_count == len(acked) == 250
    assert state.best_fitness == min(acked.values())
    assert {i: f for i, _, f in state.evaluated} == acked
