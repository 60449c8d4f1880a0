#!/usr/bin/env python3
"""Regenerate the frozen test artifacts:

  golden/fitness_vectors.json   chromosome -> fitness vectors shared by the
                                Python and browser-worker test suites
  docs/protocol/*.json          golden example files for each message type

Run from the repo root.  Output is deterministic (seeded).
"""
import json
import random
from pathlib import Path

from evofarm import evocore, protocol

ROOT = Path(__file__).resolve().parent.parent


def fitness_vectors() -> dict:
    rng = random.Random(20070313)
    problem = evocore.griewank_problem()
    vectors = []
    for _ in range(50):
        chromosome = evocore.random_chromosome(problem.chromosome_length, rng)
        vectors.append(
            {
                "chromosome": chromosome,
                "griewank_standard": evocore.evaluate(
                    chromosome, evocore.griewank_problem()
                ),
                "griewank_as_printed": evocore.evaluate(
                    chromosome,
                    evocore.griewank_problem(kind=evocore.ProblemKind.GRIEWANK_AS_PRINTED),
                ),
            }
        )
    onemax = evocore.onemax_problem(bits=20)
    onemax_vectors = []
    for _ in range(10):
        chromosome = evocore.random_chromosome(onemax.chromosome_length, rng)
        onemax_vectors.append(
            {
                "chromosome": chromosome,
                "fitness": evocore.evaluate(chromosome, onemax),
            }
        )
    return {
        "problem": problem.to_dict(),
        "onemax_problem": onemax.to_dict(),
        "tolerance_relative": 1e-9,
        "vectors": vectors,
        "onemax_vectors": onemax_vectors,
    }


def protocol_examples() -> dict:
    problem = evocore.griewank_problem()
    rng = random.Random(7)
    individuals = tuple(
        (f"ind-{i:06d}", evocore.random_chromosome(problem.chromosome_length, rng))
        for i in range(1, 4)
    )
    packet = protocol.Packet(
        packet_id="pkt-000001",
        algorithm_id="alg-example",
        individuals=individuals,
        problem=problem,
        lease_seconds=120,
    )
    submission = protocol.ResultSubmission(
        packet_id="pkt-000001",
        results=tuple(
            (ind_id, evocore.evaluate(ch, problem)) for ind_id, ch in individuals
        ),
    )
    reply_continue = protocol.LoopReply(status="continue", next_packet=packet)
    reply_finished = protocol.LoopReply(
        status="finished",
        run_summary={"evaluated_count": 5120, "best_fitness": 1.4595798528421},
    )
    return {
        "packet.json": protocol.encode_packet(packet),
        "result_submission.json": protocol.encode_submission(submission),
        "loop_reply_continue.json": protocol.encode_loop_reply(reply_continue),
        "loop_reply_finished.json": protocol.encode_loop_reply(reply_finished),
    }


def main() -> None:
    golden_dir = ROOT / "golden"
    golden_dir.mkdir(exist_ok=True)
    (golden_dir / "fitness_vectors.json").write_text(
        json.dumps(fitness_vectors(), indent=2) + "\n", encoding="utf-8"
    )
    proto_dir = ROOT / "docs" / "protocol"
    proto_dir.mkdir(parents=True, exist_ok=True)
    for name, payload in protocol_examples().items():
        pretty = json.dumps(json.loads(payload), indent=2) + "\n"
        (proto_dir / name).write_text(pretty, encoding="utf-8")
    print(f"wrote {golden_dir / 'fitness_vectors.json'}")
    print(f"wrote golden messages to {proto_dir}")


if __name__ == "__main__":
    main()
