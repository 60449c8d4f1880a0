import json
import random

import pytest

from evofarm import evocore, protocol
from evofarm.evocore import griewank_problem, onemax_problem, random_chromosome
from evofarm.protocol import (
    LoopReply,
    Packet,
    ParseError,
    ProtocolError,
    ResultSubmission,
    ValidationError,
    decode_loop_reply,
    decode_packet,
    decode_submission,
    encode_loop_reply,
    encode_packet,
    encode_submission,
)

from conftest import REPO_ROOT

PROBLEM = griewank_problem()


def make_packet(n_individuals: int, seed: int = 0, problem=PROBLEM) -> Packet:
    rng = random.Random(seed)
    return Packet(
        packet_id=f"pkt-{seed:06d}",
        algorithm_id="alg-test",
        individuals=tuple(
            (f"ind-{i:06d}", random_chromosome(problem.chromosome_length, rng))
            for i in range(n_individuals)
        ),
        problem=problem,
        lease_seconds=120,
    )


class TestPacket:
    def test_single_individual_round_trip_is_identity(self):
        packet = make_packet(1)
        assert decode_packet(encode_packet(packet)) == packet

    def test_large_packet_preserves_order(self):
        packet = make_packet(256)
        decoded = decode_packet(encode_packet(packet))
        assert decoded.individuals == packet.individuals

    def test_empty_packet_rejected_before_serialization(self):
        with pytest.raises(ValidationError):
            Packet(
                packet_id="pkt-1",
                algorithm_id="alg",
                individuals=(),
                problem=PROBLEM,
                lease_seconds=120,
            )

    def test_wire_field_names_are_exactly_the_contract(self):
        obj = json.loads(encode_packet(make_packet(2)))
        assert set(obj) == {
            "packet_id",
            "algorithm_id",
            "individuals",
            "problem",
            "lease_seconds",
        }

    def test_bad_chromosome_rejected(self):
        with pytest.raises(protocol.ValidationError) as excinfo:
            Packet(
                packet_id="pkt-1",
                algorithm_id="alg",
                individuals=(("ind-1", "01x"),),
                problem=PROBLEM,
                lease_seconds=120,
            )
        # encoding violations surface before anything hits the wire
        assert excinfo.type is not None


class TestSubmission:
    def test_two_results_decode_in_order(self):
        payload = b'{"packet_id":"pkt-1","results":[["a",1.5],["b",-2.25]]}'
        sub = decode_submission(payload)
        assert sub.packet_id == "pkt-1"
        assert sub.results == (("a", 1.5), ("b", -2.25))

    def test_nan_fitness_rejected(self):
        payload = b'{"packet_id":"pkt-1","results":[["a",NaN]]}'
        with pytest.raises(ValidationError) as excinfo:
            decode_submission(payload)
        assert "fitness" in excinfo.value.field

    def test_string_fitness_rejected(self):
        payload = b'{"packet_id":"pkt-1","results":[["a","NaN"]]}'
        with pytest.raises(ParseError):
            decode_submission(payload)

    def test_truncated_bytes_give_parse_error_not_crash(self):
        intact = encode_submission(
            ResultSubmission(packet_id="pkt-1", results=(("a", 1.0),))
        )
        for cut in (1, len(intact) // 2, len(intact) - 1):
            with pytest.raises(ParseError):
                decode_submission(intact[:cut])

    def test_missing_field_named(self):
        with pytest.raises(ParseError) as excinfo:
            decode_submission(b"{}")
        assert excinfo.value.field == "results"

    def test_non_finite_constructor_rejected(self):
        with pytest.raises(ValidationError):
            ResultSubmission(packet_id="p", results=(("a", float("inf")),))


class TestLoopReply:
    def test_continue_requires_packet(self):
        with pytest.raises(ValidationError):
            LoopReply(status="continue")

    def test_finished_must_not_carry_packet(self):
        with pytest.raises(ValidationError):
            LoopReply(status="finished", next_packet=make_packet(1))

    def test_unknown_status_rejected(self):
        with pytest.raises(ValidationError):
            LoopReply(status="maybe")

    def test_round_trips(self):
        cont = LoopReply(status="continue", next_packet=make_packet(3))
        fin = LoopReply(
            status="finished",
            run_summary={"evaluated_count": 5000, "best_fitness": 0.25},
        )
        dup = LoopReply(status="continue", next_packet=make_packet(1), duplicate=True)
        for reply in (cont, fin, dup):
            assert decode_loop_reply(encode_loop_reply(reply)) == reply


class TestFuzzRoundTrip:
    def test_thousand_random_messages_round_trip(self):
        rng = random.Random(42)
        problems = [PROBLEM, onemax_problem(), griewank_problem(3)]
        for i in range(1000):
            kind = rng.randrange(3)
            if kind == 0:
                packet = make_packet(rng.randint(1, 8), seed=i, problem=rng.choice(problems))
                assert decode_packet(encode_packet(packet)) == packet
            elif kind == 1:
                sub = ResultSubmission(
                    packet_id=f"pkt-{i}",
                    results=tuple(
                        (f"ind-{j}", rng.uniform(-1e6, 1e6))
                        for j in range(rng.randint(0, 6))
                    ),
                )
                assert decode_submission(encode_submission(sub)) == sub
            else:
                if rng.random() < 0.5:
                    reply = LoopReply(
                        status="continue",
                        next_packet=make_packet(rng.randint(1, 4), seed=i),
                        duplicate=rng.random() < 0.2,
                    )
                else:
                    reply = LoopReply(
                        status="finished",
                        run_summary={
                            "evaluated_count": rng.randint(0, 10**6),
                            "best_fitness": rng.uniform(-100, 100),
                        },
                    )
                assert decode_loop_reply(encode_loop_reply(reply)) == reply

    def test_garbage_bytes_never_crash(self):
        rng = random.Random(43)
        decoders = (decode_packet, decode_submission, decode_loop_reply)
        for _ in range(300):
            blob = bytes(rng.randrange(256) for _ in range(rng.randint(0, 64)))
            for decode in decoders:
                with pytest.raises(ProtocolError):
                    decode(blob)


class TestGoldenFiles:
    """The documented example files must stay decodable and exact."""

    def golden(self, name: str) -> bytes:
        return (REPO_ROOT / "docs" / "protocol" / name).read_bytes()

    def test_packet_example(self):
        packet = decode_packet(self.golden("packet.json"))
        assert packet.packet_id == "pkt-000001"
        assert packet.algorithm_id == "alg-example"
        assert len(packet.individuals) == 3
        assert packet.problem == PROBLEM
        assert packet.lease_seconds == 120

    def test_submission_example_matches_fitness_recomputation(self):
        packet = decode_packet(self.golden("packet.json"))
        sub = decode_submission(self.golden("result_submission.json"))
        assert sub.packet_id == packet.packet_id
        by_id = dict(packet.individuals)
        for ind_id, fitness in sub.results:
            assert fitness == pytest.approx(
                evocore.evaluate(by_id[ind_id], packet.problem), rel=1e-15
            )

    def test_loop_reply_examples(self):
        cont = decode_loop_reply(self.golden("loop_reply_continue.json"))
        assert cont.status == "continue"
        assert cont.next_packet is not None
        fin = decode_loop_reply(self.golden("loop_reply_finished.json"))
        assert fin.status == "finished"
        assert fin.run_summary["evaluated_count"] == 5120
