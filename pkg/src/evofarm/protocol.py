"""Client/server message vocabulary for the fetch-evaluate-submit loop.

Everything on the wire is UTF-8 JSON.  Chromosomes travel as '0'/'1'
strings, fitness as JSON numbers, identifiers as strings.  Messages are
immutable values; encoding and decoding are reentrant.

Golden example files for each message type live in docs/protocol/.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional

from .evocore import EncodingViolation, ProblemSpec, validate_chromosome


class ProtocolError(Exception):
    """Base for message-level failures; carries the offending field."""

    def __init__(self, message: str, field_name: str = ""):
        super().__init__(message)
        self.field = field_name


class ParseError(ProtocolError):
    """Byte sequence is not a well-formed message."""


class ValidationError(ProtocolError):
    """Message parsed but violates an invariant."""


@dataclass(frozen=True)
class Packet:
    """A batch of unevaluated individuals leased to one client."""

    packet_id: str
    algorithm_id: str
    individuals: tuple  # of (individual_id, chromosome) pairs
    problem: ProblemSpec
    lease_seconds: int

    def __post_init__(self):
        if not self.individuals:
            raise ValidationError("packet must carry individuals", "individuals")
        if self.lease_seconds < 1:
            raise ValidationError("lease_seconds must be positive", "lease_seconds")
        for i, pair in enumerate(self.individuals):
            ind_id, chromosome = pair
            if not ind_id:
                raise ValidationError("empty individual id", f"individuals[{i}]")
            try:
                validate_chromosome(chromosome, self.problem.chromosome_length)
            except EncodingViolation as exc:
                raise ValidationError(str(exc), f"individuals[{i}]") from exc


@dataclass(frozen=True)
class ResultSubmission:
    """Fitness values a client reports for one packet: (id, fitness) only."""

    packet_id: str
    results: tuple  # of (individual_id, fitness) pairs

    def __post_init__(self):
        if not self.packet_id:
            raise ValidationError("packet_id must be non-empty", "packet_id")
        for i, pair in enumerate(self.results):
            _, fitness = pair
            if not math.isfinite(fitness):
                raise ValidationError(
                    "fitness must be finite", f"results[{i}].fitness"
                )


@dataclass(frozen=True)
class LoopReply:
    """Server answer to a fetch or submission: keep going or stop."""

    status: str  # "continue" | "finished"
    next_packet: Optional[Packet] = None
    run_summary: Optional[dict] = None  # {"evaluated_count", "best_fitness"}
    duplicate: bool = False

    def __post_init__(self):
        if self.status == "continue":
            if self.next_packet is None:
                raise ValidationError("continue reply needs a packet", "next_packet")
        elif self.status == "finished":
            if self.next_packet is not None:
                raise ValidationError(
                    "finished reply must not carry a packet", "next_packet"
                )
        else:
            raise ValidationError(f"unknown status {self.status!r}", "status")


def _packet_to_obj(packet: Packet) -> dict:
    return {
        "packet_id": packet.packet_id,
        "algorithm_id": packet.algorithm_id,
        "individuals": [[ind_id, chromosome] for ind_id, chromosome in packet.individuals],
        "problem": packet.problem.to_dict(),
        "lease_seconds": packet.lease_seconds,
    }


def encode_packet(packet: Packet) -> bytes:
    """Canonical JSON encoding; decode(encode(p)) == p."""
    return json.dumps(_packet_to_obj(packet), separators=(",", ":")).encode("utf-8")


def _require(obj: dict, name: str, kind, parent: str = ""):
    path = f"{parent}.{name}" if parent else name
    if name not in obj:
        raise ParseError(f"missing field {path}", path)
    value = obj[name]
    if kind is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ParseError(f"field {path} must be a number", path)
        return float(value)
    if kind is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ParseError(f"field {path} must be an integer", path)
        return value
    if not isinstance(value, kind):
        raise ParseError(f"field {path} has wrong type", path)
    return value


def _loads(data: bytes) -> dict:
    try:
        obj = json.loads(data.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ParseError(f"malformed JSON: {exc}") from exc
    if not isinstance(obj, dict):
        raise ParseError("top-level value must be an object")
    return obj


def _packet_from_obj(obj: dict, parent: str = "") -> Packet:
    raw_individuals = _require(obj, "individuals", list, parent)
    individuals = []
    for i, item in enumerate(raw_individuals):
        path = f"{parent + '.' if parent else ''}individuals[{i}]"
        if (
            not isinstance(item, (list, tuple))
            or len(item) != 2
            or not isinstance(item[0], str)
            or not isinstance(item[1], str)
        ):
            raise ParseError(f"field {path} must be an [id, chromosome] pair", path)
        individuals.append((item[0], item[1]))
    problem_obj = _require(obj, "problem", dict, parent)
    try:
        problem = ProblemSpec.from_dict(problem_obj)
    except (KeyError, ValueError, TypeError) as exc:
        path = f"{parent + '.' if parent else ''}problem"
        raise ParseError(f"bad problem descriptor: {exc}", path) from exc
    return Packet(
        packet_id=_require(obj, "packet_id", str, parent),
        algorithm_id=_require(obj, "algorithm_id", str, parent),
        individuals=tuple(individuals),
        problem=problem,
        lease_seconds=_require(obj, "lease_seconds", int, parent),
    )


def decode_packet(data: bytes) -> Packet:
    return _packet_from_obj(_loads(data))


def encode_submission(submission: ResultSubmission) -> bytes:
    obj = {
        "packet_id": submission.packet_id,
        "results": [[ind_id, fitness] for ind_id, fitness in submission.results],
    }
    return json.dumps(obj, separators=(",", ":")).encode("utf-8")


def decode_submission(data: bytes) -> ResultSubmission:
    """Parse a result submission, or raise naming the first bad field."""
    obj = _loads(data)
    raw_results = _require(obj, "results", list)
    results = []
    for i, item in enumerate(raw_results):
        path = f"results[{i}]"
        if not isinstance(item, (list, tuple)) or len(item) != 2:
            raise ParseError(f"field {path} must be an [id, fitness] pair", path)
        ind_id, fitness = item
        if not isinstance(ind_id, str):
            raise ParseError(f"field {path}[0] must be a string id", f"{path}[0]")
        if isinstance(fitness, bool) or not isinstance(fitness, (int, float)):
            raise ParseError(
                f"field {path}[1] must be a number", f"{path}.fitness"
            )
        if not math.isfinite(fitness):
            raise ValidationError(
                "fitness must be finite", f"{path}.fitness"
            )
        results.append((ind_id, float(fitness)))
    return ResultSubmission(
        packet_id=_require(obj, "packet_id", str), results=tuple(results)
    )


def encode_loop_reply(reply: LoopReply) -> bytes:
    obj: dict = {"status": reply.status}
    if reply.next_packet is not None:
        obj["next_packet"] = _packet_to_obj(reply.next_packet)
    if reply.run_summary is not None:
        obj["run_summary"] = reply.run_summary
    if reply.duplicate:
        obj["duplicate"] = True
    return json.dumps(obj, separators=(",", ":")).encode("utf-8")


def decode_loop_reply(data: bytes) -> LoopReply:
    obj = _loads(data)
    status = _require(obj, "status", str)
    next_packet = None
    if "next_packet" in obj:
        if not isinstance(obj["next_packet"], dict):
            raise ParseError("field next_packet must be an object", "next_packet")
        next_packet = _packet_from_obj(obj["next_packet"], "next_packet")
    run_summary = None
    if "run_summary" in obj:
        summary = obj["run_summary"]
        if not isinstance(summary, dict):
            raise ParseError("field run_summary must be an object", "run_summary")
        run_summary = {
            "evaluated_count": _require(summary, "evaluated_count", int, "run_summary"),
            "best_fitness": summary.get("best_fitness"),
        }
        if "ingested" in summary:
            run_summary["ingested"] = bool(summary["ingested"])
    return LoopReply(
        status=status,
        next_packet=next_packet,
        run_summary=run_summary,
        duplicate=bool(obj.get("duplicate", False)),
    )
