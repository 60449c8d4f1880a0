"""Evolutionary-algorithm core: bitstring genomes, gene decoding, benchmark
fitness functions, genetic operators, and tournament-with-replacement
selection.

Chromosomes are plain Python strings of '0'/'1' characters, which is also
their wire and journal representation.  All functions here are pure except
for the explicit ``rng`` argument; callers that share an rng across threads
must serialize access themselves.
"""
from __future__ import annotations

import math
import random
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Sequence


class EncodingViolation(ValueError):
    """A chromosome or gene code does not fit the declared encoding."""


class InsufficientPopulation(ValueError):
    """Too few evaluated individuals to hold a tournament."""


class ObjectiveSense(str, Enum):
    MINIMIZE = "minimize"
    MAXIMIZE = "maximize"


class ProblemKind(str, Enum):
    GRIEWANK_AS_PRINTED = "griewank_as_printed"
    GRIEWANK_STANDARD = "griewank_standard"
    ONEMAX = "onemax"


class IndividualState(str, Enum):
    FRESH = "fresh"
    LEASED = "leased"
    EVALUATED = "evaluated"


@dataclass(frozen=True)
class GeneCodec:
    """Maps fixed-width binary gene codes onto a real interval.

    A gene code c in [0, 2**bits_per_gene - 1] decodes to
    (range_max - range_min) * c / max_code + range_min, so code 0 hits the
    lower endpoint and max_code hits the upper endpoint exactly.
    """

    bits_per_gene: int
    range_min: float
    range_max: float

    def __post_init__(self):
        if self.bits_per_gene < 1:
            raise ValueError("bits_per_gene must be >= 1")
        if not self.range_max > self.range_min:
            raise ValueError("range_max must exceed range_min")

    @property
    def max_code(self) -> int:
        return (1 << self.bits_per_gene) - 1


@dataclass(frozen=True)
class ProblemSpec:
    """An optimization problem: what to decode and how to score it."""

    kind: ProblemKind
    dimensions: int
    codec: GeneCodec
    objective_sense: ObjectiveSense = None  # type: ignore[assignment]

    def __post_init__(self):
        if self.dimensions < 1:
            raise ValueError("dimensions must be >= 1")
        expected = (
            ObjectiveSense.MAXIMIZE
            if self.kind is ProblemKind.ONEMAX
            else ObjectiveSense.MINIMIZE
        )
        if self.objective_sense is None:
            object.__setattr__(self, "objective_sense", expected)
        elif self.objective_sense is not expected:
            raise ValueError(
                f"{self.kind.value} must use objective_sense={expected.value}"
            )

    @property
    def chromosome_length(self) -> int:
        return self.dimensions * self.codec.bits_per_gene

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "dimensions": self.dimensions,
            "bits_per_gene": self.codec.bits_per_gene,
            "range_min": self.codec.range_min,
            "range_max": self.codec.range_max,
            "objective_sense": self.objective_sense.value,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ProblemSpec":
        return cls(
            kind=ProblemKind(d["kind"]),
            dimensions=int(d["dimensions"]),
            codec=GeneCodec(
                bits_per_gene=int(d["bits_per_gene"]),
                range_min=float(d["range_min"]),
                range_max=float(d["range_max"]),
            ),
            objective_sense=ObjectiveSense(d["objective_sense"])
            if "objective_sense" in d
            else None,
        )


def griewank_problem(
    dimensions: int = 10, kind: ProblemKind = ProblemKind.GRIEWANK_STANDARD
) -> ProblemSpec:
    """The benchmark setup used throughout: 20-bit genes on [-511, 512]."""
    return ProblemSpec(
        kind=kind,
        dimensions=dimensions,
        codec=GeneCodec(bits_per_gene=20, range_min=-511.0, range_max=512.0),
    )


def onemax_problem(bits: int = 20) -> ProblemSpec:
    return ProblemSpec(
        kind=ProblemKind.ONEMAX,
        dimensions=bits,
        codec=GeneCodec(bits_per_gene=1, range_min=0.0, range_max=1.0),
    )


@dataclass
class Individual:
    """One candidate solution with its lifecycle state.

    state == EVALUATED exactly when fitness is present; fitness is always
    finite.
    """

    id: str
    chromosome: str
    fitness: Optional[float] = None
    state: IndividualState = IndividualState.FRESH

    def __post_init__(self):
        has_fitness = self.fitness is not None
        if has_fitness != (self.state is IndividualState.EVALUATED):
            raise ValueError("fitness present iff state is evaluated")
        if has_fitness and not math.isfinite(self.fitness):
            raise ValueError("fitness must be finite")

    def mark_evaluated(self, fitness: float) -> None:
        if not math.isfinite(fitness):
            raise ValueError("fitness must be finite")
        self.fitness = float(fitness)
        self.state = IndividualState.EVALUATED


@dataclass(frozen=True)
class OperatorConfig:
    """Breeding knobs: which operator produces each new individual and how.

    crossover_share + mutation_share must sum to 1; each new chromosome is
    produced by crossover with probability crossover_share, else by
    mutation.  per_bit_mutation_prob of None means 1/length at apply time.
    """

    crossover_share: float = 0.8
    mutation_share: float = 0.2
    per_bit_mutation_prob: Optional[float] = None
    tournament_size: int = 4
    losers_per_tournament: int = 2

    def __post_init__(self):
        if not 0.0 <= self.crossover_share <= 1.0:
            raise ValueError("crossover_share must lie in [0, 1]")
        if not 0.0 <= self.mutation_share <= 1.0:
            raise ValueError("mutation_share must lie in [0, 1]")
        if abs(self.crossover_share + self.mutation_share - 1.0) > 1e-9:
            raise ValueError("crossover_share + mutation_share must equal 1")
        if self.per_bit_mutation_prob is not None and not (
            0.0 < self.per_bit_mutation_prob < 1.0
        ):
            raise ValueError("per_bit_mutation_prob must lie in (0, 1)")
        if self.tournament_size < 2:
            raise ValueError("tournament_size must be >= 2")
        if not 1 <= self.losers_per_tournament < self.tournament_size:
            raise ValueError("losers_per_tournament must satisfy 1 <= p < tournament_size")


def validate_chromosome(bits: str, expected_length: Optional[int] = None) -> None:
    """Raise EncodingViolation unless bits is a well-formed chromosome."""
    if expected_length is not None and len(bits) != expected_length:
        raise EncodingViolation(
            f"chromosome length {len(bits)} != expected {expected_length}"
        )
    if bits.strip("01"):
        raise EncodingViolation("chromosome may contain only '0' and '1'")


def random_chromosome(length: int, rng: random.Random) -> str:
    """Uniform i.i.d. bits."""
    return "".join("1" if rng.random() < 0.5 else "0" for _ in range(length))


def decode_gene(code: int, codec: GeneCodec) -> float:
    """Map an integer gene code onto the codec's real interval.

    Exact at both endpoints: code 0 gives range_min, max_code gives
    range_max.  Monotone non-decreasing in code.
    """
    if not 0 <= code <= codec.max_code:
        raise EncodingViolation(
            f"gene code {code} outside [0, {codec.max_code}]"
        )
    span = codec.range_max - codec.range_min
    return span * code / codec.max_code + codec.range_min


def decode_chromosome(chromosome: str, spec: ProblemSpec) -> list[float]:
    """Split the bitstring into genes (most significant bit first) and
    decode each one."""
    validate_chromosome(chromosome, spec.chromosome_length)
    bpg = spec.codec.bits_per_gene
    return [
        decode_gene(int(chromosome[i * bpg : (i + 1) * bpg], 2), spec.codec)
        for i in range(spec.dimensions)
    ]


def griewank_standard(xs: Sequence[float]) -> float:
    """sum(x_i^2)/4000 - prod(cos(x_i/sqrt(i))) + 1; zero at the origin."""
    quad = 0.0
    trig = 1.0
    for i, x in enumerate(xs):
        quad += x * x / 4000.0
        trig *= math.cos(x / math.sqrt(i + 1.0))
    return quad - trig + 1.0


def griewank_as_printed(xs: Sequence[float]) -> float:
    """Variant with the cosine product added instead of subtracted; its
    value at the origin is 2."""
    quad = 0.0
    trig = 1.0
    for i, x in enumerate(xs):
        quad += x * x / 4000.0
        trig *= math.cos(x / math.sqrt(i + 1.0))
    return quad + trig + 1.0


def evaluate(chromosome: str, spec: ProblemSpec) -> float:
    """Decode and score one chromosome under the problem spec."""
    if spec.kind is ProblemKind.ONEMAX:
        validate_chromosome(chromosome, spec.chromosome_length)
        return float(chromosome.count("1"))
    xs = decode_chromosome(chromosome, spec)
    if spec.kind is ProblemKind.GRIEWANK_STANDARD:
        return griewank_standard(xs)
    return griewank_as_printed(xs)


def crossover(
    parent_a: str, parent_b: str, rng: random.Random
) -> tuple[str, str]:
    """One-point crossover; the cut point is uniform on [1, len-1].

    The pair of children preserves the multiset of bits at every position.
    """
    if len(parent_a) != len(parent_b):
        raise EncodingViolation("crossover parents must have equal length")
    if len(parent_a) < 2:
        raise EncodingViolation("crossover needs chromosomes of length >= 2")
    k = rng.randint(1, len(parent_a) - 1)
    return (
        parent_a[:k] + parent_b[k:],
        parent_b[:k] + parent_a[k:],
    )


def mutate(parent: str, per_bit_prob: float, rng: random.Random) -> str:
    """Flip each bit independently with probability per_bit_prob."""
    if not 0.0 < per_bit_prob < 1.0:
        raise ValueError("per_bit_prob must lie in (0, 1)")
    bits = list(parent)
    for i, b in enumerate(bits):
        if rng.random() < per_bit_prob:
            bits[i] = "1" if b == "0" else "0"
    return "".join(bits)


def tournament_replace(
    population: Sequence[Individual],
    ops: OperatorConfig,
    count: int,
    sense: ObjectiveSense,
    rng: random.Random,
    trace: Optional[list] = None,
) -> list[str]:
    """Breed `count` new chromosomes by repeated tournaments.

    Each tournament draws tournament_size distinct individuals uniformly,
    discards the worst losers_per_tournament by fitness, and breeds from
    the survivors: with probability crossover_share two uniformly drawn
    survivors are crossed (one child kept), otherwise one survivor is
    mutated.  Discarded individuals never parent the chromosome produced
    by their own tournament.

    `trace`, when given, receives one (survivor_ids, discarded_ids,
    parent_ids) tuple per tournament for instrumented checks.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    if len(population) < ops.tournament_size:
        raise InsufficientPopulation(
            f"need at least {ops.tournament_size} evaluated individuals, "
            f"have {len(population)}"
        )
    for ind in population:
        if ind.state is not IndividualState.EVALUATED:
            raise ValueError(f"individual {ind.id} is not evaluated")

    # Sort worst-first so the first p entries are the discards.
    worst_first = sense is ObjectiveSense.MINIMIZE
    out: list[str] = []
    for _ in range(count):
        contestants = rng.sample(list(population), ops.tournament_size)
        ranked = sorted(
            contestants, key=lambda ind: ind.fitness, reverse=worst_first
        )
        discarded = ranked[: ops.losers_per_tournament]
        survivors = ranked[ops.losers_per_tournament :]
        if rng.random() < ops.crossover_share:
            pa = rng.choice(survivors)
            pb = rng.choice(survivors)
            child = rng.choice(crossover(pa.chromosome, pb.chromosome, rng))
            parents = [pa, pb]
        else:
            parent = rng.choice(survivors)
            prob = ops.per_bit_mutation_prob
            if prob is None:
                prob = 1.0 / len(parent.chromosome)
            child = mutate(parent.chromosome, prob, rng)
            parents = [parent]
        if trace is not None:
            trace.append(
                (
                    [s.id for s in survivors],
                    [d.id for d in discarded],
                    [p.id for p in parents],
                )
            )
        out.append(child)
    return out


def meets_threshold(
    best_fitness: float, threshold: float, sense: ObjectiveSense
) -> bool:
    if sense is ObjectiveSense.MINIMIZE:
        return best_fitness <= threshold
    return best_fitness >= threshold


def is_terminated(
    *,
    evaluated_count: int,
    best_fitness: Optional[float],
    max_evaluations: Optional[int] = None,
    fitness_threshold: Optional[float] = None,
    sense: ObjectiveSense = ObjectiveSense.MINIMIZE,
) -> bool:
    """True once the evaluation budget is spent or the fitness threshold
    is met (<= when minimizing, >= when maximizing)."""
    if max_evaluations is not None and evaluated_count >= max_evaluations:
        return True
    if (
        fitness_threshold is not None
        and best_fitness is not None
        and meets_threshold(best_fitness, fitness_threshold, sense)
    ):
        return True
    return False
