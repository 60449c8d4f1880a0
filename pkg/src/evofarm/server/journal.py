"""Append-only journal of evaluated individuals, one JSON line per event.

The journal is the durability story: replaying it reconstructs every
evaluated individual, the evaluated count, and the best fitness exactly,
even after an abrupt shutdown (a torn final line is ignored).
"""
from __future__ import annotations

import json
import math
import os
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional


@dataclass
class ReplayState:
    """What a journal file pins down about one run."""

    algorithm_id: Optional[str] = None
    seed: Optional[int] = None
    config: Optional[dict] = None
    evaluated: list = field(default_factory=list)  # (id, chromosome, fitness)
    evaluated_count: int = 0
    best_fitness: Optional[float] = None
    finished: bool = False


class Journal:
    """Writer side: append records and flush so a kill loses at most the
    line being written."""

    def __init__(self, path: Path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._fh = open(self.path, "a", encoding="utf-8")

    def append(self, record: dict) -> None:
        self._fh.write(json.dumps(record, separators=(",", ":")) + "\n")
        self._fh.flush()

    def created(self, algorithm_id: str, seed: int, config: dict) -> None:
        self.append(
            {
                "type": "created",
                "algorithm_id": algorithm_id,
                "seed": seed,
                "config": config,
                "ts": time.time(),
            }
        )

    def evaluated(self, packet_id: str, client: str, results: list) -> None:
        # results: [(individual_id, chromosome, fitness), ...]
        self.append(
            {
                "type": "evaluated",
                "packet_id": packet_id,
                "client": client,
                "results": [[i, c, f] for i, c, f in results],
                "ts": time.time(),
            }
        )

    def finished(self, evaluated_count: int, best_fitness: Optional[float]) -> None:
        self.append(
            {
                "type": "finished",
                "evaluated_count": evaluated_count,
                "best_fitness": best_fitness,
                "ts": time.time(),
            }
        )

    def rotate(self) -> Path:
        """Close the current file and move it aside; start a fresh journal."""
        self._fh.close()
        n = 1
        while True:
            rotated = self.path.with_name(f"{self.path.name}.{n}")
            if not rotated.exists():
                break
            n += 1
        os.replace(self.path, rotated)
        self._fh = open(self.path, "a", encoding="utf-8")
        return rotated

    def close(self) -> None:
        self._fh.close()


def replay(path: Path) -> ReplayState:
    """Rebuild run state from a journal file.

    A truncated final line (abrupt shutdown mid-write) ends the replay at
    the last complete record.
    """
    state = ReplayState()
    try:
        fh = open(path, "r", encoding="utf-8")
    except FileNotFoundError:
        return state
    with fh:
        for line in fh:
            try:
                record = json.loads(line)
            except json.JSONDecodeError:
                break
            kind = record.get("type")
            if kind == "created":
                state.algorithm_id = record.get("algorithm_id")
                state.seed = record.get("seed")
                state.config = record.get("config")
            elif kind == "evaluated":
                for ind_id, chromosome, fitness in record["results"]:
                    if not math.isfinite(fitness):
                        continue
                    state.evaluated.append((ind_id, chromosome, fitness))
                    state.evaluated_count += 1
                    if state.best_fitness is None:
                        state.best_fitness = fitness
                    else:
                        sense_min = _sense_is_minimize(state.config)
                        if (sense_min and fitness < state.best_fitness) or (
                            not sense_min and fitness > state.best_fitness
                        ):
                            state.best_fitness = fitness
            elif kind == "finished":
                state.finished = True
    return state


def _sense_is_minimize(config: Optional[dict]) -> bool:
    if config and isinstance(config.get("problem"), dict):
        return config["problem"].get("objective_sense", "minimize") == "minimize"
    return True
