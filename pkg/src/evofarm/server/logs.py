"""Run log with two modes.

quiet: a single header line at startup, nothing on the request path.
debug: per-request lines plus one line per individual leased or ingested,
the way a development-mode web stack logs every query it runs.

Lines are handed to a background writer thread through a queue, so the
request path never blocks on file I/O; the cost debug mode pays is the
line formatting itself (callers must guard formatting with
``debug_enabled``).
"""
from __future__ import annotations

import queue
import threading
import time
from pathlib import Path
from typing import Optional


_CLOSE = object()


class LogWriter:
    def __init__(self, path: Optional[Path], mode: str = "quiet"):
        if mode not in ("quiet", "debug"):
            raise ValueError(f"unknown log mode {mode!r}")
        self.mode = mode
        self.path = Path(path) if path is not None else None
        self._fh = None
        self._queue: queue.SimpleQueue = queue.SimpleQueue()
        self._thread: Optional[threading.Thread] = None
        if self.path is not None:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self._fh = open(self.path, "a", encoding="utf-8")
            self._fh.write(
                f"# evofarm log mode={mode} started={time.strftime('%Y-%m-%dT%H:%M:%S')}\n"
            )
            self._fh.flush()
            self._thread = threading.Thread(
                target=self._drain, name="evofarm-log", daemon=True
            )
            self._thread.start()

    @property
    def debug_enabled(self) -> bool:
        return self.mode == "debug" and self._fh is not None

    def debug(self, line: str) -> None:
        """Enqueue one pre-formatted line; no-op outside debug mode."""
        if self.debug_enabled:
            self._queue.put(line)

    def _drain(self) -> None:
        while True:
            item = self._queue.get()
            if item is _CLOSE:
                break
            lines = [item]
            # Batch whatever is already queued into one write.
            while True:
                try:
                    lines.append(self._queue.get_nowait())
                except queue.Empty:
                    break
            if _CLOSE in lines:
                lines = [l for l in lines if l is not _CLOSE]
                self._write(lines)
                break
            self._write(lines)
        self._fh.flush()

    def _write(self, lines: list) -> None:
        if lines:
            self._fh.write("\n".join(lines) + "\n")
            self._fh.flush()

    def close(self) -> None:
        if self._fh is None:
            return
        self._queue.put(_CLOSE)
        if self._thread is not None:
            self._thread.join(timeout=5)
        self._fh.close()
        self._fh = None


def null_log() -> LogWriter:
    """A writer with no sink at all; every call is a no-op."""
    return LogWriter(None, "quiet")
