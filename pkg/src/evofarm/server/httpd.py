"""HTTP front end.

Endpoints (JSON bodies, see the protocol module):
  POST /algorithm                      create, body = algorithm config
  GET  /algorithm/{id}/packet          first packet for a client
  POST /algorithm/{id}/results         submit results, reply = loop reply
  GET  /algorithm/{id}/status          run status snapshot
  POST /algorithm/{id}/restart         regenerate population, zero counters
  GET  /algorithm/{id}/worker          browser worker page (static assets)
  GET  /algorithm/generation/{id}      legacy-style alias for the worker page
  GET  /static/{file}                  worker page assets

Each request is handled on its own thread; handlers contend only on the
per-algorithm lock inside the runtime.
"""
from __future__ import annotations

import fnmatch
import json
import threading
import time
import traceback
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from typing import Optional

from .. import protocol
from .logs import LogWriter, null_log
from .runtime import (
    AlgorithmRegistry,
    DuplicateAlgorithm,
    LeaseExpired,
    NoWorkAvailable,
    UnknownAlgorithm,
)


class Allowlist:
    """IP-based authentication: a plain text file of address patterns
    (fnmatch style, one per line, # comments).  No file means open access."""

    def __init__(self, patterns: Optional[list] = None):
        self.patterns = patterns

    @classmethod
    def load(cls, path: Optional[Path]) -> "Allowlist":
        if path is None:
            return cls(None)
        patterns = []
        for line in Path(path).read_text(encoding="utf-8").splitlines():
            line = line.strip()
            if line and not line.startswith("#"):
                patterns.append(line)
        return cls(patterns)

    def allows(self, address: str) -> bool:
        if self.patterns is None:
            return True
        return any(fnmatch.fnmatch(address, pat) for pat in self.patterns)


class ServerApp:
    """Everything the handler needs, shared across request threads."""

    def __init__(
        self,
        journal_dir: Path,
        allowlist: Optional[Allowlist] = None,
        log: Optional[LogWriter] = None,
        lease_seconds: int = 120,
        service_delay_ms: float = 0.0,
        assets_dir: Optional[Path] = None,
        sweep_interval: float = 1.0,
    ):
        self.log = log if log is not None else null_log()
        self.allowlist = allowlist if allowlist is not None else Allowlist(None)
        self.registry = AlgorithmRegistry(
            journal_dir,
            default_lease_seconds=lease_seconds,
            log=self.log,
            service_delay_s=service_delay_ms / 1000.0,
        )
        self.assets_dir = Path(assets_dir) if assets_dir is not None else None
        self.sweep_interval = sweep_interval
        self._stop = threading.Event()
        self._sweeper = threading.Thread(
            target=self._sweep, name="evofarm-lease-sweeper", daemon=True
        )
        self._sweeper.start()

    def _sweep(self) -> None:
        while not self._stop.wait(self.sweep_interval):
            self.registry.expire_all()

    def close(self) -> None:
        self._stop.set()
        self._sweeper.join(timeout=5)
        self.registry.close()
        self.log.close()


class _Handler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"
    server_version = "evofarm/0.1"

    # Quiet down the default stderr chatter; our LogWriter owns logging.
    def log_message(self, format, *args):
        pass

    @property
    def app(self) -> ServerApp:
        return self.server.app  # type: ignore[attr-defined]

    def _client_ip(self) -> str:
        return self.client_address[0]

    def _client_key(self) -> str:
        return self.headers.get("X-Client-Label") or self._client_ip()

    def _send(self, status: int, body: bytes, content_type: str = "application/json") -> None:
        self.send_response(status)
        self.send_header("Content-Type", content_type)
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def _send_json(self, status: int, obj: dict) -> None:
        self._send(status, json.dumps(obj).encode("utf-8"))

    def _read_body(self) -> bytes:
        length = int(self.headers.get("Content-Length") or 0)
        return self.rfile.read(length) if length else b""

    def _handle(self, method: str) -> None:
        started = time.perf_counter()
        status = 500
        path = self.path.split("?", 1)[0].rstrip("/")
        try:
            if not self.app.allowlist.allows(self._client_ip()):
                status = 403
                self._send_json(status, {"error": "forbidden"})
                return
            status = self._route(method, path)
        except BrokenPipeError:
            status = 0  # client went away mid-response
        except Exception as exc:
            status = 500
            try:
                self._send_json(
                    status, {"error": "internal", "detail": str(exc)}
                )
            except Exception:
                pass
            traceback.print_exc()
        finally:
            if self.app.log.debug_enabled:
                ms = (time.perf_counter() - started) * 1000.0
                self.app.log.debug(
                    f"{time.strftime('%H:%M:%S')} request client={self._client_ip()} "
                    f"label={self._client_key()} method={method} path={path} "
                    f"status={status} ms={ms:.2f}"
                )

    def _route(self, method: str, path: str) -> int:
        parts = [p for p in path.split("/") if p]
        if method == "POST" and parts == ["algorithm"]:
            return self._create()
        if len(parts) == 3 and parts[0] == "algorithm":
            if parts[1] == "generation" and method == "GET":
                return self._worker_page()
            _, alg_id, action = parts
            if method == "GET" and action == "packet":
                return self._packet(alg_id)
            if method == "POST" and action == "results":
                return self._results(alg_id)
            if method == "GET" and action == "status":
                return self._status(alg_id)
            if method == "POST" and action == "restart":
                return self._restart(alg_id)
            if method == "GET" and action == "worker":
                return self._worker_page()
        if method == "GET" and len(parts) == 2 and parts[0] == "static":
            return self._static(parts[1])
        self._send_json(404, {"error": "not_found", "path": path})
        return 404

    def _create(self) -> int:
        try:
            config = json.loads(self._read_body().decode("utf-8"))
            if not isinstance(config, dict):
                raise ValueError("config body must be a JSON object")
            runtime = self.app.registry.create(config)
        except DuplicateAlgorithm as exc:
            self._send_json(409, {"error": "conflict", "algorithm_id": str(exc)})
            return 409
        except (ValueError, KeyError, TypeError, json.JSONDecodeError) as exc:
            self._send_json(400, {"error": "validation", "detail": str(exc)})
            return 400
        self.app.log.debug(
            f"{time.strftime('%H:%M:%S')} created alg={runtime.config.algorithm_id} "
            f"seed={runtime.config.seed}"
        )
        self._send_json(
            201,
            {
                "algorithm_id": runtime.config.algorithm_id,
                "seed": runtime.config.seed,
            },
        )
        return 201

    def _runtime(self, alg_id: str):
        return self.app.registry.get(alg_id)

    def _packet(self, alg_id: str) -> int:
        try:
            runtime = self._runtime(alg_id)
            packet = runtime.next_packet(self._client_key())
        except UnknownAlgorithm:
            self._send_json(404, {"error": "unknown_algorithm"})
            return 404
        except NoWorkAvailable:
            self._send_json(503, {"error": "no_work", "retry_after_ms": 250})
            return 503
        if packet is None:
            self._send(200, protocol.encode_loop_reply(runtime.finished_reply()))
            return 200
        reply = protocol.LoopReply(status="continue", next_packet=packet)
        self._send(200, protocol.encode_loop_reply(reply))
        return 200

    def _results(self, alg_id: str) -> int:
        try:
            runtime = self._runtime(alg_id)
        except UnknownAlgorithm:
            self._send_json(404, {"error": "unknown_algorithm"})
            return 404
        try:
            submission = protocol.decode_submission(self._read_body())
        except protocol.ProtocolError as exc:
            self._send_json(
                400, {"error": "parse", "field": exc.field, "detail": str(exc)}
            )
            return 400
        try:
            reply = runtime.submit(submission, self._client_key())
        except LeaseExpired:
            self._send_json(409, {"error": "lease_expired"})
            return 409
        except protocol.ValidationError as exc:
            self._send_json(
                400, {"error": "validation", "field": exc.field, "detail": str(exc)}
            )
            return 400
        except NoWorkAvailable:
            # Results were ingested but nothing is dispatchable yet; the
            # client should retry, which lands on the idempotent duplicate
            # path and picks up the next packet once one exists.
            self._send_json(503, {"error": "no_work", "accepted": True, "retry_after_ms": 250})
            return 503
        self._send(200, protocol.encode_loop_reply(reply))
        return 200

    def _status(self, alg_id: str) -> int:
        try:
            status = self._runtime(alg_id).run_status()
        except UnknownAlgorithm:
            self._send_json(404, {"error": "unknown_algorithm"})
            return 404
        if "format=csv" in (self.path.split("?", 1) + [""])[1]:
            row = (
                "algorithm_id,clients,packet_size,evaluated,seconds,rate\n"
                f"{status['algorithm_id']},{len(status['per_client'])},"
                f"{status['config']['packet_size']},{status['evaluated_count']},"
                f"{status['elapsed_seconds']:.6f},{status['eval_rate']:.6f}\n"
            )
            self._send(200, row.encode("utf-8"), "text/csv; charset=utf-8")
            return 200
        self._send_json(200, status)
        return 200

    def _restart(self, alg_id: str) -> int:
        try:
            runtime = self._runtime(alg_id)
        except UnknownAlgorithm:
            self._send_json(404, {"error": "unknown_algorithm"})
            return 404
        body = self._read_body()
        if body.strip():
            try:
                overrides = json.loads(body.decode("utf-8"))
                if not isinstance(overrides, dict):
                    raise ValueError("restart body must be a JSON object")
                if overrides:
                    runtime.config = _apply_overrides(runtime.config, overrides)
            except (ValueError, json.JSONDecodeError) as exc:
                self._send_json(400, {"error": "validation", "detail": str(exc)})
                return 400
        runtime.restart()
        self.app.log.debug(
            f"{time.strftime('%H:%M:%S')} restarted alg={alg_id}"
        )
        self._send_json(200, {"algorithm_id": alg_id, "state": "created"})
        return 200

    def _worker_page(self) -> int:
        return self._static("index.html")

    def _static(self, name: str) -> int:
        if self.app.assets_dir is None:
            self._send_json(404, {"error": "no_worker_assets"})
            return 404
        target = (self.app.assets_dir / name).resolve()
        if not str(target).startswith(str(self.app.assets_dir.resolve())) or not target.is_file():
            self._send_json(404, {"error": "not_found"})
            return 404
        content_type = {
            ".html": "text/html; charset=utf-8",
            ".js": "text/javascript; charset=utf-8",
            ".css": "text/css; charset=utf-8",
            ".map": "application/json",
        }.get(target.suffix, "application/octet-stream")
        self._send(200, target.read_bytes(), content_type)
        return 200

    def do_GET(self):
        self._handle("GET")

    def do_POST(self):
        self._handle("POST")


class _Server(ThreadingHTTPServer):
    daemon_threads = True
    allow_reuse_address = True

    def __init__(self, address, app: ServerApp):
        super().__init__(address, _Handler)
        self.app = app


class ServerHandle:
    """A running server plus the thread driving it."""

    def __init__(self, app: ServerApp, host: str = "127.0.0.1", port: int = 0):
        self.app = app
        self._server = _Server((host, port), app)
        self.host, self.port = self._server.server_address[:2]
        self._thread = threading.Thread(
            target=self._server.serve_forever,
            kwargs={"poll_interval": 0.1},
            name="evofarm-http",
            daemon=True,
        )
        self._thread.start()

    @property
    def address(self) -> str:
        return f"http://{self.host}:{self.port}"

    def close(self) -> None:
        self._server.shutdown()
        self._thread.join(timeout=10)
        self._server.server_close()
        self.app.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def _apply_overrides(config, overrides: dict):
    """Parameter edits arrive with a restart; only these knobs may move."""
    allowed = {
        "packet_size",
        "max_evaluations",
        "fitness_threshold",
        "operators",
        "lease_seconds",
        "elite_size",
    }
    unknown = set(overrides) - allowed
    if unknown:
        raise ValueError(f"cannot override: {sorted(unknown)}")
    merged = config.to_dict()
    for key, value in overrides.items():
        if key == "operators":
            merged_ops = dict(merged["operators"])
            merged_ops.update(value)
            merged["operators"] = merged_ops
        else:
            merged[key] = value
    from .runtime import AlgorithmConfig

    return AlgorithmConfig.from_dict(merged)
