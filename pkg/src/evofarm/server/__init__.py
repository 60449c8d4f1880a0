from .httpd import Allowlist, ServerApp, ServerHandle
from .journal import Journal, replay
from .logs import LogWriter, null_log
from .runtime import (
    AlgorithmConfig,
    AlgorithmRegistry,
    AlgorithmRuntime,
    DuplicateAlgorithm,
    LeaseExpired,
    NoWorkAvailable,
    RunStats,
    UnknownAlgorithm,
)

__all__ = [
    "Allowlist",
    "ServerApp",
    "ServerHandle",
    "Journal",
    "replay",
    "LogWriter",
    "null_log",
    "AlgorithmConfig",
    "AlgorithmRegistry",
    "AlgorithmRuntime",
    "DuplicateAlgorithm",
    "LeaseExpired",
    "NoWorkAvailable",
    "RunStats",
    "UnknownAlgorithm",
]
