import json
import re
import signal
import subprocess
import sys

import pytest
import requests

from evofarm.evocore import griewank_problem


def start_server(tmp_path, *extra_args):
    proc = subprocess.Popen(
        [sys.executable, "-m", "evofarm.server.cli", "--port", "0",
         "--journal-dir", str(tmp_path / "journals"), *extra_args],
        stdout=subprocess.PIPE,
        stderr=subprocess.STDOUT,
        text=True,
    )
    line = proc.stdout.readline()
    match = re.search(r"listening on (http://\S+)", line)
    assert match, f"server did not announce itself: {line!r}"
    return proc, match.group(1)


def test_server_cli_serves_and_shuts_down_cleanly(tmp_path):
    proc, address = start_server(tmp_path)
    try:
        config = {
            "algorithm_id": "cli-alg",
            "problem": griewank_problem().to_dict(),
            "population_size": 64,
            "elite_size": 32,
            "packet_size": 16,
            "max_evaluations": 64,
            "seed": 3,
        }
        assert requests.post(address + "/algorithm", json=config).status_code == 201
        status = requests.get(address + "/algorithm/cli-alg/status").json()
        assert status["state"] == "created"
    finally:
        proc.send_signal(signal.SIGTERM)
        assert proc.wait(timeout=10) == 0


def test_simclient_cli_emits_csv(tmp_path):
    proc, address = start_server(tmp_path)
    try:
        config = {
            "algorithm_id": "cli-run",
            "problem": griewank_problem().to_dict(),
            "population_size": 64,
            "elite_size": 32,
            "packet_size": 16,
            "max_evaluations": 64,
            "seed": 4,
        }
        requests.post(address + "/algorithm", json=config)
        out = subprocess.run(
            [sys.executable, "-m", "evofarm.simclient", "run",
             "--server", address, "--algorithm", "cli-run", "--label", "csv-client"],
            capture_output=True, text=True, timeout=60,
        )
        assert out.returncode == 0, out.stderr
        lines = out.stdout.strip().splitlines()
        assert lines[0].startswith("label,packets_completed,chromosomes_evaluated")
        assert lines[1].startswith("csv-client,4,64,")
    finally:
        proc.send_signal(signal.SIGTERM)
        proc.wait(timeout=10)


def test_simclient_swarm_cli(tmp_path):
    proc, address = start_server(tmp_path)
    try:
        config = {
            "algorithm_id": "cli-swarm",
            "problem": griewank_problem().to_dict(),
            "population_size": 128,
            "elite_size": 32,
            "packet_size": 16,
            "max_evaluations": 96,
            "seed": 5,
        }
        requests.post(address + "/algorithm", json=config)
        profiles = tmp_path / "profiles.jsonl"
        profiles.write_text(
            '{"eval_rate": 1e9, "label": "sw-a"}\n{"eval_rate": 1e9, "label": "sw-b"}\n',
            encoding="utf-8",
        )
        out = subprocess.run(
            [sys.executable, "-m", "evofarm.simclient", "swarm",
             "--server", address, "--algorithm", "cli-swarm",
             "--profiles", str(profiles), "--stagger", "0"],
            capture_output=True, text=True, timeout=60,
        )
        assert out.returncode == 0, out.stderr
        assert "# aggregate_rate=" in out.stdout
        assert "sw-a" in out.stdout and "sw-b" in out.stdout
    finally:
        proc.send_signal(signal.SIGTERM)
        proc.wait(timeout=10)


def test_bench_cli_writes_outputs(tmp_path):
    plan = {
        "kind": "packet_sweep",
        "packet_sizes": [16, 32],
        "repetitions": 3,
        "base_config": {
            "problem": griewank_problem().to_dict(),
            "population_size": 64,
            "elite_size": 32,
            "packet_size": 16,
            "max_evaluations": 64,
            "seed": 6,
        },
        "profiles": [{"eval_rate": 1e9, "extra_latency": 2.0, "label": "bench"}],
    }
    plan_path = tmp_path / "plan.json"
    plan_path.write_text(json.dumps(plan), encoding="utf-8")
    out_dir = tmp_path / "out"
    result = subprocess.run(
        [sys.executable, "-m", "evofarm.bench", "packet-sweep",
         "--plan", str(plan_path), "--out", str(out_dir)],
        capture_output=True, text=True, timeout=120,
    )
    assert result.returncode == 0, result.stderr
    assert (out_dir / "results.csv").exists()
    assert (out_dir / "fit.json").exists()
    assert "packet-size sweep" in (out_dir / "summary.txt").read_text(encoding="utf-8")
