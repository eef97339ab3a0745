"""The parley command line: serve, run-scenario, dump-thread, agents."""

from __future__ import annotations

import json
import os
import signal
import subprocess
import sys
from importlib.resources import files
from pathlib import Path

import pytest

from parley.cli import main
from parley.client import Session
from parley.harness import load_scenario, run_scenario
from parley.hub import Switchboard
from parley.server import ParleyServer

WIKI = str(files("parley").joinpath("fixtures/wiki_edits.json"))


@pytest.fixture()
def server():
    srv = ParleyServer(Switchboard())
    srv.start()
    yield srv
    srv.stop()


def spawn_serve(*extra: str, env_listen: str | None = None) -> subprocess.Popen:
    env = dict(os.environ)
    env.pop("CORAL_LISTEN", None)
    if env_listen is not None:
        env["CORAL_LISTEN"] = env_listen
    proc = subprocess.Popen(
        [sys.executable, "-m", "parley.cli", "serve", *extra],
        stdout=subprocess.PIPE,
        stderr=subprocess.DEVNULL,
        text=True,
        env=env,
    )
    ready = proc.stdout.readline().strip()
    assert ready.startswith("listening on "), ready
    proc.port = int(ready.rsplit(":", 1)[1])
    return proc


def stop_serve(proc: subprocess.Popen) -> int:
    proc.send_signal(signal.SIGINT)
    code = proc.wait(timeout=10)
    proc.stdout.close()
    return code


# -- serve ------------------------------------------------------------------------


def test_serve_ready_line_and_clean_interrupt():
    proc = spawn_serve("--listen", "127.0.0.1:0")
    try:
        s = Session.connect(("127.0.0.1", proc.port), "web", description="w", role="worker")
        assert s.call("list_agents")[0]["id"] == "web"
        s.close()
    finally:
        assert stop_serve(proc) == 0


def test_serve_occupied_port_exits_2():
    proc = spawn_serve("--listen", "127.0.0.1:0")
    try:
        clash = subprocess.run(
            [sys.executable, "-m", "parley.cli", "serve", "--listen",
             f"127.0.0.1:{proc.port}"],
            capture_output=True,
            text=True,
            timeout=30,
        )
        assert clash.returncode == 2
        assert "cannot bind" in clash.stderr
    finally:
        stop_serve(proc)


def test_serve_env_var_overrides_listen_flag():
    # The flag points at an unbindable port; the env address must win.
    proc = spawn_serve("--listen", "127.0.0.1:1", env_listen="127.0.0.1:0")
    try:
        assert proc.port != 1
        Session.connect(("127.0.0.1", proc.port), "x", description="d", role="worker").close()
    finally:
        stop_serve(proc)


def test_serve_bad_listen_address_exits_2():
    out = subprocess.run(
        [sys.executable, "-m", "parley.cli", "serve", "--listen", "nocolon"],
        capture_output=True,
        text=True,
        timeout=30,
    )
    assert out.returncode == 2
    assert "host:port" in out.stderr


def test_persist_restart_roundtrip(tmp_path, capsysbinary):
    store = str(tmp_path / "threads")
    proc = spawn_serve("--listen", "127.0.0.1:0", "--persist", store)
    try:
        a = Session.connect(("127.0.0.1", proc.port), "a", description="a", role="worker")
        b = Session.connect(("127.0.0.1", proc.port), "b", description="b", role="worker")
        tid = a.call("create_thread", {"participants": ["b"]})["thread"]
        a.call("send_message", {"thread": tid, "kind": "chat", "body": "hi @b", "mentions": ["b"]})
        b.call("send_message", {"thread": tid, "kind": "chat", "body": "hello back"})
        a.call("close_thread", {"thread": tid, "summary": "done"})
        a.close()
        b.close()
    finally:
        stop_serve(proc)

    assert main(["dump-thread", tid, "--dir", store]) == 0
    from_disk = capsysbinary.readouterr().out

    proc = spawn_serve("--listen", "127.0.0.1:0", "--persist", store)
    try:
        code = main(["dump-thread", tid, "--connect", f"127.0.0.1:{proc.port}"])
        assert code == 0
        from_server = capsysbinary.readouterr().out
    finally:
        stop_serve(proc)
    assert from_server == from_disk
    assert from_disk == (tmp_path / "threads" / f"{tid}.jsonl").read_bytes()


# -- run-scenario -----------------------------------------------------------------


def test_run_scenario_fixture_exits_0(tmp_path, capsys):
    code = main(["run-scenario", WIKI, "--out", str(tmp_path)])
    assert code == 0
    decoded = json.loads(capsys.readouterr().out)
    assert decoded["outcome"] == "submitted"
    assert decoded["answer"] == "2732"
    assert decoded["passed"] is True


def test_run_scenario_report_file(tmp_path):
    report_path = tmp_path / "report.json"
    code = main([
        "run-scenario", WIKI, "--out", str(tmp_path / "out"),
        "--report", str(report_path),
    ])
    assert code == 0
    assert json.loads(report_path.read_text())["answer"] == "2732"


def test_run_scenario_tampered_expectation_exits_1(tmp_path, capsys):
    raw = json.loads(Path(WIKI).read_text())
    raw["expect"]["answer"] = "9999"
    tampered = tmp_path / "tampered.json"
    tampered.write_text(json.dumps(raw))
    code = main(["run-scenario", str(tampered), "--out", str(tmp_path / "out")])
    assert code == 1
    captured = capsys.readouterr()
    assert json.loads(captured.out)["passed"] is False
    assert "violation: answer:" in captured.err


def test_run_scenario_parse_error_exits_2(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text("{ not json")
    assert main(["run-scenario", str(bad)]) == 2
    assert "SCENARIO_PARSE_ERROR" in capsys.readouterr().err

    assert main(["run-scenario", str(tmp_path / "missing.json")]) == 2


def test_run_scenario_invalid_exits_2(tmp_path, capsys):
    raw = json.loads(Path(WIKI).read_text())
    raw["agents"] = raw["agents"][:1]
    invalid = tmp_path / "invalid.json"
    invalid.write_text(json.dumps(raw))
    assert main(["run-scenario", str(invalid)]) == 2
    assert "SCENARIO_INVALID" in capsys.readouterr().err


def test_run_scenario_stress_exits_0(tmp_path, capsys):
    code = main(["run-scenario", WIKI, "--out", str(tmp_path), "--stress"])
    assert code == 0
    assert json.loads(capsys.readouterr().out)["stress"] is True


# -- dump-thread ------------------------------------------------------------------


def run_fixture(tmp_path) -> tuple[str, Path]:
    report = run_scenario(load_scenario(WIKI), out_dir=tmp_path)
    path = Path(report.transcript_path)
    return path.stem, path


def test_dump_thread_jsonl_is_byte_identical(tmp_path, capsysbinary):
    tid, path = run_fixture(tmp_path)
    assert main(["dump-thread", tid, "--dir", str(tmp_path)]) == 0
    assert capsysbinary.readouterr().out == path.read_bytes()


def test_dump_thread_pretty_line_count(tmp_path, capsys):
    tid, path = run_fixture(tmp_path)
    assert main(["dump-thread", tid, "--dir", str(tmp_path), "--format", "pretty"]) == 0
    lines = capsys.readouterr().out.splitlines()
    message_lines = path.read_bytes().count(b"\n") - 1
    assert len(lines) == message_lines + 1
    assert lines[0].split() == ["seq", "sender", "kind", "mentions", "body"]
    # Long bodies are truncated for scanning, fidelity stays in jsonl.
    assert any("…" in line for line in lines)


def test_dump_thread_unknown_id_exits_2(tmp_path, capsys, server):
    assert main(["dump-thread", "absent", "--dir", str(tmp_path)]) == 2
    assert "unknown thread" in capsys.readouterr().err
    host, port = server.address
    assert main(["dump-thread", "absent", "--connect", f"{host}:{port}"]) == 2
    assert "UNKNOWN_THREAD" in capsys.readouterr().err


def test_dump_thread_requires_exactly_one_source(tmp_path):
    with pytest.raises(SystemExit) as e:
        main(["dump-thread", "tid"])
    assert e.value.code == 2


# -- agents -----------------------------------------------------------------------


def test_agents_lists_sorted_roster(server, capsys):
    roster = [
        ("planner_0", "planner"),
        ("critique_0", "critique"),
        ("answers_0", "answer_finding"),
        ("web_0", "worker"),
        ("doc_0", "worker"),
        ("calc_0", "worker"),
    ]
    for agent_id, role in roster:
        server.hub.register_agent(agent_id, f"the {role}", role)
    host, port = server.address
    assert main(["agents", "--connect", f"{host}:{port}"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert len(lines) == 1 + len(roster)
    ids = [line.split()[0] for line in lines[1:]]
    assert ids == sorted(ids)


def test_agents_empty_registry_header_only(server, capsys):
    host, port = server.address
    assert main(["agents", "--connect", f"{host}:{port}"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines == ["id  role  description"]


def test_agents_server_down_exits_2(capsys):
    assert main(["agents", "--connect", "127.0.0.1:9"]) == 2
    assert "CONNECT_FAILED" in capsys.readouterr().err


def test_unknown_flag_exits_2():
    with pytest.raises(SystemExit) as e:
        main(["agents", "--connect", "x:1", "--frobnicate"])
    assert e.value.code == 2
