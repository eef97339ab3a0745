"""Operator entry points: serve, run-scenario, dump-thread, agents.

Exit codes are a contract: 0 success, 1 expectation failure, 2 environment
or parse errors (argparse uses 2 for unknown flags as well).
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from . import errors, persistence
from .client import Session
from .errors import ProtocolError
from .harness import load_scenario, run_scenario
from .hub import Switchboard
from .model import Message, message_from_wire
from .server import ParleyServer

log = logging.getLogger("parley.cli")

LISTEN_ENV = "CORAL_LISTEN"
DEFAULT_LISTEN = "127.0.0.1:7070"
PRETTY_BODY_LIMIT = 80


def _parse_listen(value: str) -> tuple[str, int]:
    host, sep, port = value.rpartition(":")
    if not sep or not host:
        raise ValueError(f"listen address must be host:port, got {value!r}")
    return host, int(port)


def _cmd_serve(args: argparse.Namespace) -> int:
    logging.basicConfig(
        level=logging.INFO, format="%(asctime)s %(levelname)-7s %(name)s: %(message)s"
    )
    listen = os.environ.get(LISTEN_ENV) or args.listen
    try:
        host, port = _parse_listen(listen)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    hub_kwargs = {}
    if args.persist:
        hub_kwargs["persist_dir"] = args.persist
    if args.wait_timeout_ms is not None:
        if args.wait_timeout_ms <= 0:
            print("error: --wait-timeout-ms must be positive", file=sys.stderr)
            return 2
        hub_kwargs["wait_timeout_default_ms"] = args.wait_timeout_ms
    server = ParleyServer(Switchboard(**hub_kwargs), host=host, port=port)
    try:
        server.start()
    except OSError as exc:
        print(f"error: cannot bind {host}:{port}: {exc}", file=sys.stderr)
        return 2
    print(f"listening on {server.host}:{server.port}", flush=True)
    server.serve_forever()
    return 0


def _cmd_run_scenario(args: argparse.Namespace) -> int:
    try:
        scenario = load_scenario(args.path)
    except ProtocolError as exc:
        print(f"error: {exc.code}: {exc.message}", file=sys.stderr)
        return 2
    try:
        report = run_scenario(scenario, out_dir=args.out, stress=args.stress)
    except ProtocolError as exc:
        print(f"error: {exc.code}: {exc.message}", file=sys.stderr)
        return 2
    payload = report.to_json()
    if args.report:
        Path(args.report).write_text(payload + "\n", encoding="utf-8")
    else:
        print(payload)
    if report.passed is False:
        for violation in report.violations:
            print(f"violation: {violation}", file=sys.stderr)
        return 1
    return 0


def _pretty_rows(messages: list[Message]) -> list[str]:
    rows = []
    for m in messages:
        body = m.body.replace("\n", "\\n")
        if len(body) > PRETTY_BODY_LIMIT:
            body = body[: PRETTY_BODY_LIMIT - 1] + "…"
        rows.append((str(m.seq), m.sender, m.kind, ",".join(m.mentions), body))
    header = ("seq", "sender", "kind", "mentions", "body")
    widths = [
        max(len(header[i]), *(len(r[i]) for r in rows)) if rows else len(header[i])
        for i in range(4)
    ]
    out = []
    for row in [header, *rows]:
        cells = [row[i].ljust(widths[i]) for i in range(4)]
        out.append("  ".join([*cells, row[4]]).rstrip())
    return out


def _cmd_dump_thread(args: argparse.Namespace) -> int:
    if args.dir:
        path = persistence.thread_log_path(args.dir, args.thread_id)
        if not os.path.exists(path):
            print(f"error: unknown thread {args.thread_id!r}", file=sys.stderr)
            return 2
        if args.format == "jsonl":
            with open(path, "rb") as f:
                sys.stdout.buffer.write(f.read())
            sys.stdout.buffer.flush()
            return 0
        try:
            replayed = persistence.replay_thread_file(path)
        except ProtocolError as exc:
            print(f"error: {exc.code}: {exc.message}", file=sys.stderr)
            return 2
        messages = replayed.messages
    else:
        try:
            session = Session.connect(args.connect, "observer_cli", observer=True)
        except ProtocolError as exc:
            print(f"error: {exc.code}: {exc.message}", file=sys.stderr)
            return 2
        try:
            raw = session.call("get_transcript", {"thread": args.thread_id})
        except ProtocolError as exc:
            print(f"error: {exc.code}: {exc.message}", file=sys.stderr)
            return 2
        finally:
            session.close()
        messages = [message_from_wire(m) for m in raw["messages"]]
        if args.format == "jsonl":
            data = persistence.serialize_thread(
                raw["thread"],
                raw["creator"],
                list(raw["initial_participants"]),
                messages,
            )
            sys.stdout.buffer.write(data)
            sys.stdout.buffer.flush()
            return 0
    for line in _pretty_rows(messages):
        print(line)
    return 0


def _cmd_agents(args: argparse.Namespace) -> int:
    try:
        session = Session.connect(args.connect, "observer_cli", observer=True)
    except ProtocolError as exc:
        print(f"error: {exc.code}: {exc.message}", file=sys.stderr)
        return 2
    try:
        rows = session.call("list_agents", {})
    finally:
        session.close()
    header = ("id", "role", "description")
    table = [(a["id"], a["role"], a["description"]) for a in rows]
    widths = [
        max(len(header[i]), *(len(r[i]) for r in table)) if table else len(header[i])
        for i in range(2)
    ]
    for row in [header, *table]:
        cells = [row[i].ljust(widths[i]) for i in range(2)]
        print("  ".join([*cells, row[2]]).rstrip())
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="parley",
        description="Thread-based agent coordination server and scenario tools",
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)

    serve = sub.add_parser("serve", help="run the coordination server")
    serve.add_argument(
        "--listen",
        default=DEFAULT_LISTEN,
        help=f"host:port to bind (default {DEFAULT_LISTEN}; {LISTEN_ENV} overrides)",
    )
    serve.add_argument("--persist", help="directory for append-only thread logs")
    serve.add_argument(
        "--wait-timeout-ms",
        type=int,
        default=None,
        help="default long-poll window for wait_for_mentions",
    )
    serve.set_defaults(func=_cmd_serve)

    run = sub.add_parser("run-scenario", help="run one scenario file")
    run.add_argument("path", help="scenario JSON file")
    run.add_argument("--out", help="directory for transcripts (default: temp dir)")
    run.add_argument("--report", help="write the report JSON here instead of stdout")
    run.add_argument(
        "--stress",
        action="store_true",
        help="concurrent wall-clock mode checking order-insensitive invariants",
    )
    run.set_defaults(func=_cmd_run_scenario)

    dump = sub.add_parser("dump-thread", help="print one thread's transcript")
    dump.add_argument("thread_id")
    src = dump.add_mutually_exclusive_group(required=True)
    src.add_argument("--dir", help="read from a persistence directory")
    src.add_argument("--connect", help="read from a live server at host:port")
    dump.add_argument(
        "--format",
        choices=("jsonl", "pretty"),
        default="jsonl",
        help="jsonl is byte-identical to the persisted log",
    )
    dump.set_defaults(func=_cmd_dump_thread)

    agents = sub.add_parser("agents", help="list the registry of a live server")
    agents.add_argument("--connect", required=True, help="server host:port")
    agents.set_defaults(func=_cmd_agents)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
