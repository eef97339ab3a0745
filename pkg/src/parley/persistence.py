"""Append-only JSONL persistence for threads and the agent registry.

Each thread lives in ``<thread_id>.jsonl``: one header line
``{"thread":...,"creator":...,"participants":[...]}`` (participants as of
creation, sorted) followed by the canonical encoding of every message in seq
order. Participant changes and closes appear in the message stream as
kind=system records, so replaying the file alone reconstructs current
participants, status, and summary. The registry is ``agents.jsonl``, one
``{"id":...,"description":...,"role":...}`` line per registration.

Files are append-only; every append is flushed before the operation returns.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from typing import IO

from .errors import ENCODING_ERROR, ProtocolError
from .model import AgentInfo, Message, decode_message, encode_message

REGISTRY_FILE = "agents.jsonl"

SYSTEM_ADDED = "participant-added: "
SYSTEM_REMOVED = "participant-removed: "
SYSTEM_CLOSED = "closed: "
SYSTEM_CANCELLED = "cancelled: "


def thread_log_path(root: str, thread_id: str) -> str:
    return os.path.join(root, f"{thread_id}.jsonl")


def encode_header(thread_id: str, creator: str, participants: list[str]) -> bytes:
    obj = {"thread": thread_id, "creator": creator, "participants": sorted(participants)}
    return (json.dumps(obj, ensure_ascii=False, separators=(",", ":")) + "\n").encode("utf-8")


def serialize_thread(
    thread_id: str, creator: str, initial_participants: list[str], messages: list[Message]
) -> bytes:
    """The exact bytes the log file for this thread must contain."""
    out = bytearray(encode_header(thread_id, creator, initial_participants))
    for m in messages:
        out += encode_message(m)
    return bytes(out)


class ThreadLogStore:
    """Writes thread logs and the registry under one directory."""

    def __init__(self, root: str) -> None:
        self.root = root
        os.makedirs(root, exist_ok=True)
        self._files: dict[str, IO[bytes]] = {}
        self._registry: IO[bytes] | None = None

    def append_registration(self, info: AgentInfo) -> None:
        if self._registry is None:
            self._registry = open(os.path.join(self.root, REGISTRY_FILE), "ab")
        line = json.dumps(
            {"id": info.id, "description": info.description, "role": info.role},
            ensure_ascii=False,
            separators=(",", ":"),
        )
        self._registry.write((line + "\n").encode("utf-8"))
        self._registry.flush()

    def create_thread(self, thread_id: str, creator: str, participants: list[str]) -> None:
        f = open(thread_log_path(self.root, thread_id), "ab")
        f.write(encode_header(thread_id, creator, participants))
        f.flush()
        self._files[thread_id] = f

    def append_message(self, m: Message) -> None:
        f = self._files.get(m.thread)
        if f is None:
            f = open(thread_log_path(self.root, m.thread), "ab")
            self._files[m.thread] = f
        f.write(encode_message(m))
        f.flush()

    def close(self) -> None:
        for f in self._files.values():
            f.close()
        self._files.clear()
        if self._registry is not None:
            self._registry.close()
            self._registry = None


@dataclass
class ReplayedThread:
    id: str
    creator: str
    initial_participants: list[str]
    participants: list[str]
    status: str
    summary: str | None
    messages: list[Message]


def replay_thread_file(path: str) -> ReplayedThread:
    """Rebuild thread state from its log file alone."""
    with open(path, "rb") as f:
        raw = f.read().split(b"\n")
    lines = [ln for ln in raw if ln]
    if not lines:
        raise ProtocolError(ENCODING_ERROR, f"empty thread log: {path}")
    try:
        header = json.loads(lines[0].decode("utf-8"))
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ProtocolError(ENCODING_ERROR, f"bad header in {path}: {exc}") from None
    if set(header) != {"thread", "creator", "participants"}:
        raise ProtocolError(ENCODING_ERROR, f"bad header keys in {path}")

    messages = [decode_message(ln) for ln in lines[1:]]
    participants = set(header["participants"])
    status = "open"
    summary: str | None = None
    for i, m in enumerate(messages):
        if m.seq != i + 1:
            raise ProtocolError(ENCODING_ERROR, f"seq gap at line {i + 2} in {path}")
        if m.kind != "system":
            continue
        if m.body.startswith(SYSTEM_ADDED):
            participants.add(m.body[len(SYSTEM_ADDED):])
        elif m.body.startswith(SYSTEM_REMOVED):
            participants.discard(m.body[len(SYSTEM_REMOVED):])
        elif m.body.startswith(SYSTEM_CLOSED):
            status = "closed"
            summary = m.body[len(SYSTEM_CLOSED):]
    return ReplayedThread(
        id=header["thread"],
        creator=header["creator"],
        initial_participants=sorted(header["participants"]),
        participants=sorted(participants),
        status=status,
        summary=summary,
        messages=messages,
    )


def replay_registry(root: str) -> list[AgentInfo]:
    path = os.path.join(root, REGISTRY_FILE)
    if not os.path.exists(path):
        return []
    out: list[AgentInfo] = []
    with open(path, "rb") as f:
        for ln in f.read().split(b"\n"):
            if not ln:
                continue
            obj = json.loads(ln.decode("utf-8"))
            out.append(AgentInfo(obj["id"], obj["description"], obj["role"]))
    return out


def replay_directory(root: str) -> tuple[list[AgentInfo], list[ReplayedThread]]:
    agents = replay_registry(root)
    threads: list[ReplayedThread] = []
    for name in sorted(os.listdir(root)):
        if name == REGISTRY_FILE or not name.endswith(".jsonl"):
            continue
        threads.append(replay_thread_file(os.path.join(root, name)))
    return agents, threads
