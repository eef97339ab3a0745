"""The coordination engine: registry, thread store, mention cursors, waits.

Transport independent; the TCP server, the in-process harness, and the CLI
all drive this one object. A single hub lock guards all state, and each
agent's blocked ``wait_for_mentions`` sits on a per-agent condition built on
that same lock, so the deliverability check and the block happen atomically
with respect to sends: there is no missed-wakeup window.

Delivery rule: message m is deliverable to agent a in thread t iff a is in
m.mentions, a is currently a participant of t, and m.seq is above a's
delivered cursor for t. Draining a batch advances the cursor to the last
delivered seq, which makes delivery at-most-once for the hub's lifetime.
Broadcasts (no mentions) are pull-only via get_transcript.
"""

from __future__ import annotations

import logging
import secrets
import threading
import time
from dataclasses import dataclass, field
from typing import Callable, Iterable

from . import persistence
from .errors import (
    BAD_REQUEST,
    DUPLICATE_AGENT_ID,
    MENTION_NOT_PARTICIPANT,
    NOT_PARTICIPANT,
    THREAD_CLOSED,
    UNKNOWN_AGENT,
    UNKNOWN_THREAD,
    ProtocolError,
)
from .model import (
    AGENT_ROLES,
    MAX_DESCRIPTION_CHARS,
    AgentInfo,
    Message,
    ThreadInfo,
    parse_mentions,
    validate_agent_id,
    validate_body,
)

log = logging.getLogger("parley.hub")

WAIT_TIMEOUT_DEFAULT_MS = 30_000
WAIT_TIMEOUT_MAX_MS = 300_000


def wall_clock_ms() -> int:
    return int(time.time() * 1000)


def random_thread_id() -> str:
    return secrets.token_hex(16)


@dataclass
class _ThreadRec:
    id: str
    creator: str
    participants: set[str]
    initial_participants: tuple[str, ...]
    status: str = "open"
    summary: str | None = None
    messages: list[Message] = field(default_factory=list)
    # Seq floor below which nothing is push-delivered (set by replay).
    delivery_floor: int = 0


class Switchboard:
    """Thread-safe coordination state shared by every transport."""

    def __init__(
        self,
        *,
        clock: Callable[[], int] | None = None,
        thread_id_source: Callable[[], str] | None = None,
        persist_dir: str | None = None,
        wait_timeout_default_ms: int = WAIT_TIMEOUT_DEFAULT_MS,
        wait_timeout_max_ms: int = WAIT_TIMEOUT_MAX_MS,
    ) -> None:
        self._lock = threading.Lock()
        self._clock = clock or wall_clock_ms
        self._gen_thread_id = thread_id_source or random_thread_id
        self.wait_timeout_default_ms = wait_timeout_default_ms
        self.wait_timeout_max_ms = wait_timeout_max_ms
        self._agents: dict[str, AgentInfo] = {}
        self._threads: dict[str, _ThreadRec] = {}
        # delivered[agent][thread] = highest seq handed to that agent.
        self._delivered: dict[str, dict[str, int]] = {}
        self._wakeups: dict[str, threading.Condition] = {}
        self._closing = False
        self._store = persistence.ThreadLogStore(persist_dir) if persist_dir else None
        if self._store is not None:
            self._replay(persist_dir)  # type: ignore[arg-type]

    # -- lifecycle -------------------------------------------------------------

    def now(self) -> int:
        """Current reading of the hub's clock (ms live, ticks simulated)."""
        return self._clock()

    def _replay(self, root: str) -> None:
        agents, threads = persistence.replay_directory(root)
        for info in agents:
            self._agents[info.id] = info
            self._delivered[info.id] = {}
            self._wakeups[info.id] = threading.Condition(self._lock)
        for t in threads:
            self._threads[t.id] = _ThreadRec(
                id=t.id,
                creator=t.creator,
                participants=set(t.participants),
                initial_participants=tuple(t.initial_participants),
                status=t.status,
                summary=t.summary,
                messages=list(t.messages),
                delivery_floor=len(t.messages),
            )
        if agents or threads:
            log.info("replayed %d agents, %d threads", len(agents), len(threads))

    def shutdown(self) -> None:
        """Wake all waiters and flush/close persistence."""
        with self._lock:
            self._closing = True
            for cond in self._wakeups.values():
                cond.notify_all()
            if self._store is not None:
                self._store.close()
                self._store = None

    # -- registry ---------------------------------------------------------------

    def register_agent(self, agent_id: str, description: str, role: str) -> str:
        validate_agent_id(agent_id)
        if not isinstance(description, str) or not description:
            raise ProtocolError(BAD_REQUEST, "description must be a non-empty string")
        if len(description) > MAX_DESCRIPTION_CHARS:
            raise ProtocolError(
                BAD_REQUEST, f"description exceeds {MAX_DESCRIPTION_CHARS} chars"
            )
        if role not in AGENT_ROLES:
            raise ProtocolError(BAD_REQUEST, f"unknown role {role!r}")
        with self._lock:
            if agent_id in self._agents:
                raise ProtocolError(DUPLICATE_AGENT_ID, agent_id)
            info = AgentInfo(agent_id, description, role)
            self._agents[agent_id] = info
            self._delivered[agent_id] = {}
            self._wakeups[agent_id] = threading.Condition(self._lock)
            if self._store is not None:
                self._store.append_registration(info)
        log.info("registered agent %s (%s)", agent_id, role)
        return agent_id

    def is_registered(self, agent_id: str) -> bool:
        with self._lock:
            return agent_id in self._agents

    def list_agents(self) -> list[AgentInfo]:
        with self._lock:
            return [self._agents[a] for a in sorted(self._agents)]

    # -- threads ----------------------------------------------------------------

    def create_thread(self, creator: str, participants: Iterable[str]) -> str:
        requested = list(participants)
        with self._lock:
            if creator not in self._agents:
                raise ProtocolError(UNKNOWN_AGENT, creator)
            for p in sorted(set(requested)):
                if p not in self._agents:
                    raise ProtocolError(UNKNOWN_AGENT, p)
            tid = self._gen_thread_id()
            while tid in self._threads:
                tid = self._gen_thread_id()
            members = set(requested) | {creator}
            rec = _ThreadRec(
                id=tid,
                creator=creator,
                participants=members,
                initial_participants=tuple(sorted(members)),
            )
            self._threads[tid] = rec
            if self._store is not None:
                self._store.create_thread(tid, creator, sorted(members))
        log.info("thread %s created by %s (%d participants)", tid, creator, len(members))
        return tid

    def _get_open(self, thread_id: str) -> _ThreadRec:
        rec = self._threads.get(thread_id)
        if rec is None:
            raise ProtocolError(UNKNOWN_THREAD, thread_id)
        if rec.status != "open":
            raise ProtocolError(THREAD_CLOSED, thread_id)
        return rec

    def _append_locked(self, rec: _ThreadRec, msg: Message) -> None:
        rec.messages.append(msg)
        if self._store is not None:
            self._store.append_message(msg)

    def _system_locked(self, rec: _ThreadRec, sender: str, body: str) -> Message:
        msg = Message(
            thread=rec.id,
            seq=len(rec.messages) + 1,
            sender=sender,
            kind="system",
            body=body,
            mentions=(),
            ts_ms=self._clock(),
        )
        self._append_locked(rec, msg)
        return msg

    def add_participant(self, thread_id: str, caller: str, agent: str) -> None:
        validate_agent_id(agent)
        with self._lock:
            rec = self._get_open(thread_id)
            if caller not in rec.participants:
                raise ProtocolError(NOT_PARTICIPANT, caller)
            if agent not in self._agents:
                raise ProtocolError(UNKNOWN_AGENT, agent)
            if agent in rec.participants:
                return  # idempotent ack
            self._system_locked(rec, caller, persistence.SYSTEM_ADDED + agent)
            # Joiners never receive mentions from before they joined.
            self._delivered[agent][thread_id] = len(rec.messages)
            rec.participants.add(agent)
        log.info("thread %s: %s added %s", thread_id, caller, agent)

    def remove_participant(self, thread_id: str, caller: str, agent: str) -> None:
        validate_agent_id(agent)
        with self._lock:
            rec = self._get_open(thread_id)
            if caller not in rec.participants:
                raise ProtocolError(NOT_PARTICIPANT, caller)
            if agent not in rec.participants:
                return  # removing a non-participant is an ack no-op
            last = rec.participants == {agent}
            self._system_locked(rec, caller, persistence.SYSTEM_REMOVED + agent)
            if last:
                # Record the close while the remover is still, formally, a
                # member so every system record has a participant sender.
                summary = "auto-closed: no participants"
                self._system_locked(rec, caller, persistence.SYSTEM_CLOSED + summary)
                rec.participants.discard(agent)
                rec.status = "closed"
                rec.summary = summary
                log.info("thread %s auto-closed (no participants)", thread_id)
            else:
                rec.participants.discard(agent)
        log.info("thread %s: %s removed %s", thread_id, caller, agent)

    def close_thread(self, thread_id: str, caller: str, summary: str) -> None:
        validate_body("system", summary)
        with self._lock:
            rec = self._threads.get(thread_id)
            if rec is None:
                raise ProtocolError(UNKNOWN_THREAD, thread_id)
            if rec.status != "open":
                raise ProtocolError(THREAD_CLOSED, thread_id)
            if caller not in rec.participants:
                raise ProtocolError(NOT_PARTICIPANT, caller)
            self._system_locked(rec, caller, persistence.SYSTEM_CLOSED + summary)
            rec.status = "closed"
            rec.summary = summary
        log.info("thread %s closed by %s: %s", thread_id, caller, summary)

    # -- messages ----------------------------------------------------------------

    def send_message(
        self,
        thread_id: str,
        sender: str,
        kind: str,
        body: str,
        explicit_mentions: Iterable[str] = (),
    ) -> Message:
        if kind not in {
            "chat", "plan", "result", "critique", "suggestion",
            "progress", "candidate", "vote", "submission", "system",
        }:
            raise ProtocolError(BAD_REQUEST, f"unknown message kind {kind!r}")
        if kind == "system":
            # Replay folds these prefixes back into thread state; only the
            # hub itself may emit them.
            for reserved in (
                persistence.SYSTEM_ADDED,
                persistence.SYSTEM_REMOVED,
                persistence.SYSTEM_CLOSED,
            ):
                if body.startswith(reserved):
                    raise ProtocolError(
                        BAD_REQUEST, f"reserved system body prefix {reserved!r}"
                    )
        validate_body(kind, body)
        explicit = [validate_agent_id(a) for a in explicit_mentions]
        with self._lock:
            rec = self._get_open(thread_id)
            if sender not in rec.participants:
                raise ProtocolError(NOT_PARTICIPANT, sender)
            mentions = [
                a
                for a in parse_mentions(body, explicit, self._agents)
                if a != sender
            ]
            for a in mentions:
                if a not in rec.participants:
                    # The message is not stored; the caller must add the
                    # agent to the thread first.
                    raise ProtocolError(MENTION_NOT_PARTICIPANT, a)
            msg = Message(
                thread=thread_id,
                seq=len(rec.messages) + 1,
                sender=sender,
                kind=kind,
                body=body,
                mentions=tuple(mentions),
                ts_ms=self._clock(),
            )
            self._append_locked(rec, msg)
            for a in mentions:
                cond = self._wakeups.get(a)
                if cond is not None:
                    cond.notify_all()
            return msg

    def _pending_locked(self, agent: str, thread_filter: str | None) -> list[Message]:
        if thread_filter is not None:
            ids = [thread_filter] if thread_filter in self._threads else []
        else:
            ids = sorted(self._threads)
        out: list[Message] = []
        for tid in ids:
            rec = self._threads[tid]
            if agent not in rec.participants:
                continue
            cursor = max(
                self._delivered.get(agent, {}).get(tid, 0), rec.delivery_floor
            )
            for m in rec.messages[cursor:]:
                if agent in m.mentions:
                    out.append(m)
        return out

    def _drain_locked(self, agent: str, thread_filter: str | None) -> list[Message]:
        batch = self._pending_locked(agent, thread_filter)
        for m in batch:
            cur = self._delivered.setdefault(agent, {})
            if m.seq > cur.get(m.thread, 0):
                cur[m.thread] = m.seq
        return batch

    def poll_mentions(self, agent: str, thread_filter: str | None = None) -> list[Message]:
        """Non-blocking drain of everything currently deliverable."""
        with self._lock:
            if agent not in self._agents:
                raise ProtocolError(UNKNOWN_AGENT, agent)
            if thread_filter is not None and thread_filter not in self._threads:
                raise ProtocolError(UNKNOWN_THREAD, thread_filter)
            return self._drain_locked(agent, thread_filter)

    def wait_for_mentions(
        self,
        agent: str,
        thread_filter: str | None = None,
        timeout_ms: int | None = None,
    ) -> list[Message]:
        """Block until at least one mention is deliverable or the timeout.

        The timeout is clamped to the configured maximum, never errored.
        Returns every undelivered matching mention in (thread, seq) order and
        advances cursors past the batch atomically; an empty list signals
        timeout (or shutdown).
        """
        if timeout_ms is None:
            timeout_ms = self.wait_timeout_default_ms
        if not isinstance(timeout_ms, int) or isinstance(timeout_ms, bool) or timeout_ms < 0:
            raise ProtocolError(BAD_REQUEST, f"timeout_ms must be a non-negative integer")
        timeout_ms = min(timeout_ms, self.wait_timeout_max_ms)
        deadline = time.monotonic() + timeout_ms / 1000.0
        with self._lock:
            if agent not in self._agents:
                raise ProtocolError(UNKNOWN_AGENT, agent)
            if thread_filter is not None and thread_filter not in self._threads:
                raise ProtocolError(UNKNOWN_THREAD, thread_filter)
            cond = self._wakeups[agent]
            while True:
                batch = self._drain_locked(agent, thread_filter)
                if batch or self._closing:
                    return batch
                remaining = deadline - time.monotonic()
                if remaining <= 0:
                    return []
                cond.wait(remaining)

    # -- reads -------------------------------------------------------------------

    def get_transcript(self, thread_id: str) -> tuple[ThreadInfo, tuple[Message, ...]]:
        with self._lock:
            rec = self._threads.get(thread_id)
            if rec is None:
                raise ProtocolError(UNKNOWN_THREAD, thread_id)
            info = ThreadInfo(
                id=rec.id,
                creator=rec.creator,
                participants=tuple(sorted(rec.participants)),
                initial_participants=rec.initial_participants,
                status=rec.status,
                summary=rec.summary,
            )
            return info, tuple(rec.messages)

    def thread_ids(self) -> list[str]:
        with self._lock:
            return sorted(self._threads)

    def serialize_thread(self, thread_id: str) -> bytes:
        """Header plus canonical message lines; equals the persisted file."""
        info, messages = self.get_transcript(thread_id)
        return persistence.serialize_thread(
            info.id, info.creator, list(info.initial_participants), list(messages)
        )
