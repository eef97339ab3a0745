"""Domain types and the canonical message encoding.

Everything here is a plain value shared by the server engine, the wire layer,
the client SDK, orchestration, and persistence: identifier validation, mention
parsing, the message/thread/plan/vote types, and the byte-exact single-line
JSON encoding of messages.

Encoding contract: one message per line, UTF-8, keys exactly
``seq, thread, sender, kind, body, mentions, ts_ms`` in that order, no
insignificant whitespace, terminated by a single newline. The encoding is
injective: distinct messages produce distinct lines, and
``decode_message(encode_message(m)) == m``.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Mapping

from .errors import (
    BAD_AGENT_ID,
    BAD_REQUEST,
    BODY_TOO_LARGE,
    ENCODING_ERROR,
    ProtocolError,
)

__all__ = [
    "AGENT_ID_PATTERN",
    "MESSAGE_KINDS",
    "AGENT_ROLES",
    "VOTE_VALUES",
    "MAX_BODY_BYTES",
    "THREAD_ID_PATTERN",
    "validate_agent_id",
    "parse_mentions",
    "Message",
    "validate_body",
    "encode_message",
    "decode_message",
    "message_to_wire",
    "message_from_wire",
    "AgentInfo",
    "ThreadInfo",
    "PlanStep",
    "Plan",
    "validate_plan",
    "CritiqueVerdict",
    "Vote",
    "ConsensusPolicy",
    "ConsensusDecision",
]

AGENT_ID_PATTERN = re.compile(r"^[a-z][a-z0-9_-]{0,63}$")
THREAD_ID_PATTERN = re.compile(r"^[0-9a-f]{32}$")

# An @-mention is "@" followed by a maximal run of identifier-grammar
# characters; anything else terminates the token.
_MENTION_TOKEN = re.compile(r"@([a-z][a-z0-9_-]{0,63})")

MAX_BODY_BYTES = 65536
MAX_DESCRIPTION_CHARS = 2048

MESSAGE_KINDS = frozenset(
    {
        "chat",
        "plan",
        "result",
        "critique",
        "suggestion",
        "progress",
        "candidate",
        "vote",
        "submission",
        "system",
    }
)

AGENT_ROLES = frozenset({"planner", "worker", "critique", "answer_finding"})

VOTE_VALUES = ("approve", "reject")
_CRITIQUE_PREFIXES = ("accept:", "uncertain:")

_WIRE_KEYS = ("seq", "thread", "sender", "kind", "body", "mentions", "ts_ms")


def validate_agent_id(raw: object) -> str:
    """Return ``raw`` unchanged if it satisfies the agent identifier grammar.

    Grammar: 1..64 characters drawn from lowercase ASCII letters, digits,
    ``_`` and ``-``, and the first character must be a letter. Comparison is
    byte equality; there is no case folding. Raises BAD_AGENT_ID naming the
    position of the first offending character.
    """
    if not isinstance(raw, str):
        raise ProtocolError(BAD_AGENT_ID, f"id must be a string, got {type(raw).__name__}")
    if raw == "":
        raise ProtocolError(BAD_AGENT_ID, "empty id (position 0)")
    if not ("a" <= raw[0] <= "z"):
        raise ProtocolError(
            BAD_AGENT_ID, f"must start with a lowercase letter (position 0): {raw!r}"
        )
    for pos, ch in enumerate(raw):
        if not ("a" <= ch <= "z" or "0" <= ch <= "9" or ch in "_-"):
            raise ProtocolError(
                BAD_AGENT_ID, f"invalid character {ch!r} (position {pos}): {raw!r}"
            )
    if len(raw) > 64:
        raise ProtocolError(BAD_AGENT_ID, f"id too long (position 64): {raw!r}")
    return raw


def parse_mentions(
    body: str, explicit: Iterable[str], registry: Iterable[str]
) -> list[str]:
    """Resolve the mention list for a message body.

    The result is the union of ``explicit`` and every ``@<id>`` token in
    ``body`` whose ``<id>`` names an agent in ``registry``, in order of first
    occurrence (explicit entries first), deduplicated. Unknown ``@`` tokens
    are prose, not errors. Pure function; participant checks happen at send
    time, not here.
    """
    known = registry if isinstance(registry, (set, frozenset, dict)) else set(registry)
    out: list[str] = []
    seen: set[str] = set()
    for agent in explicit:
        if agent not in seen:
            seen.add(agent)
            out.append(agent)
    for tok in _MENTION_TOKEN.finditer(body):
        agent = tok.group(1)
        if agent in known and agent not in seen:
            seen.add(agent)
            out.append(agent)
    return out


def validate_body(kind: str, body: object) -> str:
    """Check a message body against the kind-specific and global rules."""
    if not isinstance(body, str):
        raise ProtocolError(BAD_REQUEST, f"body must be a string, got {type(body).__name__}")
    if "\n" in body or "\r" in body:
        raise ProtocolError(BAD_REQUEST, "body must be a single line")
    try:
        raw = body.encode("utf-8")
    except UnicodeEncodeError as exc:
        raise ProtocolError(ENCODING_ERROR, f"body is not valid UTF-8: {exc}") from None
    if len(raw) > MAX_BODY_BYTES:
        raise ProtocolError(
            BODY_TOO_LARGE, f"body is {len(raw)} bytes, limit {MAX_BODY_BYTES}"
        )
    if kind == "vote" and body not in VOTE_VALUES:
        raise ProtocolError(
            BAD_REQUEST, "vote body must be exactly 'approve' or 'reject'"
        )
    if kind == "critique" and not body.startswith(_CRITIQUE_PREFIXES):
        raise ProtocolError(
            BAD_REQUEST, "critique body must start with 'accept:' or 'uncertain:'"
        )
    return body


@dataclass(frozen=True)
class Message:
    """One immutable thread entry.

    ``seq`` starts at 1 and is gapless per thread; ``mentions`` is ordered,
    deduplicated, and never contains ``sender``; ``ts_ms`` is the configured
    clock's reading at append time (wall milliseconds or logical ticks).
    """

    thread: str
    seq: int
    sender: str
    kind: str
    body: str
    mentions: tuple[str, ...] = ()
    ts_ms: int = 0


def message_to_wire(m: Message) -> dict:
    """Message as a JSON-ready dict in canonical key order."""
    return {
        "seq": m.seq,
        "thread": m.thread,
        "sender": m.sender,
        "kind": m.kind,
        "body": m.body,
        "mentions": list(m.mentions),
        "ts_ms": m.ts_ms,
    }


def message_from_wire(obj: Mapping) -> Message:
    """Rebuild a Message from its wire/persistence dict, validating shape."""
    if not isinstance(obj, Mapping):
        raise ProtocolError(ENCODING_ERROR, "message record must be an object")
    missing = [k for k in _WIRE_KEYS if k not in obj]
    extra = [k for k in obj if k not in _WIRE_KEYS]
    if missing or extra:
        raise ProtocolError(
            ENCODING_ERROR, f"bad message keys (missing={missing}, extra={extra})"
        )
    seq, thread, sender = obj["seq"], obj["thread"], obj["sender"]
    kind, body, mentions, ts_ms = obj["kind"], obj["body"], obj["mentions"], obj["ts_ms"]
    if not isinstance(seq, int) or isinstance(seq, bool) or seq < 1:
        raise ProtocolError(ENCODING_ERROR, f"seq must be a positive integer: {seq!r}")
    if not isinstance(ts_ms, int) or isinstance(ts_ms, bool):
        raise ProtocolError(ENCODING_ERROR, f"ts_ms must be an integer: {ts_ms!r}")
    if not isinstance(thread, str) or not isinstance(sender, str):
        raise ProtocolError(ENCODING_ERROR, "thread and sender must be strings")
    if kind not in MESSAGE_KINDS:
        raise ProtocolError(ENCODING_ERROR, f"unknown kind: {kind!r}")
    if not isinstance(body, str):
        raise ProtocolError(ENCODING_ERROR, "body must be a string")
    if not isinstance(mentions, list) or not all(isinstance(a, str) for a in mentions):
        raise ProtocolError(ENCODING_ERROR, "mentions must be a list of strings")
    return Message(
        thread=thread,
        seq=seq,
        sender=sender,
        kind=kind,
        body=body,
        mentions=tuple(mentions),
        ts_ms=ts_ms,
    )


def encode_message(m: Message) -> bytes:
    """Canonical single-line UTF-8 encoding, newline terminated."""
    try:
        line = json.dumps(message_to_wire(m), ensure_ascii=False, separators=(",", ":"))
        return (line + "\n").encode("utf-8")
    except (UnicodeEncodeError, ValueError, TypeError) as exc:
        raise ProtocolError(ENCODING_ERROR, str(exc)) from None


def decode_message(line: bytes | str) -> Message:
    """Inverse of :func:`encode_message`; rejects malformed lines."""
    if isinstance(line, bytes):
        try:
            line = line.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ProtocolError(ENCODING_ERROR, f"not UTF-8: {exc}") from None
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ProtocolError(ENCODING_ERROR, f"bad JSON: {exc}") from None
    return message_from_wire(obj)


@dataclass(frozen=True)
class AgentInfo:
    """A registry entry. The registry is append-only for the server's lifetime."""

    id: str
    description: str
    role: str


@dataclass(frozen=True)
class ThreadInfo:
    """Snapshot of a thread's header state (no messages)."""

    id: str
    creator: str
    participants: tuple[str, ...]
    initial_participants: tuple[str, ...]
    status: str
    summary: str | None


@dataclass(frozen=True)
class PlanStep:
    id: str
    description: str


@dataclass(frozen=True)
class Plan:
    """A versioned task decomposition with a worker allocation.

    ``version`` starts at 0 and increases strictly across adopted revisions.
    ``allocation`` maps worker id to an ordered tuple of step ids; every
    allocated step id must name a step in ``steps``. Steps may be left
    unallocated (dropped), never double-allocated.
    """

    version: int
    goal: str
    steps: tuple[PlanStep, ...]
    allocation: Mapping[str, tuple[str, ...]] = field(default_factory=dict)

    def step_by_id(self, step_id: str) -> PlanStep | None:
        for s in self.steps:
            if s.id == step_id:
                return s
        return None

    def allocated_steps(self) -> list[str]:
        out: list[str] = []
        for ids in self.allocation.values():
            out.extend(ids)
        return out


def validate_plan(plan: Plan) -> Plan:
    """Structural checks shared by the planner and the body codec."""
    if plan.version < 0:
        raise ProtocolError(BAD_REQUEST, f"plan version must be >= 0: {plan.version}")
    step_ids = [s.id for s in plan.steps]
    if len(set(step_ids)) != len(step_ids):
        raise ProtocolError(BAD_REQUEST, "duplicate step ids in plan")
    seen: set[str] = set()
    for worker, ids in plan.allocation.items():
        validate_agent_id(worker)
        for sid in ids:
            if sid not in step_ids:
                raise ProtocolError(
                    BAD_REQUEST, f"allocation references unknown step {sid!r}"
                )
            if sid in seen:
                raise ProtocolError(
                    BAD_REQUEST, f"step {sid!r} allocated to more than one worker"
                )
            seen.add(sid)
    return plan


@dataclass(frozen=True)
class CritiqueVerdict:
    """A critique agent's judgment of one result message."""

    target_seq: int
    verdict: str  # "accept" | "uncertain"
    rationale: str


@dataclass(frozen=True)
class Vote:
    voter: str
    candidate_seq: int
    value: str  # "approve" | "reject"


@dataclass(frozen=True)
class ConsensusPolicy:
    """Decision rule for candidate voting.

    ``unanimous_quorum``: accepted iff no rejections and the number of votes
    cast is at least the quorum. ``majority``: accepted iff approvals strictly
    exceed rejections and the number of votes cast is at least the quorum.
    Quorum = ceil(quorum_fraction * |polled|). Non-voters are omissions, not
    rejections.
    """

    mode: str = "unanimous_quorum"
    quorum_fraction: Fraction = Fraction(1, 2)


@dataclass(frozen=True)
class ConsensusDecision:
    outcome: str  # "accepted" | "rejected"
    approvals: int
    rejections: int
    polled: tuple[str, ...]
    quorum: int
    candidate_seq: int
