"""Wire protocol: newline-delimited JSON frames and the operation dispatch.

Request:  {"id": <uint64>, "op": "<name>", "params": {...}}
Response: {"id": <same>, "ok": true, "result": ...}
          {"id": <same>, "ok": false, "error": {"code": "...", "message": "..."}}

The first frame on a connection must be a hello naming the session's agent;
afterwards each request is served independently and responses are matched by
id, so a blocked wait_for_mentions never delays other traffic.

``dispatch`` is the single source of truth for parameter validation and
identity injection (sender/caller/agent always come from the session's hello,
never from params). The TCP server and the in-process client both call it.
"""

from __future__ import annotations

import json
from typing import Any, Mapping

from .errors import BAD_REQUEST, ProtocolError
from .hub import Switchboard
from .model import Message, ThreadInfo, message_to_wire

MAX_FRAME_BYTES = 1_048_576

OPS = frozenset(
    {
        "register_agent",
        "list_agents",
        "create_thread",
        "add_participant",
        "remove_participant",
        "send_message",
        "wait_for_mentions",
        "close_thread",
        "get_transcript",
    }
)

# Operations an unregistered observer session (hello with "observer": true)
# may invoke; everything else needs a real agent identity.
READ_ONLY_OPS = frozenset({"list_agents", "get_transcript"})


def encode_frame(obj: Mapping[str, Any]) -> bytes:
    return (json.dumps(obj, ensure_ascii=False, separators=(",", ":")) + "\n").encode("utf-8")


def decode_frame(line: bytes) -> dict:
    try:
        obj = json.loads(line.decode("utf-8"))
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ProtocolError(BAD_REQUEST, f"bad frame: {exc}") from None
    if not isinstance(obj, dict):
        raise ProtocolError(BAD_REQUEST, "frame must be a JSON object")
    return obj


def ok_frame(req_id: int, result: Any) -> bytes:
    return encode_frame({"id": req_id, "ok": True, "result": result})


def error_frame(req_id: int, code: str, message: str) -> bytes:
    return encode_frame(
        {"id": req_id, "ok": False, "error": {"code": code, "message": message}}
    )


def transcript_to_wire(info: ThreadInfo, messages: tuple[Message, ...]) -> dict:
    return {
        "thread": info.id,
        "creator": info.creator,
        "participants": list(info.participants),
        "initial_participants": list(info.initial_participants),
        "status": info.status,
        "summary": info.summary,
        "messages": [message_to_wire(m) for m in messages],
    }


def _require(params: Mapping, key: str, typ: type) -> Any:
    if key not in params:
        raise ProtocolError(BAD_REQUEST, f"missing param {key!r}")
    val = params[key]
    if not isinstance(val, typ) or (typ is int and isinstance(val, bool)):
        raise ProtocolError(BAD_REQUEST, f"param {key!r} must be {typ.__name__}")
    return val


def _optional(params: Mapping, key: str, typ: type, default: Any = None) -> Any:
    if key not in params or params[key] is None:
        return default
    val = params[key]
    if not isinstance(val, typ) or (typ is int and isinstance(val, bool)):
        raise ProtocolError(BAD_REQUEST, f"param {key!r} must be {typ.__name__}")
    return val


def dispatch(hub: Switchboard, agent: str, op: str, params: Mapping[str, Any]) -> Any:
    """Run one operation as ``agent`` and return its JSON-ready result."""
    if not isinstance(params, Mapping):
        raise ProtocolError(BAD_REQUEST, "params must be an object")

    if op == "register_agent":
        rid = hub.register_agent(
            _require(params, "id", str),
            _require(params, "description", str),
            _require(params, "role", str),
        )
        return {"id": rid}

    if op == "list_agents":
        return [
            {"id": a.id, "description": a.description, "role": a.role}
            for a in hub.list_agents()
        ]

    if op == "create_thread":
        raw = _optional(params, "participants", list, [])
        for p in raw:
            if not isinstance(p, str):
                raise ProtocolError(BAD_REQUEST, "participants must be strings")
        return {"thread": hub.create_thread(agent, raw)}

    if op == "add_participant":
        hub.add_participant(
            _require(params, "thread", str), agent, _require(params, "agent", str)
        )
        return None

    if op == "remove_participant":
        hub.remove_participant(
            _require(params, "thread", str), agent, _require(params, "agent", str)
        )
        return None

    if op == "send_message":
        raw = _optional(params, "mentions", list, [])
        for p in raw:
            if not isinstance(p, str):
                raise ProtocolError(BAD_REQUEST, "mentions must be strings")
        msg = hub.send_message(
            _require(params, "thread", str),
            agent,
            _require(params, "kind", str),
            _require(params, "body", str),
            raw,
        )
        return message_to_wire(msg)

    if op == "wait_for_mentions":
        batch = hub.wait_for_mentions(
            agent,
            thread_filter=_optional(params, "thread", str),
            timeout_ms=_optional(params, "timeout_ms", int),
        )
        return [message_to_wire(m) for m in batch]

    if op == "close_thread":
        hub.close_thread(
            _require(params, "thread", str), agent, _require(params, "summary", str)
        )
        return None

    if op == "get_transcript":
        info, messages = hub.get_transcript(_require(params, "thread", str))
        return transcript_to_wire(info, messages)

    raise ProtocolError(BAD_REQUEST, f"unknown op {op!r}")
