"""Error codes and the exception type shared by the server, clients, and tooling.

Codes are plain strings because they travel verbatim inside wire error frames;
the accompanying message is human-oriented detail and carries no contract.
"""

from __future__ import annotations

# Server-side operation errors.
BAD_AGENT_ID = "BAD_AGENT_ID"
DUPLICATE_AGENT_ID = "DUPLICATE_AGENT_ID"
UNKNOWN_AGENT = "UNKNOWN_AGENT"
UNKNOWN_THREAD = "UNKNOWN_THREAD"
THREAD_CLOSED = "THREAD_CLOSED"
NOT_PARTICIPANT = "NOT_PARTICIPANT"
MENTION_NOT_PARTICIPANT = "MENTION_NOT_PARTICIPANT"
BODY_TOO_LARGE = "BODY_TOO_LARGE"
ENCODING_ERROR = "ENCODING_ERROR"
BAD_REQUEST = "BAD_REQUEST"

# Client / transport errors.
CONNECT_FAILED = "CONNECT_FAILED"
HELLO_REJECTED = "HELLO_REJECTED"
CONNECTION_LOST = "CONNECTION_LOST"

# Orchestration errors.
NO_WORKERS = "NO_WORKERS"
AMBIGUOUS_ROLE = "AMBIGUOUS_ROLE"
PLANNER_FAILED = "PLANNER_FAILED"
MAX_ROUNDS_EXCEEDED = "MAX_ROUNDS_EXCEEDED"
NO_VALIDATED_RESULTS = "NO_VALIDATED_RESULTS"
SUBMIT_WITHOUT_CONSENSUS = "SUBMIT_WITHOUT_CONSENSUS"
ABORTED = "ABORTED"

# Harness errors.
SCENARIO_PARSE_ERROR = "SCENARIO_PARSE_ERROR"
SCENARIO_INVALID = "SCENARIO_INVALID"
RUN_ABORTED = "RUN_ABORTED"


class ProtocolError(Exception):
    """An operation failed with a named error code."""

    def __init__(self, code: str, message: str = "") -> None:
        super().__init__(f"{code}: {message}" if message else code)
        self.code = code
        self.message = message

    def __repr__(self) -> str:  # pragma: no cover - debugging aid
        return f"ProtocolError({self.code!r}, {self.message!r})"
