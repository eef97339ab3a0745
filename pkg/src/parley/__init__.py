"""parley: thread-based agent coordination with mention delivery and consensus.

Layers, lowest first:

- ``model``: domain values and the canonical message encoding
- ``hub``: the transport-independent coordination engine (registry, threads,
  mention cursors, blocking waits)
- ``persistence``: append-only JSONL thread logs and replay
- ``server`` / ``wire``: newline-delimited JSON RPC over TCP
- ``client``: session, request correlation, mention loop
- ``orchestration``: role state machines, plan/vote conventions, consensus
- ``harness``: deterministic discrete-event scenario runner
- ``cli``: ``parley`` command with serve / run-scenario / dump-thread / agents
"""

from .errors import ProtocolError
from .model import (
    AgentInfo,
    ConsensusDecision,
    ConsensusPolicy,
    Message,
    Plan,
    PlanStep,
    ThreadInfo,
    Vote,
    decode_message,
    encode_message,
    parse_mentions,
    validate_agent_id,
)

__version__ = "0.1.0"

__all__ = [
    "ProtocolError",
    "AgentInfo",
    "ConsensusDecision",
    "ConsensusPolicy",
    "Message",
    "Plan",
    "PlanStep",
    "ThreadInfo",
    "Vote",
    "decode_message",
    "encode_message",
    "parse_mentions",
    "validate_agent_id",
    "__version__",
]
