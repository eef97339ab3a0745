"""Consensus: pure decision rules over collected votes.

The decision is a function of (votes, polled, policy) and nothing else, so
any reader of a transcript can recompute it. Votes are deduplicated
first-wins per voter and votes from agents outside the polled set are
ignored; non-voters are omissions, not rejections.
"""

from __future__ import annotations

import math
from fractions import Fraction
from typing import Iterable, Mapping

from ..errors import BAD_REQUEST, ProtocolError
from ..model import ConsensusDecision, ConsensusPolicy, Vote

MODES = ("unanimous_quorum", "majority")


def quorum_size(policy: ConsensusPolicy, polled_count: int) -> int:
    return math.ceil(policy.quorum_fraction * polled_count)


def decide_consensus(
    votes: Iterable[Vote],
    polled: Iterable[str],
    policy: ConsensusPolicy,
    candidate_seq: int = 0,
) -> ConsensusDecision:
    """Fold a vote multiset into an accepted/rejected decision.

    unanimous_quorum: accepted iff there are no rejections and at least
    ``quorum`` votes were cast. majority: accepted iff approvals strictly
    exceed rejections and at least ``quorum`` votes were cast.
    """
    if policy.mode not in MODES:
        raise ProtocolError(BAD_REQUEST, f"unknown consensus mode {policy.mode!r}")
    polled_set = frozenset(polled)
    counted: dict[str, str] = {}
    for v in votes:
        if v.voter in polled_set and v.voter not in counted:
            counted[v.voter] = v.value
    approvals = sum(1 for val in counted.values() if val == "approve")
    rejections = sum(1 for val in counted.values() if val == "reject")
    quorum = quorum_size(policy, len(polled_set))
    cast = approvals + rejections
    if policy.mode == "unanimous_quorum":
        accepted = rejections == 0 and cast >= quorum
    else:
        accepted = approvals > rejections and cast >= quorum
    return ConsensusDecision(
        outcome="accepted" if accepted else "rejected",
        approvals=approvals,
        rejections=rejections,
        polled=tuple(sorted(polled_set)),
        quorum=quorum,
        candidate_seq=candidate_seq,
    )


def policy_from_wire(obj: Mapping | None) -> ConsensusPolicy:
    """Parse {"mode": ..., "quorum_fraction": "1/2"} (fraction or number)."""
    if obj is None:
        return ConsensusPolicy()
    mode = obj.get("mode", "unanimous_quorum")
    if mode not in MODES:
        raise ProtocolError(BAD_REQUEST, f"unknown consensus mode {mode!r}")
    raw = obj.get("quorum_fraction", "1/2")
    try:
        frac = Fraction(raw) if isinstance(raw, str) else Fraction(str(raw))
    except (ValueError, ZeroDivisionError) as exc:
        raise ProtocolError(BAD_REQUEST, f"bad quorum_fraction {raw!r}: {exc}") from None
    if not (0 <= frac <= 1):
        raise ProtocolError(BAD_REQUEST, f"quorum_fraction must be in [0, 1]: {raw!r}")
    return ConsensusPolicy(mode=mode, quorum_fraction=frac)


def policy_to_wire(policy: ConsensusPolicy) -> dict:
    return {"mode": policy.mode, "quorum_fraction": str(policy.quorum_fraction)}
