"""Message body conventions used by the role machines.

Bit-exact formats (other agents parse these):

- plan:       {"version":t,"goal":...,"steps":[{"id":...,"description":...}],
               "allocation":{"<worker>":["<step_id>",...]}} in that key order
- vote:       exactly "approve" or "reject"
- critique:   "accept: seq=<n> <rationale>" / "uncertain: seq=<n> <rationale>"
- candidate:  the proposed final answer verbatim
- submission: the final answer verbatim

Conventions internal to this orchestration (documented, parseable, but not a
wire contract): worker assignments, standby notices, compile/submit requests,
and the planner's progress markers.
"""

from __future__ import annotations

import json
import re
from typing import Mapping

from ..errors import BAD_REQUEST, ProtocolError
from ..model import CritiqueVerdict, Plan, PlanStep, validate_plan

GIVE_UP_PREFIX = "give up: "

ASSIGN_SEGMENT = re.compile(r"step ([a-z0-9_.-]+): ")
CRITIQUE_BODY = re.compile(r"^(accept|uncertain): seq=(\d+)\s?(.*)$")

STANDBY_PREFIX = "standby: "
COMPILE_PREFIX = "compile: "
COMPILE_GIVEUP_PREFIX = "compile-giveup: "
SUBMIT_PREFIX = "submit: "
SUBMIT_GIVEUP_PREFIX = "submit-giveup: "
UNRESPONSIVE_PREFIX = "unresponsive: "
REJECTED_PREFIX = "consensus rejected: "
CANCELLED_PREFIX = "cancelled: "


def encode_plan_body(plan: Plan) -> str:
    validate_plan(plan)
    obj = {
        "version": plan.version,
        "goal": plan.goal,
        "steps": [{"id": s.id, "description": s.description} for s in plan.steps],
        "allocation": {w: list(ids) for w, ids in plan.allocation.items()},
    }
    return json.dumps(obj, ensure_ascii=False, separators=(",", ":"))


def parse_plan_body(body: str) -> Plan:
    try:
        obj = json.loads(body)
    except json.JSONDecodeError as exc:
        raise ProtocolError(BAD_REQUEST, f"plan body is not JSON: {exc}") from None
    if not isinstance(obj, Mapping):
        raise ProtocolError(BAD_REQUEST, "plan body must be a JSON object")
    try:
        steps = tuple(
            PlanStep(str(s["id"]), str(s["description"])) for s in obj["steps"]
        )
        allocation = {
            str(w): tuple(str(x) for x in ids)
            for w, ids in dict(obj.get("allocation", {})).items()
        }
        plan = Plan(
            version=int(obj["version"]),
            goal=str(obj["goal"]),
            steps=steps,
            allocation=allocation,
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ProtocolError(BAD_REQUEST, f"malformed plan body: {exc}") from None
    return validate_plan(plan)


def encode_assignment(steps: list[PlanStep]) -> str:
    """One worker's marching orders: "step s1: ... | step s2: ..."."""
    return " | ".join(f"step {s.id}: {s.description}" for s in steps)


def parse_assignment(body: str) -> list[PlanStep]:
    """Inverse of encode_assignment; returns [] when the body is not one."""
    hits = list(ASSIGN_SEGMENT.finditer(body))
    if not hits or hits[0].start() != 0:
        return []
    out: list[PlanStep] = []
    for i, h in enumerate(hits):
        end = hits[i + 1].start() if i + 1 < len(hits) else len(body)
        desc = body[h.end():end]
        if desc.endswith(" | "):
            desc = desc[:-3]
        out.append(PlanStep(h.group(1), desc))
    return out


def encode_critique_body(verdict: str, target_seq: int, rationale: str) -> str:
    if verdict not in ("accept", "uncertain"):
        raise ProtocolError(BAD_REQUEST, f"bad verdict {verdict!r}")
    return f"{verdict}: seq={target_seq} {rationale}".rstrip()


def parse_critique_body(body: str) -> CritiqueVerdict | None:
    m = CRITIQUE_BODY.match(body)
    if m is None:
        return None
    return CritiqueVerdict(
        target_seq=int(m.group(2)), verdict=m.group(1), rationale=m.group(3)
    )


def split_prefixed(body: str, prefix: str) -> str | None:
    return body[len(prefix):] if body.startswith(prefix) else None
