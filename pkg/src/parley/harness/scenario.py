"""Scenario files: scripted agents, run limits, and expected outcomes.

A scenario is a JSON document that fully determines a coordination run.
``load_scenario`` reports structural problems as SCENARIO_PARSE_ERROR (with
the offending field or line) and semantic problems as SCENARIO_INVALID.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Any, Mapping, Sequence

from .. import errors
from ..errors import ProtocolError
from ..model import AGENT_ROLES, MESSAGE_KINDS, ConsensusPolicy, Message
from ..orchestration.consensus import policy_from_wire
from ..orchestration.roles import Reaction
from ..orchestration.runner import RunLimits

OUTCOMES = ("submitted", "gave_up")
DEFAULTS = ("silent", "echo_uncertain")

# Tick-denominated timeout defaults used when a scenario omits `limits`.
DEFAULT_TICK_LIMITS = RunLimits(
    max_rounds=8,
    mention_response_timeout=20,
    vote_collection_timeout=10,
)


@dataclass(frozen=True)
class Rule:
    """One scripted reaction: when `pattern` matches a mention, reply.

    `delay` is in ticks; None means the agent never responds to this trigger.
    `body` may reference `{body}` and `{sender}` of the trigger message; no
    other substitution happens, so literal braces (plan JSON) pass through.
    """

    pattern: re.Pattern[str]
    kind_filter: str | None = None
    delay: int | None = 0
    kind: str = "chat"
    body: str = ""
    mentions: tuple[str, ...] = ()


@dataclass(frozen=True)
class ScriptedAgent:
    """An agent whose behaviour is a first-match-wins rule list."""

    id: str
    role: str
    rules: tuple[Rule, ...] = ()
    default: str = "silent"
    description: str = ""


@dataclass(frozen=True)
class Expectation:
    """What a run must produce to pass.

    `answer` pins the exact submission body (submitted runs); `answer_prefix`
    pins its prefix (give-ups, where the reason tail is prose). Exactly one of
    the two is set, matching the expected outcome.
    """

    outcome: str
    answer: str | None = None
    answer_prefix: str | None = None
    max_messages: int | None = None
    max_plan_versions: int | None = None
    required_transcript_events: tuple[tuple[str, str], ...] = ()


@dataclass(frozen=True)
class Scenario:
    name: str
    task: str
    agents: tuple[ScriptedAgent, ...]
    limits: RunLimits = field(default_factory=lambda: DEFAULT_TICK_LIMITS)
    expect: Expectation | None = None
    seed: int = 0


def _parse_error(msg: str) -> ProtocolError:
    return ProtocolError(errors.SCENARIO_PARSE_ERROR, msg)


def _invalid(msg: str) -> ProtocolError:
    return ProtocolError(errors.SCENARIO_INVALID, msg)


def _require(obj: Mapping[str, Any], key: str, kind: type, where: str) -> Any:
    if key not in obj:
        raise _parse_error(f"{where}: missing field '{key}'")
    value = obj[key]
    if kind is int and isinstance(value, bool):
        raise _parse_error(f"{where}.{key}: expected {kind.__name__}, got bool")
    if not isinstance(value, kind):
        raise _parse_error(
            f"{where}.{key}: expected {kind.__name__}, got {type(value).__name__}"
        )
    return value


def _optional(obj: Mapping[str, Any], key: str, kind: type, where: str, default: Any) -> Any:
    if key not in obj or obj[key] is None:
        return default
    return _require(obj, key, kind, where)


def _parse_rule(raw: Any, where: str) -> Rule:
    if not isinstance(raw, dict):
        raise _parse_error(f"{where}: expected object, got {type(raw).__name__}")
    trigger = _require(raw, "trigger", dict, where)
    pattern_src = _require(trigger, "mention_pattern", str, f"{where}.trigger")
    try:
        pattern = re.compile(pattern_src)
    except re.error as exc:
        raise _parse_error(f"{where}.trigger.mention_pattern: bad regex: {exc}") from exc
    kind_filter = _optional(trigger, "kind_filter", str, f"{where}.trigger", None)
    if kind_filter is not None and kind_filter not in MESSAGE_KINDS:
        raise _invalid(f"{where}.trigger.kind_filter: unknown kind '{kind_filter}'")

    delay_raw = raw.get("delay_ticks", 0)
    delay: int | None
    if delay_raw == "forever":
        delay = None
    elif isinstance(delay_raw, int) and not isinstance(delay_raw, bool):
        if delay_raw < 0:
            raise _invalid(f"{where}.delay_ticks: must be >= 0, got {delay_raw}")
        delay = delay_raw
    else:
        raise _parse_error(f"{where}.delay_ticks: expected int or \"forever\"")

    response = _optional(raw, "response", dict, where, {})
    kind = _optional(response, "kind", str, f"{where}.response", "chat")
    if kind not in MESSAGE_KINDS:
        raise _invalid(f"{where}.response.kind: unknown kind '{kind}'")
    body = _optional(response, "body_template", str, f"{where}.response", "")
    mentions_raw = _optional(response, "mentions", list, f"{where}.response", [])
    mentions = []
    for i, m in enumerate(mentions_raw):
        if not isinstance(m, str):
            raise _parse_error(f"{where}.response.mentions[{i}]: expected str")
        mentions.append(m)
    return Rule(
        pattern=pattern,
        kind_filter=kind_filter,
        delay=delay,
        kind=kind,
        body=body,
        mentions=tuple(mentions),
    )


def _parse_agent(raw: Any, where: str) -> ScriptedAgent:
    if not isinstance(raw, dict):
        raise _parse_error(f"{where}: expected object, got {type(raw).__name__}")
    agent_id = _require(raw, "id", str, where)
    role = _require(raw, "role", str, where)
    if role not in AGENT_ROLES:
        raise _invalid(f"{where}.role: unknown role '{role}'")
    default = _optional(raw, "default", str, where, "silent")
    if default not in DEFAULTS:
        raise _invalid(f"{where}.default: expected one of {DEFAULTS}, got '{default}'")
    rules_raw = _optional(raw, "rules", list, where, [])
    rules = tuple(
        _parse_rule(rule, f"{where}.rules[{i}]") for i, rule in enumerate(rules_raw)
    )
    description = _optional(raw, "description", str, where, "") or f"scripted {role}"
    return ScriptedAgent(
        id=agent_id, role=role, rules=rules, default=default, description=description
    )


def _parse_limits(raw: Any, where: str) -> RunLimits:
    if not isinstance(raw, dict):
        raise _parse_error(f"{where}: expected object, got {type(raw).__name__}")
    policy_raw = raw.get("consensus_policy")
    if policy_raw is None:
        policy = ConsensusPolicy()
    else:
        try:
            policy = policy_from_wire(policy_raw)
        except ProtocolError as exc:
            raise _parse_error(f"{where}.consensus_policy: {exc.message}") from exc
    try:
        return RunLimits(
            max_rounds=_optional(raw, "max_rounds", int, where, 8),
            mention_response_timeout=_optional(
                raw, "mention_response_timeout", int, where, 20
            ),
            vote_collection_timeout=_optional(
                raw, "vote_collection_timeout", int, where, 10
            ),
            consensus_policy=policy,
        )
    except ValueError as exc:
        raise _invalid(f"{where}: {exc}") from exc


def _parse_expect(raw: Any, where: str) -> Expectation:
    if not isinstance(raw, dict):
        raise _parse_error(f"{where}: expected object, got {type(raw).__name__}")
    outcome = _require(raw, "outcome", str, where)
    if outcome not in OUTCOMES:
        raise _invalid(f"{where}.outcome: expected one of {OUTCOMES}, got '{outcome}'")
    answer = _optional(raw, "answer", str, where, None)
    answer_prefix = _optional(raw, "answer_prefix", str, where, None)
    if (answer is None) == (answer_prefix is None):
        raise _invalid(f"{where}: exactly one of answer / answer_prefix must be set")
    events_raw = _optional(raw, "required_transcript_events", list, where, [])
    events = []
    for i, entry in enumerate(events_raw):
        if (
            not isinstance(entry, (list, tuple))
            or len(entry) != 2
            or not all(isinstance(part, str) for part in entry)
        ):
            raise _parse_error(
                f"{where}.required_transcript_events[{i}]: expected [kind, body_pattern]"
            )
        kind, pattern = entry
        if kind not in MESSAGE_KINDS:
            raise _invalid(
                f"{where}.required_transcript_events[{i}]: unknown kind '{kind}'"
            )
        try:
            re.compile(pattern)
        except re.error as exc:
            raise _parse_error(
                f"{where}.required_transcript_events[{i}]: bad regex: {exc}"
            ) from exc
        events.append((kind, pattern))
    return Expectation(
        outcome=outcome,
        answer=answer,
        answer_prefix=answer_prefix,
        max_messages=_optional(raw, "max_messages", int, where, None),
        max_plan_versions=_optional(raw, "max_plan_versions", int, where, None),
        required_transcript_events=tuple(events),
    )


def _validate(scenario: Scenario) -> Scenario:
    seen: set[str] = set()
    by_role: dict[str, list[str]] = {role: [] for role in AGENT_ROLES}
    for agent in scenario.agents:
        if agent.id in seen:
            raise _invalid(f"duplicate agent id '{agent.id}'")
        seen.add(agent.id)
        by_role[agent.role].append(agent.id)
    for role in ("planner", "critique", "answer_finding"):
        if len(by_role[role]) != 1:
            raise _invalid(
                f"exactly one agent with role {role} required, got {len(by_role[role])}"
            )
    if not by_role["worker"]:
        raise _invalid("at least one worker required")
    for agent in scenario.agents:
        for i, rule in enumerate(agent.rules):
            for m in rule.mentions:
                if m not in seen:
                    raise _invalid(
                        f"agents[{agent.id}].rules[{i}]: mention of unknown agent '{m}'"
                    )
    if not scenario.task:
        raise _invalid("task must be non-empty")
    return scenario


def parse_scenario(text: str) -> Scenario:
    """Parse scenario JSON text. Raises SCENARIO_PARSE_ERROR / SCENARIO_INVALID."""
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise _parse_error(f"line {exc.lineno}: {exc.msg}") from exc
    if not isinstance(raw, dict):
        raise _parse_error(f"top level: expected object, got {type(raw).__name__}")

    name = _require(raw, "name", str, "scenario")
    task = _require(raw, "task", str, "scenario")
    agents_raw = _require(raw, "agents", list, "scenario")
    agents = tuple(
        _parse_agent(agent, f"agents[{i}]") for i, agent in enumerate(agents_raw)
    )
    limits = (
        _parse_limits(raw["limits"], "limits")
        if raw.get("limits") is not None
        else DEFAULT_TICK_LIMITS
    )
    expect = _parse_expect(raw["expect"], "expect") if raw.get("expect") is not None else None
    seed = _optional(raw, "seed", int, "scenario", 0)
    return _validate(
        Scenario(name=name, task=task, agents=agents, limits=limits, expect=expect, seed=seed)
    )


def load_scenario(path: str | Path) -> Scenario:
    """Load and validate a scenario file."""
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise _parse_error(f"{p}: {exc.strerror or exc}") from exc
    return parse_scenario(text)


def _fill(template: str, trigger: Message) -> str:
    # Deliberate token replacement, not str.format: rule bodies routinely
    # contain JSON braces that must survive verbatim.
    return template.replace("{body}", trigger.body).replace("{sender}", trigger.sender)


class RuleBook:
    """Reasoner that walks a ScriptedAgent's rules; first match wins.

    `delay_unit` scales scripted tick delays into the clock the run uses
    (1 for the logical simulator, larger for wall-clock stress runs).
    """

    def __init__(self, agent: ScriptedAgent, delay_unit: int = 1) -> None:
        self.agent = agent
        self.delay_unit = delay_unit

    def react(self, trigger: Message) -> Reaction | None:
        for rule in self.agent.rules:
            if rule.kind_filter is not None and trigger.kind != rule.kind_filter:
                continue
            if not rule.pattern.search(trigger.body):
                continue
            if rule.delay is None:
                return Reaction(body="", delay=None)
            return Reaction(
                body=_fill(rule.body, trigger),
                kind=rule.kind,
                mentions=rule.mentions,
                delay=rule.delay * self.delay_unit,
            )
        if self.agent.default == "echo_uncertain" and trigger.kind == "result":
            return Reaction(body=f"uncertain: {trigger.body}", kind="critique")
        return None
