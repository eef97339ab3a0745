"""Run reports and expectation checking."""

from __future__ import annotations

import dataclasses
import json
import re
from dataclasses import dataclass, field
from typing import Sequence

from ..model import Message
from ..persistence import replay_thread_file
from .scenario import Expectation


def count_non_system(messages: Sequence[Message]) -> int:
    """Conversational traffic only; membership and close records don't count."""
    return sum(1 for m in messages if m.kind != "system")


def count_plan_broadcasts(messages: Sequence[Message], planner: str) -> int:
    """How many plan versions the planner put in force (adoption rebroadcasts
    included, worker plan contributions not)."""
    return sum(1 for m in messages if m.kind == "plan" and m.sender == planner)


@dataclass(frozen=True)
class RunReport:
    """Outcome summary of one scenario run."""

    scenario: str
    outcome: str
    answer: str | None
    message_count: int
    plan_versions: int
    transcript_path: str
    ticks: int = 0
    stress: bool = False
    passed: bool | None = None
    violations: tuple[str, ...] = field(default=())

    def with_verdict(self, violations: Sequence[str]) -> "RunReport":
        return dataclasses.replace(
            self, passed=not violations, violations=tuple(violations)
        )

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), indent=2, ensure_ascii=False)


def assert_outcome(
    report: RunReport,
    expect: Expectation,
    messages: Sequence[Message] | None = None,
) -> list[str]:
    """Every way the run missed the expectation; empty means pass.

    `messages` defaults to the persisted transcript named by the report, so a
    report alone is checkable after the fact.
    """
    violations: list[str] = []
    if report.outcome != expect.outcome:
        violations.append(
            f"outcome: expected {expect.outcome}, got {report.outcome}"
        )
    if expect.answer is not None and report.answer != expect.answer:
        violations.append(
            f"answer: expected {expect.answer!r}, got {report.answer!r}"
        )
    if expect.answer_prefix is not None and (
        report.answer is None or not report.answer.startswith(expect.answer_prefix)
    ):
        violations.append(
            f"answer_prefix: expected prefix {expect.answer_prefix!r},"
            f" got {report.answer!r}"
        )
    if expect.max_messages is not None and report.message_count > expect.max_messages:
        violations.append(
            f"max_messages: {report.message_count} > {expect.max_messages}"
        )
    if (
        expect.max_plan_versions is not None
        and report.plan_versions > expect.max_plan_versions
    ):
        violations.append(
            f"max_plan_versions: {report.plan_versions} > {expect.max_plan_versions}"
        )
    if expect.required_transcript_events:
        if messages is None:
            messages = replay_thread_file(report.transcript_path).messages
        violations.extend(
            _check_event_order(messages, expect.required_transcript_events)
        )
    return violations


def _check_event_order(
    messages: Sequence[Message], required: Sequence[tuple[str, str]]
) -> list[str]:
    """Subsequence match: each event must occur after the previous one did."""
    violations: list[str] = []
    cursor = 0
    for i, (kind, pattern) in enumerate(required):
        rx = re.compile(pattern)
        found = None
        for j in range(cursor, len(messages)):
            m = messages[j]
            if m.kind == kind and rx.search(m.body):
                found = j
                break
        if found is None:
            where = f"after transcript index {cursor}" if cursor else "anywhere"
            violations.append(
                f"required_transcript_events[{i}]: no ({kind}, {pattern!r}) {where}"
            )
            # Later events are still reported, each relative to this cursor.
            continue
        cursor = found + 1
    return violations
