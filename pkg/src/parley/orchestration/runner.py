"""Task-run lifecycle: role discovery and the single-threaded drive loop.

run_task polls the hub on behalf of every role machine, in lexicographic
agent order, until the planner reaches an outcome.  Machines never share
state; everything they know arrives as delivered mentions.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Mapping

from ..errors import ABORTED, AMBIGUOUS_ROLE, NO_WORKERS, ProtocolError
from ..hub import Switchboard
from ..model import (
    AgentInfo,
    ConsensusDecision,
    ConsensusPolicy,
    CritiqueVerdict,
    Message,
    Plan,
    ThreadInfo,
)
from .roles import (
    AnswerMachine,
    CritiqueMachine,
    PlannerMachine,
    Reasoner,
    RoleMachine,
    Roster,
    SubtaskResult,
    WorkerMachine,
)

DEFAULT_POLICY = ConsensusPolicy(mode="unanimous_quorum", quorum_fraction=Fraction(1, 2))


@dataclass(frozen=True)
class RunLimits:
    """Caps on a task run; times share the driving clock's unit."""

    max_rounds: int = 8
    mention_response_timeout: int = 20000
    vote_collection_timeout: int = 10000
    consensus_policy: ConsensusPolicy = DEFAULT_POLICY

    def __post_init__(self) -> None:
        if self.max_rounds < 1:
            raise ValueError("max_rounds must be >= 1")
        if self.mention_response_timeout <= 0 or self.vote_collection_timeout <= 0:
            raise ValueError("timeouts must be positive")


@dataclass(frozen=True)
class TaskRun:
    task: str
    thread: str
    plan: Plan | None
    results: Mapping[str, SubtaskResult]
    verdicts: tuple[CritiqueVerdict, ...]
    candidates: tuple[int, ...]
    decisions: tuple[ConsensusDecision, ...]
    rounds_used: int
    limits: RunLimits
    outcome: str
    answer: str | None
    info: ThreadInfo
    transcript: tuple[Message, ...] = field(repr=False)


class NullReasoner:
    """No opinions; every machine falls back to its mechanical default."""

    def react(self, trigger: Message) -> None:
        return None


def discover(hub: Switchboard) -> tuple[AgentInfo, ...]:
    return tuple(hub.list_agents())


def resolve_roles(agents: Iterable[AgentInfo]) -> Roster:
    singular = {"planner": [], "critique": [], "answer_finding": []}
    workers: list[str] = []
    for a in sorted(agents, key=lambda a: a.id):
        if a.role == "worker":
            workers.append(a.id)
        elif a.role in singular:
            singular[a.role].append(a.id)
    for role, found in singular.items():
        if not found:
            raise ProtocolError(AMBIGUOUS_ROLE, f"no agent with role {role}")
        if len(found) > 1:
            raise ProtocolError(
                AMBIGUOUS_ROLE,
                f"multiple agents with role {role}: {', '.join(found)}",
            )
    if not workers:
        raise ProtocolError(NO_WORKERS, "no agents with role worker")
    return Roster(
        planner=singular["planner"][0],
        critique=singular["critique"][0],
        answer=singular["answer_finding"][0],
        workers=tuple(workers),
    )


class HubActs:
    """Acts adapter binding one agent identity to an in-process hub."""

    def __init__(self, hub: Switchboard, agent: str) -> None:
        self.hub = hub
        self.agent = agent

    def now(self) -> int:
        return self.hub.now()

    def send(
        self, thread: str, kind: str, body: str, mentions: tuple[str, ...] = ()
    ) -> Message:
        return self.hub.send_message(thread, self.agent, kind, body, mentions)

    def create_thread(self, participants: list[str]) -> str:
        return self.hub.create_thread(self.agent, participants)

    def add_participant(self, thread: str, agent: str) -> None:
        self.hub.add_participant(thread, self.agent, agent)

    def close_thread(self, thread: str, summary: str) -> None:
        self.hub.close_thread(thread, self.agent, summary)

    def transcript(self, thread: str) -> tuple[ThreadInfo, tuple[Message, ...]]:
        return self.hub.get_transcript(thread)


def build_machines(
    hub: Switchboard,
    task: str,
    roster: Roster,
    limits: RunLimits,
    reasoners: Mapping[str, Reasoner] | None = None,
) -> dict[str, RoleMachine]:
    table = dict(reasoners or {})

    def reasoner(agent: str) -> Reasoner:
        return table.get(agent) or NullReasoner()

    machines: dict[str, RoleMachine] = {
        roster.planner: PlannerMachine(
            HubActs(hub, roster.planner),
            reasoner(roster.planner),
            task,
            roster,
            limits.consensus_policy,
            limits.mention_response_timeout,
            limits.vote_collection_timeout,
            limits.max_rounds,
        ),
        roster.critique: CritiqueMachine(
            HubActs(hub, roster.critique), reasoner(roster.critique), roster.planner
        ),
        roster.answer: AnswerMachine(
            HubActs(hub, roster.answer), reasoner(roster.answer), roster.planner
        ),
    }
    for w in roster.workers:
        machines[w] = WorkerMachine(
            HubActs(hub, w), reasoner(w), roster.planner, roster.critique
        )
    return machines


def drive_until_done(
    hub: Switchboard,
    machines: Mapping[str, RoleMachine],
    planner: PlannerMachine,
    poll_interval: float = 0.005,
    wall_ceiling_s: float = 120.0,
) -> None:
    order = sorted(machines)
    started = time.monotonic()
    while not planner.done:
        if time.monotonic() - started > wall_ceiling_s:
            raise ProtocolError(ABORTED, "run exceeded the wall-clock ceiling")
        progressed = False
        for agent in order:
            for msg in hub.poll_mentions(agent):
                progressed = True
                machines[agent].on_message(msg)
        now = hub.now()
        for agent in order:
            machines[agent].on_tick(now)
        if not progressed:
            time.sleep(poll_interval)


def run_task(
    hub: Switchboard,
    task: str,
    *,
    reasoners: Mapping[str, Reasoner] | None = None,
    limits: RunLimits | None = None,
    poll_interval: float = 0.005,
    wall_ceiling_s: float = 120.0,
) -> TaskRun:
    limits = limits if limits is not None else RunLimits()
    if not task.strip():
        raise ProtocolError(ABORTED, "empty task")
    roster = resolve_roles(discover(hub))
    machines = build_machines(hub, task, roster, limits, reasoners)
    planner = machines[roster.planner]
    assert isinstance(planner, PlannerMachine)
    planner.start()
    drive_until_done(hub, machines, planner, poll_interval, wall_ceiling_s)
    assert planner.thread is not None
    info, transcript = hub.get_transcript(planner.thread)
    return TaskRun(
        task=task,
        thread=planner.thread,
        plan=planner.plan,
        results=dict(planner.results),
        verdicts=tuple(planner.verdicts),
        candidates=tuple(planner.candidates),
        decisions=tuple(planner.decisions),
        rounds_used=planner.rounds_used,
        limits=limits,
        outcome=planner.outcome or "gave_up",
        answer=planner.answer,
        info=info,
        transcript=transcript,
    )
