"""Deterministic in-process simulation of one scenario on a logical clock.

Every run embeds a fresh hub whose clock and thread-id source are injected,
so transcript bytes are a pure function of (scenario, seed).  Per tick, due
agents act in lexicographic id order; deliveries drain to a fixpoint before
the tick ends, which is what makes a reply at exactly its deadline tick count
as in time.
"""

from __future__ import annotations

import random
import tempfile
import threading
import time
from dataclasses import dataclass
from pathlib import Path

from .. import errors
from ..errors import ProtocolError
from ..hub import Switchboard
from ..model import Message
from ..orchestration.roles import PlannerMachine, RoleMachine, Roster
from ..orchestration.runner import RunLimits, build_machines, discover, resolve_roles
from .report import RunReport, assert_outcome, count_non_system, count_plan_broadcasts
from .scenario import RuleBook, Scenario

MAX_TICKS_DEFAULT = 100_000

# One logical tick expressed in wall-clock milliseconds for stress runs.
STRESS_TICK_MS = 25

# A single tick must settle in bounded work; an unbounded ping-pong exchange
# inside one tick is a scripting bug, not a schedule.
_MAX_ROUNDS_PER_TICK = 10_000


@dataclass
class LogicalClock:
    """Tick counter shared by the hub and every machine in a simulation."""

    now_ticks: int = 0

    def now(self) -> int:
        return self.now_ticks

    def advance(self, ticks: int = 1) -> None:
        if ticks < 0:
            raise ValueError("ticks must be >= 0")
        self.now_ticks += ticks


def _seeded_ids(seed: int):
    rng = random.Random(seed)

    def fresh() -> str:
        return f"{rng.getrandbits(128):032x}"

    return fresh


class Simulation:
    """One scenario wired onto an embedded hub, advanced tick by tick."""

    def __init__(
        self,
        scenario: Scenario,
        out_dir: str | Path | None = None,
        delay_unit: int = 1,
    ) -> None:
        self.scenario = scenario
        self.out_dir = Path(out_dir) if out_dir else Path(
            tempfile.mkdtemp(prefix="parley-sim-")
        )
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.clock = LogicalClock()
        self.hub = Switchboard(
            clock=self.clock.now,
            thread_id_source=_seeded_ids(scenario.seed),
            persist_dir=str(self.out_dir),
        )
        for agent in scenario.agents:
            self.hub.register_agent(
                agent.id, agent.description or f"scripted {agent.role}", agent.role
            )
        self.roster: Roster = resolve_roles(discover(self.hub))
        reasoners = {
            agent.id: RuleBook(agent, delay_unit) for agent in scenario.agents
        }
        self.machines: dict[str, RoleMachine] = build_machines(
            self.hub, scenario.task, self.roster, scenario.limits, reasoners
        )
        self.planner: PlannerMachine = self.machines[self.roster.planner]
        self._order = sorted(self.machines)
        self._started = False

    @property
    def done(self) -> bool:
        return self.planner.done

    def step(self, n_ticks: int) -> list[Message]:
        """Advance n ticks; returns the messages emitted during the window."""
        if n_ticks < 0:
            raise ValueError("n_ticks must be >= 0")
        before = self._high_water()
        for _ in range(n_ticks):
            self._run_tick()
            self.clock.advance()
        return self._emitted_since(before)

    def run(self, max_ticks: int = MAX_TICKS_DEFAULT) -> None:
        """Advance until the planner finishes, jumping over idle stretches."""
        while not self.done:
            if self.clock.now() > max_ticks:
                raise ProtocolError(
                    errors.RUN_ABORTED,
                    f"no termination within {max_ticks} ticks",
                )
            self._run_tick()
            if self.done:
                return
            dues = [
                due
                for m in self.machines.values()
                if not m.done and (due := m.next_due()) is not None
            ]
            if not dues:
                raise ProtocolError(
                    errors.RUN_ABORTED,
                    f"stalled at tick {self.clock.now()}: nothing scheduled",
                )
            self.clock.now_ticks = max(self.clock.now() + 1, min(dues))

    def _run_tick(self) -> None:
        if self.done:
            return
        if not self._started:
            self._started = True
            self.planner.start()
        now = self.clock.now()
        for _ in range(_MAX_ROUNDS_PER_TICK):
            progressed = 0
            for agent in self._order:
                machine = self.machines[agent]
                if machine.done:
                    continue
                for msg in self.hub.poll_mentions(agent):
                    machine.on_message(msg)
                    progressed += 1
                    if machine.done:
                        break
            for agent in self._order:
                progressed += self.machines[agent].on_tick(now)
            if progressed == 0:
                return
        raise ProtocolError(
            errors.RUN_ABORTED, f"tick {now} did not quiesce"
        )

    def _high_water(self) -> dict[str, int]:
        return {
            tid: len(self.hub.get_transcript(tid)[1])
            for tid in self.hub.thread_ids()
        }

    def _emitted_since(self, before: dict[str, int]) -> list[Message]:
        out: list[Message] = []
        for tid in self.hub.thread_ids():
            _, messages = self.hub.get_transcript(tid)
            out.extend(messages[before.get(tid, 0) :])
        return out

    def report(self) -> RunReport:
        """Summarize the finished (or aborted) run against the expectation."""
        threads = self.hub.thread_ids()
        if not threads:
            raise ProtocolError(errors.RUN_ABORTED, "no thread was created")
        thread = threads[0]
        _, messages = self.hub.get_transcript(thread)
        report = RunReport(
            scenario=self.scenario.name,
            outcome=self.planner.outcome or "gave_up",
            answer=self.planner.answer,
            message_count=count_non_system(messages),
            plan_versions=count_plan_broadcasts(messages, self.roster.planner),
            transcript_path=str(self.out_dir / f"{thread}.jsonl"),
            ticks=self.clock.now(),
        )
        if self.scenario.expect is not None:
            violations = assert_outcome(report, self.scenario.expect, messages)
            report = report.with_verdict(violations)
        return report


def run_scenario(
    scenario: Scenario,
    *,
    out_dir: str | Path | None = None,
    stress: bool = False,
    max_ticks: int = MAX_TICKS_DEFAULT,
) -> RunReport:
    """Run one scenario to completion and report on it.

    Deterministic given (scenario, scenario.seed): repeated runs produce
    byte-identical transcripts.  Stress mode instead drives the same machines
    from one thread per agent on the wall clock and checks only the
    order-insensitive invariants (sequence completeness, at-most-once
    delivery), since interleaving is then up to the OS scheduler.
    """
    if stress:
        return _run_stress(scenario, out_dir=out_dir)
    sim = Simulation(scenario, out_dir=out_dir)
    try:
        sim.run(max_ticks=max_ticks)
    except ProtocolError as exc:
        if exc.code == errors.ABORTED:
            raise ProtocolError(errors.RUN_ABORTED, exc.message) from exc
        raise
    return sim.report()


def _run_stress(
    scenario: Scenario,
    *,
    out_dir: str | Path | None = None,
    wall_ceiling_s: float = 60.0,
) -> RunReport:
    out = Path(out_dir) if out_dir else Path(tempfile.mkdtemp(prefix="parley-stress-"))
    out.mkdir(parents=True, exist_ok=True)
    hub = Switchboard(
        thread_id_source=_seeded_ids(scenario.seed), persist_dir=str(out)
    )
    for agent in scenario.agents:
        hub.register_agent(
            agent.id, agent.description or f"scripted {agent.role}", agent.role
        )
    roster = resolve_roles(discover(hub))
    limits = RunLimits(
        max_rounds=scenario.limits.max_rounds,
        mention_response_timeout=scenario.limits.mention_response_timeout
        * STRESS_TICK_MS,
        vote_collection_timeout=scenario.limits.vote_collection_timeout
        * STRESS_TICK_MS,
        consensus_policy=scenario.limits.consensus_policy,
    )
    reasoners = {
        agent.id: RuleBook(agent, delay_unit=STRESS_TICK_MS)
        for agent in scenario.agents
    }
    machines = build_machines(hub, scenario.task, roster, limits, reasoners)
    planner = machines[roster.planner]

    deliveries: list[tuple[str, str, int]] = []
    dlock = threading.Lock()
    stop = threading.Event()
    failures: list[BaseException] = []

    def pump(agent: str, machine: RoleMachine) -> None:
        try:
            while not stop.is_set() and not machine.done:
                for msg in hub.wait_for_mentions(agent, timeout_ms=10):
                    with dlock:
                        deliveries.append((agent, msg.thread, msg.seq))
                    machine.on_message(msg)
                machine.on_tick(hub.now())
        except BaseException as exc:  # surfaced after join
            failures.append(exc)

    planner.start()
    threads = [
        threading.Thread(target=pump, args=(agent, machine), daemon=True)
        for agent, machine in sorted(machines.items())
    ]
    for t in threads:
        t.start()
    deadline = time.monotonic() + wall_ceiling_s
    while not planner.done and time.monotonic() < deadline:
        time.sleep(0.01)
    stop.set()
    for t in threads:
        t.join(timeout=5.0)
    if failures:
        raise ProtocolError(errors.RUN_ABORTED, f"agent loop failed: {failures[0]}")
    if not planner.done:
        raise ProtocolError(
            errors.RUN_ABORTED, f"no termination within {wall_ceiling_s}s (stress)"
        )

    thread = hub.thread_ids()[0]
    _, messages = hub.get_transcript(thread)
    violations: list[str] = []
    seqs = [m.seq for m in messages]
    if seqs != list(range(1, len(seqs) + 1)):
        violations.append(f"sequence completeness: got {seqs}")
    with dlock:
        if len(deliveries) != len(set(deliveries)):
            dupes = sorted(
                d for d in set(deliveries) if deliveries.count(d) > 1
            )
            violations.append(f"at-most-once delivery violated: {dupes}")
    outcome = planner.outcome or "gave_up"
    if outcome not in ("submitted", "gave_up"):
        violations.append(f"outcome: expected terminal state, got {outcome}")
    report = RunReport(
        scenario=scenario.name,
        outcome=outcome,
        answer=planner.answer,
        message_count=count_non_system(messages),
        plan_versions=count_plan_broadcasts(messages, roster.planner),
        transcript_path=str(out / f"{thread}.jsonl"),
        ticks=0,
        stress=True,
    )
    return report.with_verdict(violations)
